"""Backward integration of coefficient systems and closed-form cross-checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .core import RegimeField, RegimeGenerator, TimeGrid
from .errors import BlowUp, DomainError, HypothesisViolation, OmegaNonpositive, StepTooCoarse

ESCAPE_BOUND = 1e8
HALVING_TOL = 1e-4
POSITIVITY_TOL = 1e-10


@dataclass
class SolvedCoefficients:
    """Coefficient trajectories on grid nodes, shape (N+1, K, Pc, S)."""

    game: object
    grid: TimeGrid
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def kinds(self):
        return self.game.kinds

    def node(self, n: int) -> np.ndarray:
        return self.values[n]

    def at(self, t: float) -> np.ndarray:
        pos = min(max(t / self.grid.dt, 0.0), self.grid.N)
        n = min(int(pos), self.grid.N - 1)
        w = pos - n
        if w < 1e-12:
            return self.values[n]
        return (1 - w) * self.values[n] + w * self.values[n + 1]

    def kind(self, name: str) -> np.ndarray:
        """Trajectory of one coefficient kind, shape (N+1, Pc, S)."""
        return self.values[:, self.game.kinds.index(name)]

    def field(self, name: str, owner: int = 0) -> RegimeField:
        return RegimeField(self.grid, self.kind(name)[:, owner, :])

    def initial(self, name: str) -> np.ndarray:
        """Values at t=0, shape (Pc, S)."""
        return self.kind(name)[0]


def _rk4_backward(game, grid: TimeGrid, substeps: int, y_T: np.ndarray):
    N = grid.N
    h = grid.dt / substeps
    out = np.empty((N + 1,) + y_T.shape)
    out[N] = y_T
    y = y_T.copy()
    peak = np.abs(y).max(initial=0.0)
    f = game.rhs
    for n in range(N - 1, -1, -1):
        t_hi = grid.t[n + 1]
        for j in range(substeps):
            t = t_hi - j * h
            k1 = f(t, y)
            k2 = f(t - 0.5 * h, y - 0.5 * h * k1)
            k3 = f(t - 0.5 * h, y - 0.5 * h * k2)
            k4 = f(t - h, y - h * k3)
            y = y - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            bad = ~np.isfinite(y) | (np.abs(y) > ESCAPE_BOUND)
            if bad.any():
                idx = np.unravel_index(np.argmax(bad), y.shape)
                raise BlowUp(t - h, _component(game, idx), float(y[idx]))
            game.check_solution(t - h, y)
        out[n] = y
        peak = max(peak, float(np.abs(y).max(initial=0.0)))
    return out, peak


def _component(game, idx):
    k, p, s = idx
    names = game.kinds
    owner = "" if game.aggregate else f"[{game.spec.players[p].name}]"
    return f"{names[k]}{owner}@{game.gen.states[s]}"


def integrate_backward(game, grid: Optional[TimeGrid] = None, substeps: int = 1,
                       check: bool = True) -> SolvedCoefficients:
    """Classic RK4 from t_N down to t_0 on the stacked (kind, owner, regime) array.

    ``substeps`` RK4 steps are taken inside each grid cell. With ``check`` the
    solve is repeated with halved steps; if the t=0 values move by more than
    a relative 1e-4 the step is halved once more before StepTooCoarse.
    """
    grid = grid or game.grid
    if grid != game.grid:
        raise DomainError("grid does not match the game definition")
    y_T = np.asarray(game.terminal(), dtype=float)
    if not np.all(np.isfinite(y_T)):
        raise DomainError("terminal conditions must be finite")
    coarse, peak = _rk4_backward(game, grid, substeps, y_T)
    diag = {"substeps": substeps, "steps": grid.N * substeps, "halving_rel": None}
    if check:
        rel = None
        for attempt in range(2):
            fine, peak = _rk4_backward(game, grid, 2 * substeps, y_T)
            rel = _rel_change(coarse[0], fine[0])
            substeps *= 2
            coarse = fine
            if rel <= HALVING_TOL:
                break
        else:
            raise StepTooCoarse(None, None, rel)
        diag.update(substeps=substeps, steps=grid.N * substeps, halving_rel=rel)
    diag["max_abs"] = peak
    diag["terminal_residual"] = float(np.abs(coarse[-1] - y_T).max(initial=0.0))
    diag["fast_path"] = False
    sol = SolvedCoefficients(game, grid, coarse, diag)
    post = getattr(game, "post_solve", None)
    if post is not None:
        post(sol)
    diag["positivity"] = positivity_report(sol)
    return sol


def _rel_change(a, b):
    scale = np.maximum(np.abs(b), 1e-6 * max(np.abs(b).max(initial=0.0), 1e-300))
    return float((np.abs(a - b) / scale).max(initial=0.0))


def positivity_report(sol: SolvedCoefficients) -> dict:
    """Per-component minima over the grid; flags alpha-type values below -1e-10."""
    game = sol.game
    comps = {}
    flagged = []
    for k, kind in enumerate(game.kinds):
        for p in range(sol.values.shape[2]):
            owner = "" if game.aggregate else f"[{game.spec.players[p].name}]"
            m = float(sol.values[:, k, p, :].min())
            name = f"{kind}{owner}"
            comps[name] = m
            if kind in game.nonneg and m < -POSITIVITY_TOL:
                flagged.append(name)
    return {"min": comps, "flagged": flagged, "clean": not flagged}


def qq_alpha_explicit(gen: RegimeGenerator, terminal, grid: TimeGrid) -> RegimeField:
    """Matrix-exponential solution of alpha' = -(coupling), alpha(T) = terminal.

    With alpha as a column over regimes the system reads alpha' = -Q alpha,
    hence alpha(t) = expm(Q (T - t)) alpha(T). A time-dependent generator is
    handled by product integration with midpoint rates on each grid cell.
    """
    q = np.asarray(terminal, dtype=float)
    if q.shape != (gen.size,):
        raise DomainError(f"terminal vector must have {gen.size} entries")
    out = np.empty((grid.N + 1, gen.size))
    if gen.is_constant:
        Q = gen.rates
        for n, t in enumerate(grid.t):
            out[n] = expm(Q * (grid.T - t)) @ q
    else:
        out[-1] = q
        for n in range(grid.N - 1, -1, -1):
            Q = gen.at(0.5 * (grid.t[n] + grid.t[n + 1]))
            out[n] = expm(Q * grid.dt) @ out[n + 1]
    return RegimeField(grid, out)


@dataclass(frozen=True)
class DelayBetaParams:
    """Inputs of the single-regime beta equation.

    ``convention='printed'`` uses the published coefficients; ``'ito'`` uses
    the ones re-derived from the Ito expansion (consumption term with the
    opposite sign and the full second-order factor on the common noise).
    """

    rho: float
    rbar1: float
    bbar2: float
    sigmabar: float
    b11: float = 0.0
    b13: float = 0.0
    lam: float = 0.0
    tau: float = 0.0
    convention: str = "printed"

    def __post_init__(self):
        if self.convention not in ("printed", "ito"):
            raise DomainError(f"unknown beta convention {self.convention!r}")

    @property
    def c(self) -> float:
        c = (1 - self.rho) * self.rbar1 ** (1 / (1 - self.rho))
        return c if self.convention == "printed" else -c

    @property
    def omega(self) -> float:
        r = self.rho
        k = 4.0 if self.convention == "printed" else 2.0
        return r / (1 - r) * self.bbar2**2 / (k * self.sigmabar**2) + r * (self.b11 + self.b13 * np.exp(self.lam * self.tau))


def delay_beta_explicit(params: DelayBetaParams, grid: TimeGrid) -> RegimeField:
    """beta(t) = ((1 - c/w) exp(-w (T-t)/(rho-1)) + c/w)^(1-rho), single regime."""
    rho = params.rho
    if not (rho < 1 and rho != 0):
        raise HypothesisViolation(f"delay game needs rho < 1 and rho != 0, got {rho}")
    if not (params.rbar1 > 0 and params.sigmabar != 0):
        raise HypothesisViolation("delay game needs rbar1 > 0 and sigmabar != 0")
    with np.errstate(over="ignore"):
        c = params.c
    if not np.isfinite(c):
        raise DomainError("explicit beta: c is not finite (rbar1 too large)")
    w = params.omega
    if not w > 0:
        raise OmegaNonpositive(f"explicit beta needs omega > 0, got {w:.6g}")
    tau = grid.T - grid.t
    base = (1 - c / w) * np.exp(-w * tau / (rho - 1)) + c / w
    if np.any(base <= 0):
        n = int(np.argmax(base[::-1] <= 0))
        raise BlowUp(float(grid.t[::-1][n]), "beta", float(base[::-1][n]))
    beta = base ** (1 - rho)
    beta[-1] = 1.0
    return RegimeField(grid, beta[:, None])
