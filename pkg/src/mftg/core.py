"""Shared domain types: regimes, time grids, regime fields and jump measures."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import DivergentMoment, DomainError, HypothesisViolation, NegativeRate


def sroot(x, m):
    """Real odd root ``sign(x) |x|**(1/m)`` for odd integer orders ``m`` (broadcast with x)."""
    x = np.asarray(x, dtype=float)
    mm = np.asarray(m)
    if np.any(mm != np.round(mm)) or np.any(mm < 1) or np.any(np.round(mm) % 2 == 0):
        raise DomainError(f"sroot needs odd positive orders, got {m}")
    if mm.ndim == 0:
        mi = int(mm)
        if mi == 1:
            return x.copy() if x.ndim else float(x)
        out = np.sign(x) * np.abs(x) ** (1.0 / mi)
    else:
        out = np.sign(x) * np.abs(x) ** (1.0 / mm.astype(float))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise DomainError(f"horizon must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 2:
            raise DomainError(f"need at least 2 steps, got {self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def t(self) -> np.ndarray:
        t = np.linspace(0.0, self.T, self.N + 1)
        t[-1] = self.T
        return t

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.N * int(factor))


@dataclass(frozen=True)
class RegimeGenerator:
    """Finite regime set with a rate matrix whose rows sum to zero.

    ``rates`` is (S, S). An optional ``time_rates`` array of shape (N+1, S, S)
    on a grid makes the generator time dependent (linear interpolation).
    """

    states: tuple
    rates: np.ndarray
    time_grid: Optional[TimeGrid] = None
    time_rates: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return len(self.states)

    def index(self, label) -> int:
        try:
            return self.states.index(label)
        except ValueError:
            if isinstance(label, (int, np.integer)) and 0 <= label < self.size:
                return int(label)
            raise DomainError(f"unknown regime {label!r}; known {self.states}") from None

    @property
    def is_constant(self) -> bool:
        return self.time_rates is None

    def at(self, t: float) -> np.ndarray:
        if self.time_rates is None:
            return self.rates
        tg = self.time_grid.t
        pos = np.clip((t - tg[0]) / self.time_grid.dt, 0.0, self.time_grid.N)
        n = min(int(pos), self.time_grid.N - 1)
        w = pos - n
        return (1.0 - w) * self.time_rates[n] + w * self.time_rates[n + 1]

    def coupling(self, values: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Return sum_{s'} (v(s') - v(s)) q(s, s') along the last axis."""
        return values @ self.at(t).T

    def stationary(self) -> np.ndarray:
        Q = self.rates
        S = self.size
        A = np.vstack([Q.T, np.ones(S)])
        b = np.zeros(S + 1)
        b[-1] = 1.0
        return np.linalg.lstsq(A, b, rcond=None)[0]


def _fill_diagonal(Q):
    """Set the diagonal of (..., S, S) rate arrays to minus the off-diagonal row sums."""
    Q = np.array(Q, dtype=float)
    i = np.arange(Q.shape[-1])
    Q[..., i, i] = 0.0
    Q[..., i, i] = -Q.sum(axis=-1)
    return Q


def make_generator(states: Sequence, offdiag_rates=None) -> RegimeGenerator:
    """Build a generator from off-diagonal rates.

    ``offdiag_rates`` may be an (S, S) array (diagonal ignored) or a mapping
    ``{(s, s2): rate}`` keyed by labels.
    """
    states = tuple(states)
    S = len(states)
    if S == 0:
        raise DomainError("need at least one regime")
    if len(set(states)) != S:
        raise DomainError(f"duplicate regime labels in {states}")
    Q = np.zeros((S, S))
    if offdiag_rates is None:
        pass
    elif isinstance(offdiag_rates, Mapping):
        for (a, b), v in offdiag_rates.items():
            i, j = states.index(a), states.index(b)
            if i != j:
                Q[i, j] = float(v)
    else:
        Q = np.array(offdiag_rates, dtype=float)
        if Q.shape != (S, S):
            raise DomainError(f"rate matrix must be {S}x{S}, got {Q.shape}")
    off = ~np.eye(S, dtype=bool)
    if not np.all(np.isfinite(Q[off])):
        raise NegativeRate("switching rates must be finite")
    if np.any(Q[off] < 0):
        i, j = np.argwhere((Q < 0) & off)[0]
        raise NegativeRate(f"rate q[{states[i]}->{states[j]}] = {Q[i, j]} is negative")
    return RegimeGenerator(states, _fill_diagonal(Q))


def make_time_generator(states, grid: TimeGrid, offdiag_rates: np.ndarray) -> RegimeGenerator:
    """Time-dependent generator from rates on every grid node, shape (N+1, S, S)."""
    R = np.array(offdiag_rates, dtype=float)
    S = len(states)
    if R.shape != (grid.N + 1, S, S):
        raise DomainError(f"time rates must have shape {(grid.N + 1, S, S)}")
    off = ~np.eye(S, dtype=bool)
    if np.any(R[:, off] < 0):
        raise NegativeRate("time-dependent switching rate is negative")
    R = _fill_diagonal(R)
    return RegimeGenerator(tuple(states), R.mean(axis=0), grid, R)


@dataclass(frozen=True)
class RegimeField:
    """Values on grid nodes x regimes, piecewise linear in time."""

    grid: TimeGrid
    values: np.ndarray  # (N+1, S)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != self.grid.N + 1:
            raise DomainError(f"field shape {v.shape} does not match grid of {self.grid.N} steps")
        if not np.all(np.isfinite(v)):
            raise DomainError("regime field has non-finite values")
        object.__setattr__(self, "values", v)
        const = bool(np.all(v == v[0]))
        object.__setattr__(self, "_row", v[0].copy() if const else None)

    @property
    def is_constant(self) -> bool:
        return self._row is not None

    @classmethod
    def constant(cls, grid: TimeGrid, per_regime) -> "RegimeField":
        per_regime = np.atleast_1d(np.asarray(per_regime, dtype=float))
        return cls(grid, np.broadcast_to(per_regime, (grid.N + 1, per_regime.size)).copy())

    def __call__(self, t, s=None):
        """Interpolate at time(s) ``t``; ``s`` selects regime indices (broadcast)."""
        if self._row is not None:
            if s is None:
                return np.broadcast_to(self._row, np.shape(t) + self._row.shape).copy()
            return self._row[np.broadcast_to(np.asarray(s, dtype=int), np.broadcast(t, s).shape)]
        t = np.asarray(t, dtype=float)
        pos = np.clip(t / self.grid.dt, 0.0, self.grid.N)
        near = np.round(pos)
        pos = np.where(np.abs(pos - near) < 1e-9, near, pos)
        n = np.minimum(pos.astype(int), self.grid.N - 1)
        w = pos - n
        if s is None:
            lo, hi = self.values[n], self.values[n + 1]
            w = w[..., None]
        else:
            s = np.asarray(s, dtype=int)
            lo, hi = self.values[n, s], self.values[n + 1, s]
        return (1.0 - w) * lo + w * hi

    @property
    def t(self):
        return self.grid.t


# ---------------------------------------------------------------------------
# jump measures


@dataclass(frozen=True)
class JumpSpec:
    """Jump measure nu(dtheta) = c exp(-decay * theta) dtheta on (0, inf) plus atoms.

    The amplitude map is mu(theta) = mu_scale * theta unless ``mu`` is given.
    All moment functionals used by the games are computed at construction.
    """

    c: float = 0.0
    decay: float = 5.0
    mu_scale: float = 1.0
    atoms: tuple = ()  # ((theta, weight), ...)
    mu: Optional[Callable] = None
    moments: dict = field(default_factory=dict, compare=False, repr=False)

    MAX_CACHED_ORDER = 8

    def __post_init__(self):
        if self.c < 0 or any(w < 0 for _, w in self.atoms):
            raise HypothesisViolation("jump measure weights must be nonnegative")
        if self.c > 0 and not self.decay > 0:
            raise HypothesisViolation("jump density decay must be positive")
        atoms = tuple((float(a), float(w)) for a, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        m = {}
        m["total"] = self.density_mass + sum(w for _, w in atoms)
        if not np.isfinite(m["total"]):
            raise DivergentMoment("jump intensity is infinite")
        if self.enabled:
            m["mean"] = self.integrate(lambda mu: mu, "mean")
            m["square"] = self.integrate(lambda mu: mu * mu, "square")
            if self._mu_min() > -1.0:
                m["log"] = self.integrate(lambda mu: np.log1p(mu) - mu, "log")
            for k in range(1, self.MAX_CACHED_ORDER + 1):
                m[("power", k)] = self._power(k)
        else:
            m.update(mean=0.0, square=0.0, log=0.0)
        object.__setattr__(self, "moments", m)

    @classmethod
    def none(cls) -> "JumpSpec":
        return cls(c=0.0)

    @property
    def density_mass(self) -> float:
        return self.c / self.decay if self.c > 0 else 0.0

    @property
    def total(self) -> float:
        return self.moments["total"]

    @property
    def enabled(self) -> bool:
        return self.density_mass + sum(w for _, w in self.atoms) > 0

    def amplitude(self, theta):
        if self.mu is not None:
            return self.mu(theta)
        return self.mu_scale * np.asarray(theta, dtype=float)

    def _mu_min(self):
        vals = [float(self.amplitude(a)) for a, _ in self.atoms]
        if self.c > 0:
            th = np.concatenate([[0.0], np.geomspace(1e-8, 50.0 / self.decay, 400)])
            vals.extend(np.asarray(self.amplitude(th), dtype=float).tolist())
        return min(vals) if vals else 0.0

    def integrate(self, g: Callable, name: str = "moment") -> float:
        """Return the integral of g(mu(theta)) against nu."""
        total = sum(w * float(g(self.amplitude(a))) for a, w in self.atoms)
        if self.c > 0:
            def f(th):
                return g(self.amplitude(th)) * self.c * np.exp(-self.decay * th)

            with warnings.catch_warnings():
                warnings.simplefilter("error", integrate.IntegrationWarning)
                try:
                    val, err = integrate.quad(f, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=400)
                except (integrate.IntegrationWarning, OverflowError, FloatingPointError) as exc:
                    raise DivergentMoment(f"{name} moment of the jump measure did not converge: {exc}") from None
            if not np.isfinite(val) or err > 1e-10 * max(1.0, abs(val)):
                raise DivergentMoment(f"{name} moment of the jump measure did not converge (err {err:.2e})")
            total += val
        if not np.isfinite(total):
            raise DivergentMoment(f"{name} moment is not finite")
        return float(total)

    def _power(self, k, scale=1.0, order=None):
        m = 2 * k if order is None else order
        return self.integrate(lambda mu: (1.0 + scale * mu) ** m - 1.0 - m * scale * mu, f"power-{m}")

    def power_moment(self, k: int) -> float:
        key = ("power", int(k))
        if key in self.moments:
            return self.moments[key]
        return self._power(int(k)) if self.enabled else 0.0

    def poly_moment(self, order: int, scale: float) -> float:
        """Integral of (1 + scale mu)^order - 1 - order scale mu against nu."""
        if not self.enabled:
            return 0.0
        return self._power(0, scale=scale, order=int(order))

    def sample_marks(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` marks theta from nu / total."""
        if n == 0:
            return np.zeros(0)
        tot = self.total
        weights = np.array([self.density_mass] + [w for _, w in self.atoms]) / tot
        comp = rng.choice(len(weights), size=n, p=weights) if len(weights) > 1 else np.zeros(n, int)
        out = np.empty(n)
        cont = comp == 0
        out[cont] = rng.exponential(1.0 / self.decay, size=int(cont.sum())) if self.c > 0 else 0.0
        for j, (a, _) in enumerate(self.atoms, start=1):
            out[comp == j] = a
        return out


def jump_moment_log(jump: JumpSpec) -> float:
    if not jump.enabled:
        return 0.0
    if "log" not in jump.moments:
        raise HypothesisViolation("log moment needs mu(theta) > -1 on the support of nu")
    return jump.moments["log"]


def jump_moment_power(jump: JumpSpec, k: int) -> float:
    if int(k) != k or k < 1:
        raise DomainError(f"power moment order must be a positive integer, got {k}")
    return jump.power_moment(int(k))


def jump_moment_square(jump: JumpSpec) -> float:
    return jump.moments["square"]


@dataclass(frozen=True)
class ControlledSwitchRates:
    """Coefficients of control-dependent switching rates, arrays of shape (I, S, S).

    The rate from s to s2 != s is
    sum_j b2[j](u_j - ubar_j)^2 + b2bar[j] ubar_j^2 + b1[j](u_j - ubar_j) + b1bar[j] ubar_j + bo[j].
    ``b1`` holds magnitudes; simulated paths use random signs so that the
    linear coefficient has mean zero.
    """

    b2: np.ndarray
    b2bar: np.ndarray
    b1: np.ndarray
    b1bar: np.ndarray
    bo: np.ndarray

    def __post_init__(self):
        arrs = {}
        shape = np.asarray(self.b2).shape
        for name in ("b2", "b2bar", "b1", "b1bar", "bo"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != shape or a.ndim != 3 or a.shape[1] != a.shape[2]:
                raise DomainError(f"switch coefficient {name} must have shape (I, S, S) = {shape}")
            for j in range(a.shape[0]):
                np.fill_diagonal(a[j], 0.0)
            arrs[name] = a
        for name in ("b2", "b2bar"):
            if np.any(arrs[name] < 0):
                raise HypothesisViolation(f"quadratic switch coefficient {name} must be nonnegative")
        if np.any(arrs["bo"] < 0):
            raise NegativeRate("constant switch rates must be nonnegative")
        for name, a in arrs.items():
            object.__setattr__(self, name, a)

    @property
    def players(self) -> int:
        return self.b2.shape[0]

    @property
    def size(self) -> int:
        return self.b2.shape[1]

    @staticmethod
    def with_diagonal(a: np.ndarray) -> np.ndarray:
        """Copy with diagonal set to minus the off-diagonal row sums."""
        a = np.array(a, dtype=float)
        for j in range(a.shape[0]):
            np.fill_diagonal(a[j], 0.0)
            np.fill_diagonal(a[j], -a[j].sum(axis=1))
        return a

    def sample_signs(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Zero-mean random signs for b1, one per (path, player)."""
        return rng.choice(np.array([-1.0, 1.0]), size=(n, self.players))

    def rates(self, dev: np.ndarray, mean: np.ndarray, signs: np.ndarray, s: int) -> np.ndarray:
        """Off-diagonal rates out of regime ``s``.

        dev, mean: (..., I) control parts; signs: (..., I). Returns (..., S).
        """
        dev = np.asarray(dev, float)
        mean = np.asarray(mean, float)
        r = (
            np.einsum("...j,jk->...k", dev**2, self.b2[:, s])
            + np.einsum("...j,jk->...k", mean**2, self.b2bar[:, s])
            + np.einsum("...j,jk->...k", dev * signs, self.b1[:, s])
            + np.einsum("...j,jk->...k", mean, self.b1bar[:, s])
            + self.bo[:, s].sum(axis=0)
        )
        r[..., s] = 0.0
        return r
