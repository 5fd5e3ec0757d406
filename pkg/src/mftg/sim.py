"""Forward simulation under feedback strategies, Monte-Carlo estimators and verification suites."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, SimulationError
from .noise import binned_jump_sums, brownian_increments, gv_increments, sample_ctmc, stream

SE_MULT = 3.0


@dataclass
class McEstimate:
    """Mean and standard error; ``se`` is the larger of the clustered and naive errors."""

    mean: float
    se: float
    count: int
    se_naive: float = 0.0
    se_clustered: float = 0.0

    def z(self, target: float) -> float:
        d = self.mean - target
        if self.se == 0:
            return 0.0 if d == 0 else float(np.copysign(np.inf, d))
        return d / self.se


@dataclass
class PathEnsemble:
    """Simulated costs and trajectory summaries for R common paths x M particles.

    costs: (P, R, M) per player-type cost samples.
    regimes: (R, N+1) regime index path per common path.
    xbar: (R, N+1) mean-field track (None for mean-field free games).
    sample_x / sample_u: full trajectories of the first few paths and particles.
    absx_path: (R, N+1) particle average of |x| per common path.
    dev_path: (R, N+1) particle average of x - xbar per common path.
    snapshots: x, regimes, partial running costs at requested nodes.
    """

    game: object
    sol: object
    R: int
    M: int
    seed: int
    costs: np.ndarray
    regimes: np.ndarray
    xbar: Optional[np.ndarray] = None
    sample_x: Optional[np.ndarray] = None
    sample_u: Optional[np.ndarray] = None
    absx_path: Optional[np.ndarray] = None
    x_path: Optional[np.ndarray] = None
    dev_path: Optional[np.ndarray] = None
    snapshots: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.game.grid

    def total_costs(self) -> np.ndarray:
        """Weighted sum over player types, shape (R, M)."""
        w = np.asarray(self.game.cost_weights, float)
        return np.tensordot(w, self.costs, axes=1)


def _estimate(samples: np.ndarray) -> McEstimate:
    samples = np.asarray(samples, float)
    R, M = samples.shape
    n = R * M
    mean = float(samples.mean())
    naive = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    if R > 1:
        clustered = float(samples.mean(axis=1).std(ddof=1) / np.sqrt(R))
    else:
        clustered = naive
    return McEstimate(mean, max(naive, clustered), n, naive, clustered)


def estimate_cost(ens: PathEnsemble, player: Optional[int] = None) -> McEstimate:
    """Cost estimate for one player type, or the weighted total when ``player`` is None.

    The standard error is clustered by common path; it never drops below the
    naive i.i.d. error.
    """
    samples = ens.total_costs() if player is None else ens.costs[player]
    return _estimate(samples)


def estimate_samples(samples: np.ndarray) -> McEstimate:
    """Estimator of an (R, M) array of samples clustered by its first axis."""
    return _estimate(samples)


# ---------------------------------------------------------------------------
# simulation


def _scales(game, scale):
    if scale is None:
        return None
    s = np.asarray(scale, float)
    if s.ndim == 0:
        s = np.full(game.P, float(s))
    if s.shape == (game.P,):
        s = np.stack([s, s])
    if s.shape != (2, game.P):
        raise DomainError(f"gain scale must have shape ({game.P},) or (2, {game.P})")
    return s


def _noise(game, R, M, seed, gv_scheme):
    """Pre-generate all step noises, one stream per common path and source."""
    grid = game.grid
    sp = game.spec
    want = game.noises
    out = {}
    for key, tag, m in (("B", "B", M), ("Bo", "Bo", 1)):
        if key in want:
            out[key] = np.stack([brownian_increments(grid, (m,), stream(seed, tag, r)) for r in range(R)])
    if "Bgv" in want or "Bogv" in want:
        kern = sp.kernel
        if kern is None:
            raise DomainError("Gauss-Volterra noise requested without a kernel")
        V = np.asarray(kern.variance(grid.t), float)
        dv = np.diff(V)
        out["vgv"] = dv
        for key, tag, m in (("Bgv", "Bgv", M), ("Bogv", "Bogv", 1)):
            if key not in want:
                continue
            if gv_scheme == "effective":
                arr = [stream(seed, tag, r).standard_normal((m, grid.N)) * np.sqrt(dv) for r in range(R)]
            elif gv_scheme == "volterra":
                arr = [gv_increments(kern, grid, (m,), stream(seed, tag, r)) for r in range(R)]
            else:
                raise DomainError(f"unknown Gauss-Volterra scheme {gv_scheme!r}")
            out[key] = np.stack(arr)
    if "J" in want:
        out["J"] = np.stack([binned_jump_sums(sp.jump, grid, (M,), stream(seed, "J", r), game.jump_transform)
                             for r in range(R)])
    if "Jo" in want:
        out["Jo"] = np.stack([binned_jump_sums(sp.jump_common, grid, (1,), stream(seed, "Jo", r),
                                               game.jump_common_transform) for r in range(R)])
    return out


class NextNode:
    """Coefficients at t_{n+1} and the feedback there, evaluated in the current regimes."""

    def __init__(self, n, c, a, s, fn):
        self.n, self.c, self.a, self.s, self._fn = n, c, a, s, fn

    def controls(self, state):
        return self._fn(self.n, self.c, self.a, self.s, state)


def _regime_paths(game, sol, R, seed, gains):
    gen = game.regime_generator(sol, gains) if hasattr(game, "regime_generator") else game.gen
    s0 = game.spec.s0_index
    if gen.size == 1:
        return np.zeros((R, game.grid.N + 1), dtype=int)
    return np.stack([sample_ctmc(gen, s0, game.grid, stream(seed, "regime", r)) for r in range(R)])


def simulate(game, sol, R: int, M: int, seed: int = 0, *, mode: Optional[str] = None,
             scale=None, feedback: Optional[Callable] = None, gv_scheme: str = "effective",
             record_paths: int = 4, record_particles: int = 4,
             snapshot_nodes: Sequence[int] = ()) -> PathEnsemble:
    """Simulate the controlled state on the solver grid and accumulate costs.

    ``mode`` is "ode" (xbar from its closed-form ODE, default) or "particle"
    (xbar = average of the M particles sharing a common path). ``scale``
    multiplies the feedback of each player type, either one factor per type
    or (deviation factors, mean factors). ``feedback(n, c, a, s, state)``
    replaces the equilibrium controls and must return (dev, mean).
    Running costs use the trapezoid rule on grid nodes.
    """
    if sol.game is not game:
        raise DomainError("solution belongs to a different game definition")
    if R < 1 or M < 1:
        raise DomainError("need R >= 1 common paths and M >= 1 particles")
    mode = mode or "ode"
    if mode not in ("ode", "particle"):
        raise DomainError(f"mean-field mode must be 'ode' or 'particle', got {mode!r}")
    if mode == "particle" and M < 2:
        raise DomainError("particle mean-field mode needs M >= 2")
    if hasattr(game, "simulate_paths"):
        return game.simulate_paths(sol, R, M, seed, scale=_scales(game, scale))
    grid = game.grid
    N, dt = grid.N, grid.dt
    gains = _scales(game, scale)
    regimes = _regime_paths(game, sol, R, seed, gains)
    noise = _noise(game, R, M, seed, gv_scheme)
    state = game.initial_state(R, M, [stream(seed, "init", r) for r in range(R)])

    rr, rm = min(R, record_paths), min(M, record_particles)
    sample_x = np.empty((rr, rm, N + 1))
    sample_u = None
    xbar_track = devp = None
    absx = np.empty((R, N + 1))
    xpath = np.empty((R, N + 1))
    snaps = sorted(set(int(n) for n in snapshot_nodes))
    snap = {"nodes": np.array(snaps, dtype=int), "x": [], "s": [], "partial": [], "state": []}

    def controls(n, c, a, s, st):
        if feedback is not None:
            dev, mean = feedback(n, c, a, s, st)
        else:
            dev, mean = game.controls(c, a, s, st)
        if gains is not None:
            dev = dev * gains[0][:, None, None]
            mean = mean * gains[1][:, None, None]
        return dev, mean

    acc = None
    prev = None
    for n in range(N + 1):
        c, a = game.table.node(n), sol.node(n)
        s = regimes[:, n]
        dev, mean = controls(n, c, a, s, state)
        x, xb = game.observe(state)
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"state became non-finite at t={grid.t[n]:.6g}")
        if sample_u is None:
            sample_u = np.empty((dev.shape[0], rr, rm, N + 1))
        sample_x[:, :, n] = x[:rr, :rm]
        sample_u[:, :, :, n] = (dev + mean)[:, :rr, :rm]
        absx[:, n] = np.abs(x).mean(axis=1)
        xpath[:, n] = x.mean(axis=1)
        if xb is not None:
            if xbar_track is None:
                xbar_track, devp = np.empty((R, N + 1)), np.empty((R, N + 1))
            xbar_track[:, n] = xb[:, 0]
            devp[:, n] = (x - xb).mean(axis=1)
        L = game.running_cost(c, a, s, state, dev, mean)
        if acc is None:
            acc = np.zeros_like(L)
        else:
            acc = acc + 0.5 * dt * (prev + L)
        prev = L
        if n in snaps:
            snap["x"].append(x.copy())
            snap["s"].append(s.copy())
            snap["partial"].append(acc.copy())
            snap["state"].append({k: np.array(v, copy=True) for k, v in state.items()})
        if n == N:
            break
        step_noise = {}
        for key, arr in noise.items():
            step_noise[key] = arr[n] if key == "vgv" else arr[:, :, n]
        nxt = NextNode(n + 1, game.table.node(n + 1), sol.node(n + 1), s, controls)
        state = game.advance(c, a, s, state, dev, mean, step_noise, dt, mode, nxt)
    costs = acc + game.terminal_cost(game.table.node(N), regimes[:, N], state)
    if not np.all(np.isfinite(costs)):
        raise SimulationError("non-finite cost samples")
    if snaps:
        snap["x"] = np.stack(snap["x"], axis=-1)
        snap["s"] = np.stack(snap["s"], axis=-1)
        snap["partial"] = np.stack(snap["partial"], axis=-1)
    return PathEnsemble(game, sol, R, M, seed, costs, regimes, xbar_track, sample_x, sample_u,
                        absx, xpath, devp, snap if snaps else {},
                        {"mode": mode, "gv_scheme": gv_scheme, "scale": None if gains is None else gains.tolist()})


# ---------------------------------------------------------------------------
# verification suites


def _analytic(game, sol):
    v = np.atleast_1d(np.asarray(game.value(sol), float))
    return v


def value_consistency(game, sol, R: int, M: int, seed: int = 0, *, mode=None, atol: float = 0.0,
                      ens: Optional[PathEnsemble] = None, **kw) -> list:
    """Compare Monte-Carlo costs with the guess-functional values.

    Returns one row per player type (per aggregate for cooperative and
    adversarial games): dict(player, mc, se, analytic, z, passed). A row
    passes when |mc - analytic| <= 3 SE + atol.
    """
    ens = ens or simulate(game, sol, R, M, seed, mode=mode, **kw)
    v = _analytic(game, sol)
    rows = []
    names = [p.name for p in game.spec.players]
    if game.aggregate:
        est = estimate_cost(ens)
        targets = [("total", est, float(v[0]))]
    else:
        targets = [(names[i], estimate_cost(ens, i), float(v[i])) for i in range(len(v))]
    for name, est, val in targets:
        diff = abs(est.mean - val)
        rows.append({"player": name, "mc": est.mean, "se": est.se, "analytic": val,
                     "z": est.z(val), "passed": bool(diff <= SE_MULT * est.se + atol)})
    return rows


def _paired(base: PathEnsemble, other: PathEnsemble, player=None) -> McEstimate:
    a = base.total_costs() if player is None else base.costs[player]
    b = other.total_costs() if player is None else other.costs[player]
    return _estimate(b - a)


def deviation_test(game, sol, player: int, gain_scales=(0.5, 0.8, 1.25, 2.0), R: int = 100, M: int = 100,
                   seed: int = 0, **kw) -> dict:
    """Unilateral gain-scaling deviations of one player type with common random numbers.

    Passes when cost(gamma) - cost(1) >= -3 SE for every gamma and the
    gamma = 1 difference is exactly zero. With a block of several identical
    players the whole block is scaled.
    """
    base = simulate(game, sol, R, M, seed, **kw)
    rows = []
    ok = True
    for g in (1.0,) + tuple(gain_scales):
        scale = np.ones(game.P)
        scale[player] = g
        ens = simulate(game, sol, R, M, seed, scale=scale, **kw)
        est = _paired(base, ens, player)
        passed = est.mean == 0.0 if g == 1.0 else est.mean >= -SE_MULT * est.se
        ok &= bool(passed)
        rows.append({"gamma": g, "delta": est.mean, "se": est.se, "passed": bool(passed)})
    return {"player": game.spec.players[player].name, "rows": rows, "passed": ok,
            "baseline": estimate_cost(base, player).mean}


def gain_grid_search(game, sol, player: int = 0, grid=None, R: int = 50, M: int = 20, seed: int = 0, **kw):
    """Simulated cost of one player over constant gain multipliers (common random numbers).

    Returns (multipliers, mean costs, argmin multiplier).
    """
    gammas = np.linspace(0.5, 1.5, 41) if grid is None else np.asarray(grid, float)
    means = []
    for g in gammas:
        scale = np.ones(game.P)
        scale[player] = g
        means.append(estimate_cost(simulate(game, sol, R, M, seed, scale=scale, **kw), player).mean)
    means = np.array(means)
    return gammas, means, float(gammas[int(np.argmin(means))])


def saddle_test(game, sol, scales=(0.5, 2.0), R: int = 100, M: int = 100, seed: int = 0, **kw) -> dict:
    """Team deviations in the adversarial game with common random numbers.

    Attackers scaling their gains must not raise the cost (delta <= +3 SE);
    defenders scaling theirs must not lower it (delta >= -3 SE).
    """
    teams = game.teams
    base = simulate(game, sol, R, M, seed, **kw)
    rows = []
    ok = True
    for team in ("defender", "attacker"):
        for g in (1.0,) + tuple(scales):
            scale = np.where(teams == team, g, 1.0)
            est = _paired(base, simulate(game, sol, R, M, seed, scale=scale, **kw))
            if g == 1.0:
                passed = est.mean == 0.0
            elif team == "defender":
                passed = est.mean >= -SE_MULT * est.se
            else:
                passed = est.mean <= SE_MULT * est.se
            ok &= bool(passed)
            rows.append({"team": team, "gamma": g, "delta": est.mean, "se": est.se, "passed": bool(passed)})
    return {"rows": rows, "passed": ok, "baseline": estimate_cost(base).mean}


def cooperative_dominance(nash_game, nash_sol, coop_game, coop_sol, R: int = 100, M: int = 100,
                          seed: int = 0, **kw) -> dict:
    """Total cost under the cooperative feedback versus the Nash feedback (same noises)."""
    if nash_game.spec.I != coop_game.spec.I:
        raise DomainError("games must have the same players")
    en = simulate(nash_game, nash_sol, R, M, seed, **kw)
    ec = simulate(coop_game, coop_sol, R, M, seed, **kw)
    diff = _estimate(ec.total_costs() - en.total_costs())
    return {"nash": estimate_cost(en).mean, "coop": estimate_cost(ec).mean, "delta": diff.mean,
            "se": diff.se, "passed": bool(diff.mean <= SE_MULT * diff.se)}


def martingale_check(game, sol, R: int, M: int, seed: int = 0, nodes=None, **kw) -> list:
    """E[f(t, x(t), s(t)) + running cost on [0, t]] at intermediate nodes versus the value.

    Needs the game to expose ``guess(sol, n, s, state)``.
    """
    N = game.grid.N
    nodes = [N // 4, N // 2, 3 * N // 4] if nodes is None else list(nodes)
    ens = simulate(game, sol, R, M, seed, snapshot_nodes=nodes, **kw)
    v = _analytic(game, sol)
    rows = []
    for j, n in enumerate(ens.snapshots["nodes"]):
        st = ens.snapshots["state"][j]
        f = game.guess(sol, int(n), ens.snapshots["s"][..., j], st)
        tot = f + ens.snapshots["partial"][..., j]
        for i in range(tot.shape[0]):
            est = _estimate(tot[i])
            rows.append({"t": float(game.grid.t[n]), "player": i, "mc": est.mean, "se": est.se,
                         "analytic": float(v[i]), "passed": bool(abs(est.mean - v[i]) <= SE_MULT * est.se)})
    return rows
