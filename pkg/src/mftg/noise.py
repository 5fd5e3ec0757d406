"""Noise sources: Brownian and Gauss-Volterra paths, jumps, regime chains."""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.special import gamma, hyp2f1

from .core import ControlledSwitchRates, JumpSpec, RegimeField, RegimeGenerator, TimeGrid
from .errors import DomainError, DominatingRateExceeded, NegativeRate

# ---------------------------------------------------------------------------
# random streams


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, source tag, path index)."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(tag.encode()), int(index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


# ---------------------------------------------------------------------------
# Volterra kernel


def c_hurst(H: float) -> float:
    """Normalizing constant of the fBm kernel."""
    _check_hurst(H)
    return float(np.sqrt(2 * H * gamma(1.5 - H) / (gamma(0.5 + H) * gamma(2 - 2 * H))))


def _check_hurst(H):
    if not (0.0 < H < 1.0):
        raise DomainError(f"Hurst parameter must lie in (0, 1), got {H}")


def eval_kernel_kh(H: float, t: float, tp: float) -> float:
    """fBm kernel K_H(t, t') by adaptive quadrature.

    The singular factor (z - t')^(H - 3/2) is removed with z = t' + w^2.
    At t' = 0 the kernel is infinite unless H = 1/2.
    """
    _check_hurst(H)
    if not (0.0 <= tp < t):
        raise DomainError(f"kernel needs 0 <= t' < t, got t={t}, t'={tp}")
    cH = c_hurst(H)
    if H == 0.5:
        return 1.0
    if tp == 0.0:
        return float("inf")

    def f(w):
        return 2.0 * w ** (2 * H - 2) * (1.0 - (tp / (tp + w * w)) ** (0.5 - H))

    top = np.sqrt(t - tp)
    pts = [np.sqrt(tp)] if np.sqrt(tp) < top else None
    val, _ = integrate.quad(f, 0.0, top, points=pts, epsabs=1e-14, epsrel=1e-11, limit=400)
    return float(cH * (t - tp) ** (H - 0.5) + cH * (0.5 - H) * val)


def kernel_kh(H: float, t, tp) -> np.ndarray:
    """Vectorized fBm kernel through its hypergeometric closed form.

    K_H(t, t') = c_H (t - t')^(H-1/2) 2F1(1/2-H, H-1/2; H+1/2; 1 - t/t').
    Entries with t' >= t are returned as zero (causal kernel).
    """
    _check_hurst(H)
    t, tp = np.broadcast_arrays(np.asarray(t, float), np.asarray(tp, float))
    out = np.zeros(t.shape)
    m = tp < t
    if H == 0.5:
        out[m] = 1.0
        return out
    a = H - 0.5
    with np.errstate(divide="ignore"):
        out[m] = c_hurst(H) * (t[m] - tp[m]) ** a * hyp2f1(-a, a, a + 1.0, 1.0 - t[m] / tp[m])
    out[m & (tp == 0.0)] = np.inf
    return out


def kernel_kh_dt(H: float, t, tp) -> np.ndarray:
    """Partial derivative of K_H in its first argument."""
    a = H - 0.5
    t, tp = np.broadcast_arrays(np.asarray(t, float), np.asarray(tp, float))
    out = np.zeros(t.shape)
    m = tp < t
    out[m] = c_hurst(H) * a * (t[m] - tp[m]) ** (a - 1.0) * (t[m] / tp[m]) ** a
    return out


@dataclass(frozen=True)
class VolterraKernel:
    """Causal kernel: fBm (``H`` set) or tabulated on grid pairs.

    For a tabulated kernel ``table[n, m]`` is K(t_n, t_m^*) with t_m^* the
    midpoint of cell m of ``table_grid``.
    """

    H: Optional[float] = None
    table: Optional[np.ndarray] = None
    table_grid: Optional[TimeGrid] = None

    def __post_init__(self):
        if (self.H is None) == (self.table is None):
            raise DomainError("give either a Hurst parameter or a kernel table")
        if self.H is not None:
            _check_hurst(self.H)

    @classmethod
    def fbm(cls, H: float) -> "VolterraKernel":
        return cls(H=float(H))

    @property
    def c_H(self) -> float:
        return c_hurst(self.H) if self.H is not None else float("nan")

    def __call__(self, t, tp):
        if self.H is not None:
            return kernel_kh(self.H, t, tp)
        g = self.table_grid
        t = np.asarray(t, float)
        tp = np.asarray(tp, float)
        n = np.clip(np.rint(t / g.dt).astype(int), 0, g.N)
        m = np.clip((tp / g.dt).astype(int), 0, g.N - 1)
        return np.where(tp < t, self.table[n, m], 0.0)

    def variance(self, t):
        """Var B_gv(t) = int_0^t K(t, u)^2 du."""
        t = np.asarray(t, float)
        if self.H is not None:
            return t ** (2 * self.H)
        g = self.table_grid
        w = self.table**2 * g.dt
        cum = np.concatenate([[0.0], [w[n, :n].sum() for n in range(1, g.N + 1)]])
        return np.interp(t, g.t, cum)

    def covariance(self, t, tp):
        """Closed-form fBm covariance 0.5 (t^2H + t'^2H - |t - t'|^2H)."""
        if self.H is None:
            raise DomainError("closed-form covariance exists only for the fBm kernel")
        h2 = 2 * self.H
        t, tp = np.asarray(t, float), np.asarray(tp, float)
        return 0.5 * (t**h2 + tp**h2 - np.abs(t - tp) ** h2)

    def weights(self, grid: TimeGrid, refine: Optional[int] = None, scheme: str = "rms"):
        """Lower-triangular path weights W with B(t_n) = sum_m W[n, m] dB_m.

        ``scheme='midpoint'`` evaluates K at cell midpoints. The default
        ``'rms'`` uses the root mean square of K over each cell, which keeps
        the marginal variances exact in the near-singular cells.
        Returns (W, fine_grid).
        """
        if refine is None:
            refine = max(1, int(np.ceil(64 / grid.N)))
        if self.table is not None:
            if self.table_grid != grid:
                raise DomainError("tabulated kernel is defined on a different grid")
            W = np.tril(self.table, -1)[:, :grid.N].copy()
            for n in range(grid.N + 1):
                W[n, n:] = 0.0
            return W, grid
        W = _fbm_weights(self.H, grid.T, grid.N, int(refine), scheme)
        return W, grid.refine(refine)


@lru_cache(maxsize=16)
def _fbm_weights(H, T, N, refine, scheme):
    tn = np.linspace(0.0, T, N + 1)
    edges = np.linspace(0.0, T, N * refine + 1)
    lo, hi = edges[:-1], edges[1:]
    if scheme == "midpoint":
        W = kernel_kh(H, tn[:, None], (0.5 * (lo + hi))[None, :])
        W[~(hi[None, :] <= tn[:, None] + 1e-12)] = 0.0
        return W
    if scheme != "rms":
        raise DomainError(f"unknown Volterra scheme {scheme!r}")
    x, w = leggauss(8)
    v = 0.5 * (x + 1.0)
    w = 0.5 * w
    p = 4.0
    g = v**p
    gw = w * p * v ** (p - 1.0)
    ms = np.zeros((N + 1, N * refine))
    for n in range(1, N + 1):
        k = n * refine  # cells entirely below t_n
        t = tn[n]
        u = lo[:k, None] + (hi[:k] - lo[:k])[:, None] * v[None, :]
        row = (kernel_kh(H, t, u) ** 2 * w).sum(-1)
        # graded rules at the two singular ends
        u0 = lo[0] + (hi[0] - lo[0]) * g
        row[0] = (kernel_kh(H, t, u0) ** 2 * gw).sum()
        if k > 1:
            ud = hi[k - 1] - (hi[k - 1] - lo[k - 1]) * g
            row[k - 1] = (kernel_kh(H, t, ud) ** 2 * gw).sum()
        ms[n, :k] = row
    W = np.sqrt(ms)
    W.setflags(write=False)
    return W


def sample_gv_paths(kernel: VolterraKernel, grid: TimeGrid, n: int, rng: np.random.Generator,
                    refine: Optional[int] = None, scheme: str = "rms") -> np.ndarray:
    """Sample ``n`` Gauss-Volterra paths on the grid nodes, shape (n, N+1)."""
    if n == 0:
        return np.zeros((0, grid.N + 1))
    W, fine = kernel.weights(grid, refine, scheme)
    dB = rng.standard_normal((n, fine.N)) * np.sqrt(fine.dt)
    return dB @ W.T


def gv_increments(kernel: VolterraKernel, grid: TimeGrid, shape, rng: np.random.Generator,
                  refine: Optional[int] = None, scheme: str = "rms") -> np.ndarray:
    """Increments B_gv(t_{n+1}) - B_gv(t_n) for a batch of paths, shape (*shape, N)."""
    shape = tuple(np.atleast_1d(shape))
    n = int(np.prod(shape))
    paths = sample_gv_paths(kernel, grid, n, rng, refine, scheme)
    return np.diff(paths, axis=1).reshape(shape + (grid.N,))


def effective_gv_variance(kernel: VolterraKernel, sigma_gv, t: float, s: int = 0,
                          method: str = "auto", h: Optional[float] = None,
                          T: Optional[float] = None) -> float:
    """Variance rate sigma^2_cogv(t) of int_0^t sigma_gv dB_gv in regime ``s``.

    ``sigma_gv`` is a RegimeField or a constant. The fast path (fBm kernel,
    time-constant sigma) is sigma^2 2H t^(2H-1). The quadrature path
    differentiates Var(t) = int_0^t g(t,t')^2 dt' by central differences with
    step h (default dt/10), where
    g(t,t') = sigma(t') K(t,t') + int_{t'}^t (sigma(t'') - sigma(t')) d_1K(t'',t') dt''.
    """
    if isinstance(sigma_gv, RegimeField):
        T = sigma_gv.grid.T
        dt = sigma_gv.grid.dt
        col = sigma_gv.values[:, s]
        const = bool(np.all(col == col[0]))
        sig0 = float(col[0])
        sig = lambda u: np.asarray(sigma_gv(u, np.full(np.shape(u), s)), float)  # noqa: E731
    else:
        const = True
        sig0 = float(sigma_gv)
        dt = None
        sig = None
    if T is not None and not (0.0 <= t <= T):
        raise DomainError(f"time {t} outside [0, {T}]")
    if t < 0:
        raise DomainError(f"time {t} is negative")
    if sig0 == 0.0 and const:
        return 0.0
    use_fast = method == "fast" or (method == "auto" and const and kernel.H is not None)
    if use_fast:
        if kernel.H is None or not const:
            raise DomainError("fast path needs the fBm kernel and time-constant sigma")
        H = kernel.H
        if t == 0.0:
            return 0.0 if H > 0.5 else (sig0**2 if H == 0.5 else float("inf"))
        return float(sig0**2 * 2 * H * t ** (2 * H - 1))
    if h is None:
        h = (dt if dt is not None else 1e-3) / 10.0
    lo, hi = max(t - h, 0.0), t + h
    if T is not None:
        hi = min(hi, T) if t + h > T else hi
    return (_gv_variance(kernel, sig0 if const else sig, hi) - _gv_variance(kernel, sig0 if const else sig, lo)) / (hi - lo)


def _gv_variance(kernel, sig, t):
    if t <= 0.0:
        return 0.0
    K = (lambda a, b: kernel_kh(kernel.H, a, b)) if kernel.H is not None else kernel
    if not callable(sig):
        f = lambda u: float(K(t, u)) ** 2  # noqa: E731
        v1, _ = integrate.quad(f, 0.0, 0.5 * t, epsabs=1e-14, epsrel=1e-11, limit=400)
        v2, _ = integrate.quad(f, 0.5 * t, t, epsabs=1e-14, epsrel=1e-11, limit=400)
        return sig**2 * (v1 + v2)
    if kernel.H is None:
        raise DomainError("time-varying sigma needs the fBm kernel derivative")

    def g(u):
        su = float(sig(u))
        inner, _ = integrate.quad(lambda z: (float(sig(z)) - su) * float(kernel_kh_dt(kernel.H, z, u)),
                                  u, t, epsabs=1e-13, limit=200)
        return (su * float(K(t, u)) + inner) ** 2

    val, _ = integrate.quad(g, 0.0, t, epsabs=1e-13, epsrel=1e-10, limit=200)
    return val


# ---------------------------------------------------------------------------
# Brownian motion and jumps


def brownian_increments(grid: TimeGrid, shape, rng: np.random.Generator) -> np.ndarray:
    shape = tuple(np.atleast_1d(shape))
    return rng.standard_normal(shape + (grid.N,)) * np.sqrt(grid.dt)


def sample_jumps(jump: JumpSpec, grid: TimeGrid, rng: np.random.Generator):
    """Compound Poisson events on [0, T]: (times, marks) sorted by time."""
    if not jump.enabled:
        return np.zeros(0), np.zeros(0)
    n = rng.poisson(jump.total * grid.T)
    times = np.sort(rng.uniform(0.0, grid.T, size=n))
    return times, jump.sample_marks(n, rng)


def binned_jump_sums(jump: JumpSpec, grid: TimeGrid, shape, rng: np.random.Generator,
                     g: Callable = None) -> np.ndarray:
    """Sum of g(mu(theta)) over the jumps in each grid cell, shape (*shape, N).

    Equivalent in law to binning the events of ``sample_jumps``; ``g``
    defaults to the identity (sum of amplitudes).
    """
    shape = tuple(np.atleast_1d(shape))
    out = np.zeros(shape + (grid.N,))
    if not jump.enabled:
        return out
    counts = rng.poisson(jump.total * grid.dt, size=out.shape)
    tot = int(counts.sum())
    if tot:
        amp = jump.amplitude(jump.sample_marks(tot, rng))
        if g is not None:
            amp = g(amp)
        idx = np.repeat(np.flatnonzero(counts), counts.ravel()[counts.ravel() > 0])
        np.add.at(out.reshape(-1), idx, amp)
    return out


# ---------------------------------------------------------------------------
# regime chains


def _project(times, states, grid: TimeGrid):
    """Right-continuous piecewise-constant path on grid nodes."""
    k = np.searchsorted(times, grid.t, side="right")
    return np.asarray(states, dtype=int)[k]


def sample_ctmc(gen: RegimeGenerator, s0, grid: TimeGrid, rng: np.random.Generator,
                return_events: bool = False):
    """Regime path on the grid, exact jump times for a constant generator."""
    s = gen.index(s0)
    if not gen.is_constant:
        rate_fn = lambda t, cur: np.clip(gen.at(t)[cur], 0.0, None) * (np.arange(gen.size) != cur)  # noqa: E731
        bound = np.clip(gen.time_rates, 0, None).sum(axis=2).max() * 1.5 + 1e-300
        return _thinning(rate_fn, s, grid, rng, bound, return_events)
    Q = gen.rates
    times, states = [], [s]
    t = 0.0
    while True:
        out = -Q[s, s]
        if out <= 0.0:
            break
        t += rng.exponential(1.0 / out)
        if t > grid.T:
            break
        p = Q[s].copy()
        p[s] = 0.0
        s = int(rng.choice(gen.size, p=p / out))
        times.append(t)
        states.append(s)
    path = _project(np.array(times), states, grid)
    if return_events:
        return path, np.array(times), np.array(states)
    return path


def _thinning(rate_fn, s, grid, rng, bound, return_events=False):
    bound = float(bound)
    for _ in range(11):
        try:
            return _thinning_once(rate_fn, s, grid, rng, bound, return_events)
        except DominatingRateExceeded:
            bound *= 2.0
    raise DominatingRateExceeded(f"switching rate exceeded the dominating bound {bound:.3g} after 10 doublings")


def _thinning_once(rate_fn, s, grid, rng, bound, return_events):
    times, states = [], [s]
    t = 0.0
    if bound <= 0.0:
        path = _project(np.zeros(0), states, grid)
        return (path, np.zeros(0), np.array(states)) if return_events else path
    while True:
        t += rng.exponential(1.0 / bound)
        if t > grid.T:
            break
        r = np.asarray(rate_fn(t, s), float)
        if np.any(r < 0):
            raise NegativeRate(f"switching rate out of regime {s} is negative at t={t:.4g}")
        tot = r.sum()
        if tot > bound:
            raise DominatingRateExceeded(f"rate {tot:.4g} above bound {bound:.4g}")
        if rng.uniform() * bound < tot:
            s = int(rng.choice(len(r), p=r / tot))
            times.append(t)
            states.append(s)
    path = _project(np.array(times), states, grid)
    if return_events:
        return path, np.array(times), np.array(states)
    return path


def sample_ctmc_controlled(rates: ControlledSwitchRates, u_feedback: Callable, grid: TimeGrid,
                           rng: np.random.Generator, s0: int = 0, signs=None,
                           return_events: bool = False):
    """Regime path whose rates depend on the players' feedback.

    ``u_feedback(t, s)`` returns (dev, mean), the arrays u_j - ubar_j and
    ubar_j of length I. Thinning uses the grid maximum of the total rate
    times 1.5 as dominating bound, doubled on violation (at most 10 times).
    """
    if signs is None:
        signs = np.ones(rates.players)

    def rate_fn(t, s):
        dev, mean = u_feedback(t, s)
        return rates.rates(dev, mean, signs, s)

    est = 0.0
    for t in grid.t:
        for s in range(rates.size):
            est = max(est, float(np.clip(rate_fn(t, s), 0, None).sum()))
    return _thinning(rate_fn, int(s0), grid, rng, 1.5 * est, return_events)
