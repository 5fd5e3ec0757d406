"""Games whose state is the regime itself or carries a delay: controlled switching, delayed trend."""
from __future__ import annotations

import numpy as np

from ..core import ControlledSwitchRates, RegimeField, make_time_generator
from ..errors import DenominatorSignFlip, DomainError, HypothesisViolation, OmegaNonpositive, SimulationError
from ..solver import DelayBetaParams, delay_beta_explicit
from .base import GameDefinition, PlayerType, as_field, pick


class ControlledSwitching(GameDefinition):
    """Regime switching whose rates depend quadratically and linearly on the controls.

    The game coefficient ``switch`` is a ControlledSwitchRates (or a mapping of
    its arrays) indexed by player block. The linear coefficient b1 is drawn
    with a random sign per (common path, player) so that it has mean zero;
    the equilibrium deviation part follows the sign, which leaves both the
    rates and the costs sign free.
    """

    variant = "controlled_switching"
    kinds = ("V",)
    player_coefs = ("qT", "r", "rbar", "eps")
    optional_player_coefs = {"eps": 0.0}
    game_coefs = ("switch",)

    def validate(self):
        sw = self.spec.coef["switch"]
        if not isinstance(sw, ControlledSwitchRates):
            sw = ControlledSwitchRates(**{k: np.asarray(v, float) for k, v in dict(sw).items()})
            self.spec.coef["switch"] = sw
        if sw.players != self.P or sw.size != self.S:
            raise DomainError(f"switch coefficients must have shape ({self.P}, {self.S}, {self.S})")
        self.sw = sw
        self.require(self.pcoef("r") > 0, "needs r_i > 0")
        self.require(self.pcoef("rbar") > 0, "needs rbar_i > 0")
        # generator form: diagonal entries hold minus the off-diagonal row sums
        self.B2, self.B2b = sw.with_diagonal(sw.b2), sw.with_diagonal(sw.b2bar)
        self.B1, self.B1b = sw.with_diagonal(sw.b1), sw.with_diagonal(sw.b1bar)
        self.Bo = (self.counts[:, None, None] * sw.with_diagonal(sw.bo)).sum(axis=0)

    @staticmethod
    def _contract(V, B):
        """sum_{s'} V_i(s') B_j[s, s'] for all (i, j, s): shape (P, P, S)."""
        return np.einsum("it,jst->ijs", V, B)

    def parts(self, c, V):
        """Building blocks (A, D, Abar, Dbar) and the cross contractions."""
        A2, A2b = self._contract(V, self.B2), self._contract(V, self.B2b)
        A1, A1b = self._contract(V, self.B1), self._contract(V, self.B1b)
        idx = np.arange(self.P)
        D = c["r"] + A2[idx, idx]
        Db = c["rbar"] + A2b[idx, idx]
        A = A1[idx, idx]
        Ab = c["eps"] + A1b[idx, idx]
        return A, D, Ab, Db, (A2, A2b, A1, A1b)

    def terminal(self):
        return self.table.node(self.grid.N)["qT"][None]

    def rhs(self, t, y):
        c = self.table.at(t)
        V = y[0]
        A, D, Ab, Db, (A2, A2b, A1, A1b) = self.parts(c, V)
        self._check_denominators(t, D, Db)
        m, mb = A / D, Ab / Db  # u_j - ubar_j = -m_j / 2 (up to sign), ubar_j = -mb_j / 2
        # number of other individuals in block j, seen from a player of block i
        w = self.counts[None, :, None] - np.eye(self.P)[:, :, None]
        cross = (w * (A2 * m[None] ** 2 / 4 + A2b * mb[None] ** 2 / 4
                      - A1 * m[None] / 2 - A1b * mb[None] / 2)).sum(axis=1)
        dV = (-V @ self.Bo.T + A**2 / (4 * D) + Ab**2 / (4 * Db) - cross - self.coupling(V, t))
        return dV[None]

    def _check_denominators(self, t, D, Db):
        for name, den in (("r+sum V b2", D), ("rbar+sum V b2bar", Db)):
            if np.any(den <= 0):
                p, s = np.unravel_index(np.argmax(den <= 0), den.shape)
                raise DenominatorSignFlip(t, f"{name}[{self.spec.players[p].name}]@{self.gen.states[s]}")

    def value(self, sol, player=None):
        v = sol.initial("V")[:, self.spec.s0_index]
        return v if player is None else v[player]

    def equilibrium_parts(self, c, V):
        """Unsigned deviation part and mean part of the controls, each (P, S)."""
        A, D, Ab, Db, _ = self.parts(c, V)
        return -0.5 * A / D, -0.5 * Ab / Db

    def regime_generator(self, sol, gains=None):
        """Time-dependent generator induced by the (possibly rescaled) feedback."""
        g = np.ones((2, self.P)) if gains is None else np.asarray(gains, float).reshape(2, self.P)
        rates = np.empty((self.grid.N + 1, self.S, self.S))
        cnt = self.counts[:, None, None]
        base = self.gen
        for n in range(self.grid.N + 1):
            d, mb = self.equilibrium_parts(self.table.node(n), sol.node(n)[0])
            d, mb = g[0][:, None] * d, g[1][:, None] * mb
            tot = (cnt * (self.sw.b2 * d[:, :, None] ** 2 + self.sw.b2bar * mb[:, :, None] ** 2
                          + self.sw.b1 * d[:, :, None] + self.sw.b1bar * mb[:, :, None] + self.sw.bo)).sum(0)
            tot = tot + base.at(self.grid.t[n])
            np.fill_diagonal(tot, 0.0)
            rates[n] = tot
        return make_time_generator(self.gen.states, self.grid, rates)

    # the state is empty: one particle per common path carries the sign draws
    def initial_state(self, R, M, rngs=None):
        law = self.spec.extra.get("b1_law", "rademacher")
        if law not in ("rademacher", "normal"):
            raise DomainError(f"b1_law must be 'rademacher' or 'normal', got {law!r}")
        std = float(self.spec.extra.get("b1_std", 1.0))
        signs = np.empty((self.P, R, M))
        for r in range(R):
            rng = rngs[r] if rngs is not None else np.random.default_rng(r)
            if law == "rademacher":
                signs[:, r] = rng.choice(np.array([-1.0, 1.0]), size=(self.P, M))
            else:
                signs[:, r] = std * rng.standard_normal((self.P, M))
        return {"signs": signs, "x": np.zeros((R, M))}

    def controls(self, c, a, s, state):
        d, mb = self.equilibrium_parts(c, a[0])
        return pick(d, s) * state["signs"], pick(mb, s)

    def running_cost(self, c, a, s, state, dev, mean):
        return pick(c["r"], s) * dev**2 + pick(c["rbar"], s) * mean**2 + pick(c["eps"], s) * mean

    def terminal_cost(self, c, s, state):
        return np.broadcast_to(pick(c["qT"], s), (self.P,) + state["x"].shape)

    def advance(self, c, a, s, state, dev, mean, noise, dt, mode, nxt):
        return state

    def describe_feedback(self, sol):
        parts = [self.equilibrium_parts(self.table.node(n), sol.node(n)[0]) for n in range(self.grid.N + 1)]
        return [("dev_unsigned", np.array([p[0] for p in parts])), ("ubar", np.array([p[1] for p in parts]))]


class DelayedTrend(GameDefinition):
    """Delayed and trend-based planner problem (a reward to maximise).

    Coefficients are game level. The trend is y(t) = int_{-tau}^0 e^{lam s} x(t+s) ds
    and the delayed state z(t) = x(t - tau); the initial history is the
    constant x0. The feedback uses the beta_{B_o} = 0 branch.
    """

    variant = "delayed_trend"
    kinds = ("alpha", "beta")
    nonneg = ("alpha", "beta")
    player_coefs = ()
    game_coefs = ("b1", "b2", "eps", "sigma", "q", "qT", "r1", "rbar1",
                  "b11", "b12", "b13", "bbar2", "sigmabar")
    optional_game_coefs = {"b1": 0.0, "b2": 0.0, "eps": 0.0, "sigma": 1.0, "q": 0.0, "qT": 0.0,
                           "b11": 0.0, "b13": 0.0}

    def __init__(self, spec):
        if not spec.players:
            spec.players.append(PlayerType("planner", {}))
        if spec.P != 1 or spec.players[0].count != 1:
            raise DomainError("delayed_trend has a single planner")
        super().__init__(spec)

    def _fill_defaults(self):
        sp = self.spec
        self.rho = float(sp.extra.get("rho", 0.5))
        self.lam = float(sp.extra.get("lam", 0.0))
        self.tau = float(sp.extra.get("tau", 0.0))
        for name in ("b11", "b13"):
            if name not in sp.coef:
                sp.coef[name] = as_field(0.0, sp.grid, sp.states)
        self.eta = sp.coef["b13"].values * np.exp(self.lam * self.tau)
        if "b12" not in sp.coef:
            # default to the matching condition that makes xbar + eta ybar geometric
            matched = self.eta * (sp.coef["b11"].values + self.lam + self.eta)
            sp.coef["b12"] = RegimeField(sp.grid, matched)
        super()._fill_defaults()

    def validate(self):
        sp = self.spec
        rho = self.rho
        if not (rho < 1 and rho != 0):
            raise HypothesisViolation(f"delayed_trend needs rho < 1 and rho != 0, got {rho}")
        if self.tau < 0:
            raise DomainError("delay tau must be nonnegative")
        self.require(self.gcoef("r1") > 0, "needs r1 > 0")
        self.require(self.gcoef("rbar1") > 0, "needs rbar1 > 0")
        self.require(self.gcoef("sigmabar") != 0, "needs sigmabar != 0")
        self.require(self.gcoef("q") >= 0, "needs q >= 0")
        self.require(self.gcoef("qT") >= 0, "needs q_T >= 0")
        if np.any(self.gcoef("b2") * self.gcoef("eps") != 0):
            self.require(self.gcoef("sigma") != 0, "needs sigma != 0 when b2 eps != 0")
        self.convention = sp.extra.get("convention", "printed")
        if self.convention not in ("printed", "ito"):
            raise DomainError(f"convention must be 'printed' or 'ito', got {self.convention!r}")
        self.mode = sp.extra.get("beta_mode", "explicit" if self.S == 1 else "ode")
        if self.mode not in ("explicit", "ode"):
            raise DomainError(f"beta_mode must be 'explicit' or 'ode', got {self.mode!r}")
        want = self.eta * (self.gcoef("b11") + self.lam + self.eta)
        if not np.allclose(self.gcoef("b12"), want, rtol=1e-9, atol=1e-12):
            raise HypothesisViolation("delayed_trend needs the matching b12 = eta (b11 + lam + eta), eta = b13 e^(lam tau)")
        if self.mode == "explicit":
            if self.S != 1:
                raise DomainError("the explicit beta formula needs a single regime")
            if not all(sp.coef[n].is_constant for n in ("rbar1", "bbar2", "sigmabar", "b11", "b13")):
                raise DomainError("the explicit beta formula needs time-constant coefficients")
        if self.mode == "explicit" and self.omega_c()[0].min() <= 0:
            raise OmegaNonpositive(f"needs omega > 0, got {float(self.omega_c()[0].min()):.6g}")

    def omega_c(self, c=None):
        if c is None:
            g = lambda n: self.gcoef(n)  # noqa: E731
        else:
            g = lambda n: c[n]  # noqa: E731
        rho = self.rho
        eta = g("b13") * np.exp(self.lam * self.tau)
        k = 4.0 if self.convention == "printed" else 2.0
        w = rho / (1 - rho) * g("bbar2") ** 2 / (k * g("sigmabar") ** 2) + rho * (g("b11") + eta)
        cc = (1 - rho) * g("rbar1") ** (1 / (1 - rho))
        return w, (cc if self.convention == "printed" else -cc)

    def beta_params(self) -> DelayBetaParams:
        c = self.table.node(0)
        return DelayBetaParams(self.rho, float(c["rbar1"][0]), float(c["bbar2"][0]), float(c["sigmabar"][0]),
                               float(c["b11"][0]), float(c["b13"][0]), self.lam, self.tau, self.convention)

    def terminal(self):
        c = self.table.node(self.grid.N)
        return np.stack([c["qT"][None], np.ones((1, self.S))])

    def rhs(self, t, y):
        c = self.table.at(t)
        a, b = y
        w, cc = self.omega_c(c)
        with np.errstate(invalid="ignore", divide="ignore"):
            bp = np.where(b > 0, np.abs(b) ** (self.rho / (self.rho - 1)), np.nan)
        da = -2 * c["b1"] * a - c["q"] - self.coupling(a, t) + a**2 / c["r1"] + c["b2"] ** 2 * c["eps"] * a
        db = -w * b + cc * bp - self.coupling(b, t)
        return np.stack([da, db])

    def post_solve(self, sol):
        if self.mode == "explicit":
            beta = delay_beta_explicit(self.beta_params(), self.grid)
            sol.values[:, 1, 0, :] = beta.values
            sol.diagnostics["beta"] = "explicit"
        return sol

    @property
    def ybar0(self):
        x0 = self.spec.x0
        if self.lam == 0:
            return x0 * self.tau
        return x0 * (1 - np.exp(-self.lam * self.tau)) / self.lam

    def value(self, sol, player=None):
        s0 = self.spec.s0_index
        w0 = self.spec.x0 + self.eta[0, s0] * self.ybar0
        var0 = 0.0  # deterministic initial history
        v = np.array([-sol.initial("alpha")[0, s0] * var0 + sol.initial("beta")[0, s0] * w0**self.rho / self.rho])
        return v if player is None else v[player]

    def simulate_paths(self, sol, R, M, seed, scale=None):
        return _delay_simulate(self, sol, R, M, seed, scale)

    def describe_feedback(self, sol):
        """Consumption per unit of w and the common control times xbar / w."""
        rho = self.rho
        beta = sol.kind("beta")
        u1 = (beta / self.gcoef("rbar1")[:, None, :]) ** (1 / (rho - 1))
        k = 2.0 if self.convention == "printed" else 1.0
        u2 = -self.gcoef("bbar2") / (k * (rho - 1) * self.gcoef("sigmabar") ** 2)
        return [("u1_per_w", u1), ("u2_xbar_per_w", np.broadcast_to(u2[:, None, :], u1.shape))]

    def feedback_parts(self, c, a, s, xbar, ybar):
        """(u1bar, u2bar, w) on common paths.

        u2bar is the common part of u2; the constant -b2 eps / sigma^2 only
        multiplies x - xbar, which vanishes for deterministic histories.
        """
        rho = self.rho
        eta = pick(c["b13"], s) * np.exp(self.lam * self.tau)
        w = xbar + eta * ybar
        beta = pick(a[1][0], s)
        u1 = w * (beta / pick(c["rbar1"], s)) ** (1 / (rho - 1))
        k = 2.0 if self.convention == "printed" else 1.0
        u2 = -w * pick(c["bbar2"], s) / (k * (rho - 1) * pick(c["sigmabar"], s) ** 2 * xbar)
        return u1, u2, w


def trend_rhs(xbar, ybar, zbar, lam, tau):
    """d ybar / dt for the exponential trend window (decay lam, length tau)."""
    return xbar - lam * ybar - np.exp(-lam * tau) * zbar


def trend_window(history: np.ndarray, dt: float, lam: float) -> float:
    """Trapezoid value of int_{-tau}^0 e^{lam s} x(t+s) ds from the last grid samples.

    ``history`` holds x(t - tau), ..., x(t) on a grid of step dt.
    """
    m = len(history) - 1
    if m <= 0:
        return 0.0
    s = -dt * np.arange(m, -1, -1)
    f = np.exp(lam * s) * history
    return float(dt * (f.sum() - 0.5 * (f[0] + f[-1])))


def window_integral(times, values, t, tau, lam, m):
    """int_{-tau}^0 e^{lam u} x(t+u) du by the trapezoid rule on m cells.

    ``values`` (R, K) samples x at the increasing ``times`` (K,), linear
    interpolation in between; returns (R,).
    """
    if tau == 0:
        return np.zeros(values.shape[0])
    u = np.linspace(-tau, 0.0, m + 1)
    pts = t + u
    j = np.clip(np.searchsorted(times, pts, side="right") - 1, 0, len(times) - 2)
    w = (pts - times[j]) / (times[j + 1] - times[j])
    xs = (1 - w) * values[:, j] + w * values[:, j + 1]
    f = np.exp(lam * u) * xs
    h = tau / m
    return h * (f.sum(axis=1) - 0.5 * (f[:, 0] + f[:, -1]))


def _delay_simulate(game, sol, R, M, seed, scale=None):
    """Common-path simulation of the delayed trend planner problem.

    The history is the constant x0 on [-tau, 0], so x - xbar stays zero and
    only xbar moves (Euler-Maruyama driven by B_o). The trend ybar is the
    trapezoid window integral of the stored xbar path, zbar the linearly
    interpolated delayed value. Rewards are returned as (1, R, 1) samples.
    """
    from ..noise import brownian_increments, stream
    from ..sim import PathEnsemble

    grid = game.grid
    N, dt = grid.N, grid.dt
    tau, lam = game.tau, game.lam
    lag = int(np.ceil(tau / dt - 1e-9)) if tau > 0 else 0
    hist_t = np.concatenate([grid.t[0] - dt * np.arange(lag, 0, -1), grid.t])
    X = np.full((R, lag + N + 1), float(game.spec.x0))
    m = max(lag, 1)
    rho = game.rho
    g1 = 1.0 if scale is None else float(scale[1][0])
    g2 = 1.0 if scale is None else float(scale[0][0])
    dB = np.stack([brownian_increments(grid, (1,), stream(seed, "Bo", r))[0] for r in range(R)])
    regimes = np.zeros((R, N + 1), dtype=int)
    s = regimes[:, 0]
    reward = np.zeros(R)
    prev = None
    xbar_track = np.empty((R, N + 1))
    for n in range(N + 1):
        t = grid.t[n]
        xb = X[:, lag + n]
        yb = window_integral(hist_t, X, t, tau, lam, m)
        zb = X[:, n] if lag and abs(lag * dt - tau) < 1e-12 else _interp_rows(hist_t, X, t - tau)
        c, a = game.table.node(n), sol.node(n)
        u1, u2, w = game.feedback_parts(c, a, s, xb[:, None], yb[:, None])
        u1, u2, w = g1 * u1[:, 0], g2 * u2[:, 0], w[:, 0]
        xbar_track[:, n] = xb
        if np.any(w <= 0) or np.any(u1 <= 0):
            raise SimulationError("delayed trend: xbar + eta ybar or the consumption left (0, inf)")
        L = c["rbar1"][0] * u1**rho / rho
        if prev is not None:
            reward += 0.5 * dt * (prev + L)
        prev = L
        if n == N:
            reward += w**rho / rho
            break
        drift = (-u1 + c["b11"][0] * xb + c["b12"][0] * yb + c["b13"][0] * zb + c["bbar2"][0] * u2 * xb)
        X[:, lag + n + 1] = xb + drift * dt + c["sigmabar"][0] * xb * u2 * dB[:, n]
    costs = reward[None, :, None]
    return PathEnsemble(game, sol, R, 1, seed, costs, regimes, xbar_track, X[:min(R, 4), None, lag:], None,
                        None, xbar_track, np.zeros((R, N + 1)), {}, {"mode": "delay", "objective": "reward"})


def _interp_rows(times, values, t):
    j = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
    w = (t - times[j]) / (times[j + 1] - times[j])
    return (1 - w) * values[:, j] + w * values[:, j + 1]
