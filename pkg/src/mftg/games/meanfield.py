"""Mean-field games with explicit feedback: quadratic-quadratic, cotangent, hyperbolic cotangent."""
from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from ..errors import DenominatorSignFlip, DomainError, MeanfieldSingularity, TrigDomain
from .base import DELTA, GameDefinition, pick, sum_others


def regime_probabilities(gen, s0: int, grid) -> np.ndarray:
    """p(t_n, s) = P(s(t_n) = s | s(0) = s0) on the grid, shape (N+1, S)."""
    p = np.zeros((grid.N + 1, gen.size))
    p[0, s0] = 1.0
    if gen.is_constant:
        step = expm(gen.rates * grid.dt)
        for n in range(grid.N):
            p[n + 1] = p[n] @ step
    else:
        for n in range(grid.N):
            p[n + 1] = p[n] @ expm(gen.at(grid.t[n] + 0.5 * grid.dt) * grid.dt)
    return p


def antithetic_start(x0: float, spread: float, R: int, M: int) -> np.ndarray:
    """Initial states x0 + spread, x0 - spread alternating over particles."""
    x = np.full((R, M), float(x0))
    if spread:
        if M % 2:
            raise DomainError("a nonzero initial spread needs an even number of particles")
        x[:, 0::2] += spread
        x[:, 1::2] -= spread
    return x


class QuadraticQuadratic(GameDefinition):
    """Quadratic-quadratic game: state drift quadratic in the controls, linear terminal cost.

    Player coefficients: qT (terminal weight), r, rbar, eps2bar (running cost),
    q, qbar, eps1_std, eps1bar (dynamics). Each player draws a private
    eps1 = eps1_std * xi with xi ~ N(0, 1) fixed over the horizon.
    """

    variant = "quadratic_quadratic"
    kinds = ("alpha",)
    player_coefs = ("qT", "r", "rbar", "eps2bar", "q", "qbar", "eps1_std", "eps1bar")
    optional_player_coefs = {"eps2bar": 0.0, "eps1bar": 0.0, "eps1_std": 0.0, "q": 0.0, "qbar": 0.0}
    game_coefs = ("sigma",)
    optional_game_coefs = {"sigma": 0.0}
    meanfield = True
    jump_transform = None

    def validate(self):
        self.require(self.pcoef("r") > DELTA, "needs r_i > delta > 0")
        self.require(self.pcoef("rbar") > DELTA, "needs rbar_i > delta > 0")
        self.require(self.pcoef("q") >= 0, "needs q_i >= 0")
        self.require(self.pcoef("qbar") >= 0, "needs qbar_i >= 0")
        self.require(self.pcoef("eps1_std") >= 0, "eps1_std must be nonnegative")

    def setup(self):
        nz = set()
        if np.any(self.gcoef("sigma") != 0):
            nz.add("B")
        if self.spec.jump.enabled:
            nz.add("J")
        self.noises = frozenset(nz)
        self.jmean = self.spec.jump.moments["mean"]

    def terminal(self):
        return self.table.node(self.grid.N)["qT"][None]

    def rhs(self, t, y):
        return -self.coupling(y[0], t)[None]

    def check_solution(self, t, y):
        c = self.table.at(t)
        a = y[0]
        for name, den in (("r+alpha q", c["r"] + a * c["q"]), ("rbar+alpha qbar", c["rbar"] + a * c["qbar"])):
            if np.any(den <= 0):
                p, s = np.unravel_index(np.argmax(den <= 0), den.shape)
                raise DenominatorSignFlip(t, f"{name}[{self.spec.players[p].name}]@{self.gen.states[s]}")

    def gains(self, c, a):
        """(a_i, ubar_i): u - ubar = -a_i eps1_i, ubar = constant per regime."""
        dev_gain = a / (2 * (c["r"] + a * c["q"]))
        ubar = -(c["eps2bar"] + a * c["eps1bar"]) / (2 * (c["rbar"] + a * c["qbar"]))
        return dev_gain, ubar

    def integrand(self, c, a):
        """Expected running integrand of the equilibrium cost per (player, regime)."""
        g, ubar = self.gains(c, a)
        e2 = c["eps1_std"] ** 2
        m = -ubar
        dev_part = (c["q"] * g**2 - g) * e2
        mean_part = c["qbar"] * m**2 - c["eps1bar"] * m
        others = sum_others(dev_part, self.counts) + sum_others(mean_part, self.counts)
        own = -a**2 * e2 / (4 * (c["r"] + a * c["q"])) - (c["eps2bar"] + a * c["eps1bar"]) ** 2 / (4 * (c["rbar"] + a * c["qbar"]))
        return a * others + own

    def value(self, sol, player=None):
        s0 = self.spec.s0_index
        p = regime_probabilities(self.gen, s0, self.grid)
        vals = np.array([(self.integrand(self.table.node(n), sol.node(n)[0]) * p[n]).sum(-1)
                         for n in range(self.grid.N + 1)])
        w = np.full(self.grid.N + 1, self.grid.dt)
        w[[0, -1]] *= 0.5
        v = sol.initial("alpha")[:, s0] * self.spec.x0 + w @ vals
        return v if player is None else v[player]

    def initial_state(self, R, M, rngs=None):
        xi = np.empty((self.P, R, M))
        others = np.zeros((self.P, R, M))
        for r in range(R):
            rng = rngs[r] if rngs is not None else np.random.default_rng(r)
            xi[:, r] = rng.standard_normal((self.P, M))
            for p, cnt in enumerate(self.counts.astype(int)):
                if cnt > 1:
                    others[p, r] = rng.chisquare(cnt - 1, size=M)
        return {"x": np.full((R, M), float(self.spec.x0)), "xi": xi, "xi2_others": others}

    def controls(self, c, a, s, state):
        g, ubar = self.gains(c, a[0])
        dev = -pick(g * c["eps1_std"], s) * state["xi"]
        return dev, pick(ubar, s)

    def running_cost(self, c, a, s, state, dev, mean):
        return pick(c["r"], s) * dev**2 + pick(c["rbar"], s) * mean**2 + pick(c["eps2bar"], s) * mean

    def terminal_cost(self, c, s, state):
        return pick(c["qT"], s) * state["x"][None]

    def _drift(self, c, a, s, state, dev, mean):
        q, eps_std = pick(c["q"], s), pick(c["eps1_std"], s)
        eps = eps_std * state["xi"]
        own = q * dev**2 + eps * dev
        # the other players of each block play the equilibrium gain with their own draws
        g = pick(self.gains(c, a[0])[0], s)
        rest = (q * g**2 - g) * eps_std**2 * state["xi2_others"]
        mean_part = pick(c["qbar"], s) * mean**2 + pick(c["eps1bar"], s) * mean
        return (own + rest).sum(0) + (self.counts[:, None, None] * mean_part).sum(0) - self.jmean

    def advance(self, c, a, s, state, dev, mean, noise, dt, mode, nxt):
        dev1, mean1 = nxt.controls(state)
        # the drift does not depend on x: trapezoid in time
        drift = 0.5 * (self._drift(c, a, s, state, dev, mean) + self._drift(nxt.c, nxt.a, s, state, dev1, mean1))
        x = state["x"] + drift * dt
        if "B" in noise:
            x = x + 0.5 * (np.asarray(c["sigma"])[s] + np.asarray(nxt.c["sigma"])[s])[:, None] * noise["B"]
        if "J" in noise:
            x = x + noise["J"]
        return dict(state, x=x)

    def describe_feedback(self, sol):
        a = sol.kind("alpha")
        g = a / (2 * (self.pcoef("r") + a * self.pcoef("q")))
        ubar = -(self.pcoef("eps2bar") + a * self.pcoef("eps1bar")) / (2 * (self.pcoef("rbar") + a * self.pcoef("qbar")))
        return [("dev_per_eps1", -g), ("ubar", ubar)]


class _TrigBase(GameDefinition):
    """Shared machinery of the cotangent and hyperbolic cotangent games.

    Guess: alpha sn^2((x - xbar)/4) + alphabar sn^2(xbar/4) + delta where sn is
    sin or sinh. The state is stored as x per particle and xbar per common path.
    """

    kinds = ("alpha", "alphabar", "delta")
    nonneg = ("alpha", "alphabar")
    player_coefs = ("q", "qbar", "b2", "b2bar")
    game_coefs = ("sigma",)
    optional_game_coefs = {"sigma": 0.0}
    meanfield = True
    sign = 1.0  # -1 for cotangent, +1 for hyperbolic in the alpha and alphabar equations
    tol = 1e-6

    sn = cs = tn = ct = None

    def setup(self):
        self.noises = frozenset({"B"}) if np.any(self.gcoef("sigma") != 0) else frozenset()

    def terminal(self):
        return np.zeros((3, self.P, self.S))

    def rhs(self, t, y):
        c = self.table.at(t)
        a, ab, d = y
        sg2 = c["sigma"] ** 2
        sgn = self.sign
        da = (-c["q"] - sgn * (2 + sg2) * a / 8 + a**2 * c["b2"] ** 2 / 16
              + a / 8 * sum_others(a * c["b2"] ** 2, self.counts) - self.coupling(a, t))
        dab = (-c["qbar"] - sgn * ab / 4 + ab**2 * c["b2bar"] ** 2 / 16
               + ab / 8 * sum_others(ab * c["b2bar"] ** 2, self.counts) - self.coupling(ab, t))
        dd = -a * (2 + sg2) / 16 - ab / 8 - self.coupling(d, t)
        return np.stack([da, dab, dd])

    def value(self, sol, player=None):
        sp = self.spec
        s0 = sp.s0_index
        xb0 = self.xbar0
        a, ab, d = (sol.initial(k)[:, s0] for k in self.kinds)
        base = sp.x0 - xb0
        dev = 0.5 * (self.sn((base + sp.x0_spread) / 4) ** 2 + self.sn((base - sp.x0_spread) / 4) ** 2)
        v = a * dev + ab * self.sn(xb0 / 4) ** 2 + d
        return v if player is None else v[player]

    @property
    def xbar0(self):
        sp = self.spec
        return float(sp.xbar0 if sp.xbar0 is not None else sp.x0)

    def initial_state(self, R, M, rngs=None):
        sp = self.spec
        x = antithetic_start(sp.x0, sp.x0_spread, R, M)
        return {"x": x, "xbar": np.full((R, 1), self.xbar0)}

    def state_from(self, x, xbar):
        if xbar is None:
            xbar = np.full((x.shape[0], 1), self.xbar0)
        return {"x": x, "xbar": xbar}

    def controls(self, c, a, s, state):
        y = state["x"] - state["xbar"]
        dev = -pick(c["b2"] * a[0] / 4, s) * self.tn(y / 4)[None]
        mean = -pick(c["b2bar"] * a[1] / 4, s) * self.tn(state["xbar"] / 4)[None]
        return dev, mean

    def running_cost(self, c, a, s, state, dev, mean):
        y4 = (state["x"] - state["xbar"]) / 4
        xb4 = state["xbar"] / 4
        return (dev**2 * self.cs(y4) ** 2 + pick(c["q"], s) * self.sn(y4) ** 2
                + mean**2 * self.cs(xb4) ** 2 + pick(c["qbar"], s) * self.sn(xb4) ** 2)

    def terminal_cost(self, c, s, state):
        return np.zeros((self.P,) + state["x"].shape)

    def _drifts(self, c, s, state, dev, mean):
        y, xbar = state["x"] - state["xbar"], state["xbar"]
        cnt = self.counts[:, None, None]
        fy = 0.5 * self.ct(y / 2) + (cnt * pick(c["b2"], s) * dev).sum(0)
        fb = 0.5 * self.ct(xbar / 2) + (cnt * pick(c["b2bar"], s) * mean).sum(0)
        return fy, fb

    def advance(self, c, a, s, state, dev, mean, noise, dt, mode, nxt):
        x, xbar = state["x"], state["xbar"]
        y = x - xbar
        sig = 0.5 * (np.asarray(c["sigma"])[s] + np.asarray(nxt.c["sigma"])[s])[:, None]
        dW = sig * noise["B"] if "B" in noise else 0.0
        # stochastic Heun (weak order two for additive noise) for y, Heun for xbar
        fy0, fb0 = self._drifts(c, s, state, dev, mean)
        yp = y + fy0 * dt + dW
        xbp = xbar + fb0 * dt
        self._check_dev(yp)
        self._check_mean(xbp)
        pred = {"x": xbp + yp, "xbar": xbp}
        fy1, fb1 = self._drifts(nxt.c, s, pred, *nxt.controls(pred))
        y_new = y + 0.5 * (fy0 + fy1) * dt + dW
        xbar_ode = xbar + 0.5 * (fb0 + fb1) * dt
        self._check_dev(y_new)
        self._check_mean(xbar_ode)
        x_new = xbar_ode + y_new
        if mode == "particle":
            xbar_new = x_new.mean(axis=1, keepdims=True)
            self._check_mean(xbar_new)
        else:
            xbar_new = xbar_ode
        return {"x": x_new, "xbar": xbar_new}

    def describe_feedback(self, sol):
        return [("dev_per_tan", -self.pcoef("b2") * sol.kind("alpha") / 4),
                ("mean_per_tan", -self.pcoef("b2bar") * sol.kind("alphabar") / 4)]


class Cotangent(_TrigBase):
    """Cotangent drift game with sin^2 / cos^2 weighted costs."""

    variant = "cotangent"
    sign = -1.0
    sn, cs, tn = staticmethod(np.sin), staticmethod(np.cos), staticmethod(np.tan)
    ct = staticmethod(lambda v: 1.0 / np.tan(v))

    def validate(self):
        self.require(self.pcoef("q") > 0, "needs q_i > 0")
        self.require(self.pcoef("qbar") > 0, "needs qbar_i > 0")
        self.require(0 < self.xbar0 < np.pi, f"needs xbar0 in (0, pi), got {self.xbar0}")
        d = abs(self.spec.x0 - self.xbar0) + abs(self.spec.x0_spread)
        self.require(d < 2 * np.pi - self.tol, "initial deviation must lie inside (-2 pi, 2 pi)")

    def _check_dev(self, y):
        if np.any(np.abs(y) >= 2 * np.pi - self.tol) or not np.all(np.isfinite(y)):
            raise TrigDomain("|x - xbar| reached 2 pi: the cos^2 weight vanishes")

    def _check_mean(self, xb):
        if np.any(np.abs(xb) >= 2 * np.pi - self.tol) or np.any(xb <= 0) or not np.all(np.isfinite(xb)):
            raise TrigDomain("xbar left (0, 2 pi): the cot drift or the cos^2 weight is singular")


class HyperbolicCotangent(_TrigBase):
    """Hyperbolic cotangent drift game with sinh^2 / cosh^2 weighted costs."""

    variant = "hyperbolic_cotangent"
    sign = 1.0
    sn, cs, tn = staticmethod(np.sinh), staticmethod(np.cosh), staticmethod(np.tanh)
    ct = staticmethod(lambda v: 1.0 / np.tanh(v))

    def validate(self):
        self.require(self.xbar0 != 0, "needs xbar0 != 0")

    def _check_dev(self, y):
        if not np.all(np.isfinite(y)):
            raise MeanfieldSingularity("deviation x - xbar became non-finite")

    def _check_mean(self, xb):
        if np.any(np.sign(xb) != np.sign(self.xbar0)) or not np.all(np.isfinite(xb)):
            raise MeanfieldSingularity("xbar reached 0 where coth is singular")
