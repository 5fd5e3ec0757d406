"""Mean-field-free games: log state, log square, Legendre-Fenchel, geometric Gauss-Volterra."""
from __future__ import annotations

import numpy as np

from ..core import jump_moment_log, jump_moment_square, sroot
from ..errors import DomainError, HypothesisViolation, UnsupportedLoss
from .base import DELTA, GameDefinition, pick, sum_others


def _expo_step(z, drift, dt):
    """z * exp(dt * drift / z) where z != 0, plain Euler otherwise."""
    out = z + drift * dt
    nz = z != 0
    out[nz] = z[nz] * np.exp(dt * drift[nz] / z[nz])
    return out


def _cell_mean(c0, c1, name, s):
    """Average of a game coefficient over the two ends of a cell, as an (R, 1) column."""
    return 0.5 * (np.asarray(c0[name])[s] + np.asarray(c1[name])[s])[:, None]


def _affine_step(z, a, c, dt):
    """Exact step of z' = a z + c for frozen a, c."""
    ea = np.exp(a * dt)
    small = np.abs(a * dt) < 1e-8
    phi = np.where(small, dt, (ea - 1.0) / np.where(small, 1.0, a))
    return z * ea + c * phi


class LogState(GameDefinition):
    """Log-state game: cost -q ln x + r u^(2k), geometric jump-diffusion state."""

    variant = "log_state"
    kinds = ("alpha", "delta")
    nonneg = ("alpha",)
    player_coefs = ("q", "qT", "r", "b2")
    game_coefs = ("b1", "sigma")
    optional_game_coefs = {"b1": 0.0, "sigma": 0.0}
    jump_transform = staticmethod(np.log1p)

    def validate(self):
        sp = self.spec
        self.k = int(sp.extra.get("k", 1))
        if self.k < 1 or self.k != sp.extra.get("k", 1):
            raise DomainError("exponent k must be an integer >= 1")
        self.require(sp.x0 >= np.e * 10, f"needs x0 >> e (x0 >= 10 e), got x0={sp.x0}")
        self.require(self.pcoef("r") > DELTA, "needs r_i > delta > 0")
        self.require(self.pcoef("q") >= 0, "needs q_i >= 0")
        self.require(self.pcoef("qT") >= 0, "needs q_i(T) >= 0")
        if sp.jump.enabled:
            self.require(sp.jump._mu_min() >= 0, "needs mu(theta) >= 0")
        self.J = jump_moment_log(sp.jump)

    def setup(self):
        self.noises = frozenset(n for n, on in (("B", np.any(self.gcoef("sigma") != 0)),
                                                ("J", self.spec.jump.enabled)) if on)
        self.jmean = self.spec.jump.moments["mean"]

    def gain(self, c, alpha):
        k = self.k
        return sroot(alpha * c["b2"] / (2 * k * c["r"]), 2 * k - 1)

    def terminal(self):
        qT = self.table.node(self.grid.N)["qT"]
        return np.stack([qT, np.zeros_like(qT)])

    def rhs(self, t, y):
        c = self.table.at(t)
        a, d = y
        k = self.k
        u = self.gain(c, a)
        da = -c["q"] - a * c["b1"] - self.coupling(a, t)
        dd = (-a * c["sigma"] ** 2 / 2 + a * self.J + (2 * k - 1) * c["r"] * u ** (2 * k)
              + a * sum_others(c["b2"] * u, self.counts) - self.coupling(d, t))
        return np.stack([da, dd])

    def value(self, sol, player=None):
        s0 = self.spec.s0_index
        v = -sol.initial("alpha")[:, s0] * np.log(self.spec.x0) + sol.initial("delta")[:, s0]
        return v if player is None else v[player]

    def initial_state(self, R, M, rngs=None):
        return {"z": np.full((R, M), np.log(self.spec.x0))}

    def observe(self, state):
        return np.exp(state["z"]), None

    def state_from(self, x, xbar):
        return {"z": np.log(x)}

    def controls(self, c, a, s, state):
        u = pick(self.gain(c, a[0]), s)
        shape = (self.P,) + state["z"].shape
        return np.broadcast_to(u, shape).copy(), np.zeros(shape[:2] + (1,))

    def running_cost(self, c, a, s, state, dev, mean):
        u = dev + mean
        return -pick(c["q"], s) * state["z"] + pick(c["r"], s) * u ** (2 * self.k)

    def terminal_cost(self, c, s, state):
        return -pick(c["qT"], s) * state["z"]

    def _push(self, c, s, u):
        return (self.counts[:, None, None] * pick(c["b2"], s) * u).sum(axis=0)

    def advance(self, c, a, s, state, dev, mean, noise, dt, mode, nxt):
        z = state["z"]
        dev1, mean1 = nxt.controls(state)
        # controls do not depend on the state: trapezoid in time for the push
        push = 0.5 * (self._push(c, s, dev + mean) + self._push(nxt.c, s, dev1 + mean1))
        sig = _cell_mean(c, nxt.c, "sigma", s)
        b1 = _cell_mean(c, nxt.c, "b1", s)
        const = push - 0.5 * sig**2 - self.jmean
        z = _affine_step(z, b1, const, dt)
        if "B" in noise:
            z = z + sig * noise["B"]
        if "J" in noise:
            z = z + noise["J"]
        return {"z": z}

    def guess(self, sol, n, s, state):
        """Guess functional -alpha ln x + delta at node n, shape (P, R, M)."""
        a = sol.node(n)
        return -pick(a[0], s) * state["z"][None] + pick(a[1], s)

    def describe_feedback(self, sol):
        u = self.gain_traj(sol)
        return [("u", u)]

    def gain_traj(self, sol):
        b2, r = self.pcoef("b2"), self.pcoef("r")
        return sroot(sol.kind("alpha") * b2 / (2 * self.k * r), 2 * self.k - 1)


class LogSquare(GameDefinition):
    """Log-square game: cost q ln^2 x + r u^2, deterministic state between switches."""

    variant = "log_square"
    kinds = ("alpha",)
    nonneg = ("alpha",)
    player_coefs = ("q", "qT", "r", "b2")
    game_coefs = ("b1",)
    optional_game_coefs = {"b1": 0.0}

    def validate(self):
        sp = self.spec
        self.require(sp.x0 >= np.e * 10, f"needs x0 >> e (x0 >= 10 e), got x0={sp.x0}")
        self.require(self.pcoef("r") > DELTA, "needs r_i > delta > 0")
        self.require(self.pcoef("q") >= 0, "needs q_i >= 0")
        self.require(self.pcoef("qT") >= 0, "needs q_i(T) >= 0")

    def terminal(self):
        return self.table.node(self.grid.N)["qT"][None]

    def rhs(self, t, y):
        c = self.table.at(t)
        a = y[0]
        w = a * c["b2"] ** 2 / c["r"]
        da = -c["q"] - 2 * c["b1"] * a + 2 * a * sum_others(w, self.counts) + a * w - self.coupling(a, t)
        return da[None]

    def value(self, sol, player=None):
        v = sol.initial("alpha")[:, self.spec.s0_index] * np.log(self.spec.x0) ** 2
        return v if player is None else v[player]

    def initial_state(self, R, M, rngs=None):
        return {"z": np.full((R, M), np.log(self.spec.x0))}

    def observe(self, state):
        return np.exp(state["z"]), None

    def state_from(self, x, xbar):
        return {"z": np.log(x)}

    def controls(self, c, a, s, state):
        g = pick(-a[0] * c["b2"] / c["r"], s)
        dev = g * state["z"][None]
        return dev, np.zeros(dev.shape[:2] + (1,))

    def running_cost(self, c, a, s, state, dev, mean):
        u = dev + mean
        return pick(c["q"], s) * state["z"] ** 2 + pick(c["r"], s) * u**2

    def terminal_cost(self, c, s, state):
        return pick(c["qT"], s) * state["z"] ** 2

    def _drift(self, c, s, z, u):
        return np.asarray(c["b1"])[s][:, None] * z + (self.counts[:, None, None] * pick(c["b2"], s) * u).sum(0)

    def advance(self, c, a, s, state, dev, mean, noise, dt, mode, nxt):
        z = state["z"]
        dev1, mean1 = nxt.controls(state)
        # the drift is linear in z with gains frozen at both cell ends: average the rates
        drift = 0.5 * (self._drift(c, s, z, dev + mean) + self._drift(nxt.c, s, z, dev1 + mean1))
        return {"z": _expo_step(z, drift, dt)}

    def describe_feedback(self, sol):
        return [("u_per_lnx", -sol.kind("alpha") * self.pcoef("b2") / self.pcoef("r"))]


class LegendreFenchel(GameDefinition):
    """Legendre-Fenchel game with the power losses l2(u) = u^(2k)/(2k), l1 = kappa l2.

    With h(x) = x^(2k-1)/(2k) the equilibrium control is u_i = g_i x where
    g_i = sroot(-alpha_i b_i / (2k r_ii), 2k-1), and the matching constants are
    eta_ii = (2k-1) r_ii g_i^(2k) / kappa, eta_ij = r_ij g_j^(2k) / kappa,
    gamma_j = g_j / kappa.
    """

    variant = "legendre_fenchel"
    kinds = ("alpha", "delta")
    nonneg = ("alpha",)
    player_coefs = ("q", "qT", "b2", "r_row")
    game_coefs = ("b1", "sigma1", "sigma2")
    optional_game_coefs = {"b1": 0.0, "sigma1": 0.0, "sigma2": 0.0}

    def validate(self):
        sp = self.spec
        loss = sp.extra.get("loss", "power")
        if loss != "power":
            raise UnsupportedLoss(f"only the power loss instance is supported, got '{loss}'")
        self.k = int(sp.extra.get("k", 1))
        self.kappa = float(sp.extra.get("kappa", 1.0))
        if np.any(self.counts != 1):
            raise DomainError("legendre_fenchel needs individual players (count 1) for the r_ij matrix")
        I = self.P
        R = np.array([np.asarray(p.coef["r_row"], float).reshape(-1) for p in sp.players])
        if R.shape != (I, I):
            raise DomainError(f"r_row entries must form an {I}x{I} matrix")
        self.rmat = R
        self.require(R > 0, "needs r_ij > 0")
        self.require(self.kappa > 0, "needs kappa > 0 so that l1 is positive")
        self.require(self.pcoef("q") > 0, "needs q_i > 0")
        self.require(self.pcoef("qT") >= 0, "needs q_i(T) >= 0")

    def setup(self):
        self.noises = frozenset({"B"}) if (np.any(self.gcoef("sigma1") != 0) or np.any(self.gcoef("sigma2") != 0)) else frozenset()

    def l1(self, x):
        return self.kappa * x ** (2 * self.k) / (2 * self.k)

    def l2(self, u):
        return u ** (2 * self.k) / (2 * self.k)

    def gains(self, c, alpha):
        rii = np.diag(self.rmat)[:, None]
        return sroot(-alpha * c["b2"] / (2 * self.k * rii), 2 * self.k - 1)

    def terminal(self):
        qT = self.table.node(self.grid.N)["qT"]
        return np.stack([qT, np.zeros_like(qT)])

    def rhs(self, t, y):
        c = self.table.at(t)
        a, d = y
        k, kap = self.k, self.kappa
        g = self.gains(c, a)  # (P, S)
        g2k = g ** (2 * k)
        rii = np.diag(self.rmat)[:, None]
        eta_ii = (2 * k - 1) * rii * g2k / kap
        off = self.rmat - np.diag(np.diag(self.rmat))
        eta_ij = off @ g2k / kap  # sum over j != i of r_ij g_j^(2k) / kappa
        push = (c["b2"] * g).sum(0, keepdims=True) - c["b2"] * g
        da = (-c["q"] - a * (c["b1"] + c["sigma2"] ** 2 / 2) - self.coupling(a, t)
              + eta_ii - eta_ij - a * push / kap)
        dd = -a * c["sigma1"] ** 2 / 2 - self.coupling(d, t)
        return np.stack([da, dd])

    def value(self, sol, player=None):
        s0 = self.spec.s0_index
        v = sol.initial("alpha")[:, s0] * self.l1(self.spec.x0) + sol.initial("delta")[:, s0]
        return v if player is None else v[player]

    def initial_state(self, R, M, rngs=None):
        return {"x": np.full((R, M), float(self.spec.x0))}

    def controls(self, c, a, s, state):
        dev = pick(self.gains(c, a[0]), s) * state["x"][None]
        return dev, np.zeros(dev.shape[:2] + (1,))

    def running_cost(self, c, a, s, state, dev, mean):
        u = dev + mean
        own = pick(c["q"], s) * self.l1(state["x"])[None]
        return own + np.einsum("ij,jrm->irm", self.rmat, self.l2(u))

    def terminal_cost(self, c, s, state):
        return pick(c["qT"], s) * self.l1(state["x"])[None]

    def advance(self, c, a, s, state, dev, mean, noise, dt, mode, nxt):
        x = state["x"]
        k, kap = self.k, self.kappa
        dev1, mean1 = nxt.controls(state)
        u = 0.5 * (dev + mean + dev1 + mean1)
        b1 = _cell_mean(c, nxt.c, "b1", s)
        drift = b1 * x / (2 * k) + (pick(c["b2"], s) * u).sum(0) / (2 * k * kap)
        x_new = x + drift * dt
        if "B" in noise:
            s1 = np.asarray(c["sigma1"])[s][:, None]
            s2 = np.asarray(c["sigma2"])[s][:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                var = (s1**2 + s2**2 * self.l1(x)) / (kap * (2 * k - 1) * x ** (2 * k - 2))
            if not np.all(np.isfinite(var)):
                raise HypothesisViolation("legendre_fenchel diffusion is singular at x = 0 for k > 1")
            x_new = x_new + np.sqrt(var) * noise["B"]
        return {"x": x_new}

    def describe_feedback(self, sol):
        rii = np.diag(self.rmat)[None, :, None]
        g = sroot(-sol.kind("alpha") * self.pcoef("b2") / (2 * self.k * rii), 2 * self.k - 1)
        return [("u_per_x", g)]


class GeometricGV(GameDefinition):
    """Geometric Gauss-Volterra game with deterministic coefficients.

    The alpha equation is the one obtained from the guess alpha x^k / k; for
    the jump part it uses the exact integrand (1+2mu)^k - 1 - 2k mu.
    """

    variant = "geometric_gv"
    kinds = ("alpha",)
    nonneg = ("alpha",)
    player_coefs = ("q", "qT", "r", "b2")
    game_coefs = ("b1", "sigma", "sigma_o", "sigma_gv", "sigma_ogv")
    optional_game_coefs = {"b1": 0.0, "sigma": 0.0, "sigma_o": 0.0, "sigma_gv": 0.0, "sigma_ogv": 0.0}
    jump_transform = staticmethod(lambda m: np.log1p(2 * m))
    jump_common_transform = staticmethod(lambda m: np.log1p(2 * m))

    def validate(self):
        sp = self.spec
        self.k = int(sp.extra.get("k", 1))
        if self.k < 1 or self.k != sp.extra.get("k", 1):
            raise DomainError("exponent k must be an integer >= 1")
        self.require(self.pcoef("q") >= 0, "needs q_i >= 0")
        self.require(self.pcoef("qT") >= 0, "needs q_i(T) >= 0")
        self.require(self.pcoef("r") > DELTA, "needs r_i > delta > 0")
        self.require(sp.x0 > 0, "needs x0 > 0")
        for jmp in (sp.jump, sp.jump_common):
            if jmp.enabled:
                self.require(jmp._mu_min() > -0.5, "needs 1 + 2 mu > 0 on the jump support")
        gv_on = np.any(self.gcoef("sigma_gv") != 0) or np.any(self.gcoef("sigma_ogv") != 0)
        if gv_on and sp.kernel is None:
            raise HypothesisViolation("geometric_gv: Gauss-Volterra volatility set but no kernel given")

    def setup(self):
        sp = self.spec
        self.jsq = jump_moment_square(sp.jump) + jump_moment_square(sp.jump_common)
        self.jpoly = sp.jump.poly_moment(self.k, 2.0) + sp.jump_common.poly_moment(self.k, 2.0)
        self.jmean = sp.jump.moments["mean"] + sp.jump_common.moments["mean"]
        self.gv = _EffectiveVariance(sp, ("sigma_gv", "sigma_ogv"))
        on = {"B": self.gcoef("sigma"), "Bo": self.gcoef("sigma_o"),
              "Bgv": self.gcoef("sigma_gv"), "Bogv": self.gcoef("sigma_ogv")}
        nz = {n for n, v in on.items() if np.any(v != 0)}
        if sp.jump.enabled:
            nz.add("J")
        if sp.jump_common.enabled:
            nz.add("Jo")
        self.noises = frozenset(nz)

    def gain(self, c, alpha):
        return sroot(-alpha * c["b2"] / c["r"], 2 * self.k - 1)

    def terminal(self):
        return self.table.node(self.grid.N)["qT"][None]

    def rhs(self, t, y):
        c = self.table.at(t)
        a = y[0]
        k = self.k
        sd = c["sigma"] ** 2 + c["sigma_o"] ** 2 + self.gv(t)
        big = sd + self.jsq
        g = self.gain(c, a)
        da = (-c["q"] - k * a * big - 2 * k * c["b1"] * a - 2 * k * (k - 1) * a * sd - a * self.jpoly
              + (2 * k - 1) * c["r"] * g ** (2 * k) - 2 * k * a * sum_others(c["b2"] * g, self.counts)
              - self.coupling(a, t))
        return da[None]

    def value(self, sol, player=None):
        k = self.k
        v = sol.initial("alpha")[:, self.spec.s0_index] * self.spec.x0**k / k
        return v if player is None else v[player]

    def initial_state(self, R, M, rngs=None):
        return {"z": np.full((R, M), np.log(self.spec.x0))}

    def observe(self, state):
        return np.exp(state["z"]), None

    def state_from(self, x, xbar):
        return {"z": np.log(x)}

    def controls(self, c, a, s, state):
        dev = pick(self.gain(c, a[0]), s) * np.exp(0.5 * state["z"])[None]
        return dev, np.zeros(dev.shape[:2] + (1,))

    def running_cost(self, c, a, s, state, dev, mean):
        k = self.k
        u = dev + mean
        xk = np.exp(k * state["z"])[None]
        return pick(c["q"], s) * xk / k + pick(c["r"], s) * u ** (2 * k) / k

    def terminal_cost(self, c, s, state):
        return pick(c["qT"], s) * np.exp(self.k * state["z"])[None] / self.k

    def advance(self, c, a, s, state, dev, mean, noise, dt, mode, nxt):
        z = state["z"]
        dev1, mean1 = nxt.controls(state)
        g = lambda name: _cell_mean(c, nxt.c, name, s)  # noqa: E731
        v = noise.get("vgv", 0.0)
        var_d = (g("sigma") ** 2 + g("sigma_o") ** 2) * dt + (g("sigma_gv") ** 2 + g("sigma_ogv") ** 2) * v
        # controls are gain * sqrt(x): average the gains over the cell
        ub = (self.counts[:, None, None] * (pick(c["b2"], s) * (dev + mean) + pick(nxt.c["b2"], s) * (dev1 + mean1))).sum(0)
        push = ub * np.exp(-0.5 * z)
        z = z + (2 * g("b1") + push + self.jsq - 2 * self.jmean) * dt - var_d
        for key, name in (("B", "sigma"), ("Bo", "sigma_o"), ("Bgv", "sigma_gv"), ("Bogv", "sigma_ogv")):
            if key in noise:
                z = z + 2 * g(name) * noise[key]
        for key in ("J", "Jo"):
            if key in noise:
                z = z + noise[key]
        return {"z": z}

    def describe_feedback(self, sol):
        g = sroot(-sol.kind("alpha") * self.pcoef("b2") / self.pcoef("r"), 2 * self.k - 1)
        return [("u_per_sqrtx", g)]


class _EffectiveVariance:
    """sigma^2_cogv(t, s) summed over the listed Gauss-Volterra volatilities.

    Regime-constant volatilities with the fBm kernel use sigma^2 2H t^(2H-1)
    (t clamped away from 0 for H < 1/2); anything else is tabulated on the
    grid with the quadrature path and interpolated.
    """

    def __init__(self, spec, names):
        self.kernel = spec.kernel
        self.grid = spec.grid
        self.sig2 = None
        self.table = None
        fields = [spec.coef[n] for n in names if n in spec.coef]
        if not fields or all(np.all(f.values == 0) for f in fields):
            self.zero = np.zeros(spec.S)
            return
        self.zero = None
        if self.kernel.H is not None and all(f.is_constant for f in fields):
            self.sig2 = sum(f.values[0] ** 2 for f in fields)
            self.H = self.kernel.H
            self.tmin = 1e-3 * self.grid.dt
        else:
            from ..noise import effective_gv_variance
            tab = np.zeros((self.grid.N + 1, spec.S))
            tt = self.grid.t.copy()
            tt[0] = 0.5 * self.grid.dt if (self.kernel.H or 1.0) < 0.5 else 0.0
            for f in fields:
                for s in range(spec.S):
                    tab[:, s] += [effective_gv_variance(self.kernel, f, t, s, method="quadrature") for t in tt]
            self.table = tab

    def __call__(self, t):
        if self.zero is not None:
            return self.zero
        if self.sig2 is not None:
            tt = max(t, self.tmin)
            return self.sig2 * 2 * self.H * tt ** (2 * self.H - 1)
        pos = min(max(t / self.grid.dt, 0.0), self.grid.N)
        n = min(int(pos), self.grid.N - 1)
        w = pos - n
        return (1 - w) * self.table[n] + w * self.table[n + 1]
