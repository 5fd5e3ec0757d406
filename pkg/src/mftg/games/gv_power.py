"""Power-cost mean-field games under Gauss-Volterra noise: Nash, cooperative and adversarial."""
from __future__ import annotations

import numpy as np

from ..core import sroot
from ..errors import AggregateSignViolation, DomainError
from .base import DELTA, GameDefinition, pick, sum_others
from .meanfield import antithetic_start
from .mf_free import _EffectiveVariance


class _GVPowerBase(GameDefinition):
    """State split into y = x - xbar (per particle) and xbar (per common path).

    dy = (b1 + sum_j b_j g_j) y dt + y (sigma dB + sigma_gv dB_gv + int mu dN~)
    and dxbar = (b1bar + sum_j b2bar_j gbar_j) xbar dt, both stepped exactly
    with the gains frozen on each cell.
    """

    kinds = ("alpha", "alphabar")
    nonneg = ("alpha", "alphabar")
    game_coefs = ("b1", "b1bar", "sigma", "sigma_gv")
    optional_game_coefs = {"b1": 0.0, "b1bar": 0.0, "sigma": 0.0, "sigma_gv": 0.0}
    meanfield = True
    jump_transform = staticmethod(np.log1p)

    def _common_validate(self):
        sp = self.spec
        if sp.jump.enabled:
            self.require(sp.jump._mu_min() > -1.0, "needs 1 + mu > 0 on the jump support")
        if np.any(self.gcoef("sigma_gv") != 0) and sp.kernel is None:
            raise DomainError(f"{self.variant}: sigma_gv set but no Gauss-Volterra kernel given")
        self.kv = np.array([p.k for p in sp.players], float)[:, None]
        self.kbv = np.array([p.kbar for p in sp.players], float)[:, None]

    def setup(self):
        sp = self.spec
        self.gv = _EffectiveVariance(sp, ("sigma_gv",))
        self.jmean = sp.jump.moments["mean"]
        nz = set()
        if np.any(self.gcoef("sigma") != 0):
            nz.add("B")
        if np.any(self.gcoef("sigma_gv") != 0):
            nz.add("Bgv")
        if sp.jump.enabled:
            nz.add("J")
        self.noises = frozenset(nz)

    # -- exponents used by costs and values
    def _kdev(self):
        return self.kv

    def _kmean(self):
        return self.kbv

    @property
    def xbar0(self):
        sp = self.spec
        return float(sp.xbar0 if sp.xbar0 is not None else sp.x0)

    def _y0_values(self):
        sp = self.spec
        base = sp.x0 - self.xbar0
        if sp.x0_spread:
            return np.array([base + sp.x0_spread, base - sp.x0_spread])
        return np.array([base])

    def initial_state(self, R, M, rngs=None):
        sp = self.spec
        x = antithetic_start(sp.x0, sp.x0_spread, R, M)
        xbar = np.full((R, 1), self.xbar0)
        return {"y": x - xbar, "xbar": xbar}

    def observe(self, state):
        return state["y"] + state["xbar"], state["xbar"]

    def state_from(self, x, xbar):
        if xbar is None:
            xbar = np.full((x.shape[0], 1), self.xbar0)
        return {"y": x - xbar, "xbar": xbar}

    def controls(self, c, a, s, state):
        g, gb = self.gains(c, a)
        return pick(g, s) * state["y"][None], pick(gb, s) * state["xbar"][None]

    def _rates(self, c, s, state, dev, mean):
        """Growth rates of y and xbar implied by controls linear in y and xbar."""
        y, xbar = state["y"], state["xbar"]
        cnt = self.counts[:, None, None]
        push = (cnt * pick(c["b2"], s) * dev).sum(0)
        mpush = (cnt * pick(c["b2bar"], s) * mean).sum(0)
        rate = np.asarray(c["b1"])[s][:, None] + np.divide(push, y, out=np.zeros_like(y), where=y != 0)
        mrate = np.asarray(c["b1bar"])[s][:, None] + np.divide(mpush, xbar, out=np.zeros_like(xbar), where=xbar != 0)
        return rate, mrate

    def advance(self, c, a, s, state, dev, mean, noise, dt, mode, nxt):
        y, xbar = state["y"], state["xbar"]
        r0, m0 = self._rates(c, s, state, dev, mean)
        r1, m1 = self._rates(nxt.c, s, state, *nxt.controls(state))
        rate, mrate = 0.5 * (r0 + r1), 0.5 * (m0 + m1)
        v = noise.get("vgv", 0.0)
        sg = 0.5 * (np.asarray(c["sigma"])[s] + np.asarray(nxt.c["sigma"])[s])[:, None]
        sgv = 0.5 * (np.asarray(c["sigma_gv"])[s] + np.asarray(nxt.c["sigma_gv"])[s])[:, None]
        logm = (rate - 0.5 * sg**2 - self.jmean) * dt - 0.5 * sgv**2 * v
        if "B" in noise:
            logm = logm + sg * noise["B"]
        if "Bgv" in noise:
            logm = logm + sgv * noise["Bgv"]
        if "J" in noise:
            logm = logm + noise["J"]
        y_new = y * np.exp(logm)
        xbar_ode = xbar * np.exp(mrate * dt)
        if mode == "particle":
            x_new = xbar_ode + y_new
            xbar_new = x_new.mean(axis=1, keepdims=True)
            return {"y": x_new - xbar_new, "xbar": xbar_new}
        return {"y": y_new, "xbar": xbar_ode}

    def describe_feedback(self, sol):
        g, gb = self.gain_traj(sol)
        return [("dev_gain", g), ("mean_gain", gb)]


class GVPowerNash(_GVPowerBase):
    """Noncooperative power game; each block has its own exponents k, kbar."""

    variant = "gv_power_nash"
    player_coefs = ("q", "qT", "qbar", "qbarT", "r", "rbar", "b2", "b2bar")

    def validate(self):
        self._common_validate()
        self.require(self.pcoef("q") > 0, "needs q_i > 0")
        self.require(self.pcoef("qbar") > 0, "needs qbar_i > 0")
        self.require(self.pcoef("r") > DELTA, "needs r_i > delta")
        self.require(self.pcoef("rbar") > DELTA, "needs rbar_i > delta")
        self.require(self.pcoef("qT") >= 0, "needs q_i(T) >= 0")
        self.require(self.pcoef("qbarT") >= 0, "needs qbar_i(T) >= 0")

    def setup(self):
        super().setup()
        self.jk = np.array([self.spec.jump.power_moment(p.k) for p in self.spec.players])[:, None]

    def gains(self, c, a):
        g = sroot(-c["b2"] * a[0] / c["r"], 2 * self.kv - 1)
        gb = sroot(-c["b2bar"] * a[1] / c["rbar"], 2 * self.kbv - 1)
        return g, gb

    def gain_traj(self, sol):
        kv, kbv = self.kv[None], self.kbv[None]
        g = sroot(-self.pcoef("b2") * sol.kind("alpha") / self.pcoef("r"), 2 * kv - 1)
        gb = sroot(-self.pcoef("b2bar") * sol.kind("alphabar") / self.pcoef("rbar"), 2 * kbv - 1)
        return g, gb

    def terminal(self):
        c = self.table.node(self.grid.N)
        return np.stack([c["qT"], c["qbarT"]])

    def rhs(self, t, y):
        c = self.table.at(t)
        a, ab = y
        k, kb = self.kv, self.kbv
        g, gb = self.gains(c, y)
        da = (-c["q"] - 2 * k * a * c["b1"] - a * k * (2 * k - 1) * (c["sigma"] ** 2 + self.gv(t))
              - a * self.jk - self.coupling(a, t) + (2 * k - 1) * c["r"] * g ** (2 * k)
              - 2 * k * a * sum_others(c["b2"] * g, self.counts))
        dab = (-c["qbar"] - 2 * kb * ab * c["b1bar"] - self.coupling(ab, t)
               + (2 * kb - 1) * c["rbar"] * gb ** (2 * kb)
               - 2 * kb * ab * sum_others(c["b2bar"] * gb, self.counts))
        return np.stack([da, dab])

    def value(self, sol, player=None):
        s0 = self.spec.s0_index
        k, kb = self.kv[:, 0], self.kbv[:, 0]
        ydev = np.mean([y0 ** (2 * k) / (2 * k) for y0 in self._y0_values()], axis=0)
        v = sol.initial("alpha")[:, s0] * ydev + sol.initial("alphabar")[:, s0] * self.xbar0 ** (2 * kb) / (2 * kb)
        return v if player is None else v[player]

    def running_cost(self, c, a, s, state, dev, mean):
        k, kb = self.kv[:, :, None], self.kbv[:, :, None]
        y, xb = state["y"][None], state["xbar"][None]
        return (pick(c["q"], s) * y ** (2 * k) / (2 * k) + pick(c["r"], s) * dev ** (2 * k) / (2 * k)
                + pick(c["qbar"], s) * xb ** (2 * kb) / (2 * kb) + pick(c["rbar"], s) * mean ** (2 * kb) / (2 * kb))

    def terminal_cost(self, c, s, state):
        k, kb = self.kv[:, :, None], self.kbv[:, :, None]
        y, xb = state["y"][None], state["xbar"][None]
        return pick(c["qT"], s) * y ** (2 * k) / (2 * k) + pick(c["qbarT"], s) * xb ** (2 * kb) / (2 * kb)


class _Aggregate(_GVPowerBase):
    """Single coefficient owner with shared exponents k, kbar."""

    aggregate = True

    def _shared_exponents(self):
        ks = {p.k for p in self.spec.players}
        kbs = {p.kbar for p in self.spec.players}
        if len(ks) != 1 or len(kbs) != 1:
            raise DomainError(f"{self.variant}: all players must share k and kbar")
        self.k, self.kb = float(ks.pop()), float(kbs.pop())

    def setup(self):
        super().setup()
        self.jk = self.spec.jump.power_moment(int(self.k))

    def gains(self, c, a):
        g = sroot(-c["b2"] * a[0] / c["r"], 2 * self.k - 1)
        gb = sroot(-c["b2bar"] * a[1] / c["rbar"], 2 * self.kb - 1)
        return g, gb

    def gain_traj(self, sol):
        g = sroot(-self.pcoef("b2") * sol.kind("alpha") / self.pcoef("r"), 2 * self.k - 1)
        gb = sroot(-self.pcoef("b2bar") * sol.kind("alphabar") / self.pcoef("rbar"), 2 * self.kb - 1)
        return g, gb

    def _aggregate_rhs(self, t, y, q, qbar, c):
        a, ab = y  # (1, S)
        k, kb = self.k, self.kb
        g, gb = self.gains(c, y)  # (P, S)
        cnt = self.counts[:, None]
        da = (-q - 2 * k * a * c["b1"] - a * k * (2 * k - 1) * (c["sigma"] ** 2 + self.gv(t)) - a * self.jk
              - self.coupling(a, t) + (2 * k - 1) * (cnt * c["r"] * g ** (2 * k)).sum(0, keepdims=True))
        dab = (-qbar - 2 * kb * ab * c["b1bar"] - self.coupling(ab, t)
               + (2 * kb - 1) * (cnt * c["rbar"] * gb ** (2 * kb)).sum(0, keepdims=True))
        return np.stack([da, dab])

    def value(self, sol, player=None):
        s0 = self.spec.s0_index
        k, kb = self.k, self.kb
        ydev = np.mean([y0 ** (2 * k) / (2 * k) for y0 in self._y0_values()])
        v = sol.initial("alpha")[:, s0] * ydev + sol.initial("alphabar")[:, s0] * self.xbar0 ** (2 * kb) / (2 * kb)
        return v if player is None else v[player]

    @property
    def cost_weights(self):
        return self.counts


class GVPowerCooperative(_Aggregate):
    """Fully cooperative version: one planner minimises the sum of all costs."""

    variant = "gv_power_cooperative"
    player_coefs = ("q", "qT", "qbar", "qbarT", "r", "rbar", "b2", "b2bar")

    def validate(self):
        self._common_validate()
        self._shared_exponents()
        self.require(self.pcoef("r") > DELTA, "needs r_i > delta")
        self.require(self.pcoef("rbar") > DELTA, "needs rbar_i > delta")
        cnt = self.counts[None, :, None]
        self.require((cnt * self.pcoef("q")).sum(1) > 0, "needs sum_i q_i > 0")
        self.require((cnt * self.pcoef("qbar")).sum(1) > 0, "needs sum_i qbar_i > 0")

    def _sum(self, c, name):
        return (self.counts[:, None] * c[name]).sum(0, keepdims=True)

    def terminal(self):
        c = self.table.node(self.grid.N)
        return np.stack([self._sum(c, "qT"), self._sum(c, "qbarT")])

    def rhs(self, t, y):
        c = self.table.at(t)
        return self._aggregate_rhs(t, y, self._sum(c, "q"), self._sum(c, "qbar"), c)

    def running_cost(self, c, a, s, state, dev, mean):
        k, kb = self.k, self.kb
        y, xb = state["y"][None], state["xbar"][None]
        return (pick(c["q"], s) * y ** (2 * k) / (2 * k) + pick(c["r"], s) * dev ** (2 * k) / (2 * k)
                + pick(c["qbar"], s) * xb ** (2 * kb) / (2 * kb) + pick(c["rbar"], s) * mean ** (2 * kb) / (2 * kb))

    def terminal_cost(self, c, s, state):
        k, kb = self.k, self.kb
        y, xb = state["y"][None], state["xbar"][None]
        return pick(c["qT"], s) * y ** (2 * k) / (2 * k) + pick(c["qbarT"], s) * xb ** (2 * kb) / (2 * kb)


class GVPowerAdversarial(_Aggregate):
    """Two-team zero-sum version: defenders (r > 0) minimise, attackers (r < 0) maximise.

    The state weights q, qT, qbar, qbarT are game-level; r, rbar carry the team sign.
    Deviations use exponent 2k and the mean parts exponent 2 kbar throughout.
    """

    variant = "gv_power_adversarial"
    player_coefs = ("r", "rbar", "b2", "b2bar")
    game_coefs = _GVPowerBase.game_coefs + ("q", "qT", "qbar", "qbarT")
    optional_game_coefs = dict(_GVPowerBase.optional_game_coefs, qT=0.0, qbarT=0.0)

    def validate(self):
        self._common_validate()
        self._shared_exponents()
        r, rb = self.pcoef("r"), self.pcoef("rbar")
        ok = ((r > DELTA) & (rb > DELTA)) | ((r < -DELTA) & (rb < -DELTA))
        self.require(ok, "each player needs r, rbar > delta (defender) or r, rbar < -delta (attacker)")
        self.require(self.gcoef("q") > 0, "needs q > 0")
        self.require(self.gcoef("qbar") > 0, "needs qbar > 0")
        self.require(self.gcoef("qT") >= 0, "needs q(T) >= 0")
        self.require(self.gcoef("qbarT") >= 0, "needs qbar(T) >= 0")
        cnt = self.counts[None, :, None]
        agg = (cnt * r * sroot(-self.pcoef("b2") / r, 2 * self.k - 1) ** (2 * self.k)).sum(1)
        aggb = (cnt * rb * sroot(-self.pcoef("b2bar") / rb, 2 * self.kb - 1) ** (2 * self.kb)).sum(1)
        if np.any(agg <= 0) or np.any(aggb <= 0):
            raise AggregateSignViolation(
                f"team aggregate must be positive, got {float(agg.min()):.6g} (dev) and {float(aggb.min()):.6g} (mean)")
        self.aggregate_values = (float(agg.min()), float(aggb.min()))

    @property
    def teams(self):
        r = self.pcoef("r")[0, :, 0]
        return np.where(r > 0, "defender", "attacker")

    def terminal(self):
        c = self.table.node(self.grid.N)
        return np.stack([c["qT"][None], c["qbarT"][None]])

    def rhs(self, t, y):
        c = self.table.at(t)
        return self._aggregate_rhs(t, y, c["q"][None], c["qbar"][None], c)

    def running_cost(self, c, a, s, state, dev, mean):
        k, kb = self.k, self.kb
        y, xb = state["y"], state["xbar"]
        cnt = self.counts[:, None, None]
        ctrl = (cnt * (pick(c["r"], s) * dev ** (2 * k) / (2 * k) + pick(c["rbar"], s) * mean ** (2 * kb) / (2 * kb))).sum(0)
        qs = lambda name: np.asarray(c[name])[s][:, None]  # noqa: E731
        out = qs("q") * y ** (2 * k) / (2 * k) + qs("qbar") * xb ** (2 * kb) / (2 * kb) + ctrl
        return out[None]

    def terminal_cost(self, c, s, state):
        k, kb = self.k, self.kb
        qs = lambda name: np.asarray(c[name])[s][:, None]  # noqa: E731
        return (qs("qT") * state["y"] ** (2 * k) / (2 * k) + qs("qbarT") * state["xbar"] ** (2 * kb) / (2 * kb))[None]

    @property
    def cost_weights(self):
        return np.ones(1)
