import numpy as np
import pytest
from hypothesis import given, strategies as st

from mftg.core import JumpSpec
from mftg.errors import (AggregateSignViolation, DomainError, HypothesisViolation, OmegaNonpositive,
                         UnsupportedLoss)
from mftg.games import VARIANTS, build, make_spec
from mftg.noise import VolterraKernel
from mftg.solver import integrate_backward

REL = 1e-6
pos = st.floats(0.1, 3.0)


def fd(f, x, h):
    """Central first and second differences of f at x."""
    fp, f0, fm = f(x + h), f(x), f(x - h)
    return (fp - fm) / (2 * h), (fp - 2 * f0 + fm) / h**2


def check_identity(terms):
    """The terms of dt f + L f + running cost must cancel up to REL of their scale."""
    terms = np.asarray(terms, float)
    scale = np.abs(terms).sum()
    assert abs(terms.sum()) <= REL * scale, (terms, terms.sum())


# -- log state: f = -alpha ln x + delta

def log_state_game(k):
    players = [dict(name="a", q=1.0, qT=0.5, r=1.0, b2=0.7), dict(name="b", count=2, q=0.4, qT=1.0, r=2.0, b2=0.3)]
    return build(make_spec("log_state", N=10, players=players, coef=dict(b1=0.2, sigma=0.4), x0=30.0,
                           jump=JumpSpec(c=1.0, decay=5.0), extra=dict(k=k)))


@given(st.sampled_from([1, 2]), pos, pos, st.floats(-2, 2), st.floats(-2, 2), st.floats(1.0, 6.0), st.floats(0, 1))
def test_log_state_generator_identity(k, a0, a1, d0, d1, z, t):
    g = log_state_game(k)
    y = np.array([[[a0], [a1]], [[d0], [d1]]])
    dy = g.rhs(t, y)
    c = g.table.at(t)
    u = g.gain(c, y[0])[:, 0]
    push = (g.counts * c["b2"][:, 0] * u).sum()
    b1, sig = float(c["b1"][0]), float(c["sigma"][0])
    jump = g.spec.jump
    for i in range(2):
        f = lambda zz: -y[0, i, 0] * zz + y[1, i, 0]  # noqa: E731
        fz, fzz = fd(f, z, 1e-4 * z)
        jint = jump.integrate(lambda mu: f(z + np.log1p(mu)) - f(z))
        drift = b1 * z + push - sig**2 / 2 - jump.moments["mean"]
        ft = -dy[0, i, 0] * z + dy[1, i, 0]
        run = -c["q"][i, 0] * z + c["r"][i, 0] * u[i] ** (2 * k)
        check_identity([ft, fz * drift, 0.5 * sig**2 * fzz, jint, run])


@given(st.sampled_from([1, 2]), pos, st.floats(-1, 1))
def test_log_state_gain_minimises_hamiltonian(k, a, eps):
    g = log_state_game(k)
    c = g.table.at(0.0)
    u = g.gain(c, np.array([[a], [a]]))[0, 0]
    ham = lambda v: -a * c["b2"][0, 0] * v + c["r"][0, 0] * v ** (2 * k)  # noqa: E731
    assert ham(u) <= ham(u + eps) + 1e-12


# -- log square: f = alpha (ln x)^2

@given(pos, pos, st.floats(3.5, 6.0), st.floats(0, 1))
def test_log_square_generator_identity(a0, a1, z, t):
    players = [dict(name="a", q=1.0, qT=0.5, r=1.0, b2=0.7), dict(name="b", count=3, q=0.4, qT=1.0, r=2.0, b2=0.3)]
    g = build(make_spec("log_square", N=10, players=players, coef=dict(b1=-0.3), x0=50.0))
    y = np.array([[[a0], [a1]]])
    dy = g.rhs(t, y)
    c = g.table.at(t)
    gain = -y[0, :, 0] * c["b2"][:, 0] / c["r"][:, 0]
    drift = float(c["b1"][0]) * z + (g.counts * c["b2"][:, 0] * gain * z).sum()
    for i in range(2):
        f = lambda zz: y[0, i, 0] * zz**2  # noqa: E731
        fz, _ = fd(f, z, 1e-4 * z)
        run = c["q"][i, 0] * z**2 + c["r"][i, 0] * (gain[i] * z) ** 2
        check_identity([dy[0, i, 0] * z**2, fz * drift, run])


# -- Gauss-Volterra power game: f = alpha y^(2k) / (2k) + alphabar xbar^(2kbar) / (2kbar)

def nash_game(N=10):
    players = [dict(name="a", k=2, kbar=2, q=1.0, qT=1.0, qbar=0.5, qbarT=1.0, r=1.0, rbar=1.5, b2=0.8, b2bar=1.0),
               dict(name="b", k=1, kbar=1, count=2, q=2.0, qT=0.5, qbar=1.0, qbarT=0.5, r=0.5, rbar=2.0, b2=0.5,
                    b2bar=0.7)]
    return build(make_spec("gv_power_nash", N=N, players=players,
                           coef=dict(b1=0.1, b1bar=-0.2, sigma=0.3, sigma_gv=0.4), x0=1.0,
                           jump=JumpSpec(c=2.0, decay=5.0), kernel=VolterraKernel.fbm(0.7)))


@given(pos, pos, pos, pos, st.floats(0.2, 2.0), st.floats(-1.0, 1.0), st.floats(0.05, 1))
def test_gv_power_nash_generator_identity(a0, a1, b0, b1, y0, xb, t):
    g = nash_game()
    Y = np.array([[[a0], [a1]], [[b0], [b1]]])
    dy = g.rhs(t, Y)
    c = g.table.at(t)
    gd, gm = (v[:, 0] for v in g.gains(c, Y))
    cnt = g.counts
    vol2 = float(c["sigma"][0]) ** 2 + float(g.gv(t)[0])
    ydrift = (float(c["b1"][0]) + (cnt * c["b2"][:, 0] * gd).sum()) * y0
    mdrift = (float(c["b1bar"][0]) + (cnt * c["b2bar"][:, 0] * gm).sum()) * xb
    jump = g.spec.jump
    for i in range(2):
        k, kb = g.kv[i, 0], g.kbv[i, 0]
        fy = lambda v: Y[0, i, 0] * v ** (2 * k) / (2 * k)  # noqa: E731
        fm = lambda v: Y[1, i, 0] * v ** (2 * kb) / (2 * kb)  # noqa: E731
        d1, d2 = fd(fy, y0, 1e-4 * y0)
        m1, _ = fd(fm, xb, 1e-4)
        jint = jump.integrate(lambda mu: fy(y0 * (1 + mu)) - fy(y0) - d1 * y0 * mu)
        ft = dy[0, i, 0] * y0 ** (2 * k) / (2 * k) + dy[1, i, 0] * xb ** (2 * kb) / (2 * kb)
        run = (c["q"][i, 0] * y0 ** (2 * k) / (2 * k) + c["r"][i, 0] * (gd[i] * y0) ** (2 * k) / (2 * k)
               + c["qbar"][i, 0] * xb ** (2 * kb) / (2 * kb) + c["rbar"][i, 0] * (gm[i] * xb) ** (2 * kb) / (2 * kb))
        check_identity([ft, d1 * ydrift, 0.5 * vol2 * y0**2 * d2, jint, m1 * mdrift, run])


def test_gv_power_feedback_is_linear():
    g = nash_game(N=100)
    sol = integrate_backward(g)
    x = np.array([[0.5, 1.5, 3.0]])
    u = g.feedback(sol, 0.3, [0], x, xbar=[[1.0]])
    at_mean = g.feedback(sol, 0.3, [0], np.ones((1, 3)), xbar=[[1.0]])
    dev = u - at_mean
    np.testing.assert_allclose(dev[:, 0, 2] / dev[:, 0, 0], (3.0 - 1.0) / (0.5 - 1.0))
    # the mean part alone is linear in xbar
    np.testing.assert_allclose(g.feedback(sol, 0.3, [0], 2 * np.ones((1, 1)), xbar=[[2.0]]), 2 * at_mean[:, :, :1])


# -- hypothesis violations

def one_player(**kw):
    return [dict(name="p", **kw)]


@pytest.mark.parametrize("variant, kw, err", [
    ("log_state", dict(players=one_player(q=1, qT=1, r=1, b2=1), x0=5.0), HypothesisViolation),
    ("log_state", dict(players=one_player(q=1, qT=1, r=0.0, b2=1), x0=50.0), HypothesisViolation),
    ("log_square", dict(players=one_player(q=-1, qT=1, r=1, b2=1), x0=50.0), HypothesisViolation),
    ("legendre_fenchel", dict(players=one_player(q=1, qT=1, b2=1, r_row=[1.0]), extra=dict(loss="exp")),
     UnsupportedLoss),
    ("geometric_gv", dict(players=one_player(q=1, qT=1, r=1, b2=1), coef=dict(sigma_gv=0.3)), HypothesisViolation),
    ("quadratic_quadratic", dict(players=one_player(qT=1, r=-1, rbar=1)), HypothesisViolation),
    ("cotangent", dict(players=one_player(q=1, qbar=1, b2=1, b2bar=1), x0=4.0), HypothesisViolation),
    ("hyperbolic_cotangent", dict(players=one_player(q=1, qbar=1, b2=1, b2bar=1), x0=0.0), HypothesisViolation),
    ("delayed_trend", dict(coef=dict(r1=1, rbar1=1, bbar2=1, sigmabar=1), extra=dict(rho=1.5)), HypothesisViolation),
    ("delayed_trend", dict(coef=dict(r1=1, rbar1=1, bbar2=1, sigmabar=1, b11=-3.0)), OmegaNonpositive),
    ("gv_power_nash", dict(players=one_player(q=0, qT=1, qbar=1, qbarT=1, r=1, rbar=1, b2=1, b2bar=1)),
     HypothesisViolation),
    ("gv_power_cooperative", dict(players=[dict(q=1, qT=1, qbar=1, qbarT=1, r=1, rbar=1, b2=1, b2bar=1, k=1),
                                           dict(q=1, qT=1, qbar=1, qbarT=1, r=1, rbar=1, b2=1, b2bar=1, k=2)]),
     DomainError),
    ("gv_power_adversarial", dict(players=[dict(r=1, rbar=1, b2=1, b2bar=1), dict(r=-0.5, rbar=-0.5, b2=1, b2bar=1)],
                                  coef=dict(q=1, qbar=1)), AggregateSignViolation),
])
def test_hypothesis_violations(variant, kw, err):
    with pytest.raises(err):
        build(make_spec(variant, N=10, **kw))


def test_unknown_variant_and_coefficient():
    with pytest.raises(DomainError):
        build(make_spec("nope", N=10))
    with pytest.raises(DomainError):
        build(make_spec("log_square", N=10, players=one_player(q=1, qT=1, r=1, b2=1, zeta=2), x0=50.0))


def test_missing_coefficient():
    with pytest.raises(HypothesisViolation, match="lacks coefficient 'r'"):
        build(make_spec("log_square", N=10, players=one_player(q=1, qT=1, b2=1), x0=50.0))


def test_registry_covers_all_variants():
    assert len(VARIANTS) == 12


def test_adversarial_teams_and_aggregate():
    g = build(make_spec("gv_power_adversarial", N=10, coef=dict(q=1, qbar=1),
                        players=[dict(r=1, rbar=1, b2=1, b2bar=1), dict(r=-2, rbar=-2, b2=1, b2bar=1)]))
    assert list(g.teams) == ["defender", "attacker"]
    # r g^2 summed with g = -b2 / r: 1 - 1/2
    assert g.aggregate_values[0] == pytest.approx(0.5)


def test_describe_feedback_shapes():
    g = nash_game(N=100)
    sol = integrate_backward(g)
    for name, arr in g.describe_feedback(sol):
        assert arr.shape == (g.grid.N + 1, g.P, g.S), name
