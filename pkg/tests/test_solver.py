import numpy as np
import pytest
from hypothesis import given, strategies as st

from mftg.core import TimeGrid
from mftg.errors import BlowUp, DenominatorSignFlip, DomainError, OmegaNonpositive, StepTooCoarse
from mftg.games import build, make_spec
from mftg.solver import DelayBetaParams, delay_beta_explicit, integrate_backward, qq_alpha_explicit
from toys import ToySystem

RATES = {("s_upper", "s_lower"): 0.7, ("s_lower", "s_upper"): 0.4}
STATES = ("s_lower", "s_upper")


def qq_game(qT, N=200, **kw):
    players = [dict(name=f"p{i}", qT=q, r=1.0, rbar=1.0, **kw) for i, q in enumerate(qT)]
    return build(make_spec("quadratic_quadratic", N=N, states=STATES, rates=RATES, players=players))


def test_qq_matches_matrix_exponential():
    g = qq_game([{"s_lower": 1.0, "s_upper": 0.0}, 0.5])
    sol = integrate_backward(g, check=False)
    exact = qq_alpha_explicit(g.gen, [1.0, 0.0], g.grid).values
    np.testing.assert_allclose(sol.kind("alpha")[:, 0, :], exact, atol=1e-10)
    np.testing.assert_allclose(sol.kind("alpha")[:, 1, :], 0.5, atol=1e-14)


def test_qq_equal_terminals_are_constant():
    g = qq_game([0.3, 0.3])
    sol = integrate_backward(g)
    np.testing.assert_allclose(sol.kind("alpha"), 0.3, atol=1e-14)


def test_qq_denominator_sign_flip():
    g = qq_game([-5.0], q=1.0)
    with pytest.raises(DenominatorSignFlip):
        integrate_backward(g)


@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_qq_alpha_stays_in_terminal_hull(a, b):
    g = qq_game([{"s_lower": a, "s_upper": b}], N=50)
    alpha = integrate_backward(g, check=False).kind("alpha")
    assert alpha.min() >= min(a, b) - 1e-12
    assert alpha.max() <= max(a, b) + 1e-12


def test_terminal_exact_and_deterministic():
    g = qq_game([{"s_lower": 1.0, "s_upper": 0.0}])
    s1, s2 = integrate_backward(g), integrate_backward(g)
    np.testing.assert_array_equal(s1.values, s2.values)
    np.testing.assert_array_equal(s1.values[-1], g.terminal())
    assert s1.diagnostics["terminal_residual"] == 0.0
    assert s1.diagnostics["halving_rel"] <= 1e-4
    assert s1.diagnostics["positivity"]["clean"]


def test_rk4_fourth_order():
    exact = lambda t: np.exp(np.sin(1.0) - np.sin(t))  # noqa: E731
    errs = []
    for N in (20, 40, 80):
        toy = ToySystem(lambda t, y: -np.cos(t) * y, 1.0, N=N)
        sol = integrate_backward(toy, check=False)
        errs.append(np.abs(sol.values[:, 0, 0, 0] - exact(toy.grid.t)).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 4.0) < 0.3)


def test_substeps_improve_accuracy():
    exact = np.exp(-2.0)
    toy = ToySystem(lambda t, y: 2.0 * y, 1.0, N=10)
    e1 = abs(integrate_backward(toy, substeps=1, check=False).values[0, 0, 0, 0] - exact)
    e4 = abs(integrate_backward(toy, substeps=4, check=False).values[0, 0, 0, 0] - exact)
    assert e4 < e1 / 100


def test_riccati_blow_up_time():
    # y' = -y^2, y(2) = 1 gives y(t) = 1 / (t - 1), escaping at t = 1
    toy = ToySystem(lambda t, y: -y**2, 1.0, T=2.0, N=2000)
    with pytest.raises(BlowUp) as exc:
        integrate_backward(toy, check=False)
    assert exc.value.t == pytest.approx(1.0, abs=2e-3)
    assert exc.value.exit_code == 4


def test_step_too_coarse():
    toy = ToySystem(lambda t, y: 2.0 * y, 1.0, T=10.0, N=10)
    with pytest.raises(StepTooCoarse):
        integrate_backward(toy)


def test_grid_mismatch():
    g = qq_game([1.0])
    with pytest.raises(DomainError):
        integrate_backward(g, grid=TimeGrid(1.0, 7))


def nash_players():
    return [dict(name="a", k=2, kbar=1, q=1.0, qT=1.0, qbar=1.0, qbarT=0.5, r=1.0, rbar=1.0, b2=1.0, b2bar=1.0),
            dict(name="b", k=1, kbar=1, count=3, q=2.0, qT=0.5, qbar=1.0, qbarT=0.5, r=0.5, rbar=2.0, b2=0.5,
                 b2bar=1.0)]


def test_permuting_players_permutes_coefficients():
    kw = dict(N=200, states=STATES, rates=RATES, coef=dict(b1=0.1, b1bar=0.2, sigma=0.3), x0=1.0)
    p = nash_players()
    s1 = integrate_backward(build(make_spec("gv_power_nash", players=p, **kw)))
    s2 = integrate_backward(build(make_spec("gv_power_nash", players=p[::-1], **kw)))
    np.testing.assert_allclose(s1.values, s2.values[:, :, ::-1, :], rtol=1e-13, atol=0)


def test_delay_beta_explicit_vs_ode():
    kw = dict(N=400, players=(), coef=dict(r1=1.0, rbar1=1.0, bbar2=1.0, sigmabar=1.0, qT=1.0), x0=1.0)
    ex = integrate_backward(build(make_spec("delayed_trend", extra=dict(rho=0.5), **kw)))
    ode = integrate_backward(build(make_spec("delayed_trend", extra=dict(rho=0.5, beta_mode="ode"), **kw)))
    assert ex.diagnostics["beta"] == "explicit"
    np.testing.assert_allclose(ex.kind("beta"), ode.kind("beta"), atol=1e-9)
    assert ex.kind("beta")[-1, 0, 0] == 1.0


def test_delay_beta_params():
    p = DelayBetaParams(rho=0.5, rbar1=1.0, bbar2=1.0, sigmabar=1.0)
    assert p.omega == pytest.approx(0.25)
    assert p.c == pytest.approx(0.5)
    q = DelayBetaParams(rho=0.5, rbar1=1.0, bbar2=1.0, sigmabar=1.0, convention="ito")
    assert q.omega == pytest.approx(0.5)
    assert q.c == pytest.approx(-0.5)


def test_delay_beta_blow_up():
    # c / omega = 32 makes the base of the power cross zero close to T
    p = DelayBetaParams(rho=0.5, rbar1=4.0, bbar2=1.0, sigmabar=1.0)
    with pytest.raises(BlowUp) as exc:
        delay_beta_explicit(p, TimeGrid(1.0, 1000))
    assert 1.0 - exc.value.t == pytest.approx(2 * np.log(32 / 31), abs=2e-3)


def test_delay_omega_nonpositive():
    p = DelayBetaParams(rho=0.5, rbar1=1.0, bbar2=1.0, sigmabar=1.0, b11=-2.0)
    with pytest.raises(OmegaNonpositive):
        delay_beta_explicit(p, TimeGrid(1.0, 10))
