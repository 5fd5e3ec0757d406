"""Acceptance suite: one test per criterion, each summarised on a PASS/FAIL line."""
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import solve_ivp

from mftg.cli import decay_profile
from mftg.config import load_config
from mftg.core import JumpSpec, TimeGrid
from mftg.games import build, make_spec
from mftg.noise import VolterraKernel, effective_gv_variance, eval_kernel_kh, kernel_kh, sample_gv_paths, stream
from mftg.sim import (cooperative_dominance, deviation_test, gain_grid_search, saddle_test, simulate,
                      value_consistency)
from mftg.solver import DelayBetaParams, delay_beta_explicit, integrate_backward, qq_alpha_explicit
from toys import ToySystem

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TABLE_RATES = {("s_upper", "s_lower"): 0.7, ("s_lower", "s_upper"): 0.4}


def criterion(n, title):
    return pytest.mark.criterion(n, title)


def solve_file(name, **over):
    cfg = load_config(CONFIGS / f"{name}.yaml")
    for k, v in over.items():
        setattr(cfg, k, v)
    game = cfg.build()
    return cfg, game, integrate_backward(game, substeps=cfg.substeps, check=cfg.check)


@pytest.fixture(scope="module")
def table_v():
    t0 = time.perf_counter()
    cfg, game, sol = solve_file("table_v")
    return cfg, game, sol, time.perf_counter() - t0


@criterion(1, "QQ explicit vs backward RK4 <= 1e-8, < 1 s")
def test_qq_explicit_vs_ode(record_property):
    t0 = time.perf_counter()
    game = build(make_spec("quadratic_quadratic", N=1000, states=("s_lower", "s_upper"), rates=TABLE_RATES,
                           players=[dict(qT={"s_lower": 1.0, "s_upper": 0.0}, r=1.0, rbar=1.0)]))
    sol = integrate_backward(game)
    exact = qq_alpha_explicit(game.gen, [1.0, 0.0], game.grid).values
    err = float(np.abs(sol.kind("alpha")[:, 0, :] - exact).max())
    dt = time.perf_counter() - t0
    record_property("detail", f"max err {err:.2e}, {dt:.2f} s")
    assert err <= 1e-8
    assert dt < 1.0


@criterion(2, "delay beta explicit vs RK4 <= 1e-6, beta(T) = 1, < 1 s")
def test_delay_beta(record_property):
    t0 = time.perf_counter()
    params = DelayBetaParams(rho=0.5, rbar1=1.0, bbar2=1.0, sigmabar=1.0)
    assert params.omega == pytest.approx(0.25) and params.c == pytest.approx(0.5)
    grid = TimeGrid(1.0, 1000)
    explicit = delay_beta_explicit(params, grid).values[:, 0]
    game = build(make_spec("delayed_trend", N=1000, coef=dict(r1=1.0, rbar1=1.0, bbar2=1.0, sigmabar=1.0),
                           extra=dict(rho=0.5, beta_mode="ode")))
    ode = integrate_backward(game).kind("beta")[:, 0, 0]
    err = float(np.abs(explicit - ode).max())
    dt = time.perf_counter() - t0
    record_property("detail", f"max err {err:.2e}, {dt:.2f} s")
    assert err <= 1e-6
    assert explicit[-1] == 1.0 and ode[-1] == 1.0
    assert dt < 1.0


@criterion(3, "H = 1/2 kernel is 1 and Gauss-Volterra marginals are Brownian (KS p > 0.01)")
def test_kernel_degeneration(record_property):
    rng = np.random.default_rng(3)
    t = rng.uniform(0.01, 1.0, 100)
    tp = t * rng.uniform(0.0, 0.999, 100)
    err = max(float(np.abs(kernel_kh(0.5, t, tp) - 1.0).max()),
              max(abs(eval_kernel_kh(0.5, a, b) - 1.0) for a, b in zip(t, tp)))
    grid = TimeGrid(1.0, 20)
    paths = sample_gv_paths(VolterraKernel.fbm(0.5), grid, 10_000, stream(0, "Bgv"))
    p_end = stats.kstest(paths[:, -1], "norm").pvalue
    p_mid = stats.kstest(paths[:, 10] / np.sqrt(grid.t[10]), "norm").pvalue
    record_property("detail", f"kernel err {err:.1e}, KS p {p_mid:.3f} (t=0.5), {p_end:.3f} (t=1)")
    assert err <= 1e-10
    assert p_end > 0.01 and p_mid > 0.01


@criterion(4, "fBm covariance H = 0.8 within 3 clustered SE on all grid pairs, < 30 s")
def test_fbm_covariance(record_property):
    t0 = time.perf_counter()
    kern = VolterraKernel.fbm(0.8)
    grid = TimeGrid(1.0, 16)
    n = 100_000
    X = sample_gv_paths(kern, grid, n, stream(0, "fbm-cov"))[:, 1:]
    tt = grid.t[1:]
    worst = 0.0
    for i in range(len(tt)):
        prod = X[:, i:i + 1] * X[:, i:]  # each path is one cluster
        emp = prod.mean(axis=0)
        se = prod.std(axis=0, ddof=1) / np.sqrt(n)
        z = np.abs(emp - kern.covariance(tt[i], tt[i:])) / se
        worst = max(worst, float(z.max()))
    dt = time.perf_counter() - t0
    record_property("detail", f"max |z| {worst:.2f} over {len(tt) * (len(tt) + 1) // 2} pairs, {dt:.1f} s")
    assert worst <= 3.0
    assert dt < 30.0


@criterion(5, "effective variance fast vs quadrature rel <= 1e-3, H in {0.3, 0.5, 0.8}")
def test_effective_variance(record_property):
    worst = 0.0
    for H in (0.3, 0.5, 0.8):
        kern = VolterraKernel.fbm(H)
        for t in np.linspace(0.05, 0.95, 20):
            fast = effective_gv_variance(kern, 1.3, t, method="fast")
            quad = effective_gv_variance(kern, 1.3, t, method="quadrature")
            worst = max(worst, abs(quad - fast) / fast)
    record_property("detail", f"max rel err {worst:.2e}")
    assert worst <= 1e-3


VALUE_GAMES = ["log_state", "log_square", "geometric_gv", "quadratic_quadratic", "cotangent",
               "hyperbolic_cotangent", "gv_power_nash"]


@criterion(6, "value consistency within 3 clustered SE, R x M = 1e4, < 60 s per game")
def test_value_consistency(record_property):
    lines, ok = [], True
    for name in VALUE_GAMES:
        t0 = time.perf_counter()
        cfg, game, sol = solve_file(name)
        assert game.spec.I <= 3 and game.S <= 2
        rows = value_consistency(game, sol, 100, 100, seed=0, mode=cfg.mode, gv_scheme=cfg.gv_scheme)
        dt = time.perf_counter() - t0
        ok &= all(r["passed"] for r in rows) and dt < 60.0
        lines.append(f"{name} z=" + "/".join(f"{r['z']:+.2f}" for r in rows) + f" {dt:.1f}s")
    record_property("detail", ", ".join(lines))
    assert ok


def _single(variant, **kw):
    game = build(make_spec(variant, N=200, **kw))
    return game, integrate_backward(game)


@criterion(7, "Nash deviations >= -3 SE and the 1-player grid search minimum within one cell of 1")
def test_nash_deviation(record_property):
    lines, ok = [], True
    for name in ("log_state", "gv_power_nash"):
        cfg, game, sol = solve_file(name)
        for i in range(game.P):
            res = deviation_test(game, sol, i, (0.5, 0.8, 1.25, 2.0), R=50, M=50, seed=1)
            ok &= res["passed"]
            worst = min(r["delta"] / r["se"] if r["se"] > 0 else np.inf for r in res["rows"][1:])
            lines.append(f"{name}/{res['player']} min delta/se {worst:.1f}")
    jump = JumpSpec(c=1.0, decay=5.0)
    one = {
        "log_state": _single("log_state", players=[dict(q=1.0, qT=1.0, r=1.0, b2=1.0)],
                             coef=dict(b1=0.1, sigma=0.2), x0=50.0, jump=jump, extra=dict(k=2)),
        "gv_power_nash": _single("gv_power_nash", players=[dict(k=2, kbar=1, q=1.0, qT=1.0, qbar=1.0, qbarT=1.0,
                                                               r=1.0, rbar=1.0, b2=1.0, b2bar=1.0)],
                                 coef=dict(b1=0.1, b1bar=0.1, sigma=0.2, sigma_gv=0.3), x0=1.0, x0_spread=0.5,
                                 jump=jump, kernel=VolterraKernel.fbm(0.8)),
    }
    for name, (game, sol) in one.items():
        gammas, _, best = gain_grid_search(game, sol, 0, grid=np.linspace(0.5, 1.5, 41), R=20, M=20, seed=0)
        cell = gammas[1] - gammas[0]
        ok &= abs(best - 1.0) <= cell + 1e-12
        lines.append(f"{name} argmin {best:.3f}")
    record_property("detail", ", ".join(lines))
    assert ok


@criterion(8, "saddle point, defender r = 1, attacker r = -2, k = 1, scales {0.5, 2}")
def test_saddle(record_property):
    cfg, game, sol = solve_file("gv_power_adversarial")
    # the aggregate Riccati equation alpha' = -q - (2 b1 + sigma^2) alpha + alpha^2 / 2
    q, b1, sig = 1.0, 0.1, 0.2
    ref = solve_ivp(lambda t, a: -q - (2 * b1 + sig**2) * a + a**2 / 2, (1.0, 0.0), [1.0], rtol=1e-12, atol=1e-14)
    assert sol.initial("alpha")[0, 0] == pytest.approx(ref.y[0, -1], rel=1e-8)
    res = saddle_test(game, sol, (0.5, 2.0), R=100, M=100, seed=0)
    detail = ", ".join(f"{r['team']} x{r['gamma']:g}: {r['delta']:+.3g} (se {r['se']:.2g})" for r in res["rows"]
                       if r["gamma"] != 1.0)
    record_property("detail", detail)
    assert res["passed"]


@criterion(9, "cooperative total cost <= Nash total + 3 SE (symmetric, k = 1)")
def test_cooperative_dominance(record_property):
    cfg, coop, csol = solve_file("gv_power_cooperative")
    ps = [p["coef"] for p in cfg.players]
    assert ps[0] == ps[1] and all(p["k"] == 1 for p in cfg.players)
    cfg.variant = "gv_power_nash"
    nash = cfg.build()
    nsol = integrate_backward(nash)
    res = cooperative_dominance(nash, nsol, coop, csol, R=100, M=100, seed=0)
    record_property("detail", f"coop {res['coop']:.5g} vs nash {res['nash']:.5g}, se {res['se']:.2g}")
    assert res["passed"]


@criterion(10, "table_v: no blow-up, cube-root feedback, mean |x| strictly decreasing, < 2 min")
def test_table_v(table_v, record_property):
    cfg, game, sol, t_solve = table_v
    t0 = time.perf_counter()
    assert sol.diagnostics["positivity"]["clean"]
    # symmetric crowd block (k = kbar = 2, b2 = r = 1): u = -alpha^(1/3) (x - xbar) - alphabar^(1/3) xbar
    crowd = [p.name for p in game.spec.players].index("crowd")
    x = np.array([[-3.0, 0.5, 7.0, 60.0]])
    for t in (0.0, 0.37, 0.9):
        for s in range(game.S):
            u = game.feedback(sol, t, [s], x, xbar=[[2.0]])[crowd]
            a, ab = sol.at(t)[0, crowd, s], sol.at(t)[1, crowd, s]
            np.testing.assert_allclose(u, -np.cbrt(a) * (x - 2.0) - np.cbrt(ab) * 2.0, rtol=1e-12)
    ens = simulate(game, sol, cfg.paths, cfg.particles, cfg.seed, mode=cfg.mode, gv_scheme=cfg.gv_scheme)
    prof = decay_profile(ens)
    total = t_solve + time.perf_counter() - t0
    record_property("detail", "mean |x| " + ", ".join(f"{v:.3g}" for v in prof["mean_abs_x"]) + f", {total:.0f} s")
    assert prof["mean_abs_x"][0] == pytest.approx(50.0)
    assert prof["decreasing"]
    assert total < 120.0


@criterion(11, "alpha-type coefficients >= -1e-10 on every shipped configuration")
def test_positivity(table_v, record_property):
    worst, names = np.inf, []
    for path in sorted(CONFIGS.glob("*.yaml")):
        if path.stem == "table_v":
            game, sol = table_v[1], table_v[2]
        else:
            _, game, sol = solve_file(path.stem)
        for k in game.nonneg:
            worst = min(worst, float(sol.kind(k).min()))
        assert sol.diagnostics["positivity"]["clean"], path.stem
        names.append(path.stem)
    record_property("detail", f"{len(names)} configs, smallest alpha-type value {worst:.3g}")
    assert worst >= -1e-10


@criterion(12, "RK4 backward error ~ N^-4 within a factor 2, N in {50, 100, 200}")
def test_convergence_order(record_property):
    exact = lambda t: np.exp(np.sin(3.0) - np.sin(3.0 * t))  # noqa: E731
    errs = []
    for N in (50, 100, 200):
        toy = ToySystem(lambda t, y: -3.0 * np.cos(3.0 * t) * y, 1.0, N=N)
        sol = integrate_backward(toy, check=False)
        errs.append(float(np.abs(sol.values[:, 0, 0, 0] - exact(toy.grid.t)).max()))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    record_property("detail", "error ratios " + ", ".join(f"{r:.2f}" for r in ratios) + " (ideal 16)")
    assert all(8.0 <= r <= 32.0 for r in ratios)
