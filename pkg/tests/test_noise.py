import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from mftg.core import JumpSpec, RegimeField, TimeGrid, make_generator
from mftg.errors import DomainError
from mftg.noise import (VolterraKernel, binned_jump_sums, brownian_increments, c_hurst, effective_gv_variance,
                        eval_kernel_kh, gv_increments, kernel_kh, sample_ctmc, sample_gv_paths, sample_jumps,
                        stream)


def test_stream_is_deterministic_and_keyed():
    a = stream(7, "B", 3).standard_normal(5)
    b = stream(7, "B", 3).standard_normal(5)
    c = stream(7, "B", 4).standard_normal(5)
    d = stream(7, "J", 3).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(a, d)


def test_c_hurst_half():
    assert c_hurst(0.5) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        c_hurst(1.0)


@given(st.floats(0.05, 1.0), st.floats(0.0, 0.99))
def test_kernel_is_one_at_half(t, frac):
    assert kernel_kh(0.5, t, frac * t) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("H", [0.3, 0.7, 0.8])
def test_vectorized_kernel_matches_quadrature(H):
    for t, tp in [(1.0, 0.3), (0.5, 0.49), (0.8, 0.05)]:
        assert float(kernel_kh(H, t, tp)) == pytest.approx(eval_kernel_kh(H, t, tp), rel=1e-7)


@pytest.mark.parametrize("H", [0.3, 0.8])
def test_kernel_square_integrates_to_variance(H):
    from scipy import integrate
    t = 0.7
    v, _ = integrate.quad(lambda u: float(kernel_kh(H, t, u)) ** 2, 0, t, limit=400)
    assert v == pytest.approx(t ** (2 * H), rel=1e-5)


def test_fbm_variance_and_covariance():
    k = VolterraKernel.fbm(0.8)
    assert k.variance(0.5) == pytest.approx(0.5**1.6)
    assert k.covariance(0.4, 0.4) == pytest.approx(k.variance(0.4))
    assert k.covariance(0.3, 0.7) == pytest.approx(0.5 * (0.3**1.6 + 0.7**1.6 - 0.4**1.6))


@pytest.mark.parametrize("H", [0.3, 0.8])
def test_weights_reproduce_marginal_variance(H):
    g = TimeGrid(1.0, 16)
    W, fine = VolterraKernel.fbm(H).weights(g)
    var = (W**2).sum(axis=1) * fine.dt
    np.testing.assert_allclose(var[1:], g.t[1:] ** (2 * H), rtol=2e-3)


def test_gv_paths_shape_and_start():
    g = TimeGrid(1.0, 20)
    p = sample_gv_paths(VolterraKernel.fbm(0.7), g, 50, stream(0, "gv"))
    assert p.shape == (50, 21)
    np.testing.assert_array_equal(p[:, 0], 0.0)
    inc = gv_increments(VolterraKernel.fbm(0.7), g, (5, 10), stream(0, "gv"))
    assert inc.shape == (5, 10, 20)


def test_gv_paths_brownian_at_half():
    g = TimeGrid(1.0, 10)
    p = sample_gv_paths(VolterraKernel.fbm(0.5), g, 4000, stream(1, "gv"))
    assert stats.kstest(p[:, -1], "norm").pvalue > 0.01
    inc = np.diff(p, axis=1)
    assert abs(np.corrcoef(inc[:, 2], inc[:, 7])[0, 1]) < 0.06


@pytest.mark.parametrize("H", [0.3, 0.5, 0.8])
def test_effective_variance_fast_vs_quadrature(H):
    k = VolterraKernel.fbm(H)
    for t in (0.2, 0.6, 0.95):
        fast = effective_gv_variance(k, 0.7, t, method="fast")
        quad = effective_gv_variance(k, 0.7, t, method="quadrature", h=1e-4)
        assert quad == pytest.approx(fast, rel=1e-3)


def test_effective_variance_time_varying_sigma():
    g = TimeGrid(1.0, 100)
    sig = RegimeField(g, np.linspace(0.5, 1.5, 101)[:, None])
    k = VolterraKernel.fbm(0.5)
    # with K = 1 the variance rate is sigma(t)^2
    assert effective_gv_variance(k, sig, 0.5, method="quadrature") == pytest.approx(1.0, rel=1e-3)
    with pytest.raises(DomainError):
        effective_gv_variance(k, sig, 0.5, method="fast")


def test_brownian_increment_variance(rng):
    g = TimeGrid(1.0, 50)
    dB = brownian_increments(g, (20000,), rng)
    assert dB.shape == (20000, 50)
    assert dB.sum(axis=1).var() == pytest.approx(1.0, rel=0.05)


def test_jump_counts_and_bins(rng):
    g = TimeGrid(2.0, 40)
    j = JumpSpec(c=6.0, decay=3.0)  # total intensity 2
    n = [len(sample_jumps(j, g, rng)[0]) for _ in range(4000)]
    assert np.mean(n) == pytest.approx(4.0, rel=0.05)
    sums = binned_jump_sums(j, g, (20000,), rng)
    # E sum of mu = T int mu nu = 2 * 6 / 9
    assert sums.sum(axis=1).mean() == pytest.approx(2 * 6 / 9, rel=0.03)
    assert binned_jump_sums(JumpSpec.none(), g, (3,), rng).sum() == 0.0


def test_ctmc_occupation_matches_stationary():
    gen = make_generator(("lo", "hi"), {("hi", "lo"): 0.7, ("lo", "hi"): 0.4})
    g = TimeGrid(400.0, 40000)
    path = sample_ctmc(gen, "hi", g, stream(3, "regime"))
    occ = np.bincount(path, minlength=2) / path.size
    np.testing.assert_allclose(occ, gen.stationary(), atol=0.04)


def test_ctmc_first_exit_time():
    gen = make_generator(("a", "b"), [[0, 2.0], [0, 0]])
    g = TimeGrid(5.0, 10)
    exits = []
    for r in range(3000):
        _, times, states = sample_ctmc(gen, "a", g, stream(0, "regime", r), return_events=True)
        exits.append(times[0] if len(times) else np.inf)
    assert np.mean(exits) == pytest.approx(0.5, rel=0.05)


def test_ctmc_projection_right_continuous():
    gen = make_generator(("a", "b"), [[0, 1.0], [1.0, 0]])
    g = TimeGrid(3.0, 300)
    path, times, states = sample_ctmc(gen, 0, g, stream(5, "regime"), return_events=True)
    assert len(times) > 0
    for n, t in enumerate(g.t):
        assert path[n] == states[np.searchsorted(times, t, side="right")]
