"""Schedule tables and the forward/reverse process algebra."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srddpm import (
    build_linear_schedule,
    denoise_from,
    denoise_step,
    diffuse,
    posterior_sigma2,
    sample_chain,
)


def test_linear_schedule_endpoints_and_spacing():
    sch = build_linear_schedule(500)
    assert sch.T == 500
    assert sch.betas[0] == 1e-4
    assert sch.betas[-1] == 0.02
    gaps = np.diff(sch.betas)
    assert np.allclose(gaps, gaps[0], rtol=1e-12)


def test_alpha_bar_matches_log_sum_route():
    # independent oracle: same product through log1p/exp instead of cumprod
    sch = build_linear_schedule(500)
    betas = 1e-4 + (0.02 - 1e-4) * np.arange(500) / 499.0
    oracle = np.exp(np.cumsum(np.log1p(-betas)))
    assert np.allclose(sch.alpha_bars, oracle, rtol=1e-12)
    assert sch.alpha_bars[-1] == pytest.approx(0.006352710797015066, rel=1e-10)


def test_alpha_bar_recurrence():
    sch = build_linear_schedule(500)
    for t in range(2, sch.T + 1):
        lhs = sch.alpha_bars[t - 1]
        rhs = sch.alpha_bars[t - 2] * sch.alphas[t - 1]
        assert abs(lhs - rhs) <= 1e-12 * abs(rhs)


def test_schedule_tables_monotone_and_bounded():
    sch = build_linear_schedule(500)
    assert np.all(sch.betas > 0) and np.all(sch.betas < 1)
    assert np.all(np.diff(sch.betas) >= 0)
    assert np.all(sch.alphas == 1.0 - sch.betas)
    assert np.all(np.diff(sch.alpha_bars) < 0)
    assert 0 < sch.alpha_bars[-1] < sch.alpha_bars[0] <= 1


def test_alpha_bar_zero_is_exactly_one():
    sch = build_linear_schedule(10)
    assert sch.alpha_bar(0) == 1.0
    assert sch.alpha_bar(1) == sch.alpha_bars[0]


@pytest.mark.parametrize(
    "kw",
    [
        dict(T=0),
        dict(T=10, beta_start=0.0),
        dict(T=10, beta_end=1.0),
        dict(T=10, beta_start=0.5, beta_end=0.1),
        dict(T=10, sigma_mode="bogus"),
    ],
)
def test_schedule_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        build_linear_schedule(**kw)


def test_step_index_is_one_based():
    sch = build_linear_schedule(10)
    assert sch.beta(1) == sch.betas[0]
    assert sch.beta(10) == sch.betas[9]
    for bad in (0, 11):
        with pytest.raises(ValueError):
            sch.beta(bad)


def test_posterior_sigma_beta_mode_equals_beta():
    sch = build_linear_schedule(10, sigma_mode="beta")
    for t in (1, 5, 10):
        assert posterior_sigma2(sch, t) == sch.betas[t - 1]


def test_posterior_sigma_beta_tilde():
    sch = build_linear_schedule(10, sigma_mode="beta_tilde")
    # the t=1 posterior is deterministic: abar_0 = 1 makes it exactly zero
    assert posterior_sigma2(sch, 1) == 0.0
    for t in range(2, 11):
        expected = (1 - sch.alpha_bars[t - 2]) / (1 - sch.alpha_bars[t - 1]) * sch.betas[t - 1]
        assert posterior_sigma2(sch, t) == pytest.approx(expected, rel=1e-12)
        assert posterior_sigma2(sch, t) <= sch.betas[t - 1]


def test_diffuse_zero_noise_scales_signal(rng):
    sch = build_linear_schedule(100)
    x0 = rng.uniform(-1, 1, size=(5, 1, 4, 4)).astype(np.float32)
    out = diffuse(x0, 100, np.zeros_like(x0), sch)
    assert out.dtype == np.float32
    assert np.allclose(out, np.sqrt(sch.alpha_bars[-1]) * x0, atol=1e-7)


def test_diffuse_accepts_scalar_or_vector_t(rng):
    sch = build_linear_schedule(50)
    x0 = rng.uniform(-1, 1, size=(3, 1, 4, 4)).astype(np.float32)
    eps = rng.standard_normal(x0.shape).astype(np.float32)
    t = np.array([1, 25, 50])
    batched = diffuse(x0, t, eps, sch)
    for i, ti in enumerate(t):
        single = diffuse(x0[i : i + 1], int(ti), eps[i : i + 1], sch)
        assert np.array_equal(batched[i], single[0])


def test_diffuse_rejects_mismatched_noise(rng):
    sch = build_linear_schedule(10)
    x0 = np.zeros((2, 1, 4, 4), dtype=np.float32)
    with pytest.raises(ValueError):
        diffuse(x0, 5, np.zeros((2, 1, 4, 5), dtype=np.float32), sch)


@settings(deadline=None, max_examples=25)
@given(t=st.integers(min_value=1, max_value=40), seed=st.integers(0, 2**16))
def test_denoise_step_matches_float64_formula(t, seed):
    """The float32 step stays within rounding of the exact update."""
    sch = build_linear_schedule(40)
    r = np.random.default_rng(seed)
    x_t = r.uniform(-2, 2, size=(1, 1, 4, 4)).astype(np.float32)
    eps = r.standard_normal(x_t.shape).astype(np.float32)
    z = r.standard_normal(x_t.shape).astype(np.float32)
    got = denoise_step(x_t, t, eps, z, sch)
    a, ab, b = sch.alphas[t - 1], sch.alpha_bars[t - 1], sch.betas[t - 1]
    exact = (x_t.astype(np.float64) - (1 - a) / np.sqrt(1 - ab) * eps) / np.sqrt(a)
    exact = exact + np.sqrt(b) * z
    assert np.allclose(got, exact, atol=1e-5)


def test_denoise_from_is_deterministic_given_seed(rng):
    sch = build_linear_schedule(15)
    x = rng.standard_normal((2, 1, 4, 4)).astype(np.float32)
    predictor = lambda xt, t: xt * np.float32(0.1)
    a = denoise_from(predictor, sch, x.copy(), 15, np.random.default_rng(3))
    b = denoise_from(predictor, sch, x.copy(), 15, np.random.default_rng(3))
    assert np.array_equal(a, b)


def test_denoise_from_rejects_bad_predictor_shape(rng):
    sch = build_linear_schedule(5)
    x = np.zeros((2, 1, 4, 4), dtype=np.float32)
    predictor = lambda xt, t: xt[:1]
    with pytest.raises(ValueError):
        denoise_from(predictor, sch, x, 5, rng)


def test_sample_chain_observer_sees_every_step(rng):
    sch = build_linear_schedule(12)
    seen = []
    predictor = lambda xt, t: np.zeros_like(xt)
    out = sample_chain(predictor, sch, rng, (1, 4, 4), observer=lambda t, x: seen.append(t))
    assert seen == list(range(12, -1, -1))
    assert out.shape == (1, 4, 4)
    assert out.dtype == np.float32


def test_sample_chain_final_step_adds_no_noise():
    """Two chains with rngs that agree until the last step coincide at x_0."""
    sch = build_linear_schedule(1)
    predictor = lambda xt, t: np.zeros_like(xt)
    a = sample_chain(predictor, sch, np.random.default_rng(5), (2, 1, 4, 4))
    b = sample_chain(predictor, sch, np.random.default_rng(5), (2, 1, 4, 4))
    x = np.random.default_rng(5).standard_normal((2, 1, 4, 4), dtype=np.float32)
    expected = denoise_step(x, 1, np.zeros_like(x), np.zeros_like(x), sch)
    assert np.array_equal(a, b)
    assert np.array_equal(a, expected)
