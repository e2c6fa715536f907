import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

from ehrenfest_mjp.distributions import DiscreteDistribution, compare
from ehrenfest_mjp.ehrenfest import (
    EhrenfestSpec,
    ehrenfest_rate_matrix,
    ehrenfest_rates,
    forward_marginal,
    forward_transition_pmf,
    gaussian_ratio,
    log_transition_column,
    log_transition_pmf,
    log_transition_row,
    ou_stats,
    sample_forward,
    scale_state,
    scaled_rates,
    stay_log_probs,
    stay_probability,
    unscale_state,
)
from ehrenfest_mjp.errors import DomainError
from ehrenfest_mjp.jump_core import RateSchedule, make_rng, solve_master_equation


def test_two_state_flip_values():
    spec = EhrenfestSpec(2, T=2.0)
    f = stay_probability(math.log(2.0), spec)
    assert f == pytest.approx(0.75)
    # from x0 = 0 both bits must flip; from x0 = 2 one stays on and one turns off
    assert forward_transition_pmf(2, 0, math.log(2.0), spec) == pytest.approx(1 / 16)
    assert forward_transition_pmf(1, 2, math.log(2.0), spec) == pytest.approx(2 * 0.75 * 0.25)
    assert forward_transition_pmf(1, 0, math.log(2.0), spec) == pytest.approx(2 * 0.25 * 0.75)


def test_time_zero_is_identity():
    spec = EhrenfestSpec(5)
    pmf = forward_transition_pmf(np.arange(6), 3, 0.0, spec)
    np.testing.assert_allclose(pmf, np.eye(6)[3], atol=1e-15)


def test_rates_and_domain():
    spec = EhrenfestSpec(4, schedule=RateSchedule.constant(2.0))
    assert ehrenfest_rates(1, spec) == (3.0, 1.0)
    with pytest.raises(DomainError):
        ehrenfest_rates(5, spec)
    with pytest.raises(DomainError):
        EhrenfestSpec(0)
    with pytest.raises(DomainError):
        EhrenfestSpec(4, T=1.0, t_min=1.0)
    with pytest.raises(DomainError):
        EhrenfestSpec(4, T=2.0, schedule=RateSchedule.ddpm())


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 400), st.data())
def test_scaling_roundtrip(S, data):
    k = data.draw(st.integers(0, S))
    assert unscale_state(scale_state(k, S), S) == k


def test_unscale_rejects_off_lattice():
    with pytest.raises(DomainError):
        unscale_state(0.1234, 16)


@pytest.mark.parametrize("S", [1, 2, 7, 16, 32])
def test_convolution_matches_matrix_exponential(S):
    spec = EhrenfestSpec(S, T=3.0)
    R = ehrenfest_rate_matrix(spec)
    for t in (0.05, 0.4, 2.5):
        P = solve_master_equation(R, t).entries
        ours = np.exp(np.stack([log_transition_column(x0, t, spec) for x0 in range(S + 1)], axis=1))
        np.testing.assert_allclose(ours, P, atol=1e-10)


def test_vectorised_and_column_paths_agree():
    spec = EhrenfestSpec(12)
    x = np.arange(13)
    for x0 in (0, 5, 12):
        np.testing.assert_allclose(log_transition_pmf(x, x0, 0.3, spec), log_transition_column(x0, 0.3, spec), atol=1e-12)


def test_row_from_detailed_balance():
    spec = EhrenfestSpec(10)
    row = log_transition_row(4, 0.6, spec)
    direct = log_transition_pmf(4, np.arange(11), 0.6, spec)
    np.testing.assert_allclose(row, direct, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.floats(1e-4, 8.0), st.data())
def test_pmf_normalised_and_nonnegative(S, t, data):
    spec = EhrenfestSpec(S, T=10.0)
    x0 = data.draw(st.integers(0, S))
    pmf = forward_transition_pmf(np.arange(S + 1), x0, t, spec)
    assert np.all(pmf >= 0)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 40), st.floats(0.01, 4.0), st.data())
def test_reflection_symmetry(S, t, data):
    spec = EhrenfestSpec(S, T=5.0)
    x0 = data.draw(st.integers(0, S))
    a = log_transition_pmf(np.arange(S + 1), x0, t, spec)
    b = log_transition_pmf(S - np.arange(S + 1), S - x0, t, spec)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_binomial_is_stationary_and_limit():
    S = 20
    spec = EhrenfestSpec(S, T=40.0)
    pi = binom.pmf(np.arange(S + 1), S, 0.5)
    np.testing.assert_allclose(forward_marginal(pi, 0.7, spec), pi, atol=1e-13)
    np.testing.assert_allclose(forward_transition_pmf(np.arange(S + 1), 0, 30.0, spec), pi, atol=1e-12)


def test_unreachable_entries_are_minus_inf():
    spec = EhrenfestSpec(3)
    assert log_transition_pmf(4, 1, 0.2, spec) == -np.inf
    assert log_transition_pmf(3, 0, 0.0, spec) == -np.inf


def test_stay_log_probs_small_tau():
    lf, l1 = stay_log_probs(1e-12)
    assert lf == pytest.approx(0.0, abs=1e-12)
    assert l1 == pytest.approx(math.log(0.5e-12), rel=1e-9)


def test_scaled_drift_and_diffusion():
    S = 100
    spec = EhrenfestSpec(S)
    x = scale_state(np.arange(S + 1), S)
    b, d = scaled_rates(x, spec)
    np.testing.assert_allclose(spec.delta * (b - d), -x, atol=1e-12)
    np.testing.assert_allclose(spec.delta**2 * (b + d), 2.0, atol=1e-12)


def test_ou_stats_constant_rate():
    st_ = ou_stats(0.5, EhrenfestSpec(10))
    assert st_.mean_factor == pytest.approx(math.exp(-0.5))
    assert st_.variance == pytest.approx(1 - math.exp(-1.0))


def test_forward_mean_matches_ou_mean():
    S, t = 50, 0.8
    spec = EhrenfestSpec(S)
    k0 = 40
    pmf = forward_transition_pmf(np.arange(S + 1), k0, t, spec)
    mean = pmf @ scale_state(np.arange(S + 1), S)
    var = pmf @ scale_state(np.arange(S + 1), S) ** 2 - mean**2
    assert mean == pytest.approx(scale_state(k0, S) * math.exp(-t), rel=1e-12)
    assert var == pytest.approx(1 - math.exp(-2 * t), rel=1e-12)


def test_gaussian_ratio_limits():
    spec = EhrenfestSpec(10_000)
    assert gaussian_ratio(0.0, 0.0, 1.0, spec, 1) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(DomainError):
        gaussian_ratio(0.0, 0.0, 0.0, spec, 1)
    with pytest.raises(DomainError):
        gaussian_ratio(0.0, 0.0, 0.5, spec, 0)


def test_sample_forward_law_and_shapes():
    S, n = 16, 60_000
    spec = EhrenfestSpec(S)
    rng = make_rng(4)
    x = sample_forward(np.full(n, 3), 0.5, spec, rng)
    ref = DiscreteDistribution.from_weights(forward_transition_pmf(np.arange(S + 1), 3, 0.5, spec))
    assert compare(x, ref).tv < 0.02
    assert isinstance(sample_forward(2, 0.1, spec, rng), int)
    with pytest.raises(DomainError):
        sample_forward(17, 0.1, spec, rng)
