import math

import numpy as np
import pytest

from ehrenfest_mjp.analytic import (
    GMMParams,
    ddpm_noise_to_score,
    gmm_log_marginal,
    gmm_marginal,
    gmm_score,
    sample_gmm,
    score_conditional_identity_check,
)
from ehrenfest_mjp.ehrenfest import EhrenfestSpec
from ehrenfest_mjp.errors import DomainError
from ehrenfest_mjp.jump_core import make_rng


def test_score_matches_finite_difference():
    p = GMMParams((0.3, 0.7), (-1.0, 0.8), (0.2, 0.5))
    x = np.linspace(-3, 3, 13)
    for t in (0.0, 0.4, 2.0):
        h = 1e-5
        fd = (gmm_log_marginal(x + h, t, p) - gmm_log_marginal(x - h, t, p)) / (2 * h)
        np.testing.assert_allclose(gmm_score(x, t, p), fd, atol=1e-6)


def test_marginal_integrates_to_one():
    p = GMMParams.bimodal()
    x = np.linspace(-10, 10, 20001)
    assert np.trapezoid(gmm_marginal(x, 0.7, p), x) == pytest.approx(1.0, abs=1e-8)


def test_single_component_score_is_linear():
    p = GMMParams((1.0,), (0.5,), (0.25,))
    # marginal N(0.5 e^{-t}, 1 - e^{-2t} + 0.25 e^{-2t})
    t = 0.3
    var = 1 - math.exp(-2 * t) + 0.25 * math.exp(-2 * t)
    assert gmm_score(0.1, t, p) == pytest.approx(-(0.1 - 0.5 * math.exp(-t)) / var)


def test_large_time_score_is_stationary():
    p = GMMParams.bimodal()
    x = np.array([-1.0, 0.3, 2.0])
    np.testing.assert_allclose(gmm_score(x, 30.0, p), -x, atol=1e-10)


def test_conditional_expectation_identity():
    chk = score_conditional_identity_check(GMMParams.bimodal(), 0.5, 200_000, make_rng(3))
    assert chk.max_z < 5.0
    assert chk.residual < 0.05


def test_noise_to_score():
    spec = EhrenfestSpec(16)
    sigma = math.sqrt(1 - math.exp(-1.0))
    assert ddpm_noise_to_score(1.0, 0.5, spec) == pytest.approx(-1.0 / sigma)
    with pytest.raises(DomainError):
        ddpm_noise_to_score(1.0, 0.0, spec)


def test_parameter_validation():
    with pytest.raises(DomainError):
        GMMParams((0.5, 0.6), (0.0, 1.0), (1.0, 1.0))
    with pytest.raises(DomainError):
        GMMParams((1.0,), (0.0,), (0.0,))
    with pytest.raises(DomainError):
        GMMParams((1.0,), (0.0, 1.0), (1.0,))
    with pytest.raises(DomainError):
        gmm_score(0.0, -1.0, GMMParams.bimodal())


def test_sampler_moments():
    p = GMMParams.bimodal(1.5, 0.25)
    x = sample_gmm(p, 200_000, make_rng(0))
    assert x.mean() == pytest.approx(0.0, abs=0.01)
    assert x.var() == pytest.approx(1.5**2 + 0.25, rel=0.01)
