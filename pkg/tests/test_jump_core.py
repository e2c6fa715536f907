import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehrenfest_mjp.errors import DomainError, NumericError
from ehrenfest_mjp.jump_core import (
    RateSchedule,
    adaptive_simpson,
    build_rate_matrix,
    gillespie_endpoints,
    gillespie_simulate,
    make_rng,
    solve_master_equation,
    spawn_rngs,
    time_transform,
)


def pure_death(S, rate=1.0):
    return build_rate_matrix(lambda x: 0.0, lambda x: rate * x, S)


def test_generator_columns_sum_to_zero():
    R = build_rate_matrix(lambda x: 3 - x, lambda x: 2.0 * x, 3)
    np.testing.assert_allclose(R.entries.sum(axis=0), 0.0, atol=1e-15)
    assert R.entries[1, 0] == 3.0 and R.entries[0, 1] == 2.0


@pytest.mark.parametrize(
    "birth, death",
    [(lambda x: 1.0, lambda x: x), (lambda x: 2 - x, lambda x: 1.0), (lambda x: -1.0, lambda x: 0.0)],
)
def test_generator_rejects_escaping_or_negative_rates(birth, death):
    with pytest.raises(DomainError):
        build_rate_matrix(birth, death, 2)


def test_single_state_chain_is_static():
    P = solve_master_equation(build_rate_matrix(lambda x: 0.0, lambda x: 0.0, 0), 3.0)
    assert P.entries.shape == (1, 1) and P.entries[0, 0] == 1.0


def test_pure_death_decay_matches_closed_form():
    P = solve_master_equation(pure_death(1), 2.0)
    assert P.entries[1, 1] == pytest.approx(math.exp(-2.0), rel=1e-12)


def test_master_equation_negative_time_rejected():
    with pytest.raises(DomainError):
        solve_master_equation(pure_death(2), -0.1)


def test_master_equation_overflow_reported():
    R = build_rate_matrix(lambda x: 1e300 * (3 - x), lambda x: 1e300 * x, 3)
    with pytest.raises(NumericError):
        solve_master_equation(R, 1e10)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.floats(0.0, 5.0))
def test_transition_matrix_is_stochastic(S, t):
    R = build_rate_matrix(lambda x: 0.7 * (S - x), lambda x: 1.3 * x, S)
    P = solve_master_equation(R, t).entries
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=0), 1.0, atol=1e-10)


def test_chapman_kolmogorov():
    R = build_rate_matrix(lambda x: 5 - x, lambda x: 0.5 * x, 5)
    a = solve_master_equation(R, 0.3).entries
    b = solve_master_equation(R, 0.5).entries
    np.testing.assert_allclose(b @ a, solve_master_equation(R, 0.8).entries, atol=1e-12)


def test_schedule_closed_forms():
    assert RateSchedule.constant(2.0).tau(0.7) == pytest.approx(1.4)
    ddpm = RateSchedule.ddpm()
    # tau = (beta_min t + (beta_max - beta_min) t^2 / 2) / 2
    assert ddpm.tau(1.0) == pytest.approx((0.1 + 19.9 / 2) / 2)
    assert RateSchedule.cosine().tau(0.5) == pytest.approx(0.25 * math.log(2.0))


@pytest.mark.parametrize("sched", [RateSchedule.constant(0.5), RateSchedule.ddpm(), RateSchedule.cosine()])
def test_closed_form_time_transform_matches_quadrature(sched):
    ts = np.array([0.0, 0.1, 0.45, 0.9, 1.0])
    closed = time_transform(sched, ts, T=1.0)
    quad = time_transform(sched, ts, T=1.0, method="quadrature")
    np.testing.assert_allclose(closed, quad, atol=1e-8)


def test_time_transform_rejects_out_of_range():
    with pytest.raises(DomainError):
        time_transform(RateSchedule.ddpm(), 1.5)
    with pytest.raises(DomainError):
        time_transform(RateSchedule.constant(), -1.0)


def test_unknown_schedule_rejected():
    with pytest.raises(DomainError):
        RateSchedule("linear")


def test_adaptive_simpson_polynomial_and_smooth():
    assert adaptive_simpson(lambda x: x**3, 0.0, 2.0) == pytest.approx(4.0, abs=1e-12)
    assert adaptive_simpson(math.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-9)


def test_rng_helpers_are_reproducible():
    assert make_rng(5).random() == make_rng(5).random()
    g = make_rng(1)
    assert make_rng(g) is g
    a, b = spawn_rngs(3, 2)
    assert a.random() != b.random()


def test_trajectory_lookup():
    rng = make_rng(0)
    path = gillespie_simulate(pure_death(3), 3, 10.0, rng)
    assert path.states[0] == 3
    assert path.state_at(0.0) == 3
    assert all(b == a - 1 for a, b in zip(path.states, path.states[1:]))
    with pytest.raises(DomainError):
        path.state_at(11.0)


@pytest.mark.slow
def test_gillespie_endpoint_law_matches_master_equation():
    S, T, n = 6, 0.7, 40_000
    R = build_rate_matrix(lambda x: 0.8 * (S - x), lambda x: 0.4 * x, S)
    rng = make_rng(11)
    ends, _ = gillespie_endpoints(R, np.full(n, 1), T, rng)
    emp = np.bincount(ends, minlength=S + 1) / n
    exact = solve_master_equation(R, T).entries[:, 1]
    assert 0.5 * np.abs(emp - exact).sum() < 0.015
