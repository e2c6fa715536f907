import numpy as np
import pytest

from ehrenfest_mjp.analytic import GMMParams
from ehrenfest_mjp.approximator import LOSS_HEADS, MLPApproximator, TabularApproximator, bayes_optimal_heads
from ehrenfest_mjp.distributions import DiscreteDistribution, compare, discretize_gmm, load_letter_e
from ehrenfest_mjp.ehrenfest import EhrenfestSpec, ehrenfest_rates, forward_marginal, log_transition_row
from ehrenfest_mjp.errors import DomainError, NumericError
from ehrenfest_mjp.experiments import toy_distributions
from ehrenfest_mjp.jump_core import RateSchedule, make_rng
from ehrenfest_mjp.reversal import backward_rate_table, exact_backward_rates, posterior
from ehrenfest_mjp.sampler import (
    AnalyticScoreSource,
    BernsteinMarginal,
    ExactRateSource,
    ModelRateSource,
    ReverseBatch,
    SamplerConfig,
    exact_reverse_simulate,
    plugin_backward_rates,
    reverse_rates_from_model,
    sample_prior,
    tau_leap_sample,
    tau_leap_step,
)


def test_time_grid_spacing_and_bounds():
    spec = EhrenfestSpec(8, T=1.0, t_min=0.01)
    grid = SamplerConfig(tau=0.3).time_grid(spec)
    assert grid[0] == 1.0 and grid[-1] == pytest.approx(0.01)
    steps = -np.diff(grid)
    assert np.all(steps <= 0.3 + 1e-12) and np.ptp(steps) < 1e-12
    with pytest.raises(DomainError):
        SamplerConfig(tau=2.0).time_grid(spec)
    with pytest.raises(DomainError):
        SamplerConfig(t_start=0.5, t_end=0.6).time_grid(spec)
    with pytest.raises(DomainError):
        SamplerConfig(n_streams=0).time_grid(spec)


def test_tau_leap_step_clamps_and_validates():
    batch = ReverseBatch(np.array([0, 5, 10]), 1.0, 10)
    col = lambda *v: np.array(v, dtype=float)[:, None]
    out = tau_leap_step(batch, col(0.0, 0.0, 1e6), col(1e6, 0.0, 0.0), 0.1, make_rng(0))
    np.testing.assert_array_equal(out.states[:, 0], [0, 5, 10])
    assert out.t == pytest.approx(0.9)
    with pytest.raises(NumericError, match="path 1"):
        tau_leap_step(batch, col(0.0, -1.0, 0.0), col(0, 0, 0), 0.1, make_rng(0))
    with pytest.raises(NumericError):
        tau_leap_step(batch, col(0.0, np.nan, 0.0), col(0, 0, 0), 0.1, make_rng(0))
    with pytest.raises(DomainError, match="shape"):
        tau_leap_step(batch, np.zeros(3), np.zeros(3), 0.1, make_rng(0))
    with pytest.raises(DomainError):
        ReverseBatch(np.array([11]), 1.0, 10)


def test_prior_is_binomial():
    spec = EhrenfestSpec(20)
    b = sample_prior(spec, 50_000, make_rng(0), d=2)
    assert b.states.shape == (50_000, 2)
    assert compare(b.states[:, 0], DiscreteDistribution.binomial(20)).tv < 0.02


def test_plugin_rates_with_true_posterior_are_exact():
    S, t = 8, 0.37
    spec = EhrenfestSpec(S)
    for p in toy_distributions(S).values():
        states = np.arange(S + 1)
        log_post = np.stack([np.log(np.maximum(posterior(x, t, p, spec), 1e-300)) for x in states])
        log_post[~np.isfinite(log_post)] = -np.inf
        got = plugin_backward_rates(states, t, log_post, spec)
        want = exact_backward_rates(states, t, p, spec)
        np.testing.assert_allclose(got.birth, want.birth, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(got.death, want.death, rtol=1e-9, atol=1e-12)


def test_bernstein_marginal_matches_forward_marginal():
    S = 12
    spec = EhrenfestSpec(S)
    p = toy_distributions(S)["bimodal"]
    bm = BernsteinMarginal(p, S)
    from ehrenfest_mjp.ehrenfest import stay_log_probs

    for t in (1e-3, 0.2, 2.0):
        lf, l1 = stay_log_probs(spec.tau(t))
        xs = np.arange(S + 1)
        got = np.exp(bm.log_pt(xs, np.full(S + 1, lf), np.full(S + 1, l1)))
        np.testing.assert_allclose(got, forward_marginal(p.pmf, t, spec), rtol=1e-10, atol=1e-300)


def test_exact_source_product_data_equals_factorized():
    S = 6
    spec = EhrenfestSpec(S)
    a = toy_distributions(S)["bimodal"].pmf
    b = toy_distributions(S)["uniform"].pmf
    joint = ExactRateSource(np.outer(a, b), spec)
    fact = ExactRateSource(np.outer(a, b), spec, factorized=True)
    states = np.array([[i, j] for i in range(S + 1) for j in range(S + 1)])
    for t in (0.1, 0.8):
        for x, y in zip(joint.rates(states, t), fact.rates(states, t)):
            np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-14)


def test_exact_source_one_dimensional_table():
    spec = EhrenfestSpec(8)
    p = toy_distributions(8)["uniform"]
    src = ExactRateSource(p, spec)
    b, d = src.rates(np.array([[2], [5]]), 0.3)
    tab = backward_rate_table(0.3, p, spec)
    np.testing.assert_allclose(b[:, 0], tab.birth[[2, 5]])
    np.testing.assert_allclose(d[:, 0], tab.death[[2, 5]])


def test_analytic_source_is_stationary_at_large_time():
    spec = EhrenfestSpec(100, T=40.0)
    src = AnalyticScoreSource(GMMParams.bimodal(), spec)
    states = np.array([45, 50, 55])
    b, d = src.rates(states, 35.0)
    fb, fd = ehrenfest_rates(states, spec)
    # swapped forward rate times (1 - delta x) equals the forward rate up to O(1/S)
    np.testing.assert_allclose(b, fb, rtol=0.05)
    np.testing.assert_allclose(d, fd, rtol=0.05)


def test_model_source_with_optimal_table_reproduces_exact_rates():
    S = 8
    spec = EhrenfestSpec(S, T=1.0, t_min=0.05)
    p = toy_distributions(S)["bimodal"]
    tab = TabularApproximator(S, LOSS_HEADS["cond_exp"], 1, 4, spec.t_min, spec.T)
    for j, t in enumerate(tab.bin_centers()):
        opt = bayes_optimal_heads("cond_exp", float(t), p, spec)
        for h, name in enumerate(tab.heads):
            tab.tensor("table")[h, :, j, 0] = opt[name]
    t = float(tab.bin_centers()[2])
    got = reverse_rates_from_model(np.arange(S + 1), t, ModelRateSource(tab, "cond_exp", spec), spec)
    want = backward_rate_table(t, p, spec)
    np.testing.assert_allclose(got.birth[:, 0], want.birth, rtol=1e-10)
    np.testing.assert_allclose(got.death[:, 0], want.death, rtol=1e-10)
    assert got.step == pytest.approx(spec.delta)


@pytest.mark.parametrize("loss", sorted(LOSS_HEADS))
def test_model_source_outputs_valid_rates(loss):
    spec = EhrenfestSpec(16, T=1.0, t_min=0.02)
    mlp = MLPApproximator(LOSS_HEADS[loss], 2, (8,), 4, seed=1)
    src = ModelRateSource(mlp, loss, spec)
    states = make_rng(0).integers(0, 17, size=(20, 2))
    b, d = src.rates(states, 0.3)
    assert b.shape == (20, 2) and np.all(b >= 0) and np.all(d >= 0)
    assert np.all(b[states == 16] == 0) and np.all(d[states == 0] == 0)


def test_model_source_reports_non_finite_heads():
    spec = EhrenfestSpec(8)
    mlp = MLPApproximator(("score_hat",), 1, (4,), 4)
    mlp.params[:] = np.nan
    with pytest.raises(NumericError, match="score_hat"):
        ModelRateSource(mlp, "ou", spec).rates(np.array([[3]]), 0.5)


def test_sampling_is_deterministic_and_worker_independent():
    spec = EhrenfestSpec(16, T=1.0, t_min=0.05)
    src = ExactRateSource(toy_distributions(16)["bimodal"], spec)
    runs = [
        tau_leap_sample(src, spec, 3000, SamplerConfig(tau=0.01, seed=9, workers=w), record=(0.5,)) for w in (1, 1, 3)
    ]
    np.testing.assert_array_equal(runs[0].states, runs[1].states)
    np.testing.assert_array_equal(runs[0].states, runs[2].states)
    assert set(runs[0].snapshots) == {0.5} and runs[0].t == pytest.approx(0.05)
    other = tau_leap_sample(src, spec, 3000, SamplerConfig(tau=0.01, seed=10))
    assert not np.array_equal(other.states, runs[0].states)


def test_exact_oracle_argument_checks():
    with pytest.raises(DomainError):
        exact_reverse_simulate(EhrenfestSpec(100), DiscreteDistribution.uniform(100), 10, make_rng(0))
    with pytest.raises(DomainError):
        exact_reverse_simulate(EhrenfestSpec(4), DiscreteDistribution.uniform(4, d=2), 10, make_rng(0))


def test_exact_oracle_bound_violation_is_reported():
    spec = EhrenfestSpec(8, T=1.0, t_min=0.01)
    with pytest.raises(NumericError, match="bound"):
        exact_reverse_simulate(spec, toy_distributions(8)["bimodal"], 2000, make_rng(0), safety=0.2)


@pytest.mark.slow
@pytest.mark.parametrize("shape", ["point_mass", "uniform", "bimodal"])
def test_exact_oracle_recovers_data(shape):
    S = 16
    spec = EhrenfestSpec(S, T=3.0, t_min=1e-3)
    p = toy_distributions(S)[shape]
    x = exact_reverse_simulate(spec, p, 40_000, make_rng(1))
    # the residual law at t_min is the forward marginal there, not p_data itself
    ref = DiscreteDistribution.from_weights(forward_marginal(p.pmf, 1e-3, spec))
    assert compare(x, ref).tv < 0.02


@pytest.mark.slow
def test_tau_leaping_with_exact_rates_recovers_data():
    S = 16
    spec = EhrenfestSpec(S, T=3.0, t_min=1e-3)
    p = toy_distributions(S)["bimodal"]
    res = tau_leap_sample(ExactRateSource(p, spec), spec, 40_000, SamplerConfig(tau=2e-3, seed=3))
    assert compare(res.states, p).tv < 0.03


@pytest.mark.slow
def test_tau_halving_reduces_error_for_gmm():
    gmm = GMMParams.bimodal()
    spec = EhrenfestSpec(100, T=2.0, t_min=0.01)
    target = discretize_gmm(gmm, 100)
    src = AnalyticScoreSource(gmm, spec)
    tvs = [compare(tau_leap_sample(src, spec, 100_000, SamplerConfig(tau=tau, seed=5)).states, target).tv for tau in (0.1, 0.05)]
    assert tvs[1] < tvs[0]


@pytest.mark.slow
def test_factorized_exact_rates_lose_joint_structure():
    spec = EhrenfestSpec(32, T=1.0, schedule=RateSchedule.ddpm(), t_min=0.01)
    e = load_letter_e()
    cfg = SamplerConfig(tau=2e-3, seed=4)
    joint = tau_leap_sample(ExactRateSource(e, spec), spec, 30_000, cfg, d=2)
    fact = tau_leap_sample(ExactRateSource(e, spec, factorized=True), spec, 30_000, cfg, d=2)
    tv_joint, tv_fact = compare(joint.states, e).tv, compare(fact.states, e).tv
    assert tv_joint < 0.08 < 0.15 < tv_fact
