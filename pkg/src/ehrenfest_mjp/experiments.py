"""Validation suite and experiment drivers shared by the CLI and the tests."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from .analytic import GMMParams
from .approximator import (
    LOSS_HEADS,
    MLPApproximator,
    TabularApproximator,
    TrainConfig,
    bayes_optimal_heads,
    draw_batch,
    grid_batch,
    loss_and_grad,
    train,
)
from .distributions import DiscreteDistribution, compare, discretize_gmm, load_letter_e
from .ehrenfest import (
    EhrenfestSpec,
    ehrenfest_rate_matrix,
    forward_marginal,
    forward_transition_pmf,
    log_binomial_pmf,
    log_transition_column,
    sample_forward,
    scale_state,
    scaled_rates,
)
from .jump_core import RateSchedule, make_rng, solve_master_equation
from .reversal import (
    RatioPair,
    backward_rate_table,
    ratio_expectation,
    ratio_to_score,
    reverse_swapped_forward_rates,
    reversed_jump_moments,
    score_to_ratio,
)
from .sampler import AnalyticScoreSource, ModelRateSource, SamplerConfig, tau_leap_sample


@dataclass
class CheckResult:
    check: str
    status: str
    metric: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def _result(name, metric, tol, detail="", ok=None) -> CheckResult:
    ok = (metric <= tol) if ok is None else ok
    return CheckResult(name, "pass" if ok else "fail", float(metric), float(tol), detail)


# --- individual checks -----------------------------------------------------


def check_oracle_equivalence(sizes=(2, 8, 16, 32), n_times=5, seed=0) -> CheckResult:
    """Convolution pmf against the matrix exponential of the generator."""
    rng = make_rng(seed)
    worst = 0.0
    for S in sizes:
        spec = EhrenfestSpec(S, T=5.0)
        R = ehrenfest_rate_matrix(spec)
        for t in rng.uniform(0.01, 3.0, n_times):
            P = solve_master_equation(R, float(t)).entries
            ours = np.stack([np.exp(log_transition_column(x0, float(t), spec)) for x0 in range(S + 1)], axis=1)
            worst = max(worst, float(np.abs(P - ours).max()))
    return _result("oracle_equivalence", worst, 1e-8, f"S in {list(sizes)}")


def toy_distributions(S: int) -> dict[str, DiscreteDistribution]:
    """Point mass, uniform and a bimodal shape on {0, ..., S}."""
    ks = np.arange(S + 1)
    bimodal = np.exp(-0.5 * ((ks - 0.25 * S) / max(S / 10, 0.5)) ** 2) + np.exp(
        -0.5 * ((ks - 0.75 * S) / max(S / 10, 0.5)) ** 2
    )
    return {
        "point_mass": DiscreteDistribution.point_mass(S, S // 3),
        "uniform": DiscreteDistribution.uniform(S),
        "bimodal": DiscreteDistribution.from_weights(bimodal),
    }


def flux_residual(p: DiscreteDistribution, t: float, spec: EhrenfestSpec) -> float:
    """max |r<-(y|x) p_t(x) - r(x|y) p_t(y)| over adjacent pairs."""
    pt = forward_marginal(p.pmf, t, spec)
    tab = backward_rate_table(t, p, spec)
    lam = spec.rate_scale(t)
    x = np.arange(spec.S)
    # x -> x + 1 in reverse; forward move x + 1 -> x happens at rate lam (x + 1) / 2
    up = np.abs(tab.birth[:-1] * pt[:-1] - lam * 0.5 * (x + 1) * pt[1:])
    # x + 1 -> x in reverse; forward x -> x + 1 at rate lam (S - x) / 2
    down = np.abs(tab.death[1:] * pt[1:] - lam * 0.5 * (spec.S - x) * pt[:-1])
    return float(max(up.max(), down.max()))


def check_flux_identity(S: int = 16, t: float = 0.3) -> CheckResult:
    spec = EhrenfestSpec(S, T=max(1.0, 2 * t))
    worst = max(flux_residual(p, t, spec) for p in toy_distributions(S).values())
    return _result("flux_identity", worst, 1e-10, f"S={S}, t={t}")


def check_forward_jump_moments(S: int = 64) -> CheckResult:
    """Scaled Ehrenfest: b(x) = -x and D(x) = 2 on every lattice point."""
    spec = EhrenfestSpec(S)
    x = scale_state(np.arange(S + 1), S)
    birth, death = scaled_rates(x, spec)
    d = spec.delta
    err = max(np.abs(d * (birth - death) + x).max(), np.abs(d * d * (birth + death) - 2.0).max())
    return _result("forward_jump_moments", float(err), 1e-12, f"S={S}")


def bridge_flux_residual(S: int, bridge=score_to_ratio, xs=np.linspace(-2, 2, 9)) -> float:
    """Relative flux mismatch when stationary reverse rates come from the score bridge.

    With p_t = Binomial(S, 1/2) the score is -x; the bridge gives ratios whose
    reverse rates must balance the forward flux up to O(1/S).
    """
    spec = EhrenfestSpec(S)
    k = np.rint(np.asarray(xs) * math.sqrt(S) / 2 + S / 2).astype(np.int64)
    xt = scale_state(k, S)
    pair = bridge(-xt, S)
    up, down = reverse_swapped_forward_rates(k, spec, 0.0)
    log_pi = log_binomial_pmf(np.arange(S + 1), S, 0.5)
    flux_fwd_b = up * np.exp(log_pi[k + 1] - log_pi[k])
    flux_fwd_d = down * np.exp(log_pi[k - 1] - log_pi[k])
    rel = np.maximum(
        np.abs(np.asarray(pair.phi_b) * up - flux_fwd_b) / flux_fwd_b,
        np.abs(np.asarray(pair.phi_d) * down - flux_fwd_d) / flux_fwd_d,
    )
    return float(rel.max())


def check_bridge_flux(S: int = 10_000, bridge=score_to_ratio) -> CheckResult:
    return _result("bridge_flux_identity", bridge_flux_residual(S, bridge), 0.01, f"S={S}, |x|<=2")


def stationary_bridge_error(S: int, xs=np.linspace(-2, 2, 9), t: float = 0.5, route: str = "marginal") -> float:
    """max relative error of ratio_to_score(exact ratios) against -x for stationary data.

    With Binomial(S, 1/2) data p_t is that binomial at every t, so the exact
    ratios are neighbouring binomial pmf ratios (``route="marginal"``).
    ``route="bayes"`` instead sums over the posterior, which costs O(S^2) per
    state. Errors are relative to max(|x|, 1) so x = 0 is well defined.
    """
    k = np.rint(np.asarray(xs) * math.sqrt(S) / 2 + S / 2).astype(np.int64)
    xt = scale_state(k, S)
    if route == "marginal":
        log_pi = log_binomial_pmf(np.arange(S + 1), S, 0.5)
        pair = RatioPair(np.exp(log_pi[k + 1] - log_pi[k]), np.exp(log_pi[k - 1] - log_pi[k]))
    elif route == "bayes":
        spec = EhrenfestSpec(S, T=max(1.0, t))
        p = np.exp(log_binomial_pmf(np.arange(S + 1), S, 0.5))
        pairs = [ratio_expectation(int(x), t, p, spec) for x in k]
        pair = RatioPair(np.array([q.phi_b for q in pairs]), np.array([q.phi_d for q in pairs]))
    else:
        raise ValueError(f"unknown route {route!r}")
    score = ratio_to_score(pair, S)
    return float(np.max(np.abs(score + xt) / np.maximum(np.abs(xt), 1.0)))


def check_reverse_jump_moments(sizes=(16, 64, 256)) -> CheckResult:
    """Residuals of the reverse jump moments against their asymptotic form shrink with S."""
    res_b, res_D = [], []
    for S in sizes:
        spec = EhrenfestSpec(S, T=1.0)
        ks = np.arange(S + 1)
        xt = scale_state(ks, S)
        p = DiscreteDistribution.from_weights(np.exp(-0.5 * (xt - 0.5) ** 2 / 0.3) + np.exp(-0.5 * (xt + 1) ** 2 / 0.2))
        k = int(round(0.5 * math.sqrt(S) / 2 + S / 2))
        m = reversed_jump_moments(scale_state(k, S), 0.5, p, spec)
        res_b.append(m.residual_b)
        res_D.append(m.residual_D)
    ok = all(a > b for a, b in zip(res_b, res_b[1:])) and all(a > b for a, b in zip(res_D, res_D[1:]))
    return _result("reverse_jump_moments", res_b[-1], float("inf"), f"b: {res_b}, D: {res_D}", ok=ok)


def check_sample_forward(S: int = 16, n: int = 100_000, seed: int = 0) -> CheckResult:
    spec = EhrenfestSpec(S, T=1.0)
    rng = make_rng(seed)
    x0 = S // 4
    x = sample_forward(np.full(n, x0), 0.4, spec, rng)
    ref = DiscreteDistribution.from_weights(forward_transition_pmf(np.arange(S + 1), x0, 0.4, spec))
    return _result("sample_forward_law", compare(x, ref).tv, 0.02, f"S={S}, n={n}")


def check_loss_gradients(S: int = 8, seed: int = 0) -> CheckResult:
    """Analytic parameter gradients of every loss against central differences."""
    rng = make_rng(seed)
    spec = EhrenfestSpec(S, T=1.0, t_min=0.05)
    p = DiscreteDistribution.uniform(S)
    worst = 0.0
    for kind, heads in LOSS_HEADS.items():
        for approx in (
            TabularApproximator(S, heads, 1, 4, spec.t_min, spec.T),
            MLPApproximator(heads, 1, (16, 16), 8, seed=seed),
        ):
            approx.params[:] += rng.normal(0.0, 0.3, approx.params.size)
            batch = draw_batch(p.sampler(), spec, 32, rng)
            _, grad, _ = loss_and_grad(kind, approx, batch, spec)
            for i in rng.choice(approx.params.size, 10, replace=False):
                h = 1e-6
                old = approx.params[i]
                approx.params[i] = old + h
                fp = loss_and_grad(kind, approx, batch, spec)[0]
                approx.params[i] = old - h
                fm = loss_and_grad(kind, approx, batch, spec)[0]
                approx.params[i] = old
                fd = (fp - fm) / (2 * h)
                scale = max(abs(fd), abs(grad[i]), 1e-6)
                worst = max(worst, abs(fd - grad[i]) / scale)
    return _result("loss_gradients", worst, 1e-4, f"S={S}, all losses, tabular and mlp")


def check_bayes_optimal(S: int = 8, steps: int = 1500, n_bins: int = 4, p_data=None) -> CheckResult:
    """Tabular minimisers on exhaustive grid batches equal brute-force conditional expectations."""
    spec = EhrenfestSpec(S, T=1.0, t_min=0.05)
    p = DiscreteDistribution.uniform(S) if p_data is None else p_data
    worst = 0.0
    for kind in ("cond_exp", "gauss", "taylor", "taylor2", "ou"):
        heads = LOSS_HEADS[kind]
        tab = TabularApproximator(S, heads, 1, n_bins, spec.t_min, spec.T)
        batch = grid_batch(p, spec, tab.bin_centers())
        train(tab, TrainConfig(loss=kind, steps=steps, lr=0.1, lr_final=1e-5), spec, fixed_batch=batch)
        for j, t in enumerate(tab.bin_centers()):
            opt = bayes_optimal_heads(kind, float(t), p, spec)
            for h, name in enumerate(heads):
                err = np.abs(tab.tensor("table")[h, :, j, 0] - opt[name]) / np.maximum(1.0, np.abs(opt[name]))
                worst = max(worst, float(np.nanmax(err)))
    return _result("bayes_optimality", worst, 1e-3, f"S={S}, five regression losses")


def forward_ks_to_ou(S: int, t: float = 0.5, x0_scaled: float = 1.0) -> float:
    """Kolmogorov distance between the scaled forward marginal and its OU Gaussian limit.

    The supremum runs over the whole real line, so both sides of every
    lattice jump are compared.
    """
    spec = EhrenfestSpec(S, T=max(1.0, t))
    k0 = int(round(x0_scaled * math.sqrt(S) / 2 + S / 2))
    xt0 = scale_state(k0, S)
    pmf = forward_transition_pmf(np.arange(S + 1), k0, t, spec)
    cdf = np.cumsum(pmf)
    grid = scale_state(np.arange(S + 1), S)
    mean = xt0 * math.exp(-t)
    sd = math.sqrt(-math.expm1(-2 * t))
    g = ndtr((grid - mean) / sd)
    before = np.concatenate([[0.0], cdf[:-1]])
    return float(max(np.abs(cdf - g).max(), np.abs(before - g).max()))


def check_ou_convergence(sizes=(16, 64, 256, 1024)) -> CheckResult:
    ks = [forward_ks_to_ou(S) for S in sizes]
    ok = all(a > b for a, b in zip(ks, ks[1:])) and ks[-1] < 0.02
    return _result("ou_convergence", ks[-1], 0.02, f"KS: {ks}", ok=ok)


def run_validation(S: int = 16, bridge=score_to_ratio, quick: bool = False) -> list[CheckResult]:
    """Oracle-equivalence and invariant suite.

    ``bridge`` replaces the score-to-ratio map, which lets a deliberately
    broken bridge be injected as a mutation test. ``quick`` shrinks every
    problem for smoke runs.
    """
    small = min(S, 8)
    checks = [
        lambda: check_oracle_equivalence(tuple(sorted({2, small, min(S, 32)}))),
        lambda: check_flux_identity(min(S, 32)),
        lambda: check_forward_jump_moments(max(S, 2)),
        lambda: check_bridge_flux(1_000 if quick else 10_000, bridge),
        lambda: check_sample_forward(max(2, min(S, 16)), 20_000 if quick else 100_000),
        lambda: check_loss_gradients(max(2, small)),
    ]
    if not quick:
        checks += [
            lambda: check_bayes_optimal(8),
            lambda: check_reverse_jump_moments(),
            lambda: check_ou_convergence(),
        ]
    return [c() for c in checks]


# --- experiment drivers ----------------------------------------------------


@dataclass
class GMMDemoResult:
    tv: float
    ks: float
    prior_tv: float
    snapshots: dict = field(default_factory=dict)
    target: DiscreteDistribution | None = None
    seconds: float = 0.0


def gmm_demo(
    S: int = 100,
    T: float = 2.0,
    t_min: float = 0.01,
    tau: float = 1e-3,
    n: int = 100_000,
    seed: int = 0,
    gmm: GMMParams | None = None,
    record=(2.0, 1.0, 0.5, 0.25, 0.1),
    workers: int = 1,
) -> GMMDemoResult:
    """Analytic mixture score driving the reverse Ehrenfest chain from the Binomial prior.

    Also pushes exact target samples forward to T and measures their distance
    to the Binomial prior.
    """
    start = time.perf_counter()
    gmm = gmm or GMMParams.bimodal()
    spec = EhrenfestSpec(S, T=T, t_min=t_min)
    target = discretize_gmm(gmm, S)
    ss = np.random.SeedSequence(seed).spawn(2)
    cfg = SamplerConfig(tau=tau, seed=int(ss[0].generate_state(1)[0]), workers=workers)
    rec = tuple(r for r in record if t_min <= r <= T)
    res = tau_leap_sample(AnalyticScoreSource(gmm, spec), spec, n, cfg, record=rec)
    m = compare(res.states, target)
    rng = np.random.default_rng(ss[1])
    x0 = target.sample(rng, n)[:, 0]
    xT = sample_forward(x0, T, spec, rng)
    prior = compare(xT, DiscreteDistribution.binomial(S))
    snaps = {**res.snapshots, res.t: res.states}
    return GMMDemoResult(m.tv, m.ks, prior.tv, snaps, target, time.perf_counter() - start)


# Data-end cutoff per loss. Clipped Gaussian-ratio targets make the reverse
# rates explode close to the data, so that loss stops earlier.
LETTER_E_T_MIN = {"gauss": 0.08}


def default_letter_e_t_min(loss: str) -> float:
    return LETTER_E_T_MIN.get(loss, 0.01)


@dataclass(frozen=True)
class LetterEConfig:
    """Settings of the two-dimensional letter-E run; see README for the rationale."""

    T: float = 1.0
    t_min: float = 0.01
    schedule: str = "ddpm"
    steps: int = 100_000
    batch: int = 512
    lr: float = 2e-3
    lr_final: float = 2e-5
    hidden: tuple = (128, 128)
    tau: float = 1e-3
    n_samples: int = 500_000
    seed: int = 0
    workers: int = 1

    def spec(self) -> EhrenfestSpec:
        sched = RateSchedule.ddpm() if self.schedule == "ddpm" else RateSchedule(self.schedule)
        return EhrenfestSpec(32, T=self.T, schedule=sched, t_min=self.t_min)


@dataclass
class LetterEResult:
    loss: str
    tv: float
    ks: float
    samples: np.ndarray
    losses: np.ndarray
    approximator: object
    train_seconds: float
    sample_seconds: float


def train_letter_e(loss: str, cfg: LetterEConfig = LetterEConfig(), target: DiscreteDistribution | None = None):
    target = target or load_letter_e()
    spec = cfg.spec()
    approx = MLPApproximator(LOSS_HEADS[loss], 2, cfg.hidden, 32, 1000.0 / cfg.T, 1.0 / spec.sqrt_S, seed=cfg.seed)
    tc = TrainConfig(loss=loss, batch_size=cfg.batch, steps=cfg.steps, lr=cfg.lr, lr_final=cfg.lr_final, seed=cfg.seed)
    return train(approx, tc, spec, target.sampler())


def run_letter_e(loss: str, cfg: LetterEConfig = LetterEConfig()) -> LetterEResult:
    """Train an MLP with one loss on the letter-E target and sample from it."""
    target = load_letter_e()
    spec = cfg.spec()
    t0 = time.perf_counter()
    trained = train_letter_e(loss, cfg, target)
    t1 = time.perf_counter()
    source = ModelRateSource(trained.approximator, loss, spec)
    res = tau_leap_sample(source, spec, cfg.n_samples, SamplerConfig(tau=cfg.tau, seed=cfg.seed + 1, workers=cfg.workers), d=2)
    m = compare(res.states, target)
    return LetterEResult(loss, m.tv, m.ks, res.states, trained.losses, trained.approximator, t1 - t0, time.perf_counter() - t1)


def report_dicts(results: list[CheckResult]) -> list[dict]:
    return [asdict(r) for r in results]
