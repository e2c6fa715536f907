"""Mini-batch training with a bias-corrected Adam optimiser."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..ehrenfest import EhrenfestSpec, sample_forward
from ..errors import DomainError, TrainingError
from ..jump_core import make_rng
from .losses import LOSS_HEADS, SampleBatch, loss_and_grad, regression_targets

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    The learning rate decays geometrically from ``lr`` to ``lr_final`` over
    the run when ``lr_final`` is given, otherwise it stays constant. ``t_min``
    defaults to the process spec's cutoff.
    """

    loss: str = "cond_exp"
    batch_size: int = 256
    steps: int = 1000
    lr: float = 1e-3
    lr_final: float | None = None
    seed: int = 0
    t_min: float | None = None
    ratio_source: str = "exact"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.loss not in LOSS_HEADS:
            raise DomainError(f"unknown loss kind {self.loss!r}")
        if self.batch_size < 1 or self.steps < 0:
            raise DomainError("need batch_size >= 1 and steps >= 0")
        if self.lr <= 0 or (self.lr_final is not None and self.lr_final <= 0):
            raise DomainError("learning rates must be positive")
        if self.t_min is not None and self.t_min < 0:
            raise DomainError("t_min must be non-negative")
        if self.ratio_source not in ("exact", "gaussian"):
            raise DomainError(f"unknown ratio source {self.ratio_source!r}")

    def lr_at(self, step: int) -> float:
        if self.lr_final is None or self.steps <= 1:
            return self.lr
        return self.lr * (self.lr_final / self.lr) ** (step / (self.steps - 1))


class Adam:
    def __init__(self, n: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.count = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.count += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.count)
        v_hat = self.v / (1.0 - self.beta2**self.count)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def draw_batch(p_data_sampler, spec: EhrenfestSpec, K: int, rng: np.random.Generator, t_min=None) -> SampleBatch:
    """x0 from the data sampler, t ~ U(t_min, T), x_t forward-simulated per dimension."""
    if K < 1:
        raise DomainError("K must be >= 1")
    lo = spec.t_min if t_min is None else t_min
    x0 = np.asarray(p_data_sampler(rng, K), dtype=np.int64)
    if x0.ndim == 1:
        x0 = x0[:, None]
    t = rng.uniform(lo, spec.T, size=K) if lo < spec.T else np.full(K, spec.T)
    xt = sample_forward(x0, t[:, None], spec, rng)
    return SampleBatch(x0, t, np.asarray(xt).reshape(x0.shape))


@dataclass
class TrainResult:
    approximator: object
    losses: np.ndarray
    n_excluded: int = 0
    config: TrainConfig = field(default_factory=TrainConfig)


def train(approx, config: TrainConfig, spec: EhrenfestSpec, p_data_sampler=None, fixed_batch: SampleBatch | None = None):
    """Run ``config.steps`` Adam steps in place on ``approx``.

    Either ``p_data_sampler`` (fresh mini-batches each step) or
    ``fixed_batch`` (full-batch descent on a fixed, possibly weighted,
    batch) must be given.
    """
    if (p_data_sampler is None) == (fixed_batch is None):
        raise DomainError("pass exactly one of p_data_sampler and fixed_batch")
    rng = make_rng(config.seed)
    opt = Adam(approx.params.size, config.beta1, config.beta2, config.eps)
    trace = np.empty(config.steps)
    excluded = 0
    fixed_targets = None
    if fixed_batch is not None and config.loss != "ml":
        fixed_targets = regression_targets(config.loss, fixed_batch, spec, config.ratio_source)
    for step in range(config.steps):
        if fixed_batch is None:
            batch = draw_batch(p_data_sampler, spec, config.batch_size, rng, config.t_min)
        else:
            batch = fixed_batch
        value, grad, n_bad = loss_and_grad(config.loss, approx, batch, spec, config.ratio_source, fixed_targets)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise TrainingError(
                f"non-finite loss at step {step}: value={value!r}, t in [{batch.t.min():.4g}, {batch.t.max():.4g}], "
                f"x_t in [{batch.xt.min()}, {batch.xt.max()}], K={batch.K}"
            )
        excluded += n_bad
        trace[step] = value
        opt.step(approx.params, grad, config.lr_at(step))
    if excluded:
        log.warning("%d batch entries excluded by loss %s", excluded, config.loss)
    return TrainResult(approx, trace, excluded, config)
