"""Closed-form references for one-dimensional Gaussian mixtures under an OU flow.

The flow is dX = -alpha X dt + beta dW. With alpha = 1 and beta = sqrt(2)
it is the limit of the scaled Ehrenfest process in dimensionless time tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .ehrenfest import EhrenfestSpec, ou_stats
from .errors import DomainError


@dataclass(frozen=True)
class GMMParams:
    weights: tuple[float, ...]
    means: tuple[float, ...]
    variances: tuple[float, ...]
    alpha: float = 1.0
    beta: float = math.sqrt(2.0)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        if not (w.shape == m.shape == v.shape) or w.ndim != 1:
            raise DomainError("weights, means and variances must be equal-length vectors")
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
            raise DomainError("mixture weights must be non-negative and sum to 1")
        if np.any(v <= 0):
            raise DomainError("component variances must be positive")
        if self.alpha <= 0 or self.beta <= 0:
            raise DomainError("alpha and beta must be positive")
        for name, arr in (("weights", w), ("means", m), ("variances", v)):
            object.__setattr__(self, name, tuple(float(a) for a in arr))

    @classmethod
    def bimodal(cls, separation: float = 1.5, variance: float = 0.25) -> "GMMParams":
        """Equal-weight pair at +/- separation used by the demo."""
        return cls((0.5, 0.5), (-separation, separation), (variance, variance))

    def component_moments(self, t):
        """Per-component mean and variance of the marginal at time t (broadcast on last axis)."""
        t = np.asarray(t, dtype=np.float64)[..., None]
        decay = np.exp(-self.alpha * t)
        noise = self.beta**2 / (2.0 * self.alpha) * -np.expm1(-2.0 * self.alpha * t)
        mean = decay * np.asarray(self.means)
        var = noise + decay**2 * np.asarray(self.variances)
        return mean, var


def _component_logpdf(x, t, p: GMMParams):
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.asarray(t) < 0):
        raise DomainError("t must be non-negative")
    mean, var = p.component_moments(t)
    xx = x[..., None]
    logn = -0.5 * np.log(2.0 * math.pi * var) - 0.5 * (xx - mean) ** 2 / var
    return logn + np.log(np.asarray(p.weights)), mean, var, xx


def gmm_log_marginal(x, t, p: GMMParams):
    lc, *_ = _component_logpdf(x, t, p)
    out = logsumexp(lc, axis=-1)
    return out if np.ndim(out) else float(out)


def gmm_marginal(x, t, p: GMMParams):
    """Density of the OU marginal started from the mixture, at time t."""
    out = np.exp(gmm_log_marginal(x, t, p))
    return out if np.ndim(out) else float(out)


def gmm_score(x, t, p: GMMParams):
    """d/dx log p_t(x): responsibility-weighted Gaussian scores."""
    lc, mean, var, xx = _component_logpdf(x, t, p)
    resp = np.exp(lc - logsumexp(lc, axis=-1, keepdims=True))
    out = np.sum(resp * (-(xx - mean) / var), axis=-1)
    return out if np.ndim(out) else float(out)


def ddpm_noise_to_score(noise_pred, t, spec: EhrenfestSpec):
    """Score from a noise prediction: -noise / sigma_t."""
    if np.any(np.asarray(t) <= 0):
        raise DomainError("noise-to-score conversion divides by sigma_0 = 0")
    sigma = math.sqrt(ou_stats(t, spec).variance)
    out = -np.asarray(noise_pred, dtype=np.float64) / sigma
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class IdentityCheck:
    """Monte-Carlo check of score = E_{x0 | x}[grad log p_{t|0}(x | x0)]."""

    grid: np.ndarray
    estimate: np.ndarray
    exact: np.ndarray
    stderr: np.ndarray = field(repr=False)

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.estimate - self.exact)))

    @property
    def max_z(self) -> float:
        """Largest residual measured in Monte-Carlo standard errors."""
        z = np.abs(self.estimate - self.exact) / np.maximum(self.stderr, 1e-300)
        return float(np.max(z))


def sample_gmm(p: GMMParams, n: int, rng: np.random.Generator) -> np.ndarray:
    comp = rng.choice(len(p.weights), size=n, p=np.asarray(p.weights))
    return rng.normal(np.asarray(p.means)[comp], np.sqrt(np.asarray(p.variances)[comp]))


def score_conditional_identity_check(
    p: GMMParams,
    t: float,
    n_samples: int,
    rng: np.random.Generator,
    grid: np.ndarray | None = None,
) -> IdentityCheck:
    """Self-normalised importance estimate of the conditional-expectation score.

    Draws x0 from the data mixture, weights each by p_{t|0}(x | x0) and
    averages grad_x log p_{t|0}(x | x0) = -(x - e^{-alpha t} x0) / v_t.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    if grid is None:
        grid = np.linspace(-2.0, 2.0, 21)
    x0 = sample_gmm(p, n_samples, rng)
    decay = math.exp(-p.alpha * t)
    v = p.beta**2 / (2.0 * p.alpha) * -math.expm1(-2.0 * p.alpha * t)
    est = np.empty(grid.size)
    se = np.empty(grid.size)
    for i, x in enumerate(grid):
        g = -(x - decay * x0) / v
        lw = -0.5 * (x - decay * x0) ** 2 / v
        w = np.exp(lw - lw.max())
        w /= w.sum()
        est[i] = w @ g
        # delta-method standard error of a self-normalised estimator
        se[i] = math.sqrt(float(np.sum(w**2 * (g - est[i]) ** 2)))
    return IdentityCheck(np.asarray(grid), est, gmm_score(grid, t, p), se)
