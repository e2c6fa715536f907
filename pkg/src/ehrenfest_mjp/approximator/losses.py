"""Regression and likelihood losses for the reverse-rate approximators.

Every loss returns a :class:`LossResult` holding the scalar value together
with the gradient of that value with respect to each head output, so the
parameter gradient is one ``approximator.backward`` call away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, logsumexp

from ..ehrenfest import EhrenfestSpec, log_transition_matrix, log_transition_pmf, scale_state
from ..errors import DomainError

LOG_CLIP = 30.0
MIN_VARIANCE = 1e-12
ML_VARIANCE_FLOOR = 1e-10

LOSS_HEADS = {
    "cond_exp": ("phi_b", "phi_d"),
    "gauss": ("phi_b", "phi_d"),
    "taylor": ("mu_hat",),
    "taylor2": ("mu_hat", "quad_hat"),
    "ou": ("score_hat",),
    "ml": ("gauss_mean", "gauss_logvar"),
}


@dataclass(frozen=True)
class SampleBatch:
    """Training triples as integer indices.

    ``x0`` and ``xt`` have shape (K, d), ``t`` has shape (K,). Optional
    ``weights`` turn the batch into a weighted sum, which is how exhaustive
    grid batches express the joint law of (x0, t, x_t).
    """

    x0: np.ndarray
    t: np.ndarray
    xt: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=np.int64)
        xt = np.asarray(self.xt, dtype=np.int64)
        if x0.ndim == 1:
            x0, xt = x0[:, None], xt.reshape(-1, 1)
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if x0.shape != xt.shape or t.shape[0] != x0.shape[0]:
            raise DomainError("x0, t and xt must describe the same K samples")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "xt", xt)
        object.__setattr__(self, "t", t)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if w.shape != t.shape or np.any(w < 0):
                raise DomainError("weights must be non-negative, one per sample")
            object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return self.t.shape[0]

    @property
    def d(self) -> int:
        return self.x0.shape[1]


@dataclass(frozen=True)
class LossResult:
    value: float
    grads: dict
    n_excluded: int = 0


def _weights(batch: SampleBatch) -> np.ndarray:
    w = np.ones(batch.K) if batch.weights is None else batch.weights
    return np.broadcast_to(w[:, None], (batch.K, batch.d))


def _ou_moments(batch: SampleBatch, spec: EhrenfestSpec):
    tau = np.asarray(spec.tau(batch.t), dtype=np.float64)[:, None]
    mu = scale_state(batch.x0, spec.S) * np.exp(-tau)
    var = np.broadcast_to(-np.expm1(-2.0 * tau), mu.shape)
    return mu, var


def regression_targets(kind: str, batch: SampleBatch, spec: EhrenfestSpec, ratio_source: str = "exact"):
    """Per-head regression targets and a validity mask, all of shape (K, d)."""
    x = scale_state(batch.xt, spec.S)
    d = spec.delta
    if kind == "cond_exp" and ratio_source == "exact":
        t = batch.t[:, None]
        here = log_transition_pmf(batch.xt, batch.x0, t, spec)
        up = log_transition_pmf(batch.xt + 1, batch.x0, t, spec)
        down = log_transition_pmf(batch.xt - 1, batch.x0, t, spec)
        mask = np.isfinite(here)
        safe = np.where(mask, here, 0.0)
        with np.errstate(invalid="ignore"):
            tb = np.exp(np.where(mask, up - safe, -np.inf))
            td = np.exp(np.where(mask, down - safe, -np.inf))
        return {"phi_b": tb, "phi_d": td}, mask
    if kind == "cond_exp" and ratio_source != "gaussian":
        raise DomainError(f"unknown ratio source {ratio_source!r}")
    mu, var = _ou_moments(batch, spec)
    mask = var >= MIN_VARIANCE
    safe_var = np.where(mask, var, 1.0)
    if kind in ("cond_exp", "gauss"):
        out = {}
        for head, sign in (("phi_b", 1.0), ("phi_d", -1.0)):
            log_ratio = (-sign * 2.0 * (x - mu) * d - d * d) / (2.0 * safe_var)
            out[head] = np.exp(np.minimum(log_ratio, LOG_CLIP))
        return out, mask
    if kind == "taylor":
        return {"mu_hat": mu}, np.ones_like(mask)
    if kind == "taylor2":
        return {"mu_hat": mu, "quad_hat": ((x - mu) * d) ** 2}, np.ones_like(mask)
    if kind == "ou":
        return {"score_hat": -(x - mu) / safe_var}, mask
    raise DomainError(f"no regression targets for loss kind {kind!r}")


def squared_error(outputs: dict, targets: dict, mask: np.ndarray, batch: SampleBatch) -> LossResult:
    """Weighted mean over samples and dimensions of the summed per-head squared error."""
    w = _weights(batch) * mask
    norm = float(w.sum())
    n_excluded = int((~mask).sum())
    if norm <= 0:
        return LossResult(0.0, {h: np.zeros_like(targets[h]) for h in targets}, n_excluded)
    value = 0.0
    grads = {}
    for head, target in targets.items():
        err = np.where(mask, outputs[head] - np.where(mask, target, 0.0), 0.0)
        value += float(np.sum(w * err * err)) / norm
        grads[head] = 2.0 * w * err / norm
    return LossResult(value, grads, n_excluded)


def _cell_bounds(x0: np.ndarray, S: int):
    """Scaled cell (x0 - delta, x0] with the outermost cells opened to infinity."""
    edge = 2.0 / math.sqrt(S) * (np.asarray(x0, dtype=np.float64) - 0.5 * S)
    hi = np.where(x0 >= S, np.inf, edge)
    lo = np.where(x0 <= 0, -np.inf, edge - 2.0 / math.sqrt(S))
    return lo, hi


def _log_interval_mass(a, b):
    """log(Phi(b) - Phi(a)) for a < b, using the far tail on whichever side is safer."""
    right = a > 0
    hi = np.where(right, -a, b)
    lo = np.where(right, -b, a)
    lh, ll = log_ndtr(hi), log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return lh + np.log(-np.expm1(ll - lh))


def _log_normal_pdf(z):
    return np.where(np.isfinite(z), -0.5 * z * z - 0.5 * math.log(2.0 * math.pi), -np.inf)


def discretized_gaussian_log_masses(mean, logvar, S: int) -> np.ndarray:
    """log p(x0 | x_t) for every x0 under the CDF-binned Gaussian; last axis has S + 1 cells."""
    mean = np.asarray(mean, dtype=np.float64)[..., None]
    sd = np.sqrt(np.maximum(np.exp(np.asarray(logvar, dtype=np.float64)), ML_VARIANCE_FLOOR))[..., None]
    lo, hi = _cell_bounds(np.arange(S + 1), S)
    return _log_interval_mass((lo - mean) / sd, (hi - mean) / sd)


def ml_loss(outputs: dict, batch: SampleBatch, spec: EhrenfestSpec) -> LossResult:
    """Negative log-likelihood of x0 under the discretized Gaussian heads."""
    mean, logvar = outputs["gauss_mean"], outputs["gauss_logvar"]
    var = np.exp(logvar)
    floored = var < ML_VARIANCE_FLOOR
    sd = np.sqrt(np.maximum(var, ML_VARIANCE_FLOOR))
    lo, hi = _cell_bounds(batch.x0, spec.S)
    a, b = (lo - mean) / sd, (hi - mean) / sd
    log_mass = _log_interval_mass(a, b)
    w = _weights(batch)
    norm = float(w.sum())
    value = -float(np.sum(w * log_mass)) / norm
    # d log M / d mean = (pdf(a) - pdf(b)) / (sd M); d log M / d logvar = (a pdf(a) - b pdf(b)) / (2 M)
    ra = np.exp(_log_normal_pdf(a) - log_mass)
    rb = np.exp(_log_normal_pdf(b) - log_mass)
    # infinite cell edges carry zero density
    a_ra = np.where(np.isfinite(a), np.nan_to_num(a) * ra, 0.0)
    b_rb = np.where(np.isfinite(b), np.nan_to_num(b) * rb, 0.0)
    g_mean = (ra - rb) / sd
    g_logvar = np.where(floored, 0.0, 0.5 * (a_ra - b_rb))
    scale = -w / norm
    return LossResult(value, {"gauss_mean": scale * g_mean, "gauss_logvar": scale * g_logvar})


def evaluate_loss(kind: str, outputs: dict, batch: SampleBatch, spec: EhrenfestSpec, ratio_source="exact", targets=None):
    """``targets`` may carry a precomputed ``regression_targets`` result for this batch."""
    if kind == "ml":
        return ml_loss(outputs, batch, spec)
    if targets is None:
        targets = regression_targets(kind, batch, spec, ratio_source)
    return squared_error(outputs, targets[0], targets[1], batch)


def loss_and_grad(kind: str, approx, batch: SampleBatch, spec: EhrenfestSpec, ratio_source="exact", targets=None):
    """(value, flat parameter gradient, number of excluded entries)."""
    missing = set(LOSS_HEADS[kind]) - set(approx.heads)
    if missing:
        raise DomainError(f"loss {kind!r} needs heads {sorted(missing)}")
    x = scale_state(batch.xt, spec.S)
    outputs, cache = approx.forward(x, batch.t)
    res = evaluate_loss(kind, outputs, batch, spec, ratio_source, targets)
    return res.value, approx.backward(cache, res.grads), res.n_excluded


def _value(kind, approx, batch, spec, ratio_source="exact") -> float:
    outputs = approx(scale_state(batch.xt, spec.S), batch.t)
    return evaluate_loss(kind, outputs, batch, spec, ratio_source).value


def loss_cond_exp(approx, batch, spec, ratio_source="exact") -> float:
    return _value("cond_exp", approx, batch, spec, ratio_source)


def loss_gauss(approx, batch, spec) -> float:
    return _value("gauss", approx, batch, spec)


def loss_taylor(approx, batch, spec) -> float:
    return _value("taylor", approx, batch, spec)


def loss_taylor2(approx, batch, spec) -> float:
    """Second-moment regression of the quad_hat head alone."""
    outputs = approx(scale_state(batch.xt, spec.S), batch.t)
    targets, mask = regression_targets("taylor2", batch, spec)
    return squared_error(outputs, {"quad_hat": targets["quad_hat"]}, mask, batch).value


def loss_ou(approx, batch, spec) -> float:
    return _value("ou", approx, batch, spec)


def loss_ml(approx, batch, spec) -> float:
    return _value("ml", approx, batch, spec)


def grid_batch(p_data, spec: EhrenfestSpec, times) -> SampleBatch:
    """Every (x0, t, x) triple with weight p_data(x0) p_{t|0}(x | x0) / len(times); d = 1.

    Zero-weight triples are dropped. Minimising a weighted loss over this batch
    is minimising its exact expectation restricted to the given times.
    """
    p0 = np.asarray(getattr(p_data, "pmf", p_data), dtype=np.float64)
    if p0.ndim != 1 or p0.size != spec.S + 1:
        raise DomainError("grid batches need a one-dimensional pmf on S + 1 states")
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    rows_x0, rows_t, rows_x, rows_w = [], [], [], []
    states = np.arange(spec.S + 1)
    for t in times:
        P = np.exp(log_transition_matrix(float(t), spec))
        joint = P * p0[None, :] / times.size
        xs, x0s = np.nonzero(joint > 0)
        rows_x0.append(states[x0s])
        rows_x.append(states[xs])
        rows_t.append(np.full(xs.size, t))
        rows_w.append(joint[xs, x0s])
    return SampleBatch(
        np.concatenate(rows_x0)[:, None],
        np.concatenate(rows_t),
        np.concatenate(rows_x)[:, None],
        np.concatenate(rows_w),
    )


def bayes_optimal_heads(kind: str, t: float, p_data, spec: EhrenfestSpec, ratio_source="exact") -> dict:
    """E[target | x_t = x] for every state x under the exact posterior (d = 1).

    Entries for states with p_t(x) = 0 are NaN.
    """
    p0 = np.asarray(getattr(p_data, "pmf", p_data), dtype=np.float64)
    S = spec.S
    L = log_transition_matrix(t, spec)
    with np.errstate(divide="ignore"):
        joint = L + np.log(p0)[None, :]
    log_pt = logsumexp(joint, axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        post = np.exp(joint - log_pt)
    post = np.nan_to_num(post)
    states = np.arange(S + 1)
    xx, aa = np.meshgrid(states, states, indexing="ij")
    batch = SampleBatch(aa.reshape(-1, 1), np.full(xx.size, t), xx.reshape(-1, 1))
    targets, mask = regression_targets(kind, batch, spec, ratio_source)
    reachable = np.isfinite(log_pt[:, 0])
    out = {}
    for head, tgt in targets.items():
        tgt = np.where(mask, tgt, 0.0).reshape(S + 1, S + 1)
        val = np.sum(post * tgt, axis=1)
        out[head] = np.where(reachable, val, np.nan)
    return out
