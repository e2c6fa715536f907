"""Time reversal of the Ehrenfest process.

Exact reverse rates are computed as explicit Bayes-weighted sums over the
initial state. The score bridge maps between pmf ratios of neighbouring
lattice points and a continuous score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .ehrenfest import (
    EhrenfestSpec,
    log_transition_matrix,
    log_transition_row,
    ou_stats,
    scale_state,
    unscale_state,
)
from .errors import DomainError, UnreachableStateError


@dataclass(frozen=True)
class BackwardRates:
    """Reverse rates out of a state towards its upper (birth) and lower (death) neighbour."""

    birth: np.ndarray | float
    death: np.ndarray | float
    step: float = 1.0


@dataclass(frozen=True)
class RatioPair:
    """Conditional expectations of the neighbour pmf ratios (up, down)."""

    phi_b: np.ndarray | float
    phi_d: np.ndarray | float


@dataclass(frozen=True)
class JumpMoments:
    b: float
    D: float


@dataclass(frozen=True)
class ReversedJumpMoments:
    """Jump moments of the exact reverse process next to their asymptotic forms."""

    reverse: JumpMoments
    forward: JumpMoments
    predicted_b: float
    predicted_D: float

    @property
    def residual_b(self) -> float:
        return abs(self.reverse.b - self.predicted_b)

    @property
    def residual_D(self) -> float:
        return abs(self.reverse.D - self.predicted_D)


def _log_p0(p_data) -> np.ndarray:
    p = np.asarray(getattr(p_data, "pmf", p_data), dtype=np.float64)
    if p.ndim != 1:
        raise DomainError("exact reversal is one-dimensional; pass a 1-D pmf")
    with np.errstate(divide="ignore"):
        return np.log(p)


def reverse_swapped_forward_rates(x, spec: EhrenfestSpec, t: float):
    """Forward rates with swapped argument, r_t(x | x+1) and r_t(x | x-1).

    These multiply the ratio expectations to give reverse rates; they are
    set to zero where the neighbour lies outside the lattice.
    """
    x = np.asarray(x)
    lam = spec.rate_scale(t)
    up = np.where(x < spec.S, lam * 0.5 * (x + 1), 0.0)
    down = np.where(x > 0, lam * 0.5 * (spec.S - x + 1), 0.0)
    return up, down


def ratio_expectation_table(t: float, p_data, spec: EhrenfestSpec) -> RatioPair:
    """phi_b(x), phi_d(x) for every state, via full Bayes sums over x0.

    phi(x) = sum_x0 p_{0|t}(x0 | x) p_{t|0}(x +/- 1 | x0) / p_{t|0}(x | x0).
    """
    S = spec.S
    log_p0 = _log_p0(p_data)
    if log_p0.size != S + 1:
        raise DomainError("p_data has the wrong number of states")
    L = log_transition_matrix(t, spec)
    joint = L + log_p0[None, :]
    log_pt = logsumexp(joint, axis=1)
    if np.any(~np.isfinite(log_pt)):
        bad = np.flatnonzero(~np.isfinite(log_pt))
        raise UnreachableStateError(f"states {bad.tolist()} have p_t = 0 at t={t}")
    log_w = joint - log_pt[:, None]
    with np.errstate(invalid="ignore"):
        up = np.where(np.isfinite(log_w[:-1]), log_w[:-1] + L[1:] - L[:-1], -np.inf)
        down = np.where(np.isfinite(log_w[1:]), log_w[1:] + L[:-1] - L[1:], -np.inf)
    phi_b = np.append(np.exp(logsumexp(up, axis=1)), 0.0)
    phi_d = np.insert(np.exp(logsumexp(down, axis=1)), 0, 0.0)
    return RatioPair(phi_b, phi_d)


def posterior(x: int, t: float, p_data, spec: EhrenfestSpec) -> np.ndarray:
    """p_{0|t}(. | x) by Bayes' rule."""
    log_p0 = _log_p0(p_data)
    lw = log_transition_row(x, t, spec) + log_p0
    norm = logsumexp(lw)
    if not np.isfinite(norm):
        raise UnreachableStateError(f"state {x} has p_t = 0 at t={t}")
    return np.exp(lw - norm)


def ratio_expectation(x: int, t: float, p_data, spec: EhrenfestSpec) -> RatioPair:
    """phi_b, phi_d at a single state; uses rows only, so it scales to large S."""
    S = spec.S
    log_p0 = _log_p0(p_data)
    row = log_transition_row(x, t, spec)
    lw = row + log_p0
    norm = logsumexp(lw)
    if not np.isfinite(norm):
        raise UnreachableStateError(f"state {x} has p_t = 0 at t={t}")
    lw = lw - norm
    out = []
    for y in (x + 1, x - 1):
        if y < 0 or y > S:
            out.append(0.0)
            continue
        with np.errstate(invalid="ignore"):
            terms = np.where(np.isfinite(lw), lw + log_transition_row(y, t, spec) - row, -np.inf)
        out.append(float(np.exp(logsumexp(terms))))
    return RatioPair(out[0], out[1])


def exact_backward_rates(x, t: float, p_data, spec: EhrenfestSpec) -> BackwardRates:
    """Reverse rates r<-_t(x +/- 1 | x) from the exact conditional expectation."""
    if t < 0 or t > spec.T:
        raise DomainError(f"t={t} outside [0, {spec.T}]")
    x_arr = np.asarray(x)
    if np.any(x_arr < 0) or np.any(x_arr > spec.S):
        raise DomainError("state outside the lattice")
    table = ratio_expectation_table(t, p_data, spec)
    up, down = reverse_swapped_forward_rates(x_arr, spec, t)
    birth = np.asarray(table.phi_b)[x_arr] * up
    death = np.asarray(table.phi_d)[x_arr] * down
    if birth.ndim == 0:
        return BackwardRates(float(birth), float(death))
    return BackwardRates(birth, death)


def backward_rate_table(t: float, p_data, spec: EhrenfestSpec) -> BackwardRates:
    """Exact reverse rates for every state at time t."""
    return exact_backward_rates(np.arange(spec.S + 1), t, p_data, spec)


def jump_moments(birth, death, step: float) -> JumpMoments:
    """First and second jump moments of a birth-death step of size ``step``."""
    return JumpMoments(step * (birth - death), step * step * (birth + death))


def reversed_jump_moments(xt: float, t: float, p_data, spec: EhrenfestSpec) -> ReversedJumpMoments:
    """Jump moments of the exact reversal at scaled state ``xt``.

    ``predicted_b`` is -b + D E[Delta p / p] with the forward one-step
    difference Delta; ``predicted_D`` is the forward D.
    """
    x = unscale_state(xt, spec.S)
    d = spec.delta
    ratios = ratio_expectation(x, t, p_data, spec)
    up, down = reverse_swapped_forward_rates(x, spec, t)
    rev = jump_moments(ratios.phi_b * float(up), ratios.phi_d * float(down), d)
    lam = float(spec.rate_scale(t))
    fb, fd = lam * 0.5 * (spec.S - x), lam * 0.5 * x
    fwd = jump_moments(fb, fd, d)
    mean_diff_quotient = (ratios.phi_b - 1.0) / d
    return ReversedJumpMoments(rev, fwd, -fwd.b + fwd.D * mean_diff_quotient, fwd.D)


def score_to_ratio(score, S: int) -> RatioPair:
    """phi = 1 +/- (2/sqrt(S)) score, clamped below at zero."""
    d = 2.0 / np.sqrt(S)
    s = np.asarray(score, dtype=np.float64)
    phi_b = np.maximum(1.0 + d * s, 0.0)
    phi_d = np.maximum(1.0 - d * s, 0.0)
    if phi_b.ndim == 0:
        return RatioPair(float(phi_b), float(phi_d))
    return RatioPair(phi_b, phi_d)


def ratio_to_score(pair: RatioPair, S: int):
    """Symmetric score estimate (phi_b - phi_d) sqrt(S) / 4."""
    out = (np.asarray(pair.phi_b) - np.asarray(pair.phi_d)) * np.sqrt(S) / 4.0
    return out if np.ndim(out) else float(out)


def taylor_ratio(xt, phi1, phi2, t, spec: EhrenfestSpec, sign: int):
    """Taylor-expanded ratio expectation.

    exp(-delta^2 / 2 sigma^2) (1 -/+ (x - phi1) delta / sigma^2 [+ phi2 / (2 sigma^4)]),
    clamped at zero. ``phi1`` estimates E[mu_t(x0) | x], ``phi2`` estimates
    E[((x - mu_t(x0)) delta)^2 | x] and may be None.
    """
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    tau = np.asarray(spec.tau(t), dtype=np.float64)
    var = -np.expm1(-2.0 * tau)
    d = spec.delta
    with np.errstate(divide="ignore", invalid="ignore"):
        poly = 1.0 - sign * (np.asarray(xt) - np.asarray(phi1)) * d / var
        if phi2 is not None:
            poly = poly + np.asarray(phi2) / (2.0 * var * var)
        out = np.exp(-d * d / (2.0 * var)) * poly
    out = np.maximum(np.nan_to_num(out, nan=0.0), 0.0)
    return out if np.ndim(out) else float(out)


def conditional_taylor_moments(x: int, t: float, p_data, spec: EhrenfestSpec):
    """E[mu_t(x0) | x] and E[((x - mu_t(x0)) delta)^2 | x] under the exact posterior."""
    w = posterior(x, t, p_data, spec)
    m = ou_stats(t, spec).mean_factor
    mu = scale_state(np.arange(spec.S + 1), spec.S) * m
    xt = scale_state(x, spec.S)
    return float(w @ mu), float(w @ ((xt - mu) * spec.delta) ** 2)
