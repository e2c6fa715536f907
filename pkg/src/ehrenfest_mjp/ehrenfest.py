"""The Ehrenfest birth-death process and its scaled variant.

States are kept as integer indices ``x in {0, ..., S}`` internally. The
scaled coordinate is ``(2 / sqrt(S)) (x - S/2)`` on the lattice
``{-sqrt(S), -sqrt(S) + 2/sqrt(S), ..., sqrt(S)}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DomainError
from .jump_core import RateMatrix, RateSchedule, build_rate_matrix

_CHUNK = 1 << 22


@dataclass(frozen=True)
class EhrenfestSpec:
    """Fixes one process instance: ``S + 1`` states per dimension on ``[0, T]``."""

    S: int
    T: float = 1.0
    schedule: RateSchedule = field(default_factory=RateSchedule.constant)
    t_min: float = 0.01

    def __post_init__(self):
        if int(self.S) != self.S or self.S < 1:
            raise DomainError(f"S must be an integer >= 1, got {self.S}")
        if not 0 <= self.t_min < self.T:
            raise DomainError(f"need 0 <= t_min < T, got t_min={self.t_min}, T={self.T}")
        if self.T > self.schedule.t_max:
            raise DomainError(f"T={self.T} exceeds the schedule domain")
        object.__setattr__(self, "S", int(self.S))

    @property
    def n_states(self) -> int:
        return self.S + 1

    @property
    def sqrt_S(self) -> float:
        return math.sqrt(self.S)

    @property
    def delta(self) -> float:
        """Lattice spacing of the scaled process."""
        return 2.0 / math.sqrt(self.S)

    def tau(self, t):
        return self.schedule.tau(t)

    def rate_scale(self, t):
        return self.schedule.rate_at(t)

    @classmethod
    def rgb_255(cls, T: float = 1.0, t_min: float = 0.01) -> "EhrenfestSpec":
        """S = 255**2: the 256 lattice points in [-1, 1] are spaced by 2/255."""
        return cls(255**2, T, RateSchedule.ddpm(), t_min)

    @classmethod
    def rgb_256(cls, T: float = 1.0, t_min: float = 0.01) -> "EhrenfestSpec":
        """S = 256**2, the alternative sizing used for image experiments."""
        return cls(256**2, T, RateSchedule.ddpm(), t_min)


@dataclass(frozen=True)
class OUStats:
    mean_factor: float
    variance: float


# --- coordinates -----------------------------------------------------------


def scale_state(x, S: int):
    """Index -> scaled coordinate."""
    x = np.asarray(x)
    if np.any(x < 0) or np.any(x > S):
        raise DomainError(f"state outside {{0, ..., {S}}}")
    out = (2.0 / math.sqrt(S)) * (x - 0.5 * S)
    return out if out.ndim else float(out)


def unscale_state(xt, S: int, tol: float = 1e-9):
    """Scaled coordinate -> index; raises if off the lattice by more than ``tol``."""
    xt = np.asarray(xt, dtype=np.float64)
    k = xt * (0.5 * math.sqrt(S)) + 0.5 * S
    ki = np.rint(k)
    back = (2.0 / math.sqrt(S)) * (ki - 0.5 * S)
    if np.any(np.abs(back - xt) > tol):
        raise DomainError("value is not on the scaled lattice")
    if np.any(ki < 0) or np.any(ki > S):
        raise DomainError("value outside [-sqrt(S), sqrt(S)]")
    out = ki.astype(np.int64)
    return out if np.ndim(out) else int(out)


# --- rates -----------------------------------------------------------------


def ehrenfest_rates(x, spec: EhrenfestSpec, t: float = 0.0):
    """(birth, death) = lambda_t ((S - x)/2, x/2)."""
    x = np.asarray(x)
    if np.any(x < 0) or np.any(x > spec.S):
        raise DomainError(f"state outside {{0, ..., {spec.S}}}")
    lam = spec.rate_scale(t)
    birth = lam * 0.5 * (spec.S - x)
    death = lam * 0.5 * x
    if birth.ndim == 0:
        return float(birth), float(death)
    return birth, death


def scaled_rates(xt, spec: EhrenfestSpec, t: float = 0.0):
    """(birth, death) = lambda_t (sqrt(S)/4) (sqrt(S) -/+ x) for jumps of size 2/sqrt(S)."""
    xt = np.asarray(xt, dtype=np.float64)
    r = spec.sqrt_S
    if np.any(np.abs(xt) > r + 1e-9):
        raise DomainError("|x| exceeds sqrt(S)")
    lam = spec.rate_scale(t)
    birth = np.maximum(lam * 0.25 * r * (r - xt), 0.0)
    death = np.maximum(lam * 0.25 * r * (r + xt), 0.0)
    if birth.ndim == 0:
        return float(birth), float(death)
    return birth, death


def ehrenfest_rate_matrix(spec: EhrenfestSpec, t: float = 0.0) -> RateMatrix:
    lam = float(spec.rate_scale(t))
    S = spec.S
    return build_rate_matrix(lambda x: lam * 0.5 * (S - x), lambda x: lam * 0.5 * x, S)


# --- binomial machinery ----------------------------------------------------


def _log_binom(k, n, logp, log1mp):
    """log Binomial(k; n, p) from log p and log(1-p); -inf off-support."""
    k = np.asarray(k)
    n = np.asarray(n)
    valid = (k >= 0) & (k <= n)
    kk = np.where(valid, k, 0)
    nk = np.where(valid, n - kk, 0)
    with np.errstate(invalid="ignore"):
        out = (
            gammaln(n + 1.0)
            - gammaln(kk + 1.0)
            - gammaln(nk + 1.0)
            + np.where(kk > 0, kk * logp, 0.0)
            + np.where(nk > 0, nk * log1mp, 0.0)
        )
    return np.where(valid, out, -np.inf)


def log_binomial_pmf(k, n, p: float):
    with np.errstate(divide="ignore"):
        return _log_binom(k, n, np.log(p), np.log1p(-p))


def stay_log_probs(tau):
    """log f and log(1 - f) with f = (1 + e^{-tau}) / 2, accurate for small tau."""
    tau = np.asarray(tau, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_f = np.log1p(np.exp(-tau)) - math.log(2.0)
        log_1mf = np.log(-np.expm1(-tau)) - math.log(2.0)
    return log_f, log_1mf


def stay_probability(t, spec: EhrenfestSpec):
    """f(t): probability that a single telegraph bit is unchanged after time t."""
    return 0.5 * (1.0 + np.exp(-np.asarray(spec.tau(t))))


def sample_forward(x0, t, spec: EhrenfestSpec, rng: np.random.Generator):
    """Simulation-free draw of ``E(t)`` given ``E(0) = x0`` (two binomials)."""
    x0 = np.asarray(x0, dtype=np.int64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(x0 < 0) or np.any(x0 > spec.S):
        raise DomainError("x0 outside state space")
    f = stay_probability(t, spec)
    one_minus_f = -0.5 * np.expm1(-np.asarray(spec.tau(t)))
    x0b, fb, qb = np.broadcast_arrays(x0, f, one_minus_f)
    out = rng.binomial(spec.S - x0b, qb) + rng.binomial(x0b, fb)
    return out if np.ndim(out) else int(out)


def log_transition_pmf(x, x0, t, spec: EhrenfestSpec):
    """log p_{t|0}(x | x0), vectorised by broadcasting over (x, x0, t).

    Evaluates the binomial convolution in log space; unreachable entries are -inf.
    """
    x, x0, t = np.broadcast_arrays(
        np.asarray(x, dtype=np.int64), np.asarray(x0, dtype=np.int64), np.asarray(t, dtype=np.float64)
    )
    shape = x.shape
    x, x0, t = x.ravel(), x0.ravel(), t.ravel()
    S = spec.S
    log_f, log_1mf = stay_log_probs(spec.tau(t))
    out = np.full(x.shape, -np.inf)
    inside = (x >= 0) & (x <= S)
    z = np.arange(S + 1)
    step = max(1, _CHUNK // (S + 1))
    for lo in range(0, x.size, step):
        sl = slice(lo, lo + step)
        xx, aa = x[sl, None], x0[sl, None]
        lf, l1 = log_f[sl, None], log_1mf[sl, None]
        # z flips up from the S - x0 zeros, x - z bits stay on among the x0 ones
        terms = _log_binom(z[None, :], S - aa, l1, lf) + _log_binom(xx - z[None, :], aa, lf, l1)
        out[sl] = logsumexp(terms, axis=1)
    out = np.where(inside, out, -np.inf)
    out = out.reshape(shape)
    return out if out.ndim else float(out)


def forward_transition_pmf(x, x0, t, spec: EhrenfestSpec):
    out = np.exp(log_transition_pmf(x, x0, t, spec))
    return out if np.ndim(out) else float(out)


def _log_convolve(la: np.ndarray, lb: np.ndarray) -> np.ndarray:
    n = la.size + lb.size - 1
    out = np.empty(n)
    z = np.arange(la.size)
    step = max(1, _CHUNK // la.size)
    for lo in range(0, n, step):
        xs = np.arange(lo, min(n, lo + step))
        w = xs[:, None] - z[None, :]
        valid = (w >= 0) & (w < lb.size)
        terms = np.where(valid, la[None, :] + lb[np.clip(w, 0, lb.size - 1)], -np.inf)
        out[lo : lo + xs.size] = logsumexp(terms, axis=1)
    return out


def log_transition_column(x0: int, t: float, spec: EhrenfestSpec) -> np.ndarray:
    """log p_{t|0}(. | x0) over all S + 1 target states."""
    S = spec.S
    if not 0 <= x0 <= S:
        raise DomainError("x0 outside state space")
    log_f, log_1mf = stay_log_probs(spec.tau(t))
    la = _log_binom(np.arange(S - x0 + 1), S - x0, log_1mf, log_f)
    lb = _log_binom(np.arange(x0 + 1), x0, log_f, log_1mf)
    return _log_convolve(la, lb)


def log_transition_row(x: int, t: float, spec: EhrenfestSpec) -> np.ndarray:
    """log p_{t|0}(x | .) over all S + 1 initial states, by detailed balance.

    The process is reversible with respect to Binomial(S, 1/2), so
    p(x | x0) = pi(x) p(x0 | x) / pi(x0).
    """
    S = spec.S
    ks = np.arange(S + 1)
    log_pi = log_binomial_pmf(ks, S, 0.5)
    return log_pi[x] + log_transition_column(x, t, spec) - log_pi


def log_transition_matrix(t: float, spec: EhrenfestSpec) -> np.ndarray:
    """Matrix ``L[x, x0] = log p_{t|0}(x | x0)``."""
    S = spec.S
    cols = [log_transition_column(x0, t, spec) for x0 in range(S + 1)]
    return np.stack(cols, axis=1)


def transition_matrix(t: float, spec: EhrenfestSpec) -> np.ndarray:
    return np.exp(log_transition_matrix(t, spec))


def forward_marginal(p0: np.ndarray, t: float, spec: EhrenfestSpec) -> np.ndarray:
    """p_t = P(t) p0 for a one-dimensional initial pmf."""
    return transition_matrix(t, spec) @ np.asarray(p0, dtype=np.float64)


# --- Gaussian (Ornstein-Uhlenbeck) approximation ---------------------------


def ou_stats(t, spec: EhrenfestSpec) -> OUStats:
    """Mean factor e^{-tau(t)} and variance 1 - e^{-2 tau(t)}."""
    tau = spec.tau(t)
    return OUStats(float(np.exp(-tau)), float(-np.expm1(-2.0 * tau)))


def gaussian_ratio(x, x0, t, spec: EhrenfestSpec, sign: int):
    """Gaussian approximation of p_{t|0}(x + sign*delta | x0) / p_{t|0}(x | x0).

    ``x`` and ``x0`` are scaled coordinates; ``sign`` is +1 (birth) or -1 (death).
    """
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    tau = np.asarray(spec.tau(t), dtype=np.float64)
    var = -np.expm1(-2.0 * tau)
    if np.any(var <= 0):
        raise DomainError("sigma_t^2 = 0; the Gaussian ratio is undefined at t = 0")
    d = spec.delta
    mu = np.asarray(x0) * np.exp(-tau)
    out = np.exp((-sign * 2.0 * (np.asarray(x) - mu) * d - d * d) / (2.0 * var))
    return out if np.ndim(out) else float(out)
