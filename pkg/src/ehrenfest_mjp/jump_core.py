"""Finite-state Markov jump process machinery.

Conventions follow the column form used throughout the package: a rate
matrix ``R`` stores ``R[x, y] = r(x | y)``, the rate of jumping from ``y`` to
``x``. Columns of ``R`` sum to zero and columns of ``exp(t R)`` sum to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, NumericError

MAX_ORACLE_STATES = 4097
_COLUMN_TOL = 1e-10


def make_rng(seed: int | None | np.random.Generator) -> np.random.Generator:
    """Return a PCG64 generator; generators pass through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent child streams derived from one root seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]


@dataclass(frozen=True)
class RateMatrix:
    """Generator of a finite-state jump process, ``entries[x, y] = r(x|y)``."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DomainError(f"rate matrix must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError("rate matrix has non-finite entries")
        off = a - np.diag(np.diag(a))
        if np.any(off < 0):
            raise DomainError("off-diagonal rates must be non-negative")
        scale = max(1.0, float(np.abs(a).max()))
        if np.any(np.abs(a.sum(axis=0)) > 1e-9 * scale):
            raise DomainError("columns of a rate matrix must sum to zero")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.entries).copy()


@dataclass(frozen=True)
class TransitionMatrix:
    """``entries[x, y] = p_{t|0}(x | y)``; each column is a pmf."""

    t: float
    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.float64)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def column(self, y: int) -> np.ndarray:
        return self.entries[:, y]


def build_rate_matrix(
    birth: Callable[[int], float], death: Callable[[int], float], S: int
) -> RateMatrix:
    """Tridiagonal generator of a birth-death process on ``{0, ..., S}``."""
    if S < 0:
        raise DomainError("S must be non-negative")
    n = S + 1
    b = np.array([float(birth(x)) for x in range(n)])
    d = np.array([float(death(x)) for x in range(n)])
    if np.any(~np.isfinite(b)) or np.any(~np.isfinite(d)):
        raise DomainError("rates must be finite")
    if np.any(b < 0) or np.any(d < 0):
        raise DomainError("rates must be non-negative")
    if b[S] != 0.0:
        raise DomainError(f"birth({S}) = {b[S]} would leave the state space")
    if d[0] != 0.0:
        raise DomainError(f"death(0) = {d[0]} would leave the state space")
    R = np.zeros((n, n))
    idx = np.arange(n)
    R[idx[:-1] + 1, idx[:-1]] = b[:-1]
    R[idx[1:] - 1, idx[1:]] = d[1:]
    R[idx, idx] = -(b + d)
    return RateMatrix(R)


def solve_master_equation(R: RateMatrix, t: float) -> TransitionMatrix:
    """Exact ``exp(t R)`` via scaling-and-squaring Padé (scipy)."""
    if t < 0:
        raise DomainError(f"t must be non-negative, got {t}")
    if R.size > MAX_ORACLE_STATES:
        raise DomainError(f"dense oracle limited to {MAX_ORACLE_STATES} states")
    with np.errstate(over="raise", invalid="raise"):
        try:
            P = expm(t * R.entries)
        except FloatingPointError as exc:
            raise NumericError(f"matrix exponential overflowed at t={t}") from exc
    if not np.all(np.isfinite(P)):
        raise NumericError(f"matrix exponential not finite at t={t}")
    # round-off can leave entries a hair outside [0, 1]
    if P.min() < -1e-9 or P.max() > 1 + 1e-9:
        raise NumericError("matrix exponential is not stochastic")
    P = np.clip(P, 0.0, 1.0)
    return TransitionMatrix(float(t), P)


def adaptive_simpson(
    f: Callable[[float], float], a: float, b: float, tol: float = 1e-10, max_depth: int = 50
) -> float:
    """Adaptive Simpson quadrature with absolute tolerance ``tol``."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return recurse(a, m, fa, flm, fm, left, tol / 2, depth - 1) + recurse(
            m, b, fm, frm, fb, right, tol / 2, depth - 1
        )

    if b == a:
        return 0.0
    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


@dataclass(frozen=True)
class RateSchedule:
    """Time-dependent multiplier ``lambda_t`` of a homogeneous generator.

    ``constant``: lambda_t = rate.
    ``ddpm``: lambda_t = beta(t) / 2 with beta linear from beta_min to beta_max on [0, 1].
    ``cosine``: lambda_t = (pi/4) tan(pi t / 2) clamped to [0, cap], defined on [0, 1].
    """

    kind: str = "constant"
    rate: float = 1.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    cap: float = 500.0

    def __post_init__(self):
        if self.kind not in ("constant", "ddpm", "cosine"):
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and self.rate < 0:
            raise DomainError("constant rate must be non-negative")
        if self.kind == "ddpm" and (self.beta_min < 0 or self.beta_max < 0):
            raise DomainError("beta_min and beta_max must be non-negative")
        if self.kind == "cosine" and self.cap <= 0:
            raise DomainError("cosine cap must be positive")

    @classmethod
    def constant(cls, rate: float = 1.0) -> "RateSchedule":
        return cls("constant", rate=rate)

    @classmethod
    def ddpm(cls, beta_min: float = 0.1, beta_max: float = 20.0) -> "RateSchedule":
        return cls("ddpm", beta_min=beta_min, beta_max=beta_max)

    @classmethod
    def cosine(cls, cap: float = 500.0) -> "RateSchedule":
        return cls("cosine", cap=cap)

    @property
    def t_max(self) -> float:
        return math.inf if self.kind == "constant" else 1.0

    def _cosine_knee(self) -> float:
        # time after which the clamp is active
        return 2.0 / math.pi * math.atan(4.0 * self.cap / math.pi)

    def rate_at(self, t):
        """lambda_t, vectorised over ``t``."""
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "constant":
            out = np.full_like(t, self.rate)
        elif self.kind == "ddpm":
            out = 0.5 * (self.beta_min + t * (self.beta_max - self.beta_min))
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                raw = 0.25 * math.pi * np.tan(0.5 * math.pi * np.minimum(t, 1.0))
            raw = np.where(t >= self._cosine_knee(), self.cap, raw)
            out = np.clip(raw, 0.0, self.cap)
        return out if out.ndim else float(out)

    def tau(self, t):
        """Integrated rate ``tau(t) = int_0^t lambda_s ds`` in closed form."""
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "constant":
            out = self.rate * t
        elif self.kind == "ddpm":
            out = 0.5 * (self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t)
        else:
            knee = self._cosine_knee()
            tc = np.minimum(t, knee)
            out = -0.5 * np.log(np.cos(0.5 * math.pi * tc))
            out = out + self.cap * np.maximum(t - knee, 0.0)
        return out if out.ndim else float(out)


def time_transform(
    schedule: RateSchedule, t, T: float | None = None, method: str = "closed"
):
    """Dimensionless time ``tau(t)``.

    ``method="quadrature"`` integrates ``lambda`` with adaptive Simpson
    (absolute tolerance 1e-10) instead of using the antiderivative.
    """
    upper = schedule.t_max if T is None else T
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr > upper):
        raise DomainError(f"t must lie in [0, {upper}]")
    if method == "closed":
        return schedule.tau(t)
    if method != "quadrature":
        raise DomainError(f"unknown method {method!r}")
    f = lambda s: float(schedule.rate_at(s))
    vals = [adaptive_simpson(f, 0.0, float(s), tol=1e-10) for s in arr.ravel()]
    out = np.array(vals).reshape(arr.shape)
    return out if out.ndim else float(out)


@dataclass
class Trajectory:
    """Piecewise-constant path: ``states[i]`` holds on ``[times[i], times[i+1])``."""

    times: list[float] = field(default_factory=list)
    states: list[int] = field(default_factory=list)
    horizon: float = 0.0

    @property
    def n_jumps(self) -> int:
        return len(self.states) - 1

    def state_at(self, t: float) -> int:
        if t < 0 or t > self.horizon:
            raise DomainError(f"t={t} outside [0, {self.horizon}]")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[i]


def gillespie_simulate(
    R: RateMatrix, x0: int, T: float, rng: np.random.Generator
) -> Trajectory:
    """Exact event-driven sample path of the homogeneous process on [0, T]."""
    if not 0 <= x0 < R.size:
        raise DomainError(f"x0={x0} outside state space")
    A = R.entries
    times, states = [0.0], [int(x0)]
    t, x = 0.0, int(x0)
    while True:
        exit_rate = -A[x, x]
        if exit_rate <= 0:
            break
        t += rng.exponential(1.0 / exit_rate)
        if t >= T:
            break
        w = A[:, x].copy()
        w[x] = 0.0
        x = int(rng.choice(R.size, p=w / w.sum()))
        times.append(t)
        states.append(x)
    return Trajectory(times, states, float(T))


def gillespie_endpoints(
    R: RateMatrix, x0, T: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised Gillespie over many paths; returns (states at T, jump counts)."""
    x = np.array(x0, dtype=np.int64, copy=True).ravel()
    A = R.entries
    off = A - np.diag(np.diag(A))
    exit_rates = -np.diag(A)
    cum = np.cumsum(off, axis=0)
    t = np.zeros(x.shape[0])
    jumps = np.zeros(x.shape[0], dtype=np.int64)
    active = exit_rates[x] > 0
    while np.any(active):
        idx = np.flatnonzero(active)
        rates = exit_rates[x[idx]]
        t[idx] += rng.exponential(1.0, size=idx.size) / rates
        done = t[idx] >= T
        active[idx[done]] = False
        idx = idx[~done]
        if idx.size == 0:
            break
        u = rng.random(idx.size) * exit_rates[x[idx]]
        c = cum[:, x[idx]]
        x[idx] = np.minimum((c <= u[None, :]).sum(axis=0), R.size - 1)
        jumps[idx] += 1
        active[idx] = exit_rates[x[idx]] > 0
    return x, jumps
