"""Reverse-time generation: tau-leaping and an exact event-driven oracle.

States are carried as integer indices in ``{0, ..., S}`` per dimension, so
the clamp to ``[-sqrt(S), sqrt(S)]`` in scaled coordinates is a clip to
``[0, S]`` and paths can never drift off the lattice.

A rate source is any object with ``rates(states, t) -> (birth, death)``
where ``states`` has shape (n, d) and both outputs have the same shape.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .analytic import GMMParams, gmm_score
from .approximator.losses import discretized_gaussian_log_masses
from .ehrenfest import EhrenfestSpec, stay_log_probs, log_transition_matrix, scale_state, transition_matrix
from .errors import DomainError, NumericError
from .reversal import (
    BackwardRates,
    backward_rate_table,
    reverse_swapped_forward_rates,
    score_to_ratio,
    taylor_ratio,
)


@dataclass(frozen=True)
class SamplerConfig:
    """Reverse integration from ``t_start`` (default T) down to ``t_end`` (default t_min)."""

    tau: float = 1e-3
    t_start: float | None = None
    t_end: float | None = None
    seed: int = 0
    n_streams: int = 8
    workers: int = 1

    def bounds(self, spec: EhrenfestSpec) -> tuple[float, float]:
        hi = spec.T if self.t_start is None else self.t_start
        lo = spec.t_min if self.t_end is None else self.t_end
        if not 0 <= lo < hi <= spec.T:
            raise DomainError(f"need 0 <= t_end < t_start <= T, got [{lo}, {hi}]")
        if not 0 < self.tau <= hi - lo:
            raise DomainError(f"tau={self.tau} must lie in (0, t_start - t_end]")
        if self.n_streams < 1 or self.workers < 1:
            raise DomainError("n_streams and workers must be >= 1")
        return hi, lo

    def time_grid(self, spec: EhrenfestSpec) -> np.ndarray:
        """Decreasing times with equal spacing no larger than ``tau``."""
        hi, lo = self.bounds(spec)
        n = max(1, math.ceil((hi - lo) / self.tau - 1e-9))
        return np.linspace(hi, lo, n + 1)


@dataclass
class ReverseBatch:
    """Integer states of shape (n, d) at time ``t``."""

    states: np.ndarray
    t: float
    S: int

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if np.any(self.states < 0) or np.any(self.states > self.S):
            raise DomainError("states outside the lattice")

    @property
    def scaled(self) -> np.ndarray:
        return scale_state(self.states, self.S)


def sample_prior(spec: EhrenfestSpec, n: int, rng: np.random.Generator, d: int = 1) -> ReverseBatch:
    """i.i.d. Binomial(S, 1/2) per dimension, placed at time T."""
    if n < 1:
        raise DomainError("n must be >= 1")
    return ReverseBatch(rng.binomial(spec.S, 0.5, size=(n, d)), spec.T, spec.S)


def tau_leap_step(batch: ReverseBatch, birth, death, tau: float, rng: np.random.Generator) -> ReverseBatch:
    """Poisson birth and death counts, net displacement, then clamp."""
    if tau <= 0:
        raise DomainError("tau must be positive")
    birth = np.asarray(birth, dtype=np.float64)
    death = np.asarray(death, dtype=np.float64)
    if birth.shape != batch.states.shape or death.shape != batch.states.shape:
        raise DomainError(f"rate shapes {birth.shape}, {death.shape} do not match states {batch.states.shape}")
    for name, r in (("birth", birth), ("death", death)):
        bad = ~np.isfinite(r) | (r < 0)
        if np.any(bad):
            i = np.argwhere(bad)[0]
            raise NumericError(
                f"invalid {name} rate {r[tuple(i)]!r} at path {i[0]}, state {batch.states[tuple(i)]}, t={batch.t}"
            )
    jumps = rng.poisson(tau * birth) - rng.poisson(tau * death)
    new = np.clip(batch.states + jumps, 0, batch.S)
    return ReverseBatch(new, batch.t - tau, batch.S)


# --- rate sources ----------------------------------------------------------


class ExactRateSource:
    """Reverse rates of the true time reversal for a tabulated p_data.

    For d = 1 this is ``backward_rate_table``. For d = 2 the reverse rate
    along a coordinate is r_t(x | y) p_t(y) / p_t(x) with p_t from the
    product transition kernel. With ``factorized=True`` each dimension only
    sees its own marginal (an ablation that ignores cross-dimension structure).
    """

    def __init__(self, p_data, spec: EhrenfestSpec, factorized: bool = False):
        self.pmf = np.asarray(getattr(p_data, "pmf", p_data), dtype=np.float64)
        self.spec = spec
        self.factorized = factorized
        self.d = self.pmf.ndim
        if self.d not in (1, 2):
            raise DomainError("exact rates need a 1-D or 2-D pmf")
        self._cache: tuple[float, object] | None = None

    def _tables(self, t: float):
        if self._cache is not None and self._cache[0] == t:
            return self._cache[1]
        spec = self.spec
        if self.d == 1:
            tab = backward_rate_table(t, self.pmf, spec)
            out = (np.asarray(tab.birth), np.asarray(tab.death))
        elif self.factorized:
            out = []
            for marginal in (self.pmf.sum(axis=1), self.pmf.sum(axis=0)):
                tab = backward_rate_table(t, marginal, spec)
                out.append((np.asarray(tab.birth), np.asarray(tab.death)))
        else:
            P = transition_matrix(t, spec)
            pt = P @ self.pmf @ P.T
            up, down = reverse_swapped_forward_rates(np.arange(spec.S + 1), spec, t)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio_b0 = np.where(pt[:-1] > 0, pt[1:] / pt[:-1], 0.0)
                ratio_d0 = np.where(pt[1:] > 0, pt[:-1] / pt[1:], 0.0)
                ratio_b1 = np.where(pt[:, :-1] > 0, pt[:, 1:] / pt[:, :-1], 0.0)
                ratio_d1 = np.where(pt[:, 1:] > 0, pt[:, :-1] / pt[:, 1:], 0.0)
            out = (
                np.pad(ratio_b0, ((0, 1), (0, 0))) * up[:, None],
                np.pad(ratio_d0, ((1, 0), (0, 0))) * down[:, None],
                np.pad(ratio_b1, ((0, 0), (0, 1))) * up[None, :],
                np.pad(ratio_d1, ((0, 0), (1, 0))) * down[None, :],
            )
        self._cache = (t, out)
        return out

    def rate_table(self, t: float):
        """Per-state (birth, death) arrays for d = 1."""
        return self._tables(t)

    def rates(self, states, t: float):
        states = np.asarray(states)
        tabs = self._tables(t)
        if self.d == 1:
            b, dth = tabs
            return b[states], dth[states]
        if self.factorized:
            birth = np.stack([tabs[i][0][states[:, i]] for i in range(2)], axis=1)
            death = np.stack([tabs[i][1][states[:, i]] for i in range(2)], axis=1)
            return birth, death
        b0, d0, b1, d1 = tabs
        i, j = states[:, 0], states[:, 1]
        return np.stack([b0[i, j], b1[i, j]], axis=1), np.stack([d0[i, j], d1[i, j]], axis=1)


class AnalyticScoreSource:
    """Continuous mixture score plugged into the score-to-ratio bridge.

    The mixture lives in scaled coordinates and is evaluated at OU time tau(t).
    """

    def __init__(self, gmm: GMMParams, spec: EhrenfestSpec):
        self.gmm, self.spec = gmm, spec

    def rates(self, states, t: float):
        spec = self.spec
        score = gmm_score(scale_state(states, spec.S), float(spec.tau(t)), self.gmm)
        pair = score_to_ratio(score, spec.S)
        up, down = reverse_swapped_forward_rates(states, spec, t)
        return np.asarray(pair.phi_b) * up, np.asarray(pair.phi_d) * down


class ModelRateSource:
    """Reverse rates from a trained approximator.

    The model sees the full d-dimensional scaled state; each head value is
    turned into a per-dimension pmf-ratio estimate according to the loss it
    was trained with.
    """

    def __init__(self, approx, loss: str, spec: EhrenfestSpec):
        self.approx, self.loss, self.spec = approx, loss, spec

    def ratios(self, states, t: float):
        spec = self.spec
        x = scale_state(states, spec.S)
        out = self.approx(x, np.full(x.shape[0], t))
        for name, val in out.items():
            if not np.all(np.isfinite(val)):
                raise NumericError(f"model head {name} is non-finite at t={t}")
        kind = self.loss
        if kind in ("cond_exp", "gauss"):
            return np.maximum(out["phi_b"], 0.0), np.maximum(out["phi_d"], 0.0)
        if kind in ("taylor", "taylor2"):
            quad = out.get("quad_hat") if kind == "taylor2" else None
            return (
                taylor_ratio(x, out["mu_hat"], quad, t, spec, 1),
                taylor_ratio(x, out["mu_hat"], quad, t, spec, -1),
            )
        if kind == "ou":
            pair = score_to_ratio(out["score_hat"], spec.S)
            return pair.phi_b, pair.phi_d
        if kind == "ml":
            log_post = discretized_gaussian_log_masses(out["gauss_mean"], out["gauss_logvar"], spec.S)
            return plugin_ratio_expectation(states, t, log_post, spec)
        raise DomainError(f"unknown loss kind {kind!r}")

    def rates(self, states, t: float):
        phi_b, phi_d = self.ratios(states, t)
        up, down = reverse_swapped_forward_rates(np.asarray(states), self.spec, t)
        return np.maximum(phi_b * up, 0.0), np.maximum(phi_d * down, 0.0)


def plugin_ratio_expectation(states, t: float, log_post: np.ndarray, spec: EhrenfestSpec):
    """sum_x0 q(x0 | x) p_{t|0}(x +/- 1 | x0) / p_{t|0}(x | x0) for a supplied posterior q.

    ``log_post`` has the shape of ``states`` plus a trailing axis of S + 1.
    """
    states = np.asarray(states)
    L = log_transition_matrix(t, spec)
    Lpad = np.concatenate([np.full((1, spec.S + 1), -np.inf), L, np.full((1, spec.S + 1), -np.inf)])
    here = Lpad[states + 1]
    out = []
    for shift in (2, 0):
        nb = Lpad[states + shift]
        with np.errstate(invalid="ignore"):
            terms = np.where(np.isfinite(here) & np.isfinite(log_post), log_post + nb - here, -np.inf)
        out.append(np.exp(logsumexp(terms, axis=-1)))
    return out[0], out[1]


def plugin_backward_rates(states, t: float, log_post: np.ndarray, spec: EhrenfestSpec) -> BackwardRates:
    """Reverse rates assembled from a posterior over x0 (d = 1 or per dimension)."""
    phi_b, phi_d = plugin_ratio_expectation(states, t, log_post, spec)
    up, down = reverse_swapped_forward_rates(np.asarray(states), spec, t)
    return BackwardRates(phi_b * up, phi_d * down)


def reverse_rates_from_model(states, t: float, source, spec: EhrenfestSpec) -> BackwardRates:
    """Per-dimension reverse rates for integer ``states`` of shape (n, d)."""
    states = np.asarray(states, dtype=np.int64)
    if states.ndim == 1:
        states = states[:, None]
    if np.any(states < 0) or np.any(states > spec.S):
        raise DomainError("state outside the lattice")
    birth, death = source.rates(states, t)
    return BackwardRates(np.maximum(birth, 0.0), np.maximum(death, 0.0), spec.delta)


def _rates_on_unique(source, states: np.ndarray, t: float, S: int):
    """Evaluate the source once per distinct state and scatter back."""
    code = np.zeros(states.shape[0], dtype=np.int64)
    for i in range(states.shape[1]):
        code = code * (S + 1) + states[:, i]
    uniq, first, inverse = np.unique(code, return_index=True, return_inverse=True)
    birth, death = source.rates(states[first], t)
    return np.asarray(birth)[inverse], np.asarray(death)[inverse]


@dataclass
class SampleResult:
    states: np.ndarray
    t: float
    snapshots: dict = field(default_factory=dict)


def tau_leap_sample(
    source,
    spec: EhrenfestSpec,
    n: int,
    config: SamplerConfig = SamplerConfig(),
    d: int = 1,
    record=(),
    initial: np.ndarray | None = None,
) -> SampleResult:
    """Run tau-leaping from the Binomial prior (or ``initial``) to ``t_end``.

    Paths are split into ``config.n_streams`` fixed blocks with their own
    spawned generators, so the output does not depend on ``config.workers``.
    All blocks advance together so a time-keyed rate table is built once per
    step. ``record`` lists times at which to snapshot the states.
    """
    grid = config.time_grid(spec)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_streams + 1)
    if initial is None:
        initial = sample_prior(spec, n, np.random.default_rng(seeds[0]), d).states
    initial = np.asarray(initial, dtype=np.int64).reshape(n, -1)
    blocks = [ReverseBatch(initial[idx], grid[0], spec.S) for idx in np.array_split(np.arange(n), config.n_streams)]
    rngs = [np.random.default_rng(sq) for sq in seeds[1:]]
    pending = sorted(record, reverse=True)
    snaps = {}
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None

    def advance(b, k):
        blk = blocks[b]
        if blk.states.shape[0] == 0:
            return blk
        birth, death = _rates_on_unique(source, blk.states, float(grid[k]), spec.S)
        out = tau_leap_step(blk, birth, death, grid[k] - grid[k + 1], rngs[b])
        out.t = float(grid[k + 1])
        return out

    try:
        for k in range(grid.size - 1):
            while pending and pending[0] >= grid[k] - 1e-12:
                snaps[pending.pop(0)] = np.concatenate([blk.states for blk in blocks])
            if pool is None:
                blocks = [advance(b, k) for b in range(len(blocks))]
            else:
                # the first call warms any time-keyed cache before threads share it
                first = advance(0, k)
                blocks = [first, *pool.map(lambda b: advance(b, k), range(1, len(blocks)))]
    finally:
        if pool is not None:
            pool.shutdown()
    final = np.concatenate([blk.states for blk in blocks])
    for r in pending:
        snaps[r] = final.copy()
    return SampleResult(final, float(grid[-1]), snaps)


def _log_choose(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


class BernsteinMarginal:
    """log p_t(x) for a 1-D p_data as a Bernstein polynomial in the stay probability f.

    p_t(x) = sum_j B[x, j] f^j (1 - f)^(S - j) with non-negative B, so the
    log-space evaluation involves no cancellation and costs O(S) per
    (state, time) pair, each pair at its own time.
    """

    def __init__(self, p_data, S: int):
        p0 = np.asarray(getattr(p_data, "pmf", p_data), dtype=np.float64)
        if p0.shape != (S + 1,):
            raise DomainError("p_data must be a pmf on S + 1 states")
        self.S = S
        ks = np.arange(S + 1)
        logB = np.full((S + 1, S + 1), -np.inf)
        with np.errstate(divide="ignore"):
            log_p0 = np.log(p0)
        for x0 in np.flatnonzero(p0 > 0):
            # z of the S - x0 zero bits flip on; x - z of the x0 one bits stay on
            z = ks[: S - x0 + 1]
            for x in range(S + 1):
                zz = z[(x - z >= 0) & (x - z <= x0)]
                if zz.size == 0:
                    continue
                j = S - x0 - 2 * zz + x
                val = log_p0[x0] + _log_choose(S - x0, zz) + _log_choose(x0, x - zz)
                np.logaddexp.at(logB[x], j, val)
        self.logB = logB

    def log_pt(self, x, log_f, log_1mf):
        """Vectorised over matching arrays ``x`` (states) and per-entry log f, log(1 - f)."""
        j = np.arange(self.S + 1)
        x = np.asarray(x)
        inside = (x >= 0) & (x <= self.S)
        rows = self.logB[np.clip(x, 0, self.S)]
        with np.errstate(invalid="ignore"):
            terms = rows + j * np.asarray(log_f)[..., None] + (self.S - j) * np.asarray(log_1mf)[..., None]
        terms = np.where(np.isfinite(rows), terms, -np.inf)
        return np.where(inside, logsumexp(terms, axis=-1), -np.inf)


def exact_reverse_simulate(
    spec: EhrenfestSpec,
    p_data,
    n: int,
    rng: np.random.Generator,
    t_start: float | None = None,
    t_end: float | None = None,
    n_slabs: int = 64,
    safety: float = 1.5,
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """Event-driven reverse paths under the exact reverse rates (d = 1, S <= 64).

    Every path runs its own thinned Poisson clock. Within a slab the clock
    rate is ``safety`` times the largest exit rate of ``backward_rate_table``
    seen at five probe times; at each proposal the path's exact rates are
    recomputed at its own time from the marginal ratio p_t(y) / p_t(x) and it
    jumps with probability rate / bound. Slabs are log-spaced because reverse
    rates can grow like 1/t near the data end. A proposal whose exit rate
    exceeds the bound aborts the run.
    """
    if spec.S > 64:
        raise DomainError("the exact oracle is limited to S <= 64")
    hi = spec.T if t_start is None else t_start
    lo = spec.t_min if t_end is None else t_end
    if not 0 < lo < hi:
        raise DomainError("need 0 < t_end < t_start")
    pmf = np.asarray(getattr(p_data, "pmf", p_data), dtype=np.float64)
    if pmf.ndim != 1:
        raise DomainError("the exact oracle is one-dimensional")
    S = spec.S
    marg = BernsteinMarginal(pmf, S)
    edges = np.geomspace(hi, lo, n_slabs + 1)
    bounds = np.empty(n_slabs)
    for k in range(n_slabs):
        probe = np.linspace(edges[k], edges[k + 1], 5)
        peak = 0.0
        for s in probe:
            tab = backward_rate_table(float(s), pmf, spec)
            peak = max(peak, float(np.max(tab.birth + tab.death)))
        bounds[k] = safety * peak

    x = rng.binomial(S, 0.5, size=n) if initial is None else np.asarray(initial, dtype=np.int64).copy()
    t = np.full(n, hi)
    slab = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        B = bounds[slab[active]]
        with np.errstate(divide="ignore"):
            s = t[active] - rng.exponential(1.0, size=active.size) / B
        floor = edges[slab[active] + 1]
        crossed = s <= floor
        t[active[crossed]] = floor[crossed]
        slab[active[crossed]] += 1
        prop = active[~crossed]
        sp, Bp = s[~crossed], B[~crossed]
        t[prop] = sp
        if prop.size:
            xp = x[prop]
            log_f, log_1mf = stay_log_probs(spec.tau(sp))
            here = marg.log_pt(xp, log_f, log_1mf)
            lam = np.asarray(spec.rate_scale(sp))
            with np.errstate(invalid="ignore", over="ignore"):
                rb = np.where(xp < S, lam * 0.5 * (xp + 1) * np.exp(marg.log_pt(xp + 1, log_f, log_1mf) - here), 0.0)
                rd = np.where(xp > 0, lam * 0.5 * (S - xp + 1) * np.exp(marg.log_pt(xp - 1, log_f, log_1mf) - here), 0.0)
            if np.any(rb + rd > Bp):
                i = int(np.argmax(rb + rd - Bp))
                raise NumericError(f"thinning bound {Bp[i]:.4g} violated at t={sp[i]:.6g}, state {xp[i]}")
            u = rng.random(prop.size) * Bp
            x[prop] = xp + (u < rb) - ((u >= rb) & (u < rb + rd))
        active = active[slab[active] < n_slabs]
    return x
