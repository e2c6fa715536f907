"""Tabular target distributions and histogram metrics."""

from __future__ import annotations

import csv
import hashlib
import itertools
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .analytic import GMMParams
from .ehrenfest import log_binomial_pmf, scale_state
from .errors import DomainError

LETTER_E_SHA256 = "82f6a95f641d997c7f357b85a23656b41b903fcb266a7b258419d0284a0a4c59"


@dataclass(frozen=True)
class DiscreteDistribution:
    """pmf over ``{0, ..., S}^d`` for d in {1, 2}."""

    pmf: np.ndarray

    def __post_init__(self):
        p = np.array(self.pmf, dtype=np.float64)
        if p.ndim not in (1, 2):
            raise DomainError("tabular distributions support d = 1 or 2")
        if len(set(p.shape)) != 1:
            raise DomainError("every dimension must have S + 1 states")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DomainError("pmf must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise DomainError(f"pmf sums to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "pmf", p)

    @classmethod
    def from_weights(cls, w) -> "DiscreteDistribution":
        w = np.asarray(w, dtype=np.float64)
        return cls(w / w.sum())

    @classmethod
    def point_mass(cls, S: int, x0: int) -> "DiscreteDistribution":
        p = np.zeros(S + 1)
        p[x0] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, S: int, d: int = 1) -> "DiscreteDistribution":
        return cls.from_weights(np.ones((S + 1,) * d))

    @classmethod
    def binomial(cls, S: int) -> "DiscreteDistribution":
        """Binomial(S, 1/2), the stationary law of the Ehrenfest process."""
        return cls.from_weights(np.exp(log_binomial_pmf(np.arange(S + 1), S, 0.5)))

    @property
    def d(self) -> int:
        return self.pmf.ndim

    @property
    def S(self) -> int:
        return self.pmf.shape[0] - 1

    def marginal(self, axis: int) -> np.ndarray:
        if self.d == 1:
            return self.pmf
        return self.pmf.sum(axis=1 - axis)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` draws as integer indices of shape (n, d)."""
        flat = rng.choice(self.pmf.size, size=n, p=self.pmf.ravel())
        return np.stack(np.unravel_index(flat, self.pmf.shape), axis=1).astype(np.int64)

    def sampler(self):
        """Callable ``(rng, n) -> (n, d)`` usable as a data sampler."""
        return lambda rng, n: self.sample(rng, n)

    def to_csv(self, path) -> None:
        cols = ["x", "y"][: self.d] + ["p"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for idx in itertools.product(range(self.S + 1), repeat=self.d):
                w.writerow([*idx, repr(float(self.pmf[idx]))])


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval < 256."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise OSError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise OSError(f"{path}: 16-bit PGM not supported")
    raster = data[pos + 1 : pos + 1 + w * h]
    if len(raster) != w * h:
        raise OSError(f"{path}: truncated raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w)


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def _letter_e_path():
    return resources.files("ehrenfest_mjp").joinpath("data/letter_e.pgm")


def load_letter_e(S: int = 32, verify: bool = True) -> DiscreteDistribution:
    """The bundled 33x33 letter-E bitmap as a 2-D pmf proportional to ink.

    Pixel values encode ink density (0 = blank). ``pmf[i, j]`` refers to
    bitmap row i, column j.
    """
    path = _letter_e_path()
    try:
        raw = path.read_bytes()
    except (FileNotFoundError, OSError) as exc:
        raise OSError(f"letter-E asset missing: {path}") from exc
    if verify and hashlib.sha256(raw).hexdigest() != LETTER_E_SHA256:
        raise OSError("letter-E asset checksum mismatch")
    with resources.as_file(path) as p:
        img = read_pgm(p)
    if img.shape != (S + 1, S + 1):
        raise DomainError(f"asset is {img.shape}, expected {(S + 1, S + 1)}")
    return DiscreteDistribution.from_weights(img.astype(np.float64))


def discretize_gmm(p: GMMParams, S: int) -> DiscreteDistribution:
    """Cell masses of a 1-D mixture on the scaled lattice; end cells take the tails."""
    if S < 2:
        raise DomainError("S must be at least 2")
    xs = scale_state(np.arange(S + 1), S)
    edges = np.concatenate([[-np.inf], 0.5 * (xs[:-1] + xs[1:]), [np.inf]])
    sd = np.sqrt(np.asarray(p.variances))
    cdf = ndtr((edges[:, None] - np.asarray(p.means)) / sd) @ np.asarray(p.weights)
    mass = np.diff(cdf)
    return DiscreteDistribution.from_weights(np.maximum(mass, 0.0))


@dataclass(frozen=True)
class HistogramMetrics:
    tv: float
    ks: float
    counts: np.ndarray
    n_off_grid: int = 0

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def compare(samples, reference: DiscreteDistribution, scaled: bool = False) -> HistogramMetrics:
    """Empirical pmf vs a reference: total variation and max marginal KS distance.

    ``samples`` are integer indices of shape (n,) or (n, d); with ``scaled=True``
    they are scaled coordinates. Off-grid samples are counted and dropped.
    """
    S, d = reference.S, reference.d
    arr = np.asarray(samples)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[1] != d:
        raise DomainError(f"samples have {arr.shape[1]} dims, reference has {d}")
    if scaled:
        k = arr * (0.5 * math.sqrt(S)) + 0.5 * S
        ki = np.rint(k)
        on = np.all(np.abs(k - ki) <= 1e-9 * max(1.0, math.sqrt(S)), axis=1)
        idx = ki.astype(np.int64)
    else:
        idx = arr.astype(np.int64)
        on = np.all(idx == arr, axis=1)
    on &= np.all((idx >= 0) & (idx <= S), axis=1)
    idx = idx[on]
    counts = np.zeros(reference.pmf.shape, dtype=np.int64)
    np.add.at(counts, tuple(idx.T), 1)
    n = max(int(counts.sum()), 1)
    emp = counts / n
    tv = 0.5 * float(np.abs(emp - reference.pmf).sum())
    ks = 0.0
    for ax in range(d):
        e = emp if d == 1 else emp.sum(axis=1 - ax)
        ks = max(ks, float(np.abs(np.cumsum(e) - np.cumsum(reference.marginal(ax))).max()))
    return HistogramMetrics(min(tv, 1.0), min(ks, 1.0), counts, int((~on).sum()))
