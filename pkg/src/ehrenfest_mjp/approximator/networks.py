"""Function approximators with hand-written reverse-mode gradients.

Both kinds map scaled states ``x`` of shape (n, d) and times ``t`` of shape
(n,) to a dict of heads, each of shape (n, d). Parameters live in one flat
float64 vector so optimisers and checkpoints can treat them uniformly.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DomainError

HEAD_INIT = {"phi_b": 1.0, "phi_d": 1.0}


class FunctionApproximator:
    """Shared plumbing: flat parameter vector with named views."""

    kind = "base"

    def __init__(self, heads, d: int):
        heads = tuple(heads)
        if not heads or len(set(heads)) != len(heads):
            raise DomainError("heads must be a non-empty set of names")
        self.heads = heads
        self.d = int(d)
        self._layout: list[tuple[str, tuple[int, ...], int]] = []
        self.params = np.zeros(0)

    def _allocate(self, shapes: dict[str, tuple[int, ...]]):
        offset = 0
        self._layout = []
        for name, shape in shapes.items():
            self._layout.append((name, shape, offset))
            offset += int(np.prod(shape))
        self.params = np.zeros(offset)

    def tensor(self, name: str) -> np.ndarray:
        for n, shape, off in self._layout:
            if n == name:
                return self.params[off : off + int(np.prod(shape))].reshape(shape)
        raise KeyError(name)

    def tensors(self) -> dict[str, np.ndarray]:
        return {n: self.tensor(n) for n, _, _ in self._layout}

    def load_tensors(self, tensors: dict[str, np.ndarray]):
        for name, shape, _ in self._layout:
            if name not in tensors:
                raise DomainError(f"missing tensor {name!r}")
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise DomainError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
            self.tensor(name)[...] = arr

    def _grad_views(self, grad: np.ndarray) -> dict[str, np.ndarray]:
        return {n: grad[o : o + int(np.prod(s))].reshape(s) for n, s, o in self._layout}

    def __call__(self, x, t) -> dict[str, np.ndarray]:
        return self.forward(x, t)[0]

    def forward(self, x, t):
        raise NotImplementedError

    def backward(self, cache, grad_heads: dict[str, np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def config(self) -> dict:
        raise NotImplementedError

    def _as_inputs(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != self.d:
            raise DomainError(f"expected {self.d} input dims, got {x.shape[1]}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        return x, t


class TabularApproximator(FunctionApproximator):
    """Lookup table over lattice states x time bins.

    Bins split ``[t_lo, t_hi]`` uniformly; times outside are clipped into the
    end bins. Each head stores one value per (state, bin, dimension).
    """

    kind = "tabular"

    def __init__(self, S: int, heads, d: int = 1, n_time_bins: int = 16, t_lo: float = 0.0, t_hi: float = 1.0):
        super().__init__(heads, d)
        if t_hi <= t_lo:
            raise DomainError("need t_hi > t_lo")
        self.S = int(S)
        self.n_time_bins = int(n_time_bins)
        self.t_lo, self.t_hi = float(t_lo), float(t_hi)
        self.n_cells = (self.S + 1) ** self.d
        self._allocate({"table": (len(self.heads), self.n_cells, self.n_time_bins, self.d)})
        table = self.tensor("table")
        for h, name in enumerate(self.heads):
            table[h] = HEAD_INIT.get(name, 0.0)

    def bin_of(self, t) -> np.ndarray:
        u = (np.asarray(t, dtype=np.float64) - self.t_lo) / (self.t_hi - self.t_lo)
        return np.clip(np.floor(u * self.n_time_bins), 0, self.n_time_bins - 1).astype(np.int64)

    def bin_centers(self) -> np.ndarray:
        w = (self.t_hi - self.t_lo) / self.n_time_bins
        return self.t_lo + w * (np.arange(self.n_time_bins) + 0.5)

    def cell_of(self, x) -> np.ndarray:
        k = np.rint(x * (0.5 * math.sqrt(self.S)) + 0.5 * self.S).astype(np.int64)
        k = np.clip(k, 0, self.S)
        cell = np.zeros(k.shape[0], dtype=np.int64)
        for i in range(self.d):
            cell = cell * (self.S + 1) + k[:, i]
        return cell

    def forward(self, x, t):
        x, t = self._as_inputs(x, t)
        cell, tb = self.cell_of(x), self.bin_of(t)
        table = self.tensor("table")
        out = {name: table[h, cell, tb, :].copy() for h, name in enumerate(self.heads)}
        return out, (cell, tb)

    def backward(self, cache, grad_heads):
        cell, tb = cache
        grad = np.zeros_like(self.params)
        g = self._grad_views(grad)["table"]
        for h, name in enumerate(self.heads):
            if name in grad_heads:
                np.add.at(g[h], (cell, tb), grad_heads[name])
        return grad

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "heads": ",".join(self.heads),
            "d": self.d,
            "S": self.S,
            "n_time_bins": self.n_time_bins,
            "t_lo": self.t_lo,
            "t_hi": self.t_hi,
        }


def sinusoidal_embedding(t: np.ndarray, dim: int, scale: float = 1000.0) -> np.ndarray:
    """Transformer-style sin/cos features of ``scale * t``."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    arg = scale * np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _silu(z):
    s = 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic without overflow
    return z * s, s


class MLPApproximator(FunctionApproximator):
    """Shared-trunk MLP: [x * input_scale, emb(t)] -> hidden SiLU layers -> heads.

    The final linear layer emits ``len(heads) * d`` values; head ``h`` owns
    columns ``h*d : (h+1)*d``.
    """

    kind = "mlp"

    def __init__(
        self,
        heads,
        d: int = 1,
        hidden=(64, 64),
        emb_dim: int = 32,
        time_scale: float = 1000.0,
        input_scale: float = 1.0,
        seed: int = 0,
    ):
        super().__init__(heads, d)
        if emb_dim % 2:
            raise DomainError("emb_dim must be even")
        self.hidden = tuple(int(h) for h in hidden)
        self.emb_dim = int(emb_dim)
        self.time_scale = float(time_scale)
        self.input_scale = float(input_scale)
        self.seed = int(seed)
        widths = [self.d + self.emb_dim, *self.hidden, len(self.heads) * self.d]
        shapes = {}
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            shapes[f"W{i}"] = (a, b)
            shapes[f"b{i}"] = (b,)
        self._allocate(shapes)
        self.n_layers = len(widths) - 1
        rng = np.random.default_rng(seed)
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            scale = math.sqrt(1.0 / a) if i < self.n_layers - 1 else 0.01 * math.sqrt(1.0 / a)
            self.tensor(f"W{i}")[...] = rng.normal(0.0, scale, size=(a, b))
        last_b = self.tensor(f"b{self.n_layers - 1}").reshape(len(self.heads), self.d)
        for h, name in enumerate(self.heads):
            last_b[h] = HEAD_INIT.get(name, 0.0)

    def forward(self, x, t):
        x, t = self._as_inputs(x, t)
        h = np.concatenate([x * self.input_scale, sinusoidal_embedding(t, self.emb_dim, self.time_scale)], axis=1)
        acts = [h]
        gates = []
        for i in range(self.n_layers):
            z = h @ self.tensor(f"W{i}") + self.tensor(f"b{i}")
            if i < self.n_layers - 1:
                h, s = _silu(z)
                gates.append((z, s))
            else:
                h = z
            acts.append(h)
        out = h.reshape(-1, len(self.heads), self.d)
        return {name: out[:, k, :].copy() for k, name in enumerate(self.heads)}, (acts, gates)

    def backward(self, cache, grad_heads):
        acts, gates = cache
        n = acts[0].shape[0]
        g_out = np.zeros((n, len(self.heads), self.d))
        for k, name in enumerate(self.heads):
            if name in grad_heads:
                g_out[:, k, :] = grad_heads[name]
        grad = np.zeros_like(self.params)
        views = self._grad_views(grad)
        g = g_out.reshape(n, -1)
        for i in reversed(range(self.n_layers)):
            views[f"W{i}"][...] = acts[i].T @ g
            views[f"b{i}"][...] = g.sum(axis=0)
            if i > 0:
                g = g @ self.tensor(f"W{i}").T
                z, s = gates[i - 1]
                g = g * (s * (1.0 + z * (1.0 - s)))
        return grad

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "heads": ",".join(self.heads),
            "d": self.d,
            "hidden": ",".join(str(h) for h in self.hidden),
            "emb_dim": self.emb_dim,
            "time_scale": self.time_scale,
            "input_scale": self.input_scale,
            "seed": self.seed,
        }


def approximator_from_config(cfg: dict) -> FunctionApproximator:
    kind = cfg["kind"]
    heads = [h for h in str(cfg["heads"]).split(",") if h]
    if kind == "tabular":
        return TabularApproximator(
            int(cfg["S"]), heads, int(cfg["d"]), int(cfg["n_time_bins"]), float(cfg["t_lo"]), float(cfg["t_hi"])
        )
    if kind == "mlp":
        hidden = tuple(int(h) for h in str(cfg["hidden"]).split(",") if h)
        return MLPApproximator(
            heads,
            int(cfg["d"]),
            hidden,
            int(cfg["emb_dim"]),
            float(cfg["time_scale"]),
            float(cfg["input_scale"]),
            int(cfg["seed"]),
        )
    raise DomainError(f"unknown approximator kind {kind!r}")
