"""Layers, parameter containers, RMSProp and the binary checkpoint format."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, MutableMapping

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

ACTIVATIONS = ("none", "relu", "elu", "abs", "tanh")

CHECKPOINT_MAGIC = b"VDMARL01"


class ParameterSet(MutableMapping):
    """Ordered, named collection of learnable leaf tensors."""

    def __init__(self, items: Mapping[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        if items:
            for k, v in items.items():
                self[k] = v

    def __getitem__(self, key: str) -> Tensor:
        return self._params[key]

    def __setitem__(self, key: str, value: Tensor) -> None:
        if not isinstance(value, Tensor):
            raise TypeError(f"parameter {key!r} must be a Tensor")
        value.requires_grad = True
        value.name = key
        self._params[key] = value

    def __delitem__(self, key: str) -> None:
        del self._params[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def __repr__(self) -> str:
        body = ", ".join(f"{k}{list(v.shape)}" for k, v in self._params.items())
        return f"ParameterSet({body})"

    @property
    def n_scalars(self) -> int:
        return sum(p.size for p in self._params.values())

    def merge(self, prefix: str, other: "ParameterSet") -> None:
        for k, v in other.items():
            self[f"{prefix}.{k}"] = v

    def flat(self) -> np.ndarray:
        if not self._params:
            return np.zeros(0)
        return np.concatenate([p.data.reshape(-1) for p in self._params.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_scalars:
            raise DimensionError(f"set_flat: expected {self.n_scalars} values, got {vec.size}")
        offset = 0
        for p in self._params.values():
            p.data[...] = vec[offset : offset + p.size].reshape(p.shape)
            offset += p.size

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load(self, values: Mapping[str, np.ndarray], strict: bool = True) -> None:
        if strict and set(values) != set(self._params):
            missing = sorted(set(self._params) - set(values))
            extra = sorted(set(values) - set(self._params))
            raise KeyError(f"parameter names differ (missing={missing}, unexpected={extra})")
        for k, v in values.items():
            if k not in self._params:
                continue
            p = self._params[k]
            v = np.asarray(v, dtype=np.float64)
            if v.shape != p.shape:
                raise DimensionError(f"{k}: shape {v.shape} does not match {p.shape}")
            p.data[...] = v

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros(p.shape) if p.grad is None else p.grad) for k, p in self._params.items()}

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None


def init_params(spec: Mapping[str, tuple[int, int]], rng: np.random.Generator) -> ParameterSet:
    """Sample weights from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero.

    ``spec`` maps a parameter stem to ``(fan_out, fan_in)``.  Each stem
    yields ``<stem>.weight`` of shape ``(fan_out, fan_in)`` and
    ``<stem>.bias`` of shape ``(fan_out,)``.
    """
    params = ParameterSet()
    for stem, (fan_out, fan_in) in spec.items():
        if fan_out <= 0 or fan_in <= 0:
            raise ValueError(f"{stem}: dimensions must be positive, got ({fan_out}, {fan_in})")
        bound = 1.0 / math.sqrt(fan_in)
        params[f"{stem}.weight"] = Tensor(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        params[f"{stem}.bias"] = Tensor(np.zeros(fan_out))
    return params


def _linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"dense: input shape {x.shape} incompatible with weight {weight.shape}")
    out = ad.matmul(x, ad.transpose(weight))
    return ad.add(out, ad.broadcast_to(bias, out.shape))


class DenseLayer:
    """Affine map followed by an activation: ``act(x @ W.T + b)``."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "none", rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        raw = init_params({"fc": (out_dim, in_dim)}, rng)
        self.params = ParameterSet({"weight": raw["fc.weight"], "bias": raw["fc.bias"]})

    @property
    def weight(self) -> Tensor:
        return self.params["weight"]

    @property
    def bias(self) -> Tensor:
        return self.params["bias"]

    def __call__(self, x: Tensor) -> Tensor:
        return dense_forward(self, x)


def dense_forward(layer: DenseLayer, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    return ad.elementwise(layer.activation, _linear(x, layer.weight, layer.bias))


class GruCell:
    """Gated recurrent unit with fused gate weights (row blocks: reset, update, candidate)."""

    def __init__(self, in_dim: int, hidden_dim: int = 64, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim, self.hidden_dim = in_dim, hidden_dim
        h3 = 3 * hidden_dim
        raw = init_params({"ih": (h3, in_dim), "hh": (h3, hidden_dim)}, rng)
        self.params = ParameterSet(
            {
                "weight_ih": raw["ih.weight"],
                "bias_ih": raw["ih.bias"],
                "weight_hh": raw["hh.weight"],
                "bias_hh": raw["hh.bias"],
            }
        )

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return gru_step(self, x, h)


def gru_step(cell: GruCell, x, h) -> Tensor:
    """``h' = (1 - z) * h + z * n`` with ``n = tanh(W_in x + b_in + r * (W_hn h + b_hn))``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    h = h if isinstance(h, Tensor) else Tensor(h)
    H = cell.hidden_dim
    if h.ndim != 2 or h.shape[1] != H or h.shape[0] != x.shape[0]:
        raise DimensionError(f"gru: hidden shape {h.shape} incompatible with input {x.shape} (hidden_dim={H})")
    p = cell.params
    gi = _linear(x, p["weight_ih"], p["bias_ih"])
    gh = _linear(h, p["weight_hh"], p["bias_hh"])
    r = ad.sigmoid(ad.add(gi[:, :H], gh[:, :H]))
    z = ad.sigmoid(ad.add(gi[:, H : 2 * H], gh[:, H : 2 * H]))
    n = ad.tanh(ad.add(gi[:, 2 * H :], ad.mul(r, gh[:, 2 * H :])))
    return ad.add(h, ad.mul(z, ad.sub(n, h)))


@dataclass
class RmsPropState:
    lr: float = 5e-4
    decay: float = 0.99
    eps: float = 1e-5
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)


def rmsprop_update(state: RmsPropState, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> None:
    """acc <- decay*acc + (1-decay)*g^2 ; theta <- theta - lr*g/sqrt(acc+eps)."""
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} does not match {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        acc = state.accumulators.get(name)
        if acc is None:
            acc = state.accumulators[name] = np.zeros(p.shape)
        acc *= state.decay
        acc += (1.0 - state.decay) * g * g
        p.data -= state.lr * g / np.sqrt(acc + state.eps)


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Rescale so the global L2 norm is at most ``max_norm``; returns (grads, pre-clip norm)."""
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return dict(grads), norm


# ---------------------------------------------------------------------------
# checkpoint file: magic, then records of
#   u32 name length | name (utf-8) | u32 rank | u64 dims[rank] | f64 payload (little endian)


def save_checkpoint(path, params: Mapping[str, Tensor | np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, value in params.items():
            arr = np.asarray(value.data if isinstance(value, Tensor) else value, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    out: dict[str, np.ndarray] = {}
    pos = 8
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > len(blob):
                raise ValueError("truncated payload")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint") from exc
    return out
