"""Conditional linear layers, attribute embeddings and their cost model.

A conditional linear layer maps node features ``h`` to an output while
depending on an attribute embedding ``a`` in one of four ways:

=========  ===========================================
no         ``W h + b``
weak       ``W (h ++ a) + b``
strong     ``(Wa a) * (Wh h + bh)``
pure       ``(sum_b a_b W[b]) h + b``
=========  ===========================================

All layers accept either single vectors (rank 1) or a batch of rows
(rank 2, one row per edge).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "ConditioningMode",
    "ConditionalLinear",
    "AttributeEmbedding",
    "CostModel",
    "decompose_weak",
    "pure_kernel",
    "separable_kernel",
    "embed",
    "cost",
    "glorot_uniform",
]


class ConditioningMode(str, Enum):
    NO = "no"
    WEAK = "weak"
    STRONG = "strong"
    PURE = "pure"

    @classmethod
    def parse(cls, value) -> "ConditioningMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown conditioning mode {value!r}; expected no|weak|strong|pure") from None

    def __str__(self) -> str:
        return self.value


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int,
                   gain: float = 1.0) -> np.ndarray:
    s = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


class ConditionalLinear:
    """One linear transformation under a fixed conditioning mode.

    Args:
        mode: conditioning mode.
        d_h: input feature width.
        d_o: output width.
        d_a: attribute embedding width; for ``pure`` this is the basis size.
        rng: generator used for weight initialisation.
        gate_bias: add a bias on the strong gate path (off by default, so a
            zero attribute embedding yields an exactly zero output).
        gate_init: ``default`` or ``ones``; ``ones`` starts the strong gate at
            exactly 1 and needs ``gate_bias``.
    """

    def __init__(self, mode, d_h: int, d_o: int, d_a: int = 0,
                 rng: np.random.Generator | None = None,
                 gate_bias: bool = False, gate_init: str = "default"):
        self.mode = ConditioningMode.parse(mode)
        if d_h < 1 or d_o < 1:
            raise ValueError("d_h and d_o must be positive")
        if self.mode is not ConditioningMode.NO and d_a < 1:
            raise ValueError(f"mode {self.mode} needs d_a >= 1")
        if gate_init not in ("default", "ones"):
            raise ValueError(f"gate_init must be 'default' or 'ones', got {gate_init!r}")
        if gate_init == "ones" and not gate_bias:
            raise ValueError("gate_init='ones' requires gate_bias=True")
        self.d_h, self.d_o = d_h, d_o
        self.d_a = d_a if self.mode is not ConditioningMode.NO else 0
        self.gate_bias = gate_bias and self.mode is ConditioningMode.STRONG
        self.gate_init = gate_init
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, Tensor] = {}
        self._init(rng)

    @property
    def d_b(self) -> int:
        return self.d_a if self.mode is ConditioningMode.PURE else 0

    def _init(self, rng):
        m, d_h, d_o, d_a = self.mode, self.d_h, self.d_o, self.d_a
        p = self.params
        if m is ConditioningMode.NO:
            p["W"] = T.parameter(glorot_uniform(rng, (d_o, d_h), d_h, d_o), "W")
            p["b"] = T.parameter(np.zeros(d_o), "b")
        elif m is ConditioningMode.WEAK:
            p["W"] = T.parameter(glorot_uniform(rng, (d_o, d_h + d_a), d_h + d_a, d_o), "W")
            p["b"] = T.parameter(np.zeros(d_o), "b")
        elif m is ConditioningMode.STRONG:
            p["Wh"] = T.parameter(glorot_uniform(rng, (d_o, d_h), d_h, d_o), "Wh")
            p["bh"] = T.parameter(np.zeros(d_o), "bh")
            if self.gate_init == "ones":
                p["Wa"] = T.parameter(np.zeros((d_o, d_a)), "Wa")
            else:
                p["Wa"] = T.parameter(glorot_uniform(rng, (d_o, d_a), d_a, d_o), "Wa")
            if self.gate_bias:
                init = np.ones(d_o) if self.gate_init == "ones" else np.zeros(d_o)
                p["ba"] = T.parameter(init, "ba")
        else:
            gain = 1.0 / math.sqrt(d_a)
            p["W"] = T.parameter(glorot_uniform(rng, (d_a, d_o, d_h), d_h, d_o, gain), "W")
            p["b"] = T.parameter(np.zeros(d_o), "b")

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != v.shape:
                raise T.DimensionError(f"{k}: expected shape {v.shape}, got {arr.shape}")
            v.data[...] = arr

    def _check(self, h: Tensor, a: Tensor | None):
        if h.shape[-1] != self.d_h or h.ndim not in (1, 2):
            raise T.DimensionError(f"{self.mode} layer expects h width {self.d_h}, got shape {h.shape}")
        if self.mode is ConditioningMode.NO:
            return
        if a is None:
            raise ValueError(f"{self.mode} layer needs an attribute embedding")
        if a.ndim != h.ndim or a.shape[-1] != self.d_a or a.shape[:-1] != h.shape[:-1]:
            raise T.DimensionError(f"{self.mode} layer expects a of width {self.d_a} matching h {h.shape}, "
                                   f"got {a.shape}")

    def _gate(self, a: Tensor) -> Tensor:
        p = self.params
        return T.linear(a, p["Wa"], p["ba"] if self.gate_bias else None)

    def __call__(self, h: Tensor, a: Tensor | None = None) -> Tensor:
        self._check(h, a)
        p, m = self.params, self.mode
        if m is ConditioningMode.NO:
            return T.linear(h, p["W"], p["b"])
        if m is ConditioningMode.WEAK:
            return T.linear(T.concat(h, a), p["W"], p["b"])
        if m is ConditioningMode.STRONG:
            return T.hadamard(self._gate(a), T.linear(h, p["Wh"], p["bh"]))
        return T.bilinear(a, p["W"], h) + p["b"]

    forward = __call__

    def forward_pairs(self, h: Tensor, src: np.ndarray, dst: np.ndarray, a: Tensor | None = None) -> Tensor:
        """Same as ``self(concat(h[src], h[dst]), a)`` for node features ``h``.

        The feature weight is split into the ``h_i`` and ``h_j`` column blocks
        and applied per node before gathering, which costs ``O(nodes)``
        instead of ``O(edges)`` matrix work. Pure layers take the direct route.
        """
        if h.ndim != 2 or 2 * h.shape[1] != self.d_h:
            raise T.DimensionError(f"forward_pairs expects node features of width {self.d_h // 2}, "
                                   f"got {h.shape}")
        p, m, d = self.params, self.mode, h.shape[1]
        if m is ConditioningMode.PURE:
            return self(T.concat(T.gather(h, src), T.gather(h, dst)), a)
        if m is not ConditioningMode.NO and (a is None or a.shape != (len(src), self.d_a)):
            raise T.DimensionError(f"{m} layer expects a of shape ({len(src)}, {self.d_a})")
        W = p["Wh"] if m is ConditioningMode.STRONG else p["W"]
        left = T.linear(h, T.columns(W, 0, d))
        right = T.linear(h, T.columns(W, d, 2 * d))
        pre = T.gather(left, src) + T.gather(right, dst)
        if m is ConditioningMode.STRONG:
            return T.hadamard(self._gate(a), pre + p["bh"])
        if m is ConditioningMode.WEAK:
            pre = pre + T.linear(a, T.columns(W, 2 * d, 2 * d + self.d_a))
        return pre + p["b"]

    def __repr__(self) -> str:
        extra = f", d_a={self.d_a}" if self.d_a else ""
        return f"ConditionalLinear({self.mode.value}, d_h={self.d_h}, d_o={self.d_o}{extra})"


def decompose_weak(layer: ConditionalLinear) -> tuple[np.ndarray, np.ndarray]:
    """Split a weak layer's weight into the feature part and the attribute part.

    ``layer(h, a) == W1 @ h + W2 @ a + b`` where ``W2 @ a`` acts as an
    attribute-dependent bias.
    """
    if layer.mode is not ConditioningMode.WEAK:
        raise ValueError(f"decompose_weak needs a weak layer, got {layer.mode}")
    W = layer.params["W"].data
    return W[:, :layer.d_h].copy(), W[:, layer.d_h:].copy()


def pure_kernel(layer: ConditionalLinear, a) -> np.ndarray:
    """Materialise the attribute-dependent matrix ``sum_b a_b W[b]``."""
    if layer.mode is not ConditioningMode.PURE:
        raise ValueError(f"pure_kernel needs a pure layer, got {layer.mode}")
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    if a.shape != (layer.d_b,):
        raise T.DimensionError(f"expected basis coefficients of shape ({layer.d_b},), got {a.shape}")
    return np.tensordot(a, layer.params["W"].data, axes=1)


def separable_kernel(layer: ConditionalLinear, a) -> np.ndarray:
    """Kernel ``K[o, i] = gate[o] * Wh[o, i]`` of a bias-free strong layer."""
    if layer.mode is not ConditioningMode.STRONG:
        raise ValueError(f"separable_kernel needs a strong layer, got {layer.mode}")
    if np.any(layer.params["bh"].data != 0):
        raise ValueError("separable kernel exists only when the feature-path bias is zero")
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    gate = layer.params["Wa"].data @ a
    if layer.gate_bias:
        gate = gate + layer.params["ba"].data
    return gate[:, None] * layer.params["Wh"].data


class AttributeEmbedding:
    """Maps a raw geometric attribute to the embedding fed to conditional layers.

    Kinds:
        identity: passes the attribute through (``d_out == d_in``).
        mlp2: trainable ``W2 silu(W1 x + b1) + b2`` with hidden width ``d_out``.
        rff: fixed random Fourier features ``cos(Omega x) ++ sin(Omega x)``.
        rbf: fixed Gaussian bumps ``exp(-(x - c_k)^2 / width^2)`` on a grid.
    """

    KINDS = ("identity", "mlp2", "rff", "rbf")

    def __init__(self, kind: str, d_in: int = 1, d_out: int | None = None,
                 rng: np.random.Generator | None = None, *, rff_scale: float = 1.0,
                 centers=None, rbf_range: tuple[float, float] = (0.0, 1.0),
                 width: float | None = None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown embedding kind {kind!r}; expected one of {self.KINDS}")
        self.kind = kind
        self.d_in = d_in
        self.d_out = d_in if kind == "identity" else d_out
        if self.d_out is None or self.d_out < 1:
            raise ValueError(f"{kind} embedding needs d_out >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, Tensor] = {}   # trainable
        self.buffers: dict[str, np.ndarray] = {}  # fixed
        if kind == "mlp2":
            d = self.d_out
            self.params["W1"] = T.parameter(glorot_uniform(rng, (d, d_in), d_in, d), "W1")
            self.params["b1"] = T.parameter(np.zeros(d), "b1")
            self.params["W2"] = T.parameter(glorot_uniform(rng, (d, d), d, d), "W2")
            self.params["b2"] = T.parameter(np.zeros(d), "b2")
        elif kind == "rff":
            if self.d_out % 2:
                raise ValueError(f"rff embedding needs an even width, got {self.d_out}")
            self.rff_scale = rff_scale
            self.buffers["omega"] = rng.normal(0.0, rff_scale, size=(self.d_out // 2, d_in))
        elif kind == "rbf":
            if d_in != 1:
                raise ValueError("rbf embedding expects a scalar attribute")
            if centers is None:
                centers = np.linspace(rbf_range[0], rbf_range[1], self.d_out)
            centers = np.asarray(centers, dtype=np.float64)
            if centers.shape != (self.d_out,) or np.any(np.diff(centers) <= 0):
                raise ValueError("rbf centers must be strictly increasing with one per output")
            if width is None:
                width = float(centers[1] - centers[0]) if self.d_out > 1 else 1.0
            if width <= 0:
                raise ValueError("rbf width must be positive")
            self.buffers["centers"] = centers
            self.buffers["width"] = np.array([width])

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.data.copy() for k, v in self.params.items()}
        out.update({k: v.copy() for k, v in self.buffers.items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            v.data[...] = state[k]
        for k in self.buffers:
            self.buffers[k] = np.asarray(state[k], dtype=np.float64).reshape(self.buffers[k].shape)

    def __call__(self, raw: Tensor) -> Tensor:
        if raw.shape[-1] != self.d_in or raw.ndim not in (1, 2):
            raise T.DimensionError(f"{self.kind} embedding expects width {self.d_in}, got shape {raw.shape}")
        if self.kind == "identity":
            return raw
        if self.kind == "mlp2":
            p = self.params
            hidden = T.activation(T.linear(raw, p["W1"], p["b1"]), "silu")
            return T.linear(hidden, p["W2"], p["b2"])
        if self.kind == "rff":
            proj = T.linear(raw, T.tensor(self.buffers["omega"]))
            return T.concat(T.cos(proj), T.sin(proj))
        centers = self.buffers["centers"]
        width = float(self.buffers["width"][0])
        diff = raw - T.tensor(centers)  # (..., 1) broadcast against (d_out,)
        return T.exp(T.hadamard(diff, diff) * (-1.0 / width ** 2))

    def __repr__(self) -> str:
        return f"AttributeEmbedding({self.kind}, d_in={self.d_in}, d_out={self.d_out})"


def embed(emb: AttributeEmbedding, raw) -> Tensor:
    return emb(raw if isinstance(raw, Tensor) else T.tensor(raw))


@dataclass(frozen=True)
class CostModel:
    parameter_count: int
    multiply_add_count: int


def cost(layer: ConditionalLinear) -> CostModel:
    """Exact parameter count and leading-order multiply-adds of one call."""
    d_h, d_o, d_a = layer.d_h, layer.d_o, layer.d_a
    m = layer.mode
    if m is ConditioningMode.NO:
        return CostModel(d_o * d_h + d_o, d_o * d_h)
    if m is ConditioningMode.WEAK:
        return CostModel(d_o * (d_h + d_a) + d_o, d_o * (d_h + d_a))
    if m is ConditioningMode.STRONG:
        params = d_o * d_h + d_o + d_o * d_a + (d_o if layer.gate_bias else 0)
        return CostModel(params, d_o * d_h + d_o * d_a + d_o)
    d_b = layer.d_b
    return CostModel(d_b * d_o * d_h + d_o, d_b * d_o * d_h + d_o * d_h)
