"""Geometric graphs and EGNN-style message passing with conditional MLPs."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .conditioning import AttributeEmbedding, ConditionalLinear, ConditioningMode
from .tensor import Tensor

__all__ = [
    "Graph",
    "GraphBatch",
    "ConditionalMLP",
    "EgnnLayer",
    "EgnnModel",
    "ModelConfig",
    "full_edges",
    "edge_attribute",
    "message",
    "aggregate",
    "update",
    "model_forward",
    "conv_message",
]


def full_edges(n: int) -> np.ndarray:
    """All directed pairs ``(i, j)``, ``i != j``, in lexicographic order."""
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = i != j
    return np.stack([i[mask], j[mask]], axis=1).astype(np.int64)


@dataclass
class Graph:
    """One molecule or synthetic instance.

    ``edges`` holds directed pairs ``(i, j)``; the message ``m_ij`` is
    aggregated at node ``i``.
    """

    node_features: np.ndarray
    positions: np.ndarray
    edges: np.ndarray = None
    target: float | None = None

    def __post_init__(self):
        self.node_features = np.atleast_2d(np.asarray(self.node_features, dtype=np.float64))
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.node_features.shape[0]
        if self.positions.shape[0] != n:
            raise T.DimensionError(f"{n} feature rows but {self.positions.shape[0]} positions")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions must be finite")
        if self.edges is None:
            self.edges = full_edges(n)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(self.edges):
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise ValueError(f"edge endpoint outside [0, {n})")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise ValueError("self-loops are not allowed")
            order = np.lexsort((self.edges[:, 1], self.edges[:, 0]))
            self.edges = self.edges[order]

    @property
    def n(self) -> int:
        return self.node_features.shape[0]

    @property
    def d_in(self) -> int:
        return self.node_features.shape[1]

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph(self.node_features[perm], self.positions[perm], inv[self.edges], self.target)

    def transformed(self, R: np.ndarray, t: np.ndarray) -> "Graph":
        return Graph(self.node_features, self.positions @ np.asarray(R).T + np.asarray(t),
                     self.edges, self.target)


@dataclass
class GraphBatch:
    """Disjoint union of graphs; edges never cross graph boundaries."""

    node_features: np.ndarray
    positions: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    node_graph: np.ndarray
    num_graphs: int
    targets: np.ndarray = field(default=None)

    @classmethod
    def from_graphs(cls, graphs: Sequence[Graph]) -> "GraphBatch":
        if not graphs:
            raise ValueError("cannot batch zero graphs")
        offsets = np.cumsum([0] + [g.n for g in graphs[:-1]])
        edges = np.concatenate([g.edges + off for g, off in zip(graphs, offsets)], axis=0)
        targets = np.array([np.nan if g.target is None else g.target for g in graphs])
        return cls(
            node_features=np.concatenate([g.node_features for g in graphs], axis=0),
            positions=np.concatenate([g.positions for g in graphs], axis=0),
            src=edges[:, 0].copy(),
            dst=edges[:, 1].copy(),
            node_graph=np.repeat(np.arange(len(graphs)), [g.n for g in graphs]),
            num_graphs=len(graphs),
            targets=targets,
        )

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    def squared_distances(self) -> np.ndarray:
        diff = self.positions[self.dst] - self.positions[self.src]
        return np.einsum("ed,ed->e", diff, diff)[:, None]


def edge_attribute(x_i, x_j) -> float:
    """Squared Euclidean distance between two positions."""
    d = np.asarray(x_j, dtype=np.float64) - np.asarray(x_i, dtype=np.float64)
    return float(d @ d)


class ConditionalMLP:
    """Stack of conditional linear layers with silu between them.

    The first ``conditioning_depth`` layers use ``mode``; the rest are
    unconditional.
    """

    def __init__(self, widths: Sequence[int], mode="no", conditioning_depth: int | None = None,
                 d_a: int = 0, rng: np.random.Generator | None = None, **layer_kwargs):
        if len(widths) < 2:
            raise ValueError("widths needs an input and at least one output width")
        n_layers = len(widths) - 1
        mode = ConditioningMode.parse(mode)
        depth = n_layers if conditioning_depth is None else conditioning_depth
        if not 0 <= depth <= n_layers:
            raise ValueError(f"conditioning_depth must be in [0, {n_layers}], got {depth}")
        if mode is ConditioningMode.NO or depth == 0:
            mode, depth = ConditioningMode.NO, 0
        self.mode = mode
        self.conditioning_depth = depth
        self.layers = [
            ConditionalLinear(mode if k < depth else ConditioningMode.NO, widths[k], widths[k + 1],
                              d_a=d_a, rng=rng, **layer_kwargs)
            for k in range(n_layers)
        ]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, h: Tensor, a: Tensor | None = None) -> Tensor:
        return self._run(h, a, 0)

    def forward_pairs(self, h: Tensor, src: np.ndarray, dst: np.ndarray, a: Tensor | None = None) -> Tensor:
        """``self(concat(h[src], h[dst]), a)`` with the first layer applied per node."""
        first = self.layers[0].forward_pairs(h, src, dst, a if self.conditioning_depth > 0 else None)
        return self._run(first, a, 1)

    def _run(self, h: Tensor, a: Tensor | None, start: int) -> Tensor:
        for k in range(start, len(self.layers)):
            if k > 0:
                h = T.activation(h, "silu")
            h = self.layers[k](h, a if k < self.conditioning_depth else None)
        return h


class EgnnLayer:
    """Message function on ``h_i ++ h_j`` conditioned on the edge embedding,
    sum aggregation, and an unconditional update on ``h_i ++ m_i``."""

    def __init__(self, d_h: int, mode="no", conditioning_depth: int | None = None, d_a: int = 0,
                 rng: np.random.Generator | None = None, residual: bool = True, **layer_kwargs):
        self.d_h = d_h
        self.residual = residual
        self.phi_e = ConditionalMLP([2 * d_h, d_h, d_h], mode, conditioning_depth, d_a, rng, **layer_kwargs)
        self.phi_h = ConditionalMLP([2 * d_h, d_h, d_h], "no", 0, 0, rng)

    def parameters(self) -> list[Tensor]:
        return self.phi_e.parameters() + self.phi_h.parameters()

    def __call__(self, h: Tensor, src: np.ndarray, dst: np.ndarray, a: Tensor | None) -> Tensor:
        n = h.shape[0]
        if len(src):
            m_ij = self.phi_e.forward_pairs(h, src, dst, a)
            m_i = T.segment_sum(m_ij, src, n)
        else:
            m_i = T.tensor(np.zeros((n, self.d_h)))
        return update(self, h, m_i)


def message(layer: EgnnLayer, h_i, h_j, a_ij=None) -> Tensor:
    h_i, h_j = (x if isinstance(x, Tensor) else T.tensor(x) for x in (h_i, h_j))
    if a_ij is not None and not isinstance(a_ij, Tensor):
        a_ij = T.tensor(a_ij)
    return layer.phi_e(T.concat(h_i, h_j), a_ij)


def aggregate(messages, width: int | None = None) -> Tensor:
    """Sum of the incoming messages in their given order."""
    messages = [m if isinstance(m, Tensor) else T.tensor(m) for m in messages]
    if not messages:
        if width is None:
            raise ValueError("width is required to aggregate zero messages")
        return T.tensor(np.zeros(width))
    total = messages[0]
    for m in messages[1:]:
        total = total + m
    return total


def update(layer: EgnnLayer, h_i, m_i) -> Tensor:
    h_i = h_i if isinstance(h_i, Tensor) else T.tensor(h_i)
    m_i = m_i if isinstance(m_i, Tensor) else T.tensor(m_i)
    out = layer.phi_h(T.concat(h_i, m_i))
    return h_i + out if layer.residual else out


def conv_message(kernel, f_j) -> np.ndarray:
    """Linear convolution message ``W(x_j - x_i) f_j`` for a materialised kernel."""
    kernel = np.asarray(kernel, dtype=np.float64)
    f_j = np.asarray(f_j, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[1] != f_j.shape[-1]:
        raise T.DimensionError(f"kernel {kernel.shape} cannot act on features {f_j.shape}")
    return kernel @ f_j


@dataclass
class ModelConfig:
    d_in: int = 5
    d_h: int = 128
    n_layers: int = 7
    mode: str = "weak"
    cond_depth: int = 2
    embedding: str = "mlp2"
    d_a: int = 16
    residual: bool = True
    gate_bias: bool = False
    gate_init: str = "default"
    rff_scale: float = 1.0
    rbf_range: tuple[float, float] = (0.0, 1.0)
    per_layer_embedding: bool = False

    def normalized(self) -> "ModelConfig":
        """Depth-0 conditioning is the same model as mode ``no``."""
        mode = ConditioningMode.parse(self.mode)
        if mode is ConditioningMode.NO or self.cond_depth == 0:
            return ModelConfig(**{**self.__dict__, "mode": "no", "cond_depth": 0})
        return self


class EgnnModel:
    """Input embedding, a stack of :class:`EgnnLayer`, sum pooling and an MLP readout."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0, **overrides):
        config = config if config is not None else ModelConfig()
        if overrides:
            config = ModelConfig(**{**config.__dict__, **overrides})
        self.config = config = config.normalized()
        if not 0 <= config.cond_depth <= 2:
            raise ValueError(f"cond_depth must be in [0, 2], got {config.cond_depth}")
        rng = np.random.default_rng(seed)
        d_h = config.d_h
        self.input_embed = ConditionalLinear("no", config.d_in, d_h, rng=rng)
        conditioned = config.mode != "no"
        n_emb = config.n_layers if config.per_layer_embedding else 1
        self.embeddings = [self._make_embedding(rng) for _ in range(n_emb)] if conditioned else []
        d_a = self.embeddings[0].d_out if conditioned else 0
        layer_kwargs = {"gate_bias": config.gate_bias, "gate_init": config.gate_init} \
            if config.mode == "strong" else {}
        self.layers = [
            EgnnLayer(d_h, config.mode, config.cond_depth, d_a, rng, config.residual, **layer_kwargs)
            for _ in range(config.n_layers)
        ]
        self.readout = ConditionalMLP([d_h, d_h, 1], "no", 0, 0, rng)
        # optional affine map of the readout, set when targets are standardised
        self.output_shift = 0.0
        self.output_scale = 1.0

    def _make_embedding(self, rng) -> AttributeEmbedding:
        c = self.config
        return AttributeEmbedding(c.embedding, 1, c.d_a, rng, rff_scale=c.rff_scale,
                                  rbf_range=tuple(c.rbf_range))

    @property
    def mode(self) -> ConditioningMode:
        return ConditioningMode.parse(self.config.mode)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for k, v in self.input_embed.params.items():
            out[f"input_embed.{k}"] = v
        for e, emb in enumerate(self.embeddings):
            for k, v in emb.params.items():
                out[f"embedding{e}.{k}"] = v
        for l, layer in enumerate(self.layers):
            for part in ("phi_e", "phi_h"):
                for i, lin in enumerate(getattr(layer, part).layers):
                    for k, v in lin.params.items():
                        out[f"layers.{l}.{part}.{i}.{k}"] = v
        for i, lin in enumerate(self.readout.layers):
            for k, v in lin.params.items():
                out[f"readout.{i}.{k}"] = v
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data.copy() for k, v in self.named_parameters().items()}
        for e, emb in enumerate(self.embeddings):
            for k, v in emb.buffers.items():
                state[f"embedding{e}.{k}"] = v.copy()
        state["output.shift"] = np.array([self.output_shift])
        state["output.scale"] = np.array([self.output_scale])
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.named_parameters().items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != v.shape:
                raise T.DimensionError(f"{k}: expected shape {v.shape}, got {arr.shape}")
            v.data[...] = arr
        for e, emb in enumerate(self.embeddings):
            for k in emb.buffers:
                emb.buffers[k] = np.asarray(state[f"embedding{e}.{k}"], dtype=np.float64).reshape(
                    emb.buffers[k].shape)
        if "output.shift" in state:
            self.output_shift = float(state["output.shift"][0])
            self.output_scale = float(state["output.scale"][0])

    def edge_embeddings(self, batch: GraphBatch) -> list[Tensor | None]:
        if not self.embeddings:
            return [None] * len(self.layers)
        raw = T.tensor(batch.squared_distances())
        embs = [emb(raw) for emb in self.embeddings]
        return embs if len(embs) == len(self.layers) else embs * len(self.layers)

    def node_features(self, batch: GraphBatch) -> Tensor:
        """Final per-node features before pooling."""
        if batch.node_features.shape[1] != self.config.d_in:
            raise T.DimensionError(f"model expects {self.config.d_in} node features, "
                                   f"graph has {batch.node_features.shape[1]}")
        h = self.input_embed(T.tensor(batch.node_features))
        for layer, a in zip(self.layers, self.edge_embeddings(batch)):
            h = layer(h, batch.src, batch.dst, a)
        return h

    def forward_batch(self, batch: GraphBatch) -> Tensor:
        """One scalar prediction per graph, shape ``(num_graphs,)``."""
        h = self.node_features(batch)
        pooled = T.segment_sum(h, batch.node_graph, batch.num_graphs)
        out = T.reshape(self.readout(pooled), (batch.num_graphs,))
        if self.output_scale != 1.0:
            out = out * self.output_scale
        if self.output_shift != 0.0:
            out = out + self.output_shift
        return out

    def __call__(self, g: Graph) -> Tensor:
        return T.reshape(self.forward_batch(GraphBatch.from_graphs([g])), ())

    def predict(self, graphs: Sequence[Graph], chunk: int = 512, threads: int = 1) -> np.ndarray:
        """Predictions in input order.

        Graphs are cut into fixed chunks whatever ``threads`` is, so the
        result does not depend on the worker count.
        """
        starts = range(0, len(graphs), chunk)
        run = lambda s: self.forward_batch(GraphBatch.from_graphs(graphs[s:s + chunk])).data  # noqa: E731
        with T.no_grad():
            if threads > 1 and len(starts) > 1:
                with ThreadPoolExecutor(threads) as pool:
                    out = list(pool.map(run, starts))
            else:
                out = [run(s) for s in starts]
        return np.concatenate(out) if out else np.zeros(0)


def model_forward(model: EgnnModel, g: Graph) -> float:
    with T.no_grad():
        return float(model(g).data)
