"""Invariant suites run by ``condmpnn check`` and reused by the test suite.

Each suite returns a :class:`SuiteResult` carrying the worst residual it saw
against its tolerance. Suites are deterministic: all randomness is seeded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .conditioning import ConditionalLinear, cost, decompose_weak, pure_kernel, separable_kernel
from .data import (MoleculeRecord, SyntheticSpec, format_xyz, gated_inner_target, gen_synthetic,
                   parse_xyz, split)
from .message_passing import ConditionalMLP, EgnnModel, Graph, GraphBatch, ModelConfig, model_forward
from .tensor import Tensor
from .training import AdamState, CosineSchedule, TrainConfig, adam_step, lr_at, train

MODES = ("no", "weak", "strong", "pure")
SABOTAGE_HOOKS = ("weak-split",)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    residual: float = 0.0
    tolerance: float = 0.0
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: residual {self.residual:.3g} (tol {self.tolerance:.3g}) {self.detail}".rstrip()


@dataclass
class CheckContext:
    sabotage: str | None = None
    seed: int = 0


# -- shared helpers -------------------------------------------------------

def random_orthogonal(rng: np.random.Generator, reflect: bool | None = None) -> np.ndarray:
    """Haar-random 3x3 orthogonal matrix; ``reflect`` forces det -1 (or +1 when False)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if reflect is not None and (np.linalg.det(q) < 0) != reflect:
        q[:, 0] = -q[:, 0]
    return q


def random_graph(rng: np.random.Generator, n: int, d_in: int, target: float | None = None) -> Graph:
    return Graph(rng.uniform(-1, 1, size=(n, d_in)), rng.normal(size=(n, 3)), target=target)


@dataclass
class GradientReport:
    worst_relative: float = 0.0
    worst_absolute: float = 0.0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def compare_gradients(objective: Callable[[], Tensor], params: list[Tensor], eps: float = 1e-5,
                      rtol: float = 1e-4, atol: float = 1e-7, small: float = 1e-8,
                      names: list[str] | None = None) -> GradientReport:
    """Reverse-mode gradients of a scalar objective against central differences.

    Elements with ``|analytic| < small`` are compared absolutely (``atol``),
    the rest relatively (``rtol``).
    """
    for p in params:
        p.grad = None
    T.backward(objective())
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    with T.no_grad():
        numeric = T.finite_difference_grad(lambda: float(objective().data), params, eps)
    report = GradientReport()
    for k, (ga, gn) in enumerate(zip(analytic, numeric)):
        err = np.abs(ga - gn)
        tiny = np.abs(ga) < small
        rel = np.where(tiny, 0.0, err / np.where(tiny, 1.0, np.abs(ga)))
        absd = np.where(tiny, err, 0.0)
        report.worst_relative = max(report.worst_relative, float(rel.max(initial=0.0)))
        report.worst_absolute = max(report.worst_absolute, float(absd.max(initial=0.0)))
        if np.any(rel >= rtol) or np.any(absd > atol):
            label = names[k] if names else f"param {k}"
            report.failures.append(f"{label}: rel {rel.max():.2e} abs {absd.max():.2e}")
    for p in params:
        p.grad = None
    return report


def weighted_sum(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Scalar ``sum(out * R)`` with fixed random ``R`` so every output entry matters."""
    return T.tsum(T.hadamard(out, T.tensor(rng.uniform(-1, 1, size=out.shape))))


def _objective(build: Callable[[], Tensor], seed: int) -> Callable[[], Tensor]:
    def f():
        out = build()
        return weighted_sum(out, np.random.default_rng(seed)) if out.size > 1 else T.reshape(out, ())
    return f


def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[list[Tensor]], Tensor], list[np.ndarray]]]:
    u = lambda *s: rng.uniform(-1, 1, size=s)  # noqa: E731
    away = lambda *s: rng.uniform(0.2, 1, size=s) * rng.choice([-1, 1], size=s)  # noqa: E731
    index = np.array([2, 0, 1, 2, 4, 0])
    seg = np.array([0, 2, 2, 1, 0, 2])
    return {
        "add": (lambda p: p[0] + p[1], [u(3, 4), u(4)]),
        "scale": (lambda p: T.scale(p[0], -1.7), [u(3, 2)]),
        "mul": (lambda p: T.mul(p[0], p[1]), [u(3, 4), u(1, 4)]),
        "hadamard": (lambda p: T.hadamard(p[0], p[1]), [u(3, 4), u(3, 4)]),
        "matmul_vec": (lambda p: T.matmul(p[0], p[1]), [u(3, 4), u(4)]),
        "matmul_mat": (lambda p: T.matmul(p[0], p[1]), [u(3, 4), u(4, 2)]),
        "linear": (lambda p: T.linear(p[0], p[1], p[2]), [u(5, 4), u(3, 4), u(3)]),
        "columns": (lambda p: T.columns(p[0], 1, 3), [u(3, 4)]),
        "transpose": (lambda p: T.transpose(p[0]), [u(3, 4)]),
        "reshape": (lambda p: T.reshape(p[0], (2, 6)), [u(3, 4)]),
        "concat": (lambda p: T.concat(p[0], p[1]), [u(3, 2), u(3, 4)]),
        "silu": (lambda p: T.activation(p[0], "silu"), [u(3, 4) * 3]),
        "relu": (lambda p: T.activation(p[0], "relu"), [away(3, 4)]),
        "identity": (lambda p: T.activation(p[0], "identity"), [u(3, 4)]),
        "exp": (lambda p: T.exp(p[0]), [u(3, 4)]),
        "cos": (lambda p: T.cos(p[0]), [u(3, 4) * 3]),
        "sin": (lambda p: T.sin(p[0]), [u(3, 4) * 3]),
        "abs": (lambda p: T.abs_(p[0]), [away(3, 4)]),
        "sum_axis0": (lambda p: T.tsum(p[0], axis=0), [u(3, 4)]),
        "sum_axis1": (lambda p: T.tsum(p[0], axis=1), [u(3, 4)]),
        "mean": (lambda p: T.mean(p[0]), [u(3, 4)]),
        "gather": (lambda p: T.gather(p[0], index), [u(5, 3)]),
        "segment_sum": (lambda p: T.segment_sum(p[0], seg, 3), [u(6, 3)]),
        "bilinear": (lambda p: T.bilinear(p[0], p[1], p[2]), [u(5, 3), u(3, 4, 2), u(5, 2)]),
        "bilinear_vec": (lambda p: T.bilinear(p[0], p[1], p[2]), [u(3), u(3, 4, 2), u(2)]),
    }


def op_gradient_reports(seed: int = 0) -> dict[str, GradientReport]:
    rng = np.random.default_rng(seed)
    out = {}
    for k, (name, (fn, arrays)) in enumerate(_op_cases(rng).items()):
        params = [T.parameter(a) for a in arrays]
        out[name] = compare_gradients(_objective(lambda: fn(params), seed + k), params)
    return out


def mlp_gradient_report(mode: str, seed: int = 0, d_h: int = 8, d_a: int = 4, d_o: int = 8,
                        rows: int = 5) -> GradientReport:
    """Gradient check of a 2-layer conditional MLP w.r.t. weights and inputs."""
    rng = np.random.default_rng(seed)
    mlp = ConditionalMLP([d_h, d_o, d_o], mode, None, d_a, rng)
    h = T.parameter(rng.uniform(-1, 1, size=(rows, d_h)), "h")
    a = T.parameter(rng.uniform(-1, 1, size=(rows, d_a)), "a") if mode != "no" else None
    params = mlp.parameters() + [h] + ([a] if a is not None else [])
    names = [f"{k}.{n}" for k, layer in enumerate(mlp.layers) for n in layer.params] + \
        ["h"] + (["a"] if a is not None else [])
    return compare_gradients(_objective(lambda: mlp(h, a), seed + 1), params, names=names)


def model_gradient_report(mode: str, seed: int = 0, d_h: int = 8, n_layers: int = 2,
                          embedding: str = "mlp2") -> GradientReport:
    """Gradient check of a full model's scalar loss on a two-graph batch."""
    rng = np.random.default_rng(seed + 100)
    graphs = [random_graph(rng, 4, 5, 0.3), random_graph(rng, 3, 5, -0.2)]
    batch = GraphBatch.from_graphs(graphs)
    cfg = ModelConfig(d_in=5, d_h=d_h, n_layers=n_layers, mode=mode, cond_depth=2, embedding=embedding,
                      d_a=4, rbf_range=(0.0, 8.0))
    model = EgnnModel(cfg, seed=seed)
    named = model.named_parameters()
    w = T.tensor(np.array([0.7, -1.3]))
    return compare_gradients(lambda: T.tsum(T.hadamard(model.forward_batch(batch), w)),
                             list(named.values()), names=list(named))


# -- tensor_core ----------------------------------------------------------

def suite_gradient_agreement(ctx: CheckContext) -> SuiteResult:
    reports = op_gradient_reports(ctx.seed)
    reports.update({f"mlp.{m}": mlp_gradient_report(m, ctx.seed) for m in MODES})
    reports.update({f"model.{m}": model_gradient_report(m, ctx.seed) for m in MODES})
    failures = [f"{k}: {r.failures[0]}" for k, r in reports.items() if not r.passed]
    worst = max(r.worst_relative for r in reports.values())
    return SuiteResult("tensor_core.gradient_agreement", not failures, worst, 1e-4, "; ".join(failures))


def suite_matmul_linearity(ctx: CheckContext) -> SuiteResult:
    rng = np.random.default_rng(ctx.seed)
    worst = 0.0
    for _ in range(100):
        m, n = rng.integers(1, 9, size=2)
        A = T.tensor(rng.uniform(-1, 1, size=(m, n)))
        x, y = rng.uniform(-1, 1, size=(2, n))
        al, be = rng.uniform(-1, 1, size=2)
        lhs = T.matmul(A, T.tensor(al * x + be * y)).data
        rhs = al * T.matmul(A, T.tensor(x)).data + be * T.matmul(A, T.tensor(y)).data
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return SuiteResult("tensor_core.matmul_linearity", worst <= 1e-12, worst, 1e-12)


def suite_backward_determinism(ctx: CheckContext) -> SuiteResult:
    model = EgnnModel(ModelConfig(d_in=5, d_h=8, n_layers=2, mode="strong", d_a=4), seed=ctx.seed)
    batch = GraphBatch.from_graphs([random_graph(np.random.default_rng(ctx.seed), 5, 5)])
    root = T.tsum(model.forward_batch(batch))
    params = model.parameters()
    runs = []
    for _ in range(2):
        for p in params:
            p.grad = None
        T.backward(root)
        runs.append([p.grad.copy() for p in params])
    same = all(np.array_equal(a, b) for a, b in zip(*runs))
    worst = max(float(np.abs(a - b).max()) for a, b in zip(*runs))
    return SuiteResult("tensor_core.backward_determinism", same, worst, 0.0)


# -- conditioning -----------------------------------------------------------

def _layer(mode: str, rng, d_h=None, d_a=None, d_o=None, **kw) -> ConditionalLinear:
    d_h = d_h or int(rng.integers(1, 17))
    d_o = d_o or int(rng.integers(1, 17))
    if d_a is None:
        d_a = int(rng.integers(1, 9 if mode == "pure" else 17)) if mode != "no" else 0
    layer = ConditionalLinear(mode, d_h, d_o, d_a, rng, **kw)
    for k, v in layer.params.items():
        if k.startswith("b"):  # nonzero biases so the identities are not trivially satisfied
            v.data[...] = rng.uniform(-1, 1, size=v.shape)
    return layer


def suite_weak_split_identity(ctx: CheckContext) -> SuiteResult:
    worst = 0.0
    for s in range(100):
        rng = np.random.default_rng([ctx.seed, s])
        layer = _layer("weak", rng, d_h=int(rng.integers(1, 17)), d_a=int(rng.integers(1, 9)))
        W1, W2 = decompose_weak(layer)
        if ctx.sabotage == "weak-split":
            W2[0, 0] = -W2[0, 0]
        h = rng.uniform(-1, 1, size=layer.d_h)
        a = rng.uniform(-1, 1, size=layer.d_a)
        out = layer(T.tensor(h), T.tensor(a)).data
        worst = max(worst, float(np.abs(out - (W1 @ h + W2 @ a + layer.params["b"].data)).max()))
    return SuiteResult("conditioning.weak_split_identity", worst <= 1e-15, worst, 1e-15)


def suite_pure_kernel_identity(ctx: CheckContext) -> SuiteResult:
    worst = 0.0
    for s in range(100):
        rng = np.random.default_rng([ctx.seed, s])
        layer = _layer("pure", rng)
        h = rng.uniform(-1, 1, size=layer.d_h)
        a = rng.uniform(-1, 1, size=layer.d_b)
        out = layer(T.tensor(h), T.tensor(a)).data
        worst = max(worst, float(np.abs(out - (pure_kernel(layer, a) @ h + layer.params["b"].data)).max()))
    return SuiteResult("conditioning.pure_kernel_identity", worst <= 1e-12, worst, 1e-12)


def suite_separable_kernel_identity(ctx: CheckContext) -> SuiteResult:
    worst = 0.0
    for s in range(100):
        rng = np.random.default_rng([ctx.seed, s])
        layer = _layer("strong", rng)
        layer.params["bh"].data[...] = 0.0
        h = rng.uniform(-1, 1, size=layer.d_h)
        a = rng.uniform(-1, 1, size=layer.d_a)
        out = layer(T.tensor(h), T.tensor(a)).data
        worst = max(worst, float(np.abs(out - separable_kernel(layer, a) @ h).max()))
    return SuiteResult("conditioning.separable_kernel_identity", worst <= 1e-12, worst, 1e-12)


def suite_linearity_in_h(ctx: CheckContext) -> SuiteResult:
    """``f(al h1 + be h2 | a) = al f(h1|a) + be f(h2|a) + (1 - al - be) f(0|a)``.

    ``f(0|a)`` is the bias term of each mode (``W2 a + b`` for weak, the gated
    bias for strong). Bias-free layers are additionally checked for exact
    linearity.
    """
    worst = 0.0
    for s in range(25):
        for mode in MODES:
            rng = np.random.default_rng([ctx.seed, s, MODES.index(mode)])
            layer = _layer(mode, rng)
            h1, h2 = rng.uniform(-1, 1, size=(2, layer.d_h))
            a = T.tensor(rng.uniform(-1, 1, size=layer.d_a)) if layer.d_a else None
            al, be = rng.uniform(-2, 2, size=2)
            f = lambda h: layer(T.tensor(h), a).data  # noqa: E731
            lhs = f(al * h1 + be * h2)
            rhs = al * f(h1) + be * f(h2) + (1 - al - be) * f(np.zeros(layer.d_h))
            worst = max(worst, float(np.abs(lhs - rhs).max()))
            if mode in ("no", "strong", "pure"):
                for k in ("b", "bh"):
                    if k in layer.params:
                        layer.params[k].data[...] = 0.0
                worst = max(worst, float(np.abs(f(al * h1 + be * h2) - al * f(h1) - be * f(h2)).max()))
    return SuiteResult("conditioning.linearity_in_h", worst <= 1e-12, worst, 1e-12)


def suite_strong_zero_gate(ctx: CheckContext) -> SuiteResult:
    worst = 0.0
    for s in range(100):
        rng = np.random.default_rng([ctx.seed, s])
        layer = _layer("strong", rng)
        h = rng.uniform(-1, 1, size=(3, layer.d_h))
        out = layer(T.tensor(h), T.tensor(np.zeros((3, layer.d_a)))).data
        worst = max(worst, float(np.abs(out).max()))
    return SuiteResult("conditioning.strong_zero_gate", worst == 0.0, worst, 0.0)


def suite_weak_zero_attribute(ctx: CheckContext) -> SuiteResult:
    worst = 0.0
    for s in range(100):
        rng = np.random.default_rng([ctx.seed, s])
        layer = _layer("weak", rng)
        W1, _ = decompose_weak(layer)
        h = rng.uniform(-1, 1, size=layer.d_h)
        out = layer(T.tensor(h), T.tensor(np.zeros(layer.d_a))).data
        worst = max(worst, float(np.abs(out - (W1 @ h + layer.params["b"].data)).max()))
    return SuiteResult("conditioning.weak_zero_attribute", worst <= 1e-15, worst, 1e-15)


def suite_pure_reduces_to_no(ctx: CheckContext) -> SuiteResult:
    worst = 0.0
    for s in range(100):
        rng = np.random.default_rng([ctx.seed, s])
        layer = _layer("pure", rng, d_a=1)
        h = rng.uniform(-1, 1, size=layer.d_h)
        out = layer(T.tensor(h), T.tensor(np.ones(1))).data
        ref = layer.params["W"].data[0] @ h + layer.params["b"].data
        worst = max(worst, float(np.abs(out - ref).max()))
    return SuiteResult("conditioning.pure_reduces_to_no", worst <= 1e-15, worst, 1e-15)


def suite_cost_monotonicity(ctx: CheckContext) -> SuiteResult:
    """Strong > No whenever d_a >= 1; Pure > Strong exactly when (d_b - 1) d_h > d_a.

    The second boundary follows from the closed-form counts; Pure is not
    larger than Strong everywhere (e.g. d_h = 1).
    """
    rng = np.random.default_rng(ctx.seed)
    bad = []
    for _ in range(300):
        d_h, d_o, d_a = (int(v) for v in rng.integers(1, 65, size=3))
        d_b = int(rng.integers(2, 65))
        pure, strong, no = (cost(ConditionalLinear(m, d_h, d_o, da)).parameter_count
                            for m, da in (("pure", d_b), ("strong", d_a), ("no", 0)))
        if not strong > no or (pure > strong) != ((d_b - 1) * d_h > d_a):
            bad.append(f"d_h={d_h} d_o={d_o} d_a={d_a} d_b={d_b}: {pure}, {strong}, {no}")
    return SuiteResult("conditioning.cost_monotonicity", not bad, float(len(bad)), 0.0, "; ".join(bad[:3]))


# -- message_passing ------------------------------------------------------

def _models(seed: int, **kw) -> dict[str, EgnnModel]:
    base = dict(d_in=5, d_h=8, n_layers=2, d_a=8, embedding="rbf", rbf_range=(0.0, 16.0))
    base.update(kw)
    return {m: EgnnModel(ModelConfig(mode=m, **base), seed=seed) for m in MODES}


def suite_permutation_equivariance(ctx: CheckContext) -> SuiteResult:
    worst = 0.0
    for m, model in _models(ctx.seed).items():
        rng = np.random.default_rng([ctx.seed, MODES.index(m)])
        for _ in range(10):
            g = random_graph(rng, int(rng.integers(2, 13)), 5)
            perm = rng.permutation(g.n)
            gp = g.permuted(perm)
            worst = max(worst, abs(model_forward(model, g) - model_forward(model, gp)))
            with T.no_grad():
                outs = []
                for graph in (g, gp):
                    b = GraphBatch.from_graphs([graph])
                    h = model.input_embed(T.tensor(b.node_features))
                    outs.append(model.layers[0](h, b.src, b.dst, model.edge_embeddings(b)[0]).data)
            worst = max(worst, float(np.abs(outs[0][perm] - outs[1]).max()))
    return SuiteResult("message_passing.permutation_equivariance", worst <= 1e-12, worst, 1e-12)


def suite_e3_invariance(ctx: CheckContext, isometries: int = 100) -> SuiteResult:
    worst = 0.0
    for m, model in _models(ctx.seed).items():
        rng = np.random.default_rng([ctx.seed, 7, MODES.index(m)])
        g = random_graph(rng, 12, 5)
        base = model_forward(model, g)
        for k in range(isometries):
            R = random_orthogonal(rng, reflect=bool(k % 2))
            t = rng.normal(size=3) * 3
            worst = max(worst, abs(model_forward(model, g.transformed(R, t)) - base))
    return SuiteResult("message_passing.e3_invariance", worst <= 1e-9, worst, 1e-9)


def suite_locality(ctx: CheckContext) -> SuiteResult:
    worst = 0.0
    for m, model in _models(ctx.seed).items():
        rng = np.random.default_rng([ctx.seed, 11, MODES.index(m)])
        g = random_graph(rng, 7, 5)
        b = GraphBatch.from_graphs([g])
        layer, a = model.layers[0], model.edge_embeddings(b)[0]
        h = rng.uniform(-1, 1, size=(g.n, model.config.d_h))
        k = int(rng.integers(g.n))
        h2 = h.copy()
        h2[k] += rng.normal(size=h.shape[1])
        with T.no_grad():
            m1 = layer.phi_e.forward_pairs(T.tensor(h), b.src, b.dst, a).data
            m2 = layer.phi_e.forward_pairs(T.tensor(h2), b.src, b.dst, a).data
        keep = (b.src != k) & (b.dst != k)
        worst = max(worst, float(np.abs(m1[keep] - m2[keep]).max()))
    return SuiteResult("message_passing.locality", worst == 0.0, worst, 0.0)


def suite_attribute_blindness(ctx: CheckContext) -> SuiteResult:
    rng = np.random.default_rng(ctx.seed)
    g = random_graph(rng, 6, 5)
    g2 = Graph(g.node_features, g.positions * 2, g.edges)
    blind = EgnnModel(ModelConfig(d_in=5, d_h=8, n_layers=2, mode="weak", cond_depth=0), seed=ctx.seed)
    resid = abs(model_forward(blind, g) - model_forward(blind, g2))
    detail = []
    for m in ("weak", "strong", "pure"):
        diffs = [abs(model_forward(model, g) - model_forward(model, g2))
                 for model in (_models(s)[m] for s in range(3))]
        if max(diffs) <= 1e-6:
            detail.append(f"{m} insensitive to position scale")
    return SuiteResult("message_passing.attribute_blindness", resid == 0.0 and not detail, resid, 0.0,
                       "; ".join(detail))


def suite_depth_zero_collapse(ctx: CheckContext) -> SuiteResult:
    rng = np.random.default_rng(ctx.seed)
    graphs = [random_graph(rng, int(rng.integers(2, 9)), 5) for _ in range(5)]
    ref = EgnnModel(ModelConfig(d_in=5, d_h=8, n_layers=2, mode="no"), seed=ctx.seed).predict(graphs)
    worst = 0.0
    for m in ("weak", "strong", "pure"):
        model = EgnnModel(ModelConfig(d_in=5, d_h=8, n_layers=2, mode=m, cond_depth=0), seed=ctx.seed)
        worst = max(worst, float(np.abs(model.predict(graphs) - ref).max()))
    return SuiteResult("message_passing.depth_zero_collapse", worst <= 1e-15, worst, 1e-15)


# -- training ---------------------------------------------------------------

def _tiny_task(seed: int = 0, n: int = 60):
    graphs = gen_synthetic(SyntheticSpec(n_graphs=n, n_min=3, n_max=5, d=4, seed=seed))
    tr, va, _ = split(graphs, (0.8, 0.2, 0.0), seed)
    cfg = ModelConfig(d_in=4, d_h=8, n_layers=2, mode="strong", embedding="rbf", d_a=8, rbf_range=(0.0, 20.0))
    return tr, va, cfg


def _strip_wall(history):
    return [{k: v for k, v in row.items() if k != "wall_ms"} for row in history]


def suite_training_reproducibility(ctx: CheckContext) -> SuiteResult:
    tr, va, cfg = _tiny_task(ctx.seed)
    runs = [train(EgnnModel(cfg, seed=ctx.seed), tr, va, TrainConfig(epochs=3, batch_size=16, seed=ctx.seed))
            for _ in range(2)]
    same = _strip_wall(runs[0].history) == _strip_wall(runs[1].history)
    return SuiteResult("training.reproducibility", same, 0.0 if same else 1.0, 0.0)


def suite_zero_lr_constant(ctx: CheckContext) -> SuiteResult:
    tr, va, cfg = _tiny_task(ctx.seed)
    model = EgnnModel(cfg, seed=ctx.seed)
    before = model.state_dict()
    res = train(model, tr, va, TrainConfig(epochs=3, batch_size=16, lr=0.0, weight_decay=0.0, seed=ctx.seed))
    after = model.state_dict()
    drift = max(float(np.abs(before[k] - after[k]).max()) for k in before)
    val = [r["mae"] for r in res.history if r["split"] == "val"]
    drift = max(drift, max(val) - min(val))
    return SuiteResult("training.zero_lr_constant", drift == 0.0, drift, 0.0)


def suite_schedule_monotone(ctx: CheckContext) -> SuiteResult:
    sched = CosineSchedule(5e-4, 1000, 0.0)
    lrs = np.array([lr_at(sched, s) for s in range(1001)])
    rises = float(np.max(np.diff(lrs), initial=0.0))
    jump = float(np.abs(np.diff(lrs)).max())
    ok = rises <= 0.0 and jump <= 5e-4 * np.pi / 1000 and lrs[0] == 5e-4 and lrs[-1] == 0.0
    return SuiteResult("training.schedule_monotone", ok, rises, 0.0, f"largest step {jump:.2e}")


def single_batch_descends(seed: int, steps: int = 10, lr: float = 1e-3, batch_size: int = 96) -> bool:
    """Whether full-batch Adam steps strictly lower the loss on one fixed batch."""
    graphs = gen_synthetic(SyntheticSpec(n_graphs=batch_size, seed=seed))
    from .experiment import max_squared_distance

    cfg = ModelConfig(d_in=8, d_h=32, n_layers=3, mode="strong", embedding="rbf", d_a=16,
                      rbf_range=(0.0, max_squared_distance(graphs)))
    model = EgnnModel(cfg, seed=seed)
    batch = GraphBatch.from_graphs(graphs)
    params = model.parameters()
    state = AdamState.for_params(params, weight_decay=1e-16)
    targets = T.tensor(batch.targets)
    losses = []
    for _ in range(steps + 1):
        loss = T.mean(T.abs_(model.forward_batch(batch) - targets))
        losses.append(float(loss.data))
        for p in params:
            p.grad = None
        T.backward(loss)
        adam_step(params, [p.grad for p in params], state, lr)
    return bool(np.all(np.diff(losses) < 0))


def suite_single_batch_descent(ctx: CheckContext, seeds: int = 10) -> SuiteResult:
    ok = [single_batch_descends(ctx.seed + s) for s in range(seeds)]
    return SuiteResult("training.single_batch_descent", sum(ok) >= seeds - 1, float(seeds - sum(ok)),
                       1.0, f"{sum(ok)}/{seeds} seeds descend")


# -- data -------------------------------------------------------------------

def suite_synthetic_invariance(ctx: CheckContext) -> SuiteResult:
    rng = np.random.default_rng(ctx.seed)
    worst = 0.0
    for g in gen_synthetic(SyntheticSpec(n_graphs=5, seed=ctx.seed)):
        for k in range(20):
            R = random_orthogonal(rng, reflect=bool(k % 2))
            gt = g.transformed(R, rng.normal(size=3))
            gp = g.permuted(rng.permutation(g.n))
            for other in (gt, gp):
                y = gated_inner_target(other.node_features, other.positions, other.edges)
                worst = max(worst, abs(y - g.target))
    return SuiteResult("data.synthetic_target_invariance", worst <= 1e-12, worst, 1e-12)


def suite_xyz_round_trip(ctx: CheckContext) -> SuiteResult:
    rng = np.random.default_rng(ctx.seed)
    records = []
    for k in range(20):
        n = int(rng.integers(1, 10))
        syms = list(rng.choice(["H", "C", "N", "O", "F"], size=n))
        records.append(MoleculeRecord(syms, rng.normal(size=(n, 3)) * 2, float(rng.normal()), "eV"))
    once = parse_xyz(format_xyz(records))
    twice = parse_xyz(format_xyz(once))
    worst = max(float(np.abs(a.positions - b.positions).max()) for a, b in zip(records, twice))
    same = all(a.symbols == b.symbols and a.prop == b.prop and a.unit == b.unit
               for a, b in zip(records, twice)) and len(twice) == len(records)
    return SuiteResult("data.xyz_round_trip", same and worst <= 1e-12, worst, 1e-12)


def suite_split_partition(ctx: CheckContext) -> SuiteResult:
    bad = []
    for n in (10, 97, 2000):
        parts = split(list(range(n)), (0.8, 0.1, 0.1), ctx.seed)
        joined = sorted(i for p in parts for i in p)
        if joined != list(range(n)):
            bad.append(f"n={n}")
    return SuiteResult("data.split_partition", not bad, float(len(bad)), 0.0, ", ".join(bad))


# -- cli --------------------------------------------------------------------

def suite_bench_cost_agreement(ctx: CheckContext) -> SuiteResult:
    from .bench import bench_mode, build_stack

    bad = []
    for m in MODES:
        row = bench_mode(m, 8, 4, 4, layers=2, edges=8, reps=10, warmup=1, seed=ctx.seed)
        stack = build_stack(m, 8, 4, 4, 2, ctx.seed)
        expect = sum(cost(layer).parameter_count for layer in stack.layers)
        if row.parameter_count != expect:
            bad.append(f"{m}: {row.parameter_count} != {expect}")
    return SuiteResult("cli.bench_cost_agreement", not bad, float(len(bad)), 0.0, "; ".join(bad))


SUITES: dict[str, Callable[[CheckContext], SuiteResult]] = {
    "tensor_core.gradient_agreement": suite_gradient_agreement,
    "tensor_core.matmul_linearity": suite_matmul_linearity,
    "tensor_core.backward_determinism": suite_backward_determinism,
    "conditioning.weak_split_identity": suite_weak_split_identity,
    "conditioning.pure_kernel_identity": suite_pure_kernel_identity,
    "conditioning.separable_kernel_identity": suite_separable_kernel_identity,
    "conditioning.linearity_in_h": suite_linearity_in_h,
    "conditioning.strong_zero_gate": suite_strong_zero_gate,
    "conditioning.weak_zero_attribute": suite_weak_zero_attribute,
    "conditioning.pure_reduces_to_no": suite_pure_reduces_to_no,
    "conditioning.cost_monotonicity": suite_cost_monotonicity,
    "message_passing.permutation_equivariance": suite_permutation_equivariance,
    "message_passing.e3_invariance": suite_e3_invariance,
    "message_passing.locality": suite_locality,
    "message_passing.attribute_blindness": suite_attribute_blindness,
    "message_passing.depth_zero_collapse": suite_depth_zero_collapse,
    "training.reproducibility": suite_training_reproducibility,
    "training.zero_lr_constant": suite_zero_lr_constant,
    "training.schedule_monotone": suite_schedule_monotone,
    "training.single_batch_descent": suite_single_batch_descent,
    "data.synthetic_target_invariance": suite_synthetic_invariance,
    "data.xyz_round_trip": suite_xyz_round_trip,
    "data.split_partition": suite_split_partition,
    "cli.bench_cost_agreement": suite_bench_cost_agreement,
}


def run_suites(names=None, sabotage: str | None = None, seed: int = 0) -> list[SuiteResult]:
    """Run the named suites (all by default) with finite checks on."""
    if sabotage is not None and sabotage not in SABOTAGE_HOOKS:
        raise ValueError(f"unknown sabotage hook {sabotage!r}; known: {', '.join(SABOTAGE_HOOKS)}")
    names = list(SUITES) if not names else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suites: {', '.join(unknown)}")
    ctx = CheckContext(sabotage=sabotage, seed=seed)
    results = []
    with T.finite_checks(True):
        for name in names:
            t0 = time.perf_counter()
            try:
                res = SUITES[name](ctx)
            except Exception as exc:  # a crashing suite is a failing suite
                res = SuiteResult(name, False, float("nan"), 0.0, f"raised {type(exc).__name__}: {exc}")
            res.seconds = time.perf_counter() - t0
            results.append(res)
    return results
