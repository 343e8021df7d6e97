"""Microbenchmarks of conditional layers across conditioning modes."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .conditioning import ConditioningMode, cost
from .message_passing import ConditionalMLP

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - threadpoolctl ships with scikit-learn
    threadpool_limits = None


@dataclass
class BenchRow:
    mode: str
    d_h: int
    d_a: int
    d_b: int
    layers: int
    edges: int
    parameter_count: int
    multiply_add_count: int
    fwd_median_ms: float
    fwd_p10_ms: float
    fwd_p90_ms: float
    fwdbwd_median_ms: float
    fwdbwd_p10_ms: float
    fwdbwd_p90_ms: float
    mac_ratio_vs_strong: float | None = None
    fwd_ratio_vs_strong: float | None = None
    fwdbwd_ratio_vs_strong: float | None = None


def build_stack(mode: str, d_h: int, d_a: int, d_b: int, layers: int, seed: int) -> ConditionalMLP:
    mode = ConditioningMode.parse(mode)
    width = d_b if mode is ConditioningMode.PURE else d_a
    return ConditionalMLP([d_h] * (layers + 1), mode, layers, width, np.random.default_rng(seed))


def _time(fn, reps: int, warmup: int) -> np.ndarray:
    for _ in range(warmup):
        fn()
    out = np.empty(reps)
    for k in range(reps):
        t0 = time.perf_counter()
        fn()
        out[k] = (time.perf_counter() - t0) * 1e3
    return out


def bench_mode(mode: str, d_h: int, d_a: int, d_b: int, layers: int = 1, edges: int = 256,
               reps: int = 30, warmup: int = 3, seed: int = 0) -> BenchRow:
    if reps < 10:
        raise ValueError("reps must be at least 10")
    stack = build_stack(mode, d_h, d_a, d_b, layers, seed)
    rng = np.random.default_rng(seed + 1)
    width = stack.layers[0].d_a
    h = T.tensor(rng.uniform(-1, 1, size=(edges, d_h)))
    a = T.tensor(rng.uniform(-1, 1, size=(edges, width))) if width else None

    def fwd():
        with T.no_grad():
            stack(h, a)

    def fwdbwd():
        T.backward(T.tsum(stack(h, a)))
        for p in stack.parameters():
            p.grad = None

    with T.finite_checks(False):
        tf = _time(fwd, reps, warmup)
        tb = _time(fwdbwd, reps, warmup)
    costs = [cost(layer) for layer in stack.layers]
    return BenchRow(
        mode=str(stack.mode), d_h=d_h, d_a=d_a, d_b=d_b, layers=layers, edges=edges,
        parameter_count=sum(c.parameter_count for c in costs),
        multiply_add_count=sum(c.multiply_add_count for c in costs),
        fwd_median_ms=float(np.median(tf)), fwd_p10_ms=float(np.percentile(tf, 10)),
        fwd_p90_ms=float(np.percentile(tf, 90)),
        fwdbwd_median_ms=float(np.median(tb)), fwdbwd_p10_ms=float(np.percentile(tb, 10)),
        fwdbwd_p90_ms=float(np.percentile(tb, 90)),
    )


def run_bench(modes, d_h: int, d_a: int, d_b: int, layers: int = 1, edges: int = 256, reps: int = 30,
              warmup: int = 3, seed: int = 0, threads: int = 1) -> list[BenchRow]:
    """Time every mode on identical seeded inputs; ratios are relative to the strong row."""
    limiter = threadpool_limits(limits=threads) if threadpool_limits else None
    try:
        rows = [bench_mode(m, d_h, d_a, d_b, layers, edges, reps, warmup, seed) for m in modes]
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    strong = next((r for r in rows if r.mode == "strong"), None)
    if strong is not None:
        for r in rows:
            r.mac_ratio_vs_strong = r.multiply_add_count / strong.multiply_add_count
            r.fwd_ratio_vs_strong = r.fwd_median_ms / strong.fwd_median_ms
            r.fwdbwd_ratio_vs_strong = r.fwdbwd_median_ms / strong.fwdbwd_median_ms
    return rows


def to_jsonl(rows: list[BenchRow]) -> str:
    return "".join(json.dumps(asdict(r)) + "\n" for r in rows)


def format_table(rows: list[BenchRow]) -> str:
    header = ["mode", "d_h", "d_a", "d_b", "L", "params", "MACs", "fwd ms", "p10", "p90",
              "f+b ms", "p10", "p90", "MAC/strong", "fwd/strong", "f+b/strong"]

    def ratio(x):
        return "-" if x is None else f"{x:.2f}"

    body = [[r.mode, r.d_h, r.d_a, r.d_b, r.layers, r.parameter_count, r.multiply_add_count,
             f"{r.fwd_median_ms:.3f}", f"{r.fwd_p10_ms:.3f}", f"{r.fwd_p90_ms:.3f}",
             f"{r.fwdbwd_median_ms:.3f}", f"{r.fwdbwd_p10_ms:.3f}", f"{r.fwdbwd_p90_ms:.3f}",
             ratio(r.mac_ratio_vs_strong), ratio(r.fwd_ratio_vs_strong), ratio(r.fwdbwd_ratio_vs_strong)]
            for r in rows]
    cells = [header] + [[str(c) for c in row] for row in body]
    widths = [max(len(row[k]) for row in cells) for k in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
