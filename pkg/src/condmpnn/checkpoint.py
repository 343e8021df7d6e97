"""Flat binary checkpoint container.

Layout::

    condmpnn-checkpoint 1
    <key> = <value>            # metadata, any number of lines
    tensor <name> <d1,d2,...>  # one line per tensor, in storage order
    end
    <float64 little-endian payload, tensors concatenated row-major>

The header is ASCII and ends at the first line reading ``end``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = "condmpnn-checkpoint 1"


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict[str, object] | None = None) -> bytes:
    lines = [MAGIC]
    for k, v in (meta or {}).items():
        if "\n" in str(v) or "=" in str(k) or " " in str(k):
            raise CheckpointError(f"metadata key/value not representable: {k!r}={v!r}")
        lines.append(f"{k} = {v}")
    payload = []
    for name, arr in tensors.items():
        if " " in name:
            raise CheckpointError(f"tensor names may not contain spaces: {name!r}")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        lines.append(f"tensor {name} {','.join(map(str, arr.shape))}")
        payload.append(arr.tobytes())
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(payload)


def loads(blob: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    meta: dict[str, str] = {}
    specs: list[tuple[str, tuple[int, ...]]] = []
    pos = 0
    first = True
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise CheckpointError("truncated header")
        line = blob[pos:nl].decode("ascii")
        pos = nl + 1
        if first:
            if line != MAGIC:
                raise CheckpointError(f"not a checkpoint (header {line!r})")
            first = False
            continue
        if line == "end":
            break
        if line.startswith("tensor "):
            _, name, dims = line.split(" ", 2)
            shape = tuple(int(d) for d in dims.split(",") if d) if dims else ()
            specs.append((name, shape))
        else:
            key, sep, value = line.partition(" = ")
            if not sep:
                raise CheckpointError(f"malformed header line {line!r}")
            meta[key] = value
    tensors = {}
    for name, shape in specs:
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 8 * count
        if end > len(blob):
            raise CheckpointError(f"payload truncated while reading {name}")
        tensors[name] = np.frombuffer(blob[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
        pos = end
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after payload")
    return meta, tensors


def save(path, tensors: dict[str, np.ndarray], meta: dict[str, object] | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())


def layer_meta(layer, seed: int | None = None) -> dict[str, object]:
    meta = {"kind": "conditional_linear", "mode": layer.mode.value, "d_h": layer.d_h,
            "d_a": layer.d_a, "d_o": layer.d_o, "d_b": layer.d_b, "gate_bias": int(layer.gate_bias)}
    if seed is not None:
        meta["seed"] = seed
    return meta


def save_layer(path, layer, seed: int | None = None) -> None:
    save(path, layer.state_dict(), layer_meta(layer, seed))


def load_layer(path):
    from .conditioning import ConditionalLinear

    meta, tensors = load(path)
    if meta.get("kind") != "conditional_linear":
        raise CheckpointError(f"{path}: not a layer checkpoint")
    layer = ConditionalLinear(meta["mode"], int(meta["d_h"]), int(meta["d_o"]), int(meta["d_a"]),
                              gate_bias=bool(int(meta["gate_bias"])))
    layer.load_state_dict(tensors)
    return layer


def save_embedding(path, emb, seed: int | None = None) -> None:
    meta = {"kind": "attribute_embedding", "embedding": emb.kind, "d_in": emb.d_in, "d_out": emb.d_out}
    if seed is not None:
        meta["seed"] = seed
    save(path, emb.state_dict(), meta)


def load_embedding(path):
    from .conditioning import AttributeEmbedding

    meta, tensors = load(path)
    if meta.get("kind") != "attribute_embedding":
        raise CheckpointError(f"{path}: not an embedding checkpoint")
    kind = meta["embedding"]
    kwargs = {}
    if kind == "rbf":
        kwargs["centers"] = tensors["centers"]
        kwargs["width"] = float(tensors["width"][0])
    emb = AttributeEmbedding(kind, int(meta["d_in"]), int(meta["d_out"]), **kwargs)
    emb.load_state_dict(tensors)
    return emb
