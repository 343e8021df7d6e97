"""Molecule ingestion (XYZ), the synthetic gated-inner-product task, and splits."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .message_passing import Graph, full_edges

__all__ = [
    "ELEMENTS",
    "MoleculeRecord",
    "XyzParseError",
    "DatasetError",
    "parse_xyz",
    "format_xyz",
    "to_graph",
    "SyntheticSpec",
    "gen_synthetic",
    "gated_inner_target",
    "split",
    "write_dataset_dir",
    "load_dataset_dir",
]

ELEMENTS = ("H", "C", "N", "O", "F")


class DatasetError(ValueError):
    """Invalid dataset content; the message carries file/line context."""


class XyzParseError(DatasetError):
    def __init__(self, line: int, message: str, source: str | None = None):
        self.line = line
        where = f"{source}:{line}" if source else f"line {line}"
        super().__init__(f"{where}: {message}")


@dataclass
class MoleculeRecord:
    symbols: list[str]
    positions: np.ndarray
    prop: float | None = None
    unit: str | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if not self.symbols:
            raise DatasetError("a molecule needs at least one atom")
        if len(self.symbols) != self.positions.shape[0]:
            raise DatasetError(f"{len(self.symbols)} symbols but {self.positions.shape[0]} positions")
        bad = [s for s in self.symbols if s not in ELEMENTS]
        if bad:
            raise DatasetError(f"unknown element symbols {bad}")
        if not np.isfinite(self.positions).all():
            raise DatasetError("positions must be finite")

    @property
    def n(self) -> int:
        return len(self.symbols)

    def one_hot(self) -> np.ndarray:
        out = np.zeros((self.n, len(ELEMENTS)))
        out[np.arange(self.n), [ELEMENTS.index(s) for s in self.symbols]] = 1.0
        return out


_PROP_RE = re.compile(r"(\w+)=(\S+)")


def _parse_comment(comment: str, lineno: int, source):
    fields = dict(_PROP_RE.findall(comment))
    prop = unit = None
    if "prop" in fields:
        try:
            prop = float(fields["prop"])
        except ValueError:
            raise XyzParseError(lineno, f"malformed property value {fields['prop']!r}", source) from None
        if not math.isfinite(prop):
            raise XyzParseError(lineno, f"non-finite property value {fields['prop']!r}", source)
    if "unit" in fields:
        unit = fields["unit"]
    return prop, unit


def parse_xyz(text: str, source: str | None = None) -> list[MoleculeRecord]:
    """Parse one or more concatenated XYZ frames.

    Each frame is an atom-count line, a comment line (optionally carrying
    ``prop=<float> unit=<str>``), then one ``<symbol> x y z`` line per atom.
    Blank lines between frames are skipped.
    """
    lines = text.splitlines()
    records: list[MoleculeRecord] = []
    k = 0
    while k < len(lines):
        if not lines[k].strip():
            k += 1
            continue
        count_line = k + 1
        tokens = lines[k].split()
        if len(tokens) != 1 or not tokens[0].isdigit():
            if records and len(tokens) == 4 and tokens[0].isalpha():
                raise XyzParseError(count_line, f"extra atom line after a frame declaring {records[-1].n} atoms",
                                    source)
            raise XyzParseError(count_line, f"expected an atom count, found {lines[k].strip()!r}", source)
        n = int(tokens[0])
        if n < 1:
            raise XyzParseError(count_line, "atom count must be at least 1", source)
        if k + 1 >= len(lines):
            raise XyzParseError(count_line + 1, "missing comment line", source)
        prop, unit = _parse_comment(lines[k + 1], count_line + 1, source)
        symbols, coords = [], []
        for a in range(n):
            idx = k + 2 + a
            if idx >= len(lines):
                raise XyzParseError(idx + 1, f"frame declares {n} atoms but input ends after {a}", source)
            parts = lines[idx].split()
            if len(parts) != 4:
                raise XyzParseError(idx + 1, f"expected '<symbol> x y z', found {lines[idx].strip()!r}",
                                    source)
            sym = parts[0]
            if sym not in ELEMENTS:
                raise XyzParseError(idx + 1, f"unknown element symbol {sym!r}", source)
            try:
                xyz = [float(v) for v in parts[1:]]
            except ValueError:
                raise XyzParseError(idx + 1, f"malformed coordinate in {lines[idx].strip()!r}", source) from None
            if not all(map(math.isfinite, xyz)):
                raise XyzParseError(idx + 1, "non-finite coordinate", source)
            symbols.append(sym)
            coords.append(xyz)
        records.append(MoleculeRecord(symbols, np.array(coords), prop, unit))
        k += 2 + n
    return records


def format_xyz(records: Sequence[MoleculeRecord]) -> str:
    """Serialise records; floats use ``repr`` so parsing back is exact."""
    out = []
    for r in records:
        out.append(str(r.n))
        comment = []
        if r.prop is not None:
            comment.append(f"prop={r.prop!r}")
        if r.unit is not None:
            comment.append(f"unit={r.unit}")
        out.append(" ".join(comment))
        for s, (x, y, z) in zip(r.symbols, r.positions):
            out.append(f"{s} {float(x)!r} {float(y)!r} {float(z)!r}")
    return "\n".join(out) + ("\n" if out else "")


def to_graph(record: MoleculeRecord, require_target: bool = False) -> Graph:
    """One-hot (H, C, N, O, F) features with fully connected directed edges."""
    if require_target and record.prop is None:
        raise DatasetError("record has no property value but a target is required")
    return Graph(record.one_hot(), record.positions, full_edges(record.n), record.prop)


@dataclass(frozen=True)
class SyntheticSpec:
    n_graphs: int = 2000
    n_min: int = 4
    n_max: int = 8
    d: int = 8
    scale: float = 1.0
    seed: int = 0
    target: str = "gated_inner"

    def __post_init__(self):
        if self.n_graphs < 1 or not 1 <= self.n_min <= self.n_max or self.d < 1:
            raise ValueError(f"empty range in {self}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.target != "gated_inner":
            raise ValueError(f"unknown synthetic target {self.target!r}")


def gated_inner_target(h: np.ndarray, x: np.ndarray, edges: np.ndarray) -> float:
    """``sum over edges (i, j) of exp(-|x_j - x_i|^2) <h_i, h_j>``."""
    i, j = edges[:, 0], edges[:, 1]
    d2 = np.sum((x[j] - x[i]) ** 2, axis=1)
    return float(np.sum(np.exp(-d2) * np.sum(h[i] * h[j], axis=1)))


def gen_synthetic(spec: SyntheticSpec) -> list[Graph]:
    rng = np.random.default_rng(spec.seed)
    graphs = []
    for _ in range(spec.n_graphs):
        n = int(rng.integers(spec.n_min, spec.n_max + 1))
        h = rng.uniform(-1.0, 1.0, size=(n, spec.d))
        x = rng.normal(size=(n, 3)) * spec.scale
        edges = full_edges(n)
        graphs.append(Graph(h, x, edges, gated_inner_target(h, x, edges)))
    return graphs


def split(dataset: Sequence, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0):
    """Seeded permutation cut into contiguous (train, val, test) slices.

    Val and test sizes are ``floor(fraction * n)``; the remainder goes to train.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0,
                                                                                 abs_tol=1e-9):
        raise ValueError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    n = len(dataset)
    n_val = math.floor(fractions[1] * n + 1e-9)
    n_test = math.floor(fractions[2] * n + 1e-9)
    n_train = n - n_val - n_test
    for name, f, size in (("train", fractions[0], n_train), ("val", fractions[1], n_val),
                          ("test", fractions[2], n_test)):
        if f > 0 and size == 0:
            raise ValueError(f"{name} split of {n} items with fraction {f} would be empty")
    perm = np.random.default_rng(seed).permutation(n)
    pick = lambda idx: [dataset[i] for i in idx]  # noqa: E731
    return (pick(perm[:n_train]), pick(perm[n_train:n_train + n_val]), pick(perm[n_train + n_val:]))


MANIFEST = "manifest.json"


def write_dataset_dir(path, splits: dict[str, Sequence[MoleculeRecord]], seed: int,
                      property_name: str = "prop") -> Path:
    """Write one XYZ file per record plus a manifest of file, split, seed and property."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = []
    k = 0
    for split_name, records in splits.items():
        for r in records:
            name = f"mol_{k:06d}.xyz"
            (path / name).write_text(format_xyz([r]))
            files.append({"file": name, "split": split_name})
            k += 1
    manifest = {"seed": seed, "property": property_name, "files": files}
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def load_dataset_dir(path) -> tuple[dict[str, list[MoleculeRecord]], dict]:
    """Read a dataset directory. Returns ``(records by split, manifest)``.

    Without a manifest every ``*.xyz`` file is loaded into ``train``.
    """
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"{path}: not a directory")
    mpath = path / MANIFEST
    if mpath.exists():
        try:
            manifest = json.loads(mpath.read_text())
            entries = [(e["file"], e["split"]) for e in manifest["files"]]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetError(f"{mpath}: malformed manifest ({exc})") from None
    else:
        manifest = {"seed": None, "property": "prop", "files": []}
        entries = [(p.name, "train") for p in sorted(path.glob("*.xyz"))]
    out: dict[str, list[MoleculeRecord]] = {"train": [], "val": [], "test": []}
    for name, split_name in entries:
        fpath = path / name
        if not fpath.exists():
            raise DatasetError(f"{fpath}: listed in manifest but missing")
        out.setdefault(split_name, []).extend(parse_xyz(fpath.read_text(), source=str(fpath)))
    return out, manifest
