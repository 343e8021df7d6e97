import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condmpnn.checks import random_orthogonal, run_suites
from condmpnn.data import (ELEMENTS, DatasetError, MoleculeRecord, SyntheticSpec, XyzParseError, format_xyz,
                           gated_inner_target, gen_synthetic, load_dataset_dir, parse_xyz, split, to_graph,
                           write_dataset_dir)
from condmpnn.message_passing import full_edges

DATA = Path(__file__).parent / "data"

WATER = """3
prop=-76.4 unit=Ha
O 0.000 0.000 0.117
H 0.000 0.757 -0.467
H 0.000 -0.757 -0.467
"""


def test_parse_water_frame():
    (rec,) = parse_xyz(WATER)
    assert rec.symbols == ["O", "H", "H"]
    assert rec.prop == -76.4 and rec.unit == "Ha"
    np.testing.assert_array_equal(rec.positions[1], [0.0, 0.757, -0.467])
    np.testing.assert_array_equal(rec.one_hot(), [[0, 0, 0, 1, 0], [1, 0, 0, 0, 0], [1, 0, 0, 0, 0]])


def test_empty_input():
    assert parse_xyz("") == []
    assert parse_xyz("\n\n") == []


def test_comment_without_property():
    (rec,) = parse_xyz("1\njust a title\nC 0 0 0\n")
    assert rec.prop is None and rec.unit is None


@pytest.mark.parametrize("name, line", [
    ("bad_count.xyz", 1),
    ("bad_number.xyz", 7),
    ("bad_property.xyz", 2),
    ("extra_atom.xyz", 5),
    ("missing_comment.xyz", 2),
    ("nonfinite.xyz", 3),
    ("short_atom_line.xyz", 4),
    ("truncated.xyz", 5),
    ("unknown_symbol.xyz", 4),
    ("zero_count.xyz", 1),
])
def test_malformed_fixtures_report_line(name, line):
    path = DATA / "malformed" / name
    with pytest.raises(XyzParseError) as info:
        parse_xyz(path.read_text(), source=name)
    assert info.value.line == line
    assert str(info.value).startswith(f"{name}:{line}:")


def test_every_malformed_fixture_is_covered():
    listed = {p.name for p in (DATA / "malformed").glob("*.xyz")}
    assert len(listed) == 10


def test_twenty_frame_round_trip():
    records = parse_xyz((DATA / "frames20.xyz").read_text())
    assert len(records) == 20
    text = format_xyz(records)
    again = parse_xyz(text)
    assert format_xyz(again) == text  # serialisation is a fixed point
    for a, b in zip(records, again):
        assert a.symbols == b.symbols and a.prop == b.prop and a.unit == b.unit
        assert np.abs(a.positions - b.positions).max() <= 1e-12


coord = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(ELEMENTS), coord, coord, coord), min_size=1, max_size=12),
       st.one_of(st.none(), st.floats(allow_nan=False, allow_infinity=False)))
def test_round_trip_property(atoms, prop):
    rec = MoleculeRecord([a[0] for a in atoms], [a[1:] for a in atoms], prop, "eV" if prop is not None else None)
    (back,) = parse_xyz(format_xyz([rec]))
    assert back.symbols == rec.symbols and back.prop == rec.prop
    assert np.array_equal(back.positions, rec.positions)


def test_to_graph():
    (rec,) = parse_xyz(WATER)
    g = to_graph(rec, require_target=True)
    assert g.edges.shape == (6, 2) and g.target == -76.4
    single = to_graph(MoleculeRecord(["H"], [[0, 0, 0]]))
    assert single.edges.shape == (0, 2)
    assert single.node_features.tolist() == [[1, 0, 0, 0, 0]]
    with pytest.raises(DatasetError):
        to_graph(MoleculeRecord(["H"], [[0, 0, 0]]), require_target=True)


def test_gated_inner_examples():
    h = np.array([[1.0, 0.0], [1.0, 0.0]])
    x = np.zeros((2, 3))
    assert gated_inner_target(h, x, np.array([[0, 1]])) == 1.0
    h_orth = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert gated_inner_target(h_orth, np.array([[0, 0, 0], [3.0, 1, 2]]), np.array([[0, 1]])) == 0.0


def test_synthetic_targets_match_independent_recomputation():
    for g in gen_synthetic(SyntheticSpec(n_graphs=20, seed=3)):
        expect = 0.0
        for i in range(g.n):
            for j in range(g.n):
                if i != j:
                    d2 = sum((g.positions[j, k] - g.positions[i, k]) ** 2 for k in range(3))
                    expect += np.exp(-d2) * float(np.dot(g.node_features[i], g.node_features[j]))
        assert g.target == pytest.approx(expect, abs=1e-12)
        assert 4 <= g.n <= 8 and g.node_features.shape[1] == 8
        assert np.abs(g.node_features).max() <= 1.0


def test_synthetic_is_seeded():
    a = gen_synthetic(SyntheticSpec(n_graphs=5, seed=9))
    b = gen_synthetic(SyntheticSpec(n_graphs=5, seed=9))
    assert all(np.array_equal(x.positions, y.positions) and x.target == y.target for x, y in zip(a, b))


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(n_min=5, n_max=4)
    with pytest.raises(ValueError):
        SyntheticSpec(scale=0.0)


def test_synthetic_target_invariance():
    rng = np.random.default_rng(0)
    for g in gen_synthetic(SyntheticSpec(n_graphs=3, seed=1)):
        for k in range(20):
            gt = g.transformed(random_orthogonal(rng, reflect=bool(k % 2)), rng.normal(size=3))
            assert abs(gated_inner_target(gt.node_features, gt.positions, gt.edges) - g.target) <= 1e-12
            gp = g.permuted(rng.permutation(g.n))
            assert abs(gated_inner_target(gp.node_features, gp.positions, gp.edges) - g.target) <= 1e-12


def test_split_examples():
    items = list(range(10))
    tr, va, te = split(items, (0.8, 0.1, 0.1), 0)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)
    assert split(items, (1, 0, 0), 0)[0] == split(items, (1, 0, 0), 0)[0]
    assert len(split(items, (1, 0, 0), 0)[0]) == 10
    with pytest.raises(ValueError, match="empty"):
        split(list(range(5)), (0.9, 0.05, 0.05), 0)
    with pytest.raises(ValueError):
        split(items, (0.5, 0.2, 0.2), 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(10, 300), st.integers(0, 1000))
def test_split_partitions(n, seed):
    parts = split(list(range(n)), (0.7, 0.2, 0.1), seed)
    assert sorted(x for p in parts for x in p) == list(range(n))
    assert parts == split(list(range(n)), (0.7, 0.2, 0.1), seed)


def test_dataset_dir_round_trip(tmp_path):
    records = parse_xyz((DATA / "frames20.xyz").read_text())
    labelled = [r for r in records if r.prop is not None]
    write_dataset_dir(tmp_path / "ds", {"train": labelled[:10], "val": labelled[10:13], "test": labelled[13:]}, 7)
    loaded, manifest = load_dataset_dir(tmp_path / "ds")
    assert manifest["seed"] == 7 and manifest["property"] == "prop"
    assert [len(loaded[k]) for k in ("train", "val", "test")] == [10, 3, len(labelled) - 13]
    assert loaded["val"][0].prop == labelled[10].prop


def test_dataset_dir_errors_carry_file_context(tmp_path):
    d = tmp_path / "ds"
    d.mkdir()
    (d / "a.xyz").write_text("2\nx\nH 0 0 0\n")
    with pytest.raises(XyzParseError, match=r"a\.xyz:4"):
        load_dataset_dir(d)
    (d / "manifest.json").write_text(json.dumps({"files": [{"file": "missing.xyz", "split": "train"}]}))
    with pytest.raises(DatasetError, match="missing"):
        load_dataset_dir(d)
    with pytest.raises(DatasetError):
        load_dataset_dir(tmp_path / "nope")


def test_full_edges_count():
    assert len(full_edges(7)) == 42


def test_data_suites_pass():
    names = ["data.synthetic_target_invariance", "data.xyz_round_trip", "data.split_partition"]
    assert all(r.passed for r in run_suites(names))
