"""File formats, manifest parsing, split generation and derived labels."""

import json

import numpy as np
import pytest

from sagenet import io as IO
from sagenet.graph import build_adjacency
from oracles import manifest_from


# ---------------------------------------------------------------------------
# manifest


def _write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_manifest_round_trip(tmp_path):
    m = manifest_from(
        [{"school": "a"}, {"school": "b"}],
        labels_list=[{"style": "x", "date": 1901.5, "tags": ["t1", "t2"]}, {"style": "y"}],
        splits=["train", "test"],
    )
    p = tmp_path / "m.jsonl"
    IO.save_manifest(m, p)
    loaded = IO.load_manifest(p)
    assert loaded.ids() == m.ids()
    for a, b in zip(loaded, m):
        assert a.properties == b.properties
        assert a.labels == b.labels
        assert a.split == b.split


def test_manifest_duplicate_id_reports_line(tmp_path):
    p = tmp_path / "m.jsonl"
    _write_lines(
        p,
        [
            json.dumps({"id": "a", "properties": {}, "labels": {}}),
            json.dumps({"id": "a", "properties": {}, "labels": {}}),
        ],
    )
    with pytest.raises(ValueError, match="line 2"):
        IO.load_manifest(p)


def test_manifest_malformed_line_reports_line(tmp_path):
    p = tmp_path / "m.jsonl"
    _write_lines(p, [json.dumps({"id": "a"}), "{not json"])
    with pytest.raises(ValueError, match="line 2"):
        IO.load_manifest(p)


def test_manifest_fills_school_sentinel():
    m = manifest_from([{}])
    assert m[0].properties["school"] == "__unknown__"


def test_manifest_synthetic_counts(tmp_path):
    rng = np.random.default_rng(0)
    n = 1000
    m = manifest_from(
        [{"school": f"s{int(rng.integers(7))}"} for _ in range(n)],
        labels_list=[{"style": f"st{int(rng.integers(4))}"} for _ in range(n)],
    )
    p = tmp_path / "m.jsonl"
    IO.save_manifest(m, p)
    loaded = IO.load_manifest(p)
    assert len(loaded) == n
    assert sum(1 for r in loaded if r.labels["style"] == "st0") == sum(
        1 for r in m if r.labels["style"] == "st0"
    )


# ---------------------------------------------------------------------------
# feature files


def test_feature_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    ids = [f"r{i}" for i in range(17)]
    data = rng.normal(size=(17, 9)).astype(np.float32)
    p = tmp_path / "f.sgf"
    IO.save_features(p, ids, data)
    fm = IO.load_features(p)
    assert fm.ids == ids
    np.testing.assert_array_equal(fm.data, data.astype(np.float64))


def test_feature_magic_mutations_rejected(tmp_path):
    p = tmp_path / "f.sgf"
    IO.save_features(p, ["a"], np.ones((1, 3), dtype=np.float32))
    raw = bytearray(p.read_bytes())
    for pos in range(4):
        mutated = bytearray(raw)
        mutated[pos] ^= 0xFF
        bad = tmp_path / f"bad{pos}.sgf"
        bad.write_bytes(bytes(mutated))
        with pytest.raises(ValueError, match="magic"):
            IO.load_features(bad)


def test_feature_wrong_payload_length(tmp_path):
    p = tmp_path / "f.sgf"
    IO.save_features(p, ["a", "b"], np.ones((2, 4), dtype=np.float32))
    raw = p.read_bytes()
    bad = tmp_path / "short.sgf"
    bad.write_bytes(raw[:-4])
    with pytest.raises(ValueError, match="payload"):
        IO.load_features(bad)


def test_feature_alignment_missing_id():
    fm = IO.FeatureMatrix(["x"], np.ones((1, 2)))
    m = manifest_from([{"school": "a"}])
    with pytest.raises(ValueError, match="n0000"):
        fm.aligned_to(m)


# ---------------------------------------------------------------------------
# graph files


def test_graph_round_trip(tmp_path):
    m = manifest_from([{"school": f"s{i % 3}"} for i in range(40)])
    g = build_adjacency(m, "school")
    p = tmp_path / "g.sgg"
    IO.save_graph(p, g)
    loaded = IO.load_graph(p)
    assert loaded.node_count == g.node_count
    np.testing.assert_array_equal(loaded.offsets, g.offsets)
    np.testing.assert_array_equal(loaded.neighbors, g.neighbors)
    # byte-exact round trip of the file itself
    p2 = tmp_path / "g2.sgg"
    IO.save_graph(p2, loaded)
    assert p.read_bytes() == p2.read_bytes()


def test_graph_magic_mutations_rejected(tmp_path):
    m = manifest_from([{"school": "a"}, {"school": "a"}])
    p = tmp_path / "g.sgg"
    IO.save_graph(p, build_adjacency(m, "school"))
    raw = bytearray(p.read_bytes())
    for pos in range(4):
        mutated = bytearray(raw)
        mutated[pos] ^= 0x55
        bad = tmp_path / f"bad{pos}.sgg"
        bad.write_bytes(bytes(mutated))
        with pytest.raises(ValueError, match="magic"):
            IO.load_graph(bad)


def test_embeddings_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    ids = [f"e{i}" for i in range(5)]
    data = rng.normal(size=(5, 6))
    p = tmp_path / "s.sge"
    IO.save_embeddings(p, ids, data)
    lids, ldata = IO.load_embeddings(p)
    assert lids == ids
    np.testing.assert_array_equal(ldata, data)


def test_embeddings_magic_mutations_rejected(tmp_path):
    p = tmp_path / "s.sge"
    IO.save_embeddings(p, ["a"], np.ones((1, 2)))
    raw = bytearray(p.read_bytes())
    for pos in range(4):
        mutated = bytearray(raw)
        mutated[pos] ^= 0x0F
        bad = tmp_path / f"bad{pos}.sge"
        bad.write_bytes(bytes(mutated))
        (tmp_path / f"bad{pos}.sge.json").write_text((tmp_path / "s.sge.json").read_text())
        with pytest.raises(ValueError, match="magic"):
            IO.load_embeddings(bad)


# ---------------------------------------------------------------------------
# splits


def test_splits_all_train():
    m = manifest_from([{"school": "a"}] * 10)
    a = IO.make_splits(m, fractions=(1.0, 0.0, 0.0), seed=0)
    assert a.splits == ["train"] * 10


def test_splits_counts_within_one_of_targets():
    m = manifest_from([{"school": "a"}] * 1000)  # no style labels: single stratum
    a = IO.make_splits(m, seed=3)
    counts = {s: a.splits.count(s) for s in ("train", "val", "test")}
    assert abs(counts["train"] - 850) <= 1
    assert abs(counts["val"] - 95) <= 1
    assert abs(counts["test"] - 55) <= 1


def test_splits_deterministic_and_fraction_validation():
    m = manifest_from([{"school": "a"}] * 50)
    assert IO.make_splits(m, seed=5).splits == IO.make_splits(m, seed=5).splits
    with pytest.raises(ValueError, match="sum"):
        IO.make_splits(m, fractions=(0.5, 0.3, 0.1))


def test_splits_stratified_by_style():
    rng = np.random.default_rng(4)
    styles = [f"st{int(rng.integers(4))}" for _ in range(2000)]
    m = manifest_from([{"school": "a"}] * 2000, labels_list=[{"style": s} for s in styles])
    a = IO.make_splits(m, seed=7)
    for style in set(styles):
        members = [i for i, s in enumerate(styles) if s == style]
        frac_train = sum(1 for i in members if a.splits[i] == "train") / len(members)
        assert abs(frac_train - 0.85) < 0.02


def test_apply_splits():
    m = manifest_from([{"school": "a"}] * 4)
    a = IO.make_splits(m, fractions=(0.5, 0.25, 0.25), seed=0)
    m2 = IO.apply_splits(m, a)
    assert [r.split for r in m2] == a.splits
    assert all(r.split is None for r in m)  # original untouched


# ---------------------------------------------------------------------------
# timeframe buckets


def test_timeframe_floor_rule():
    assert IO.timeframe_bucket(1907) == 1900
    assert IO.timeframe_bucket(1949.9) == 1900
    assert IO.timeframe_bucket(1950) == 1950  # boundary year goes to the later bucket
    assert IO.timeframe_label(1907) == "1900-1950"


def test_derive_timeframes():
    m = manifest_from(
        [{"school": "a"}] * 3,
        labels_list=[{"date": 1907}, {"date": 1850.0}, {"style": "x"}],
    )
    added = IO.derive_timeframes(m)
    assert added == 2
    assert m[0].labels["timeframe"] == "1900-1950"
    assert m[1].labels["timeframe"] == "1850-1900"
    assert "timeframe" not in m[2].labels
