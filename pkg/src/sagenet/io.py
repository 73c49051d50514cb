"""Manifest, feature, graph and embedding file handling, plus split generation.

File formats (all integers little-endian u64 unless noted):

* manifest: UTF-8 JSON lines with fields id, properties, labels, split
* feature file  `SGF1`: magic, row_count, dim, 4-byte dtype tag "f32\\0",
  id list (u32 byte length + UTF-8 per id), row-major float32 payload
* graph file    `SGG1`: magic, node_count, edge_count (directed entries),
  offsets[node_count+1], neighbors[edge_count]
* embedding file `SGE1`: magic, row_count, dim, row-major float64 payload;
  ids in a JSON sidecar at <path>.json
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, SPLIT_NAMES, UNKNOWN_PROPERTY

FEATURE_MAGIC = b"SGF1"
GRAPH_MAGIC = b"SGG1"
EMBEDDING_MAGIC = b"SGE1"
_F32_TAG = b"f32\x00"


# ---------------------------------------------------------------------------
# manifest


@dataclass
class Record:
    id: str
    properties: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)
    split: str | None = None


class RecordManifest:
    """Ordered record collection; node id == position in the list."""

    def __init__(self, records):
        self.records = list(records)
        self.index: dict[str, int] = {}
        for pos, rec in enumerate(self.records):
            if not rec.id:
                raise ValueError(f"record at position {pos} has empty id")
            if rec.id in self.index:
                raise ValueError(f"duplicate id {rec.id!r}")
            self.index[rec.id] = pos
            if not rec.properties.get("school"):
                rec.properties["school"] = UNKNOWN_PROPERTY
            if rec.split is not None and rec.split not in SPLIT_NAMES:
                raise ValueError(f"record {rec.id!r} has unknown split {rec.split!r}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, pos: int) -> Record:
        return self.records[pos]

    def ids(self) -> list[str]:
        return [rec.id for rec in self.records]

    def has_splits(self) -> bool:
        return all(rec.split is not None for rec in self.records)

    def split_indices(self, split: str) -> np.ndarray:
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}, expected one of {SPLIT_NAMES}")
        return np.array(
            [i for i, rec in enumerate(self.records) if rec.split == split],
            dtype=np.int64,
        )

    def artist_keys(self) -> np.ndarray:
        """Per-node artist identity used for same-artist edge masking.

        Looks in properties first, then labels; records without an artist
        get a per-node sentinel so they never mask each other.
        """
        out = []
        for i, rec in enumerate(self.records):
            a = rec.properties.get("artist") or rec.labels.get("artist")
            out.append(a if isinstance(a, str) and a else f"__noartist_{i}")
        return np.asarray(out, dtype=object)


def load_manifest(path) -> RecordManifest:
    records = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: malformed JSON on line {lineno}: {e}") from None
            if not isinstance(obj, dict) or "id" not in obj:
                raise ValueError(f"{path}: line {lineno} is not a record object")
            rid = str(obj["id"])
            if rid in seen:
                raise ValueError(
                    f"{path}: duplicate id {rid!r} on line {lineno} (first seen line {seen[rid]})"
                )
            seen[rid] = lineno
            records.append(
                Record(
                    id=rid,
                    properties=dict(obj.get("properties") or {}),
                    labels=dict(obj.get("labels") or {}),
                    split=obj.get("split"),
                )
            )
    return RecordManifest(records)


def save_manifest(manifest: RecordManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest:
            obj = {
                "id": rec.id,
                "properties": rec.properties,
                "labels": rec.labels,
            }
            if rec.split is not None:
                obj["split"] = rec.split
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# dense feature matrices


class FeatureMatrix:
    """Dense row-per-node feature store keyed by record id."""

    def __init__(self, ids, data):
        self.ids = [str(i) for i in ids]
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"feature data must be 2-d, got shape {self.data.shape}")
        if len(self.ids) != self.data.shape[0]:
            raise ValueError("id count does not match row count")
        self.id_to_row = {}
        for pos, rid in enumerate(self.ids):
            if rid in self.id_to_row:
                raise ValueError(f"duplicate feature id {rid!r}")
            self.id_to_row[rid] = pos

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def aligned_to(self, manifest: RecordManifest) -> np.ndarray:
        """Rows reordered to manifest node order; missing ids are an error."""
        rows = np.empty(len(manifest), dtype=np.int64)
        for pos, rec in enumerate(manifest):
            row = self.id_to_row.get(rec.id)
            if row is None:
                raise ValueError(f"no feature row for node {rec.id!r}")
            rows[pos] = row
        return self.data[rows]


def _read_exact(fh, count: int, path, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise ValueError(
            f"{path}: truncated {what}: expected {count} bytes, got {len(buf)} "
            f"(offset {fh.tell() - len(buf)})"
        )
    return buf


def save_features(path, ids, data) -> None:
    data = np.ascontiguousarray(np.asarray(data), dtype=np.float32)
    ids = [str(i) for i in ids]
    if data.ndim != 2 or len(ids) != data.shape[0]:
        raise ValueError("ids and feature rows do not line up")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<QQ", data.shape[0], data.shape[1]))
        fh.write(_F32_TAG)
        for rid in ids:
            raw = rid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(data.tobytes())


def load_features(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != FEATURE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r} at offset 0, expected {FEATURE_MAGIC!r}")
        rows, dim = struct.unpack("<QQ", _read_exact(fh, 16, path, "header"))
        tag = _read_exact(fh, 4, path, "dtype tag")
        if tag != _F32_TAG:
            raise ValueError(f"{path}: unsupported dtype tag {tag!r}")
        ids = []
        seen = set()
        for row in range(rows):
            (ln,) = struct.unpack("<I", _read_exact(fh, 4, path, "id length"))
            rid = _read_exact(fh, ln, path, "id").decode("utf-8")
            if rid in seen:
                raise ValueError(f"{path}: duplicate feature id {rid!r} at row {row}")
            seen.add(rid)
            ids.append(rid)
        payload = fh.read()
        expected = rows * dim * 4
        if len(payload) != expected:
            raise ValueError(
                f"{path}: payload length {len(payload)} does not match header "
                f"({rows} x {dim} float32 = {expected} bytes)"
            )
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, dim)
    return FeatureMatrix(ids, data.astype(np.float64))


# ---------------------------------------------------------------------------
# graph files


def save_graph(path, g: Graph) -> None:
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<QQ", g.node_count, len(g.neighbors)))
        fh.write(np.ascontiguousarray(g.offsets, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(g.neighbors, dtype="<u8").tobytes())


def load_graph(path) -> Graph:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != GRAPH_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r} at offset 0, expected {GRAPH_MAGIC!r}")
        node_count, edge_count = struct.unpack("<QQ", _read_exact(fh, 16, path, "header"))
        offsets = np.frombuffer(
            _read_exact(fh, (node_count + 1) * 8, path, "offsets"), dtype="<u8"
        ).astype(np.int64)
        neighbors = np.frombuffer(
            _read_exact(fh, edge_count * 8, path, "neighbors"), dtype="<u8"
        ).astype(np.int64)
        trailing = fh.read()
        if trailing:
            raise ValueError(f"{path}: {len(trailing)} unexpected trailing bytes")
    if offsets[-1] != edge_count:
        raise ValueError(f"{path}: offsets end at {offsets[-1]}, expected {edge_count}")
    return Graph(node_count=int(node_count), offsets=offsets, neighbors=neighbors)


# ---------------------------------------------------------------------------
# embedding stores


def save_embeddings(path, ids, data) -> None:
    data = np.ascontiguousarray(np.asarray(data), dtype="<f8")
    if data.ndim != 2 or len(ids) != data.shape[0]:
        raise ValueError("ids and embedding rows do not line up")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<QQ", data.shape[0], data.shape[1]))
        fh.write(data.tobytes())
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump([str(i) for i in ids], fh)


def load_embeddings(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != EMBEDDING_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r} at offset 0, expected {EMBEDDING_MAGIC!r}")
        rows, dim = struct.unpack("<QQ", _read_exact(fh, 16, path, "header"))
        payload = _read_exact(fh, rows * dim * 8, path, "payload")
    data = np.frombuffer(payload, dtype="<f8").reshape(rows, dim)
    with open(str(path) + ".json", "r", encoding="utf-8") as fh:
        ids = json.load(fh)
    if len(ids) != rows:
        raise ValueError(f"{path}: id sidecar has {len(ids)} entries, expected {rows}")
    return ids, data.copy()


# ---------------------------------------------------------------------------
# splits and derived labels

DEFAULT_FRACTIONS = (0.85, 0.095, 0.055)


@dataclass
class SplitAssignment:
    splits: list  # split name per record position
    fractions: tuple
    seed: int


def _allocate(count: int, fractions) -> list[int]:
    """Largest-remainder allocation of `count` items across the fractions."""
    exact = [count * f for f in fractions]
    base = [math.floor(e) for e in exact]
    left = count - sum(base)
    order = sorted(range(len(fractions)), key=lambda k: exact[k] - base[k], reverse=True)
    for k in order[:left]:
        base[k] += 1
    return base


def make_splits(
    manifest: RecordManifest,
    fractions=DEFAULT_FRACTIONS,
    seed: int = 0,
    stratify_key: str = "style",
) -> SplitAssignment:
    """Deterministic train/val/test assignment, stratified by style when present."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != len(SPLIT_NAMES):
        raise ValueError(f"expected {len(SPLIT_NAMES)} fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, expected 1")

    strata: dict[str, list[int]] = {}
    for i, rec in enumerate(manifest):
        v = rec.labels.get(stratify_key)
        strata.setdefault(v if isinstance(v, str) else "", []).append(i)

    rng = np.random.default_rng(seed)
    splits = [""] * len(manifest)
    for key in sorted(strata):
        members = np.asarray(strata[key], dtype=np.int64)
        perm = rng.permutation(members)
        counts = _allocate(len(members), fractions)
        pos = 0
        for name, c in zip(SPLIT_NAMES, counts):
            for i in perm[pos : pos + c]:
                splits[int(i)] = name
            pos += c
    return SplitAssignment(splits=splits, fractions=fractions, seed=seed)


def apply_splits(manifest: RecordManifest, assignment: SplitAssignment) -> RecordManifest:
    if len(assignment.splits) != len(manifest):
        raise ValueError("split assignment does not cover the manifest")
    records = [
        dataclasses.replace(rec, split=s) for rec, s in zip(manifest, assignment.splits)
    ]
    return RecordManifest(records)


def timeframe_bucket(year: float) -> int:
    """Half-century bucket id: floor(year / 50) * 50."""
    return int(math.floor(float(year) / 50.0)) * 50


def timeframe_label(year: float) -> str:
    start = timeframe_bucket(year)
    return f"{start}-{start + 50}"


def derive_timeframes(
    manifest: RecordManifest, date_key: str = "date", out_key: str = "timeframe"
) -> int:
    """Add a half-century bucket label for records with a known date.

    Mutates the manifest's labels in place; returns the number of
    records labeled.  Existing values of `out_key` are kept.
    """
    n = 0
    for rec in manifest:
        if out_key in rec.labels:
            continue
        date = rec.labels.get(date_key)
        if isinstance(date, (int, float)) and not isinstance(date, bool):
            rec.labels[out_key] = timeframe_label(date)
            n += 1
    return n
