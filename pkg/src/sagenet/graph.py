"""Undirected metadata graph: construction, degree capping, split filtering.

The graph is stored in CSR form with every undirected edge present in
both directions and neighbor lists sorted ascending.  Nodes are the
positions of records in the manifest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNKNOWN_PROPERTY = "__unknown__"

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class Graph:
    node_count: int
    offsets: np.ndarray  # int64, length node_count + 1
    neighbors: np.ndarray  # int64, sorted within each row

    @property
    def edge_count(self) -> int:
        """Number of undirected edges."""
        return len(self.neighbors) // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def degree(self, i: int) -> int:
        return int(self.offsets[i + 1] - self.offsets[i])

    def neighbors_of(self, i: int) -> np.ndarray:
        return self.neighbors[self.offsets[i] : self.offsets[i + 1]]

    def edge_set(self) -> set:
        """Set of (i, j) pairs with i < j; convenience for tests and reports."""
        src = np.repeat(np.arange(self.node_count), self.degrees())
        return {(int(a), int(b)) for a, b in zip(src, self.neighbors) if a < b}


def _from_neighbor_lists(lists) -> Graph:
    n = len(lists)
    counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    if offsets[-1] == 0:
        neighbors = np.empty(0, dtype=np.int64)
    else:
        neighbors = np.concatenate([np.asarray(l, dtype=np.int64) for l in lists if len(l)])
    return Graph(node_count=n, offsets=offsets, neighbors=neighbors)


def from_edge_pairs(node_count: int, pairs) -> Graph:
    """Build a canonical graph from undirected (i, j) pairs; dedups and symmetrizes."""
    adj = [set() for _ in range(node_count)]
    for i, j in pairs:
        if i == j:
            continue
        adj[i].add(j)
        adj[j].add(i)
    return _from_neighbor_lists([sorted(s) for s in adj])


def build_adjacency(manifest, property_key: str) -> Graph:
    """Link every pair of records sharing a value of `property_key`.

    Records with a missing or empty value fall into a shared sentinel
    group, so they link only to each other.  No self loops.
    """
    records = list(manifest)
    if not records:
        raise ValueError("empty dataset")
    values = [rec.properties.get(property_key) or UNKNOWN_PROPERTY for rec in records]
    groups: dict[str, list[int]] = {}
    for i, v in enumerate(values):
        groups.setdefault(v, []).append(i)

    n = len(records)
    lists: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * n
    for members in groups.values():
        g = np.asarray(members, dtype=np.int64)  # ascending by construction
        for pos, i in enumerate(g):
            lists[i] = np.concatenate([g[:pos], g[pos + 1 :]])
    return _from_neighbor_lists(lists)


def downsample_degrees(g: Graph, max_degree: int = 128, seed: int = 0) -> Graph:
    """Randomly drop incident edges of over-cap nodes until degree <= max_degree.

    Nodes are visited in ascending id; each drop removes both directions,
    so symmetry is preserved and the result is deterministic for a seed.
    Already-capped graphs come back unchanged.
    """
    if max_degree <= 0:
        raise ValueError(f"max_degree must be positive, got {max_degree}")
    degrees = g.degrees()
    if degrees.size == 0 or degrees.max() <= max_degree:
        return g
    rng = np.random.default_rng(seed)
    adj = [set(g.neighbors_of(i).tolist()) for i in range(g.node_count)]
    for i in range(g.node_count):
        excess = len(adj[i]) - max_degree
        if excess <= 0:
            continue
        current = sorted(adj[i])
        for k in rng.choice(len(current), size=excess, replace=False):
            j = current[k]
            adj[i].discard(j)
            adj[j].discard(i)
    return _from_neighbor_lists([sorted(s) for s in adj])


def split_view(g: Graph, manifest, split: str) -> Graph:
    """Subgraph keeping only edges whose both endpoints carry `split`.

    The node id space is unchanged; out-of-split nodes become isolated.
    """
    if split not in SPLIT_NAMES:
        raise ValueError(f"unknown split {split!r}, expected one of {SPLIT_NAMES}")
    keep = np.fromiter(
        (rec.split == split for rec in manifest), dtype=bool, count=g.node_count
    )
    src = np.repeat(np.arange(g.node_count), g.degrees())
    mask = keep[src] & keep[g.neighbors]
    new_neighbors = g.neighbors[mask]
    counts = np.bincount(src[mask], minlength=g.node_count)
    offsets = np.zeros(g.node_count + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return Graph(node_count=g.node_count, offsets=offsets, neighbors=new_neighbors)


def csr_equal(a: Graph, b: Graph) -> bool:
    return (
        a.node_count == b.node_count
        and np.array_equal(a.offsets, b.offsets)
        and np.array_equal(a.neighbors, b.neighbors)
    )


def check_symmetric(g: Graph) -> bool:
    """True iff the CSR equals its transposed reconstruction (and has no loops/dups)."""
    src = np.repeat(np.arange(g.node_count), g.degrees())
    if np.any(src == g.neighbors):
        return False
    for i in range(g.node_count):
        row = g.neighbors_of(i)
        if len(np.unique(row)) != len(row):
            return False
    transposed = from_edge_pairs(g.node_count, zip(g.neighbors.tolist(), src.tolist()))
    return csr_equal(g, transposed)
