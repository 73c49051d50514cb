"""Embedding extraction and exact cosine k-nearest-neighbor retrieval."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, split_view
from .io import RecordManifest
from .model import ModelParams, forward
from .sampling import sample_neighborhood


@dataclass
class EmbeddingStore:
    ids: list  # record ids, one per row
    data: np.ndarray

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        self.data = np.asarray(self.data, dtype=np.float64)
        if len(self.ids) != self.data.shape[0]:
            raise ValueError("id count does not match embedding rows")
        self.id_to_row = {}
        for pos, rid in enumerate(self.ids):
            if rid in self.id_to_row:
                raise ValueError(f"duplicate id {rid!r}")
            self.id_to_row[rid] = pos

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def embed_all(
    params: ModelParams,
    manifest: RecordManifest,
    graph: Graph,
    node_feats,
    visual_feats,
    split: str = "all",
    seed: int = 0,
    batch_size: int = 512,
) -> EmbeddingStore:
    """Multimodal embeddings for every node of a split ("all" for the whole set).

    Neighborhoods come from the split's own view (or the full graph for
    "all"); sampling is fixed by `seed`, so the store is deterministic.
    """
    if split == "all":
        node_ids = np.arange(graph.node_count, dtype=np.int64)
        view = graph
    else:
        node_ids = manifest.split_indices(split)
        view = split_view(graph, manifest, split) if params.config.split_neighbors_only else graph
    artists = manifest.artist_keys() if params.config.mask_same_artist else None
    rng = np.random.default_rng(seed)
    rows = []
    for start in range(0, len(node_ids), batch_size):
        batch = node_ids[start : start + batch_size]
        block = sample_neighborhood(
            view,
            batch,
            params.config.fanouts,
            artists=artists,
            mask_same_artist_hop1=params.config.mask_same_artist,
            seed=int(rng.integers(0, 2**62)),
        )
        rows.append(forward(params, node_feats, visual_feats, block).embedding)
    data = (
        np.concatenate(rows, axis=0)
        if rows
        else np.empty((0, params.embedding_dim))
    )
    ids = [manifest[int(i)].id for i in node_ids]
    return EmbeddingStore(ids=ids, data=data)


def knn(store: EmbeddingStore, query_id: str, k: int = 5) -> list:
    """Top-k (id, cosine_distance) pairs, ascending distance, ties by id.

    The query itself is excluded; distances are 1 - cosine similarity,
    clipped into [0, 2].
    """
    row = store.id_to_row.get(str(query_id))
    if row is None:
        raise ValueError(f"query id {query_id!r} not in store")
    if not 0 < k < len(store.ids):
        raise ValueError(f"k must be in (0, {len(store.ids)}), got {k}")
    q = store.data[row]
    q_norm = np.linalg.norm(q)
    if q_norm == 0.0:
        raise ValueError(f"degenerate embedding for query {query_id!r}")
    norms = np.linalg.norm(store.data, axis=1)
    sims = np.zeros(len(store.ids))
    ok = norms > 0
    sims[ok] = (store.data[ok] @ q) / (norms[ok] * q_norm)
    dists = np.clip(1.0 - sims, 0.0, 2.0)
    ranked = sorted(
        ((float(dists[i]), store.ids[i]) for i in range(len(store.ids)) if i != row),
        key=lambda t: (t[0], t[1]),
    )
    return [(rid, d) for d, rid in ranked[:k]]


def attribute_matches(manifest: RecordManifest, query_id: str, hit_ids, keys) -> list:
    """Per-hit {key: True/False/None} flags comparing labels with the query's."""
    q = manifest[manifest.index[str(query_id)]]
    out = []
    for hid in hit_ids:
        rec = manifest[manifest.index[str(hid)]]
        flags = {}
        for key in keys:
            qv = q.labels.get(key, q.properties.get(key))
            hv = rec.labels.get(key, rec.properties.get(key))
            flags[key] = None if qv is None or hv is None else qv == hv
        out.append(flags)
    return out
