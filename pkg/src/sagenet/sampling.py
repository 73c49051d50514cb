"""Fixed-fanout neighborhood sampling for minibatch encoding.

A SampledBlock records, per hop, which neighbors were drawn for each
seed, plus the compacted node id array of the next level so the encoder
can work on small dense matrices.  Sampling is uniform without
replacement with a take-all fallback when a neighborhood is smaller
than the fanout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph


@dataclass
class HopBlock:
    """Bipartite seed -> sampled-neighbor structure for one hop.

    `neighbors` holds global node ids; `neighbor_pos` and `self_pos`
    are row positions in the next level's id array.
    """

    seeds: np.ndarray
    offsets: np.ndarray
    neighbors: np.ndarray
    neighbor_pos: np.ndarray
    self_pos: np.ndarray


@dataclass
class SampledBlock:
    fanouts: tuple
    hops: list  # hops[0] pairs with the batch seeds, deeper hops follow
    levels: list  # levels[0] = batch seeds, levels[-1] = input node ids

    @property
    def seeds(self) -> np.ndarray:
        return self.levels[0]


def sample_neighborhood(
    g: Graph,
    seeds,
    fanouts=(25, 10),
    artists=None,
    mask_same_artist_hop1: bool = False,
    seed: int = 0,
) -> SampledBlock:
    """Sample a multi-hop neighborhood block for `seeds`.

    With masking enabled, hop-1 candidates exclude neighbors sharing the
    seed's artist; deeper hops sample from unmasked neighborhoods.
    Deterministic for a given seed.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    if seeds.size and (seeds.min() < 0 or seeds.max() >= g.node_count):
        raise ValueError("seed node id out of range")
    if mask_same_artist_hop1 and artists is None:
        raise ValueError("mask_same_artist_hop1 requires per-node artists")
    if artists is not None:
        artists = np.asarray(artists)

    rng = np.random.default_rng(seed)
    hops: list[HopBlock] = []
    levels: list[np.ndarray] = [seeds]
    level = seeds
    for hop_index, fanout in enumerate(fanouts):
        if fanout <= 0:
            raise ValueError(f"fanout must be positive, got {fanout}")
        mask_hop = mask_same_artist_hop1 and hop_index == 0
        sampled: list[np.ndarray] = []
        for s in level:
            cands = g.neighbors_of(int(s))
            if mask_hop:
                cands = cands[artists[cands] != artists[s]]
            if len(cands) > fanout:
                cands = rng.choice(cands, size=fanout, replace=False)
            sampled.append(cands)
        counts = np.fromiter((len(c) for c in sampled), dtype=np.int64, count=len(level))
        offsets = np.zeros(len(level) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        flat = (
            np.concatenate(sampled) if offsets[-1] else np.empty(0, dtype=np.int64)
        ).astype(np.int64)
        next_level = np.unique(np.concatenate([level, flat]))
        hops.append(
            HopBlock(
                seeds=level,
                offsets=offsets,
                neighbors=flat,
                neighbor_pos=np.searchsorted(next_level, flat),
                self_pos=np.searchsorted(next_level, level),
            )
        )
        levels.append(next_level)
        level = next_level
    return SampledBlock(fanouts=tuple(fanouts), hops=hops, levels=levels)
