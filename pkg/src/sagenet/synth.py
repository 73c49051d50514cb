"""Synthetic record collections for experiments, demos and tests.

Nodes get a school property, a style label correlated with the school,
an artist within the school, a small-scale regression target tied to
the style, and a few style-correlated tags.  Features are per-style
prototype vectors plus Gaussian noise, so the tasks are learnable at
desk scale.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import (
    DEFAULT_FRACTIONS,
    FeatureMatrix,
    Record,
    RecordManifest,
    apply_splits,
    make_splits,
    save_features,
    save_manifest,
)


def make_synthetic_dataset(
    n_nodes: int = 200,
    n_schools: int = 4,
    n_styles: int = 4,
    feat_dim: int = 16,
    noise: float = 0.5,
    n_tags: int = 3,
    artists_per_school: int = 5,
    style_flip_prob: float = 0.1,
    target_slope: float = 3.0,
    target_base: float = 0.0,
    fractions=DEFAULT_FRACTIONS,
    seed: int = 0,
):
    """Returns (manifest, visual FeatureMatrix)."""
    rng = np.random.default_rng(seed)
    prototypes = rng.normal(0.0, 3.0, size=(n_styles, feat_dim))
    records = []
    feats = np.empty((n_nodes, feat_dim))
    for i in range(n_nodes):
        school = int(rng.integers(n_schools))
        style = school % n_styles
        if rng.random() < style_flip_prob:
            style = int(rng.integers(n_styles))
        artist = f"artist_{school}_{int(rng.integers(artists_per_school))}"
        target = target_base + target_slope * style + float(rng.uniform(-0.5, 0.5))
        tags = [f"tag{k}" for k in range(n_tags) if rng.random() < (0.9 if style % n_tags == k else 0.1)]
        if not tags:
            tags = [f"tag{style % n_tags}"]
        records.append(
            Record(
                id=f"rec{i:05d}",
                properties={"school": f"school_{school}", "artist": artist},
                labels={
                    "style": f"style_{style}",
                    "artist": artist,
                    "date": target,
                    "tags": tags,
                },
            )
        )
        feats[i] = prototypes[style] + rng.normal(0.0, noise, size=feat_dim)
    manifest = RecordManifest(records)
    manifest = apply_splits(manifest, make_splits(manifest, fractions, seed=seed))
    return manifest, FeatureMatrix(manifest.ids(), feats)


def write_synthetic_files(out_dir, **kwargs):
    """Materialize a synthetic dataset; returns (manifest_path, features_path)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest, feats = make_synthetic_dataset(**kwargs)
    manifest_path = out_dir / "manifest.jsonl"
    features_path = out_dir / "visual.sgf"
    save_manifest(manifest, manifest_path)
    save_features(features_path, feats.ids, feats.data)
    return manifest_path, features_path
