"""Split-level model evaluation and report assembly."""

from __future__ import annotations

import json

import numpy as np

from . import metrics as M
from .graph import Graph, split_view
from .io import RecordManifest
from .model import LabelCodec, ModelParams, forward
from .nn import sigmoid
from .sampling import sample_neighborhood

DEFAULT_THETAS = tuple(range(0, 51))


def predict_split(
    params: ModelParams,
    manifest: RecordManifest,
    graph: Graph,
    node_feats,
    visual_feats,
    split: str,
    seed: int = 0,
    batch_size: int = 512,
):
    """Raw head outputs and encoded labels for every node of a split."""
    node_ids = manifest.split_indices(split)
    if len(node_ids) == 0:
        raise ValueError(f"split {split!r} is empty")
    view = split_view(graph, manifest, split) if params.config.split_neighbors_only else graph
    artists = manifest.artist_keys() if params.config.mask_same_artist else None
    codec = LabelCodec(params.tasks)
    rng = np.random.default_rng(seed)
    outputs = {t.name: [] for t in params.tasks}
    label_chunks = []
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
        res = forward(params, node_feats, visual_feats, block)
        for name, out in res.outputs.items():
            outputs[name].append(out)
        label_chunks.append(codec.encode(manifest, batch))

    merged_outputs = {name: np.concatenate(chunks, axis=0) for name, chunks in outputs.items()}
    merged_labels = {}
    for t in params.tasks:
        if t.kind == "multilabel":
            merged_labels[t.name] = (
                np.concatenate([c[t.name][0] for c in label_chunks], axis=0),
                np.concatenate([c[t.name][1] for c in label_chunks]),
            )
        else:
            merged_labels[t.name] = np.concatenate([c[t.name] for c in label_chunks])
    return node_ids, merged_outputs, merged_labels


def evaluate_split(
    params: ModelParams,
    manifest: RecordManifest,
    graph: Graph,
    node_feats,
    visual_feats,
    split: str,
    seed: int = 0,
    thetas=DEFAULT_THETAS,
) -> dict:
    """Per-task metric report for a split.

    Multiclass tasks get accuracy (percent); regression tasks MAE, the
    cumulative-score curve over `thetas` and CS at 5; multilabel tasks
    CF1/OF1/mAP plus a per-class F1 table.
    """
    node_ids, outputs, labels = predict_split(
        params, manifest, graph, node_feats, visual_feats, split, seed
    )
    report = {"split": split, "n": int(len(node_ids)), "tasks": {}}
    for t in params.tasks:
        logits = outputs[t.name]
        entry = {"kind": t.kind}
        if t.kind == "multiclass":
            y = labels[t.name]
            valid = y >= 0
            entry["n_labeled"] = int(valid.sum())
            if valid.any():
                entry["accuracy"] = M.accuracy(logits[valid].argmax(axis=1), y[valid])
        elif t.kind == "regression":
            y = labels[t.name]
            valid = ~np.isnan(y)
            entry["n_labeled"] = int(valid.sum())
            if valid.any():
                errors = np.abs(logits[valid, 0] - y[valid])
                entry["mae"] = float(errors.mean())
                entry["cs@5"] = M.cumulative_score(errors, 5.0)
                entry["cs_curve"] = M.cs_curve(errors, thetas)
        else:
            targets, valid = labels[t.name]
            entry["n_labeled"] = int(valid.sum())
            if valid.any():
                scores = sigmoid(logits[valid])
                cf1, of1 = M.cf1_of1(scores, targets[valid])
                entry["cf1"] = cf1
                entry["of1"] = of1
                entry["map"] = M.mean_average_precision(scores, targets[valid])
                f1s = M.per_class_f1(scores, targets[valid])
                entry["per_class_f1"] = {
                    c: float(f) for c, f in zip(t.classes or range(len(f1s)), f1s)
                }
        report["tasks"][t.name] = entry
    return report


def save_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)


def regression_errors(params, manifest, graph, node_feats, visual_feats, split, task_name, seed=0):
    """Absolute errors of one regression task over a split."""
    _, outputs, labels = predict_split(
        params, manifest, graph, node_feats, visual_feats, split, seed
    )
    task = next((t for t in params.tasks if t.name == task_name), None)
    if task is None or task.kind != "regression":
        raise ValueError(f"{task_name!r} is not a regression task of this model")
    y = labels[task_name]
    valid = ~np.isnan(y)
    if not valid.any():
        raise ValueError(f"split {split!r} has no labels for task {task_name!r}")
    return np.abs(outputs[task_name][valid, 0] - y[valid])
