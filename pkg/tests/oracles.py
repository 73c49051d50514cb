"""Independent reference implementations and finite-difference helpers.

Everything here follows the plain definitions (dense loops, exhaustive
sorts, literal rule replay) so the engine's optimized paths can be
checked against them.
"""

from __future__ import annotations

import math

import numpy as np

from sagenet.io import Record, RecordManifest


# ---------------------------------------------------------------------------
# finite differences


def fd_grad(f, x, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f with respect to array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f(x)
        x[idx] = orig - eps
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * eps)
        it.iternext()
    return g


def max_rel_err(a, b) -> float:
    """Worst-case elementwise |a-b| / max(|a|, |b|, 1)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0


# ---------------------------------------------------------------------------
# manifests and graphs


def manifest_from(properties_list, labels_list=None, splits=None) -> RecordManifest:
    n = len(properties_list)
    labels_list = labels_list or [{} for _ in range(n)]
    splits = splits or [None] * n
    return RecordManifest(
        [
            Record(id=f"n{i:04d}", properties=dict(p), labels=dict(l), split=s)
            for i, (p, l, s) in enumerate(zip(properties_list, labels_list, splits))
        ]
    )


def brute_force_property_edges(values) -> set:
    """All (i, j), i < j, with equal property values; the O(n^2) definition."""
    n = len(values)
    return {(i, j) for i in range(n) for j in range(i + 1, n) if values[i] == values[j]}


def brute_force_split_edges(edges, splits, name) -> set:
    return {(i, j) for i, j in edges if splits[i] == name and splits[j] == name}


def downsample_reference(n, edges, max_degree, seed) -> set:
    """Independent replay of the degree-cap procedure on adjacency dicts.

    Visits nodes in ascending id; for an over-cap node, draws the edges
    to drop uniformly without replacement from its sorted neighbor list
    and removes both directions.
    """
    adj = {i: set() for i in range(n)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    rng = np.random.default_rng(seed)
    for i in range(n):
        excess = len(adj[i]) - max_degree
        if excess <= 0:
            continue
        current = sorted(adj[i])
        for k in rng.choice(len(current), size=excess, replace=False):
            j = current[int(k)]
            adj[i].discard(j)
            adj[j].discard(i)
    return {(i, j) for i in adj for j in adj[i] if i < j}


# ---------------------------------------------------------------------------
# schedule rule replay (literal reading of the two rules)


def plateau_trace(val_losses, lr0, factor=10.0, patience=5):
    """Per-epoch lr actually in effect, simulating the reduce-on-plateau rule."""
    lrs = []
    best = math.inf
    bad = 0
    lr = lr0
    for v in val_losses:
        lrs.append(lr)
        if v < best:
            best = v
            bad = 0
        else:
            bad += 1
        if bad == patience:
            lr = lr / factor
            bad = 0
    return lrs


def early_stop_epoch(val_losses, patience=10):
    """1-based epoch at which training would stop, or None."""
    best = math.inf
    best_epoch = 0
    for epoch, v in enumerate(val_losses, start=1):
        if v < best:
            best = v
            best_epoch = epoch
        if epoch - best_epoch >= patience:
            return epoch
    return None


# ---------------------------------------------------------------------------
# metric definitions


def accuracy_oracle(pred, truth) -> float:
    hits = sum(1 for p, t in zip(pred, truth) if p == t)
    return 100.0 * hits / len(truth)


def cs_oracle(abs_errors, theta) -> float:
    n_under = sum(1 for e in abs_errors if abs(e) < theta)
    return 100.0 * n_under / len(abs_errors)


def f1_oracle(scores, truth, threshold=0.5):
    """(cf1, of1, per-class f1 list) from per-class confusion counts."""
    n, c = np.asarray(scores).shape
    f1s = []
    tp_all = fp_all = fn_all = 0
    for k in range(c):
        tp = fp = fn = 0
        for i in range(n):
            pred = scores[i][k] >= threshold
            pos = truth[i][k] == 1
            if pred and pos:
                tp += 1
            elif pred and not pos:
                fp += 1
            elif not pred and pos:
                fn += 1
        tp_all += tp
        fp_all += fp
        fn_all += fn
        f1s.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0)
    present = [k for k in range(c) if any(truth[i][k] == 1 for i in range(n))]
    cf1 = sum(f1s[k] for k in present) / len(present) if present else 0.0
    of1 = (
        2 * tp_all / (2 * tp_all + fp_all + fn_all)
        if (2 * tp_all + fp_all + fn_all) > 0
        else 0.0
    )
    return cf1, of1, f1s


def ap_oracle(scores, truth) -> float:
    """Average precision by the rank-counting definition, O(n^2)."""
    n = len(scores)
    positives = [i for i in range(n) if truth[i] == 1]
    if not positives:
        return 0.0
    def rank(i):
        return 1 + sum(
            1
            for j in range(n)
            if scores[j] > scores[i] or (scores[j] == scores[i] and j < i)
        )
    total = 0.0
    for p in positives:
        rp = rank(p)
        hits = sum(1 for q in positives if rank(q) <= rp)
        total += hits / rp
    return total / len(positives)


def map_oracle(scores, truth) -> float:
    scores = np.asarray(scores)
    truth = np.asarray(truth)
    aps = [
        ap_oracle(scores[:, k].tolist(), truth[:, k].tolist())
        for k in range(scores.shape[1])
        if truth[:, k].sum() > 0
    ]
    return sum(aps) / len(aps) if aps else 0.0


# ---------------------------------------------------------------------------
# retrieval


def knn_oracle(ids, data, query_id, k):
    """Exhaustive cosine sort with (distance, id) ordering."""
    data = np.asarray(data, dtype=np.float64)
    row = ids.index(query_id)
    q = data[row]
    qn = math.sqrt(float(q @ q))
    scored = []
    for i, rid in enumerate(ids):
        if i == row:
            continue
        v = data[i]
        vn = math.sqrt(float(v @ v))
        sim = float(v @ q) / (vn * qn) if vn > 0 else 0.0
        dist = min(max(1.0 - sim, 0.0), 2.0)
        scored.append((dist, rid))
    scored.sort()
    return [(rid, d) for d, rid in scored[:k]]
