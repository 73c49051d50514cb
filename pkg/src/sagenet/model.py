"""Two-branch model: graph encoder fused with a projected visual vector.

The encoder applies, per hop, `self @ W1.T + neighbor_mean @ W2.T + b`
over a sampled block, innermost hop first, with ReLU between hops.  The
visual branch is a trainable linear+ReLU projection over frozen
precomputed feature vectors.  The two halves are concatenated (visual
first) into the multimodal embedding that feeds one linear head per
task.
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .io import FeatureMatrix, RecordManifest
from .sampling import SampledBlock

TASK_KINDS = ("multiclass", "regression", "multilabel")

UNKNOWN_TAG = "Unknown"

MODEL_MAGIC = b"SGM1"


@dataclass
class TaskSpec:
    name: str
    kind: str
    output_dim: int
    weight: float = 1.0
    classes: list | None = None  # class/tag vocabulary for encoded kinds

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}, expected one of {TASK_KINDS}")
        if self.output_dim < 1:
            raise ValueError(f"task {self.name!r}: output_dim must be >= 1")
        if not self.weight > 0:
            raise ValueError(f"task {self.name!r}: weight must be positive")


@dataclass
class ModelConfig:
    feat_dim: int
    visual_dim: int
    hidden_dim: int = 256
    proj_dim: int = 256
    fanouts: tuple = (25, 10)
    l2_normalize: bool = False
    mask_same_artist: bool = True
    split_neighbors_only: bool = True  # restrict inference neighborhoods to the node's split

    def to_dict(self) -> dict:
        return {
            "feat_dim": self.feat_dim,
            "visual_dim": self.visual_dim,
            "hidden_dim": self.hidden_dim,
            "proj_dim": self.proj_dim,
            "fanouts": list(self.fanouts),
            "l2_normalize": self.l2_normalize,
            "mask_same_artist": self.mask_same_artist,
            "split_neighbors_only": self.split_neighbors_only,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["fanouts"] = tuple(d.get("fanouts", (25, 10)))
        return cls(**d)


def _glorot(rng, out_dim: int, in_dim: int) -> nn.Param:
    s = np.sqrt(6.0 / (in_dim + out_dim))
    return nn.Param(rng.uniform(-s, s, size=(out_dim, in_dim)))


class ModelParams:
    """All trainable tensors, in a fixed declared order."""

    def __init__(self, config: ModelConfig, tasks, seed: int = 0):
        self.config = config
        self.tasks = list(tasks)
        if not self.tasks:
            raise ValueError("at least one task is required")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate task names")
        rng = np.random.default_rng(seed)
        n_hops = len(config.fanouts)
        self.sage = []  # index 0 = outermost hop
        for li in range(n_hops):
            in_dim = config.feat_dim if li == n_hops - 1 else config.hidden_dim
            self.sage.append(
                {
                    "W1": _glorot(rng, config.hidden_dim, in_dim),
                    "W2": _glorot(rng, config.hidden_dim, in_dim),
                    "b": nn.Param(np.zeros((1, config.hidden_dim))),
                }
            )
        self.visual_proj = {
            "W": _glorot(rng, config.proj_dim, config.visual_dim),
            "b": nn.Param(np.zeros((1, config.proj_dim))),
        }
        self.heads = {}
        for t in self.tasks:
            self.heads[t.name] = {
                "W": _glorot(rng, t.output_dim, self.embedding_dim),
                "b": nn.Param(np.zeros((1, t.output_dim))),
            }

    @property
    def embedding_dim(self) -> int:
        return self.config.proj_dim + self.config.hidden_dim

    def named_params(self):
        for li, layer in enumerate(self.sage):
            for key in ("W1", "W2", "b"):
                yield f"sage{li}.{key}", layer[key]
        yield "visual_proj.W", self.visual_proj["W"]
        yield "visual_proj.b", self.visual_proj["b"]
        for t in self.tasks:
            yield f"head.{t.name}.W", self.heads[t.name]["W"]
            yield f"head.{t.name}.b", self.heads[t.name]["b"]

    def parameters(self) -> list:
        return [p for _, p in self.named_params()]

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "ModelParams":
        out = ModelParams.__new__(ModelParams)
        out.config = self.config
        out.tasks = self.tasks
        out.sage = [{k: p.copy() for k, p in layer.items()} for layer in self.sage]
        out.visual_proj = {k: p.copy() for k, p in self.visual_proj.items()}
        out.heads = {
            name: {k: p.copy() for k, p in head.items()} for name, head in self.heads.items()
        }
        return out


# ---------------------------------------------------------------------------
# bag-of-words node features


def build_tag_vocab(manifest: RecordManifest, tag_key: str = "tags", min_count: int = 10):
    """Tags attached to more than `min_count` records, sorted, plus Unknown last."""
    counts = Counter()
    for rec in manifest:
        tags = rec.labels.get(tag_key)
        if isinstance(tags, (list, tuple)):
            counts.update(set(map(str, tags)))
    vocab = sorted(t for t, c in counts.items() if c > min_count)
    vocab.append(UNKNOWN_TAG)
    return vocab


def bow_features(manifest: RecordManifest, tag_vocab, tag_key: str = "tags") -> FeatureMatrix:
    """Multi-hot tag encoding; records with no in-vocab tag get only Unknown."""
    if not tag_vocab or tag_vocab[-1] != UNKNOWN_TAG:
        raise ValueError(f"tag vocabulary must end with the {UNKNOWN_TAG!r} tag")
    col = {t: i for i, t in enumerate(tag_vocab)}
    data = np.zeros((len(manifest), len(tag_vocab)))
    for row, rec in enumerate(manifest):
        tags = rec.labels.get(tag_key)
        hit = False
        if isinstance(tags, (list, tuple)):
            for t in map(str, tags):
                c = col.get(t)
                if c is not None and c != len(tag_vocab) - 1:
                    data[row, c] = 1.0
                    hit = True
        if not hit:
            data[row, -1] = 1.0
    return FeatureMatrix(manifest.ids(), data)


# ---------------------------------------------------------------------------
# forward passes


def encode(params: ModelParams, feats: np.ndarray, block: SampledBlock):
    """Graph-encode the block's seeds; returns (embeddings, backward).

    `feats` is the full node-feature matrix in node order.  backward(g)
    accumulates parameter gradients and returns nothing (input features
    are frozen).
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape[1] != params.config.feat_dim:
        raise ValueError(
            f"node feature dim {feats.shape[1]} does not match model feat_dim "
            f"{params.config.feat_dim}"
        )
    if len(block.hops) != len(params.sage):
        raise ValueError(
            f"block has {len(block.hops)} hops but model expects {len(params.sage)}"
        )

    h = feats[block.levels[-1]]
    steps = []  # (layer, hop, x_self, agg, agg_back, relu_back, norm_back, prev_rows)
    for li in range(len(params.sage) - 1, -1, -1):
        layer = params.sage[li]
        hop = block.hops[li]
        agg, agg_back = nn.mean_aggregate(h, hop.offsets, hop.neighbor_pos)
        x_self = h[hop.self_pos]
        y = x_self @ layer["W1"].value.T + agg @ layer["W2"].value.T + layer["b"].value
        relu_back = None
        if li > 0:
            y, relu_back = nn.relu(y)
        norm_back = None
        if params.config.l2_normalize:
            y, norm_back = nn.l2_normalize_rows(y)
        steps.append((layer, hop, x_self, agg, agg_back, relu_back, norm_back, h.shape))
        h = y

    def backward(g):
        g = np.asarray(g, dtype=np.float64)
        for layer, hop, x_self, agg, agg_back, relu_back, norm_back, prev_shape in reversed(
            steps
        ):
            if norm_back is not None:
                g = norm_back(g)
            if relu_back is not None:
                g = relu_back(g)
            layer["W1"].grad += g.T @ x_self
            layer["W2"].grad += g.T @ agg
            layer["b"].grad += g.sum(axis=0, keepdims=True)
            dh = np.zeros(prev_shape)
            np.add.at(dh, hop.self_pos, g @ layer["W1"].value)
            dh += agg_back(g @ layer["W2"].value)
            g = dh

    return h, backward


@dataclass
class ForwardResult:
    embedding: np.ndarray  # multimodal rows aligned with block seeds
    outputs: dict  # task name -> logits / predictions
    backward: object = field(repr=False)  # callable taking {task: dlogits}


def forward(params: ModelParams, feats, visual, block: SampledBlock) -> ForwardResult:
    """Full two-branch pass for the block's seeds.

    `visual` is the full visual feature matrix in node order; rows are
    gathered for the seeds, projected, ReLU'd and concatenated in front
    of the graph embedding.
    """
    visual = np.asarray(visual, dtype=np.float64)
    if visual.shape[1] != params.config.visual_dim:
        raise ValueError(
            f"visual feature dim {visual.shape[1]} does not match model visual_dim "
            f"{params.config.visual_dim}"
        )
    graph_emb, back_graph = encode(params, feats, block)
    v = visual[block.seeds]
    p_lin, back_proj = nn.linear(v, params.visual_proj["W"], params.visual_proj["b"])
    p, back_relu = nn.relu(p_lin)
    x, back_cat = nn.concat(p, graph_emb)

    outputs = {}
    head_backs = {}
    for t in params.tasks:
        outputs[t.name], head_backs[t.name] = nn.linear(
            x, params.heads[t.name]["W"], params.heads[t.name]["b"]
        )

    def backward(dlogits: dict):
        gx = np.zeros_like(x)
        for name, g in dlogits.items():
            gx += head_backs[name](g)
        gp, gn = back_cat(gx)
        back_proj(back_relu(gp))
        back_graph(gn)

    return ForwardResult(embedding=x, outputs=outputs, backward=backward)


# ---------------------------------------------------------------------------
# labels and the multi-task loss


class LabelCodec:
    """Encodes manifest labels into per-task arrays for a batch of nodes.

    Missing labels are flagged rather than dropped so batch rows stay
    aligned: -1 class ids, NaN regression targets, and a row mask for
    multilabel targets.
    """

    def __init__(self, tasks):
        self.tasks = list(tasks)
        self._class_index = {
            t.name: {c: i for i, c in enumerate(t.classes or [])} for t in self.tasks
        }

    def encode(self, manifest: RecordManifest, node_ids) -> dict:
        out = {}
        for t in self.tasks:
            values = [manifest[int(i)].labels.get(t.name) for i in node_ids]
            if t.kind == "multiclass":
                index = self._class_index[t.name]
                out[t.name] = np.array(
                    [index.get(v, -1) if isinstance(v, str) else -1 for v in values],
                    dtype=np.int64,
                )
            elif t.kind == "regression":
                out[t.name] = np.array(
                    [
                        float(v)
                        if isinstance(v, (int, float)) and not isinstance(v, bool)
                        else np.nan
                        for v in values
                    ]
                )
            else:
                index = self._class_index[t.name]
                targets = np.zeros((len(values), t.output_dim))
                mask = np.zeros(len(values), dtype=bool)
                for row, v in enumerate(values):
                    if isinstance(v, (list, tuple)) and len(v):
                        mask[row] = True
                        for tag in map(str, v):
                            c = index.get(tag)
                            if c is not None:
                                targets[row, c] = 1.0
                out[t.name] = (targets, mask)
        return out


def infer_tasks(manifest: RecordManifest, names, weights=None) -> list:
    """Derive TaskSpecs from the manifest's label values.

    String labels become multiclass over the sorted observed classes,
    numeric labels regression, and list labels multilabel over the
    sorted observed tags.
    """
    weights = weights or {}
    tasks = []
    for name in names:
        present = [rec.labels[name] for rec in manifest if name in rec.labels and rec.labels[name] is not None]
        if not present:
            raise ValueError(f"no record carries a label for task {name!r}")
        w = float(weights.get(name, 1.0))
        if all(isinstance(v, str) for v in present):
            classes = sorted(set(present))
            tasks.append(
                TaskSpec(name, "multiclass", output_dim=len(classes), weight=w, classes=classes)
            )
        elif all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in present
        ):
            tasks.append(TaskSpec(name, "regression", output_dim=1, weight=w))
        elif all(isinstance(v, (list, tuple)) for v in present):
            classes = sorted({str(t) for v in present for t in v})
            if not classes:
                raise ValueError(f"task {name!r} has only empty tag lists")
            tasks.append(
                TaskSpec(name, "multilabel", output_dim=len(classes), weight=w, classes=classes)
            )
        else:
            raise ValueError(f"task {name!r} has mixed label types")
    return tasks


def multitask_loss(outputs: dict, labels: dict, tasks):
    """Weighted sum of per-task losses over each task's labeled rows.

    Returns (total, per_task, dlogits); rows without a label for a task
    contribute nothing to that task's loss or gradient, and a task with
    no labeled rows in the batch contributes zero.
    """
    total = 0.0
    per_task = {}
    dlogits = {}
    for t in tasks:
        logits = outputs[t.name]
        d = np.zeros_like(logits)
        if t.kind == "multiclass":
            y = labels[t.name]
            valid = y >= 0
            if valid.any():
                loss, dsub = nn.softmax_cross_entropy(logits[valid], y[valid])
                d[valid] = dsub
            else:
                loss = 0.0
        elif t.kind == "regression":
            y = labels[t.name]
            valid = ~np.isnan(y)
            if valid.any():
                loss, dsub = nn.mae_loss(logits[valid], y[valid])
                d[valid] = dsub
            else:
                loss = 0.0
        else:
            targets, valid = labels[t.name]
            if valid.any():
                loss, dsub = nn.bce_with_logits(logits[valid], targets[valid])
                d[valid] = dsub
            else:
                loss = 0.0
        per_task[t.name] = float(loss)
        dlogits[t.name] = d * t.weight
        total += t.weight * float(loss)
    return total, per_task, dlogits


# ---------------------------------------------------------------------------
# checkpoints


def save_model(path, params: ModelParams, extra: dict | None = None) -> None:
    """Write weights as `SGM1` plus a JSON sidecar at <path>.json."""
    named = list(params.named_params())
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(named)))
        for name, p in named:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<QQ", *p.value.shape))
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    sidecar = {
        "config": params.config.to_dict(),
        "tasks": [
            {
                "name": t.name,
                "kind": t.kind,
                "output_dim": t.output_dim,
                "weight": t.weight,
                "classes": t.classes,
            }
            for t in params.tasks
        ],
    }
    if extra:
        sidecar.update(extra)
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_model(path):
    """Read an `SGM1` checkpoint; returns (ModelParams, sidecar dict)."""
    with open(str(path) + ".json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    config = ModelConfig.from_dict(sidecar["config"])
    tasks = [
        TaskSpec(
            name=t["name"],
            kind=t["kind"],
            output_dim=t["output_dim"],
            weight=t["weight"],
            classes=t["classes"],
        )
        for t in sidecar["tasks"]
    ]
    params = ModelParams(config, tasks, seed=0)
    expected = dict(params.named_params())
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r} at offset 0, expected {MODEL_MAGIC!r}")
        (count,) = struct.unpack("<Q", fh.read(8))
        seen = set()
        for _ in range(count):
            (ln,) = struct.unpack("<I", fh.read(4))
            name = fh.read(ln).decode("utf-8")
            rows, cols = struct.unpack("<QQ", fh.read(16))
            payload = fh.read(rows * cols * 8)
            if len(payload) != rows * cols * 8:
                raise ValueError(f"{path}: truncated tensor {name!r}")
            if name not in expected:
                raise ValueError(f"{path}: unexpected tensor {name!r}")
            value = np.frombuffer(payload, dtype="<f8").reshape(rows, cols)
            if value.shape != expected[name].value.shape:
                raise ValueError(
                    f"{path}: tensor {name!r} has shape {value.shape}, "
                    f"expected {expected[name].value.shape}"
                )
            expected[name].value[:] = value
            seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise ValueError(f"{path}: missing tensors {sorted(missing)}")
    return params, sidecar
