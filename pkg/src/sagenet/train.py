"""Optimization loop: SGD-momentum / Adam, plateau LR decay, early stopping.

`fit` shuffles train nodes each epoch, samples a neighborhood block per
batch, runs the fused forward/backward, and steps the optimizer.  Epoch
ends run a full validation pass, the LR scheduler and the early-stop
check; the best-validation parameter snapshot is what comes back.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, split_view
from .io import RecordManifest
from .model import LabelCodec, ModelParams, forward, multitask_loss
from .sampling import sample_neighborhood


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass
class OptimConfig:
    kind: str = "sgd_momentum"  # or "adam"
    lr: float = 0.001
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 100
    plateau_enabled: bool = True
    plateau_factor: float = 10.0
    plateau_patience: int = 5
    early_stop_patience: int = 10
    min_delta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patiences must be >= 1")
        if not self.plateau_factor > 1:
            raise ValueError("plateau factor must be > 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lr": self.lr,
            "momentum": self.momentum,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "plateau": {
                "enabled": self.plateau_enabled,
                "factor": self.plateau_factor,
                "patience": self.plateau_patience,
            },
            "early_stop_patience": self.early_stop_patience,
            "min_delta": self.min_delta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimConfig":
        d = dict(d)
        plateau = d.pop("plateau", None)
        if plateau:
            d.setdefault("plateau_enabled", plateau.get("enabled", True))
            d.setdefault("plateau_factor", plateau.get("factor", 10.0))
            d.setdefault("plateau_patience", plateau.get("patience", 5))
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def from_json(cls, path) -> "OptimConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# parameter updates


def sgd_momentum_step(params, lr: float, momentum: float = 0.9) -> None:
    """v <- momentum*v + g; w <- w - lr*v; gradients zeroed afterwards."""
    for p in params:
        p.m *= momentum
        p.m += p.grad
        p.value -= lr * p.m
        p.zero_grad()


def adam_step(
    params,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    step: int = 1,
) -> None:
    """Bias-corrected Adam update; `step` is the 1-based update count."""
    if step < 1:
        raise ValueError("step must be >= 1")
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for p in params:
        p.m *= beta1
        p.m += (1.0 - beta1) * p.grad
        p.v *= beta2
        p.v += (1.0 - beta2) * p.grad**2
        p.value -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)
        p.zero_grad()


class Optimizer:
    """Thin stateful wrapper dispatching to the update functions."""

    def __init__(self, cfg: OptimConfig):
        self.cfg = cfg
        self.lr = cfg.lr
        self.t = 0

    def step(self, params) -> None:
        self.t += 1
        if self.cfg.kind == "adam":
            adam_step(
                params, self.lr, self.cfg.beta1, self.cfg.beta2, self.cfg.eps, step=self.t
            )
        else:
            sgd_momentum_step(params, self.lr, self.cfg.momentum)


# ---------------------------------------------------------------------------
# validation-loss driven schedules

# Both rules track the best loss seen so far with strict improvement and a
# counter of consecutive non-improving epochs; the counter resets on
# improvement, and for the scheduler also on each reduction.


def reduce_on_plateau(
    val_losses, lr: float, factor: float = 10.0, patience: int = 5, min_delta: float = 0.0
) -> float:
    """Replay the factor-`factor` reduction rule over a loss trace; returns the final lr."""
    best = math.inf
    bad = 0
    for v in val_losses:
        if v < best - min_delta:
            best = v
            bad = 0
        else:
            bad += 1
            if bad >= patience:
                lr /= factor
                bad = 0
    return lr


def early_stop(val_losses, patience: int = 10, min_delta: float = 0.0) -> bool:
    """True exactly when the best loss in the trace is >= `patience` epochs old."""
    best = math.inf
    since = 0
    for v in val_losses:
        if v < best - min_delta:
            best = v
            since = 0
        else:
            since += 1
    return since >= patience


class PlateauScheduler:
    def __init__(self, lr: float, factor: float = 10.0, patience: int = 5, min_delta: float = 0.0):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.bad = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr /= self.factor
                self.bad = 0
        return self.lr


class EarlyStopper:
    def __init__(self, patience: int = 10, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.since = 0

    def step(self, val_loss: float) -> bool:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.since = 0
        else:
            self.since += 1
        return self.since >= self.patience


# ---------------------------------------------------------------------------
# epoch bookkeeping


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    metric_columns: list = field(default_factory=list)

    def append(self, epoch, train_loss, val_loss, lr, metrics: dict):
        for k in metrics:
            if k not in self.metric_columns:
                self.metric_columns.append(k)
        self.rows.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "lr": lr,
                **metrics,
            }
        )

    def val_losses(self) -> list:
        return [r["val_loss"] for r in self.rows]

    def to_csv(self, path) -> None:
        cols = ["epoch", "train_loss", "val_loss", "lr", *self.metric_columns]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                cells = []
                for c in cols:
                    v = r.get(c, "")
                    if isinstance(v, float):
                        cells.append(f"{v:.17g}")
                    else:
                        cells.append(str(v))
                fh.write(",".join(cells) + "\n")


@dataclass
class FitResult:
    params: ModelParams
    log: TrainLog
    best_epoch: int
    best_val_loss: float


# ---------------------------------------------------------------------------
# metric helpers used on the validation pass


def _val_metrics(task, logits, labels) -> dict:
    from . import metrics as M

    out = {}
    if task.kind == "multiclass":
        valid = labels >= 0
        if valid.any():
            pred = logits[valid].argmax(axis=1)
            out[f"{task.name}_acc"] = M.accuracy(pred, labels[valid])
    elif task.kind == "regression":
        valid = ~np.isnan(labels)
        if valid.any():
            out[f"{task.name}_mae"] = float(
                np.abs(logits[valid, 0] - labels[valid]).mean()
            )
    else:
        targets, valid = labels
        if valid.any():
            from .nn import sigmoid

            _, of1 = M.cf1_of1(sigmoid(logits[valid]), targets[valid])
            out[f"{task.name}_of1"] = of1
    return out


def _batches(ids: np.ndarray, size: int):
    for start in range(0, len(ids), size):
        yield ids[start : start + size]


def fit(
    params: ModelParams,
    manifest: RecordManifest,
    graph: Graph,
    node_feats: np.ndarray,
    visual_feats: np.ndarray,
    optim: OptimConfig,
    seed: int = 0,
) -> FitResult:
    """Train until early stop or max_epochs; returns the best-validation snapshot.

    Neighborhoods are restricted to each node's own split (train during
    training batches, val during validation) unless the model config
    says otherwise, and hop-1 same-artist edges are masked when the
    model config asks for it.
    """
    train_ids = manifest.split_indices("train")
    val_ids = manifest.split_indices("val")
    if len(train_ids) == 0 or len(val_ids) == 0:
        raise ValueError("train and val splits must both be non-empty")

    cfg = params.config
    train_graph = split_view(graph, manifest, "train")
    val_graph = split_view(graph, manifest, "val") if cfg.split_neighbors_only else graph
    artists = manifest.artist_keys() if cfg.mask_same_artist else None
    codec = LabelCodec(params.tasks)
    optimizer = Optimizer(optim)
    scheduler = PlateauScheduler(
        optim.lr, optim.plateau_factor, optim.plateau_patience, optim.min_delta
    )
    stopper = EarlyStopper(optim.early_stop_patience, optim.min_delta)
    rng = np.random.default_rng(seed)
    log = TrainLog()

    best_val = math.inf
    best_epoch = 0
    best_params = params.copy()

    for epoch in range(1, optim.max_epochs + 1):
        perm = rng.permutation(train_ids)
        loss_sum = 0.0
        for batch in _batches(perm, optim.batch_size):
            block = sample_neighborhood(
                train_graph,
                batch,
                cfg.fanouts,
                artists=artists,
                mask_same_artist_hop1=cfg.mask_same_artist,
                seed=int(rng.integers(0, 2**62)),
            )
            res = forward(params, node_feats, visual_feats, block)
            labels = codec.encode(manifest, batch)
            total, per_task, dlogits = multitask_loss(res.outputs, labels, params.tasks)
            if not math.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, lr={optimizer.lr:g}, "
                    f"per-task losses: {per_task}"
                )
            res.backward(dlogits)
            optimizer.step(params.parameters())
            loss_sum += total * len(batch)
        train_loss = loss_sum / len(train_ids)

        val_loss, metrics = _validation_pass(
            params, manifest, val_graph, node_feats, visual_feats, val_ids, codec, optim, rng
        )
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")

        log.append(epoch, train_loss, val_loss, optimizer.lr, metrics)

        if val_loss < best_val - optim.min_delta:
            best_val = val_loss
            best_epoch = epoch
            best_params = params.copy()
        if stopper.step(val_loss):
            break
        if optim.plateau_enabled:
            optimizer.lr = scheduler.step(val_loss)

    return FitResult(params=best_params, log=log, best_epoch=best_epoch, best_val_loss=best_val)


def _validation_pass(
    params, manifest, val_graph, node_feats, visual_feats, val_ids, codec, optim, rng
):
    cfg = params.config
    artists = manifest.artist_keys() if cfg.mask_same_artist else None
    loss_sum = 0.0
    logits_by_task = {t.name: [] for t in params.tasks}
    labels_rows = []
    for batch in _batches(val_ids, optim.batch_size):
        block = sample_neighborhood(
            val_graph,
            batch,
            cfg.fanouts,
            artists=artists,
            mask_same_artist_hop1=cfg.mask_same_artist,
            seed=int(rng.integers(0, 2**62)),
        )
        res = forward(params, node_feats, visual_feats, block)
        labels = codec.encode(manifest, batch)
        total, _, _ = multitask_loss(res.outputs, labels, params.tasks)
        loss_sum += total * len(batch)
        for name, out in res.outputs.items():
            logits_by_task[name].append(out)
        labels_rows.append(labels)

    metrics = {}
    for t in params.tasks:
        logits = np.concatenate(logits_by_task[t.name], axis=0)
        if t.kind == "multilabel":
            targets = np.concatenate([lr[t.name][0] for lr in labels_rows], axis=0)
            valid = np.concatenate([lr[t.name][1] for lr in labels_rows])
            merged = (targets, valid)
        else:
            merged = np.concatenate([lr[t.name] for lr in labels_rows])
        metrics.update(_val_metrics(t, logits, merged))
    return loss_sum / len(val_ids), metrics
