"""Command-line surface tying graph building, training, evaluation,
retrieval and vocabulary tooling together.

Heavy modules are imported inside the commands so the --threads cap can
be applied to the BLAS pools via environment variables before numpy
loads.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_thread_cap(argv) -> None:
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is not None and threads.isdigit():
        for var in _THREAD_ENV_VARS:
            os.environ.setdefault(var, threads)


def _fail(e: Exception):
    raise click.ClickException(str(e))


seed_option = click.option(
    "--seed", type=int, default=0, envvar="SAGENET_SEED", show_default=True,
    help="RNG seed (falls back to $SAGENET_SEED).",
)


@click.group()
@click.option("--threads", type=int, default=None, help="Cap BLAS/worker thread count.")
def cli(threads):
    """Graph-based multimodal training and evaluation engine."""


@cli.command("build-graph")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--property", "property_key", default="school", show_default=True)
@click.option("--max-degree", default=128, show_default=True, type=int)
@seed_option
@click.option("--out", "out_path", required=True, type=click.Path())
def build_graph_cmd(manifest_path, property_key, max_degree, seed, out_path):
    """Link records sharing a property value, cap degrees, write a graph file."""
    from . import graph as G
    from . import io as IO

    try:
        manifest = IO.load_manifest(manifest_path)
        g = G.build_adjacency(manifest, property_key)
        g = G.downsample_degrees(g, max_degree=max_degree, seed=seed)
        IO.save_graph(out_path, g)
    except (ValueError, OSError) as e:
        _fail(e)
    click.echo(
        f"wrote {out_path}: {g.node_count} nodes, {g.edge_count} edges "
        f"(max degree {int(g.degrees().max()) if g.node_count else 0})"
    )


@cli.command("bow-vocab")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--min-count", default=10, show_default=True, type=int)
@click.option("--tag-key", default="tags", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def bow_vocab_cmd(manifest_path, min_count, tag_key, out_path):
    """Build the bag-of-words tag vocabulary (tags seen more than --min-count times)."""
    from . import io as IO
    from . import model as MD

    try:
        manifest = IO.load_manifest(manifest_path)
        vocab = MD.build_tag_vocab(manifest, tag_key=tag_key, min_count=min_count)
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(vocab, fh, indent=2)
    except (ValueError, OSError) as e:
        _fail(e)
    click.echo(f"wrote {out_path}: {len(vocab)} tags (incl. {vocab[-1]!r})")


def _load_common(IO, manifest_path, graph_path, features_path):
    manifest = IO.load_manifest(manifest_path)
    graph = IO.load_graph(graph_path)
    if graph.node_count != len(manifest):
        raise ValueError(
            f"graph has {graph.node_count} nodes but manifest has {len(manifest)} records"
        )
    visual = IO.load_features(features_path)
    return manifest, graph, visual


def _resolve_node_feats(MD, IO, manifest, visual_aligned, node_features, sidecar=None):
    """Node-feature matrix for the graph branch plus its provenance record."""
    if sidecar is not None:
        source = sidecar.get("node_feature_source", {"kind": "visual"})
        kind = source.get("kind", "visual")
        if kind == "bow":
            feats = MD.bow_features(manifest, source["vocab"]).aligned_to(manifest)
            return feats, source
        if kind == "file":
            if node_features in (None, "visual") or node_features == "bow":
                raise ValueError(
                    "model was trained with node features from a file; pass --node-features PATH"
                )
            return IO.load_features(node_features).aligned_to(manifest), source
        return visual_aligned, source
    if node_features in (None, "visual"):
        return visual_aligned, {"kind": "visual"}
    if node_features == "bow":
        vocab = MD.build_tag_vocab(manifest)
        feats = MD.bow_features(manifest, vocab).aligned_to(manifest)
        return feats, {"kind": "bow", "vocab": vocab}
    return IO.load_features(node_features).aligned_to(manifest), {"kind": "file"}


@cli.command("train")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--features", "features_path", required=True, type=click.Path(exists=True),
              help="Visual feature file (SGF1).")
@click.option("--node-features", default="visual", show_default=True,
              help="'visual', 'bow', or a feature file path for the graph branch.")
@click.option("--tasks", "task_names", default="style,artist,timeframe", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON optimizer/model config.")
@seed_option
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--log", "log_path", type=click.Path(), default=None,
              help="TrainLog CSV path (default: <out>.log.csv).")
@click.option("--plot", "plot_dir", type=click.Path(), default=None,
              help="Directory for training-curve figures.")
def train_cmd(manifest_path, graph_path, features_path, node_features, task_names,
              config_path, seed, out_path, log_path, plot_dir):
    """Train the two-branch model and write the best-validation checkpoint."""
    from . import io as IO
    from . import model as MD
    from . import train as TR

    try:
        manifest, graph, visual = _load_common(IO, manifest_path, graph_path, features_path)
        raw_cfg = {}
        if config_path:
            with open(config_path, "r", encoding="utf-8") as fh:
                raw_cfg = json.load(fh)
        optim = TR.OptimConfig.from_dict(raw_cfg)

        if not manifest.has_splits():
            assignment = IO.make_splits(manifest, seed=seed)
            manifest = IO.apply_splits(manifest, assignment)
            click.echo("manifest had no complete split assignment; generated one")

        names = [n.strip() for n in task_names.split(",") if n.strip()]
        if "timeframe" in names:
            added = IO.derive_timeframes(manifest)
            if added:
                click.echo(f"derived timeframe labels for {added} records")

        visual_aligned = visual.aligned_to(manifest)
        node_feats, feat_source = _resolve_node_feats(
            MD, IO, manifest, visual_aligned, node_features
        )

        tasks = MD.infer_tasks(manifest, names, weights=raw_cfg.get("task_weights"))
        model_cfg = raw_cfg.get("model", {})
        config = MD.ModelConfig(
            feat_dim=node_feats.shape[1],
            visual_dim=visual_aligned.shape[1],
            hidden_dim=int(model_cfg.get("hidden_dim", 256)),
            proj_dim=int(model_cfg.get("proj_dim", 256)),
            fanouts=tuple(model_cfg.get("fanouts", (25, 10))),
            l2_normalize=bool(model_cfg.get("l2_normalize", False)),
            mask_same_artist=bool(model_cfg.get("mask_same_artist", True)),
            split_neighbors_only=bool(model_cfg.get("split_neighbors_only", True)),
        )
        params = MD.ModelParams(config, tasks, seed=seed)
        result = TR.fit(params, manifest, graph, node_feats, visual_aligned, optim, seed=seed)

        MD.save_model(out_path, result.params, extra={"node_feature_source": feat_source})
        log_file = log_path or (str(out_path) + ".log.csv")
        result.log.to_csv(log_file)
        if plot_dir:
            from . import plots

            Path(plot_dir).mkdir(parents=True, exist_ok=True)
            plots.plot_training_curves(result.log, Path(plot_dir) / "training_curves.png")
    except (ValueError, OSError, TR.TrainingDiverged) as e:
        _fail(e)
    click.echo(
        f"wrote {out_path} (best epoch {result.best_epoch}, "
        f"val loss {result.best_val_loss:.6f}); log at {log_file}"
    )


@cli.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--node-features", default=None, help="Feature file if trained from one.")
@click.option("--split", default="test", show_default=True)
@seed_option
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--plot", "plot_dir", type=click.Path(), default=None)
def eval_cmd(model_path, manifest_path, graph_path, features_path, node_features,
             split, seed, report_path, plot_dir):
    """Evaluate a checkpoint on a split; write a JSON report (plus CS curve CSVs)."""
    from . import evaluate as EV
    from . import io as IO
    from . import metrics as M
    from . import model as MD

    try:
        params, sidecar = MD.load_model(model_path)
        manifest, graph, visual = _load_common(IO, manifest_path, graph_path, features_path)
        if any(t.name == "timeframe" for t in params.tasks):
            IO.derive_timeframes(manifest)
        visual_aligned = visual.aligned_to(manifest)
        node_feats, _ = _resolve_node_feats(
            MD, IO, manifest, visual_aligned, node_features, sidecar=sidecar
        )
        report = EV.evaluate_split(
            params, manifest, graph, node_feats, visual_aligned, split, seed=seed
        )
        EV.save_report(report, report_path)
        base = Path(report_path)
        for name, entry in report["tasks"].items():
            if "cs_curve" in entry:
                csv_path = base.with_suffix(f".cs_{name}.csv")
                M.save_cs_curve_csv(entry["cs_curve"], csv_path)
                click.echo(f"wrote {csv_path}")
                if plot_dir:
                    from . import plots

                    Path(plot_dir).mkdir(parents=True, exist_ok=True)
                    plots.plot_cs_curve(
                        entry["cs_curve"], Path(plot_dir) / f"cs_{name}.png", label=name
                    )
    except (ValueError, OSError) as e:
        _fail(e)
    for name, entry in report["tasks"].items():
        stats = ", ".join(
            f"{k}={v:.4f}" for k, v in entry.items()
            if isinstance(v, float) and k != "n_labeled"
        )
        click.echo(f"{split}/{name}: {stats}")
    click.echo(f"wrote {report_path}")


@cli.command("retrieve")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--node-features", default=None)
@click.option("--query", "query_id", required=True)
@click.option("--k", default=5, show_default=True, type=int)
@click.option("--split", default="all", show_default=True)
@seed_option
@click.option("--store-out", type=click.Path(), default=None,
              help="Also write the embedding store (SGE1).")
def retrieve_cmd(model_path, manifest_path, graph_path, features_path, node_features,
                 query_id, k, split, seed, store_out):
    """Print the top-k nearest records by cosine distance with attribute matches."""
    from . import io as IO
    from . import model as MD
    from . import retrieval as RV

    try:
        params, sidecar = MD.load_model(model_path)
        manifest, graph, visual = _load_common(IO, manifest_path, graph_path, features_path)
        if any(t.name == "timeframe" for t in params.tasks):
            IO.derive_timeframes(manifest)
        visual_aligned = visual.aligned_to(manifest)
        node_feats, _ = _resolve_node_feats(
            MD, IO, manifest, visual_aligned, node_features, sidecar=sidecar
        )
        store = RV.embed_all(
            params, manifest, graph, node_feats, visual_aligned, split=split, seed=seed
        )
        if store_out:
            IO.save_embeddings(store_out, store.ids, store.data)
        hits = RV.knn(store, query_id, k=k)
        keys = [t.name for t in params.tasks if t.kind == "multiclass"]
        flags = RV.attribute_matches(manifest, query_id, [h for h, _ in hits], keys)
    except (ValueError, OSError) as e:
        _fail(e)

    header = f"{'rank':>4}  {'id':<16} {'distance':>10}  " + "  ".join(f"{k:<10}" for k in keys)
    click.echo(f"query {query_id}")
    click.echo(header)
    for rank, ((hid, dist), fl) in enumerate(zip(hits, flags), start=1):
        marks = "  ".join(
            f"{('match' if fl[k] else 'diff') if fl[k] is not None else '-':<10}" for k in keys
        )
        click.echo(f"{rank:>4}  {hid:<16} {dist:>10.6f}  {marks}")


def _parse_thetas(expr: str):
    parts = expr.split(":")
    if len(parts) != 3:
        raise ValueError(f"--thetas expects start:stop:step, got {expr!r}")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise ValueError(f"invalid theta range {expr!r}")
    import numpy as np

    return np.arange(start, stop + step / 2, step)


@cli.command("cs-curve")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--node-features", default=None)
@click.option("--split", default="test", show_default=True)
@click.option("--task", "task_name", default=None, help="Regression task (default: first one).")
@click.option("--thetas", default="0:50:1", show_default=True)
@seed_option
@click.option("--out", "out_path", required=True, type=click.Path(), help="CSV output.")
@click.option("--plot", "plot_path", type=click.Path(), default=None, help="PNG output.")
def cs_curve_cmd(model_path, manifest_path, graph_path, features_path, node_features,
                 split, task_name, thetas, seed, out_path, plot_path):
    """Cumulative-score curve of a regression task over a theta grid."""
    from . import evaluate as EV
    from . import io as IO
    from . import metrics as M
    from . import model as MD

    try:
        grid = _parse_thetas(thetas)
        params, sidecar = MD.load_model(model_path)
        manifest, graph, visual = _load_common(IO, manifest_path, graph_path, features_path)
        if any(t.name == "timeframe" for t in params.tasks):
            IO.derive_timeframes(manifest)
        visual_aligned = visual.aligned_to(manifest)
        node_feats, _ = _resolve_node_feats(
            MD, IO, manifest, visual_aligned, node_features, sidecar=sidecar
        )
        if task_name is None:
            task_name = next(
                (t.name for t in params.tasks if t.kind == "regression"), None
            )
            if task_name is None:
                raise ValueError("model has no regression task")
        errors = EV.regression_errors(
            params, manifest, graph, node_feats, visual_aligned, split, task_name, seed=seed
        )
        curve = M.cs_curve(errors, grid)
        M.save_cs_curve_csv(curve, out_path)
        if plot_path:
            from . import plots

            plots.plot_cs_curve(curve, plot_path, label=task_name)
    except (ValueError, OSError) as e:
        _fail(e)
    click.echo(f"wrote {out_path} ({len(curve)} thetas, task {task_name})")


def main():
    _apply_thread_cap(sys.argv[1:])
    cli(prog_name="sagenet")


if __name__ == "__main__":
    main()
