"""Graph neural network training and evaluation engine.

Builds a metadata-linked graph over records, samples fixed-fanout
neighborhoods, trains a two-branch encoder (mean-aggregating graph
layers fused with a projected visual feature vector) under a weighted
multi-task loss, and evaluates with classification, regression,
multi-label and retrieval metrics.

Submodules are imported lazily so the CLI can cap thread counts via
environment variables before numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "graph",
    "sampling",
    "nn",
    "model",
    "train",
    "metrics",
    "evaluate",
    "retrieval",
    "io",
    "synth",
    "plots",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
