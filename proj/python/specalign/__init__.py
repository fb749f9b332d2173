"""Python bindings for the specalign core."""

import json

from ._core import (
    CheckpointError,
    ConfigError,
    DataError,
    DegenerateEmbeddingError,
    Error,
    IoError,
    LookupError,
    MemoryQueue,
    Model,
    QueueEmptyError,
    RoutingError,
    ShapeError,
    adapter_weight_count,
    contrastive_loss,
    distill_loss,
    lr_at,
    neighborhood_kl,
    patch_loss,
    retrieval,
    run_cli,
)
from ._core import _preset_json

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DegenerateEmbeddingError",
    "Error",
    "IoError",
    "LookupError",
    "MemoryQueue",
    "Model",
    "QueueEmptyError",
    "RoutingError",
    "ShapeError",
    "adapter_weight_count",
    "cli",
    "contrastive_loss",
    "distill_loss",
    "lr_at",
    "neighborhood_kl",
    "patch_loss",
    "preset",
    "retrieval",
    "run_cli",
]


def preset(name):
    """Model shape and per-stage training configuration of a variant, as a dict."""
    return json.loads(_preset_json(name))


def cli(*args):
    """Run a CLI command and return its JSON report. Raises Error on a nonzero exit."""
    status, out, err = run_cli([str(a) for a in args])
    if status != 0:
        raise Error(err.strip() or f"exit status {status}")
    return json.loads(out) if out.strip() else None
