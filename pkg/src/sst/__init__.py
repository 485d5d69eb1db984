"""Transformer encoder for multivariate sensor sequences with multi-task
pass/fail heads, built on a small self-contained autodiff core.

The usual entry points:

    synth_dataset / load_dataset   build or read train/val/test splits
    SstConfig, SstModel            configure and construct the model
    fit, grid_search               train with early stopping, sweep configs
    task_aucs, roc_curve           evaluate
    save_weights, load_weights     checkpoints

The ``sst`` console script wraps the same pipeline for the shell.
"""

from sst.data import (
    Batch,
    derive_label_mask,
    label_counts,
    load_dataset,
    pad_sequences,
    save_dataset,
    synth_dataset,
    time_split,
)
from sst.metrics import (
    RocCurve,
    SingleClassError,
    auc_score,
    format_report,
    multi_seed_report,
    roc_curve,
    roc_svg,
    task_aucs,
)
from sst.model import (
    CheckpointError,
    SstConfig,
    SstModel,
    load_weights,
    save_weights,
)
from sst.tensor import (
    DomainError,
    NumericsError,
    ShapeMismatchError,
    Tensor,
    grad_check,
)
from sst.training import (
    Adam,
    DivergenceError,
    LrSchedule,
    TaskWeights,
    TrainReport,
    class_weights,
    fit,
    grid_search,
    learning_rate,
    weighted_multitask_loss,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Batch",
    "CheckpointError",
    "DivergenceError",
    "DomainError",
    "LrSchedule",
    "NumericsError",
    "RocCurve",
    "ShapeMismatchError",
    "SingleClassError",
    "SstConfig",
    "SstModel",
    "TaskWeights",
    "Tensor",
    "TrainReport",
    "auc_score",
    "class_weights",
    "derive_label_mask",
    "fit",
    "format_report",
    "grad_check",
    "grid_search",
    "label_counts",
    "learning_rate",
    "load_dataset",
    "load_weights",
    "multi_seed_report",
    "pad_sequences",
    "roc_curve",
    "roc_svg",
    "save_dataset",
    "save_weights",
    "synth_dataset",
    "task_aucs",
    "time_split",
    "__version__",
]
