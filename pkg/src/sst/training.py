"""Training stack: class-weighted multi-task cross-entropy with optional
homoscedastic uncertainty weighting, the warmup/decay learning-rate
schedule, Adam, early stopping with best-weight restore, and grid search.

Loss shape.  For task j and label t (0 negative, 1 positive) the partial
loss is the presence-masked, class-weighted mean negative log-likelihood
over the samples where task j was measured.  With uncertainty weighting
each partial is scaled by exp(-s_jt) and regularized by s_jt/2, where
s = log(sigma^2) is trainable and starts at 0 so both variants coincide
at initialization.  An L2 penalty over dense/projection weights (never
biases or norm gains) is added when l2_factor > 0.
"""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from sst import metrics as M
from sst import tensor as T
from sst.data import Batch, label_counts
from sst.model import SstConfig, SstModel
from sst.tensor import NumericsError, Tensor

logger = logging.getLogger("sst.training")

PROB_FLOOR = 1e-12


class DivergenceError(ArithmeticError):
    """Training produced a non-finite quantity; carries where it happened
    and the report accumulated up to the last finite epoch."""

    def __init__(self, message: str, epoch: int, step: int, report=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.report = report


# -- task weights ------------------------------------------------------


def class_weights(counts, m: int) -> np.ndarray:
    """w[j][t] = N / (2m * n[j][t]) where N sums every (task, label) count.

    Rare classes get proportionally larger weights; a perfectly balanced
    single task yields weight 1 for both labels.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (m, 2):
        raise ValueError(f"counts must be [m={m}, 2], got {counts.shape}")
    zero = np.argwhere(counts == 0)
    if len(zero):
        j, t = zero[0]
        label = "negative" if t == 0 else "positive"
        raise ValueError(
            f"task {j} has zero {label} samples; drop or merge this task "
            f"before computing class weights"
        )
    total = counts.sum()
    return total / (2.0 * m * counts)


@dataclass
class TaskWeights:
    w: np.ndarray          # [m, 2], fixed
    log_var: Tensor        # [m, 2], trainable s = log(sigma^2)

    @classmethod
    def from_counts(cls, counts, m: int) -> "TaskWeights":
        return cls(
            w=class_weights(counts, m),
            log_var=Tensor(np.zeros((m, 2)), requires_grad=True),
        )


def weighted_multitask_loss(probs, labels, label_mask, tw: TaskWeights,
                            use_uncertainty: bool,
                            l2_params=(), l2_factor: float = 0.0) -> Tensor:
    """Scalar training objective over a batch.

    probs/labels are [B, 2m] with (neg, pos) column pairs; label_mask is
    [B, m].  Each pair of raw sigmoid heads is normalized to a proper
    two-class distribution before the log: without that step the heads are
    independent and the loss is minimized by pushing both to 1, which
    carries no class information.  Raw values at or beyond the open
    interval (0, 1) are clamped to [1e-12, 1-1e-12] and the event logged.
    """
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    labels_data = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=np.float64)
    mask_data = label_mask.data if isinstance(label_mask, Tensor) else np.asarray(label_mask, dtype=np.float64)

    n, width = probs.shape
    m = width // 2
    if labels_data.shape != (n, width) or mask_data.shape != (n, m):
        raise ValueError(
            f"inconsistent loss inputs: probs {probs.shape}, labels "
            f"{labels_data.shape}, label_mask {mask_data.shape}"
        )

    if np.any((probs.data <= 0.0) | (probs.data >= 1.0)):
        logger.warning(
            "predicted probabilities outside (0,1) clamped to [%g, %g]",
            PROB_FLOOR, 1.0 - PROB_FLOOR,
        )
    clipped = T.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    pairs = clipped.reshape(n, m, 2)
    normalized = pairs / pairs.sum(axis=2, keepdims=True)
    logp = T.log(normalized.reshape(n, width))

    # constant coefficient: presence mask * class weight * one-hot label
    mask_rep = np.repeat(mask_data, 2, axis=1)
    coef = labels_data * mask_rep * tw.w.reshape(-1)[None, :]
    present = np.maximum(mask_data.sum(axis=0), 1.0)  # per-task sample count
    per_jt = T.neg(T.reduce_sum(logp * Tensor(coef), axis=0)) / Tensor(np.repeat(present, 2))

    if use_uncertainty:
        s = tw.log_var.reshape(2 * m)
        total = T.reduce_sum(T.exp(T.neg(s)) * per_jt + T.scale(s, 0.5))
    else:
        total = T.reduce_sum(per_jt)

    if l2_factor > 0.0:
        penalty = None
        for w in l2_params:
            term = T.reduce_sum(w * w)
            penalty = term if penalty is None else penalty + term
        if penalty is not None:
            total = total + T.scale(penalty, l2_factor)
    return total


# -- learning-rate schedule --------------------------------------------


@dataclass
class LrSchedule:
    factor: float
    d: int
    warmup: int = 4000

    def __post_init__(self):
        if self.factor <= 0 or self.d <= 0 or self.warmup <= 0:
            raise ValueError(f"schedule fields must be positive: {self}")


def learning_rate(sched: LrSchedule, step: int) -> float:
    """factor * d^-0.5 * min(step^-0.5, step * warmup^-1.5): linear warmup
    to a peak at step == warmup, then inverse-square-root decay."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    return sched.factor * sched.d ** -0.5 * min(step ** -0.5, step * sched.warmup ** -1.5)


# -- optimizer ---------------------------------------------------------


class Adam:
    """Adam with bias correction; the learning rate is supplied per step."""

    def __init__(self, params: list[tuple[str, Tensor]],
                 beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in params]
        self.v = [np.zeros_like(p.data) for _, p in params]

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (name, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient for parameter '{name}'")
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1 ** self.t)
            v_hat = self.v[i] / (1.0 - b2 ** self.t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


# -- training loop -----------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_aucs: list  # per task, None where undefined


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    stopped_early: bool = False

    def to_csv(self, path) -> None:
        """Columns: epoch, train_loss, val_loss, then auc_task_<j> per
        task; undefined AUCs are empty fields."""
        import csv

        n_tasks = len(self.epochs[0].val_aucs) if self.epochs else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["epoch", "train_loss", "val_loss"]
                + [f"auc_task_{j}" for j in range(n_tasks)]
            )
            for rec in self.epochs:
                writer.writerow(
                    [rec.epoch, repr(rec.train_loss), repr(rec.val_loss)]
                    + ["" if a is None else repr(a) for a in rec.val_aucs]
                )


def evaluate_loss(model: SstModel, batch: Batch, tw: TaskWeights) -> float:
    """Objective on a split in inference mode, without the L2 term."""
    probs = model.forward(batch.x, batch.pad_mask.data, training=False)
    loss = weighted_multitask_loss(
        probs, batch.labels, batch.label_mask, tw,
        model.config.uncertainty_weighting,
    )
    return loss.item()


def evaluate_aucs(model: SstModel, batch: Batch):
    probas = model.predict_proba(batch.x, batch.pad_mask.data)
    return M.task_aucs(probas.data, batch.labels.data, batch.label_mask.data)


def fit(model: SstModel, train: Batch, val: Batch, *,
        epochs_max: int | None = None, patience: int = 100,
        task_weights: TaskWeights | None = None) -> TrainReport:
    """Train until validation loss stops improving for `patience` epochs
    (or `epochs_max`), then restore the best snapshot.

    Deterministic for a fixed config/seed/data: shuffling, dropout, and
    initialization all derive from config.seed.
    """
    cfg = model.config
    if train.n_samples == 0 or val.n_samples == 0:
        raise ValueError("train and validation splits must be non-empty")
    if epochs_max is not None and epochs_max <= 0:
        return TrainReport()

    if task_weights is None:
        counts = label_counts(train.labels.data, train.label_mask.data)
        task_weights = TaskWeights.from_counts(counts, cfg.n_tasks)
    tw = task_weights

    rng = np.random.default_rng([cfg.seed, 1])
    sched = LrSchedule(cfg.lr_factor, cfg.dmodel, cfg.warmup)
    params = list(model.parameters())
    if cfg.uncertainty_weighting:
        params.append(("log_var", tw.log_var))
    adam = Adam(params)
    l2_params = model.l2_parameters()

    def snapshot():
        return ([p.data.copy() for _, p in params], tw.log_var.data.copy())

    def restore(snap):
        arrays, log_var = snap
        for (_, p), arr in zip(params, arrays):
            p.data = arr.copy()
        tw.log_var.data = log_var.copy()

    report = TrainReport()
    best_snap = None
    since_improved = 0
    step = 0
    epoch = 0
    n = train.n_samples

    while epochs_max is None or epoch < epochs_max:
        epoch += 1
        perm = rng.permutation(n)
        epoch_loss = 0.0
        try:
            for start in range(0, n, cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                xb = Tensor(train.x.data[idx])
                step += 1
                probs = model.forward(xb, train.pad_mask.data[idx],
                                      training=True, rng=rng)
                loss = weighted_multitask_loss(
                    probs, train.labels.data[idx], train.label_mask.data[idx],
                    tw, cfg.uncertainty_weighting, l2_params, cfg.l2_factor,
                )
                adam.zero_grad()
                loss.backward()
                adam.step(learning_rate(sched, step))
                epoch_loss += loss.item() * len(idx)
            val_loss = evaluate_loss(model, val, tw)
        except NumericsError as err:
            raise DivergenceError(
                f"training diverged at epoch {epoch}, step {step}: {err}",
                epoch=epoch, step=step, report=report,
            ) from err

        record = EpochRecord(
            epoch=epoch,
            train_loss=epoch_loss / n,
            val_loss=val_loss,
            val_aucs=evaluate_aucs(model, val),
        )
        report.epochs.append(record)

        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_snap = snapshot()
            since_improved = 0
        else:
            since_improved += 1
            if since_improved >= patience:
                report.stopped_early = True
                break

    if best_snap is not None:
        restore(best_snap)
    return report


# -- grid search -------------------------------------------------------

GRID_ONLY_KEYS = {"epochs_max"}


@dataclass
class GridResult:
    index: int
    values: dict
    mean_val_auc: float
    seconds: float
    error: str = ""


def grid_points(value_lists: dict[str, list]) -> list[dict]:
    """Cartesian product in lexicographic order: keys in given order, each
    key's values in given order."""
    if not value_lists:
        raise ValueError("empty grid")
    keys = list(value_lists)
    for key in keys:
        if key not in SstConfig.field_names() and key not in GRID_ONLY_KEYS:
            raise ValueError(f"unknown grid key: {key}")
        if not value_lists[key]:
            raise ValueError(f"grid key {key} has no values")
    return [dict(zip(keys, combo)) for combo in itertools.product(*value_lists.values())]


def derive_point_seed(base_seed: int, index: int) -> int:
    return int(np.random.default_rng([base_seed, 2, index]).integers(0, 2**31))


def grid_search(base: SstConfig, value_lists: dict[str, list],
                train: Batch, val: Batch, *,
                epochs_max: int | None = None, patience: int = 100,
                existing: dict[int, GridResult] | None = None,
                progress=None) -> tuple[SstConfig, list[GridResult]]:
    """Train one model per grid point and pick the best mean validation
    AUC; ties keep the earliest point.  A failed point is recorded with
    its error and the search continues.  `existing` rows (from a previous
    partial run) are reused without retraining.
    """
    points = grid_points(value_lists)
    existing = existing or {}
    results: list[GridResult] = []
    for index, point in enumerate(points):
        if index in existing:
            results.append(existing[index])
            continue
        overrides = {k: v for k, v in point.items() if k not in GRID_ONLY_KEYS}
        point_epochs = point.get("epochs_max", epochs_max)
        started = time.monotonic()
        try:
            cfg = replace(base, seed=derive_point_seed(base.seed, index), **overrides)
            model = SstModel(cfg)
            fit(model, train, val, epochs_max=point_epochs, patience=patience)
            aucs = [a for a in evaluate_aucs(model, val) if a is not None]
            mean_auc = float(np.mean(aucs)) if aucs else float("nan")
            results.append(GridResult(index, point, mean_auc,
                                      time.monotonic() - started))
        except (ValueError, ArithmeticError) as err:
            results.append(GridResult(index, point, float("nan"),
                                      time.monotonic() - started, error=str(err)))
        if progress is not None:
            progress(results[-1])

    best = None
    for res in results:
        if res.error or not np.isfinite(res.mean_val_auc):
            continue
        if best is None or res.mean_val_auc > best.mean_val_auc:
            best = res
    if best is None:
        raise ValueError("every grid point failed; no best configuration")
    best_overrides = {k: v for k, v in best.values.items() if k not in GRID_ONLY_KEYS}
    best_config = replace(base, seed=derive_point_seed(base.seed, best.index),
                          **best_overrides)
    return best_config, results
