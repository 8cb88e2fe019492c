"""Training loop, recall-floor threshold selection and the experiment grid."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint
from .dataset import ProcessedDataset
from .evaluation import MetricsReport, confusion, evaluate_scores, precision, recall
from .neural import (
    ARCHITECTURES,
    PAPER_HIDDEN_CELLS,
    AdamState,
    ModelConfig,
    adam_step,
    all_finite,
    init_parameters,
    loss_and_gradients,
    predict_proba,
    weighted_bce,
)

log = logging.getLogger(__name__)

DEFAULT_EPOCHS = 100
DEFAULT_BATCH = 64
DEFAULT_LR = 1e-3
DEFAULT_PATIENCE = 15
DEFAULT_RECALL_FLOOR = 0.8
DEFAULT_RUNS = 5


class Diverged(RuntimeError):
    pass


class NoPositives(ValueError):
    pass


def threshold_curve(labels, scores):
    """Candidate thresholds (distinct scores, descending) with precision and recall at each."""
    labels = np.asarray(labels, dtype=float) > 0.5
    scores = np.asarray(scores, dtype=float)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositives("threshold selection needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    return s[last], tp / (tp + fp), tp / n_pos


def select_threshold(labels, scores, recall_floor: float = DEFAULT_RECALL_FLOOR) -> float:
    """Best precision among thresholds reaching the recall floor.

    Ties go to the higher threshold. If no candidate reaches the floor, the
    maximal-recall candidate wins (ties: higher precision, then higher
    threshold).
    """
    thr, prec, rec = threshold_curve(labels, scores)
    feasible = np.nonzero(rec >= recall_floor)[0]
    if feasible.size:
        # thresholds are descending, so the first maximum is the highest threshold
        best = feasible[np.argmax(prec[feasible])]
    else:
        keys = list(zip(rec, prec, thr))
        best = max(range(len(keys)), key=lambda i: keys[i])
    return float(thr[best])


def validation_objective(labels, scores, recall_floor: float = DEFAULT_RECALL_FLOOR):
    """``(floor_met, precision, recall)`` at the selected threshold, plus the threshold."""
    thr = select_threshold(labels, scores, recall_floor)
    tp, fp, fn, _ = confusion(labels, scores, thr)
    r, p = recall(tp, fn), precision(tp, fp)
    return (r >= recall_floor, p, r), thr


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_recall: float
    val_precision: float
    threshold: float


@dataclass(eq=False)
class TrainRunRecord:
    config: ModelConfig
    seed: int
    history: list[EpochRecord] = field(default_factory=list)
    params: dict[str, np.ndarray] | None = None
    frozen_threshold: float | None = None
    best_epoch: int | None = None
    best_objective: tuple | None = None
    status: str = "ok"
    error: str | None = None
    hyperparameters: dict = field(default_factory=dict)
    checkpoint_path: str | None = None

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_recall", "val_precision", "threshold"])
        for h in self.history:
            w.writerow([h.epoch, repr(h.train_loss), repr(h.val_loss), repr(h.val_recall), repr(h.val_precision), repr(h.threshold)])
        return buf.getvalue()


def resolve_weights(dataset: ProcessedDataset, weights) -> tuple[float, float]:
    """``"auto"`` takes the dataset's inverse-frequency weights, ``None`` means (1, 1)."""
    if weights is None:
        return 1.0, 1.0
    if isinstance(weights, str):
        if weights != "auto":
            raise ValueError(f"unknown weights mode {weights!r}")
        spec = dataset.weights
        if spec is None:
            raise ValueError("dataset has no class weights (a class is missing from training)")
        return float(spec.w_class[0]), float(spec.w_class[1])
    w0, w1 = weights
    return float(w0), float(w1)


def _mean_loss(y, p, w_neg, w_pos) -> float:
    return float(weighted_bce(y, p, w_pos, w_neg).mean()) if len(y) else 0.0


def train_model(
    dataset: ProcessedDataset,
    config: ModelConfig,
    epochs: int = DEFAULT_EPOCHS,
    batch: int = DEFAULT_BATCH,
    patience: int = DEFAULT_PATIENCE,
    lr: float = DEFAULT_LR,
    recall_floor: float = DEFAULT_RECALL_FLOOR,
    weights="auto",
) -> TrainRunRecord:
    """Mini-batch Adam with per-example class weights and early stopping.

    The validation objective after every epoch is ``(floor_met, precision,
    recall)`` at the recall-floor threshold; the best epoch's parameters and
    threshold are restored. Epoch 0 records the initialized model.

    Raises:
        Diverged: a non-finite loss or parameter appears.
    """
    w_neg, w_pos = resolve_weights(dataset, weights)
    scaler = dataset.scaler
    tr, va = dataset["train"], dataset["validation"]
    Xtr, Mtr, ytr = tr.scaled(scaler), tr.mask, tr.y
    Xva, Mva, yva = va.scaled(scaler), va.mask, va.y
    shuffle_rng = np.random.default_rng([config.seed, 1])
    params = init_parameters(config)
    state = AdamState.zeros_like(params)
    record = TrainRunRecord(
        config=config,
        seed=config.seed,
        hyperparameters={
            "epochs": epochs, "batch": batch, "patience": patience, "lr": lr,
            "recall_floor": recall_floor, "class_weights": [w_neg, w_pos],
        },
    )

    def evaluate(epoch: int, train_loss: float):
        p_va = predict_proba(Xva, Mva, params, config)
        objective, thr = validation_objective(yva, p_va, recall_floor)
        record.history.append(
            EpochRecord(epoch, train_loss, _mean_loss(yva, p_va, w_neg, w_pos), objective[2], objective[1], thr)
        )
        return objective, thr

    init_loss = _mean_loss(ytr, predict_proba(Xtr, Mtr, params, config), w_neg, w_pos)
    best_obj, best_thr = evaluate(0, init_loss)
    best_params, best_epoch, wait = params, 0, 0
    n = len(ytr)
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            loss, grads = loss_and_gradients(Xtr[idx], Mtr[idx], ytr[idx], params, config, w_pos, w_neg)
            if not np.isfinite(loss):
                raise Diverged(f"{config.name} seed {config.seed}: non-finite loss at epoch {epoch}")
            params = adam_step(params, grads, state, lr=lr)
            total += float(loss) * len(idx)
        if not all_finite(params):
            raise Diverged(f"{config.name} seed {config.seed}: non-finite parameters at epoch {epoch}")
        objective, thr = evaluate(epoch, total / max(n, 1))
        if objective > best_obj:
            best_obj, best_thr, best_params, best_epoch, wait = objective, thr, params, epoch, 0
        else:
            wait += 1
            if wait >= patience:
                break
    record.params = best_params
    record.frozen_threshold = best_thr
    record.best_epoch = best_epoch
    record.best_objective = best_obj
    log.info("%s seed %d: best epoch %d objective %s", config.name, config.seed, best_epoch, best_obj)
    return record


def to_checkpoint(record: TrainRunRecord, dataset: ProcessedDataset) -> Checkpoint:
    return Checkpoint(
        config=record.config,
        params=record.params,
        scaler=dataset.scaler,
        threshold=record.frozen_threshold,
        seed=record.seed,
        extra={
            "best_epoch": record.best_epoch,
            "hyperparameters": record.hyperparameters,
            "proximity_threshold": dataset.manifest.get("threshold"),
        },
    )


def evaluate_checkpoint(ckpt: Checkpoint, dataset: ProcessedDataset, split: str) -> MetricsReport:
    """Metrics on ``split`` with the checkpoint's frozen threshold."""
    arr = dataset[split]
    scores = predict_proba(arr.scaled(ckpt.scaler), arr.mask, ckpt.params, ckpt.config)
    return evaluate_scores(arr.y, scores, ckpt.threshold, ckpt.config.name, split)


def write_run(record: TrainRunRecord, dataset: ProcessedDataset, out_dir: str | Path) -> Path:
    run_dir = Path(out_dir) / record.config.name / str(record.seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "history.csv").write_text(record.history_csv(), encoding="utf-8")
    if not record.failed:
        path = ckpt_io.save(to_checkpoint(record, dataset), run_dir / "checkpoint.json")
        record.checkpoint_path = str(path)
    else:
        (run_dir / "failed.txt").write_text(f"{record.error}\n", encoding="utf-8")
    return run_dir


@dataclass
class GridResult:
    runs: list[TrainRunRecord]
    selected: dict[str, TrainRunRecord]


def train_runs(
    dataset: ProcessedDataset,
    architecture: str,
    cells: int,
    runs: int = DEFAULT_RUNS,
    base_seed: int = 0,
    train_fn: Callable[..., TrainRunRecord] = train_model,
    **train_kwargs,
) -> tuple[list[TrainRunRecord], TrainRunRecord | None]:
    """Seeded repeats of one configuration; a diverged run is kept as failed."""
    records = []
    for r in range(runs):
        config = ModelConfig(architecture, cells, seq_len=dataset.seq_len, seed=base_seed + r)
        try:
            rec = train_fn(dataset, config, **train_kwargs)
        except Diverged as exc:
            log.warning("%s", exc)
            rec = TrainRunRecord(config=config, seed=config.seed, status="failed", error=str(exc))
        records.append(rec)
    return records, select_best(records)


def select_best(records: Sequence[TrainRunRecord]) -> TrainRunRecord | None:
    """Best validation objective among successful runs; earliest seed wins ties."""
    best = None
    for rec in records:
        if rec.failed:
            continue
        if best is None or rec.best_objective > best.best_objective:
            best = rec
    return best


def run_experiment_grid(
    dataset: ProcessedDataset,
    architectures: Iterable[str] = ARCHITECTURES,
    cells: Iterable[int] = PAPER_HIDDEN_CELLS,
    runs: int = DEFAULT_RUNS,
    base_seed: int = 0,
    train_fn: Callable[..., TrainRunRecord] = train_model,
    **train_kwargs,
) -> GridResult:
    all_runs: list[TrainRunRecord] = []
    selected: dict[str, TrainRunRecord] = {}
    for arch in architectures:
        for h in cells:
            records, best = train_runs(dataset, arch, h, runs, base_seed, train_fn, **train_kwargs)
            all_runs.extend(records)
            if best is not None:
                selected[best.config.name] = best
    return GridResult(all_runs, selected)


def grid_entries(grid: GridResult, dataset: ProcessedDataset) -> list[dict]:
    """Validation and test metrics for each selected run, with its frozen threshold."""
    entries = []
    for name, rec in grid.selected.items():
        ckpt = to_checkpoint(rec, dataset)
        entries.append({
            "config": name,
            "architecture": rec.config.architecture,
            "cells": rec.config.hidden_cells,
            "seed": rec.seed,
            "best_epoch": rec.best_epoch,
            "validation": evaluate_checkpoint(ckpt, dataset, "validation").to_dict(),
            "test": evaluate_checkpoint(ckpt, dataset, "test").to_dict(),
        })
    return entries
