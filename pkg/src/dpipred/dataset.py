"""Processed dataset: padded split arrays plus their on-disk CSV/manifest form."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import (
    DEFAULT_FRACTIONS,
    DEFAULT_SEQ_LEN,
    FEATURE_ORDER,
    N_FEATURES,
    ClassWeightSpec,
    DatasetSplit,
    FeatureReport,
    PlaySequence,
    Scaler,
    apply_scaler,
    build_sequences,
    compute_proximity_threshold,
    filter_by_proximity,
    pad_or_truncate,
    split_dataset,
)
from .ingest import load_dataset
from .preprocess import preprocess_dataset

SPLIT_NAMES = ("train", "validation", "test")
MANIFEST = "manifest.json"
CSV_HEADER = ("game_id", "play_id", "step", *FEATURE_ORDER, "mask", "label")


@dataclass(frozen=True, eq=False)
class SplitArrays:
    keys: tuple[tuple[int, int], ...]
    X: np.ndarray  # (n, seq_len, 19), unscaled
    mask: np.ndarray  # (n, seq_len)
    y: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def positives(self) -> int:
        return int(self.y.sum())

    def scaled(self, scaler: Scaler) -> np.ndarray:
        """Z-scored features; padded rows stay exactly zero."""
        out = apply_scaler(scaler, self.X)
        out *= self.mask[..., None]
        return out


@dataclass(frozen=True, eq=False)
class ProcessedDataset:
    splits: Mapping[str, SplitArrays]
    manifest: Mapping

    @property
    def scaler(self) -> Scaler:
        return Scaler.from_dict(self.manifest["scaler"])

    @property
    def weights(self) -> ClassWeightSpec | None:
        w = self.manifest.get("class_weights")
        return None if w is None else ClassWeightSpec.from_dict(w)

    @property
    def seq_len(self) -> int:
        return int(self.manifest["seq_len"])

    def __getitem__(self, name: str) -> SplitArrays:
        return self.splits[name]


def to_arrays(sequences: Sequence[PlaySequence], seq_len: int = DEFAULT_SEQ_LEN) -> SplitArrays:
    n = len(sequences)
    X = np.zeros((n, seq_len, N_FEATURES))
    mask = np.zeros((n, seq_len))
    for i, s in enumerate(sequences):
        X[i], mask[i] = pad_or_truncate(s.steps, seq_len)
    y = np.array([float(s.label) for s in sequences])
    return SplitArrays(tuple(s.key for s in sequences), X, mask, y)


def from_split(split: DatasetSplit, threshold: float, seq_len: int = DEFAULT_SEQ_LEN, **extra) -> ProcessedDataset:
    splits = {name: to_arrays(seqs, seq_len) for name, seqs in split.splits().items()}
    manifest = {
        "feature_order": list(FEATURE_ORDER),
        "scaler": split.scaler.to_dict(),
        "threshold": threshold,
        "seed": split.seed,
        "fractions": list(split.fractions),
        "seq_len": seq_len,
        "class_weights": None if split.weights is None else split.weights.to_dict(),
        "split_counts": {
            name: {"non_dpi": len(a) - a.positives, "dpi": a.positives} for name, a in splits.items()
        },
        **extra,
    }
    return ProcessedDataset(splits, manifest)


# ---------------------------------------------------------------------------
# persistence


def _split_csv(arr: SplitArrays) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for i, (g, p) in enumerate(arr.keys):
        label = int(arr.y[i])
        for t in range(arr.X.shape[1]):
            w.writerow([g, p, t, *(repr(float(v)) for v in arr.X[i, t]), int(arr.mask[i, t]), label])
    return buf.getvalue()


def manifest_text(manifest: Mapping) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def write_dataset(ds: ProcessedDataset, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in SPLIT_NAMES:
        path = out_dir / f"{name}.csv"
        path.write_text(_split_csv(ds.splits[name]), encoding="utf-8")
        written.append(path)
    path = out_dir / MANIFEST
    path.write_text(manifest_text(ds.manifest), encoding="utf-8")
    written.append(path)
    return written


def _read_split(path: Path, seq_len: int) -> SplitArrays:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"{path.name}: unexpected header")
        rows = list(reader)
    if len(rows) % seq_len:
        raise ValueError(f"{path.name}: {len(rows)} rows is not a multiple of seq_len={seq_len}")
    n = len(rows) // seq_len
    X = np.zeros((n, seq_len, N_FEATURES))
    mask = np.zeros((n, seq_len))
    y = np.zeros(n)
    keys = []
    for i in range(n):
        block = rows[i * seq_len:(i + 1) * seq_len]
        keys.append((int(block[0][0]), int(block[0][1])))
        y[i] = float(block[0][-1])
        for t, row in enumerate(block):
            if int(row[2]) != t or (int(row[0]), int(row[1])) != keys[-1]:
                raise ValueError(f"{path.name}: play {keys[-1]} rows out of order at step {t}")
            X[i, t] = [float(v) for v in row[3:3 + N_FEATURES]]
            mask[i, t] = float(row[3 + N_FEATURES])
    return SplitArrays(tuple(keys), X, mask, y)


def read_dataset(in_dir: str | Path) -> ProcessedDataset:
    in_dir = Path(in_dir)
    manifest = json.loads((in_dir / MANIFEST).read_text(encoding="utf-8"))
    if tuple(manifest["feature_order"]) != FEATURE_ORDER:
        raise ValueError("dataset feature order does not match this version")
    seq_len = int(manifest["seq_len"])
    splits = {name: _read_split(in_dir / f"{name}.csv", seq_len) for name in SPLIT_NAMES}
    return ProcessedDataset(splits, manifest)


# ---------------------------------------------------------------------------
# raw directory -> processed dataset


@dataclass
class BuildReports:
    load: dict
    preprocess: dict
    features: FeatureReport
    threshold: float
    threshold_source: str
    sequences_before_filter: int
    sequences_after_filter: int

    def to_dict(self) -> dict:
        return {
            "load": self.load,
            "preprocess": self.preprocess,
            "features": self.features.to_dict(),
            "proximity": {
                "threshold": self.threshold,
                "source": self.threshold_source,
                "sequences_before": self.sequences_before_filter,
                "sequences_after": self.sequences_after_filter,
            },
        }


def build_from_raw(
    data_dir: str | Path,
    threshold: float | None = None,
    seed: int = 0,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seq_len: int = DEFAULT_SEQ_LEN,
    workers: int = 1,
) -> tuple[ProcessedDataset, BuildReports]:
    """Raw tracking directory to a split, padded dataset.

    Without ``threshold`` the proximity cut is recomputed from the data's own
    DPI plays.
    """
    raw = load_dataset(data_dir, workers=workers)
    plays, pre_report = preprocess_dataset(raw)
    sequences, feat_report = build_sequences(plays)
    source = "pinned"
    if threshold is None:
        threshold = compute_proximity_threshold(sequences)
        source = "computed_q0.90"
    kept = filter_by_proximity(sequences, threshold)
    split = split_dataset(kept, fractions, seed)
    ds = from_split(split, threshold, seq_len, threshold_source=source)
    reports = BuildReports(
        load=raw.report.to_dict(),
        preprocess=pre_report.to_dict(),
        features=feat_report,
        threshold=threshold,
        threshold_source=source,
        sequences_before_filter=len(sequences),
        sequences_after_filter=len(kept),
    )
    return ds, reports
