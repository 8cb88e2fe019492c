"""Thresholded metrics, ROC AUC and the per-configuration summary reports."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MODEL_LABELS = {"lstm": "LSTM", "gru": "GRU", "attention_lstm": "ANN"}
TABLE2_COLUMNS = ("recall", "precision", "f1", "auc")
TABLE3_COLUMNS = ("recall_test", "recall_validation", "precision_test", "precision_validation")


class LengthMismatch(ValueError):
    pass


class OneClassOnly(ValueError):
    pass


def _as_arrays(labels, scores):
    labels = np.asarray(labels, dtype=float).ravel()
    scores = np.asarray(scores, dtype=float).ravel()
    if labels.shape != scores.shape:
        raise LengthMismatch(f"{labels.size} labels vs {scores.size} scores")
    return labels, scores


def confusion(labels, scores, threshold: float) -> tuple[int, int, int, int]:
    """``(tp, fp, fn, tn)`` predicting positive iff ``score >= threshold``."""
    labels, scores = _as_arrays(labels, scores)
    pred = scores >= threshold
    pos = labels > 0.5
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return tp, fp, fn, tn


def precision(tp: int, fp: int) -> float:
    return tp / (tp + fp) if tp + fp else 0.0


def recall(tp: int, fn: int) -> float:
    return tp / (tp + fn) if tp + fn else 0.0


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def roc_auc(labels, scores) -> float:
    """Trapezoidal area under the ROC curve swept over distinct score values.

    Tied scores move TPR and FPR together, which credits each tied
    positive/negative pair with one half.
    """
    labels, scores = _as_arrays(labels, scores)
    pos = labels > 0.5
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("ROC AUC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = pos[order]
    tps = np.cumsum(y)
    fps = np.cumsum(~y)
    last_of_value = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tpr = np.r_[0.0, tps[last_of_value] / n_pos]
    fpr = np.r_[0.0, fps[last_of_value] / n_neg]
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass(frozen=True)
class MetricsReport:
    config: str
    split: str
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    recall: float
    precision: float
    f1: float
    auc: float | None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def evaluate_scores(labels, scores, threshold: float, config: str = "", split: str = "") -> MetricsReport:
    labels, scores = _as_arrays(labels, scores)
    tp, fp, fn, tn = confusion(labels, scores, threshold)
    p, r = precision(tp, fp), recall(tp, fn)
    try:
        auc = roc_auc(labels, scores)
    except OneClassOnly:
        auc = None
    return MetricsReport(config, split, float(threshold), tp, fp, fn, tn, r, p, f1_score(p, r), auc)


# ---------------------------------------------------------------------------
# reports


def _fmt(v: float | None, bold: bool = False) -> str:
    text = "NA" if v is None else repr(float(v))
    return f"**{text}**" if bold else text


def _column_max(rows: Sequence[Mapping], col: str) -> float | None:
    vals = [r[col] for r in rows if r[col] is not None]
    return max(vals) if vals else None


def table_rows(results: Sequence[Mapping]) -> tuple[list[dict], list[dict]]:
    """Rows for both tables from entries ``{architecture, cells, validation, test}``."""
    t2, t3 = [], []
    for entry in results:
        te, va = entry["test"], entry["validation"]
        base = {"model": MODEL_LABELS.get(entry["architecture"], entry["architecture"]), "cells": entry["cells"]}
        t2.append({**base, **{c: te[c] for c in TABLE2_COLUMNS}})
        t3.append({
            **base,
            "recall_test": te["recall"],
            "recall_validation": va["recall"],
            "precision_test": te["precision"],
            "precision_validation": va["precision"],
        })
    return t2, t3


def emphasis(rows: Sequence[Mapping], columns: Sequence[str]) -> list[set[str]]:
    """Per row, the columns holding that column's maximum."""
    tops = {c: _column_max(rows, c) for c in columns}
    return [{c for c in columns if r[c] is not None and r[c] == tops[c]} for r in rows]


def _markdown(rows: Sequence[Mapping], columns: Sequence[str], titles: Sequence[str], caption: str) -> str:
    marks = emphasis(rows, columns)
    lines = [f"{caption}", "", "| Model | Cells | " + " | ".join(titles) + " |"]
    lines.append("|" + "---|" * (2 + len(columns)))
    for row, bold in zip(rows, marks):
        cells = [_fmt(row[c], c in bold) for c in columns]
        lines.append(f"| {row['model']} | {row['cells']} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_table2(rows: Sequence[Mapping]) -> str:
    return _markdown(rows, TABLE2_COLUMNS, ("Recall", "Precision", "F1", "AUC"), "Model performance on the test set.")


def render_table3(rows: Sequence[Mapping]) -> str:
    return _markdown(
        rows,
        TABLE3_COLUMNS,
        ("Recall(T)", "Recall(V)", "Precision(T)", "Precision(V)"),
        "Model performance on test (T) versus validation (V) set.",
    )


def parse_table(markdown: str, columns: Sequence[str]) -> list[dict]:
    """Inverse of the table renderers (emphasis stripped)."""
    rows = []
    for line in markdown.splitlines():
        if not line.startswith("| ") or line.startswith("| Model"):
            continue
        parts = [p.strip() for p in line.strip("|").split("|")]
        values = [re.sub(r"^\*\*(.*)\*\*$", r"\1", p) for p in parts[2:]]
        rows.append({
            "model": parts[0],
            "cells": int(parts[1]),
            **{c: None if v == "NA" else float(v) for c, v in zip(columns, values)},
        })
    return rows


def render_report(results: Sequence[Mapping], metadata: Mapping | None = None) -> dict:
    """Tables and JSON summary for evaluated grid entries.

    Each entry holds ``architecture``, ``cells``, ``seed`` and the
    ``validation``/``test`` metric dicts computed with the frozen threshold.
    """
    t2, t3 = table_rows(results)
    summary = {
        "metadata": dict(metadata or {}),
        "table2": t2,
        "table3": t3,
        "table2_emphasis": [sorted(m) for m in emphasis(t2, TABLE2_COLUMNS)],
        "entries": [dict(e) for e in results],
    }
    return {"summary": summary, "table2_md": render_table2(t2), "table3_md": render_table3(t3)}


def write_reports(report: Mapping, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    summary = report["summary"]
    p = out_dir / "summary.json"
    p.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(p)
    for name in ("table2", "table3"):
        p = out_dir / f"{name}.md"
        p.write_text(report[f"{name}_md"], encoding="utf-8")
        paths.append(p)
    for entry in summary["entries"]:
        name = entry["config"]
        p = out_dir / f"confusion_{name}.json"
        payload = {
            split: {k: entry[split][k] for k in ("tp", "fp", "fn", "tn", "threshold")}
            for split in ("validation", "test")
        }
        p.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        paths.append(p)
    return paths
