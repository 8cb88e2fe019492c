"""Command-line front end: synth, preprocess, train, grid, eval.

Exit codes: 0 success, 1 invalid arguments or inputs, 2 runtime failure.
Every output directory receives a ``run_manifest.json`` describing the
command that produced it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from . import checkpoint as ckpt_io
from .dataset import build_from_raw, read_dataset, write_dataset
from .evaluation import render_report, write_reports
from .features import DEFAULT_FRACTIONS, DEFAULT_SEQ_LEN
from .neural import PAPER_HIDDEN_CELLS
from .synth import PATHOLOGIES, SynthConfig, generate_season, inject_pathologies
from .train import (
    DEFAULT_BATCH,
    DEFAULT_EPOCHS,
    DEFAULT_LR,
    DEFAULT_PATIENCE,
    DEFAULT_RECALL_FLOOR,
    DEFAULT_RUNS,
    evaluate_checkpoint,
    grid_entries,
    run_experiment_grid,
    to_checkpoint,
    train_runs,
    write_run,
)

log = logging.getLogger("dpipred")

DATA_DIR_ENV = "DPIPRED_DATA_DIR"
MODEL_CHOICES = {"lstm": "lstm", "gru": "gru", "attention": "attention_lstm"}
RUN_MANIFEST = "run_manifest.json"


class UsageError(Exception):
    """Invalid flags or missing inputs (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _cells(text: str) -> int:
    allowed = "{" + ", ".join(str(c) for c in PAPER_HIDDEN_CELLS) + "}"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer; allowed: {allowed}")
    if value not in PAPER_HIDDEN_CELLS:
        raise argparse.ArgumentTypeError(f"{value} hidden cells not supported; allowed: {allowed}")
    return value


def _fractions(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r}: expected three comma-separated numbers")
    if len(parts) != 3 or abs(sum(parts) - 1.0) > 1e-9 or min(parts) < 0:
        raise argparse.ArgumentTypeError(f"{text!r}: need three non-negative fractions summing to 1")
    return parts


def _weights(text: str) -> tuple[float, float]:
    try:
        w0, w1 = (float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r}: expected W0,W1")
    if w0 <= 0 or w1 <= 0:
        raise argparse.ArgumentTypeError("class weights must be positive")
    return w0, w1


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{text} must be positive")
    return v


def _unit_interval(text: str) -> float:
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} must lie in (0, 1]")
    return v


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS, help="maximum training epochs")
    p.add_argument("--batch", type=int, default=DEFAULT_BATCH, help="mini-batch size")
    p.add_argument("--lr", type=_positive_float, default=DEFAULT_LR, help="Adam learning rate")
    p.add_argument("--patience", type=int, default=DEFAULT_PATIENCE, help="early-stopping patience in epochs")
    p.add_argument(
        "--recall-floor", type=_unit_interval, default=DEFAULT_RECALL_FLOOR,
        help="validation recall the decision threshold must reach before precision is maximized",
    )
    group = p.add_mutually_exclusive_group()
    group.add_argument(
        "--weights", type=_weights, default=None, metavar="W0,W1",
        help="pin class weights (e.g. 0.51,20.52); default: inverse class frequency on the training split",
    )
    group.add_argument("--no-weights", action="store_true", help="train unweighted (weights 1,1)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="dpipred", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--json", action="store_true", help="emit errors as JSON on stderr")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic tracking season", formatter_class=fmt)
    p.add_argument("--plays", type=int, default=1000, help="number of plays")
    p.add_argument("--dpi-rate", type=float, default=0.0146, help="fraction of DPI plays (1.46%% in the 2018 season)")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--players-per-side", type=int, default=3, help="players per team on the field")
    p.add_argument(
        "--pathologies", default="", help=f"comma-separated corruptions to inject: {', '.join(PATHOLOGIES)}"
    )
    p.add_argument("--per-kind", type=int, default=3, help="plays corrupted per pathology")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("preprocess", help="raw tracking directory to split duel sequences", formatter_class=fmt)
    p.add_argument(
        "--data-dir", default=os.environ.get(DATA_DIR_ENV),
        help=f"directory with games.csv, plays.csv, week*.csv (env {DATA_DIR_ENV})",
    )
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument(
        "--threshold", type=_positive_float, default=None,
        help="proximity cut in yards (5.56 on the 2018 data); default: 0.90 quantile of DPI max duel distance",
    )
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument(
        "--splits", type=_fractions, default=",".join(f"{f:.2f}" for f in DEFAULT_FRACTIONS),
        help="train,validation,test fractions",
    )
    p.add_argument("--seq-len", type=int, default=DEFAULT_SEQ_LEN, help="steps kept per sequence (last N)")
    p.add_argument("--workers", type=int, default=1, help="processes for parsing week files")

    p = sub.add_parser("train", help="seeded training runs of one configuration", formatter_class=fmt)
    p.add_argument("--dataset", required=True, help="processed dataset directory")
    p.add_argument("--model", choices=sorted(MODEL_CHOICES), required=True, help="architecture")
    p.add_argument("--cells", type=_cells, required=True, help="hidden cells: one of 8, 64, 128")
    p.add_argument("--runs", type=int, default=DEFAULT_RUNS, help="seeded repeats")
    p.add_argument("--seed", type=int, default=0, help="base seed; run r uses seed+r")
    p.add_argument("--out", default="runs", help="output directory")
    _add_training_flags(p)

    p = sub.add_parser("grid", help="all architectures x cell sizes, best run per configuration", formatter_class=fmt)
    p.add_argument("--dataset", required=True, help="processed dataset directory")
    p.add_argument("--runs", type=int, default=DEFAULT_RUNS, help="seeded repeats per configuration")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--models", default="lstm,gru,attention", help="comma-separated architectures")
    p.add_argument("--cells", default="8,64,128", help="comma-separated hidden sizes")
    p.add_argument("--out", default="grid", help="output directory (runs/ and reports/)")
    _add_training_flags(p)

    p = sub.add_parser("eval", help="metrics of a checkpoint on one split", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint.json")
    p.add_argument("--dataset", required=True, help="processed dataset directory")
    p.add_argument("--split", choices=("validation", "test"), default="test", help="split to score")
    p.add_argument("--out", required=True, help="output directory")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_inputs(paths: Sequence[Path]) -> dict[str, str]:
    out = {}
    for p in paths:
        if p.is_dir():
            for f in sorted(p.iterdir()):
                if f.is_file() and f.name != RUN_MANIFEST:
                    out[str(f)] = _sha256(f)
        elif p.is_file():
            out[str(p)] = _sha256(p)
    return out


def _write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_manifest(out_dir: Path, args: argparse.Namespace, inputs: Sequence[Path], seed: int | None) -> Path:
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items()) if k not in ("func",)}
    return _write_json(
        out_dir / RUN_MANIFEST,
        {
            "command": args.command,
            "parameters": params,
            "input_hashes": _hash_inputs(inputs),
            "tool_version": __version__,
            "seed": seed,
        },
    )


def _require_dir(path: str | None, flag: str) -> Path:
    if not path:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{flag} {path!r} is not a directory")
    return p


def _require_file(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag} {path!r} does not exist")
    return p


def _check_out(out: Path, inputs: Sequence[Path]) -> None:
    resolved = out.resolve()
    for i in inputs:
        if resolved == i.resolve():
            raise UsageError(f"--out {str(out)!r} would overwrite an input")


def _weights_arg(args) -> object:
    if args.no_weights:
        return None
    return args.weights if args.weights is not None else "auto"


def _train_kwargs(args) -> dict:
    for name in ("epochs", "batch", "patience"):
        value = getattr(args, name)
        if value < (0 if name in ("epochs",) else 1):
            raise UsageError(f"--{name} must be {'non-negative' if name == 'epochs' else 'positive'}")
    return {
        "epochs": args.epochs,
        "batch": args.batch,
        "patience": args.patience,
        "lr": args.lr,
        "recall_floor": args.recall_floor,
        "weights": _weights_arg(args),
    }


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    kinds = [k for k in args.pathologies.split(",") if k]
    try:
        config = SynthConfig(args.plays, args.dpi_rate, args.seed, args.players_per_side)
    except ValueError as exc:
        raise UsageError(str(exc))
    if set(kinds) - set(PATHOLOGIES):
        raise UsageError(f"--pathologies must be drawn from {', '.join(PATHOLOGIES)}")
    out = Path(args.out)
    season = generate_season(config)
    report = {}
    if kinds:
        season, corrupted = inject_pathologies(season, kinds, args.per_kind, args.seed)
        report = {k: [list(key) for key in v] for k, v in corrupted.items()}
    season.write(out)
    _write_json(out / "synth_report.json", {"dpi_plays": config.n_dpi, "plays": config.n_plays, "pathologies": report})
    write_manifest(out, args, [], args.seed)
    log.info("wrote %d plays (%d DPI) to %s", config.n_plays, config.n_dpi, out)
    return 0


def cmd_preprocess(args) -> int:
    data_dir = _require_dir(args.data_dir, "--data-dir")
    if args.seq_len < 1:
        raise UsageError("--seq-len must be positive")
    out = Path(args.out)
    _check_out(out, [data_dir])
    ds, reports = build_from_raw(data_dir, args.threshold, args.seed, args.splits, args.seq_len, args.workers)
    write_dataset(ds, out)
    _write_json(out / "preprocess_report.json", reports.to_dict())
    write_manifest(out, args, [data_dir], args.seed)
    log.info("dataset written to %s: %s", out, ds.manifest["split_counts"])
    return 0


def cmd_train(args) -> int:
    data = _require_dir(args.dataset, "--dataset")
    if args.runs < 1:
        raise UsageError("--runs must be positive")
    kwargs = _train_kwargs(args)
    out = Path(args.out)
    _check_out(out, [data])
    ds = read_dataset(data)
    arch = MODEL_CHOICES[args.model]
    records, best = train_runs(ds, arch, args.cells, args.runs, args.seed, **kwargs)
    for rec in records:
        write_run(rec, ds, out)
    summary = {
        "config": f"{arch}_{args.cells}",
        "runs": [
            {
                "seed": r.seed,
                "status": r.status,
                "error": r.error,
                "best_epoch": r.best_epoch,
                "frozen_threshold": r.frozen_threshold,
                "objective": None if r.best_objective is None else [bool(r.best_objective[0]), *r.best_objective[1:]],
            }
            for r in records
        ],
        "selected_seed": None if best is None else best.seed,
        "selection_rule": "lexicographic (recall >= floor, precision, recall) on validation",
        "hyperparameters": kwargs | {"weights": kwargs["weights"] if not isinstance(kwargs["weights"], tuple) else list(kwargs["weights"])},
    }
    if best is not None:
        summary["validation"] = evaluate_checkpoint(to_checkpoint(best, ds), ds, "validation").to_dict()
    _write_json(out / "train_summary.json", summary)
    write_manifest(out, args, [data], args.seed)
    if best is None:
        log.error("every run diverged")
        return 2
    return 0


def _split_list(text: str, flag: str, convert):
    try:
        return [convert(t) for t in text.split(",") if t]
    except (ValueError, KeyError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"{flag}: {exc}")


def cmd_grid(args) -> int:
    data = _require_dir(args.dataset, "--dataset")
    if args.runs < 1:
        raise UsageError("--runs must be positive")
    kwargs = _train_kwargs(args)
    models = _split_list(args.models, "--models", lambda m: MODEL_CHOICES[m])
    cells = _split_list(args.cells, "--cells", _cells)
    out = Path(args.out)
    _check_out(out, [data])
    ds = read_dataset(data)
    grid = run_experiment_grid(ds, models, cells, args.runs, args.seed, **kwargs)
    for rec in grid.runs:
        write_run(rec, ds, out / "runs")
    entries = grid_entries(grid, ds)
    weights = kwargs["weights"]
    report = render_report(
        entries,
        metadata={
            "runs_per_config": args.runs,
            "base_seed": args.seed,
            "configs": len(models) * len(cells),
            "failed_runs": [[r.config.name, r.seed] for r in grid.runs if r.failed],
            "selection_rule": "lexicographic (recall >= floor, precision, recall) on validation",
            "recall_floor": args.recall_floor,
            "class_weights": list(weights) if isinstance(weights, tuple) else weights,
            "proximity_threshold": ds.manifest.get("threshold"),
        },
    )
    write_reports(report, out / "reports")
    write_manifest(out, args, [data], args.seed)
    return 0 if entries else 2


def cmd_eval(args) -> int:
    path = _require_file(args.checkpoint, "--checkpoint")
    data = _require_dir(args.dataset, "--dataset")
    out = Path(args.out)
    ckpt = ckpt_io.load(path)
    ds = read_dataset(data)
    metrics = evaluate_checkpoint(ckpt, ds, args.split)
    _write_json(out / "metrics.json", metrics.to_dict())
    _write_json(
        out / f"confusion_{ckpt.config.name}.json",
        {args.split: {k: getattr(metrics, k) for k in ("tp", "fp", "fn", "tn", "threshold")}},
    )
    write_manifest(out, args, [path, data], ckpt.seed)
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "grid": cmd_grid,
    "eval": cmd_eval,
}


def _fail(code: int, exc: BaseException, as_json: bool) -> int:
    if as_json:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    as_json = "--json" in argv
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(1, exc, as_json)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(1, exc, as_json)
    except Exception as exc:  # noqa: BLE001 - top-level boundary maps failures to exit code 2
        log.debug("failure", exc_info=True)
        return _fail(2, exc, as_json)


if __name__ == "__main__":
    sys.exit(main())
