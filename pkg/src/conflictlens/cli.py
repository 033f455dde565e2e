"""``conflictlens`` command line: generate, train, tune, evaluate, explain, pipeline."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, pipeline, serialize, synth
from ._seeding import subseed
from .errors import ConflictLensError, InvalidConfig
from .events import read_events_csv, write_events_csv
from .explain import beeswarm_export, write_beeswarm_csv, write_beeswarm_json
from .logit import report_dict, report_text

log = logging.getLogger("conflictlens")


def _threshold(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("threshold must be 'auto' or a number") from None
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError("threshold must lie in [0, 1]")
    return value


def _params(text: str | None) -> dict:
    if not text:
        return {}
    path = Path(text)
    raw = path.read_text(encoding="utf-8") if path.is_file() else text
    try:
        out = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"--params is neither a JSON file nor JSON text: {exc}") from None
    if not isinstance(out, dict):
        raise InvalidConfig("--params must be a JSON object")
    return out


def _stamp(command: str, args: argparse.Namespace, data: Path | None) -> dict:
    """Config hash and seed embedded in every artifact (output paths excluded)."""
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "func", "data", "model_file")}
    config["command"] = command
    if data is not None:
        config["data_sha256"] = serialize.file_digest(data)
    if getattr(args, "model_file", None):
        config["model_sha256"] = serialize.file_digest(args.model_file)
    return {"config_hash": serialize.config_hash(config), "seed": args.seed}


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args, model: str | None = None) -> pipeline.RunConfig:
    return pipeline.RunConfig(
        model=model or getattr(args, "model", "logit"),
        balance=getattr(args, "balance", "none"),
        seed=args.seed,
        smote_k=getattr(args, "smote_k", 5),
        smote_ratio=getattr(args, "smote_ratio", 1.0),
        test_fraction=getattr(args, "test_fraction", 0.2),
        threshold=getattr(args, "threshold", "auto"),
        filter_vru=getattr(args, "filter_vru", "all"),
        params=_params(getattr(args, "params", None)),
    )


# --------------------------------------------------------------------------
# Subcommands


def cmd_generate(args) -> int:
    config = synth.GeneratorConfig.from_json(args.config) if args.config else synth.GeneratorConfig()
    config = synth.with_seed(config, args.seed)
    events = synth.generate_dataset(config, args.n)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stamp = _stamp("generate", args, Path(args.config) if args.config else None)
    write_events_csv(events, out, comment=pipeline.stamp_comment(stamp))
    log.info("wrote %d events to %s", len(events), out)
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    events = read_events_csv(args.data)
    result = pipeline.train(events, cfg)
    out = _out_dir(args.out)
    stamp = _stamp("train", args, Path(args.data))
    meta = {**stamp, "model": cfg.model, "balance": cfg.balance, "run_config": cfg.to_dict()}
    serialize.save_model(result.model, out / "model.json", meta)
    pipeline.write_split(result, out, stamp)
    report = {**meta, "n_train": len(result.train), "n_test": len(result.test), "n_fit_rows": result.n_train_rows}
    if cfg.model == "logit":
        report["logit"] = report_dict(result.model)
        pipeline.write_report(out / "logit_report.txt", report_text(result.model), stamp)
    serialize.write_json(report, out / "train_report.json")
    log.info("model written to %s", out / "model.json")
    return 0


def cmd_evaluate(args) -> int:
    model, doc = serialize.load_model(args.model_file)
    events = read_events_csv(args.data)
    manifest = Path(args.manifest) if args.manifest else Path(args.model_file).with_name("split.json")
    train_hashes = serialize.read_json(manifest)["train_hashes"] if manifest.is_file() else None
    threshold = None if args.threshold == "auto" else float(args.threshold)
    summary = pipeline.evaluate(model, events, threshold, train_hashes)
    out = _out_dir(args.out)
    stamp = _stamp("evaluate", args, Path(args.data))
    serialize.write_json({**stamp, "model": doc["family"], **summary}, out / "evaluation.json")
    pipeline.write_report(out / "evaluation.txt", pipeline.evaluation_text(summary), stamp)
    pipeline.write_curves(pipeline.evaluation_curves(model, events), out, stamp)
    if summary["leakage_warning"]:
        log.warning("%d evaluated rows overlap the training split", summary["train_overlap_rows"])
    return 0


def cmd_tune(args) -> int:
    from .events import one_hot_encode
    from .tune import tune

    cfg = _run_config(args)
    events = pipeline.filter_events(read_events_csv(args.data), cfg.filter_vru)
    data = one_hot_encode(events)
    result = tune(args.model, data, budget=args.budget, seed=subseed(cfg.seed, "tune"), k=args.k,
                  balance=cfg.balance, n_init=args.n_init, smote=cfg.smote_params())
    stamp = _stamp("tune", args, Path(args.data))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    serialize.write_json({**stamp, "model": args.model, "objective": "minority-class average precision",
                          **result.to_dict()}, out)
    return 0


def cmd_explain(args) -> int:
    model, doc = serialize.load_model(args.model_file)
    events = read_events_csv(args.data)
    attrs = pipeline.explain_model(model, events, args.max_rows, args.seed)
    out = _out_dir(args.out)
    stamp = _stamp("explain", args, Path(args.data))
    meta = {**stamp, "model": doc["family"]}
    write_beeswarm_json(attrs, out / "beeswarm.json", meta)
    write_beeswarm_csv(beeswarm_export(attrs), out / "beeswarm.csv",
                       comment=pipeline.stamp_comment(stamp))
    return 0


def cmd_pipeline(args) -> int:
    out = _out_dir(args.out)
    if args.data:
        events = read_events_csv(args.data)
        stamp = _stamp("pipeline", args, Path(args.data))
    else:
        # Generated data is fixed by the arguments (and generator config file).
        config = synth.GeneratorConfig.from_json(args.config) if args.config else synth.GeneratorConfig()
        events = synth.generate_dataset(synth.with_seed(config, args.seed), args.n)
        stamp = _stamp("pipeline", args, Path(args.config) if args.config else None)
        write_events_csv(events, out / "data.csv", comment=pipeline.stamp_comment(stamp))
    grid_cfg = _run_config(args, model="logit")
    cells = pipeline.run_grid(events, grid_cfg, args.models, args.balance_modes, out, stamp,
                              shap_rows=args.shap_rows)
    rows = [pipeline.comparison_row(c) for c in cells if c.status == "ok"]
    serialize.write_json({**stamp, "rows": rows}, out / "comparison.json")
    pipeline.write_report(out / "comparison.txt", pipeline.comparison_text(rows), stamp)
    failed = [c for c in cells if c.status != "ok"]
    manifest = {
        **stamp,
        "run_config": grid_cfg.to_dict(),
        "cells": [{"model": c.family, "balance": c.balance, "status": c.status, "error": c.error} for c in cells],
        "n_failed": len(failed),
    }
    serialize.write_json(manifest, out / "manifest.json")
    for c in failed:
        print(f"cell {c.family}/{c.balance} failed: {c.error}", file=sys.stderr)
    return 1 if failed else 0


# --------------------------------------------------------------------------
# Parser


def _common(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, required=True, help="run seed (all randomness derives from it)")


def _balancing(p):
    p.add_argument("--balance", choices=pipeline.BALANCE_MODES, default="none")
    p.add_argument("--smote-k", type=int, default=5, help="SMOTE-NC neighbours")
    p.add_argument("--smote-ratio", type=float, default=1.0, help="target minority/majority ratio")
    p.add_argument("--filter-vru", choices=("all", "pedestrian"), default="all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conflictlens", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a synthetic labelled event table")
    _common(p)
    p.add_argument("--n", type=int, default=1470, help="number of events")
    p.add_argument("--config", help="generator configuration JSON")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="split, balance and fit one model")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=pipeline.FAMILIES, required=True)
    _balancing(p)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--params", help="hyperparameters as JSON text or file (defaults: tuned values)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="Bayesian hyperparameter search")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=pipeline.TREE_FAMILIES, required=True)
    _balancing(p)
    p.add_argument("--budget", type=int, default=30)
    p.add_argument("--n-init", type=int, default=10)
    p.add_argument("--k", type=int, default=3, help="cross-validation folds")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("evaluate", help="score a saved model on labelled events")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", dest="model_file", required=True, help="model JSON written by train")
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=_threshold, default="auto")
    p.add_argument("--manifest", help="split manifest for the leakage check (default: next to the model)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="Shapley attributions and bee-swarm export")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", dest="model_file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--max-rows", type=int, default=None, help="explain a seeded subsample")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("pipeline", help="full model x balancing grid")
    _common(p)
    p.add_argument("--data", help="event CSV (default: synthetic data drawn with --seed)")
    p.add_argument("--n", type=int, default=1470, help="synthetic rows when --data is absent")
    p.add_argument("--config", help="generator configuration JSON when --data is absent")
    p.add_argument("--models", nargs="+", choices=pipeline.FAMILIES, default=list(pipeline.FAMILIES))
    p.add_argument("--balance-modes", nargs="+", choices=pipeline.BALANCE_MODES,
                   default=list(pipeline.BALANCE_MODES))
    p.add_argument("--smote-k", type=int, default=5)
    p.add_argument("--smote-ratio", type=float, default=1.0)
    p.add_argument("--filter-vru", choices=("all", "pedestrian"), default="all")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--threshold", type=_threshold, default="auto")
    p.add_argument("--params", help='per-family overrides, e.g. {"dt": {"max_depth": 5}}')
    p.add_argument("--shap-rows", type=int, default=100, help="test rows explained per tree model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _configure_logging():
    level = os.environ.get("CONFLICTLENS_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG", "WARNING"):
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConflictLensError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
