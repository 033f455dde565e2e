"""Split, balance, fit, evaluate and explain: the experiment grid in one place.

Every stochastic step draws from a named sub-stream of the single run seed
(``split``, ``smote``, ``forest``, ``boost``, ``tune``, ``explain``), so
cells can be re-run in isolation and give the same numbers.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import explain as shap
from . import imbalance, metrics, serialize, trees
from ._seeding import subseed
from .errors import ConflictLensError, InvalidConfig, SchemaError, UnlabeledData
from .events import (
    FIELD_ORDER,
    CriticalEvent,
    EncodedMatrix,
    has_labels,
    one_hot_encode,
    stratified_split_indices,
    write_events_csv,
)
from .logit import fit_logistic, report_dict, report_text

log = logging.getLogger("conflictlens")

FAMILIES = ("logit", "dt", "rf", "gbdt")
BALANCE_MODES = ("none", "weights", "smote")
TREE_FAMILIES = ("dt", "rf", "gbdt")

# Tuned hyperparameters for the combined VRU data.
TUNED_PARAMS = {
    "logit": {},
    "dt": {"max_depth": 58, "min_samples_leaf": 5, "min_samples_split": 9, "ccp_alpha": 0.0007},
    "rf": {"max_depth": 73, "min_samples_leaf": 2, "min_samples_split": 2, "n_estimators": 155},
    "gbdt": {"colsample": 0.59, "learning_rate": 0.20, "gamma": 0.48, "max_depth": 11, "min_child_weight": 2.0},
}


@dataclass(frozen=True)
class RunConfig:
    model: str = "logit"
    balance: str = "none"
    seed: int = 0
    smote_k: int = 5
    smote_ratio: float = 1.0
    test_fraction: float = 0.2
    threshold: str | float = "auto"
    filter_vru: str = "all"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in FAMILIES:
            raise InvalidConfig(f"unknown model family {self.model!r}; choose from {FAMILIES}")
        if self.balance not in BALANCE_MODES:
            raise InvalidConfig(f"unknown balancing mode {self.balance!r}; choose from {BALANCE_MODES}")
        if self.filter_vru not in ("all", "pedestrian"):
            raise InvalidConfig("filter_vru must be 'all' or 'pedestrian'")
        if self.threshold != "auto" and not 0 <= float(self.threshold) <= 1:
            raise InvalidConfig("threshold must be 'auto' or a number in [0, 1]")

    def model_params(self) -> dict:
        return {**TUNED_PARAMS[self.model], **self.params}

    def smote_params(self) -> imbalance.SmoteParams:
        return imbalance.SmoteParams(self.smote_k, self.smote_ratio, subseed(self.seed, "smote"))

    def fixed_threshold(self) -> float | None:
        return None if self.threshold == "auto" else float(self.threshold)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# Data plumbing


def filter_events(events: Sequence[CriticalEvent], filter_vru: str) -> list[CriticalEvent]:
    if filter_vru == "all":
        return list(events)
    return [e for e in events if e.vru_type == filter_vru]


def row_hash(event: CriticalEvent) -> str:
    """Content hash of an event (covariates and label) for leakage checks."""
    parts = [repr(getattr(event, f)) for f in FIELD_ORDER] + [repr(event.label)]
    return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()[:20]


def split_events(events: Sequence[CriticalEvent], test_fraction: float, seed: int):
    """Stratified split; returns ``(train_idx, test_idx)``."""
    if not has_labels(events):
        raise UnlabeledData("column 'confirmed_conflict' is required (missing or empty)")
    labels = np.array([int(e.label) for e in events])
    return stratified_split_indices(labels, test_fraction, subseed(seed, "split"))


def drop_constant_columns(matrix: EncodedMatrix) -> EncodedMatrix:
    keep = [c for j, c in enumerate(matrix.names) if np.ptp(matrix.values[:, j]) > 0]
    return matrix.select(keep)


def fit_family(family: str, train: EncodedMatrix, params: dict, seed: int):
    """Fit one model family on a full (tree-layout) encoding.

    Logistic models switch to the baseline-dropped layout and drop columns
    that are constant in the training rows.
    """
    if family == "logit":
        return fit_logistic(drop_constant_columns(train.drop_baselines()), **params)
    if family == "dt":
        return trees.fit_tree(train, trees.TreeParams(**params))
    if family == "rf":
        return trees.fit_forest(train, trees.ForestParams(**params, seed=subseed(seed, "forest")))
    if family == "gbdt":
        return trees.fit_gbdt(train, trees.BoostParams(**params, seed=subseed(seed, "boost")))
    raise InvalidConfig(f"unknown model family {family!r}")


def design_matrix(model, events: Sequence[CriticalEvent]) -> EncodedMatrix:
    """Encode ``events`` into exactly the columns ``model`` was fitted on."""
    family = serialize.family_of(model)
    matrix = one_hot_encode(events, drop_baseline=family == "logit")
    try:
        return matrix.select(serialize.model_columns(model))
    except SchemaError as exc:
        raise SchemaError(f"model columns do not match the data: {exc}") from None


def predict(model, events) -> tuple[np.ndarray, np.ndarray | None]:
    m = design_matrix(model, events)
    return model.predict_proba(m.values), m.labels


# --------------------------------------------------------------------------
# Train / evaluate


@dataclass
class TrainResult:
    model: object
    train: list[CriticalEvent]
    test: list[CriticalEvent]
    train_idx: np.ndarray
    test_idx: np.ndarray
    n_train_rows: int


def train(events: Sequence[CriticalEvent], cfg: RunConfig) -> TrainResult:
    """Recode-ready events -> split -> balance (train only) -> encode -> fit."""
    events = filter_events(events, cfg.filter_vru)
    tr, te = split_events(events, cfg.test_fraction, cfg.seed)
    train_events = [events[i] for i in tr]
    test_events = [events[i] for i in te]
    matrix = imbalance.balance(one_hot_encode(train_events), cfg.balance, cfg.smote_params())
    model = fit_family(cfg.model, matrix, cfg.model_params(), cfg.seed)
    return TrainResult(model, train_events, test_events, tr, te, matrix.n_rows)


def split_manifest(result: TrainResult, stamp: dict) -> dict:
    return {
        **stamp,
        "train_rows": result.train_idx.tolist(),
        "test_rows": result.test_idx.tolist(),
        "train_hashes": sorted(row_hash(e) for e in result.train),
        "test_hashes": sorted(row_hash(e) for e in result.test),
        "n_fit_rows": result.n_train_rows,
    }


def curve_rows(curve: metrics.CurveResult) -> list[tuple[float, float, float]]:
    return list(zip(curve.thresholds.tolist(), curve.x.tolist(), curve.y.tolist()))


def evaluate(model, events, threshold: float | None = None, train_hashes=None) -> dict:
    """Two-threshold report, curves and a leakage flag for labelled events."""
    if not has_labels(events):
        raise UnlabeledData("evaluation needs the 'confirmed_conflict' column")
    p, y = predict(model, events)
    summary = metrics.evaluation_summary(y, p, threshold)
    overlap = 0
    if train_hashes is not None:
        known = set(train_hashes)
        overlap = sum(row_hash(e) in known for e in events)
    summary["n_rows"] = int(y.size)
    summary["n_positive"] = int(y.sum())
    summary["scale"] = "probability"
    summary["train_overlap_rows"] = overlap
    summary["leakage_warning"] = overlap > 0
    return summary


def evaluation_curves(model, events) -> dict[str, metrics.CurveResult]:
    p, y = predict(model, events)
    roc = metrics.roc_report(y, p)
    pr = metrics.pr_report(y, p)
    sweep = metrics.optimize_threshold(y, p)
    return {
        "roc_class1": roc.positive,
        "roc_class0": roc.negative,
        "pr_class1": pr.positive,
        "pr_class0": pr.negative,
        "f1_sweep": metrics.CurveResult(sweep.thresholds, sweep.thresholds, sweep.macro_f1, sweep.best_score),
    }


def evaluation_text(summary: dict) -> str:
    """Aligned per-class table at 0.50 and the chosen threshold."""
    header = ("Threshold", "Conflict", "Precision", "Recall", "F1", "Macro F1")
    body = []
    for row in summary["thresholds"]:
        for i, cls in enumerate(row["classes"]):
            body.append((
                f"{row['threshold']:.2f}" if i == 0 else "",
                "Yes" if cls["class"] == 1 else "No",
                f"{cls['precision']:.2f}",
                f"{cls['recall']:.2f}",
                f"{cls['f1']:.2f}",
                f"{row['macro_f1']:.2f}" if i == 0 else "",
            ))
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(header)]
    fmt = lambda cells: "  ".join(c.ljust(widths[i]) for i, c in enumerate(cells)).rstrip()
    rule = "-" * len(fmt(header))
    lines = [rule, fmt(header), rule, *(fmt(b) for b in body), rule]
    roc, pr = summary["roc_auc"], summary["pr_auc"]
    lines.append(f"ROC AUC  class 0 {roc['class_0']:.2f}  class 1 {roc['class_1']:.2f}  macro {roc['macro']:.2f}")
    lines.append(f"PR AUC   class 0 {pr['class_0']:.2f}  class 1 {pr['class_1']:.2f}  macro {pr['macro']:.2f}")
    if summary.get("leakage_warning"):
        lines.append(f"WARNING: {summary['train_overlap_rows']} evaluated rows also appear in the training split")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Explanations


def explain_model(model, events, max_rows: int | None = None, seed: int = 0) -> shap.AttributionSet:
    """Margin-scale attributions for (a seeded subsample of) ``events``."""
    m = design_matrix(model, events)
    rows = np.arange(m.n_rows)
    if max_rows is not None and m.n_rows > max_rows:
        rng = np.random.default_rng(subseed(seed, "explain"))
        rows = np.sort(rng.choice(m.n_rows, size=max_rows, replace=False))
    X = m.values[rows]
    if serialize.family_of(model) == "logit":
        return shap.shap_linear(model, X, m.values.mean(axis=0))
    return shap.shap_tree(model, X, feature_names=m.names)


# --------------------------------------------------------------------------
# Comparison grid


@dataclass
class CellResult:
    family: str
    balance: str
    status: str
    summary: dict | None = None
    error: str | None = None


def comparison_row(cell: CellResult) -> dict:
    s = cell.summary
    default, chosen = s["thresholds"]
    pos = lambda row: next(c for c in row["classes"] if c["class"] == 1)
    return {
        "model": cell.family,
        "balance": cell.balance,
        "macro_f1_at_0.50": default["macro_f1"],
        "threshold": chosen["threshold"],
        "macro_f1": chosen["macro_f1"],
        "conflict_precision": pos(chosen)["precision"],
        "conflict_recall": pos(chosen)["recall"],
        "conflict_f1": pos(chosen)["f1"],
        "roc_auc_macro": s["roc_auc"]["macro"],
        "pr_auc_macro": s["pr_auc"]["macro"],
        "pr_auc_conflict": s["pr_auc"]["class_1"],
    }


def comparison_text(rows: list[dict]) -> str:
    header = ("Model", "Balance", "F1@0.50", "Thr", "Macro F1", "P(yes)", "R(yes)", "ROC AUC", "PR AUC")
    body = [
        (r["model"], r["balance"], f"{r['macro_f1_at_0.50']:.3f}", f"{r['threshold']:.2f}",
         f"{r['macro_f1']:.3f}", f"{r['conflict_precision']:.3f}", f"{r['conflict_recall']:.3f}",
         f"{r['roc_auc_macro']:.3f}", f"{r['pr_auc_macro']:.3f}")
        for r in rows
    ]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    fmt = lambda cells: "  ".join(c.ljust(widths[i]) for i, c in enumerate(cells)).rstrip()
    rule = "-" * len(fmt(header))
    return "\n".join([rule, fmt(header), rule, *(fmt(b) for b in body), rule]) + "\n"


def run_grid(
    events: Sequence[CriticalEvent],
    cfg: RunConfig,
    families: Sequence[str] = FAMILIES,
    modes: Sequence[str] = BALANCE_MODES,
    out: Path | None = None,
    stamp: dict | None = None,
    shap_rows: int | None = 100,
    explain_modes: Sequence[str] = ("smote",),
) -> list[CellResult]:
    """Fit and evaluate every (family, balancing) cell on one shared split.

    Failures are recorded per cell rather than aborting the grid.  When
    ``out`` is given, each cell writes its model, evaluation and (for tree
    families) bee-swarm export into ``out/cells/<family>_<balance>/``.
    """
    stamp = dict(stamp or {})
    events = filter_events(events, cfg.filter_vru)
    tr, te = split_events(events, cfg.test_fraction, cfg.seed)
    train_events = [events[i] for i in tr]
    test_events = [events[i] for i in te]
    base = one_hot_encode(train_events)
    smote = cfg.smote_params()
    balanced = {}
    results = []
    for family in families:
        for mode in modes:
            log.info("cell %s/%s", family, mode)
            try:
                if mode not in balanced:
                    balanced[mode] = imbalance.balance(base, mode, smote)
                params = {**TUNED_PARAMS[family], **(cfg.params.get(family, {}) if cfg.params else {})}
                model = fit_family(family, balanced[mode], params, cfg.seed)
                summary = evaluate(model, test_events, cfg.fixed_threshold())
                cell = CellResult(family, mode, "ok", summary)
                if out is not None:
                    _write_cell(out, cell, model, test_events, stamp, shap_rows,
                                family in TREE_FAMILIES and mode in explain_modes, cfg.seed)
            except (ConflictLensError, ValueError, np.linalg.LinAlgError) as exc:
                log.warning("cell %s/%s failed: %s", family, mode, exc)
                cell = CellResult(family, mode, "failed", error=f"{type(exc).__name__}: {exc}")
            results.append(cell)
    return results


def _write_cell(out: Path, cell: CellResult, model, test_events, stamp, shap_rows, with_shap, seed):
    d = Path(out) / "cells" / f"{cell.family}_{cell.balance}"
    d.mkdir(parents=True, exist_ok=True)
    meta = {**stamp, "model": cell.family, "balance": cell.balance}
    serialize.save_model(model, d / "model.json", meta)
    serialize.write_json({**meta, **cell.summary}, d / "evaluation.json")
    write_report(d / "evaluation.txt", evaluation_text(cell.summary), meta)
    if cell.family == "logit":
        serialize.write_json({**meta, **report_dict(model)}, d / "logit_report.json")
        write_report(d / "logit_report.txt", report_text(model), meta)
    if with_shap:
        attrs = explain_model(model, test_events, shap_rows, seed)
        shap.write_beeswarm_json(attrs, d / "beeswarm.json", meta)
        shap.write_beeswarm_csv(shap.beeswarm_export(attrs), d / "beeswarm.csv", comment=stamp_comment(meta))


def stamp_comment(stamp: dict) -> str:
    return "; ".join(f"{k}={stamp[k]}" for k in ("config_hash", "seed") if k in stamp)


def write_report(path, text: str, stamp: dict) -> None:
    """Text report with the config hash and seed on its first line."""
    Path(path).write_text(f"# {stamp_comment(stamp)}\n{text}", encoding="utf-8")


def write_curves(curves: dict[str, metrics.CurveResult], out: Path, stamp: dict) -> None:
    import csv

    for name, curve in curves.items():
        with open(Path(out) / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# {stamp_comment(stamp)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("threshold", "x", "y"))
            for t, x, y in curve_rows(curve):
                w.writerow((repr(t), repr(x), repr(y)))


def write_split(result: TrainResult, out: Path, stamp: dict) -> None:
    serialize.write_json(split_manifest(result, stamp), Path(out) / "split.json")
    write_events_csv(result.train, Path(out) / "train.csv", comment=stamp_comment(stamp))
    write_events_csv(result.test, Path(out) / "test.csv", comment=stamp_comment(stamp))
