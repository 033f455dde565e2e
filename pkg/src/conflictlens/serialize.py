"""Versioned JSON documents for fitted models.

Floats are written with ``repr`` precision by :mod:`json`, so a save/load
round trip reproduces every coefficient, threshold and leaf value exactly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict

from . import logit
from .errors import SchemaError
from .trees import BoostedEnsemble, BoostParams, DecisionTree, Forest, ForestParams, Tree, TreeParams

FORMAT = "conflictlens-model"
VERSION = 1


def family_of(model) -> str:
    if isinstance(model, logit.FittedLogit):
        return "logit"
    if isinstance(model, DecisionTree):
        return "dt"
    if isinstance(model, Forest):
        return "rf"
    if isinstance(model, BoostedEnsemble):
        return "gbdt"
    raise TypeError(f"cannot serialise {type(model).__name__}")


def model_columns(model) -> list[str]:
    if isinstance(model, logit.FittedLogit):
        return model.feature_names
    return list(model.columns)


def model_to_dict(model, meta: dict | None = None) -> dict:
    family = family_of(model)
    if family == "logit":
        payload = logit.to_json_dict(model)
        params = {"ridge": model.ridge}
    elif family == "dt":
        payload = {"tree": model.tree.to_dict()}
        params = asdict(model.params)
    elif family == "rf":
        payload = {"trees": [t.to_dict() for t in model.trees]}
        params = asdict(model.params)
    else:
        payload = {
            "base_score": model.base_score,
            "learning_rate": model.learning_rate,
            "trees": [t.to_dict() for t in model.trees],
            "train_loss": list(model.train_loss),
        }
        params = asdict(model.params)
    return {
        "format": FORMAT,
        "version": VERSION,
        "family": family,
        "columns": model_columns(model),
        "params": params,
        "meta": dict(meta or {}),
        "payload": payload,
    }


def model_from_dict(doc: dict):
    if doc.get("format") != FORMAT:
        raise SchemaError("not a model document")
    if doc.get("version") != VERSION:
        raise SchemaError(f"unsupported model document version {doc.get('version')!r}")
    family = doc["family"]
    columns = tuple(doc["columns"])
    payload = doc["payload"]
    params = doc["params"]
    if family == "logit":
        return logit.from_json_dict(payload)
    if family == "dt":
        return DecisionTree(Tree.from_dict(payload["tree"]), len(columns), columns, TreeParams(**params))
    if family == "rf":
        trees = [Tree.from_dict(t) for t in payload["trees"]]
        return Forest(trees, len(columns), columns, ForestParams(**params))
    if family == "gbdt":
        trees = [Tree.from_dict(t) for t in payload["trees"]]
        return BoostedEnsemble(
            payload["base_score"], payload["learning_rate"], trees, len(columns), columns,
            BoostParams(**params), list(payload.get("train_loss", [])),
        )
    raise SchemaError(f"unknown model family {family!r}")


def dumps(doc) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=True) + "\n"


def write_json(doc, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(doc))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_model(model, path, meta: dict | None = None) -> None:
    write_json(model_to_dict(model, meta), path)


def load_model(path):
    doc = read_json(path)
    return model_from_dict(doc), doc


def config_hash(config: dict) -> str:
    """Short SHA-256 digest of a configuration's canonical JSON."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
