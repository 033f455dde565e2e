"""Critical-event schema, level recoding, one-hot encoding and stratified splits.

A *critical event* is one observed vehicle/VRU interaction with a
post-encroachment time below three seconds.  Events are immutable records;
everything numeric downstream works on an :class:`EncodedMatrix`.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    ConflictLensError,
    DegenerateSplit,
    EmptyDataset,
    InvalidEvent,
    NonFiniteValue,
    NonPositivePET,
    SchemaError,
    UnknownLevel,
)

CRITICAL_PET = 3.0

CONTINUOUS = (
    "pet",
    "veh_median_speed",
    "veh_conflict_speed",
    "vru_median_speed",
    "vru_conflict_speed",
)

# Canonical level sets, in schema order.
LEVELS: dict[str, tuple[str, ...]] = {
    "proximity": ("low", "high"),
    "vru_type": ("pedestrian", "bicycle"),
    "vehicle_type": ("bicycle", "bus", "car", "motorcycle"),
    "arrived_first": ("bicycle", "pedestrian", "bus", "car", "motorcycle"),
    "vru_location": ("crosswalk", "curb", "sidewalk", "travel_lane"),
    "veh_movement": ("through", "left_turn", "right_turn"),
    "vru_movement": ("crosswalk", "through", "left_turn", "right_turn"),
    "veh_signal": ("green", "red"),
    "vru_signal": ("green", "red"),
    "weather": ("clear", "sunny", "precipitation", "overcast"),
    "lighting": (
        "daylight",
        "twilight",
        "dark_no_streetlights",
        "dark_with_streetlights",
        "evening",
    ),
}

BOOLEAN = ("nearside",)

# Reference level of each categorical; dropped in the logistic encoding and
# the implicit "0" of every binary indicator.
BASELINES: dict[str, str] = {
    "proximity": "high",
    "vru_type": "bicycle",
    "vehicle_type": "car",
    "arrived_first": "pedestrian",
    "vru_location": "crosswalk",
    "veh_movement": "left_turn",
    "vru_movement": "crosswalk",
    "veh_signal": "green",
    "vru_signal": "green",
    "weather": "clear",
    "lighting": "daylight",
}

FIELD_ORDER = (
    "pet",
    "veh_median_speed",
    "veh_conflict_speed",
    "vru_median_speed",
    "vru_conflict_speed",
    "proximity",
    "vru_type",
    "vehicle_type",
    "arrived_first",
    "vru_location",
    "veh_movement",
    "nearside",
    "vru_movement",
    "veh_signal",
    "vru_signal",
    "weather",
    "lighting",
)
CATEGORICAL = tuple(f for f in FIELD_ORDER if f in LEVELS)
LABEL_COLUMN = "confirmed_conflict"


def is_binary(variable: str) -> bool:
    return variable in BOOLEAN or len(LEVELS.get(variable, ())) == 2


@dataclass(frozen=True)
class CriticalEvent:
    pet: float
    veh_median_speed: float
    veh_conflict_speed: float
    vru_median_speed: float
    vru_conflict_speed: float
    proximity: str
    vru_type: str
    vehicle_type: str
    arrived_first: str
    vru_location: str
    veh_movement: str
    nearside: bool
    vru_movement: str
    veh_signal: str
    vru_signal: str
    weather: str
    lighting: str
    label: bool | None = None

    def __post_init__(self):
        for name in CONTINUOUS:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise NonFiniteValue(f"{name} must be finite, got {value!r}")
            if name == "pet":
                if value <= 0:
                    raise NonPositivePET(f"pet must be positive, got {value!r}")
            elif value < 0:
                raise InvalidEvent(f"{name} must be non-negative, got {value!r}")
        for name, levels in LEVELS.items():
            if getattr(self, name) not in levels:
                raise UnknownLevel(name, getattr(self, name))
        if not isinstance(self.nearside, (bool, np.bool_)):
            raise InvalidEvent(f"nearside must be boolean, got {self.nearside!r}")
        if self.vru_type == "pedestrian":
            if self.vru_movement != "crosswalk":
                raise InvalidEvent("pedestrian events must have vru_movement=crosswalk")
            if self.vru_location == "travel_lane":
                raise InvalidEvent("pedestrian events cannot be located in the travel lane")


def is_critical(pet: float) -> bool:
    """True when ``pet`` is strictly below the three-second cut-off."""
    if not math.isfinite(pet):
        raise NonFiniteValue(f"pet must be finite, got {pet!r}")
    if pet <= 0:
        raise NonPositivePET(f"pet must be positive, got {pet!r}")
    return pet < CRITICAL_PET


# --------------------------------------------------------------------------
# Recoding


def _norm(value) -> str:
    return re.sub(r"[\s_]+", "_", str(value).strip().lower())


@dataclass(frozen=True)
class RecodeMap:
    """Raw level -> canonical level rules, keyed by variable.

    Raw keys are matched after lower-casing and collapsing whitespace and
    underscores into a single underscore.
    """

    rules: Mapping[str, Mapping[str, object]]

    def __post_init__(self):
        normalised = {}
        for variable, mapping in self.rules.items():
            table = {}
            for raw, canonical in mapping.items():
                key = _norm(raw)
                if key in table and table[key] != canonical:
                    raise ValueError(f"{variable}: raw level {raw!r} mapped twice")
                table[key] = canonical
            normalised[variable] = table
        object.__setattr__(self, "rules", normalised)

    def apply(self, variable: str, value):
        table = self.rules.get(variable)
        if table is None:
            return value
        try:
            return table[_norm(value)]
        except KeyError:
            raise UnknownLevel(variable, value) from None

    def items(self):
        """Ordered ``(variable, raw, canonical)`` triples."""
        return [(v, raw, c) for v, table in self.rules.items() for raw, c in table.items()]


def _identity(variable):
    return {level: level for level in LEVELS[variable]}


def _default_rules():
    rules = {name: _identity(name) for name in LEVELS}
    rules["vehicle_type"].update(
        {
            "articulated truck": "bus",
            "box truck": "bus",
            "single-unit truck": "bus",
            "pickup truck": "bus",
            "work-van": "bus",
        }
    )
    rules["weather"].update({"rain": "precipitation", "snow": "precipitation"})
    rules["vru_location"].update(
        {"in crosswalk": "crosswalk", "out of crosswalk": "crosswalk", "near crosswalk": "crosswalk"}
    )
    signal_merge = {
        "do not walk": "red",
        "red ball": "red",
        "green arrow": "green",
        "yellow arrow": "green",
        "green ball": "green",
        "yellow ball": "green",
    }
    rules["veh_signal"].update(signal_merge)
    rules["vru_signal"].update(signal_merge)
    rules["nearside"] = {
        "yes": True, "no": False, "true": True, "false": False, "1": True, "0": False,
    }
    return rules


DEFAULT_RECODE = RecodeMap(_default_rules())


def _to_float(name, value) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise InvalidEvent(f"{name}: cannot parse {value!r} as a number") from None
    if not math.isfinite(out):
        raise NonFiniteValue(f"{name} must be finite, got {value!r}")
    return out


def _to_label(value):
    if value is None or value == "":
        return None
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    s = str(value).strip()
    if s in ("0", "1"):
        return s == "1"
    try:
        f = float(s)
    except ValueError:
        raise InvalidEvent(f"label must be 0/1 or empty, got {value!r}") from None
    if f not in (0.0, 1.0):
        raise InvalidEvent(f"label must be 0/1 or empty, got {value!r}")
    return f == 1.0


def recode_levels(raw, recode_map: RecodeMap = DEFAULT_RECODE) -> CriticalEvent:
    """Map a raw record (mapping or event) onto canonical levels.

    Continuous fields pass through; a raw level without a rule raises
    :class:`UnknownLevel`.
    """
    if isinstance(raw, CriticalEvent):
        raw = asdict(raw)
    missing = [f for f in FIELD_ORDER if f not in raw]
    if missing:
        raise SchemaError(f"record is missing fields: {', '.join(missing)}")
    values = {}
    for name in CONTINUOUS:
        values[name] = _to_float(name, raw[name])
    for name in CATEGORICAL + BOOLEAN:
        value = raw[name]
        if name in BOOLEAN and isinstance(value, (bool, np.bool_)):
            values[name] = bool(value)
        else:
            values[name] = recode_map.apply(name, value)
    values["label"] = _to_label(raw.get("label", raw.get(LABEL_COLUMN)))
    return CriticalEvent(**values)


# --------------------------------------------------------------------------
# Encoding


class Column(NamedTuple):
    source: str
    level: object = None  # None for continuous, True for booleans, str for indicators

    @property
    def name(self) -> str:
        if self.level is None or self.level is True:
            return self.source
        return f"{self.source}.{self.level}"


def schema_columns(drop_baseline: bool) -> list[Column]:
    cols = [Column(name) for name in CONTINUOUS]
    for name in FIELD_ORDER:
        if name in BOOLEAN:
            cols.append(Column(name, True))
        elif name in LEVELS:
            levels = LEVELS[name]
            if len(levels) == 2 or drop_baseline:
                levels = [lv for lv in levels if lv != BASELINES[name]]
            cols.extend(Column(name, lv) for lv in levels)
    return cols


@dataclass(frozen=True)
class EncodedMatrix:
    """Numeric design matrix with labels, row weights and column metadata.

    ``synthetic`` flags rows produced by oversampling; ``origin`` holds the
    (seed row, neighbour row) indices of each synthetic row and -1 for real
    rows.
    """

    columns: tuple[Column, ...]
    values: np.ndarray
    labels: np.ndarray | None = None
    row_weights: np.ndarray | None = None
    baseline_map: Mapping[str, str] = field(default_factory=dict)
    synthetic: np.ndarray | None = None
    origin: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.columns):
            raise ValueError("values must be a 2-D array with one column per Column")
        n = values.shape[0]
        object.__setattr__(self, "columns", tuple(Column(*c) for c in self.columns))
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels).astype(np.int64)
            if labels.shape != (n,):
                raise ValueError("labels must have one entry per row")
            object.__setattr__(self, "labels", labels)
        weights = np.ones(n) if self.row_weights is None else np.asarray(self.row_weights, float)
        if weights.shape != (n,) or np.any(weights <= 0):
            raise ValueError("row_weights must be positive, one per row")
        object.__setattr__(self, "row_weights", weights)
        synth = np.zeros(n, bool) if self.synthetic is None else np.asarray(self.synthetic, bool)
        object.__setattr__(self, "synthetic", synth)
        origin = np.full((n, 2), -1, np.int64) if self.origin is None else np.asarray(self.origin, np.int64)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "baseline_map", dict(self.baseline_map))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def drop_baseline(self) -> bool:
        return bool(self.baseline_map)

    def groups(self) -> dict[str, list[int]]:
        """Column indices per source variable, in column order."""
        out: dict[str, list[int]] = {}
        for j, col in enumerate(self.columns):
            out.setdefault(col.source, []).append(j)
        return out

    def take(self, rows) -> EncodedMatrix:
        rows = np.asarray(rows)
        return replace(
            self,
            values=self.values[rows],
            labels=None if self.labels is None else self.labels[rows],
            row_weights=self.row_weights[rows],
            synthetic=self.synthetic[rows],
            origin=self.origin[rows],
        )

    def with_weights(self, weights) -> EncodedMatrix:
        return replace(self, row_weights=np.asarray(weights, float))

    def select(self, names: Sequence[str]) -> EncodedMatrix:
        index = {c.name: j for j, c in enumerate(self.columns)}
        try:
            cols = [index[n] for n in names]
        except KeyError as exc:
            raise SchemaError(f"column {exc.args[0]!r} not present in data") from None
        kept = {self.columns[j].source for j in cols}
        return replace(
            self,
            columns=tuple(self.columns[j] for j in cols),
            values=self.values[:, cols],
            baseline_map={k: v for k, v in self.baseline_map.items() if k in kept},
        )

    def drop_baselines(self) -> EncodedMatrix:
        """Full (tree) encoding -> logistic encoding with baselines removed."""
        if self.drop_baseline:
            return self
        target = [c.name for c in schema_columns(drop_baseline=True)]
        out = self.select(target)
        return replace(out, baseline_map={k: BASELINES[k] for k in LEVELS if len(LEVELS[k]) > 2})


def events_to_columns(events: Sequence[CriticalEvent]) -> dict[str, np.ndarray]:
    cols = {}
    for name in CONTINUOUS:
        cols[name] = np.fromiter((getattr(e, name) for e in events), float, len(events))
    for name in CATEGORICAL:
        cols[name] = np.array([getattr(e, name) for e in events], dtype=object)
    cols["nearside"] = np.fromiter((bool(e.nearside) for e in events), bool, len(events))
    cols["label"] = np.array([e.label for e in events], dtype=object)
    return cols


def encode_columns(cols: Mapping[str, np.ndarray], drop_baseline: bool, labels=None) -> EncodedMatrix:
    n = len(cols["pet"])
    spec = schema_columns(drop_baseline)
    values = np.empty((n, len(spec)))
    for j, col in enumerate(spec):
        data = cols[col.source]
        if col.level is None:
            values[:, j] = data
        elif col.level is True:
            values[:, j] = np.asarray(data, bool)
        else:
            values[:, j] = data == col.level
    baseline_map = {}
    if drop_baseline:
        baseline_map = {k: BASELINES[k] for k in LEVELS if len(LEVELS[k]) > 2}
    return EncodedMatrix(tuple(spec), values, labels=labels, baseline_map=baseline_map)


def one_hot_encode(events: Sequence[CriticalEvent], drop_baseline: bool = False) -> EncodedMatrix:
    """Encode events into a design matrix.

    Continuous fields map to one column each and binary variables to a single
    indicator of the non-reference level.  Variables with more than two
    levels get one indicator per level, or one per non-reference level when
    ``drop_baseline`` is true (the layout used for logistic regression).

    Labels are carried over when every event has one.
    """
    if len(events) == 0:
        raise EmptyDataset("cannot encode an empty event sequence")
    cols = events_to_columns(events)
    raw_labels = cols["label"]
    labels = None
    if all(lbl is not None for lbl in raw_labels):
        labels = raw_labels.astype(bool).astype(np.int64)
    return encode_columns(cols, drop_baseline, labels)


def decode(matrix: EncodedMatrix) -> list[CriticalEvent]:
    """Inverse of :func:`one_hot_encode` (labels restored when present)."""
    groups = matrix.groups()
    idx = {c.name: j for j, c in enumerate(matrix.columns)}
    missing = [n for n in CONTINUOUS if n not in idx]
    if missing:
        raise SchemaError(f"cannot decode without columns {missing}")
    per_field: dict[str, list] = {}
    for name in CONTINUOUS:
        per_field[name] = matrix.values[:, idx[name]].tolist()
    for name in BOOLEAN:
        per_field[name] = (matrix.values[:, idx[name]] > 0.5).tolist()
    for name in CATEGORICAL:
        cols = groups.get(name, [])
        levels = [matrix.columns[j].level for j in cols]
        block = matrix.values[:, cols] > 0.5
        active = block.sum(axis=1)
        if np.any(active > 1):
            raise SchemaError(f"{name}: more than one indicator active in a row")
        chosen = np.where(active == 1, block.argmax(axis=1) if cols else 0, -1)
        base = BASELINES[name]
        per_field[name] = [levels[c] if c >= 0 else base for c in chosen]
    labels = [None] * matrix.n_rows if matrix.labels is None else [bool(v) for v in matrix.labels]
    return [
        CriticalEvent(**{k: per_field[k][i] for k in FIELD_ORDER}, label=labels[i])
        for i in range(matrix.n_rows)
    ]


# --------------------------------------------------------------------------
# Splitting


def _labels_of(events_or_labels) -> np.ndarray:
    items = list(events_or_labels)
    if items and isinstance(items[0], CriticalEvent):
        if any(e.label is None for e in items):
            raise DegenerateSplit("stratification needs every event to carry a label")
        return np.array([int(e.label) for e in items])
    return np.asarray(items, dtype=np.int64)


def stratified_split_indices(labels, test_fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of a stratified (train, test) partition.

    Each class contributes ``round(n_c * test_fraction)`` test rows (halves
    rounded up); both index arrays are sorted.
    """
    labels = np.asarray(labels)
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    test = []
    for cls in (0, 1):
        rows = np.flatnonzero(labels == cls)
        n_test = int(math.floor(len(rows) * test_fraction + 0.5))
        if n_test == 0 or n_test == len(rows):
            raise DegenerateSplit(
                f"class {cls} with {len(rows)} rows cannot be split at fraction {test_fraction}"
            )
        test.append(rng.permutation(rows)[:n_test])
    test_idx = np.sort(np.concatenate(test))
    train_idx = np.setdiff1d(np.arange(len(labels)), test_idx)
    return train_idx, test_idx


def stratified_split(events: Sequence[CriticalEvent], test_fraction: float = 0.2, seed=0):
    """Stratified ``(train, test)`` partition of labelled events."""
    labels = _labels_of(events)
    train_idx, test_idx = stratified_split_indices(labels, test_fraction, seed)
    return [events[i] for i in train_idx], [events[i] for i in test_idx]


def stratified_kfold_indices(labels, k: int, seed) -> list[tuple[np.ndarray, np.ndarray]]:
    """``k`` stratified folds as (train, held-out) index pairs."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    for cls in (0, 1):
        rows = rng.permutation(np.flatnonzero(labels == cls))
        fold_of[rows] = np.arange(len(rows)) % k
    out = []
    for f in range(k):
        held = np.flatnonzero(fold_of == f)
        out.append((np.flatnonzero(fold_of != f), held))
    return out


# --------------------------------------------------------------------------
# CSV


class DataFileError(ConflictLensError, ValueError):
    def __init__(self, path, line, cause):
        self.path, self.line, self.cause = path, line, cause
        super().__init__(f"{path}:{line}: {cause}")


def read_events_csv(path, recode_map: RecodeMap = DEFAULT_RECODE) -> list[CriticalEvent]:
    """Read events from a headed UTF-8 CSV, recoding raw levels.

    The label column (``confirmed_conflict``) is optional; any column outside
    the schema is rejected.  Leading lines starting with ``#`` are comments.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        skipped = 0
        while True:
            pos = fh.tell()
            line = fh.readline()
            if not line.startswith("#"):
                fh.seek(pos)
                break
            skipped += 1
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        unknown = [h for h in header if h not in FIELD_ORDER and h != LABEL_COLUMN]
        if unknown:
            raise SchemaError(f"{path}: unknown columns: {', '.join(unknown)}")
        missing = [f for f in FIELD_ORDER if f not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns: {', '.join(missing)}")
        events = []
        for row in reader:
            try:
                events.append(recode_levels(row, recode_map))
            except ConflictLensError as exc:
                raise DataFileError(path, reader.line_num + skipped, exc) from exc
    return events


def write_events_csv(events: Iterable[CriticalEvent], path, comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(FIELD_ORDER) + [LABEL_COLUMN])
        for e in events:
            row = []
            for name in FIELD_ORDER:
                value = getattr(e, name)
                if name in CONTINUOUS:
                    row.append(repr(float(value)))
                elif name in BOOLEAN:
                    row.append("yes" if value else "no")
                else:
                    row.append(value)
            row.append("" if e.label is None else str(int(e.label)))
            writer.writerow(row)


def has_labels(events: Sequence[CriticalEvent]) -> bool:
    return all(e.label is not None for e in events)


def event_fields() -> list[str]:
    return [f.name for f in fields(CriticalEvent)]
