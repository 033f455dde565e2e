"""Seeded generator of synthetic critical-event datasets.

Categorical covariates are drawn independently from per-level marginals
(pedestrian events are then coerced onto the crosswalk), PET from a
truncated two-component normal mixture on (0, 3) and speeds from gamma
distributions.  Labels follow a logistic ground-truth model whose intercept
is solved numerically so the expected positive rate hits a target base rate.

Covariates are independent by construction; real event data has joint
structure (bicycles ride in travel lanes, VRU and vehicle signals are
anti-correlated) that this generator does not reproduce.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit, ndtr, ndtri

from ._seeding import substream
from .errors import InvalidConfig, NoRoot
from .events import (
    BOOLEAN,
    CATEGORICAL,
    CONTINUOUS,
    CRITICAL_PET,
    LEVELS,
    CriticalEvent,
    EncodedMatrix,
    encode_columns,
)

DEFAULT_BASE_RATE = 89 / 1470

# Combined-dataset level shares (percent).  Proximity is not tabulated and
# defaults to an even split.
_COMBINED_PERCENT = {
    "proximity": {"low": 50.0, "high": 50.0},
    "vru_type": {"pedestrian": 80.13, "bicycle": 19.87},
    "vehicle_type": {"bicycle": 1.22, "bus": 7.96, "car": 90.34, "motorcycle": 0.48},
    "arrived_first": {
        "bicycle": 7.69, "pedestrian": 25.65, "bus": 4.56, "car": 61.90, "motorcycle": 0.20,
    },
    "vru_location": {"crosswalk": 70.20, "curb": 18.71, "sidewalk": 0.54, "travel_lane": 10.54},
    "veh_movement": {"through": 32.93, "left_turn": 27.62, "right_turn": 39.46},
    "nearside": {"yes": 64.15, "no": 35.85},
    "vru_movement": {"crosswalk": 90.34, "through": 5.37, "left_turn": 2.59, "right_turn": 1.70},
    "veh_signal": {"green": 94.90, "red": 5.10},
    "vru_signal": {"green": 38.98, "red": 61.02},
    "weather": {"clear": 50.75, "sunny": 32.79, "precipitation": 4.08, "overcast": 12.38},
    "lighting": {
        "daylight": 83.81,
        "twilight": 1.97,
        "dark_no_streetlights": 0.61,
        "dark_with_streetlights": 8.91,
        "evening": 4.69,
    },
}

# Mean speeds in mph; gamma shape 4 with scale = mean / 4.
_SPEED_MEANS = {
    "veh_median_speed": 13.3,
    "veh_conflict_speed": 14.4,
    "vru_median_speed": 4.6,
    "vru_conflict_speed": 5.3,
}

# Imbalanced combined-data logistic fit, over the baseline-dropped encoding.
TABLE3_COEFFICIENTS = {
    "veh_movement.through": -1.132,
    "vru_signal.red": 1.185,
    "proximity.low": -1.277,
    "pet": -1.042,
    "vru_conflict_speed": 0.163,
}
TABLE3_INTERCEPT = -1.793


def default_marginals() -> dict[str, dict[str, float]]:
    """Combined-data shares divided by 100 and renormalised to sum to one."""
    out = {}
    for var, table in _COMBINED_PERCENT.items():
        total = sum(table.values())
        out[var] = {lv: p / total for lv, p in table.items()}
    return out


@dataclass(frozen=True)
class PetMixture:
    weights: tuple[float, float] = (0.45, 0.55)
    means: tuple[float, float] = (1.0, 2.3)
    sds: tuple[float, float] = (0.4, 0.4)
    lower: float = 0.0
    upper: float = CRITICAL_PET

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        means = np.asarray(self.means)[comp]
        sds = np.asarray(self.sds)[comp]
        lo = ndtr((self.lower - means) / sds)
        hi = ndtr((self.upper - means) / sds)
        u = rng.uniform(size=n)
        x = means + sds * ndtri(lo + u * (hi - lo))
        # Inverse-CDF round-off can land exactly on a bound.
        return np.clip(x, np.nextafter(self.lower, np.inf), np.nextafter(self.upper, -np.inf))


@dataclass(frozen=True)
class GroundTruth:
    """Logistic ground truth over the baseline-dropped encoding.

    ``interactions`` holds ``(column_a, column_b, coefficient)`` product terms.
    The intercept is not stored here; it is calibrated to a base rate.
    """

    coefficients: Mapping[str, float] = field(default_factory=lambda: dict(TABLE3_COEFFICIENTS))
    interactions: Sequence[tuple[str, str, float]] = ()

    def linear_part(self, matrix: EncodedMatrix) -> np.ndarray:
        idx = {name: j for j, name in enumerate(matrix.names)}
        eta = np.zeros(matrix.n_rows)
        try:
            for name, coef in self.coefficients.items():
                eta += coef * matrix.values[:, idx[name]]
            for a, b, coef in self.interactions:
                eta += coef * matrix.values[:, idx[a]] * matrix.values[:, idx[b]]
        except KeyError as exc:
            raise InvalidConfig(f"ground truth refers to unknown column {exc.args[0]!r}") from None
        return eta


@dataclass(frozen=True)
class GeneratorConfig:
    categorical_marginals: Mapping[str, Mapping[str, float]] = field(default_factory=default_marginals)
    pet_mixture: PetMixture = field(default_factory=PetMixture)
    speed_params: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: {k: (4.0, m / 4.0) for k, m in _SPEED_MEANS.items()}
    )
    ground_truth: GroundTruth = field(default_factory=GroundTruth)
    base_rate: float = DEFAULT_BASE_RATE
    calibration_rows: int = 50_000
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        expected = set(CATEGORICAL) | set(BOOLEAN)
        if set(self.categorical_marginals) != expected:
            raise InvalidConfig(
                f"marginals must cover exactly {sorted(expected)}, got {sorted(self.categorical_marginals)}"
            )
        for var, table in self.categorical_marginals.items():
            allowed = ("yes", "no") if var in BOOLEAN else LEVELS[var]
            bad = [lv for lv in table if lv not in allowed]
            if bad:
                raise InvalidConfig(f"{var}: unknown levels {bad}")
            probs = np.array(list(table.values()), float)
            if np.any(probs < 0) or not np.all(np.isfinite(probs)):
                raise InvalidConfig(f"{var}: probabilities must be finite and non-negative")
            if abs(probs.sum() - 1.0) > 1e-9:
                raise InvalidConfig(f"{var}: probabilities sum to {probs.sum()!r}, not 1")
        mix = self.pet_mixture
        if len(mix.weights) != len(mix.means) or len(mix.means) != len(mix.sds):
            raise InvalidConfig("pet mixture components have inconsistent lengths")
        if abs(sum(mix.weights) - 1.0) > 1e-9 or min(mix.weights) < 0:
            raise InvalidConfig("pet mixture weights must be non-negative and sum to 1")
        if min(mix.sds) <= 0:
            raise InvalidConfig("pet mixture sds must be positive")
        if set(self.speed_params) != set(CONTINUOUS) - {"pet"}:
            raise InvalidConfig("speed_params must cover the four speed fields")
        for name, (shape, scale) in self.speed_params.items():
            if not (shape > 0 and scale > 0):
                raise InvalidConfig(f"{name}: gamma parameters must be positive")
        if not 0 < self.base_rate < 1:
            raise InvalidConfig("base_rate must lie in (0, 1)")

    # JSON mirror ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "categorical_marginals": {k: dict(v) for k, v in self.categorical_marginals.items()},
            "pet_mixture": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.pet_mixture).items()},
            "speed_params": {k: list(v) for k, v in self.speed_params.items()},
            "ground_truth": {
                "coefficients": dict(self.ground_truth.coefficients),
                "interactions": [list(t) for t in self.ground_truth.interactions],
            },
            "base_rate": self.base_rate,
            "calibration_rows": self.calibration_rows,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> GeneratorConfig:
        known = {"categorical_marginals", "pet_mixture", "speed_params", "ground_truth",
                 "base_rate", "calibration_rows", "seed"}
        extra = set(data) - known
        if extra:
            raise InvalidConfig(f"unknown config keys: {sorted(extra)}")
        kwargs = {}
        try:
            if "categorical_marginals" in data:
                marg = default_marginals()
                marg.update({k: dict(v) for k, v in data["categorical_marginals"].items()})
                kwargs["categorical_marginals"] = marg
            if "pet_mixture" in data:
                pm = data["pet_mixture"]
                kwargs["pet_mixture"] = PetMixture(
                    **{k: tuple(v) if isinstance(v, list) else v for k, v in pm.items()}
                )
            if "speed_params" in data:
                sp = {k: (4.0, m / 4.0) for k, m in _SPEED_MEANS.items()}
                sp.update({k: tuple(v) for k, v in data["speed_params"].items()})
                kwargs["speed_params"] = sp
            if "ground_truth" in data:
                gt = data["ground_truth"]
                kwargs["ground_truth"] = GroundTruth(
                    coefficients=dict(gt.get("coefficients", TABLE3_COEFFICIENTS)),
                    interactions=tuple(tuple(t) for t in gt.get("interactions", ())),
                )
            for key in ("base_rate", "calibration_rows", "seed"):
                if key in data:
                    kwargs[key] = data[key]
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidConfig):
                raise
            raise InvalidConfig(str(exc)) from exc
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> GeneratorConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------


def sample_covariates(config: GeneratorConfig, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Column-wise covariate draw (no labels)."""
    cols: dict[str, np.ndarray] = {}
    cols["pet"] = config.pet_mixture.sample(n, rng)
    for name in CONTINUOUS[1:]:
        shape, scale = config.speed_params[name]
        cols[name] = rng.gamma(shape, scale, size=n)
    for var in CATEGORICAL + BOOLEAN:
        table = config.categorical_marginals[var]
        levels = list(table)
        draw = rng.choice(len(levels), size=n, p=np.array([table[lv] for lv in levels]))
        values = np.array(levels, dtype=object)[draw]
        if var in BOOLEAN:
            values = values == "yes"
        cols[var] = values
    ped = cols["vru_type"] == "pedestrian"
    cols["vru_movement"][ped] = "crosswalk"
    bad = ped & (cols["vru_location"] == "travel_lane")
    if bad.any():
        table = {lv: p for lv, p in config.categorical_marginals["vru_location"].items() if lv != "travel_lane"}
        total = sum(table.values())
        if total <= 0:
            raise InvalidConfig("vru_location marginals leave no level available to pedestrians")
        levels = list(table)
        draw = rng.choice(len(levels), size=int(bad.sum()), p=np.array([table[lv] / total for lv in levels]))
        cols["vru_location"][bad] = np.array(levels, dtype=object)[draw]
    return cols


def calibrate_intercept(
    ground_truth,
    covariate_sampler: Callable[[int, np.random.Generator], EncodedMatrix],
    base_rate: float,
    seed,
    n_samples: int = 50_000,
    bracket: tuple[float, float] = (-15.0, 15.0),
) -> float:
    """Intercept that makes the mean model probability equal ``base_rate``.

    ``ground_truth`` is a :class:`GroundTruth` or any callable mapping an
    encoded matrix to its linear predictor without intercept.  The mean is a
    Monte-Carlo average over ``n_samples`` rows from ``covariate_sampler``
    and the root is found by bisection inside ``bracket``.
    """
    if not 0 < base_rate < 1:
        raise InvalidConfig("base_rate must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    matrix = covariate_sampler(n_samples, rng)
    linear = ground_truth.linear_part if hasattr(ground_truth, "linear_part") else ground_truth
    eta = np.asarray(linear(matrix), float)

    def excess(b0):
        return expit(b0 + eta).mean() - base_rate

    lo, hi = bracket
    f_lo, f_hi = excess(lo), excess(hi)
    if f_lo > 0 or f_hi < 0:
        raise NoRoot(f"base rate {base_rate} not attainable for intercepts in [{lo}, {hi}]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def _encoded_sampler(config: GeneratorConfig):
    def sampler(n, rng):
        return encode_columns(sample_covariates(config, n, rng), drop_baseline=True)

    return sampler


def generator_intercept(config: GeneratorConfig) -> float:
    return calibrate_intercept(
        config.ground_truth,
        _encoded_sampler(config),
        config.base_rate,
        substream(config.seed, "calibrate"),
        n_samples=config.calibration_rows,
    )


def generate_columns(config: GeneratorConfig, n: int, intercept: float | None = None):
    """Column-wise dataset draw; returns ``(columns, labels)``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if intercept is None:
        intercept = generator_intercept(config)
    rng = substream(config.seed, "generate")
    cols = sample_covariates(config, n, rng)
    if n == 0:
        return cols, np.zeros(0, np.int64)
    eta = intercept + config.ground_truth.linear_part(encode_columns(cols, drop_baseline=True))
    labels = (rng.uniform(size=n) < expit(eta)).astype(np.int64)
    return cols, labels


def generate_dataset(config: GeneratorConfig | None = None, n: int = 1470) -> list[CriticalEvent]:
    """Draw ``n`` labelled events; deterministic for a fixed ``config.seed``."""
    config = GeneratorConfig() if config is None else config
    if n == 0:
        return []
    cols, labels = generate_columns(config, n)
    names = CONTINUOUS + CATEGORICAL + BOOLEAN
    lists = {k: cols[k].tolist() for k in names}
    return [
        CriticalEvent(**{k: lists[k][i] for k in names}, label=bool(labels[i]))
        for i in range(n)
    ]


def with_seed(config: GeneratorConfig, seed: int) -> GeneratorConfig:
    return replace(config, seed=seed)


def logit(p: float) -> float:
    return math.log(p / (1 - p))
