"""Cross-validated objective and Gaussian-process Bayesian optimisation.

The tuner works in the unit cube: every parameter is mapped linearly (or
linearly in log space) onto [0, 1].  A Matérn-5/2 process is fitted to the
standardised objective values and the expected-improvement maximiser among
a fixed number of candidates is evaluated next.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

from . import imbalance
from .errors import BudgetTooSmall, InvalidConfig, TooFewPerClass
from .events import EncodedMatrix, stratified_kfold_indices
from .metrics import average_precision


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # "int" or "real"
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if self.kind not in ("int", "real"):
            raise InvalidConfig(f"{self.name}: kind must be 'int' or 'real'")
        if not (math.isfinite(self.low) and math.isfinite(self.high) and self.low < self.high):
            raise InvalidConfig(f"{self.name}: need finite bounds with low < high")
        if self.log and self.low <= 0:
            raise InvalidConfig(f"{self.name}: log scale needs a positive lower bound")

    def from_unit(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        if self.log:
            v = math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low)))
        else:
            v = self.low + u * (self.high - self.low)
        if self.kind == "int":
            return int(min(max(round(v), math.ceil(self.low)), math.floor(self.high)))
        return min(max(v, self.low), self.high)

    def to_unit(self, v) -> float:
        if self.log:
            return (math.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (v - self.low) / (self.high - self.low)


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[Param, ...]

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def dim(self) -> int:
        return len(self.params)

    def decode(self, u) -> dict:
        return {p.name: p.from_unit(x) for p, x in zip(self.params, u)}

    def encode(self, values: Mapping) -> np.ndarray:
        return np.array([p.to_unit(values[p.name]) for p in self.params])

    def contains(self, values: Mapping) -> bool:
        return all(p.low <= values[p.name] <= p.high for p in self.params)


DEFAULT_SPACES = {
    "dt": SearchSpace((
        Param("max_depth", "int", 2, 80),
        Param("min_samples_leaf", "int", 1, 20),
        Param("min_samples_split", "int", 2, 20),
        Param("ccp_alpha", "real", 1e-5, 1e-2, log=True),
    )),
    "rf": SearchSpace((
        Param("max_depth", "int", 2, 80),
        Param("min_samples_leaf", "int", 1, 20),
        Param("min_samples_split", "int", 2, 20),
        Param("n_estimators", "int", 50, 300),
    )),
    "gbdt": SearchSpace((
        Param("colsample", "real", 0.3, 1.0),
        Param("learning_rate", "real", 0.01, 0.5, log=True),
        Param("gamma", "real", 0.0, 2.0),
        Param("max_depth", "int", 2, 15),
        Param("min_child_weight", "real", 1.0, 10.0),
    )),
}


def default_space(family: str) -> SearchSpace:
    try:
        return DEFAULT_SPACES[family]
    except KeyError:
        raise InvalidConfig(f"no default search space for {family!r}") from None


# --------------------------------------------------------------------------
# Cross-validated objective


def _fit_family(family, train: EncodedMatrix, params: Mapping, seed: int):
    from .pipeline import fit_family

    if callable(family):
        return family(train, dict(params))
    return fit_family(family, train, dict(params), seed)


def cv_fold_scores(
    model_family,
    params: Mapping,
    data: EncodedMatrix,
    k: int = 3,
    seed: int = 0,
    balance: str = "none",
    smote: imbalance.SmoteParams | None = None,
) -> list[float]:
    """Minority-class average precision on each of ``k`` stratified folds.

    Balancing is applied to the training part of each fold only.
    ``model_family`` is ``"logit"``, ``"dt"``, ``"rf"``, ``"gbdt"`` or a
    callable ``(train, params) -> model`` whose model has ``predict_proba``.
    """
    labels = data.labels
    if labels is None:
        raise ValueError("cross-validation needs labelled data")
    n1 = int(np.count_nonzero(labels == 1))
    if n1 < k or labels.size - n1 < k:
        raise TooFewPerClass(f"need at least {k} rows of each class for {k}-fold CV")
    smote = smote or imbalance.SmoteParams(seed=seed)
    scores = []
    for fold, (tr, te) in enumerate(stratified_kfold_indices(labels, k, seed)):
        train = imbalance.balance(data.take(tr), balance, smote)
        model = _fit_family(model_family, train, params, seed + fold)
        held = data.take(te)
        if hasattr(model, "feature_names") and not callable(model_family):
            held = held.drop_baselines().select(model.feature_names)
        scores.append(average_precision(held.labels, model.predict_proba(held.values)))
    return scores


def cv_objective(model_family, params, data, k: int = 3, seed: int = 0, balance: str = "none",
                 smote: imbalance.SmoteParams | None = None) -> float:
    """Mean minority-class average precision over stratified folds."""
    return float(np.mean(cv_fold_scores(model_family, params, data, k, seed, balance, smote)))


# --------------------------------------------------------------------------
# Gaussian process surrogate


LENGTH_SCALES = (0.05, 0.1, 0.2, 0.4, 0.8)
JITTER = 1e-6


def matern52(A: np.ndarray, B: np.ndarray, length_scale: float) -> np.ndarray:
    d = np.sqrt(np.maximum(((A[:, None, :] - B[None, :, :]) ** 2).sum(-1), 0.0)) / length_scale
    s5 = math.sqrt(5.0) * d
    return (1 + s5 + 5.0 / 3.0 * d * d) * np.exp(-s5)


@dataclass
class GaussianProcess:
    """Zero-mean GP on standardised targets with unit signal variance."""

    length_scale: float
    X: np.ndarray
    y_mean: float
    y_std: float
    _chol: tuple = field(repr=False, default=None)
    _alpha: np.ndarray = field(repr=False, default=None)

    @classmethod
    def fit(cls, X, y, length_scales: Sequence[float] = LENGTH_SCALES) -> GaussianProcess:
        X = np.asarray(X, float)
        y = np.asarray(y, float)
        mu = float(y.mean())
        sd = float(y.std()) or 1.0
        z = (y - mu) / sd
        best = None
        for ls in length_scales:
            K = matern52(X, X, ls) + JITTER * np.eye(len(X))
            chol = cho_factor(K, lower=True)
            alpha = cho_solve(chol, z)
            # log marginal likelihood up to a constant
            lml = -0.5 * z @ alpha - np.sum(np.log(np.diag(chol[0])))
            if best is None or lml > best[0]:
                best = (lml, ls, chol, alpha)
        _, ls, chol, alpha = best
        return cls(ls, X, mu, sd, chol, alpha)

    def predict(self, Xs) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation on the original scale."""
        Ks = matern52(np.asarray(Xs, float), self.X, self.length_scale)
        mean = Ks @ self._alpha
        v = cho_solve(self._chol, Ks.T)
        var = np.maximum(1.0 - np.sum(Ks * v.T, axis=1), 0.0)
        return self.y_mean + self.y_std * mean, self.y_std * np.sqrt(var)


def expected_improvement(mean, std, best: float) -> np.ndarray:
    std = np.asarray(std, float)
    imp = np.asarray(mean, float) - best
    out = np.maximum(imp, 0.0)
    ok = std > 0
    z = imp[ok] / std[ok]
    out[ok] = imp[ok] * norm.cdf(z) + std[ok] * norm.pdf(z)
    return out


# --------------------------------------------------------------------------
# Optimiser


@dataclass(frozen=True)
class Trial:
    params: dict
    score: float
    fold_scores: tuple[float, ...] = ()


@dataclass
class TuneResult:
    history: list[Trial]

    @property
    def best_index(self) -> int:
        return int(np.argmax([t.score for t in self.history]))  # first maximum

    @property
    def best_params(self) -> dict:
        return self.history[self.best_index].params

    @property
    def best_objective(self) -> float:
        return self.history[self.best_index].score

    def running_best(self) -> np.ndarray:
        return np.maximum.accumulate([t.score for t in self.history])

    def to_dict(self) -> dict:
        return {
            "best_params": self.best_params,
            "best_objective": self.best_objective,
            "trials": [
                {"params": t.params, "fold_scores": list(t.fold_scores), "mean": t.score}
                for t in self.history
            ],
        }


N_CANDIDATES = 1024
LOCAL_SHARE = 0.5
LOCAL_SCALE = 0.05


def _key(space: SearchSpace, params: Mapping) -> tuple:
    return tuple(params[p.name] for p in space.params)


def _evaluate(objective, params):
    out = objective(params)
    if isinstance(out, tuple):
        score, folds = out
        return float(score), tuple(float(f) for f in folds)
    return float(out), ()


def bayes_optimize(
    space: SearchSpace,
    objective: Callable[[dict], float],
    budget: int,
    n_init: int = 10,
    seed: int = 0,
) -> TuneResult:
    """Maximise ``objective`` over ``space`` with ``budget`` evaluations.

    The first ``n_init`` points come from a scrambled Sobol sequence.  Each
    later point maximises expected improvement over ``N_CANDIDATES``
    candidates: half uniform in the box and half Gaussian perturbations of
    the incumbent.  Candidates are decoded (integers rounded) and any that
    repeat an evaluated parameter vector are discarded.  ``objective`` may
    return a score or ``(score, fold_scores)``.
    """
    if n_init < 2 or budget < n_init:
        raise BudgetTooSmall(f"need budget >= n_init >= 2 (got budget={budget}, n_init={n_init})")
    rng = np.random.default_rng(seed)
    sobol = qmc.Sobol(space.dim, scramble=True, seed=rng)
    m = max(1, math.ceil(math.log2(n_init)))
    design = sobol.random_base2(m)
    history: list[Trial] = []
    units: list[np.ndarray] = []
    seen: set = set()

    def run(u):
        params = space.decode(u)
        seen.add(_key(space, params))
        units.append(space.encode(params))
        score, folds = _evaluate(objective, params)
        history.append(Trial(params, score, folds))

    for u in design:
        if len(history) == n_init:
            break
        if _key(space, space.decode(u)) in seen:
            continue
        run(u)
    while len(history) < n_init:
        u = rng.random(space.dim)
        if _key(space, space.decode(u)) not in seen:
            run(u)

    while len(history) < budget:
        y = np.array([t.score for t in history])
        gp = GaussianProcess.fit(np.array(units), y)
        n_local = int(N_CANDIDATES * LOCAL_SHARE)
        incumbent = units[int(np.argmax(y))]
        cand = np.vstack([
            rng.random((N_CANDIDATES - n_local, space.dim)),
            np.clip(incumbent + LOCAL_SCALE * rng.standard_normal((n_local, space.dim)), 0, 1),
        ])
        decoded = [space.decode(u) for u in cand]
        keep, keys = [], set()
        for i, d in enumerate(decoded):
            key = _key(space, d)
            if key in seen or key in keys:
                continue
            keys.add(key)
            keep.append(i)
        if not keep:
            # Every candidate repeats history; fall back to fresh uniform draws.
            for _ in range(1000):
                u = rng.random(space.dim)
                if _key(space, space.decode(u)) not in seen:
                    break
            else:
                break
            run(u)
            continue
        snapped = np.array([space.encode(decoded[i]) for i in keep])
        mean, std = gp.predict(snapped)
        ei = expected_improvement(mean, std, float(y.max()))
        run(snapped[int(np.argmax(ei))])
    return TuneResult(history)


def random_search(space: SearchSpace, objective, budget: int, seed: int = 0) -> TuneResult:
    """Uniform random search baseline (duplicates allowed)."""
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(budget):
        params = space.decode(rng.random(space.dim))
        score, folds = _evaluate(objective, params)
        history.append(Trial(params, score, folds))
    return TuneResult(history)


def tune(family: str, data: EncodedMatrix, budget: int, seed: int = 0, k: int = 3,
         balance: str = "none", n_init: int = 10, space: SearchSpace | None = None,
         smote: imbalance.SmoteParams | None = None) -> TuneResult:
    """Bayesian search of ``family`` hyperparameters against the CV objective."""
    space = space or default_space(family)

    def objective(params):
        folds = cv_fold_scores(family, params, data, k, seed, balance, smote)
        return float(np.mean(folds)), folds

    return bayes_optimize(space, objective, budget=budget, n_init=min(n_init, budget), seed=seed)
