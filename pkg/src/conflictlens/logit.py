"""Weighted logistic regression fitted by damped Newton (IRLS) with Wald inference."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import expit, log_expit

from .errors import DimensionMismatch, Separation, SingleClass, SingularInformation
from .events import EncodedMatrix


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FittedLogit:
    """Logistic fit; every per-term array starts with the intercept."""

    terms: tuple[str, ...]
    coefficients: np.ndarray
    covariance: np.ndarray
    log_likelihood: float
    null_log_likelihood: float
    n_iter: int = 0
    gradient_norm: float = 0.0
    converged: bool = True
    ridge: float = 0.0

    @property
    def feature_names(self) -> list[str]:
        return list(self.terms[1:])

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    @property
    def z_values(self) -> np.ndarray:
        return self.coefficients / self.std_errors

    @property
    def p_values(self) -> np.ndarray:
        return 2 * stats.norm.sf(np.abs(self.z_values))

    @property
    def odds_ratios(self) -> np.ndarray:
        return np.exp(self.coefficients)

    @property
    def mcfadden_r2(self) -> float:
        return 1.0 - self.log_likelihood / self.null_log_likelihood

    def margin(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != len(self.coefficients) - 1:
            raise DimensionMismatch(
                f"expected {len(self.coefficients) - 1} features, got {X.shape[1]}"
            )
        out = self.coefficients[0] + X @ self.coefficients[1:]
        return out[0] if single else out

    def predict_proba(self, X):
        return expit(self.margin(X))

    @classmethod
    def from_table(cls, rows: Sequence[dict]) -> FittedLogit:
        """Reconstruct a fit from published (term, coefficient, std_error) rows.

        Only the diagonal of the covariance is known; likelihoods are NaN
        unless given as ``log_likelihood`` / ``null_log_likelihood`` rows.
        """
        terms = tuple(r["term"] for r in rows)
        coef = np.array([r["coefficient"] for r in rows], float)
        se = np.array([r["std_error"] for r in rows], float)
        return cls(terms, coef, np.diag(se**2), math.nan, math.nan)


def predict_proba(model: FittedLogit, x):
    """Logistic probability ``1 / (1 + exp(-beta . x))`` for rows without the intercept column."""
    return model.predict_proba(x)


def _design(data: EncodedMatrix) -> np.ndarray:
    return np.hstack([np.ones((data.n_rows, 1)), data.values])


def log_likelihood(beta, X, y, w) -> float:
    eta = X @ beta
    return float(np.sum(w * (y * log_expit(eta) + (1 - y) * log_expit(-eta))))


def score(beta, X, y, w) -> np.ndarray:
    """Gradient of the weighted log-likelihood."""
    return X.T @ (w * (y - expit(X @ beta)))


def information(beta, X, w) -> np.ndarray:
    p = expit(X @ beta)
    return (X * (w * p * (1 - p))[:, None]).T @ X


def fit_logistic(
    data: EncodedMatrix,
    weights=None,
    ridge: float = 1e-8,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> FittedLogit:
    """Maximise the (optionally weighted, ridge-penalised) log-likelihood.

    Newton steps are halved until the penalised objective does not decrease.
    Iteration stops once the max-norm of the penalised gradient falls below
    ``tol``.  Reported standard errors come from the unpenalised information
    matrix at the optimum.  The intercept is never penalised.
    """
    if data.labels is None:
        raise ValueError("fit_logistic needs labelled data")
    y = data.labels.astype(float)
    w = data.row_weights if weights is None else np.asarray(weights, float)
    if not (np.any(y == 1) and np.any(y == 0)):
        raise SingleClass("logistic regression needs both classes present")
    X = _design(data)
    n, p = X.shape
    if n <= p:
        raise DimensionMismatch(f"need more rows ({n}) than parameters ({p})")
    penalty = np.full(p, ridge)
    penalty[0] = 0.0

    def objective(b):
        return log_likelihood(b, X, y, w) - 0.5 * np.sum(penalty * b * b)

    wy = np.sum(w * y) / np.sum(w)
    beta = np.zeros(p)
    beta[0] = math.log(wy / (1 - wy))
    current = objective(beta)
    converged = False
    grad_norm = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        grad = score(beta, X, y, w) - penalty * beta
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < tol:
            converged = True
            it -= 1
            break
        hess = information(beta, X, w) + np.diag(penalty)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise SingularInformation("information matrix is singular") from None
        t = 1.0
        while True:
            trial = beta + t * step
            value = objective(trial)
            if value >= current or t < 1e-10:
                break
            t *= 0.5
        if value < current:
            break
        beta, current = trial, value
        if ridge == 0 and np.linalg.norm(beta) > 30:
            grad_norm = float(np.max(np.abs(score(beta, X, y, w))))
            if grad_norm >= tol:
                raise Separation("coefficients diverge; the classes look separable")
    else:
        grad = score(beta, X, y, w) - penalty * beta
        grad_norm = float(np.max(np.abs(grad)))
        converged = grad_norm < tol

    if not converged:
        warnings.warn(
            f"logistic fit stopped after {it} iterations with gradient norm {grad_norm:.3g}",
            ConvergenceWarning,
            stacklevel=2,
        )

    info = information(beta, X, w)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularInformation("information matrix is singular") from None
    if not np.all(np.isfinite(cov)) or np.any(np.diag(cov) < 0) or np.linalg.cond(info) > 1e14:
        raise SingularInformation("information matrix is numerically singular")
    cov = 0.5 * (cov + cov.T)

    null_ll = log_likelihood(np.array([math.log(wy / (1 - wy))]), X[:, :1], y, w)
    return FittedLogit(
        terms=("intercept", *data.names),
        coefficients=beta,
        covariance=cov,
        log_likelihood=log_likelihood(beta, X, y, w),
        null_log_likelihood=null_ll,
        n_iter=it,
        gradient_norm=grad_norm,
        converged=converged,
        ridge=ridge,
    )


# --------------------------------------------------------------------------
# Reporting


def display_name(term: str) -> str:
    if "." in term:
        source, level = term.split(".", 1)
        return f"{source} [{level}]"
    return term


@dataclass(frozen=True)
class TermRow:
    term: str
    coefficient: float
    std_error: float
    odds_ratio: float
    p_value: float

    @property
    def label(self) -> str:
        return display_name(self.term)


def term_rows(model: FittedLogit) -> list[TermRow]:
    se, orr, pv = model.std_errors, model.odds_ratios, model.p_values
    return [
        TermRow(t, float(model.coefficients[i]), float(se[i]), float(orr[i]), float(pv[i]))
        for i, t in enumerate(model.terms)
    ]


def significant_terms(model: FittedLogit, alpha: float = 0.05, include_intercept: bool = False) -> list[TermRow]:
    """Covariate rows whose two-sided Wald p-value is below ``alpha``."""
    return [
        r for r in term_rows(model)
        if r.p_value < alpha and (include_intercept or r.term != "intercept")
    ]


def report_dict(model: FittedLogit, alpha: float | None = None) -> dict:
    rows = term_rows(model) if alpha is None else [term_rows(model)[0], *significant_terms(model, alpha)]
    return {
        "terms": [
            {
                "variable": r.term,
                "coefficient": r.coefficient,
                "std_error": r.std_error,
                "odds_ratio": r.odds_ratio,
                "p_value": r.p_value,
            }
            for r in rows
        ],
        "mcfadden_r2": model.mcfadden_r2,
        "log_likelihood": model.log_likelihood,
        "null_log_likelihood": model.null_log_likelihood,
        "converged": model.converged,
        "iterations": model.n_iter,
        "gradient_norm": model.gradient_norm,
        "scale": "per-unit odds ratios; coefficients on the log-odds scale",
    }


def report_text(model: FittedLogit, alpha: float | None = None) -> str:
    rows = term_rows(model) if alpha is None else [term_rows(model)[0], *significant_terms(model, alpha)]
    header = ("Variable", "Coefficient", "Std. error", "Odds ratio", "p>|z|")
    body = [
        (r.label, f"{r.coefficient:.3f}", f"{r.std_error:.3f}", f"{r.odds_ratio:.3f}", f"{r.p_value:.3f}")
        for r in rows
    ]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(header)]
    line = lambda cells: "  ".join(c.ljust(widths[i]) for i, c in enumerate(cells)).rstrip()
    rule = "-" * len(line(header))
    out = [rule, line(header), rule, *(line(b) for b in body), rule]
    out.append(f"McFadden R2  {model.mcfadden_r2:.3f}")
    return "\n".join(out) + "\n"


def to_json_dict(model: FittedLogit) -> dict:
    return {
        "terms": list(model.terms),
        "coefficients": model.coefficients.tolist(),
        "covariance": model.covariance.tolist(),
        "log_likelihood": model.log_likelihood,
        "null_log_likelihood": model.null_log_likelihood,
        "n_iter": model.n_iter,
        "gradient_norm": model.gradient_norm,
        "converged": model.converged,
        "ridge": model.ridge,
    }


def from_json_dict(data: dict) -> FittedLogit:
    return FittedLogit(
        terms=tuple(data["terms"]),
        coefficients=np.array(data["coefficients"], float),
        covariance=np.array(data["covariance"], float),
        log_likelihood=data["log_likelihood"],
        null_log_likelihood=data["null_log_likelihood"],
        n_iter=data["n_iter"],
        gradient_norm=data["gradient_norm"],
        converged=data["converged"],
        ridge=data["ridge"],
    )
