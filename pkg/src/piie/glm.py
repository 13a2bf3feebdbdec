"""Nuisance-model fitting: Gaussian linear and Bernoulli-logistic models.

Fits are maximum likelihood. The Gaussian error variance uses the ML
divisor n (not n-p); density ratios and the stacked sandwich treat sigma^2
as an ML nuisance parameter, so the convention must be fixed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit

from .data import Dataset, DesignMatrix, FormulaSpec, build_design

__all__ = [
    "DegenerateDensityError",
    "DegenerateOutcomeError",
    "FitError",
    "LinearFit",
    "LogisticFit",
    "MediatorModel",
    "SeparationWarning",
    "SingularDesignError",
    "fit_linear",
    "fit_logistic",
    "fit_mediator",
    "mediator_density",
    "score_contributions",
]

RANK_TOL = 1e-10  # pivot threshold relative to the largest, per-design
IRLS_TOL = 1e-10  # absolute deviance change declaring convergence
IRLS_MAX_ITER = 100
SEPARATION_LP = 30.0  # |linear predictor| beyond which separation is flagged


class FitError(ValueError):
    """Model fitting failed."""


class SingularDesignError(FitError):
    def __init__(self, column: str):
        super().__init__(f"design matrix is rank deficient at column {column!r}")
        self.column = column


class DegenerateOutcomeError(FitError):
    """Binary response is constant; the logistic MLE does not exist."""


class DegenerateDensityError(ValueError):
    """Gaussian mediator density requested with zero residual variance."""


class SeparationWarning(UserWarning):
    pass


def _as_design(X) -> tuple[np.ndarray, tuple[str, ...], FormulaSpec | None]:
    if isinstance(X, DesignMatrix):
        return X.X, X.term_names, X.spec
    X = np.asarray(X, dtype=float)
    return X, tuple(f"x{j}" for j in range(X.shape[1])), None


def _solve_least_squares(X: np.ndarray, y: np.ndarray, term_names) -> tuple[np.ndarray, np.ndarray]:
    """Pivoted-QR least squares; returns (coef, (X'X)^-1).

    Raises SingularDesignError naming the first offending column when a
    pivot falls below RANK_TOL times the largest.
    """
    q, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0:
        raise FitError("design matrix has no columns")
    bad = np.flatnonzero(diag <= RANK_TOL * diag[0])
    if bad.size:
        raise SingularDesignError(term_names[piv[bad[0]]])
    coef_p = scipy.linalg.solve_triangular(r, q.T @ y)
    rinv = scipy.linalg.solve_triangular(r, np.eye(r.shape[0]))
    xtx_inv_p = rinv @ rinv.T
    coef = np.empty_like(coef_p)
    coef[piv] = coef_p
    xtx_inv = np.empty_like(xtx_inv_p)
    xtx_inv[np.ix_(piv, piv)] = xtx_inv_p
    return coef, xtx_inv


# ---------------------------------------------------------------------------
# Linear model
# ---------------------------------------------------------------------------


@dataclass
class LinearFit:
    """OLS/Gaussian-ML fit: coefficients and ML residual variance (RSS/n)."""

    coef: np.ndarray
    sigma2: float
    term_names: tuple[str, ...]
    spec: FormulaSpec | None
    xtx_inv: np.ndarray

    def predict(self, X) -> np.ndarray:
        X = X.X if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
        return X @ self.coef


def fit_linear(X, y) -> LinearFit:
    """Least squares with ML variance; requires n > p and full column rank."""
    Xm, names, spec = _as_design(X)
    y = np.asarray(y, dtype=float)
    n, p = Xm.shape
    if y.shape != (n,):
        raise FitError(f"response has shape {y.shape}, expected ({n},)")
    if n <= p:
        raise FitError(f"need n > p to fit; n={n}, p={p}")
    coef, xtx_inv = _solve_least_squares(Xm, y, names)
    resid = y - Xm @ coef
    sigma2 = float(resid @ resid) / n
    return LinearFit(coef=coef, sigma2=sigma2, term_names=names, spec=spec, xtx_inv=xtx_inv)


# ---------------------------------------------------------------------------
# Logistic model
# ---------------------------------------------------------------------------


@dataclass
class LogisticFit:
    """Logistic MLE via IRLS with step-halving."""

    coef: np.ndarray
    term_names: tuple[str, ...]
    spec: FormulaSpec | None
    converged: bool
    iterations: int
    separation: bool

    def prob(self, X) -> np.ndarray:
        X = X.X if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
        return expit(X @ self.coef)


def _deviance(y: np.ndarray, mu: np.ndarray) -> float:
    mu = np.clip(mu, 1e-12, 1 - 1e-12)
    return -2.0 * float(y @ np.log(mu) + (1 - y) @ np.log1p(-mu))


def fit_logistic(X, y) -> LogisticFit:
    """IRLS to deviance change < 1e-10 or 100 iterations.

    A constant response is a fatal DegenerateOutcomeError; separation
    (|linear predictor| > 30 at convergence with nonzero score) is flagged
    on the fit and warned, not raised: misspecified propensity models are a
    supported use.
    """
    Xm, names, spec = _as_design(X)
    y = np.asarray(y, dtype=float)
    n, p = Xm.shape
    if y.shape != (n,):
        raise FitError(f"response has shape {y.shape}, expected ({n},)")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise FitError("logistic response must take values in {0, 1}")
    if y.min() == y.max():
        raise DegenerateOutcomeError(
            f"binary response is constant ({y[0]:g}); MLE does not exist"
        )
    if n <= p:
        raise FitError(f"need n > p to fit; n={n}, p={p}")

    coef = np.zeros(p)
    dev = _deviance(y, np.full(n, 0.5))
    converged = False
    it = 0
    for it in range(1, IRLS_MAX_ITER + 1):
        mu = expit(Xm @ coef)
        w = np.maximum(mu * (1 - mu), 1e-10)
        sw = np.sqrt(w)
        # weighted least-squares step on the working residual
        delta, _ = _solve_least_squares(Xm * sw[:, None], (y - mu) / sw, names)
        step = 1.0
        for _ in range(40):  # step-halving keeps the deviance non-increasing
            new_coef = coef + step * delta
            new_dev = _deviance(y, expit(Xm @ new_coef))
            if new_dev <= dev + 1e-12:
                break
            step /= 2.0
        coef = coef + step * delta
        if abs(dev - new_dev) < IRLS_TOL:
            dev = new_dev
            converged = True
            break
        dev = new_dev

    lp = Xm @ coef
    score = Xm.T @ (y - expit(lp))
    separation = bool(np.max(np.abs(lp)) > SEPARATION_LP and np.max(np.abs(score)) > 1e-8 * n)
    if separation:
        warnings.warn("possible separation in logistic fit", SeparationWarning, stacklevel=2)
    return LogisticFit(
        coef=coef,
        term_names=names,
        spec=spec,
        converged=converged,
        iterations=it,
        separation=separation,
    )


# ---------------------------------------------------------------------------
# Mediator model
# ---------------------------------------------------------------------------


@dataclass
class MediatorModel:
    """Conditional law of the mediator: gaussian-linear or bernoulli-logistic."""

    family: str  # "gaussian" | "bernoulli"
    fit: LinearFit | LogisticFit
    exposure: str  # exposure column name, for density evaluation at chosen a


def fit_mediator(data: Dataset, spec: FormulaSpec) -> MediatorModel:
    """Fit the mediator model, choosing the family from the observed support.

    A mediator whose observed values are all 0/1 gets a Bernoulli-logistic
    model; anything else gets a homoscedastic Gaussian linear model.
    """
    z = data.column(spec.response)
    design = build_design(spec, data)
    if np.all((z == 0.0) | (z == 1.0)):
        return MediatorModel("bernoulli", fit_logistic(design, z), data.roles.exposure)
    return MediatorModel("gaussian", fit_linear(design, z), data.roles.exposure)


def gaussian_density(z, mean, sigma2: float) -> np.ndarray:
    if sigma2 <= 0:
        raise DegenerateDensityError("gaussian mediator density with sigma2 <= 0")
    z = np.asarray(z, dtype=float)
    return np.exp(-((z - mean) ** 2) / (2.0 * sigma2)) / np.sqrt(2.0 * np.pi * sigma2)


def bernoulli_density(z, p) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.where(z == 1.0, p, 1.0 - p)


def mediator_density(model: MediatorModel, z: float, a: float, c: dict) -> float:
    """Density f(z | a, c) under the fitted mediator model.

    ``c`` maps covariate column names to values; the exposure value ``a`` is
    injected under the model's exposure column name.
    """
    row = dict(c)
    row[model.exposure] = a
    spec = model.fit.spec
    x = []
    if spec.intercept:
        x.append(1.0)
    for term in spec.terms:
        val = 1.0
        for name in term:
            val *= row[name]
        x.append(val)
    x = np.asarray(x)
    if model.family == "gaussian":
        return float(gaussian_density(z, float(x @ model.fit.coef), model.fit.sigma2))
    return float(bernoulli_density(z, float(expit(x @ model.fit.coef))))


# ---------------------------------------------------------------------------
# Per-observation scores
# ---------------------------------------------------------------------------


def score_contributions(fit, X, y) -> np.ndarray:
    """n x p matrix of per-observation estimating-function values.

    Linear: x_i (y_i - x_i'coef). Logistic: x_i (y_i - expit(x_i'coef)).
    Columns sum to ~0 at the fitted coefficients.
    """
    Xm, _, _ = _as_design(X)
    y = np.asarray(y, dtype=float)
    if Xm.shape[0] != y.shape[0]:
        raise FitError(f"X has {Xm.shape[0]} rows but y has {y.shape[0]}")
    if Xm.shape[1] != fit.coef.shape[0]:
        raise FitError(f"X has {Xm.shape[1]} columns but fit has {fit.coef.shape[0]} coefficients")
    if isinstance(fit, LogisticFit):
        resid = y - expit(Xm @ fit.coef)
    else:
        resid = y - Xm @ fit.coef
    return Xm * resid[:, None]
