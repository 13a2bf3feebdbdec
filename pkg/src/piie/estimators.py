"""Estimators of the mediated-counterfactual mean Psi and the PIIE.

Psi = sum_{z,c} Pr(z | a*, c) sum_a E(Y | a, z, c) Pr(a | c) Pr(c) is the
mean outcome had the mediator followed its law under exposure a* while
exposure kept its natural value; PIIE(a*) = E[Y] - Psi.

Five routes are implemented: plug-in ML with a parametric exposure model
(mle), plug-in ML with the joint (A, C) law left empirical (mle_alt), a
mediator-density-ratio estimator (sp1), an inverse-probability-weighted
outcome-regression estimator (sp2), and the doubly robust estimator built
from the efficient influence function (dr). A closed-form evaluation of
the linear-model plug-in (closed_form) is also provided.

Mediator integrals are resolved analytically: a two-point sum for a binary
mediator, and mean substitution for a Gaussian mediator with an outcome
model linear in the mediator (the only supported shape in that case).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.special import expit

from .data import DataError, Dataset, FormulaSpec, build_design
from .glm import (
    LinearFit,
    LogisticFit,
    MediatorModel,
    bernoulli_density,
    fit_linear,
    fit_logistic,
    fit_mediator,
    gaussian_density,
)

__all__ = [
    "EstimationConfig",
    "NuisanceSet",
    "PiieResult",
    "PositivityError",
    "PsiEstimate",
    "UnsupportedModelError",
    "closed_form_piie_variance",
    "closed_form_psi",
    "eif_contributions",
    "estimate_piie",
    "estimate_psi",
    "estimate_psi_dr",
    "estimate_psi_mle",
    "estimate_psi_mle_alt",
    "estimate_psi_sp1",
    "estimate_psi_sp2",
    "fit_nuisances",
    "integrate_over_mediator",
    "psi_from_nuisances",
]

METHODS = ("mle", "mle_alt", "sp1", "sp2", "dr", "closed_form")

_NEEDS = {
    "mle": ("outcome", "mediator", "propensity"),
    "mle_alt": ("outcome", "mediator"),
    "sp1": ("mediator",),
    "sp2": ("outcome", "propensity"),
    "dr": ("outcome", "mediator", "propensity"),
    "closed_form": ("outcome", "mediator"),
}

DENSITY_FLOOR = 1e-300  # mediator density below this is a positivity failure


class PositivityError(ValueError):
    """A fitted density/probability in a denominator is (near) zero."""


class UnsupportedModelError(ValueError):
    """Model shape outside what the analytic mediator integral supports."""


@dataclass(frozen=True)
class EstimationConfig:
    """Which models to fit and how to evaluate the functional.

    ``propensity_floor`` bounds fitted exposure probabilities appearing in
    denominators: below it, estimation errors out, or clamps and counts
    when ``truncate_propensity`` is set.
    """

    outcome_formula: FormulaSpec | None = None
    mediator_formula: FormulaSpec | None = None
    propensity_formula: FormulaSpec | None = None
    a_star: int = 0
    method: str = "dr"
    propensity_floor: float = 1e-8
    truncate_propensity: bool = False

    def validate(self) -> None:
        if self.a_star not in (0, 1):
            raise ValueError(f"a_star must be 0 or 1, got {self.a_star!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        for part in _NEEDS[self.method]:
            if getattr(self, f"{part}_formula") is None:
                raise ValueError(f"method {self.method!r} requires {part}_formula")


@dataclass
class NuisanceSet:
    outcome: LinearFit | None = None
    mediator: MediatorModel | None = None
    propensity: LogisticFit | None = None


@dataclass
class PsiEstimate:
    psi: float
    contributions: np.ndarray  # per-observation summands; mean equals psi
    method: str
    nuisance: NuisanceSet
    n_clamped: int = 0


@dataclass
class PiieResult:
    ey: float
    psi: float
    piie: float
    se: float
    ci: tuple[float, float]
    level: float
    method: str
    variance_method: str
    n: int
    n_dropped: int = 0
    psi_variance: float = float("nan")
    warnings: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Nuisance fitting
# ---------------------------------------------------------------------------


def fit_nuisances(data: Dataset, config: EstimationConfig) -> NuisanceSet:
    """Fit exactly the models the configured method needs."""
    config.validate()
    needs = _NEEDS[config.method]
    data.require_estimable(need_exposure_variation="propensity" in needs)

    nuis = NuisanceSet()
    if "outcome" in needs:
        spec = config.outcome_formula
        if spec.response != data.roles.outcome:
            raise DataError(
                f"outcome formula response {spec.response!r} is not the outcome column "
                f"{data.roles.outcome!r}"
            )
        nuis.outcome = fit_linear(build_design(spec, data), data.y)
    if "mediator" in needs:
        spec = config.mediator_formula
        if spec.response != data.roles.mediator:
            raise DataError(
                f"mediator formula response {spec.response!r} is not the mediator column "
                f"{data.roles.mediator!r}"
            )
        nuis.mediator = fit_mediator(data, spec)
    if "propensity" in needs:
        spec = config.propensity_formula
        if spec.response != data.roles.exposure:
            raise DataError(
                f"propensity formula response {spec.response!r} is not the exposure column "
                f"{data.roles.exposure!r}"
            )
        nuis.propensity = fit_logistic(build_design(spec, data), data.a)
    return nuis


# ---------------------------------------------------------------------------
# Evaluation engine
# ---------------------------------------------------------------------------


class PsiEngine:
    """Precomputed designs for evaluating every summand as a pure function
    of the model parameters (needed by the stacked sandwich, which perturbs
    parameters without refitting).

    The outcome prediction at exposure tag ``t`` and mediator value ``z``
    decomposes as X0[t] @ theta[idx0] + z * (X1[t] @ theta[idx1]); X1 holds
    the partner columns of mediator-bearing terms, so predictions stay
    affine in z and mediator integrals reduce to mean substitution.
    """

    _TAGS = (0, 1, "obs")

    def __init__(
        self,
        data: Dataset,
        nuisance: NuisanceSet,
        a_star: int,
        propensity_floor: float = 1e-8,
        truncate_propensity: bool = False,
    ):
        self.data = data
        self.nuisance = nuisance
        self.a_star = int(a_star)
        self.floor = propensity_floor
        self.truncate = truncate_propensity
        self.n = data.n
        self.y = data.y
        self.a = data.a
        self.z = data.z
        self.indicator = (data.a == a_star).astype(float)
        self.n_clamped = 0

        exposure = data.roles.exposure
        mediator_col = data.roles.mediator

        if nuisance.outcome is not None:
            spec = nuisance.outcome.spec
            if spec is None:
                raise UnsupportedModelError("outcome fit lacks a formula; cannot evaluate")
            gaussian_z = nuisance.mediator is None or nuisance.mediator.family == "gaussian"
            idx0, idx1, partners = [], [], []
            pos = 0
            if spec.intercept:
                idx0.append(pos)
                pos += 1
            base_terms = []
            for term in spec.terms:
                z_power = term.count(mediator_col)
                if z_power == 0:
                    idx0.append(pos)
                    base_terms.append(term)
                else:
                    if z_power > 1 and gaussian_z:
                        raise UnsupportedModelError(
                            f"outcome model term {':'.join(term)!r} is non-linear in "
                            "the mediator; the Gaussian-mediator integral requires an "
                            "outcome linear in the mediator"
                        )
                    # on a binary mediator z^k == z, so the partner is the
                    # product of the remaining columns either way
                    idx1.append(pos)
                    partners.append(tuple(name for name in term if name != mediator_col))
                pos += 1
            self._idx0 = np.array(idx0, dtype=int)
            self._idx1 = np.array(idx1, dtype=int)

            def col(name, tag):
                if name == exposure:
                    if tag == "obs":
                        return self.a
                    return np.full(self.n, float(tag))
                return data.column(name)

            def product_column(names, tag):
                out = np.ones(self.n)
                for name in names:
                    out = out * col(name, tag)
                return out

            self._X0 = {}
            self._X1 = {}
            for tag in self._TAGS:
                cols0 = []
                if spec.intercept:
                    cols0.append(np.ones(self.n))
                cols0.extend(product_column(term, tag) for term in base_terms)
                cols1 = [product_column(p, tag) for p in partners]
                self._X0[tag] = np.column_stack(cols0) if cols0 else np.empty((self.n, 0))
                self._X1[tag] = np.column_stack(cols1) if cols1 else np.empty((self.n, 0))

        if nuisance.mediator is not None:
            spec = nuisance.mediator.fit.spec
            if spec is None:
                raise UnsupportedModelError("mediator fit lacks a formula; cannot evaluate")
            self._Xz = {
                "star": build_design(spec, data.with_columns({exposure: float(a_star)})).X,
                "obs": build_design(spec, data).X,
            }

        if nuisance.propensity is not None:
            self._Xa = build_design(nuisance.propensity.spec, data).X

    # -- parameter defaults -------------------------------------------------

    def fitted_params(self) -> dict:
        out = {}
        if self.nuisance.outcome is not None:
            out["theta"] = self.nuisance.outcome.coef
        if self.nuisance.mediator is not None:
            out["beta"] = self.nuisance.mediator.fit.coef
            if self.nuisance.mediator.family == "gaussian":
                out["sigma2_z"] = self.nuisance.mediator.fit.sigma2
        if self.nuisance.propensity is not None:
            out["alpha"] = self.nuisance.propensity.coef
        return out

    # -- building blocks ----------------------------------------------------

    def outcome_pred(self, tag, z, theta) -> np.ndarray:
        pred = self._X0[tag] @ theta[self._idx0]
        if self._idx1.size:
            pred = pred + np.asarray(z) * (self._X1[tag] @ theta[self._idx1])
        return pred

    def mediator_location(self, cond, beta) -> np.ndarray:
        """Gaussian mean or Bernoulli success probability at a_cond."""
        lp = self._Xz[cond] @ beta
        return lp if self.nuisance.mediator.family == "gaussian" else expit(lp)

    def iom(self, tag, cond, theta, beta) -> np.ndarray:
        """sum_z E(Y | a_eval=tag, z, C) f(z | a_cond=cond, C)."""
        loc = self.mediator_location(cond, beta)
        if self.nuisance.mediator.family == "gaussian":
            return self.outcome_pred(tag, loc, theta)
        return loc * self.outcome_pred(tag, 1.0, theta) + (1.0 - loc) * self.outcome_pred(
            tag, 0.0, theta
        )

    def density_ratio(self, beta, sigma2_z=None) -> np.ndarray:
        """f(Z_i | a*, C_i) / f(Z_i | A_i, C_i) under the mediator model."""
        if self.nuisance.mediator.family == "gaussian":
            num = gaussian_density(self.z, self._Xz["star"] @ beta, sigma2_z)
            den = gaussian_density(self.z, self._Xz["obs"] @ beta, sigma2_z)
        else:
            num = bernoulli_density(self.z, expit(self._Xz["star"] @ beta))
            den = bernoulli_density(self.z, expit(self._Xz["obs"] @ beta))
        if np.any(den < DENSITY_FLOOR):
            raise PositivityError(
                "fitted mediator density at an observed value is below "
                f"{DENSITY_FLOOR:g}; the density-ratio weight is unusable"
            )
        return num / den

    def exposure_probs(self, alpha) -> tuple[np.ndarray, np.ndarray]:
        pi1 = expit(self._Xa @ alpha)
        return pi1, 1.0 - pi1

    def astar_weight(self, alpha) -> np.ndarray:
        """I(A_i = a*) / f(a* | C_i), applying the floor policy."""
        pi1, pi0 = self.exposure_probs(alpha)
        f_star = pi1 if self.a_star == 1 else pi0
        low = f_star < self.floor
        if np.any(low):
            if not self.truncate:
                raise PositivityError(
                    f"fitted propensity f(a*|C) below floor {self.floor:g} "
                    f"for {int(low.sum())} observation(s)"
                )
            self.n_clamped = int(low.sum())
            f_star = np.maximum(f_star, self.floor)
        return self.indicator / f_star

    # -- summands -----------------------------------------------------------

    def summands(self, method, theta=None, beta=None, sigma2_z=None, alpha=None) -> np.ndarray:
        """Per-observation summands whose sample mean is the Psi estimate."""
        fitted = self.fitted_params()
        theta = fitted.get("theta") if theta is None else np.asarray(theta, dtype=float)
        beta = fitted.get("beta") if beta is None else np.asarray(beta, dtype=float)
        sigma2_z = fitted.get("sigma2_z") if sigma2_z is None else float(sigma2_z)
        alpha = fitted.get("alpha") if alpha is None else np.asarray(alpha, dtype=float)

        if method in ("mle_alt", "closed_form"):
            return self.iom("obs", "star", theta, beta)
        if method == "mle":
            pi1, pi0 = self.exposure_probs(alpha)
            return pi1 * self.iom(1, "star", theta, beta) + pi0 * self.iom(0, "star", theta, beta)
        if method == "sp1":
            return self.y * self.density_ratio(beta, sigma2_z)
        if method == "sp2":
            pi1, pi0 = self.exposure_probs(alpha)
            inner = pi1 * self.outcome_pred(1, self.z, theta) + pi0 * self.outcome_pred(
                0, self.z, theta
            )
            return self.astar_weight(alpha) * inner
        if method == "dr":
            ratio = self.density_ratio(beta, sigma2_z)
            term1 = (self.y - self.outcome_pred("obs", self.z, theta)) * ratio
            pi1, pi0 = self.exposure_probs(alpha)
            inner = pi1 * self.outcome_pred(1, self.z, theta) + pi0 * self.outcome_pred(
                0, self.z, theta
            )
            marginal = pi1 * self.iom(1, "obs", theta, beta) + pi0 * self.iom(0, "obs", theta, beta)
            term2 = self.astar_weight(alpha) * (inner - marginal)
            term3 = self.iom("obs", "star", theta, beta)
            return term1 + term2 + term3
        raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Public estimation operations
# ---------------------------------------------------------------------------


def psi_from_nuisances(
    data: Dataset,
    nuisance: NuisanceSet,
    method: str,
    a_star: int = 0,
    propensity_floor: float = 1e-8,
    truncate_propensity: bool = False,
) -> PsiEstimate:
    """Evaluate one Psi estimator from already-fitted nuisance models."""
    engine = PsiEngine(data, nuisance, a_star, propensity_floor, truncate_propensity)
    contributions = engine.summands(method)
    return PsiEstimate(
        psi=float(contributions.mean()),
        contributions=contributions,
        method=method,
        nuisance=nuisance,
        n_clamped=engine.n_clamped,
    )


def estimate_psi(data: Dataset, config: EstimationConfig, method: str | None = None) -> PsiEstimate:
    cfg = config if method is None else replace(config, method=method)
    nuisance = fit_nuisances(data, cfg)
    if cfg.method == "closed_form":
        return _closed_form_estimate(data, nuisance, cfg)
    return psi_from_nuisances(
        data, nuisance, cfg.method, cfg.a_star, cfg.propensity_floor, cfg.truncate_propensity
    )


def estimate_psi_mle(data, config):
    return estimate_psi(data, config, "mle")


def estimate_psi_mle_alt(data, config):
    return estimate_psi(data, config, "mle_alt")


def estimate_psi_sp1(data, config):
    return estimate_psi(data, config, "sp1")


def estimate_psi_sp2(data, config):
    return estimate_psi(data, config, "sp2")


def estimate_psi_dr(data, config):
    return estimate_psi(data, config, "dr")


def eif_contributions(
    nuisance: NuisanceSet,
    data: Dataset,
    a_star: int,
    psi_ref: float,
    propensity_floor: float = 1e-8,
    truncate_propensity: bool = False,
) -> np.ndarray:
    """Efficient-influence-function values at the fitted nuisances.

    Three data terms (residual x density ratio; weighted outcome-regression
    contrast; mediator-shifted prediction) minus ``psi_ref``. Their mean is
    exactly zero when ``psi_ref`` is the doubly robust estimate.
    """
    engine = PsiEngine(data, nuisance, a_star, propensity_floor, truncate_propensity)
    return engine.summands("dr") - psi_ref


def integrate_over_mediator(
    outcome: LinearFit,
    mediator: MediatorModel,
    a_eval: float,
    a_cond: float,
    c: Mapping[str, float],
) -> float:
    """sum_z E(Y | a_eval, z, c) f(z | a_cond, c) for one covariate row.

    Binary mediator: explicit two-point sum. Gaussian mediator: requires the
    outcome model linear in the mediator, and substitutes the conditional
    mean.
    """
    if outcome.spec is None or mediator.fit.spec is None:
        raise UnsupportedModelError("fits must carry formulas to evaluate the integral")
    mediator_col = mediator.fit.spec.response
    exposure = mediator.exposure

    def row_value(spec, coef, row):
        x = [1.0] if spec.intercept else []
        for term in spec.terms:
            val = 1.0
            for name in term:
                val *= row[name]
            x.append(val)
        return float(np.asarray(x) @ coef)

    def outcome_at(z):
        row = dict(c)
        row[exposure] = a_eval
        row[mediator_col] = z
        return row_value(outcome.spec, outcome.coef, row)

    med_row = dict(c)
    med_row[exposure] = a_cond
    lp = row_value(mediator.fit.spec, mediator.fit.coef, med_row)
    if mediator.family == "bernoulli":
        p = float(expit(lp))
        return p * outcome_at(1.0) + (1.0 - p) * outcome_at(0.0)
    for term in outcome.spec.terms:
        if term.count(mediator_col) > 1:
            raise UnsupportedModelError(
                f"outcome model term {':'.join(term)!r} is non-linear in the mediator"
            )
    return outcome_at(lp)


# ---------------------------------------------------------------------------
# Closed form (linear outcome + Gaussian-linear mediator)
# ---------------------------------------------------------------------------


def _closed_form_structure(outcome: LinearFit, mediator: MediatorModel, exposure, mediator_col):
    """Map fitted coefficients onto the canonical closed-form layout.

    Outcome: intercept + a + z + a:z + covariate-only terms. Mediator:
    intercept + a + covariate-only terms. Any exposure x covariate or
    mediator x covariate term falls outside the closed form.
    """
    if mediator.family != "gaussian":
        raise UnsupportedModelError("closed form requires a Gaussian linear mediator model")
    o_spec, m_spec = outcome.spec, mediator.fit.spec
    if o_spec is None or m_spec is None or not o_spec.intercept or not m_spec.intercept:
        raise UnsupportedModelError("closed form requires intercepted formula-based fits")

    theta = {"intercept": outcome.coef[0]}
    theta_c = {}
    for pos, term in enumerate(o_spec.terms, start=1):
        if term == (exposure,):
            theta["a"] = outcome.coef[pos]
        elif term == (mediator_col,):
            theta["z"] = outcome.coef[pos]
        elif term == tuple(sorted((exposure, mediator_col))):
            theta["a:z"] = outcome.coef[pos]
        elif exposure in term or mediator_col in term:
            raise UnsupportedModelError(
                f"outcome term {':'.join(term)!r} is outside the closed-form shape"
            )
        else:
            theta_c[term] = outcome.coef[pos]
    beta = {"intercept": mediator.fit.coef[0]}
    beta_c = {}
    for pos, term in enumerate(m_spec.terms, start=1):
        if term == (exposure,):
            beta["a"] = mediator.fit.coef[pos]
        elif exposure in term or mediator_col in term:
            raise UnsupportedModelError(
                f"mediator term {':'.join(term)!r} is outside the closed-form shape"
            )
        else:
            beta_c[term] = mediator.fit.coef[pos]
    return theta, theta_c, beta, beta_c


def closed_form_psi(theta: Mapping, beta: Mapping, a_star: int, moments: Mapping) -> float:
    """Closed-form Psi for the canonical linear shapes.

    ``theta`` maps {"intercept", "a", "z", "a:z"} plus covariate-term keys;
    ``beta`` maps {"intercept", "a"} plus covariate-term keys. ``moments``
    supplies "a" -> E[A], "c" -> {term: E[term]}, "ac" -> {term: E[A*term]}.
    """
    t0 = theta.get("intercept", 0.0)
    t1 = theta.get("a", 0.0)
    t2 = theta.get("z", 0.0)
    t3 = theta.get("a:z", 0.0)
    b0 = beta.get("intercept", 0.0)
    b1 = beta.get("a", 0.0)
    e_a = moments["a"]
    e_c = moments.get("c", {})
    e_ac = moments.get("ac", {})
    reserved = {"intercept", "a", "z", "a:z"}

    psi = t0 + t2 * b0 + t2 * b1 * a_star + (t1 + t3 * b0 + t3 * b1 * a_star) * e_a
    for term, t4k in theta.items():
        if term not in reserved:
            psi += t4k * e_c[term]
    for term, b2j in beta.items():
        if term not in reserved:
            psi += t2 * b2j * e_c[term] + t3 * b2j * e_ac[term]
    return float(psi)


def _closed_form_estimate(data: Dataset, nuisance: NuisanceSet, config: EstimationConfig):
    exposure, mediator_col = data.roles.exposure, data.roles.mediator
    theta, theta_c, beta, beta_c = _closed_form_structure(
        nuisance.outcome, nuisance.mediator, exposure, mediator_col
    )

    def term_column(term):
        col = data.column(term[0])
        return col * data.column(term[1]) if len(term) == 2 else col

    e_c, e_ac = {}, {}
    for term in set(theta_c) | set(beta_c):
        col = term_column(term)
        e_c[term] = float(col.mean())
        e_ac[term] = float((data.a * col).mean())
    psi = closed_form_psi(
        {**theta, **theta_c},
        {**beta, **beta_c},
        config.a_star,
        {"a": float(data.a.mean()), "c": e_c, "ac": e_ac},
    )
    # identical algebra to the empirical-(A,C) plug-in, so those summands
    # serve as the per-observation contributions
    engine = PsiEngine(data, nuisance, config.a_star)
    contributions = engine.summands("mle_alt")
    return PsiEstimate(psi=psi, contributions=contributions, method="closed_form", nuisance=nuisance)


def closed_form_piie_variance(theta2, theta3, beta1, param_cov, a_moments: Mapping) -> float:
    """Delta-method variance of the closed-form PIIE at a* = 0.

    ``param_cov`` is the 3x3 covariance of the estimates (beta1, theta2,
    theta3); ``a_moments`` supplies the exposure-moment estimates and the
    variances/covariance *of the sample means*: keys mean_a, mean_a2,
    var_mean_a, var_mean_a2, cov_mean_a_a2 (for binary exposure the three
    second-moment entries coincide at S^2_A / n).
    """
    param_cov = np.asarray(param_cov, dtype=float)
    if param_cov.shape != (3, 3):
        raise ValueError("param_cov must be the 3x3 covariance of (beta1, theta2, theta3)")
    ea = a_moments["mean_a"]
    ea2 = a_moments["mean_a2"]
    var_a = a_moments["var_mean_a"]
    var_a2 = a_moments["var_mean_a2"]
    cov_a = a_moments["cov_mean_a_a2"]
    v_b1, v_t2, v_t3 = param_cov[0, 0], param_cov[1, 1], param_cov[2, 2]
    c_t23 = param_cov[1, 2]

    var = (
        beta1 * theta2 * (beta1 * theta3 * cov_a + beta1 * theta2 * var_a)
        + beta1 * theta3 * (var_a2 * beta1 * theta3 + beta1 * theta2 * cov_a)
        + (ea * theta2 + ea2 * theta3) ** 2 * v_b1
        + ea * beta1 * (ea * beta1 * v_t2 + ea2 * beta1 * c_t23)
        + ea2 * beta1 * (ea * beta1 * c_t23 + ea2 * beta1 * v_t3)
    )
    # full delta method: the display assumes the mediator-model block is
    # independent of the outcome-model block, i.e. zero (beta1, theta.)
    # covariances; honoring supplied off-diagonals reduces to the display
    # when they are zero
    grad_b1 = ea * theta2 + ea2 * theta3
    var += 2 * grad_b1 * (ea * beta1 * param_cov[0, 1] + ea2 * beta1 * param_cov[0, 2])
    return float(var)


def closed_form_variance_from_fits(data: Dataset, nuisance: NuisanceSet, a_star: int) -> float:
    """Assemble the closed-form PIIE variance from fitted models and data."""
    if a_star != 0:
        raise UnsupportedModelError("the closed-form variance is derived for a_star = 0")
    exposure, mediator_col = data.roles.exposure, data.roles.mediator
    _closed_form_structure(nuisance.outcome, nuisance.mediator, exposure, mediator_col)

    def coef_index(fit, term):
        try:
            return fit.term_names.index(":".join(term))
        except ValueError:
            return None

    out = nuisance.outcome
    med = nuisance.mediator.fit
    i_b1 = coef_index(med, (exposure,))
    i_t2 = coef_index(out, (mediator_col,))
    i_t3 = coef_index(out, tuple(sorted((exposure, mediator_col))))
    beta1 = med.coef[i_b1] if i_b1 is not None else 0.0
    theta2 = out.coef[i_t2] if i_t2 is not None else 0.0
    theta3 = out.coef[i_t3] if i_t3 is not None else 0.0

    cov = np.zeros((3, 3))
    if i_b1 is not None:
        cov[0, 0] = med.sigma2 * med.xtx_inv[i_b1, i_b1]
    o_cov = out.sigma2 * out.xtx_inv
    for r, i in ((1, i_t2), (2, i_t3)):
        for s, j in ((1, i_t2), (2, i_t3)):
            if i is not None and j is not None:
                cov[r, s] = o_cov[i, j]

    a = data.a
    n = data.n
    s2 = float(a.var(ddof=1)) / n  # binary A: Var(A)=Var(A^2)=Cov(A,A^2)
    moments = {
        "mean_a": float(a.mean()),
        "mean_a2": float(a.mean()),
        "var_mean_a": s2,
        "var_mean_a2": s2,
        "cov_mean_a_a2": s2,
    }
    return closed_form_piie_variance(theta2, theta3, beta1, cov, moments)


# ---------------------------------------------------------------------------
# PIIE entry point
# ---------------------------------------------------------------------------


def estimate_piie(
    data: Dataset,
    config: EstimationConfig,
    variance_method: str = "sandwich",
    level: float = 0.95,
    bootstrap_reps: int = 500,
    seed: int | None = None,
    threads: int = 1,
) -> PiieResult:
    """Point estimate and Wald interval for PIIE(a*) = E[Y] - Psi.

    ``variance_method`` is one of "sandwich" (stacked M-estimation),
    "bootstrap" (row resampling with full refits), or "closed_form"
    (available for the closed_form/mle_alt linear shapes at a* = 0).
    """
    from . import inference  # local import; inference builds on this module

    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level!r}")
    psi_est = estimate_psi(data, config)
    ey = float(data.y.mean())
    piie = ey - psi_est.psi
    warnings_out: list[str] = []
    if psi_est.n_clamped:
        warnings_out.append(f"propensity truncated at floor for {psi_est.n_clamped} observation(s)")

    psi_variance = float("nan")
    if variance_method == "sandwich":
        system = inference.stacked_system(data, psi_est, config)
        report = inference.sandwich_variance(system)
        variance = report.piie_variance
        psi_variance = report.psi_variance
    elif variance_method == "bootstrap":
        report = inference.bootstrap_variance(
            data, config, bootstrap_reps, seed=seed, threads=threads
        )
        variance = report.piie_variance
        psi_variance = report.psi_variance
        if report.n_failed:
            warnings_out.append(f"{report.n_failed} bootstrap replicate(s) failed and were skipped")
    elif variance_method == "closed_form":
        if config.method not in ("closed_form", "mle_alt"):
            raise UnsupportedModelError(
                "closed-form variance applies to the closed_form/mle_alt linear shapes"
            )
        variance = closed_form_variance_from_fits(data, psi_est.nuisance, config.a_star)
    else:
        raise ValueError(f"unknown variance method {variance_method!r}")

    ci = inference.wald_ci(piie, variance, level)
    return PiieResult(
        ey=ey,
        psi=psi_est.psi,
        piie=piie,
        se=float(np.sqrt(max(variance, 0.0))),
        ci=ci,
        level=level,
        method=config.method,
        variance_method=variance_method,
        n=data.n,
        n_dropped=data.n_dropped,
        psi_variance=psi_variance,
        warnings=tuple(warnings_out),
    )
