"""Model fitting: least squares, IRLS logistic, mediator densities, scores."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import expit

import piie
from piie.data import Roles, Dataset, build_design, parse_formula
from piie.glm import (
    DegenerateDensityError,
    DegenerateOutcomeError,
    MediatorModel,
    SeparationWarning,
    SingularDesignError,
    fit_linear,
    fit_logistic,
    fit_mediator,
    gaussian_density,
    mediator_density,
    score_contributions,
)

RNG = np.random.default_rng(20240 + 6)


# ---------------------------------------------------------------------------
# fit_linear
# ---------------------------------------------------------------------------


def test_linear_intercept_only_mean_and_ml_variance():
    fit = fit_linear(np.ones((4, 1)), np.array([1.0, 2.0, 3.0, 4.0]))
    assert fit.coef == pytest.approx([2.5])
    assert fit.sigma2 == pytest.approx(1.25)  # ML divisor n, not n-1


def test_linear_exact_fit_zero_variance():
    x = np.column_stack([np.ones(5), np.arange(5.0)])
    y = 2.0 + 3.0 * np.arange(5.0)
    fit = fit_linear(x, y)
    assert fit.sigma2 == pytest.approx(0.0, abs=1e-24)
    assert np.allclose(fit.predict(x), y)


def test_linear_duplicate_column_is_singular():
    col = RNG.normal(size=10)
    x = np.column_stack([np.ones(10), col, col])
    with pytest.raises(SingularDesignError, match="x[12]"):
        fit_linear(x, RNG.normal(size=10))


def test_linear_matches_independent_lstsq_oracle():
    for trial in range(30):
        rng = np.random.default_rng(trial)
        n, p = 40 + trial, 2 + trial % 5
        x = rng.normal(size=(n, p))
        y = rng.normal(size=n)
        fit = fit_linear(x, y)
        oracle = np.linalg.lstsq(x, y, rcond=None)[0]
        assert np.max(np.abs(fit.coef - oracle)) <= 1e-8
        # normal equations satisfied at the solution
        resid = y - x @ fit.coef
        scale = max(1.0, np.abs(x.T @ y).max())
        assert np.max(np.abs(x.T @ resid)) <= 1e-8 * scale


def test_linear_requires_more_rows_than_columns():
    with pytest.raises(Exception, match="n > p"):
        fit_linear(np.ones((2, 2)), np.zeros(2))


# ---------------------------------------------------------------------------
# fit_logistic
# ---------------------------------------------------------------------------


def test_logistic_intercept_only_mle():
    y = np.array([1.0, 0, 0, 0] * 25)
    fit = fit_logistic(np.ones((100, 1)), y)
    assert fit.converged
    assert fit.coef[0] == pytest.approx(np.log(0.25 / 0.75), abs=1e-8)


def test_logistic_constant_response_rejected():
    with pytest.raises(DegenerateOutcomeError):
        fit_logistic(np.ones((20, 1)), np.zeros(20))


def test_logistic_score_equations_at_convergence():
    rng = np.random.default_rng(5)
    x = np.column_stack([np.ones(500), rng.normal(size=(500, 2))])
    y = (rng.random(500) < expit(x @ np.array([0.3, -1.0, 0.5]))).astype(float)
    fit = fit_logistic(x, y)
    score = x.T @ (y - expit(x @ fit.coef))
    assert np.max(np.abs(score)) <= 1e-8 * len(y)


def test_logistic_recovers_generating_coefficients():
    # benchmark exposure model at n = 200,000, fixed seed
    data = piie.generate_dgp(piie.DgpParams(), 200_000, 13)
    design = build_design(parse_formula("a ~ c1 + c2 + c1:c2 + c3"), data)
    fit = fit_logistic(design, data.a)
    assert np.max(np.abs(fit.coef - np.array([0.5, 0.2, 0.4, 0.5, 0.2]))) < 0.02


def test_logistic_separation_flagged_not_fatal():
    x = np.column_stack([np.ones(40), np.linspace(-2, 2, 40)])
    y = (x[:, 1] > 0).astype(float)
    with pytest.warns(SeparationWarning):
        fit = fit_logistic(x, y)
    assert fit.separation


# ---------------------------------------------------------------------------
# mediator densities
# ---------------------------------------------------------------------------


def _gaussian_mediator(data, formula="z ~ a + c1"):
    return fit_mediator(data, parse_formula(formula))


def _toy_dataset(n=200, seed=0):
    rng = np.random.default_rng(seed)
    c1 = rng.integers(0, 2, n).astype(float)
    a = rng.integers(0, 2, n).astype(float)
    z = 1.0 + 0.5 * a - c1 + rng.normal(size=n) * 2.0
    y = z + rng.normal(size=n)
    roles = Roles(outcome="y", exposure="a", mediator="z", covariates=("c1",))
    return Dataset({"y": y, "a": a, "z": z, "c1": c1}, roles)


def test_gaussian_density_at_its_mean():
    assert gaussian_density(0.0, 0.0, 4.0) == pytest.approx(1.0 / np.sqrt(8 * np.pi), abs=1e-15)


def test_bernoulli_density_value():
    data = _toy_dataset()
    binary = data.with_columns({"z": (data.z > 0).astype(float)})
    model = fit_mediator(binary, parse_formula("z ~ a + c1"))
    assert model.family == "bernoulli"
    p = float(expit(model.fit.coef @ np.array([1.0, 1.0, 0.0])))
    got = mediator_density(model, 0.0, 1.0, {"c1": 0.0})
    assert got == pytest.approx(1.0 - p, abs=1e-12)


def test_gaussian_density_ratio_identity():
    # shared-variance ratio reduces to exp{-[(z-m*)^2 - (z-m)^2] / (2 s2)}
    model = _gaussian_mediator(_toy_dataset())
    s2 = model.fit.sigma2
    for z, row in ((0.3, {"c1": 0.0}), (-1.7, {"c1": 1.0})):
        num = mediator_density(model, z, 0.0, row)
        den = mediator_density(model, z, 1.0, row)
        m_star = model.fit.coef @ np.array([1.0, 0.0, row["c1"]])
        m_obs = model.fit.coef @ np.array([1.0, 1.0, row["c1"]])
        closed = np.exp(-((z - m_star) ** 2 - (z - m_obs) ** 2) / (2 * s2))
        assert num / den == pytest.approx(closed, abs=1e-12)


def test_gaussian_density_integrates_to_one():
    model = _gaussian_mediator(_toy_dataset())
    mean = float(model.fit.coef @ np.array([1.0, 1.0, 1.0]))
    sd = np.sqrt(model.fit.sigma2)
    total, _ = quad(lambda z: mediator_density(model, z, 1.0, {"c1": 1.0}),
                    mean - 8 * sd, mean + 8 * sd)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_bernoulli_density_sums_to_one_exactly():
    data = _toy_dataset()
    binary = data.with_columns({"z": (data.z > 0).astype(float)})
    model = fit_mediator(binary, parse_formula("z ~ a + c1"))
    total = mediator_density(model, 0.0, 1.0, {"c1": 1.0}) + mediator_density(
        model, 1.0, 1.0, {"c1": 1.0}
    )
    assert total == 1.0


def test_degenerate_gaussian_density_rejected():
    model = _gaussian_mediator(_toy_dataset())
    model.fit.sigma2 = 0.0
    with pytest.raises(DegenerateDensityError):
        mediator_density(model, 0.0, 1.0, {"c1": 0.0})


def test_mediator_family_selection():
    data = _toy_dataset()
    assert fit_mediator(data, parse_formula("z ~ a")).family == "gaussian"
    binary = data.with_columns({"z": (data.z > 0).astype(float)})
    assert fit_mediator(binary, parse_formula("z ~ a")).family == "bernoulli"


# ---------------------------------------------------------------------------
# score contributions
# ---------------------------------------------------------------------------


def test_score_columns_sum_to_zero_at_fit():
    rng = np.random.default_rng(11)
    x = np.column_stack([np.ones(300), rng.normal(size=(300, 3))])
    y = rng.normal(size=300)
    fit = fit_linear(x, y)
    scores = score_contributions(fit, x, y)
    assert np.max(np.abs(scores.sum(axis=0))) <= 1e-6 * len(y)

    yb = (rng.random(300) < 0.4).astype(float)
    lfit = fit_logistic(x, yb)
    lscores = score_contributions(lfit, x, yb)
    assert np.max(np.abs(lscores.sum(axis=0))) <= 1e-6 * len(y)


def test_score_intercept_only_is_centered_response():
    y = np.array([2.0, 4.0, 9.0])
    fit = fit_linear(np.ones((3, 1)), y)
    scores = score_contributions(fit, np.ones((3, 1)), y)
    assert np.allclose(scores[:, 0], y - y.mean())


def test_logistic_score_perturbation_matches_fisher_information():
    # column sums at coef + delta ~ -(X' W X) delta, by central expansion
    rng = np.random.default_rng(3)
    x = np.column_stack([np.ones(2000), rng.normal(size=(2000, 2))])
    y = (rng.random(2000) < expit(x @ np.array([0.2, 0.7, -0.4]))).astype(float)
    fit = fit_logistic(x, y)
    mu = expit(x @ fit.coef)
    info = x.T @ (x * (mu * (1 - mu))[:, None])
    delta = np.array([1e-4, -2e-4, 1.5e-4])
    shifted = type(fit)(
        coef=fit.coef + delta,
        term_names=fit.term_names,
        spec=fit.spec,
        converged=True,
        iterations=fit.iterations,
        separation=False,
    )
    sums = score_contributions(shifted, x, y).sum(axis=0)
    assert np.allclose(sums, -info @ delta, atol=1e-3)


def test_score_dimension_mismatch():
    fit = fit_linear(np.ones((4, 1)), np.arange(4.0))
    with pytest.raises(Exception, match="coefficients"):
        score_contributions(fit, np.ones((4, 2)), np.arange(4.0))
