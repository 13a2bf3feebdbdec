"""Synthetic data generation, oracle truths, and the replication harness.

Hosts the binary-covariate data generating process used throughout the
test battery, the four model-(mis)specification scenarios, exact and
Monte-Carlo oracle values for the target functionals, the brute-force
enumeration of Psi over finite worlds, and the operating-characteristics
runner (mean estimate, variance, proportion bias, CI coverage).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from .data import Dataset, FormulaSpec, Roles, parse_formula
from .estimators import EstimationConfig, PositivityError, fit_nuisances, psi_from_nuisances
from .inference import sandwich_variance, stacked_system, wald_ci

__all__ = [
    "DecompositionReport",
    "DgpParams",
    "DiscreteJoint",
    "OCRow",
    "OCTable",
    "OracleTruth",
    "ScenarioSpec",
    "SCENARIO_IDS",
    "brute_force_psi",
    "decomposition_check",
    "generate_dgp",
    "oracle_truth",
    "random_world",
    "run_operating_characteristics",
    "scenario",
    "world_from_counts",
]

DEFAULT_ESTIMATORS = ("mle_alt", "sp1", "sp2", "dr")


# ---------------------------------------------------------------------------
# Data generating process
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DgpParams:
    """Constants of the binary-covariate benchmark system.

    Coefficient orders: exposure_logit over (1, c1, c2, c1*c2, c3);
    mediator_coef over (1, a, c1, c2, c1*c2); outcome_coef over
    (1, a, z, a*z, c1, c2, c1*c2, c3).

    ``direct_effect_off`` zeroes the exposure terms of the outcome equation
    (no direct exposure-outcome pathway). ``confounded`` adds a latent
    Bernoulli(confounder_p) variable into the exposure and outcome linear
    predictors that is never emitted as a column.
    """

    p_c1: float = 0.6
    c2_logit: tuple[float, float] = (1.0, 0.5)
    p_c3: float = 0.3
    exposure_logit: tuple[float, ...] = (0.5, 0.2, 0.4, 0.5, 0.2)
    mediator_coef: tuple[float, ...] = (1.0, 1.0, -2.0, 2.0, 8.0)
    mediator_var: float = 4.0
    outcome_coef: tuple[float, ...] = (1.0, 2.0, 2.0, -8.0, 3.0, 1.0, 1.0, 1.0)
    outcome_var: float = 1.0
    direct_effect_off: bool = False
    confounded: bool = False
    confounder_p: float = 0.5
    confounder_exposure_coef: float = 1.0
    confounder_outcome_coef: float = 1.0

    def __post_init__(self):
        if self.mediator_var <= 0 or self.outcome_var <= 0:
            raise ValueError("error variances must be positive")

    def exposure_probability(self, c1, c2, c3, u=0.0):
        g = self.exposure_logit
        lp = g[0] + g[1] * c1 + g[2] * c2 + g[3] * c1 * c2 + g[4] * c3
        if self.confounded:
            lp = lp + self.confounder_exposure_coef * u
        return expit(lp)

    def mediator_mean(self, a, c1, c2):
        b = self.mediator_coef
        return b[0] + b[1] * a + b[2] * c1 + b[3] * c2 + b[4] * c1 * c2

    def outcome_mean(self, a, z, c1, c2, c3, u=0.0):
        t = self.outcome_coef
        t1, t3 = (0.0, 0.0) if self.direct_effect_off else (t[1], t[3])
        mean = t[0] + t1 * a + t[2] * z + t3 * a * z + t[4] * c1 + t[5] * c2 + t[6] * c1 * c2 + t[7] * c3
        if self.confounded:
            mean = mean + self.confounder_outcome_coef * u
        return mean

    def observed_outcome_mean(self, a, z, c1, c2, c3):
        """E(Y | A, Z, C) under the *observed-data* law.

        With the latent confounder present, conditioning on the exposure
        tilts the confounder; the correction term is its posterior mean
        given (a, c), which enters additively and does not involve z.
        """
        base = self.outcome_mean(a, z, c1, c2, c3, u=0.0)
        if not self.confounded:
            return base
        p1 = self.exposure_probability(c1, c2, c3, u=1.0)
        p0 = self.exposure_probability(c1, c2, c3, u=0.0)
        like1 = np.where(a == 1.0, p1, 1.0 - p1) * self.confounder_p
        like0 = np.where(a == 1.0, p0, 1.0 - p0) * (1.0 - self.confounder_p)
        return base + self.confounder_outcome_coef * like1 / (like1 + like0)


def generate_dgp(params: DgpParams, n: int, seed) -> Dataset:
    """Sample n rows (y, a, z, c1, c2, c3) from the structural system.

    Draw order is fixed (c1, c2, c3, latent confounder when enabled, a, z,
    y), so a given seed always yields a bit-identical dataset.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    c1 = (rng.random(n) < params.p_c1).astype(float)
    c2 = (rng.random(n) < expit(params.c2_logit[0] + params.c2_logit[1] * c1)).astype(float)
    c3 = (rng.random(n) < params.p_c3).astype(float)
    u = (rng.random(n) < params.confounder_p).astype(float) if params.confounded else 0.0
    a = (rng.random(n) < params.exposure_probability(c1, c2, c3, u)).astype(float)
    z = params.mediator_mean(a, c1, c2) + rng.standard_normal(n) * np.sqrt(params.mediator_var)
    y = params.outcome_mean(a, z, c1, c2, c3, u) + rng.standard_normal(n) * np.sqrt(
        params.outcome_var
    )
    roles = Roles(outcome="y", exposure="a", mediator="z", covariates=("c1", "c2", "c3"))
    return Dataset({"y": y, "a": a, "z": z, "c1": c1, "c2": c2, "c3": c3}, roles)


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    """Which working models each benchmark scenario fits."""

    id: str
    outcome_formula: FormulaSpec
    mediator_formula: FormulaSpec
    propensity_formula: FormulaSpec
    description: str

    def config(self, method: str = "dr", a_star: int = 0, **kwargs) -> EstimationConfig:
        return EstimationConfig(
            outcome_formula=self.outcome_formula,
            mediator_formula=self.mediator_formula,
            propensity_formula=self.propensity_formula,
            a_star=a_star,
            method=method,
            **kwargs,
        )


_SCENARIOS = {
    "a": (
        "y ~ a + z + a:z + c1 + c2 + c1:c2 + c3",
        "z ~ a + c1 + c2 + c1:c2",
        "a ~ c1 + c2 + c1:c2 + c3",
        "all three working models correctly specified",
    ),
    "b": (
        "y ~ a + z + a:z + c1 + c2 + c1:c2",
        "z ~ a + c1 + c2 + c1:c2",
        "a ~ c1 + c2 + c1:c2",
        "c3 omitted from the outcome and exposure models (it acts as an "
        "unmeasured exposure-outcome confounder); mediator model correct",
    ),
    "c": (
        "y ~ a + z + c1 + c2 + c1:c2",
        "z ~ a + c1 + c2 + c1:c2",
        "a ~ c1",
        "only the mediator model is correct: the outcome model drops the "
        "exposure-mediator interaction and the exposure model keeps only c1",
    ),
    "d": (
        "y ~ a + z + a:z + c1 + c2 + c1:c2 + c3",
        "z ~ a + c1",
        "a ~ c1 + c2 + c1:c2 + c3",
        "outcome and exposure models correct, mediator model drops c2 and "
        "c1:c2",
    ),
}

SCENARIO_IDS = tuple(_SCENARIOS)


def scenario(scenario_id: str) -> ScenarioSpec:
    try:
        outcome, mediator, propensity, description = _SCENARIOS[scenario_id]
    except KeyError:
        raise ValueError(f"unknown scenario {scenario_id!r}; expected one of {SCENARIO_IDS}") from None
    return ScenarioSpec(
        id=scenario_id,
        outcome_formula=parse_formula(outcome),
        mediator_formula=parse_formula(mediator),
        propensity_formula=parse_formula(propensity),
        description=description,
    )


# ---------------------------------------------------------------------------
# Oracle truths
# ---------------------------------------------------------------------------


@dataclass
class OracleTruth:
    """Monte-Carlo oracle values with standard errors.

    ``psi`` evaluates the identifying functional on the observed-data law
    (analytic mediator integral averaged over simulated exposure/covariate
    draws); ``psi_counterfactual`` re-executes the structural system with
    the mediator forced to its a*-law. The two agree whenever the
    identification conditions hold, including under the latent-confounder
    variant.
    """

    a_star: int
    draws: int
    psi: float
    piie: float
    pie: float
    pide: float
    ey: float
    ey_astar: float
    psi_counterfactual: float
    p_exposed: float
    se_psi: float
    se_piie: float
    se_pie: float
    se_pide: float
    se_ey: float
    se_psi_counterfactual: float


def _draw_context(params: DgpParams, draws: int, rng):
    c1 = (rng.random(draws) < params.p_c1).astype(float)
    c2 = (rng.random(draws) < expit(params.c2_logit[0] + params.c2_logit[1] * c1)).astype(float)
    c3 = (rng.random(draws) < params.p_c3).astype(float)
    u = (rng.random(draws) < params.confounder_p).astype(float) if params.confounded else np.zeros(draws)
    a = (rng.random(draws) < params.exposure_probability(c1, c2, c3, u)).astype(float)
    return c1, c2, c3, u, a


def _se(values: np.ndarray) -> float:
    return float(values.std(ddof=1) / np.sqrt(values.shape[0]))


def oracle_truth(params: DgpParams, a_star: int = 0, draws: int = 1_000_000, seed=0) -> OracleTruth:
    """Monte-Carlo ground truth for Psi, PIIE, PIE, and PIDE.

    All outcome expectations collapse the mediator and outcome noise
    analytically (the system is linear in both), so the only Monte-Carlo
    variation comes from the exposure/covariate/confounder draws.
    """
    rng = np.random.default_rng(seed)
    c1, c2, c3, u, a = _draw_context(params, draws, rng)
    mu_nat = params.mediator_mean(a, c1, c2)
    mu_star = params.mediator_mean(float(a_star), c1, c2)

    ey_i = params.outcome_mean(a, mu_nat, c1, c2, c3, u)
    psi_cf_i = params.outcome_mean(a, mu_star, c1, c2, c3, u)
    ey_astar_i = params.outcome_mean(float(a_star), mu_star, c1, c2, c3, u)
    psi_an_i = params.observed_outcome_mean(a, mu_star, c1, c2, c3)

    piie_i = ey_i - psi_an_i
    pie_i = ey_i - ey_astar_i
    pide_i = psi_cf_i - ey_astar_i
    return OracleTruth(
        a_star=a_star,
        draws=draws,
        psi=float(psi_an_i.mean()),
        piie=float(piie_i.mean()),
        pie=float(pie_i.mean()),
        pide=float(pide_i.mean()),
        ey=float(ey_i.mean()),
        ey_astar=float(ey_astar_i.mean()),
        psi_counterfactual=float(psi_cf_i.mean()),
        p_exposed=float(a.mean()),
        se_psi=_se(psi_an_i),
        se_piie=_se(piie_i),
        se_pie=_se(pie_i),
        se_pide=_se(pide_i),
        se_ey=_se(ey_i),
        se_psi_counterfactual=_se(psi_cf_i),
    )


# ---------------------------------------------------------------------------
# Brute-force enumeration oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteJoint:
    """Exhaustive joint distribution over (y, a, z, c), each finitely supported."""

    y_values: tuple[float, ...]
    a_values: tuple[float, ...]
    z_values: tuple[float, ...]
    c_values: tuple[float, ...]
    pmf: np.ndarray  # shape (|y|, |a|, |z|, |c|)

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        expected = (len(self.y_values), len(self.a_values), len(self.z_values), len(self.c_values))
        if pmf.shape != expected:
            raise ValueError(f"pmf shape {pmf.shape} does not match supports {expected}")
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-9:
            raise ValueError("pmf must be nonnegative and sum to 1")
        object.__setattr__(self, "pmf", pmf)


def brute_force_psi(joint: DiscreteJoint, a_star: float) -> float:
    """Literal triple sum of the identifying functional over a finite world.

    Psi = sum_c P(c) sum_z P(z | a*, c) sum_a E[Y | a, z, c] P(a | c).
    Zero-probability conditioning events with positive weight raise a
    positivity error.
    """
    try:
        i_star = joint.a_values.index(a_star)
    except ValueError:
        raise PositivityError(f"a*={a_star!r} is not in the exposure support") from None
    pmf = joint.pmf
    yv = np.asarray(joint.y_values)
    p_c = pmf.sum(axis=(0, 1, 2))
    p_ac = pmf.sum(axis=(0, 2))  # (a, c)
    p_azc = pmf.sum(axis=0)  # (a, z, c)

    psi = 0.0
    for ci, pc in enumerate(p_c):
        if pc <= 0:
            continue
        if p_ac[i_star, ci] <= 0:
            raise PositivityError(f"P(A=a*, C=c{ci}) = 0 with P(C=c{ci}) > 0")
        for zi in range(len(joint.z_values)):
            f_z = p_azc[i_star, zi, ci] / p_ac[i_star, ci]
            if f_z <= 0:
                continue
            inner = 0.0
            for ai in range(len(joint.a_values)):
                p_a_given_c = p_ac[ai, ci] / pc
                if p_a_given_c <= 0:
                    continue
                if p_azc[ai, zi, ci] <= 0:
                    raise PositivityError(
                        f"E[Y | a{ai}, z{zi}, c{ci}] undefined: zero-probability cell"
                    )
                e_y = float(yv @ pmf[:, ai, zi, ci]) / p_azc[ai, zi, ci]
                inner += e_y * p_a_given_c
            psi += pc * f_z * inner
    return float(psi)


def world_from_counts(
    counts,
    y_values=(0.0, 1.0),
    a_values=(0.0, 1.0),
    z_values=(0.0, 1.0),
    c_values=(0.0, 1.0),
) -> tuple[DiscreteJoint, Dataset]:
    """Exact-frequency world: a joint pmf and a dataset realizing it exactly.

    ``counts`` is an integer array over (y, a, z, c) cells; the dataset
    contains each configuration repeated its count, so saturated fits
    reproduce the empirical conditionals without sampling error.
    """
    counts = np.asarray(counts, dtype=int)
    total = counts.sum()
    if total <= 0 or np.any(counts < 0):
        raise ValueError("counts must be nonnegative with a positive total")
    joint = DiscreteJoint(
        tuple(y_values), tuple(a_values), tuple(z_values), tuple(c_values), counts / total
    )
    grids = np.meshgrid(y_values, a_values, z_values, c_values, indexing="ij")
    reps = counts.ravel()
    cols = {
        name: np.repeat(grid.ravel(), reps)
        for name, grid in zip(("y", "a", "z", "c"), grids)
    }
    roles = Roles(outcome="y", exposure="a", mediator="z", covariates=("c",))
    return joint, Dataset(cols, roles)


def random_world(rng, min_count: int = 1, max_count: int = 5):
    """Random strictly-positive 2x2x2x2 world (all 16 cells occupied)."""
    counts = rng.integers(min_count, max_count + 1, size=(2, 2, 2, 2))
    return world_from_counts(counts)


# ---------------------------------------------------------------------------
# Operating characteristics
# ---------------------------------------------------------------------------


@dataclass
class OCRow:
    scenario: str
    estimator: str
    mean_psi: float
    mean_piie: float
    var_piie_mc: float  # Monte Carlo variance of the PIIE estimates
    mean_var_piie: float  # mean estimated (sandwich) variance of PIIE
    prop_bias: float  # (mean PIIE - true PIIE) / true PIIE
    coverage: float
    reps_requested: int
    reps_done: int
    failures: int
    n: int
    master_seed: int | None
    true_psi: float
    true_piie: float

    @property
    def flagged_biased(self) -> bool:
        return abs(self.prop_bias) > 0.1


@dataclass
class OCTable:
    rows: list[OCRow]
    level: float = 0.95

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(r) | {"biased": r.flagged_biased} for r in self.rows])

    def to_json_dict(self) -> dict:
        return {
            "level": self.level,
            "rows": [vars(r) | {"biased": r.flagged_biased} for r in self.rows],
        }

    def high_failure_rows(self, threshold: float = 0.01) -> list[OCRow]:
        return [r for r in self.rows if r.failures > threshold * r.reps_requested]


def _oc_chunk(args):
    """Replicates for one scenario chunk; returns per-(rep, estimator) stats."""
    params, spec, estimators, n, states, a_star, level = args
    results = []
    config = spec.config(method="dr", a_star=a_star)
    for state in states:
        data = generate_dgp(params, n, state)
        row: dict[str, tuple | None] = {}
        try:
            nuisance = fit_nuisances(data, config)
        except Exception:
            results.append({m: None for m in estimators})
            continue
        ey = float(data.y.mean())
        for m in estimators:
            try:
                est = psi_from_nuisances(data, nuisance, m, a_star)
                rep = sandwich_variance(stacked_system(data, est, config))
                piie = ey - est.psi
                lo, hi = wald_ci(piie, rep.piie_variance, level)
                row[m] = (est.psi, piie, rep.piie_variance, lo, hi)
            except Exception:
                row[m] = None
        results.append(row)
    return results


def run_operating_characteristics(
    spec: ScenarioSpec,
    estimators: Sequence[str] = DEFAULT_ESTIMATORS,
    reps: int = 1000,
    n: int = 1000,
    master_seed: int | None = 0,
    params: DgpParams | None = None,
    truth: OracleTruth | None = None,
    a_star: int = 0,
    level: float = 0.95,
    threads: int = 1,
    truth_draws: int = 4_000_000,
) -> OCTable:
    """Replicate data generation + estimation and tabulate the results.

    Per replicate the scenario's working models are fitted once and every
    requested estimator is evaluated with its stacked sandwich interval.
    Coverage and proportion bias are taken against the oracle truth.
    Results depend only on ``master_seed`` (not on ``threads``).
    """
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    params = params or DgpParams()
    if truth is None:
        truth = oracle_truth(
            params, a_star=a_star, draws=truth_draws, seed=np.random.SeedSequence(master_seed).spawn(1)[0]
        )
    states = np.random.SeedSequence(master_seed).spawn(reps)

    threads = max(1, int(threads))
    if threads == 1:
        results = _oc_chunk((params, spec, tuple(estimators), n, states, a_star, level))
    else:
        chunks = [states[i::threads] for i in range(threads)]
        order = [i for t in range(threads) for i in range(t, reps, threads)]
        args = [(params, spec, tuple(estimators), n, c, a_star, level) for c in chunks]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_oc_chunk, args))
        flat = [row for part in parts for row in part]
        results = [None] * reps
        for pos, row in zip(order, flat):
            results[pos] = row

    rows = []
    for m in estimators:
        stats = [r[m] for r in results if r.get(m) is not None]
        failures = reps - len(stats)
        arr = np.asarray(stats, dtype=float) if stats else np.empty((0, 5))
        psi_hat, piie_hat, var_hat = arr[:, 0], arr[:, 1], arr[:, 2]
        covered = (arr[:, 3] <= truth.piie) & (truth.piie <= arr[:, 4])
        rows.append(
            OCRow(
                scenario=spec.id,
                estimator=m,
                mean_psi=float(psi_hat.mean()) if stats else float("nan"),
                mean_piie=float(piie_hat.mean()) if stats else float("nan"),
                var_piie_mc=float(piie_hat.var(ddof=1)) if len(stats) > 1 else float("nan"),
                mean_var_piie=float(var_hat.mean()) if stats else float("nan"),
                prop_bias=float((piie_hat.mean() - truth.piie) / truth.piie) if stats else float("nan"),
                coverage=float(covered.mean()) if stats else float("nan"),
                reps_requested=reps,
                reps_done=len(stats),
                failures=failures,
                n=n,
                master_seed=master_seed,
                true_psi=truth.psi,
                true_piie=truth.piie,
            )
        )
    return OCTable(rows=rows, level=level)


# ---------------------------------------------------------------------------
# Decomposition identities
# ---------------------------------------------------------------------------


@dataclass
class DecompositionReport:
    """Oracle effect decomposition with Monte-Carlo identity checks.

    Each check compares quantities computed from *independent* draw batches,
    so agreement is a real consistency statement, not an algebraic
    tautology of shared noise.
    """

    a_star: int
    draws: int
    pie: float
    piie: float
    pide: float
    ett: float
    p_exposed: float
    ey: float
    af: float
    ey_binary: float
    pie_binary: float
    se_pie: float
    se_piie: float
    se_pide: float
    se_ett: float
    se_af_scaled: float
    se_pie_binary: float
    ett_identity_gap: float  # PIE(0) - ETT * Pr(A=1)
    ett_identity_se: float
    sum_identity_gap: float  # PIE - (PIIE + PIDE)
    sum_identity_se: float
    af_identity_gap: float  # AF * E[Y*] - PIE*  (binary-outcome variant)
    af_identity_se: float
    threshold: float

    def within(self, gap: float, se: float, k: float = 3.0) -> bool:
        return abs(gap) <= k * se

    @property
    def all_within_3se(self) -> bool:
        return (
            self.within(self.ett_identity_gap, self.ett_identity_se)
            and self.within(self.sum_identity_gap, self.sum_identity_se)
            and self.within(self.af_identity_gap, self.af_identity_se)
        )


def _binary_outcome_draws(params: DgpParams, draws: int, rng, a_star: int, threshold: float):
    """Thresholded outcomes Y* and Y*(a*) sharing structural noise."""
    c1, c2, c3, u, a = _draw_context(params, draws, rng)
    eps_z = rng.standard_normal(draws) * np.sqrt(params.mediator_var)
    eps_y = rng.standard_normal(draws) * np.sqrt(params.outcome_var)
    z_nat = params.mediator_mean(a, c1, c2) + eps_z
    z_star = params.mediator_mean(float(a_star), c1, c2) + eps_z
    y_nat = params.outcome_mean(a, z_nat, c1, c2, c3, u) + eps_y
    y_astar = params.outcome_mean(float(a_star), z_star, c1, c2, c3, u) + eps_y
    return (y_nat > threshold).astype(float), (y_astar > threshold).astype(float)


def decomposition_check(params: DgpParams, draws: int = 400_000, seed=0, a_star: int = 0) -> DecompositionReport:
    """Check PIE = ETT x Pr(A=1), PIE = PIIE + PIDE, and AF x E[Y*] = PIE*.

    The ETT identity requires a_star = 0 and a binary exposure. The
    attributable-fraction check runs on a thresholded binary-outcome
    variant of the same structural system.
    """
    if a_star != 0:
        raise ValueError("the treated-effect identity is stated for a_star = 0")
    seeds = np.random.SeedSequence(seed).spawn(5)

    # batch 1: PIE
    t1 = oracle_truth(params, a_star, draws, seeds[0])
    # batch 2: ETT and Pr(A=1)
    rng2 = np.random.default_rng(seeds[1])
    c1, c2, c3, u, a = _draw_context(params, draws, rng2)
    y1 = params.outcome_mean(1.0, params.mediator_mean(1.0, c1, c2), c1, c2, c3, u)
    y0 = params.outcome_mean(0.0, params.mediator_mean(0.0, c1, c2), c1, c2, c3, u)
    exposed = a == 1.0
    ett_i = (y1 - y0)[exposed]
    ett = float(ett_i.mean())
    p_exposed = float(a.mean())
    se_ett = _se(ett_i)
    # batch 3: PIIE + PIDE
    t3 = oracle_truth(params, a_star, draws, seeds[2])

    # binary-outcome variant: threshold at the median of the natural outcome
    rng_cal = np.random.default_rng(seeds[3])
    n_cal = min(draws, 200_000)
    c1, c2, c3, u, a = _draw_context(params, n_cal, rng_cal)
    z_cal = params.mediator_mean(a, c1, c2) + rng_cal.standard_normal(n_cal) * np.sqrt(
        params.mediator_var
    )
    y_cal = params.outcome_mean(a, z_cal, c1, c2, c3, u) + rng_cal.standard_normal(
        n_cal
    ) * np.sqrt(params.outcome_var)
    threshold = float(np.median(y_cal))

    af_seed, pie_seed = seeds[4].spawn(2)
    ystar, ystar_astar = _binary_outcome_draws(
        params, draws, np.random.default_rng(af_seed), a_star, threshold
    )
    ey_b = float(ystar.mean())
    af = float((ystar - ystar_astar).mean() / ey_b)
    se_af_scaled = _se(ystar - ystar_astar)  # SE of AF * E[Y*] = mean difference
    ystar2, ystar2_astar = _binary_outcome_draws(
        params, draws, np.random.default_rng(pie_seed), a_star, threshold
    )
    pie_b = float((ystar2 - ystar2_astar).mean())
    se_pie_b = _se(ystar2 - ystar2_astar)

    ett_gap = t1.pie - ett * p_exposed
    ett_gap_se = float(np.hypot(t1.se_pie, se_ett * p_exposed))
    sum_gap = t1.pie - (t3.piie + t3.pide)
    sum_gap_se = float(np.hypot(t1.se_pie, np.hypot(t3.se_piie, t3.se_pide)))
    af_gap = af * ey_b - pie_b
    af_gap_se = float(np.hypot(se_af_scaled, se_pie_b))

    return DecompositionReport(
        a_star=a_star,
        draws=draws,
        pie=t1.pie,
        piie=t3.piie,
        pide=t3.pide,
        ett=ett,
        p_exposed=p_exposed,
        ey=t1.ey,
        af=af,
        ey_binary=ey_b,
        pie_binary=pie_b,
        se_pie=t1.se_pie,
        se_piie=t3.se_piie,
        se_pide=t3.se_pide,
        se_ett=se_ett,
        se_af_scaled=se_af_scaled,
        se_pie_binary=se_pie_b,
        ett_identity_gap=float(ett_gap),
        ett_identity_se=ett_gap_se,
        sum_identity_gap=float(sum_gap),
        sum_identity_se=sum_gap_se,
        af_identity_gap=float(af_gap),
        af_identity_se=af_gap_se,
        threshold=threshold,
    )
