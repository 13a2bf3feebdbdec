"""Variance estimation and the bootstrap estimator-comparison test.

The sandwich stacks per-observation estimating functions for every fitted
nuisance parameter together with the Psi equation (summand - Psi) and a
trivial mean block (Y - mu), so the PIIE variance includes the covariance
between the outcome mean and Psi. The bread Jacobian is obtained by
central finite differences; the nuisance-free reduction is covered by an
oracle test.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit
from scipy.stats import norm

from .data import Dataset, build_design
from .estimators import EstimationConfig, PsiEngine, PsiEstimate, estimate_psi, fit_nuisances, psi_from_nuisances

__all__ = [
    "ComparisonResult",
    "StackedSystem",
    "VarianceReport",
    "bootstrap_variance",
    "hausman_compare",
    "sandwich_variance",
    "stacked_system",
    "wald_ci",
]

_FD_STEP = np.sqrt(np.finfo(float).eps)


@dataclass
class StackedSystem:
    """Stacked estimating-function system solved at the fitted parameters."""

    blocks: tuple[tuple[str, int], ...]
    labels: tuple[str, ...]
    solution: np.ndarray
    score_fn: Callable[[np.ndarray], np.ndarray]  # params -> n x K scores
    n: int
    psi_index: int
    mu_index: int | None

    @property
    def dim(self) -> int:
        return self.solution.shape[0]

    def scores(self, params=None) -> np.ndarray:
        return self.score_fn(self.solution if params is None else np.asarray(params, float))


@dataclass
class VarianceReport:
    psi_variance: float
    piie_variance: float
    method: str  # "sandwich" | "bootstrap"
    bread: np.ndarray | None = None
    psi_replicates: np.ndarray | None = None
    piie_replicates: np.ndarray | None = None
    n_failed: int = 0


@dataclass
class ComparisonResult:
    method: str
    diff: float
    se_diff: float
    z: float
    p_value: float
    b: int
    seed: int | None
    n_failed: int = 0
    degenerate_se: bool = False


# ---------------------------------------------------------------------------
# Stacked system construction
# ---------------------------------------------------------------------------


def stacked_system(
    data: Dataset,
    psi_est: PsiEstimate,
    config: EstimationConfig,
    include_mean: bool = True,
    nuisance_blocks: bool = True,
) -> StackedSystem:
    """Stack nuisance scores, the outcome-mean block, and the Psi equation.

    ``nuisance_blocks=False`` treats the fitted nuisances as known constants,
    leaving only the (mean, Psi) blocks; this is the nuisance-free reduction
    where the sandwich collapses to var(summands)/n.
    """
    nuis = psi_est.nuisance
    method = "mle_alt" if psi_est.method == "closed_form" else psi_est.method
    engine = PsiEngine(
        data, nuis, config.a_star, config.propensity_floor, config.truncate_propensity
    )
    y, a, z = data.y, data.a, data.z

    blocks: list[tuple[str, int]] = []
    labels: list[str] = []
    values: list[np.ndarray] = []
    gaussian_z = nuis.mediator is not None and nuis.mediator.family == "gaussian"

    use_outcome = nuisance_blocks and nuis.outcome is not None
    use_mediator = nuisance_blocks and nuis.mediator is not None
    use_propensity = nuisance_blocks and nuis.propensity is not None

    if use_outcome:
        Xy = build_design(nuis.outcome.spec, data).X
        blocks.append(("theta", Xy.shape[1]))
        labels.extend(f"theta[{t}]" for t in nuis.outcome.term_names)
        values.append(nuis.outcome.coef)
        blocks.append(("sigma2_y", 1))
        labels.append("sigma2_y")
        values.append(np.array([nuis.outcome.sigma2]))
    if use_mediator:
        Xz = build_design(nuis.mediator.fit.spec, data).X
        blocks.append(("beta", Xz.shape[1]))
        labels.extend(f"beta[{t}]" for t in nuis.mediator.fit.term_names)
        values.append(nuis.mediator.fit.coef)
        if gaussian_z:
            blocks.append(("sigma2_z", 1))
            labels.append("sigma2_z")
            values.append(np.array([nuis.mediator.fit.sigma2]))
    if use_propensity:
        Xa = build_design(nuis.propensity.spec, data).X
        blocks.append(("alpha", Xa.shape[1]))
        labels.extend(f"alpha[{t}]" for t in nuis.propensity.term_names)
        values.append(nuis.propensity.coef)

    mu_index = None
    if include_mean:
        mu_index = sum(size for _, size in blocks)
        blocks.append(("mu", 1))
        labels.append("mu")
        values.append(np.array([y.mean()]))
    psi_index = sum(size for _, size in blocks)
    blocks.append(("psi", 1))
    labels.append("psi")
    values.append(np.array([psi_est.psi]))

    slices: dict[str, slice] = {}
    offset = 0
    for name, size in blocks:
        slices[name] = slice(offset, offset + size)
        offset += size

    def score_fn(params: np.ndarray) -> np.ndarray:
        cols: list[np.ndarray] = []
        kw = {}
        if use_outcome:
            theta = params[slices["theta"]]
            kw["theta"] = theta
            resid = y - engine.outcome_pred("obs", z, theta)
            cols.append(Xy * resid[:, None])
            cols.append((resid**2 - params[slices["sigma2_y"]])[:, None])
        if use_mediator:
            beta = params[slices["beta"]]
            kw["beta"] = beta
            if gaussian_z:
                zres = z - Xz @ beta
                kw["sigma2_z"] = params[slices["sigma2_z"]][0]
                cols.append(Xz * zres[:, None])
                cols.append((zres**2 - kw["sigma2_z"])[:, None])
            else:
                cols.append(Xz * (z - expit(Xz @ beta))[:, None])
        if use_propensity:
            alpha = params[slices["alpha"]]
            kw["alpha"] = alpha
            cols.append(Xa * (a - expit(Xa @ alpha))[:, None])
        if include_mean:
            cols.append((y - params[slices["mu"]])[:, None])
        cols.append((engine.summands(method, **kw) - params[slices["psi"]])[:, None])
        return np.hstack(cols)

    return StackedSystem(
        blocks=tuple(blocks),
        labels=tuple(labels),
        solution=np.concatenate(values),
        score_fn=score_fn,
        n=data.n,
        psi_index=psi_index,
        mu_index=mu_index,
    )


# ---------------------------------------------------------------------------
# Sandwich
# ---------------------------------------------------------------------------


def sandwich_variance(system: StackedSystem) -> VarianceReport:
    """A^-1 B A^-T with B = U'U and A the finite-difference score Jacobian."""
    sol = system.solution
    k = system.dim
    scores = system.scores()
    meat = scores.T @ scores

    bread = np.empty((k, k))
    for j in range(k):
        h = _FD_STEP * max(1.0, abs(sol[j]))
        up = sol.copy()
        up[j] += h
        down = sol.copy()
        down[j] -= h
        bread[:, j] = (system.scores(up).sum(axis=0) - system.scores(down).sum(axis=0)) / (2 * h)

    try:
        half = np.linalg.solve(bread, meat)
        cov = np.linalg.solve(bread, half.T).T
    except np.linalg.LinAlgError:
        _, r, piv = scipy.linalg.qr(bread, pivoting=True)
        diag = np.abs(np.diag(r))
        worst = piv[int(np.argmin(diag))]
        raise np.linalg.LinAlgError(
            f"singular bread matrix: near-zero pivot at parameter {system.labels[worst]!r}"
        ) from None

    i, j = system.psi_index, system.mu_index
    psi_var = float(cov[i, i])
    piie_var = psi_var if j is None else float(cov[j, j] + cov[i, i] - 2.0 * cov[j, i])
    return VarianceReport(
        psi_variance=psi_var, piie_variance=piie_var, method="sandwich", bread=bread
    )


# ---------------------------------------------------------------------------
# Wald interval
# ---------------------------------------------------------------------------


def wald_ci(estimate: float, variance: float, level: float) -> tuple[float, float]:
    """estimate +/- z_{(1+level)/2} * sqrt(variance)."""
    if variance < 0:
        raise ValueError(f"variance must be nonnegative, got {variance!r}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level!r}")
    half = norm.ppf((1.0 + level) / 2.0) * np.sqrt(variance)
    return (float(estimate - half), float(estimate + half))


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


def _resample_chunk(args):
    """Refit and re-estimate on resampled rows; None marks a failed fit."""
    data, config, states, methods = args
    out = []
    for state in states:
        rng = np.random.default_rng(state)
        idx = rng.integers(0, data.n, data.n)
        boot = data.take(idx)
        try:
            nuis = fit_nuisances(boot, config)
            ey = float(boot.y.mean())
            row = []
            for m in methods:
                est = psi_from_nuisances(
                    boot, nuis, "mle_alt" if m == "closed_form" else m,
                    config.a_star, config.propensity_floor, config.truncate_propensity,
                )
                row.append((est.psi, ey - est.psi))
            out.append(row)
        except Exception:
            out.append(None)
    return out


def _run_resamples(data, config, b, seed, threads, methods):
    states = np.random.SeedSequence(seed).spawn(b)
    threads = max(1, int(threads))
    if threads == 1:
        results = _resample_chunk((data, config, states, methods))
    else:
        chunks = [states[i::threads] for i in range(threads)]
        order = [i for t in range(threads) for i in range(t, b, threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_resample_chunk, [(data, config, c, methods) for c in chunks]))
        flat = [row for part in parts for row in part]
        results = [None] * b
        for pos, row in zip(order, flat):
            results[pos] = row
    kept = [r for r in results if r is not None]
    return kept, b - len(kept)


def bootstrap_variance(
    data: Dataset,
    config: EstimationConfig,
    b: int,
    seed: int | None = None,
    threads: int = 1,
) -> VarianceReport:
    """Nonparametric bootstrap of Psi and PIIE with full nuisance refits.

    Resamples rows with replacement ``b`` times; failed refits are skipped
    and counted, erroring out when more than 5% fail. Deterministic given
    ``seed`` regardless of ``threads``.
    """
    if b < 2:
        raise ValueError(f"need at least 2 bootstrap replicates, got {b}")
    if b < 50:
        warnings.warn(f"b={b} is small for variance estimation; consider b >= 50", stacklevel=2)
    config.validate()
    kept, n_failed = _run_resamples(data, config, b, seed, threads, (config.method,))
    if n_failed > 0.05 * b:
        raise RuntimeError(f"{n_failed} of {b} bootstrap replicates failed to fit")
    psi = np.array([row[0][0] for row in kept])
    piie = np.array([row[0][1] for row in kept])
    return VarianceReport(
        psi_variance=float(psi.var(ddof=1)),
        piie_variance=float(piie.var(ddof=1)),
        method="bootstrap",
        psi_replicates=psi,
        piie_replicates=piie,
        n_failed=n_failed,
    )


# ---------------------------------------------------------------------------
# Estimator-comparison (paired bootstrap) test
# ---------------------------------------------------------------------------


def hausman_compare(
    data: Dataset,
    config: EstimationConfig,
    method: str,
    b: int = 1000,
    seed: int | None = None,
    threads: int = 1,
) -> ComparisonResult:
    """Test whether ``method`` and the doubly robust estimator share a limit.

    The paired difference Psi_method - Psi_dr is bootstrapped (the same
    resample feeds both estimators); the p-value is two-sided normal using
    the bootstrap standard error of the difference.
    """
    if b < 2:
        raise ValueError(f"need at least 2 bootstrap replicates, got {b}")
    cfg = EstimationConfig(
        outcome_formula=config.outcome_formula,
        mediator_formula=config.mediator_formula,
        propensity_formula=config.propensity_formula,
        a_star=config.a_star,
        method="dr",
        propensity_floor=config.propensity_floor,
        truncate_propensity=config.truncate_propensity,
    )
    cfg.validate()

    nuis = fit_nuisances(data, cfg)
    psi_m = psi_from_nuisances(
        data, nuis, "mle_alt" if method == "closed_form" else method,
        cfg.a_star, cfg.propensity_floor, cfg.truncate_propensity,
    ).psi
    psi_dr = psi_from_nuisances(
        data, nuis, "dr", cfg.a_star, cfg.propensity_floor, cfg.truncate_propensity
    ).psi
    diff = psi_m - psi_dr

    kept, n_failed = _run_resamples(data, cfg, b, seed, threads, (method, "dr"))
    if n_failed > 0.05 * b:
        raise RuntimeError(f"{n_failed} of {b} bootstrap replicates failed to fit")
    diffs = np.array([row[0][0] - row[1][0] for row in kept])
    se_diff = float(diffs.std(ddof=1))

    degenerate = False
    if se_diff == 0.0:
        if abs(diff) < 1e-12:
            z_stat, p = 0.0, 1.0
        else:
            degenerate = True
            z_stat, p = float("inf"), 0.0
            warnings.warn(
                "bootstrap SE of the estimator difference is zero with a nonzero "
                "difference; reporting p = 0",
                stacklevel=2,
            )
    else:
        z_stat = diff / se_diff
        p = float(2.0 * (1.0 - norm.cdf(abs(z_stat))))
    return ComparisonResult(
        method=method,
        diff=float(diff),
        se_diff=se_diff,
        z=float(z_stat),
        p_value=p,
        b=b,
        seed=seed,
        n_failed=n_failed,
        degenerate_se=degenerate,
    )
