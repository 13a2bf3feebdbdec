"""Command-line front end: estimate, simulate, compare.

Exit codes: 0 success, 1 runtime/estimation error, 2 usage error. Results
go to stdout (json / csv / table per --format); logs go to stderr. With
--format json, errors are also emitted as machine-readable JSON on stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import simulate as sim
from .data import DataError, FormulaError, Roles, dataset_from_frame, parse_formula
from .estimators import EstimationConfig, estimate_piie
from .inference import hausman_compare

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(Exception):
    pass


def _default_threads() -> int:
    env = os.environ.get("PIIE_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _add_data_model_flags(p: argparse.ArgumentParser, propensity_required_hint: str):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--outcome", required=True, help="outcome column name")
    p.add_argument("--exposure", required=True, help="binary exposure column name")
    p.add_argument("--mediator", required=True, help="mediator column name")
    p.add_argument("--covariates", default="", help="comma-separated covariate columns")
    p.add_argument("--y-model", required=True, help="outcome model formula")
    p.add_argument("--z-model", required=True, help="mediator model formula")
    p.add_argument("--a-model", default=None, help=f"exposure model formula ({propensity_required_hint})")
    p.add_argument("--a-star", type=int, default=0, choices=(0, 1), help="reference exposure level")
    p.add_argument(
        "--one-hot",
        default="",
        help="comma-separated categorical columns to expand into 0/1 indicators "
        "named col_<value> (smallest value is the dropped reference level)",
    )
    p.add_argument("--propensity-floor", type=float, default=1e-8)
    p.add_argument(
        "--truncate-propensity",
        action="store_true",
        help="clamp propensities at the floor instead of erroring",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="piie",
        description="Population intervention indirect effect estimation, simulation "
        "replication, and estimator comparison.",
    )
    parser.add_argument("--format", choices=("json", "csv", "table"), default="table")
    parser.add_argument("--threads", type=int, default=_default_threads())
    sub = parser.add_subparsers(dest="subcommand", required=True)

    est = sub.add_parser("estimate", help="estimate the PIIE from a CSV file")
    _add_data_model_flags(est, "required for methods mle, sp2, dr")
    est.add_argument(
        "--method",
        default="dr",
        choices=("mle", "mle_alt", "sp1", "sp2", "dr", "closed_form"),
    )
    est.add_argument("--variance", default="sandwich", choices=("sandwich", "bootstrap", "closed_form"))
    est.add_argument("--B", type=int, default=500, help="bootstrap replicates")
    est.add_argument("--level", type=float, default=0.95)
    est.add_argument("--seed", type=int, default=None)

    simp = sub.add_parser("simulate", help="replicate the benchmark operating characteristics")
    simp.add_argument("--scenario", default="all", choices=("a", "b", "c", "d", "all"))
    simp.add_argument("--reps", type=int, default=1000)
    simp.add_argument("--n", type=int, default=1000)
    simp.add_argument("--seed", type=int, default=0)
    simp.add_argument("--full", action="store_true", help="use 10,000 replicates")
    simp.add_argument("--out", default=None, help="directory for CSV + JSON artifacts")
    simp.add_argument(
        "--estimators", default="mle_alt,sp1,sp2,dr", help="comma-separated estimator list"
    )
    simp.add_argument(
        "--config",
        default=None,
        help="JSON file overriding DGP parameters and scenario formulas "
        "(see README for the schema)",
    )

    cmp_ = sub.add_parser("compare", help="bootstrap test of each estimator against dr")
    _add_data_model_flags(cmp_, "required; the comparison always fits dr")
    cmp_.add_argument("--methods", default="mle_alt,sp1,sp2", help="estimators to test against dr")
    cmp_.add_argument("--B", type=int, default=1000)
    cmp_.add_argument("--seed", type=int, default=None)
    return parser


# ---------------------------------------------------------------------------
# Data loading helpers
# ---------------------------------------------------------------------------


def _one_hot(frame: pd.DataFrame, columns: list[str]) -> pd.DataFrame:
    """Expand each categorical column into drop-first 0/1 indicator columns."""
    frame = frame.copy()
    for col in columns:
        if col not in frame.columns:
            raise UsageError(f"--one-hot column {col!r} not found in the data")
        values = sorted(frame[col].dropna().unique(), key=str)
        for v in values[1:]:
            label = f"{v:g}" if isinstance(v, float) and float(v).is_integer() else str(v)
            frame[f"{col}_{label}"] = (frame[col] == v).astype(float)
        frame = frame.drop(columns=[col])
    return frame


def _load_dataset(args):
    frame = pd.read_csv(args.data)
    one_hot = [c for c in args.one_hot.split(",") if c]
    if one_hot:
        frame = _one_hot(frame, one_hot)
    covariates = tuple(c for c in args.covariates.split(",") if c)
    roles = Roles(
        outcome=args.outcome, exposure=args.exposure, mediator=args.mediator, covariates=covariates
    )
    return dataset_from_frame(frame, roles)


def _build_config(args, method: str) -> EstimationConfig:
    try:
        cfg = EstimationConfig(
            outcome_formula=parse_formula(args.y_model),
            mediator_formula=parse_formula(args.z_model),
            propensity_formula=parse_formula(args.a_model) if args.a_model else None,
            a_star=args.a_star,
            method=method,
            propensity_floor=args.propensity_floor,
            truncate_propensity=args.truncate_propensity,
        )
        cfg.validate()
    except (FormulaError, ValueError) as exc:
        if "requires propensity_formula" in str(exc):
            raise UsageError(f"--a-model is required for method {method!r}") from exc
        raise UsageError(str(exc)) from exc
    return cfg


# ---------------------------------------------------------------------------
# Output rendering
# ---------------------------------------------------------------------------


def _emit(payload: dict, frame: pd.DataFrame, fmt: str, table_note: str = ""):
    if fmt == "json":
        print(json.dumps(payload, indent=2, default=_json_default))
    elif fmt == "csv":
        print(frame.to_csv(index=False), end="")
    else:
        with pd.option_context("display.width", 160, "display.max_columns", 40):
            print(frame.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
        if table_note:
            print(table_note)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    data = _load_dataset(args)
    config = _build_config(args, args.method)
    result = estimate_piie(
        data,
        config,
        variance_method=args.variance,
        level=args.level,
        bootstrap_reps=args.B,
        seed=args.seed,
        threads=args.threads,
    )
    payload = {
        "subcommand": "estimate",
        "method": result.method,
        "variance_method": result.variance_method,
        "n": result.n,
        "n_dropped": result.n_dropped,
        "a_star": args.a_star,
        "ey": result.ey,
        "psi": result.psi,
        "piie": result.piie,
        "se": result.se,
        "ci_lower": result.ci[0],
        "ci_upper": result.ci[1],
        "level": result.level,
        "seed": args.seed,
        "warnings": list(result.warnings),
    }
    frame = pd.DataFrame([{k: v for k, v in payload.items() if k not in ("subcommand", "warnings")}])
    note = "\n".join(f"warning: {w}" for w in result.warnings)
    _emit(payload, frame, args.format, note)
    return 0


def _load_sim_overrides(path):
    with open(path) as fh:
        raw = json.load(fh)
    params = sim.DgpParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.get("dgp", {}).items()})
    overrides = {}
    for sid, models in raw.get("scenarios", {}).items():
        base = sim.scenario(sid)
        overrides[sid] = replace(
            base,
            **{
                f"{part}_formula": parse_formula(models[part])
                for part in ("outcome", "mediator", "propensity")
                if part in models
            },
        )
    return params, overrides


def cmd_simulate(args) -> int:
    reps = 10_000 if args.full else args.reps
    estimators = tuple(m for m in args.estimators.split(",") if m)
    params, overrides = (sim.DgpParams(), {})
    if args.config:
        params, overrides = _load_sim_overrides(args.config)
    scenario_ids = list(sim.SCENARIO_IDS) if args.scenario == "all" else [args.scenario]

    truth = sim.oracle_truth(params, a_star=0, draws=4_000_000, seed=np.random.SeedSequence(args.seed).spawn(1)[0])
    rows = []
    for offset, sid in enumerate(scenario_ids):
        spec = overrides.get(sid, sim.scenario(sid))
        table = sim.run_operating_characteristics(
            spec,
            estimators=estimators,
            reps=reps,
            n=args.n,
            master_seed=args.seed + offset,
            params=params,
            truth=truth,
            threads=args.threads,
        )
        rows.extend(table.rows)
    table = sim.OCTable(rows=rows)

    frame = table.to_frame()
    payload = {"subcommand": "simulate", "seed": args.seed, "reps": reps, "n": args.n} | table.to_json_dict()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out / "operating_characteristics.csv", index=False)
        (out / "operating_characteristics.json").write_text(
            json.dumps(payload, indent=2, default=_json_default)
        )
        print(f"wrote {out / 'operating_characteristics.csv'} and .json", file=sys.stderr)

    display = frame[
        ["scenario", "estimator", "mean_psi", "mean_piie", "var_piie_mc", "mean_var_piie", "prop_bias", "coverage", "biased"]
    ].assign(biased=lambda f: np.where(f.biased, "biased", "unbiased"))
    flagged = table.high_failure_rows()
    note = (
        "\n".join(
            f"warning: scenario {r.scenario} estimator {r.estimator}: {r.failures} replicate failures"
            for r in flagged
        )
        if flagged
        else ""
    )
    _emit(payload, display if args.format == "table" else frame, args.format, note)
    return 0


def cmd_compare(args) -> int:
    data = _load_dataset(args)
    config = _build_config(args, "dr")
    methods = [m for m in args.methods.split(",") if m]
    bad = [m for m in methods if m not in ("mle", "mle_alt", "sp1", "sp2", "closed_form", "dr")]
    if bad:
        raise UsageError(f"unknown method(s) in --methods: {', '.join(bad)}")
    results = []
    for i, m in enumerate(methods):
        seed = None if args.seed is None else args.seed + i
        results.append(hausman_compare(data, config, m, b=args.B, seed=seed, threads=args.threads))
    payload = {
        "subcommand": "compare",
        "b": args.B,
        "seed": args.seed,
        "n": data.n,
        "comparisons": [
            {
                "method": r.method,
                "diff": r.diff,
                "se_diff": r.se_diff,
                "z": r.z if np.isfinite(r.z) else None,
                "p_value": r.p_value,
                "b": r.b,
                "seed": r.seed,
                "n_failed": r.n_failed,
                "degenerate_se": r.degenerate_se,
            }
            for r in results
        ],
    }
    frame = pd.DataFrame(payload["comparisons"])
    _emit(payload, frame, args.format)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR

    fmt = getattr(args, "format", "table")
    try:
        if args.subcommand == "estimate":
            return cmd_estimate(args)
        if args.subcommand == "simulate":
            return cmd_simulate(args)
        if args.subcommand == "compare":
            return cmd_compare(args)
        raise UsageError(f"unknown subcommand {args.subcommand!r}")
    except UsageError as exc:
        _error_out(str(exc), "usage", fmt)
        return USAGE_ERROR
    except (DataError, FormulaError, ValueError, np.linalg.LinAlgError, RuntimeError, OSError) as exc:
        _error_out(str(exc), "runtime", fmt)
        return RUNTIME_ERROR


def _error_out(message: str, kind: str, fmt: str):
    if fmt == "json":
        print(json.dumps({"error": {"kind": kind, "message": message}}))
    print(f"error: {message}", file=sys.stderr)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
