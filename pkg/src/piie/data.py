"""Dataset ingestion, variable roles, and design-matrix construction.

Model formulas use a small grammar: ``response ~ term (+ term)*`` where a
term is a column name or an interaction ``name:name(:name...)``; a bare
``1`` keeps the intercept (the default) and ``0`` or ``-1`` removes it.
Interactions of any order are accepted so that fully discrete worlds can
be fitted with saturated models.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

__all__ = [
    "DataError",
    "Dataset",
    "DesignMatrix",
    "FormulaError",
    "FormulaSpec",
    "Roles",
    "build_design",
    "dataset_from_frame",
    "load_csv",
    "parse_formula",
]


class FormulaError(ValueError):
    """Malformed model formula; ``offset`` is the byte position when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(ValueError):
    """Role, column, or file problem during ingestion or design building."""


# ---------------------------------------------------------------------------
# Formulas
# ---------------------------------------------------------------------------

Term = tuple[str, ...]  # (name,) main effect or (name, ..., name) interaction

_TOKEN = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*|[01]|[~+:\-]")


@dataclass(frozen=True)
class FormulaSpec:
    """Canonical parsed formula: response, ordered terms, intercept flag."""

    response: str
    terms: tuple[Term, ...]
    intercept: bool = True

    def render(self) -> str:
        items = [] if self.intercept else ["0"]
        items.extend(":".join(t) for t in self.terms)
        if not items:
            items = ["1"]
        return f"{self.response} ~ " + " + ".join(items)

    def columns(self) -> tuple[str, ...]:
        """Distinct columns referenced on the right-hand side, in order."""
        seen: dict[str, None] = {}
        for term in self.terms:
            for name in term:
                seen.setdefault(name)
        return tuple(seen)


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens, pos = [], 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None:
            raise FormulaError(f"unknown token {text[pos]!r}", offset=pos)
        tokens.append((m.group(), pos))
        pos = m.end()
    return tokens


def parse_formula(text: str) -> FormulaSpec:
    """Parse ``response ~ term (+ term)*`` into a canonical FormulaSpec.

    Interaction terms are order-normalized (``z:a`` becomes ``a:z``) and
    duplicate terms after canonicalization are rejected. Interactions may
    involve more than two columns.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise FormulaError("empty formula", offset=0)

    def expect(kind_ok, what):
        if not tokens:
            raise FormulaError(f"expected {what}, found end of input", offset=len(text))
        tok, off = tokens.pop(0)
        if not kind_ok(tok):
            raise FormulaError(f"expected {what}, found {tok!r}", offset=off)
        return tok, off

    is_name = lambda t: re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.]*", t) is not None
    response, _ = expect(is_name, "response name")
    expect(lambda t: t == "~", "'~'")

    intercept = True
    terms: list[Term] = []
    seen: set[Term] = set()
    while True:
        tok, off = expect(lambda t: t not in ("~", "+", ":"), "term")
        if tok == "1":
            intercept = True
        elif tok == "0":
            intercept = False
        elif tok == "-":
            expect(lambda t: t == "1", "'1' after '-'")
            intercept = False
        else:
            if not is_name(tok):
                raise FormulaError(f"expected term, found {tok!r}", offset=off)
            names = [tok]
            while tokens and tokens[0][0] == ":":
                tokens.pop(0)
                other, _ = expect(is_name, "interaction partner name")
                names.append(other)
            term: Term = tuple(sorted(names)) if len(names) > 1 else (tok,)
            if term in seen:
                raise FormulaError(f"duplicate term {':'.join(term)!r}", offset=off)
            seen.add(term)
            terms.append(term)
        if not tokens:
            break
        expect(lambda t: t == "+", "'+'")

    return FormulaSpec(response=response, terms=tuple(terms), intercept=intercept)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Roles:
    outcome: str
    exposure: str
    mediator: str
    covariates: tuple[str, ...] = ()

    def all_columns(self) -> tuple[str, ...]:
        return (self.outcome, self.exposure, self.mediator) + tuple(self.covariates)


class Dataset:
    """Immutable columns of (outcome, exposure, mediator, covariates).

    The exposure column must be exactly binary (values in {0, 1}); role
    columns must be complete (ingestion drops incomplete rows and records
    the count in ``n_dropped``).
    """

    def __init__(self, columns: Mapping[str, np.ndarray], roles: Roles, n_dropped: int = 0):
        cols: dict[str, np.ndarray] = {}
        n = None
        for name, values in columns.items():
            arr = np.asarray(values, dtype=float)
            if arr.ndim != 1:
                raise DataError(f"column {name!r} is not 1-dimensional")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise DataError(f"column {name!r} has length {arr.shape[0]}, expected {n}")
            arr = arr.copy()
            arr.flags.writeable = False
            cols[name] = arr
        if n is None:
            raise DataError("dataset has no columns")

        missing = [c for c in roles.all_columns() if c not in cols]
        if missing:
            raise DataError(f"missing role column(s): {', '.join(missing)}")
        for name in roles.all_columns():
            if not np.all(np.isfinite(cols[name])):
                raise DataError(f"role column {name!r} contains missing or non-finite values")
        a = cols[roles.exposure]
        if not np.all((a == 0.0) | (a == 1.0)):
            bad = a[~((a == 0.0) | (a == 1.0))][0]
            raise DataError(
                f"exposure column {roles.exposure!r} must be binary 0/1; found value {bad!r}"
            )

        self._columns = cols
        self.roles = roles
        self.n = n
        self.n_dropped = int(n_dropped)

    # -- access ------------------------------------------------------------

    @property
    def columns(self) -> Mapping[str, np.ndarray]:
        return dict(self._columns)

    def column(self, name: str) -> np.ndarray:
        try:
            return self._columns[name]
        except KeyError:
            raise DataError(f"unknown column {name!r}") from None

    @property
    def y(self) -> np.ndarray:
        return self._columns[self.roles.outcome]

    @property
    def a(self) -> np.ndarray:
        return self._columns[self.roles.exposure]

    @property
    def z(self) -> np.ndarray:
        return self._columns[self.roles.mediator]

    # -- derived datasets ----------------------------------------------------

    def with_columns(self, overrides: Mapping[str, np.ndarray]) -> "Dataset":
        """New Dataset with some columns replaced (scalars are broadcast)."""
        cols = dict(self._columns)
        for name, values in overrides.items():
            cols[name] = np.broadcast_to(np.asarray(values, dtype=float), (self.n,))
        return Dataset(cols, self.roles, self.n_dropped)

    def take(self, index: np.ndarray) -> "Dataset":
        """Row subset (used by resampling); drop count is not carried over."""
        return Dataset({k: v[index] for k, v in self._columns.items()}, self.roles, 0)

    def require_estimable(self, need_exposure_variation: bool = True) -> None:
        if self.n < 2:
            raise DataError(f"need at least 2 rows for estimation, have {self.n}")
        if need_exposure_variation and (self.a.min() == self.a.max()):
            raise DataError("exposure column is constant; propensity model cannot be fitted")


def dataset_from_frame(frame: pd.DataFrame, roles: Roles) -> Dataset:
    """Build a Dataset from a DataFrame, complete-case on role columns.

    Rows with missing or non-numeric values in any role column are dropped
    and counted; non-role columns are ignored.
    """
    missing = [c for c in roles.all_columns() if c not in frame.columns]
    if missing:
        raise DataError(f"missing role column(s): {', '.join(missing)}")
    raw = len(frame)
    numeric = {c: pd.to_numeric(frame[c], errors="coerce") for c in roles.all_columns()}
    keep = np.ones(raw, dtype=bool)
    for col in numeric.values():
        keep &= col.notna().to_numpy()
    n_dropped = int(raw - keep.sum())
    if keep.sum() == 0:
        raise DataError("no complete rows remain after dropping missing role values")
    columns = {c: numeric[c].to_numpy(dtype=float)[keep] for c in roles.all_columns()}
    return Dataset(columns, roles, n_dropped=n_dropped)


def load_csv(path, roles: Roles) -> Dataset:
    """Read an RFC-4180-style CSV (header required) into a Dataset."""
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except Exception as exc:  # pragma: no cover - pandas error text varies
        raise DataError(f"could not parse {path}: {exc}") from exc
    return dataset_from_frame(frame, roles)


# ---------------------------------------------------------------------------
# Design matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    term_names: tuple[str, ...]
    spec: FormulaSpec

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def build_design(spec: FormulaSpec, data: Dataset) -> DesignMatrix:
    """Assemble the n x p design for ``spec``: intercept, then terms in order.

    An interaction column is the elementwise product of its parent columns.
    Rank deficiency is not checked here; the fitters handle it.
    """
    cols: list[np.ndarray] = []
    names: list[str] = []
    if spec.intercept:
        cols.append(np.ones(data.n))
        names.append("intercept")
    for term in spec.terms:
        col = data.column(term[0])
        for name in term[1:]:
            col = col * data.column(name)
        cols.append(col)
        names.append(":".join(term))
    X = np.column_stack(cols) if cols else np.empty((data.n, 0))
    X.flags.writeable = False
    return DesignMatrix(X=X, term_names=tuple(names), spec=spec)
