"""Formula grammar: parsing, canonicalization, rendering, error offsets."""

import numpy as np
import pytest

from piie.data import FormulaError, FormulaSpec, parse_formula


def test_parse_main_effects_and_interaction():
    spec = parse_formula("y ~ a + z + a:z + c1")
    assert spec.response == "y"
    assert spec.terms == (("a",), ("z",), ("a", "z"), ("c1",))
    assert spec.intercept


def test_parse_intercept_only():
    spec = parse_formula("z ~ 1")
    assert spec == FormulaSpec(response="z", terms=(), intercept=True)


def test_duplicate_term_rejected():
    with pytest.raises(FormulaError, match="duplicate term"):
        parse_formula("y ~ a + a")


def test_duplicate_after_canonicalization_rejected():
    with pytest.raises(FormulaError, match="duplicate term"):
        parse_formula("y ~ a:z + z:a")


def test_interaction_order_normalized():
    assert parse_formula("y ~ z:a").terms == (("a", "z"),)


def test_three_way_interaction():
    assert parse_formula("y ~ a:z:c").terms == (("a", "c", "z"),)


@pytest.mark.parametrize("text", ["y ~ 0 + a", "y ~ -1 + a", "y ~ a + 0"])
def test_intercept_removal(text):
    spec = parse_formula(text)
    assert not spec.intercept
    assert spec.terms == (("a",),)


def test_unknown_token_reports_offset():
    with pytest.raises(FormulaError, match="offset 6") as err:
        parse_formula("y ~ a * z")
    assert err.value.offset == 6


def test_truncated_formula_reports_end_offset():
    text = "y ~ a +"
    with pytest.raises(FormulaError, match="end of input") as err:
        parse_formula(text)
    assert err.value.offset == len(text)


def test_missing_tilde():
    with pytest.raises(FormulaError, match="expected '~'"):
        parse_formula("y a")


def test_response_must_be_name():
    with pytest.raises(FormulaError):
        parse_formula("1 ~ a")


def test_render_examples():
    assert parse_formula("y ~ a + z:a + c1").render() == "y ~ a + a:z + c1"
    assert parse_formula("z ~ 1").render() == "z ~ 1"
    assert parse_formula("y ~ 0 + a").render() == "y ~ 0 + a"


def _random_spec(rng) -> FormulaSpec:
    names = ["a", "z", "c1", "c2", "c3", "x_1", "w.2"]
    terms, seen = [], set()
    for _ in range(rng.integers(0, 6)):
        order = rng.integers(1, 4)
        term = tuple(sorted(rng.choice(names, size=order, replace=False)))
        if term not in seen:
            seen.add(term)
            terms.append(term)
    return FormulaSpec(
        response=str(rng.choice(names)), terms=tuple(terms), intercept=bool(rng.integers(0, 2))
    )


def test_render_parse_round_trip():
    rng = np.random.default_rng(42)
    for _ in range(300):
        spec = _random_spec(rng)
        if not spec.terms and not spec.intercept:
            continue  # empty right-hand side has no rendering
        assert parse_formula(spec.render()) == spec


def test_columns_listing():
    spec = parse_formula("y ~ a + a:z + c1")
    assert spec.columns() == ("a", "z", "c1")
