"""Dataset ingestion and design-matrix construction."""

import numpy as np
import pytest

from piie.data import (
    DataError,
    Dataset,
    Roles,
    build_design,
    load_csv,
    parse_formula,
)

ROLES = Roles(outcome="y", exposure="a", mediator="z", covariates=("c1",))


def write(tmp_path, text):
    path = tmp_path / "data.csv"
    path.write_text(text)
    return path


def test_load_csv_basic(tmp_path):
    path = write(tmp_path, "y,a,z,c1\n1,0,2.5,1\n2,1,3.5,0\n3,0,1.0,1\n4,1,0.5,0\n5,0,2.0,1\n")
    data = load_csv(path, ROLES)
    assert data.n == 5
    assert data.n_dropped == 0
    assert np.allclose(data.y, [1, 2, 3, 4, 5])


def test_load_csv_non_binary_exposure(tmp_path):
    path = write(tmp_path, "y,a,z,c1\n1,0,2,1\n2,2,3,0\n")
    with pytest.raises(DataError, match="binary"):
        load_csv(path, ROLES)


def test_load_csv_drops_incomplete_rows(tmp_path):
    path = write(tmp_path, "y,a,z,c1\n1,0,2,1\n2,1,,0\n3,0,1,1\n4,1,2,0\n5,0,3,1\n")
    data = load_csv(path, ROLES)
    assert data.n == 4
    assert data.n_dropped == 1


def test_dropped_row_accounting(tmp_path):
    rows = ["y,a,z,c1"]
    rng = np.random.default_rng(0)
    raw = 60
    for i in range(raw):
        z = "" if rng.random() < 0.2 else f"{rng.normal():.3f}"
        rows.append(f"{rng.normal():.3f},{i % 2},{z},{i % 3 == 0:d}")
    data = load_csv(write(tmp_path, "\n".join(rows) + "\n"), ROLES)
    assert data.n + data.n_dropped == raw


def test_load_csv_missing_column(tmp_path):
    path = write(tmp_path, "y,a,z\n1,0,2\n")
    with pytest.raises(DataError, match="c1"):
        load_csv(path, ROLES)


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_csv(tmp_path / "nope.csv", ROLES)


def make_data(**cols):
    n = len(next(iter(cols.values())))
    base = {"y": np.zeros(n), "a": np.arange(n) % 2, "z": np.ones(n), "c1": np.zeros(n)}
    base.update(cols)
    return Dataset(base, ROLES)


def test_build_design_interaction_row():
    data = make_data(a=np.array([1.0]), z=np.array([3.0]), y=np.array([0.0]), c1=np.array([0.0]))
    design = build_design(parse_formula("y ~ a + z + a:z"), data)
    assert np.array_equal(design.X[0], [1.0, 1.0, 3.0, 3.0])
    assert design.term_names == ("intercept", "a", "z", "a:z")


def test_build_design_intercept_only():
    data = make_data(y=np.zeros(4))
    design = build_design(parse_formula("y ~ 1"), data)
    assert design.X.shape == (4, 1)
    assert np.array_equal(design.X, np.ones((4, 1)))


def test_build_design_unknown_column():
    data = make_data(y=np.zeros(3))
    with pytest.raises(DataError, match="c9"):
        build_design(parse_formula("y ~ c9"), data)


def test_build_design_deterministic():
    rng = np.random.default_rng(1)
    data = make_data(y=rng.normal(size=20), z=rng.normal(size=20), c1=rng.normal(size=20))
    spec = parse_formula("y ~ a + z + a:z + c1")
    first = build_design(spec, data).X
    second = build_design(spec, data).X
    assert np.array_equal(first, second)  # bit-identical


def test_exposure_binary_enforced():
    with pytest.raises(DataError, match="binary"):
        make_data(a=np.array([0.0, 0.5, 1.0]), y=np.zeros(3))


def test_role_column_missing_values_rejected():
    with pytest.raises(DataError, match="missing or non-finite"):
        make_data(z=np.array([1.0, np.nan, 2.0]), y=np.zeros(3))


def test_with_columns_and_take():
    data = make_data(y=np.arange(6.0))
    shifted = data.with_columns({"y": data.y + 1})
    assert np.array_equal(shifted.y, np.arange(6.0) + 1)
    assert np.array_equal(data.y, np.arange(6.0))  # original untouched
    sub = data.take(np.array([0, 2, 4]))
    assert sub.n == 3 and np.array_equal(sub.y, [0.0, 2.0, 4.0])


def test_require_estimable():
    tiny = make_data(y=np.zeros(1), a=np.array([1.0]))
    with pytest.raises(DataError, match="at least 2 rows"):
        tiny.require_estimable()
    constant = make_data(y=np.zeros(4), a=np.ones(4))
    with pytest.raises(DataError, match="constant"):
        constant.require_estimable(need_exposure_variation=True)
    constant.require_estimable(need_exposure_variation=False)
