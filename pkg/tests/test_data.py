import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hbart.data import (
    Dataset,
    ScalingTransform,
    VarianceDesignSpec,
    VarianceTerm,
    build_variance_design,
    load_csv,
    scale_response,
    unscale_variance,
)
from hbart.errors import (
    ConstantResponseError,
    DataError,
    DegenerateColumnError,
    MissingColumnError,
    NonNumericError,
    TooFewRowsError,
)


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_scaling_maps_range_to_half_interval():
    s, t = scale_response([3.0, 5.0, 7.0])
    assert s.tolist() == [-0.5, 0.0, 0.5]
    assert t.width == 4.0


def test_unscale_of_zero_is_midpoint():
    t = ScalingTransform(-2.0, 10.0)
    assert t.unscale(0.0) == 4.0


@given(arrays(float, st.integers(2, 30), elements=st.floats(-1e6, 1e6)))
def test_scaling_round_trip(y):
    if np.ptp(y) < 1e-3:
        return
    s, t = scale_response(y)
    assert s.min() == pytest.approx(-0.5) and s.max() == pytest.approx(0.5)
    np.testing.assert_allclose(t.unscale(s), y, rtol=1e-9, atol=1e-6)


def test_unscale_variance_multiplies_squared_width():
    t = ScalingTransform(0.0, 3.0)
    assert unscale_variance(2.0, t) == pytest.approx(18.0)
    with pytest.raises(DataError):
        unscale_variance(-1.0, t)


def test_constant_response_rejected():
    with pytest.raises(ConstantResponseError):
        Dataset.from_arrays(np.ones(5), np.arange(5.0))


def test_dataset_arrays_are_read_only(toy_dataset):
    with pytest.raises(ValueError):
        toy_dataset.X[0, 0] = 1.0
    assert toy_dataset.n == 40 and toy_dataset.p == 2 and toy_dataset.k == 2


def test_default_variance_design_is_x(toy_dataset):
    np.testing.assert_array_equal(toy_dataset.Z, toy_dataset.X)
    assert toy_dataset.z_names == ("x1", "x2")


def test_non_finite_values_rejected():
    X = np.arange(6.0)
    y = np.arange(6.0)
    y[2] = np.nan
    with pytest.raises(DataError):
        Dataset.from_arrays(y, X)


def test_constant_variance_column_rejected():
    X = np.column_stack([np.arange(6.0), np.ones(6)])
    with pytest.raises(DegenerateColumnError):
        Dataset.from_arrays(np.arange(6.0), X)


def test_variance_term_parsing():
    t = VarianceTerm.parse("age^2")
    assert t.column == "age" and t.power == 2
    assert str(t) == "age^2"
    assert VarianceTerm.parse("age").power == 1
    with pytest.raises(DataError):
        VarianceTerm.parse("age^0")


def test_polynomial_design_orthogonal_on_training_rows():
    x = np.linspace(0, 1, 50)
    spec = VarianceDesignSpec.from_strings(["x1", "x1^2", "x1^3"], orthogonalize=True)
    Z, basis = build_variance_design(x[:, None], spec, {"x1": x})
    G = Z.T @ Z
    off = G - np.diag(np.diag(G))
    assert np.abs(off).max() < 1e-9 * np.abs(np.diag(G)).max()
    # first column is untouched
    np.testing.assert_allclose(Z[:, 0], x)
    # query rows reuse the training coefficients instead of re-orthogonalizing
    np.testing.assert_allclose(basis.transform(x[:, None], {"x1": x}), Z)
    xq = np.array([0.25, 2.0])
    Zq = basis.transform(xq[:, None], {"x1": xq})
    raw = np.column_stack([xq, xq**2, xq**3])
    assert Zq.shape == (2, 3)
    np.testing.assert_allclose(Zq[:, 0], raw[:, 0])
    assert not np.allclose(Zq[:, 1], raw[:, 1])


def test_collinear_orthogonalized_terms_rejected():
    x = np.linspace(0, 1, 20)
    spec = VarianceDesignSpec((VarianceTerm("a"), VarianceTerm("b")), orthogonalize=True)
    with pytest.raises(DegenerateColumnError):
        build_variance_design(None, spec, {"a": x, "b": 3 * x})


def test_basis_round_trip():
    x = np.linspace(1, 2, 30)
    spec = VarianceDesignSpec.from_strings(["x1", "x1^2"], orthogonalize=True)
    Z, basis = build_variance_design(x[:, None], spec, {"x1": x})
    again = type(basis).from_dict(basis.to_dict())
    np.testing.assert_array_equal(again.transform(None, {"x1": x}), Z)


def test_load_csv_with_extra_variance_column(tmp_path):
    rows = [(i, 2 * i + (i % 3), i % 4, i * 0.5) for i in range(12)]
    path = write_csv(tmp_path / "d.csv", ["a", "y", "b", "c"], rows)
    ds = load_csv(path, "y", ["a", "b"], VarianceDesignSpec.from_strings(["c"]))
    assert ds.x_names == ("a", "b") and ds.z_names == ("c",)
    np.testing.assert_array_equal(ds.Z[:, 0], [r[3] for r in rows])


def test_load_csv_missing_column_names_it(tmp_path):
    path = write_csv(tmp_path / "d.csv", ["x", "y"], [(1, 2), (2, 3), (3, 5)])
    with pytest.raises(MissingColumnError) as err:
        load_csv(path, "y", ["x", "w"])
    assert "'w'" in str(err.value) and "d.csv" in str(err.value)


def test_load_csv_non_numeric_cell_reports_row(tmp_path):
    path = write_csv(tmp_path / "d.csv", ["x", "y"], [(1, 2), (2, "abc"), (3, 5)])
    with pytest.raises(NonNumericError) as err:
        load_csv(path, "y", ["x"])
    assert "row 3" in str(err.value) and "'y'" in str(err.value)


def test_load_csv_too_few_rows(tmp_path):
    path = write_csv(tmp_path / "d.csv", ["x", "y"], [(1, 2)])
    with pytest.raises(TooFewRowsError):
        load_csv(path, "y", ["x"])
