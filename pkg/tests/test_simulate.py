import csv
import json

import numpy as np
import pytest

from hbart.errors import DataError
from hbart.priors import Hyperparams
from hbart.simulate import (
    FIGURE_COLUMNS,
    DGPSpec,
    child_seed,
    emit_plot_data,
    generate,
    interval_coverage,
    replicate,
    rmse_benchmark,
    true_mean,
    true_variance,
)

QUICK = Hyperparams(m=10, n_burn=20, n_post=40)


def test_univariate_formulas():
    X = np.array([[0.0], [1.0]])
    np.testing.assert_allclose(true_mean("univariate_hetero", X), [0.0, 100.0])
    np.testing.assert_allclose(true_variance("univariate_hetero", X), [1.0, np.exp(7.0)])
    assert true_variance("univariate_hetero", X)[1] == pytest.approx(1096.633, rel=1e-6)
    np.testing.assert_array_equal(true_variance("univariate_homo", X), [25.0, 25.0])


def test_multivariate_formulas():
    X = np.array([[0.0, 10.0, 0.0]])
    assert true_mean("multivariate_hetero", X)[0] == pytest.approx(-52.0)
    assert true_variance("multivariate_hetero", X)[0] == pytest.approx(np.exp(-6.0))
    assert true_variance("multivariate_homo", X)[0] == 9.0


def test_multivariate_variance_ignores_x2():
    r = np.random.default_rng(0)
    X = np.column_stack([r.uniform(0, 400, 50), r.uniform(10, 23, 50), r.uniform(0, 10, 50)])
    X2 = X.copy()
    X2[:, 1] = r.uniform(10, 23, 50)
    np.testing.assert_array_equal(true_variance("multivariate_hetero", X), true_variance("multivariate_hetero", X2))


def test_generate_univariate_grid():
    ds, f, var = generate(DGPSpec("univariate_hetero", 11, seed=1))
    np.testing.assert_allclose(ds.X[:, 0], np.linspace(0, 1, 11))
    held, _, _ = generate(DGPSpec("univariate_hetero", 10, seed=1), held_out=True)
    np.testing.assert_allclose(held.X[:, 0], (np.arange(10) + 0.5) / 10)
    assert ds.z_names == ("x1",)


def test_generate_multivariate_covariate_ranges():
    ds, f, var = generate(DGPSpec("multivariate_hetero", 500, seed=2))
    assert ds.p == 3 and ds.k == 3
    np.testing.assert_array_equal(ds.Z, ds.X)
    lo, hi = ds.X.min(axis=0), ds.X.max(axis=0)
    assert np.all(lo >= [0, 10, 0]) and np.all(hi <= [400, 23, 10])


def test_generate_is_reproducible():
    a = generate(DGPSpec("multivariate_homo", 30, seed=9))
    b = generate(DGPSpec("multivariate_homo", 30, seed=9))
    np.testing.assert_array_equal(a[0].y, b[0].y)
    np.testing.assert_array_equal(a[0].X, b[0].X)
    c = generate(DGPSpec("multivariate_homo", 30, seed=10))
    assert not np.array_equal(a[0].y, c[0].y)


def test_zero_noise_returns_mean():
    ds, f, var = generate(DGPSpec("univariate_homo", 20, seed=0, noise_scale=0.0))
    np.testing.assert_array_equal(ds.y, f)
    assert np.all(var == 0)


def test_spec_validation():
    with pytest.raises(DataError):
        DGPSpec("cubic")
    with pytest.raises(DataError):
        DGPSpec("univariate_homo", n=5)


def test_child_seeds_differ_and_repeat():
    assert child_seed(1, 2, 3) == child_seed(1, 2, 3)
    assert len({child_seed(1, r) for r in range(50)}) == 50


def test_interval_coverage_edge_cases():
    x = np.linspace(0, 1, 10)
    y = np.arange(10.0)
    wide = np.column_stack([np.full(10, -np.inf), np.full(10, np.inf)])
    assert interval_coverage(wide, y, x, [0, 0.5, 1]) == [1.0, 1.0]
    zero = np.column_stack([y + 0.5, y + 0.5])
    assert interval_coverage(zero, y, x, [0, 0.5, 1]) == [0.0, 0.0]
    with pytest.raises(DataError):
        interval_coverage(wide, y, x, [-1, 0, 0.5, 1])


def test_interval_coverage_counts_by_bin():
    x = np.array([0.1, 0.2, 0.6, 0.9, 1.0])
    y = np.zeros(5)
    iv = np.array([[-1, 1], [1, 2], [-1, 1], [-1, 1], [1, 2]], float)
    assert interval_coverage(iv, y, x, [0, 0.5, 1]) == [0.5, pytest.approx(2 / 3)]


def test_emit_plot_data_schema(tmp_path):
    cols = FIGURE_COLUMNS["fig1b"]
    art = {c: np.arange(4.0) for c in cols}
    n = emit_plot_data(art, "fig1b", tmp_path / "f.csv")
    with open(tmp_path / "f.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y_obs", "f_true", "hbart_lo", "hbart_hi", "bart_lo", "bart_hi"]
    assert n == len(rows) - 1 == 4
    with pytest.raises(DataError):
        emit_plot_data(art, "fig9", tmp_path / "g.csv")
    with pytest.raises(DataError):
        emit_plot_data({"x": [1]}, "fig1b", tmp_path / "g.csv")


def test_rmse_benchmark_is_paired_and_deterministic():
    spec = DGPSpec("multivariate_homo", 60)
    a = rmse_benchmark(spec, 2, QUICK, seed=5, n_test=40)
    b = rmse_benchmark(spec, 2, QUICK, seed=5, n_test=40)
    assert a == b
    assert [r["rep"] for r in a] == [0, 1]
    for r in a:
        assert r["rmse_hbart"] > 0 and r["rmse_bart"] > 0


def test_noise_free_benchmark_is_small():
    spec = DGPSpec("univariate_homo", 100, noise_scale=0.0)
    rows = rmse_benchmark(spec, 1, Hyperparams(m=20, n_burn=100, n_post=100), seed=1)
    test, _, _ = generate(DGPSpec("univariate_homo", 100, seed=1, noise_scale=0.0), held_out=True)
    bound = np.std(test.y) / 10
    assert rows[0]["rmse_hbart"] < bound and rows[0]["rmse_bart"] < bound


def test_replicate_manifest(tmp_path):
    res = replicate(3, tmp_path, reps=2, hyper=QUICK, n_uni=40, n_grid=40, n_multi=40, pi_reps=100)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["fig1a.csv", "fig1b.csv", "fig1c.csv", "fig1d.csv", "fig2.csv", "fig3a.csv", "fig3b.csv", "results.json"]
    on_disk = json.loads((tmp_path / "results.json").read_text())
    assert len(on_disk["gamma_interval"]) == 2
    assert set(on_disk["rmse"]) == {"multivariate_hetero", "multivariate_homo"}
    assert on_disk["coverage"][0].keys() == {"rep", "hbart", "bart"}
    assert res["seed"] == 3
    with open(tmp_path / "fig2.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(FIGURE_COLUMNS["fig2"]) and len(rows) == 1 + 2 * 40
