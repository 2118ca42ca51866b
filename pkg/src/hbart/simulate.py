"""Simulated benchmark data, RMSE and coverage studies, and plot data."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import DataError
from .gibbs import PosteriorDraws, fit
from .posterior import credible_interval, design_matrix, predict_mean, predictive_interval
from .priors import Hyperparams

log = logging.getLogger(__name__)

KINDS = ("univariate_hetero", "univariate_homo", "multivariate_hetero", "multivariate_homo")

FIGURE_COLUMNS = {
    "fig1a": ("x", "y_obs", "f_true", "hbart_mean", "bart_mean"),
    "fig1b": ("x", "y_obs", "f_true", "hbart_lo", "hbart_hi", "bart_lo", "bart_hi"),
    "fig1c": ("x", "y_obs", "f_true", "hbart_mean", "bart_mean"),
    "fig1d": ("x", "y_obs", "f_true", "hbart_lo", "hbart_hi", "bart_lo", "bart_hi"),
    "fig2": ("series", "f_true", "f_hat", "lo", "hi", "covered"),
    "fig3a": ("rep", "rmse_hbart", "rmse_bart"),
    "fig3b": ("rep", "rmse_hbart", "rmse_bart"),
}

# stream labels for deriving independent child seeds
_TRAIN, _TEST, _FIT_HBART, _FIT_BART, _INTERVALS = range(5)


@dataclass(frozen=True)
class DGPSpec:
    """One of the four simulated data-generating processes.

    ``noise_scale`` multiplies the error standard deviation; 0 gives
    noise-free responses.
    """

    kind: str
    n: int = 250
    seed: int = 0
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown DGP kind {self.kind!r}; choose from {KINDS}")
        if self.n < 10:
            raise DataError("DGP needs n >= 10")
        if self.noise_scale < 0:
            raise DataError("noise_scale must be non-negative")

    @property
    def univariate(self) -> bool:
        return self.kind.startswith("univariate")


def child_seed(seed: int, *path: int) -> int:
    """Deterministic 63-bit seed for the stream named by ``path``."""
    ss = np.random.SeedSequence([int(seed), *map(int, path)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def true_mean(kind: str, X: np.ndarray) -> np.ndarray:
    if kind.startswith("univariate"):
        return 100.0 * X[:, 0]
    return -35.0 + 0.35 * X[:, 0] - 1.7 * X[:, 1]


def true_variance(kind: str, X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    if kind == "univariate_hetero":
        return np.exp(7.0 * X[:, 0])
    if kind == "univariate_homo":
        return np.full(n, 25.0)
    if kind == "multivariate_hetero":
        return np.exp(-6.0 + 0.03 * X[:, 0] + 0.4 * X[:, 2])
    return np.full(n, 9.0)


def generate(spec: DGPSpec, held_out: bool = False) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Draw a dataset from ``spec``.

    Univariate designs use the evenly spaced grid on [0, 1]; with
    ``held_out`` the grid is shifted to cell midpoints so no point coincides
    with a training location. Multivariate covariates are drawn iid.

    Returns
    -------
    dataset, true_f, true_var
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    if spec.univariate:
        x = (np.arange(n) + 0.5) / n if held_out else np.linspace(0.0, 1.0, n)
        X = x[:, None]
    else:
        X = np.column_stack([rng.uniform(0, 400, n), rng.uniform(10, 23, n), rng.uniform(0, 10, n)])
    f = true_mean(spec.kind, X)
    var = true_variance(spec.kind, X) * spec.noise_scale**2
    y = f + np.sqrt(var) * rng.standard_normal(n)
    return Dataset.from_arrays(y, X), f, var


def rmse(a, b) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.sqrt(np.mean(d * d)))


def fit_pair(train: Dataset, hyper: Hyperparams, seed: int, path: tuple = ()) -> tuple[PosteriorDraws, PosteriorDraws]:
    """Fit HBART and the gamma-pinned baseline on the same data."""
    hbart = fit(train, replace(hyper, pin_gamma=False), seed=child_seed(seed, *path, _FIT_HBART))
    bart = fit(train, replace(hyper, pin_gamma=True), seed=child_seed(seed, *path, _FIT_BART))
    return hbart, bart


def rmse_benchmark(
    spec: DGPSpec,
    n_reps: int,
    hyper: Hyperparams | None = None,
    seed: int = 0,
    n_test: int | None = None,
    keep_first: bool = False,
) -> list[dict]:
    """Paired out-of-sample RMSE of HBART and the baseline.

    Each replicate draws fresh train and test sets (the test set has
    ``n_test`` rows, default ``spec.n``) and fits both models to the same
    training data. RMSE is taken against the noisy test response; RMSE
    against the true mean is reported alongside. With ``keep_first`` the
    first replicate's fits and test data are attached under ``"artifacts"``.
    """
    if n_reps < 1:
        raise DataError("n_reps must be >= 1")
    hyper = hyper or Hyperparams()
    n_test = n_test or spec.n
    out = []
    for r in range(n_reps):
        train, _, _ = generate(replace(spec, seed=child_seed(seed, r, _TRAIN)))
        test, f_test, var_test = generate(replace(spec, n=n_test, seed=child_seed(seed, r, _TEST)), held_out=True)
        hbart, bart = fit_pair(train, hyper, seed, (r,))
        mean_h = predict_mean(hbart, test.X)
        mean_b = predict_mean(bart, test.X)
        row = {
            "rep": r,
            "rmse_hbart": rmse(mean_h, test.y),
            "rmse_bart": rmse(mean_b, test.y),
            "rmse_f_hbart": rmse(mean_h, f_test),
            "rmse_f_bart": rmse(mean_b, f_test),
        }
        log.info("%s rep %d: hbart %.4f bart %.4f", spec.kind, r, row["rmse_hbart"], row["rmse_bart"])
        if keep_first and r == 0:
            row["artifacts"] = {"hbart": hbart, "bart": bart, "test": test, "f_test": f_test, "var_test": var_test}
        out.append(row)
    return out


def interval_coverage(intervals, y, x, bins) -> list[float]:
    """Fraction of ``y`` inside ``intervals`` within each bin of ``x``.

    ``bins`` are edges; every bin is half-open except the last, which is
    closed on the right.
    """
    intervals = np.asarray(intervals, dtype=float)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise DataError("bins must be at least two increasing edges")
    inside = (intervals[:, 0] <= y) & (y <= intervals[:, 1])
    cover = []
    for j in range(edges.size - 1):
        hi_ok = x <= edges[j + 1] if j == edges.size - 2 else x < edges[j + 1]
        mask = (x >= edges[j]) & hi_ok
        if not mask.any():
            raise DataError(f"bin [{edges[j]}, {edges[j + 1]}] holds no test points")
        cover.append(float(inside[mask].mean()))
    return cover


def coverage_eval(
    draws: PosteriorDraws,
    test: Dataset,
    bins,
    level: float = 0.9,
    column: int = 0,
    reps: int = 1000,
    rng=None,
) -> list[float]:
    """Per-bin empirical coverage of predictive intervals on a test set.

    Bins partition the range of predictor ``column``.
    """
    Z = design_matrix(draws, test.X)
    pi = predictive_interval(draws, test.X, Z, level, reps, rng)
    return interval_coverage(pi, test.y, test.X[:, column], bins)


def emit_plot_data(artifacts: dict, figure_id: str, path) -> int:
    """Write the data series behind one figure as a CSV file.

    ``artifacts`` maps every column of the figure's schema to an equal-length
    sequence. Returns the number of data rows written.
    """
    if figure_id not in FIGURE_COLUMNS:
        raise DataError(f"unknown figure id {figure_id!r}")
    cols = FIGURE_COLUMNS[figure_id]
    missing = [c for c in cols if c not in artifacts]
    if missing:
        raise DataError(f"{figure_id}: missing series {missing}")
    series = [list(artifacts[c]) for c in cols]
    n = len(series[0])
    if any(len(s) != n for s in series):
        raise DataError(f"{figure_id}: series lengths differ")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in zip(*series):
            w.writerow([_cell(v) for v in row])
    return n


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _univariate_study(kind, reps, hyper, seed, n, n_grid, level, pi_reps, study):
    """Fits, gamma intervals and per-half coverage for a univariate DGP."""
    rows = []
    figs = {}
    for r in range(reps):
        spec = DGPSpec(kind, n, child_seed(seed, study, r, _TRAIN))
        train, f_train, _ = generate(spec)
        grid, _, _ = generate(replace(spec, n=n_grid, seed=child_seed(seed, study, r, _TEST)), held_out=True)
        hbart, bart = fit_pair(train, hyper, seed, (study, r))
        g = hbart.gamma[:, 0]
        lo, hi = np.quantile(g, [(1 - level) / 2, (1 + level) / 2])
        cov_h = coverage_eval(hbart, grid, [0, 0.5, 1], level, reps=pi_reps, rng=child_seed(seed, study, r, _INTERVALS, 0))
        cov_b = coverage_eval(bart, grid, [0, 0.5, 1], level, reps=pi_reps, rng=child_seed(seed, study, r, _INTERVALS, 1))
        x = train.X[:, 0]
        high = x > 0.7
        mean_h, mean_b = predict_mean(hbart, train.X), predict_mean(bart, train.X)
        row = {
            "rep": r,
            "gamma_mean": float(g.mean()),
            "gamma_interval": [float(lo), float(hi)],
            "coverage": {"hbart": cov_h, "bart": cov_b},
            "rmse_f_high_x": {"hbart": rmse(mean_h[high], f_train[high]), "bart": rmse(mean_b[high], f_train[high])},
        }
        log.info("%s rep %d: gamma [%.3f, %.3f] coverage hbart %s bart %s", kind, r, lo, hi, cov_h, cov_b)
        rows.append(row)
        if r == 0:
            pi_h = predictive_interval(hbart, train.X, design_matrix(hbart, train.X), level, pi_reps, child_seed(seed, study, r, _INTERVALS, 2))
            pi_b = predictive_interval(bart, train.X, design_matrix(bart, train.X), level, pi_reps, child_seed(seed, study, r, _INTERVALS, 3))
            base = {"x": x, "y_obs": train.y, "f_true": f_train}
            figs["mean"] = {**base, "hbart_mean": mean_h, "bart_mean": mean_b}
            figs["pi"] = {
                **base,
                "hbart_lo": pi_h[:, 0],
                "hbart_hi": pi_h[:, 1],
                "bart_lo": pi_b[:, 0],
                "bart_hi": pi_b[:, 1],
            }
    return rows, figs


def _fig2(art: dict, level: float) -> dict:
    f = art["f_test"]
    cols = {c: [] for c in FIGURE_COLUMNS["fig2"]}
    for name in ("hbart", "bart"):
        draws = art[name]
        ci = credible_interval(draws, art["test"].X, level)
        mean = predict_mean(draws, art["test"].X)
        cols["series"] += [name] * len(f)
        cols["f_true"] += list(f)
        cols["f_hat"] += list(mean)
        cols["lo"] += list(ci[:, 0])
        cols["hi"] += list(ci[:, 1])
        cols["covered"] += list((ci[:, 0] <= f) & (f <= ci[:, 1]))
    return cols


def _top_decile_widths(art: dict, level: float) -> dict:
    top = art["var_test"] >= np.quantile(art["var_test"], 0.9)
    X = art["test"].X[top]
    out = {}
    for name in ("hbart", "bart"):
        ci = credible_interval(art[name], X, level)
        out[name] = float(np.median(ci[:, 1] - ci[:, 0]))
    return out


def replicate(
    seed: int,
    outdir,
    reps: int = 20,
    hyper: Hyperparams | None = None,
    n_uni: int = 250,
    n_grid: int = 1000,
    n_multi: int = 500,
    level: float = 0.9,
    pi_reps: int = 1000,
) -> dict:
    """Run every simulation study at desk scale and write its outputs.

    Writes fig1a-d, fig2, fig3a-b CSV files and ``results.json`` into
    ``outdir`` and returns the results dictionary. Output depends only on
    the arguments.
    """
    hyper = hyper or Hyperparams()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    uni, figs_hetero = _univariate_study("univariate_hetero", reps, hyper, seed, n_uni, n_grid, level, pi_reps, 1)
    _, figs_homo = _univariate_study("univariate_homo", 1, hyper, seed, n_uni, n_grid, level, pi_reps, 2)
    emit_plot_data(figs_hetero["mean"], "fig1a", outdir / "fig1a.csv")
    emit_plot_data(figs_hetero["pi"], "fig1b", outdir / "fig1b.csv")
    emit_plot_data(figs_homo["mean"], "fig1c", outdir / "fig1c.csv")
    emit_plot_data(figs_homo["pi"], "fig1d", outdir / "fig1d.csv")

    multi = {}
    for study, kind, fig in ((3, "multivariate_hetero", "fig3a"), (4, "multivariate_homo", "fig3b")):
        rows = rmse_benchmark(DGPSpec(kind, n_multi), reps, hyper, child_seed(seed, study), keep_first=True)
        art = rows[0].pop("artifacts")
        if kind == "multivariate_hetero":
            emit_plot_data(_fig2(art, level), "fig2", outdir / "fig2.csv")
            widths = _top_decile_widths(art, level)
        emit_plot_data(
            {
                "rep": [r["rep"] for r in rows],
                "rmse_hbart": [r["rmse_hbart"] for r in rows],
                "rmse_bart": [r["rmse_bart"] for r in rows],
            },
            fig,
            outdir / f"{fig}.csv",
        )
        multi[kind] = rows

    results = {
        "seed": seed,
        "settings": {
            "reps": reps,
            "n_univariate": n_uni,
            "n_grid": n_grid,
            "n_multivariate": n_multi,
            "level": level,
            "predictive_reps": pi_reps,
            "hyperparams": hyper.to_dict(),
        },
        "gamma_true": 7.0,
        "gamma_interval": [r["gamma_interval"] for r in uni],
        "gamma_mean": [r["gamma_mean"] for r in uni],
        "coverage": [{"rep": r["rep"], **r["coverage"]} for r in uni],
        "coverage_bins": [[0.0, 0.5], [0.5, 1.0]],
        "rmse_f_high_x": [r["rmse_f_high_x"] for r in uni],
        "rmse": {kind: rows for kind, rows in multi.items()},
        "credible_width_top_variance_decile": widths,
    }
    text = json.dumps(_jsonable(results), indent=1, sort_keys=True, allow_nan=False)
    (outdir / "results.json").write_text(text + "\n", encoding="utf-8")
    return results


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ValueError("non-finite value in results")
    return obj
