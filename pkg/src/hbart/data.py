"""Datasets, variance-model design matrices and response scaling."""

from __future__ import annotations

import csv
import math
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConstantResponseError,
    DataError,
    DegenerateColumnError,
    MissingColumnError,
    NonNumericError,
    TooFewRowsError,
)

_TERM_RE = re.compile(r"^\s*(?P<col>[^\^]+?)\s*(?:\^\s*(?P<pow>\d+)\s*)?$")


@dataclass(frozen=True)
class VarianceTerm:
    """One column of the variance design: ``column ** power``.

    ``column`` is either a column name or an integer index into the
    mean-model matrix.
    """

    column: str | int
    power: int = 1

    def __post_init__(self):
        if self.power < 1 or int(self.power) != self.power:
            raise DataError(f"variance term exponent must be a positive integer, got {self.power}")

    @classmethod
    def parse(cls, text: str) -> VarianceTerm:
        """Parse ``"x1"`` or ``"x1^2"``."""
        match = _TERM_RE.match(text)
        if match is None:
            raise DataError(f"cannot parse variance term {text!r}")
        power = int(match["pow"]) if match["pow"] else 1
        if match["pow"] and power < 2:
            raise DataError(f"explicit exponent must be >= 2 in {text!r}")
        return cls(match["col"], power)

    def __str__(self):
        return f"{self.column}" if self.power == 1 else f"{self.column}^{self.power}"


@dataclass(frozen=True)
class VarianceDesignSpec:
    terms: tuple[VarianceTerm, ...]
    orthogonalize: bool = False

    def __post_init__(self):
        if not self.terms:
            raise DataError("variance design needs at least one term")
        object.__setattr__(self, "terms", tuple(self.terms))

    @classmethod
    def from_strings(cls, terms: Sequence[str], orthogonalize: bool = False) -> VarianceDesignSpec:
        return cls(tuple(VarianceTerm.parse(t) for t in terms), orthogonalize)

    def to_strings(self) -> list[str]:
        return [str(t) for t in self.terms]


@dataclass(frozen=True)
class VarianceBasis:
    """A variance design fitted on training data.

    Holds the successive-projection coefficients so that query rows are
    mapped into exactly the training basis (never re-orthogonalized).
    ``proj[i, j]`` (``i < j``) is the coefficient of orthogonalized
    column ``i`` removed from raw column ``j``.
    """

    spec: VarianceDesignSpec
    proj: np.ndarray

    @property
    def names(self) -> list[str]:
        return self.spec.to_strings()

    def raw_columns(self, X: np.ndarray | None, columns: Mapping[str, np.ndarray] | None) -> np.ndarray:
        cols = []
        for term in self.spec.terms:
            if isinstance(term.column, (int, np.integer)):
                if X is None or not 0 <= term.column < X.shape[1]:
                    raise DataError(f"variance term index {term.column} out of range")
                base = np.asarray(X[:, term.column], dtype=float)
            else:
                if columns is None or term.column not in columns:
                    raise MissingColumnError(term.column)
                base = np.asarray(columns[term.column], dtype=float)
            cols.append(base**term.power)
        return np.column_stack(cols)

    def transform(self, X: np.ndarray | None = None, columns: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
        """Build Z for new rows using the training projection coefficients."""
        Z = self.raw_columns(X, columns)
        k = Z.shape[1]
        for j in range(k):
            for i in range(j):
                Z[:, j] -= self.proj[i, j] * Z[:, i]
        return Z

    def to_dict(self) -> dict:
        return {
            "terms": self.spec.to_strings(),
            "term_columns": [t.column for t in self.spec.terms],
            "orthogonalize": self.spec.orthogonalize,
            "proj": self.proj.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> VarianceBasis:
        terms = tuple(
            VarianceTerm(col, VarianceTerm.parse(s).power)
            for col, s in zip(d["term_columns"], d["terms"])
        )
        return cls(VarianceDesignSpec(terms, d["orthogonalize"]), np.asarray(d["proj"], dtype=float))


def build_variance_design(
    X: np.ndarray | None,
    spec: VarianceDesignSpec,
    columns: Mapping[str, np.ndarray] | None = None,
) -> tuple[np.ndarray, VarianceBasis]:
    """Construct the heteroskedasticity design matrix Z.

    Parameters
    ----------
    X
        Mean-model matrix; integer term columns index into it.
    spec
        Column constructors and the orthogonalization flag.
    columns
        Named columns available for string term columns.

    Returns
    -------
    Z, basis
        The design (one column per term, in order) and the fitted basis
        used to rebuild Z on query rows.

    Raises
    ------
    DegenerateColumnError
        If a column is constant, or vanishes after removing its projection
        on the earlier columns.
    """
    k = len(spec.terms)
    basis = VarianceBasis(spec, np.zeros((k, k)))
    Z = basis.raw_columns(X, columns)
    for j in range(k):
        if not np.all(np.isfinite(Z[:, j])):
            raise DataError(f"variance column {spec.terms[j]} has non-finite entries")
        if np.ptp(Z[:, j]) == 0:
            raise DegenerateColumnError(f"variance column {spec.terms[j]} is constant")
    proj = np.zeros((k, k))
    if spec.orthogonalize:
        for j in range(k):
            norm0 = np.linalg.norm(Z[:, j])
            for i in range(j):
                proj[i, j] = Z[:, i] @ Z[:, j] / (Z[:, i] @ Z[:, i])
                Z[:, j] -= proj[i, j] * Z[:, i]
            # one re-projection pass keeps inner products at rounding level
            for i in range(j):
                extra = Z[:, i] @ Z[:, j] / (Z[:, i] @ Z[:, i])
                proj[i, j] += extra
                Z[:, j] -= extra * Z[:, i]
            if np.linalg.norm(Z[:, j]) <= 1e-10 * norm0 or np.ptp(Z[:, j]) <= 1e-12 * norm0:
                raise DegenerateColumnError(
                    f"variance column {spec.terms[j]} is degenerate after orthogonalization"
                )
    basis = VarianceBasis(spec, proj)
    # rebuild through transform so training and query rows share one code path
    return basis.transform(X, columns), basis


@dataclass(frozen=True)
class ScalingTransform:
    """Affine map sending the training response range onto [-0.5, 0.5]."""

    y_min: float
    y_max: float

    def __post_init__(self):
        if not self.y_max > self.y_min:
            raise ConstantResponseError("response is constant; cannot scale")

    @property
    def width(self) -> float:
        return self.y_max - self.y_min

    def scale(self, y):
        return (np.asarray(y, dtype=float) - self.y_min) / self.width - 0.5

    def unscale(self, s):
        return (np.asarray(s, dtype=float) + 0.5) * self.width + self.y_min


def scale_response(y) -> tuple[np.ndarray, ScalingTransform]:
    y = np.asarray(y, dtype=float)
    t = ScalingTransform(float(y.min()), float(y.max()))
    return t.scale(y), t


def unscale_variance(v_scaled, t: ScalingTransform):
    """Express a variance on the scaled response back on the original scale."""
    v = np.asarray(v_scaled, dtype=float)
    if np.any(v < 0):
        raise DataError("variance must be non-negative")
    out = v * t.width**2
    return float(out) if out.ndim == 0 else out


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Training data for one fit. Arrays are read-only after construction."""

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    x_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()
    response_name: str = "y"
    basis: VarianceBasis | None = field(default=None, compare=False)

    def __post_init__(self):
        y = _frozen(np.ravel(self.y))
        X = _frozen(np.atleast_2d(self.X) if np.ndim(self.X) == 2 else np.reshape(self.X, (-1, 1)))
        Z = _frozen(np.atleast_2d(self.Z) if np.ndim(self.Z) == 2 else np.reshape(self.Z, (-1, 1)))
        n = y.shape[0]
        if n < 2:
            raise TooFewRowsError(f"need at least 2 rows, got {n}")
        if X.shape[0] != n or Z.shape[0] != n:
            raise DataError(f"row counts differ: y {n}, X {X.shape[0]}, Z {Z.shape[0]}")
        for name, a in (("y", y), ("X", X), ("Z", Z)):
            if not np.all(np.isfinite(a)):
                raise DataError(f"{name} contains non-finite values")
        for j in range(Z.shape[1]):
            if np.ptp(Z[:, j]) == 0:
                raise DegenerateColumnError(f"Z column {j} is constant; the intercept lives in sigma^2")
        if np.ptp(y) == 0:
            raise ConstantResponseError("response is constant")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{j + 1}" for j in range(X.shape[1])))
        if not self.z_names:
            object.__setattr__(self, "z_names", tuple(f"z{j + 1}" for j in range(Z.shape[1])))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def k(self) -> int:
        return self.Z.shape[1]

    @property
    def scaling(self) -> ScalingTransform:
        return ScalingTransform(float(self.y.min()), float(self.y.max()))

    @property
    def y_scaled(self) -> np.ndarray:
        return self.scaling.scale(self.y)

    @classmethod
    def from_arrays(
        cls,
        y,
        X,
        var_spec: VarianceDesignSpec | None = None,
        x_names: Sequence[str] | None = None,
        columns: Mapping[str, np.ndarray] | None = None,
        response_name: str = "y",
    ) -> Dataset:
        """Build a dataset, constructing Z from ``var_spec`` (default Z = X)."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        x_names = tuple(x_names) if x_names else tuple(f"x{j + 1}" for j in range(X.shape[1]))
        named = {name: X[:, j] for j, name in enumerate(x_names)}
        if columns:
            named.update(columns)
        if var_spec is None:
            var_spec = VarianceDesignSpec(tuple(VarianceTerm(name) for name in x_names))
        Z, basis = build_variance_design(X, var_spec, named)
        return cls(y, X, Z, x_names, tuple(basis.names), response_name, basis)


def read_csv_columns(path: str | Path, names: Sequence[str]) -> dict[str, np.ndarray]:
    """Read the named columns of a headed CSV file as float arrays."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        pos = {}
        for name in names:
            if name not in header:
                raise MissingColumnError(name, path)
            pos[name] = header.index(name)
        values = {name: [] for name in names}
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            for name, j in pos.items():
                cell = row[j].strip() if j < len(row) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericError(name, row_no, cell, path) from None
                if not math.isfinite(v):
                    raise NonNumericError(name, row_no, cell, path)
                values[name].append(v)
    return {name: np.asarray(v, dtype=float) for name, v in values.items()}


def load_csv(
    path: str | Path,
    response_col: str,
    mean_cols: Sequence[str],
    var_spec: VarianceDesignSpec | None = None,
) -> Dataset:
    """Load a dataset from CSV.

    Variance terms may name any column of the file, not only mean-model
    columns. Without ``var_spec`` the variance design is Z = X.
    """
    needed = [response_col, *mean_cols]
    if var_spec is not None:
        needed += [t.column for t in var_spec.terms if isinstance(t.column, str)]
    cols = read_csv_columns(path, list(dict.fromkeys(needed)))
    y = cols[response_col]
    if y.shape[0] < 2:
        raise TooFewRowsError(f"{path}: need at least 2 data rows, got {y.shape[0]}")
    X = np.column_stack([cols[c] for c in mean_cols])
    return Dataset.from_arrays(y, X, var_spec, mean_cols, cols, response_col)
