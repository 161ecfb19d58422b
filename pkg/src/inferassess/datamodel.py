"""Core data types, ingestion, and validation.

A :class:`Dataset` is the fixed "empirical design" that an assessment
conditions on: outcomes are regenerated across replicates, everything else
(X, clusters, weights, shares) stays put. Datasets are immutable after
construction and safe to share read-only across parallel workers.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ParseError, SchemaError, ValidationError

_SHARE_ROWSUM_TOL = 1e-8


def _dense_labels(values) -> np.ndarray:
    """Re-encode arbitrary labels to dense integers 0..G-1 in order of first
    appearance (a bijection on distinct values)."""
    arr = np.asarray(values)
    _, first_idx, inverse = np.unique(arr, return_index=True, return_inverse=True)
    # np.unique sorts; remap so the label seen first gets code 0, and so on.
    order = np.argsort(first_idx, kind="stable")
    remap = np.empty(order.size, dtype=np.int64)
    remap[order] = np.arange(order.size)
    return remap[inverse].astype(np.int64)


def _as_float_vector(values, name: str, n: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    if n is not None and arr.shape[0] != n:
        raise ValidationError(f"{name} has length {arr.shape[0]}, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or Inf")
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr and arr.flags.writeable:
        out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Outcome, design matrix, and the optional structure inference methods
    condition on.

    ``cluster_primary`` is the finer grouping (e.g. school), ``cluster_coarse``
    the coarser one (e.g. stratum); when both are present the primary clusters
    must nest inside the coarse ones. ``shares`` (N x F) and ``shocks`` (F,)
    describe a shift-share regressor x_i = sum_f shares[i, f] * shocks[f].
    """

    y: np.ndarray
    X: np.ndarray
    absorb: np.ndarray | None = None
    cluster_primary: np.ndarray | None = None
    cluster_coarse: np.ndarray | None = None
    weights: np.ndarray | None = None
    shares: np.ndarray | None = None
    shocks: np.ndarray | None = None
    shock_cluster: np.ndarray | None = None
    shares_sum_to_one: bool = False

    def __post_init__(self):
        y = _as_float_vector(self.y, "y")
        n = y.shape[0]
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != n:
            raise ValidationError(f"X must be an {n} x K matrix")
        if not np.all(np.isfinite(X)):
            raise ValidationError("X contains NaN or Inf")
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "X", _freeze(X))

        for field in ("absorb", "cluster_primary", "cluster_coarse"):
            labels = getattr(self, field)
            if labels is None:
                continue
            labels = np.asarray(labels)
            if labels.ndim != 1 or labels.shape[0] != n:
                raise ValidationError(f"{field} must have length {n}")
            object.__setattr__(self, field, _freeze(_dense_labels(labels)))

        if self.weights is not None:
            w = _as_float_vector(self.weights, "weights", n)
            if np.any(w <= 0):
                raise ValidationError("weights must be strictly positive")
            object.__setattr__(self, "weights", _freeze(w))

        if self.shares is not None:
            shares = np.asarray(self.shares, dtype=np.float64)
            if shares.ndim != 2 or shares.shape[0] != n:
                raise ValidationError(f"shares must be an {n} x F matrix")
            if not np.all(np.isfinite(shares)):
                raise ValidationError("shares contain NaN or Inf")
            if np.any(shares < 0):
                raise ValidationError("shares must be nonnegative")
            if self.shares_sum_to_one:
                rowsums = shares.sum(axis=1)
                if np.max(np.abs(rowsums - 1.0)) > _SHARE_ROWSUM_TOL:
                    raise ValidationError("share rows declared to sum to 1 do not")
            object.__setattr__(self, "shares", _freeze(shares))

        n_sectors = None if self.shares is None else self.shares.shape[1]
        if self.shocks is not None:
            if n_sectors is None:
                raise ValidationError("shocks require shares")
            shocks = _as_float_vector(self.shocks, "shocks", n_sectors)
            object.__setattr__(self, "shocks", _freeze(shocks))
        if self.shock_cluster is not None:
            if n_sectors is None:
                raise ValidationError("shock_cluster requires shares")
            sc = np.asarray(self.shock_cluster)
            if sc.ndim != 1 or sc.shape[0] != n_sectors:
                raise ValidationError(f"shock_cluster must have length {n_sectors}")
            object.__setattr__(self, "shock_cluster", _freeze(_dense_labels(sc)))

        if self.cluster_primary is not None and self.cluster_coarse is not None:
            if not validate_nesting(self):
                raise ValidationError("primary clusters do not nest inside coarse clusters")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def n_sectors(self) -> int | None:
        return None if self.shares is None else self.shares.shape[1]

    def cluster_labels(self, level: str) -> np.ndarray | None:
        if level == "primary":
            return self.cluster_primary
        if level == "coarse":
            return self.cluster_coarse
        raise ValueError(f"unknown cluster level {level!r}")

    def replace(self, **changes) -> "Dataset":
        """Return a copy with the given fields swapped (re-validated)."""
        return dataclasses.replace(self, **changes)

    def _replace_unchecked(self, **changes) -> "Dataset":
        """Copy with fields swapped and validation skipped.

        Internal fast path for the replicate loop, where the new outcome (or
        regressor column) is finite by construction and labels are untouched.
        """
        new = object.__new__(Dataset)
        label_fields = {"absorb", "cluster_primary", "cluster_coarse", "shock_cluster"}
        for field in dataclasses.fields(Dataset):
            value = changes.get(field.name, getattr(self, field.name))
            if field.name in changes and isinstance(value, np.ndarray):
                dtype = np.int64 if field.name in label_fields else np.float64
                value = _freeze(np.asarray(value, dtype=dtype))
            object.__setattr__(new, field.name, value)
        return new


def validate_nesting(ds: Dataset) -> bool:
    """True iff every primary cluster maps into exactly one coarse cluster."""
    if ds.cluster_primary is None or ds.cluster_coarse is None:
        raise ValidationError("validate_nesting needs both cluster vectors")
    n_primary = int(ds.cluster_primary.max()) + 1
    seen = np.full(n_primary, -1, dtype=np.int64)
    for p, c in zip(ds.cluster_primary, ds.cluster_coarse):
        if seen[p] == -1:
            seen[p] = c
        elif seen[p] != c:
            return False
    return True


@dataclass(frozen=True)
class LinearHypothesis:
    """The null R @ beta = q for the fitted coefficient vector."""

    R: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=np.float64))
        q = np.atleast_1d(np.asarray(self.q, dtype=np.float64))
        if R.shape[0] != q.shape[0]:
            raise ValidationError("R and q disagree on the number of restrictions")
        if R.shape[0] > R.shape[1]:
            raise ValidationError("more restrictions than coefficients")
        if np.linalg.matrix_rank(R) < R.shape[0]:
            raise ValidationError("R does not have full row rank")
        object.__setattr__(self, "R", _freeze(R))
        object.__setattr__(self, "q", _freeze(q))

    @property
    def n_restrictions(self) -> int:
        return self.R.shape[0]

    @classmethod
    def coefficient(cls, index: int, n_coef: int, value: float = 0.0) -> "LinearHypothesis":
        """Scalar null: coefficient ``index`` equals ``value``."""
        R = np.zeros((1, n_coef))
        R[0, index] = 1.0
        return cls(R, np.array([value]))

    def single_index(self) -> int:
        """Column index of the tested coefficient, for hypotheses that pick
        out exactly one column of X."""
        if self.n_restrictions != 1:
            raise ValidationError("hypothesis tests more than one restriction")
        nz = np.flatnonzero(self.R[0])
        if nz.size != 1:
            raise ValidationError("hypothesis is not on a single coefficient")
        return int(nz[0])


@dataclass(frozen=True)
class FitResult:
    """Least-squares output shared by every variance estimator.

    ``xtx_inv`` is (X' Pi X)^-1 for the absorbed (within-demeaned), weighted
    design; ``df_model`` counts the X columns plus absorbed fixed-effect
    levels minus one; ``leverage`` is the diagonal of the weighted projection.
    """

    beta_hat: np.ndarray
    residuals: np.ndarray
    xtx_inv: np.ndarray
    df_model: int
    leverage: np.ndarray


def _read_table(path, delimiter: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, sep=delimiter, encoding="utf-8")
    except FileNotFoundError:
        raise SchemaError(f"data file not found: {path}")


def _numeric_column(frame: pd.DataFrame, name: str, role: str) -> np.ndarray:
    raw = frame[name]
    coerced = pd.to_numeric(raw, errors="coerce")
    bad = coerced.isna() & raw.notna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(
            f"column {name!r} ({role}) has a non-numeric cell at row {row}"
        )
    values = coerced.to_numpy(dtype=np.float64)
    if np.any(~np.isfinite(values)):
        row = int(np.flatnonzero(~np.isfinite(values))[0])
        raise ValidationError(
            f"column {name!r} ({role}) has a missing or non-finite value at row {row}; "
            "rows with missing data are rejected, not dropped"
        )
    return values


def load_dataset(
    path,
    *,
    outcome: str,
    x: list[str],
    absorb: str | None = None,
    cluster: str | None = None,
    cluster_coarse: str | None = None,
    weight: str | None = None,
    shares: list[str] | None = None,
    intercept: bool = False,
    shares_sum_to_one: bool = False,
    delimiter: str = ",",
) -> Dataset:
    """Read a delimited text file (first row headers, UTF-8) into a Dataset.

    The keyword arguments are the column-role mapping: ``outcome`` and ``x``
    are required, everything else optional. Categorical cluster columns are
    re-encoded to dense integer labels. Rows with missing values in any used
    column are an error, never silently dropped.
    """
    frame = _read_table(path, delimiter)
    if not x:
        raise SchemaError("schema must name at least one regressor column")
    wanted = [outcome, *x]
    for name in (absorb, cluster, cluster_coarse, weight):
        if name is not None:
            wanted.append(name)
    if shares:
        wanted.extend(shares)
    missing = [name for name in wanted if name not in frame.columns]
    if missing:
        raise SchemaError(f"columns not found in {path}: {', '.join(missing)}")

    y = _numeric_column(frame, outcome, "outcome")
    cols = [_numeric_column(frame, name, "regressor") for name in x]
    if intercept:
        cols.insert(0, np.ones(len(frame)))
    X = np.column_stack(cols)

    def _labels(name):
        if name is None:
            return None
        col = frame[name]
        if col.isna().any():
            row = int(np.flatnonzero(col.isna().to_numpy())[0])
            raise ValidationError(f"column {name!r} has a missing label at row {row}")
        return col.to_numpy()

    share_mat = None
    if shares:
        share_mat = np.column_stack(
            [_numeric_column(frame, name, "share") for name in shares]
        )

    return Dataset(
        y=y,
        X=X,
        absorb=_labels(absorb),
        cluster_primary=_labels(cluster),
        cluster_coarse=_labels(cluster_coarse),
        weights=None if weight is None else _numeric_column(frame, weight, "weight"),
        shares=share_mat,
        shares_sum_to_one=shares_sum_to_one,
    )


def load_shocks(path, *, value: str, cluster: str | None = None, delimiter: str = ",") -> tuple[np.ndarray, np.ndarray | None]:
    """Read a sector-level file of observed shifters (one row per sector)."""
    frame = _read_table(path, delimiter)
    for name in [value] + ([cluster] if cluster else []):
        if name not in frame.columns:
            raise SchemaError(f"columns not found in {path}: {name}")
    shocks = _numeric_column(frame, value, "shock")
    labels = None if cluster is None else _dense_labels(frame[cluster].to_numpy())
    return shocks, labels
