"""Replicate-generating distributions.

An :class:`ErrorModel` describes how to draw the error vector that replaces
the outcome noise in each replicate; :class:`ShockScheme` instead redraws the
sector-level shifters of a shift-share regressor while holding outcomes
fixed. The pathological residual-based generators (residual bootstrap,
sign-flipped residuals) are included deliberately: they are known ways the
assessment itself can be fooled, and the test-suite demos rely on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import Dataset
from .errors import ConfigurationError, ValidationError

KINDS = (
    "iid_normal",
    "scaled_normal",
    "fitted_scaled_normal",
    "cluster_normal",
    "residual_bootstrap",
    "sign_flip_residuals",
    "lognormal_demeaned",
    "two_group_hetero",
)

RESIDUAL_KINDS = ("residual_bootstrap", "sign_flip_residuals")

_CLAMP_FLOOR_FRACTION = 1e-6


@dataclass(frozen=True)
class ErrorModel:
    """Tagged specification of the error distribution used in replicates.

    ``variances`` (per-observation) applies to ``scaled_normal``; ``rho`` is
    the intra-cluster correlation for ``cluster_normal``; ``variance_ratio``
    is sigma1^2 / sigma0^2 for ``two_group_hetero`` (variance of the group
    with the tested dummy equal to one, relative to the rest). Residual-based
    kinds use unrestricted-fit residuals unless ``restricted_residuals``.
    """

    kind: str = "iid_normal"
    variances: np.ndarray | None = None
    rho: float | None = None
    variance_ratio: float | None = None
    restricted_residuals: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown error model kind {self.kind!r}")
        if self.kind == "scaled_normal":
            if self.variances is None:
                raise ConfigurationError("scaled_normal needs a variance vector")
            v = np.asarray(self.variances, dtype=np.float64)
            if np.any(v <= 0) or not np.all(np.isfinite(v)):
                raise ValidationError("variances must be strictly positive and finite")
            object.__setattr__(self, "variances", v)
        if self.kind == "cluster_normal":
            rho = 0.0 if self.rho is None else float(self.rho)
            if not 0.0 <= rho < 1.0:
                raise ValidationError("rho must lie in [0, 1)")
            object.__setattr__(self, "rho", rho)
        if self.kind == "two_group_hetero":
            if self.variance_ratio is None or self.variance_ratio <= 0:
                raise ValidationError("two_group_hetero needs a positive variance ratio")


@dataclass(frozen=True)
class ShockScheme:
    """Redraw iid standard normal shifters, rebuild the shift-share regressor,
    and keep outcomes fixed. ``cluster_draws`` makes the draws constant within
    each shock cluster."""

    cluster_draws: bool = False


@dataclass(frozen=True)
class ResolvedErrorModel:
    """An ErrorModel with data-dependent parameters baked in."""

    kind: str
    sd: np.ndarray | None = None
    rho: float = 0.0
    base_residuals: np.ndarray | None = None
    warnings: tuple[str, ...] = ()


def fit_variance_model(residuals: np.ndarray, M: np.ndarray) -> tuple[float, float]:
    """OLS of squared residuals on a constant and 1/M.

    Returns (a_hat, b_hat); either may be negative, the caller decides how to
    handle non-positive fitted variances.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if residuals.shape != M.shape:
        raise ValidationError("residuals and M must have the same length")
    if np.any(M <= 0):
        raise ValidationError("M must be strictly positive")
    design = np.column_stack([np.ones_like(M), 1.0 / M])
    coef, *_ = np.linalg.lstsq(design, residuals**2, rcond=None)
    return float(coef[0]), float(coef[1])


def fitted_variances(residuals: np.ndarray, M: np.ndarray) -> tuple[np.ndarray, int]:
    """Per-observation variances a_hat + b_hat / M_i, clamped away from zero.

    The fitted regression can produce non-positive variances; those are
    clamped at 1e-6 times the median fitted value and counted.
    """
    a, b = fit_variance_model(residuals, M)
    raw = a + b / np.asarray(M, dtype=np.float64)
    median = float(np.median(raw))
    floor = _CLAMP_FLOOR_FRACTION * (median if median > 0 else float(np.mean(residuals**2)))
    if floor <= 0:
        floor = _CLAMP_FLOOR_FRACTION
    clamped = int(np.sum(raw < floor))
    return np.maximum(raw, floor), clamped


def resolve_error_model(
    model: ErrorModel,
    ds: Dataset,
    *,
    base_residuals: np.ndarray | None = None,
    tested_col: int | None = None,
) -> ResolvedErrorModel:
    """Bake data-dependent parameters (fitted variances, group variances,
    base residuals) into a form ``draw_resolved`` can sample from."""
    kind = model.kind
    if kind == "iid_normal":
        return ResolvedErrorModel("gauss", sd=np.ones(ds.n))
    if kind == "scaled_normal":
        v = np.asarray(model.variances)
        if v.shape[0] != ds.n:
            raise ValidationError("variance vector length does not match data")
        return ResolvedErrorModel("gauss", sd=np.sqrt(v))
    if kind == "fitted_scaled_normal":
        if base_residuals is None:
            raise ConfigurationError("fitted_scaled_normal needs base residuals")
        if ds.weights is None:
            raise ConfigurationError("fitted_scaled_normal needs weights (M_i)")
        v, clamped = fitted_variances(base_residuals, ds.weights)
        notes = ()
        if clamped:
            notes = (f"fitted variance model clamped {clamped} non-positive values",)
        return ResolvedErrorModel("gauss", sd=np.sqrt(v), warnings=notes)
    if kind == "two_group_hetero":
        if tested_col is None:
            raise ConfigurationError("two_group_hetero needs the tested column")
        dummy = ds.X[:, tested_col]
        if not np.all(np.isin(dummy, (0.0, 1.0))):
            raise ConfigurationError("two_group_hetero needs a binary tested regressor")
        sd = np.where(dummy == 1.0, np.sqrt(float(model.variance_ratio)), 1.0)
        return ResolvedErrorModel("gauss", sd=sd)
    if kind == "cluster_normal":
        labels = ds.cluster_primary if ds.cluster_primary is not None else ds.cluster_coarse
        if labels is None:
            raise ConfigurationError("cluster_normal needs cluster labels")
        return ResolvedErrorModel("cluster_normal", rho=float(model.rho))
    if kind in RESIDUAL_KINDS:
        if base_residuals is None:
            raise ConfigurationError(f"{kind} needs base residuals")
        return ResolvedErrorModel(kind, base_residuals=np.asarray(base_residuals))
    if kind == "lognormal_demeaned":
        return ResolvedErrorModel("lognormal_demeaned")
    raise ConfigurationError(f"unknown error model kind {kind!r}")


def draw_resolved(resolved: ResolvedErrorModel, ds: Dataset, rng: np.random.Generator) -> np.ndarray:
    n = ds.n
    kind = resolved.kind
    if kind == "gauss":
        return rng.standard_normal(n) * resolved.sd
    if kind == "cluster_normal":
        labels = ds.cluster_primary if ds.cluster_primary is not None else ds.cluster_coarse
        n_clusters = int(labels.max()) + 1
        common = rng.standard_normal(n_clusters)
        own = rng.standard_normal(n)
        rho = resolved.rho
        return np.sqrt(rho) * common[labels] + np.sqrt(1.0 - rho) * own
    if kind == "residual_bootstrap":
        pool = resolved.base_residuals
        return pool[rng.integers(0, pool.shape[0], size=n)]
    if kind == "sign_flip_residuals":
        signs = rng.integers(0, 2, size=n) * 2 - 1
        return signs * resolved.base_residuals
    if kind == "lognormal_demeaned":
        return np.exp(rng.standard_normal(n)) - np.exp(0.5)
    raise ConfigurationError(f"unknown resolved kind {kind!r}")


def draw_errors(
    model: ErrorModel,
    ds: Dataset,
    rng: np.random.Generator,
    base_residuals: np.ndarray | None = None,
    tested_col: int | None = None,
) -> np.ndarray:
    """Draw one replicate error vector of length N."""
    resolved = resolve_error_model(
        model, ds, base_residuals=base_residuals, tested_col=tested_col
    )
    return draw_resolved(resolved, ds, rng)


def draw_shocks(
    ds: Dataset,
    rng: np.random.Generator,
    *,
    tested_col: int,
    cluster_draws: bool = False,
) -> Dataset:
    """Replicate dataset with freshly drawn shifters.

    The tested regressor column is rebuilt as shares @ g* with g* iid standard
    normal (cluster-constant when requested); outcomes stay fixed, which makes
    the population coefficient of the replicate regression zero.
    """
    if ds.shares is None:
        raise ConfigurationError("shock resampling needs shares")
    n_sectors = ds.shares.shape[1]
    if cluster_draws:
        if ds.shock_cluster is None:
            raise ConfigurationError("clustered shock draws need shock_cluster labels")
        n_groups = int(ds.shock_cluster.max()) + 1
        g = rng.standard_normal(n_groups)[ds.shock_cluster]
    else:
        g = rng.standard_normal(n_sectors)
    X = np.array(ds.X)
    X[:, tested_col] = ds.shares @ g
    return ds.replace(X=X, shocks=g)
