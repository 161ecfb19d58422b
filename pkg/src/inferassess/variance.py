"""Analytic variance estimators and t-tests.

Supports the classical homoskedastic estimator, the heteroskedasticity-robust
sandwich (hc0/hc1), and the cluster-robust estimator with both degrees-of-
freedom conventions found in common fixed-effect software: ``absorb_counted``
includes absorbed fixed-effect levels in the small-sample correction,
``absorb_uncounted`` does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np
import scipy.special

from .datamodel import Dataset, FitResult, LinearHypothesis
from .errors import ConfigurationError, DegenerateTestError, ValidationError
from .regression import DesignSolver

KINDS = ("classical", "hc0", "hc1", "crve")
REFERENCES = ("normal", "t_G_minus_1", "t_N_minus_K")


@dataclass(frozen=True)
class VarianceSpec:
    """Which variance estimator to use and which reference distribution to
    compare the t statistic against.

    ``reference=None`` picks the conventional default: t with G-1 degrees of
    freedom for the cluster-robust estimator, t with N-df otherwise.
    """

    kind: str = "hc1"
    cluster_level: str = "primary"
    dof_convention: str = "absorb_counted"
    reference: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown variance kind {self.kind!r}")
        if self.kind == "crve" and self.cluster_level not in ("primary", "coarse"):
            raise ConfigurationError(f"unknown cluster level {self.cluster_level!r}")
        if self.dof_convention not in ("absorb_counted", "absorb_uncounted"):
            raise ConfigurationError(f"unknown dof convention {self.dof_convention!r}")
        if self.reference is not None and self.reference not in REFERENCES:
            raise ConfigurationError(f"unknown reference {self.reference!r}")

    def resolved_reference(self) -> str:
        if self.reference is not None:
            return self.reference
        return "t_G_minus_1" if self.kind == "crve" else "t_N_minus_K"


def _crve_labels(ds: Dataset, spec: VarianceSpec) -> np.ndarray:
    labels = ds.cluster_labels(spec.cluster_level)
    if labels is None:
        raise ConfigurationError(
            f"crve at level {spec.cluster_level!r} needs cluster labels"
        )
    return labels


def _direction_variance(
    fit: FitResult,
    ds: Dataset,
    spec: VarianceSpec,
    *,
    resid: np.ndarray,
    u: np.ndarray,
    rar: float,
    weights: np.ndarray,
) -> float:
    """Variance of r'beta_hat given residuals and u = Xd @ (A @ r)."""
    n = ds.n
    if spec.kind == "classical":
        s2 = float(weights @ resid**2) / (n - fit.df_model)
        return s2 * rar
    if spec.kind in ("hc0", "hc1"):
        meat = float(np.sum((weights * resid * u) ** 2))
        if spec.kind == "hc1":
            meat *= n / (n - fit.df_model)
        return meat
    labels = _crve_labels(ds, spec)
    n_clusters = int(labels.max()) + 1
    if n_clusters < 2:
        raise DegenerateTestError("cluster-robust variance needs at least 2 clusters")
    cluster_scores = np.bincount(labels, weights=weights * resid * u, minlength=n_clusters)
    df = fit.df_model if spec.dof_convention == "absorb_counted" else ds.k
    c = (n_clusters / (n_clusters - 1)) * ((n - 1) / (n - df))
    return c * float(cluster_scores @ cluster_scores)


def standard_error(
    fit: FitResult,
    ds: Dataset,
    h: LinearHypothesis,
    spec: VarianceSpec,
    solver: DesignSolver | None = None,
) -> float:
    """Standard error of the scalar combination R @ beta_hat."""
    if h.n_restrictions != 1:
        raise ValidationError("standard_error handles scalar hypotheses only")
    if solver is None:
        solver = DesignSolver(ds)
    r = h.R[0]
    ar = fit.xtx_inv @ r
    var = _direction_variance(
        fit,
        ds,
        spec,
        resid=fit.residuals,
        u=solver.Xd @ ar,
        rar=float(r @ ar),
        weights=solver.weights,
    )
    return float(np.sqrt(max(var, 0.0)))


def _normal_two_sided(t: float) -> float:
    return float(scipy.special.erfc(abs(t) / math.sqrt(2.0)))


def _t_two_sided(t: float, dof: int) -> float:
    return 2.0 * float(scipy.special.stdtr(max(dof, 1), -abs(t)))


def _reference_pvalue(t: float, reference: str, *, n_clusters: int | None, dof: int) -> float:
    if reference == "normal":
        return _normal_two_sided(t)
    if reference == "t_G_minus_1":
        if n_clusters is None:
            raise ConfigurationError("t_G_minus_1 reference needs cluster labels")
        return _t_two_sided(t, n_clusters - 1)
    return _t_two_sided(t, dof)


def t_test(
    fit: FitResult,
    ds: Dataset,
    h: LinearHypothesis,
    spec: VarianceSpec,
    solver: DesignSolver | None = None,
) -> float:
    """Two-sided p-value of (R beta_hat - q) / SE against the reference."""
    se = standard_error(fit, ds, h, spec, solver=solver)
    if se == 0.0:
        raise DegenerateTestError("standard error is exactly zero")
    t = float(h.R[0] @ fit.beta_hat - h.q[0]) / se
    n_clusters = None
    if spec.kind == "crve":
        n_clusters = int(_crve_labels(ds, spec).max()) + 1
    return _reference_pvalue(
        t, spec.resolved_reference(), n_clusters=n_clusters, dof=ds.n - fit.df_model
    )


def effective_clusters(
    fit: FitResult,
    ds: Dataset,
    coef_index: int,
    cluster_level: str = "primary",
    solver: DesignSolver | None = None,
) -> float:
    """Leverage-adjusted effective number of clusters for one coefficient.

    G* = G / (1 + Gamma) with Gamma the squared coefficient of variation of
    gamma_g = [A X_g' Pi_g X_g A]_{kk} across clusters; equals G for perfectly
    balanced designs and collapses when a few clusters carry most of the
    regressor variation.
    """
    labels = ds.cluster_labels(cluster_level)
    if labels is None:
        raise ConfigurationError(f"effective_clusters needs {cluster_level} labels")
    if solver is None:
        solver = DesignSolver(ds)
    v = solver.Xd @ fit.xtx_inv[:, coef_index]
    n_clusters = int(labels.max()) + 1
    gamma = np.bincount(labels, weights=solver.weights * v**2, minlength=n_clusters)
    gbar = gamma.mean()
    if gbar <= 0:
        raise DegenerateTestError("coefficient has no cluster-level variation")
    dispersion = float(np.mean((gamma - gbar) ** 2) / gbar**2)
    return n_clusters / (1.0 + dispersion)
