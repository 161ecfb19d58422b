"""Nearest-neighbor matching ATT estimator and its two inference routes.

The covariate geometry is fixed across assessment replicates (only outcomes
change), so match sets, usage counts, and same-arm variance neighbors are
computed once in a :class:`MatchPlan` and reused.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import math

import scipy.special

from .datamodel import Dataset
from .errors import ConfigurationError, DegenerateTestError, ValidationError
from .resampling import sign_change_p

_VARIANCE_NEIGHBORS = 2  # same-arm neighbors used for the per-unit variance


@dataclass(frozen=True)
class MatchSpec:
    """Nearest-neighbor matching with replacement on variance-normalized
    Euclidean covariate distance."""

    n_neighbors: int = 1
    with_replacement: bool = True

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise ConfigurationError("n_neighbors must be at least 1")
        if not self.with_replacement:
            raise ConfigurationError("only matching with replacement is supported")


@dataclass(frozen=True)
class MatchTestSpec:
    """Inference method wrapper so the assessment engine can audit matching:
    ``ai`` is the large-sample t-test, ``sign_change`` the randomization test
    on per-treated discrepancies."""

    kind: str = "ai"
    match: MatchSpec = MatchSpec()
    treat_col: int = 0
    inner_reps: int = 999

    def __post_init__(self):
        if self.kind not in ("ai", "sign_change"):
            raise ConfigurationError(f"unknown matching test kind {self.kind!r}")
        if self.inner_reps < 1:
            raise ConfigurationError("inner_reps must be at least 1")


@dataclass(frozen=True)
class MatchResult:
    att: float
    discrepancies: np.ndarray
    match_counts: np.ndarray


class MatchPlan:
    """Precomputed neighbor structure for one dataset/spec pair."""

    def __init__(self, ds: Dataset, spec: MatchSpec, treat_col: int = 0):
        treat = ds.X[:, treat_col]
        if not np.all(np.isin(treat, (0.0, 1.0))):
            raise ConfigurationError("treatment column must be binary")
        self.treated_rows = np.flatnonzero(treat == 1.0)
        self.control_rows = np.flatnonzero(treat == 0.0)
        if self.treated_rows.size == 0 or self.control_rows.size == 0:
            raise ValidationError("need at least one treated and one control unit")
        if spec.n_neighbors > self.control_rows.size:
            raise ValidationError("fewer controls than requested neighbors")
        self.spec = spec

        cov_cols = [j for j in range(ds.k) if j != treat_col]
        covs = ds.X[:, cov_cols]
        scales = covs.std(axis=0, ddof=1)
        usable = scales > 0
        if not np.any(usable):
            raise ConfigurationError("matching needs at least one non-constant covariate")
        z = covs[:, usable] / scales[usable]

        def nearest(rows_from, rows_to, k, exclude_self):
            d2 = (
                np.sum(z[rows_from] ** 2, axis=1)[:, None]
                - 2.0 * z[rows_from] @ z[rows_to].T
                + np.sum(z[rows_to] ** 2, axis=1)[None, :]
            )
            if exclude_self:
                same = rows_from[:, None] == rows_to[None, :]
                d2 = np.where(same, np.inf, d2)
            order = np.argsort(d2, axis=1, kind="stable")  # ties -> lowest index
            return rows_to[order[:, :k]]

        m = spec.n_neighbors
        self.match_rows = nearest(self.treated_rows, self.control_rows, m, False)
        counts = np.zeros(ds.n)
        np.add.at(counts, self.match_rows.reshape(-1), 1.0)
        self.match_counts = counts

        j = _VARIANCE_NEIGHBORS
        if self.treated_rows.size < j + 1 or self.control_rows.size < j + 1:
            self.variance_rows = None
        else:
            self.variance_rows = np.empty((ds.n, j), dtype=np.int64)
            self.variance_rows[self.treated_rows] = nearest(
                self.treated_rows, self.treated_rows, j, True
            )
            self.variance_rows[self.control_rows] = nearest(
                self.control_rows, self.control_rows, j, True
            )

    def discrepancies(self, y: np.ndarray) -> np.ndarray:
        return y[self.treated_rows] - y[self.match_rows].mean(axis=1)

    def att(self, y: np.ndarray) -> float:
        return float(self.discrepancies(y).mean())

    def large_sample_p(self, y: np.ndarray) -> float:
        """Normal-reference t-test from the matched-pair asymptotic variance.

        Per-unit variances come from the squared half-differences with the two
        closest same-arm neighbors; control units are weighted by how often
        they serve as matches.
        """
        if self.variance_rows is None:
            raise ValidationError(
                f"each arm needs at least {_VARIANCE_NEIGHBORS + 1} units for the variance"
            )
        sigma2 = np.mean((y[:, None] - y[self.variance_rows]) ** 2 / 2.0, axis=1)
        n1 = self.treated_rows.size
        m = self.spec.n_neighbors
        weight2 = np.zeros(y.shape[0])
        weight2[self.treated_rows] = 1.0
        weight2[self.control_rows] = (self.match_counts[self.control_rows] / m) ** 2
        variance = float(weight2 @ sigma2) / n1**2
        if variance <= 0.0:
            raise DegenerateTestError("matching variance estimate is zero")
        t = self.att(y) / np.sqrt(variance)
        return float(scipy.special.erfc(abs(t) / math.sqrt(2.0)))


def att_match(ds: Dataset, spec: MatchSpec, treat_col: int = 0) -> MatchResult:
    """ATT by nearest-neighbor matching: average over treated units of the
    outcome gap to the mean of their matched controls. Distance ties break to
    the lowest row index."""
    plan = MatchPlan(ds, spec, treat_col)
    d = plan.discrepancies(np.asarray(ds.y))
    return MatchResult(att=float(d.mean()), discrepancies=d, match_counts=plan.match_counts)


def ai_t_test(ds: Dataset, spec: MatchSpec, treat_col: int = 0) -> float:
    """Large-sample matching t-test p-value (normal reference)."""
    return MatchPlan(ds, spec, treat_col).large_sample_p(np.asarray(ds.y))


def match_sign_change_p(
    ds: Dataset,
    spec: MatchSpec,
    inner_reps: int,
    rng: np.random.Generator,
    treat_col: int = 0,
) -> float:
    """Sign-change randomization test on the per-treated discrepancies."""
    plan = MatchPlan(ds, spec, treat_col)
    return sign_change_p(plan.discrepancies(np.asarray(ds.y)), rng, inner_reps)
