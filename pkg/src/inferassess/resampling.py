"""Resampling-based and design-based tests.

Wild cluster bootstrap (Rademacher weights, null imposed by default),
permutation tests over three assignment schemes, shift-share standard errors
aggregating residual-share products at the shock level (with and without the
null imposed), and the sign-change randomization test.

The wild bootstrap inner loop is algebraic: with the design fixed, every
bootstrap coefficient and every cluster score is linear in the sign vector,
so all inner replications reduce to a couple of small matrix products.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.special
import scipy.stats

from .datamodel import Dataset, LinearHypothesis
from .errors import ConfigurationError, DegenerateTestError, ValidationError
from .regression import DesignSolver
from .variance import VarianceSpec

KINDS = ("wild_cluster", "permutation", "akm", "akm0", "sign_change")
PERMUTATION_SCHEMES = ("unit_level", "cluster_level", "within_strata")

_TIE_SLACK = 1e-12


@dataclass(frozen=True)
class ResamplingTestSpec:
    """Which resampling test to run and how.

    ``inner_reps`` bounds the resampling draws; full enumeration replaces
    sampling whenever the arrangement space fits (2^G sign vectors for the
    wild bootstrap and sign-change test, all assignments for permutations).
    ``variance`` picks the statistic the wild bootstrap studentizes with,
    defaulting to the cluster-robust estimator at ``cluster_level``.
    """

    kind: str = "wild_cluster"
    inner_reps: int = 999
    impose_null: bool = True
    weight_law: str = "rademacher"
    cluster_level: str = "primary"
    scheme: str = "cluster_level"
    variance: VarianceSpec | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown resampling kind {self.kind!r}")
        if self.inner_reps < 1:
            raise ConfigurationError("inner_reps must be at least 1")
        if self.weight_law != "rademacher":
            raise ConfigurationError("only rademacher bootstrap weights are supported")
        if self.cluster_level not in ("primary", "coarse"):
            raise ConfigurationError(f"unknown cluster level {self.cluster_level!r}")
        if self.scheme not in PERMUTATION_SCHEMES:
            raise ConfigurationError(f"unknown permutation scheme {self.scheme!r}")


def _enumerate_signs(m: int) -> np.ndarray:
    """All sign vectors in {-1, +1}^m as an (m, 2^m) matrix."""
    codes = np.arange(2**m, dtype=np.int64)
    bits = (codes[None, :] >> np.arange(m)[:, None]) & 1
    return (2 * bits - 1).astype(np.float64)


def _count_at_least(values: np.ndarray, threshold: float) -> int:
    return int(np.sum(np.abs(values) >= abs(threshold) * (1.0 - _TIE_SLACK)))


# ---------------------------------------------------------------------------
# Wild cluster bootstrap
# ---------------------------------------------------------------------------


def wild_cluster_p(
    ds: Dataset,
    h: LinearHypothesis,
    spec: ResamplingTestSpec,
    rng: np.random.Generator,
    solver: DesignSolver | None = None,
) -> float:
    """Wild cluster bootstrap p-value for a scalar hypothesis.

    With the null imposed, pseudo-outcomes are the restricted fit plus
    cluster-constant sign flips of the restricted residuals; each draw is
    studentized with the same variance spec as the observed statistic. Under
    full enumeration the p-value is the exact proportion of sign vectors at
    least as extreme (the identity vector reproduces the data).
    """
    if solver is None:
        solver = DesignSolver(ds)
    labels = ds.cluster_labels(spec.cluster_level)
    if labels is None:
        raise ConfigurationError(f"wild bootstrap needs {spec.cluster_level} cluster labels")
    n_flip = int(labels.max()) + 1
    if n_flip < 2:
        raise DegenerateTestError("wild bootstrap is degenerate with a single cluster")

    vspec = spec.variance or VarianceSpec(kind="crve", cluster_level=spec.cluster_level)
    pi = solver.weights
    A = solver.xtx_inv
    r = h.R[0]
    u = solver.Xd @ (A @ r)
    z = pi * u
    rar = float(r @ (A @ r))

    fit = solver.fit(ds.y)
    base = solver.fit_restricted(ds.y, h) if spec.impose_null else fit
    e = base.residuals

    # Per-cluster pieces: numerator coefficients and the residual map D such
    # that the pseudo-residual matrix is D @ S for sign matrix S.
    num_coef = np.bincount(labels, weights=z * e, minlength=n_flip)
    E = np.zeros((ds.n, n_flip))
    E[np.arange(ds.n), labels] = e
    W = solver.Xd.T @ (pi[:, None] * E)
    D = (solver.demean(E) if solver.demeaner else E) - solver.Xd @ (A @ W)

    if 2**n_flip <= spec.inner_reps:
        S = _enumerate_signs(n_flip)
        enumerated = True
    else:
        S = (rng.integers(0, 2, size=(n_flip, spec.inner_reps)) * 2 - 1).astype(np.float64)
        enumerated = False

    numerators = num_coef @ S
    variances = _bootstrap_variances(ds, vspec, solver, D, S, z=z, rar=rar, df=fit.df_model)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_star = numerators / np.sqrt(variances)

    se_obs = np.sqrt(
        _bootstrap_variances(
            ds, vspec, solver, fit.residuals[:, None], np.ones((1, 1)), z=z, rar=rar, df=fit.df_model
        )[0]
    )
    if se_obs == 0.0:
        raise DegenerateTestError("observed standard error is exactly zero")
    # The bootstrap numerators are centered at the generating estimate by
    # construction; the observed statistic always tests the hypothesized value.
    t_obs = (float(r @ fit.beta_hat) - float(h.q[0])) / se_obs

    count = _count_at_least(np.nan_to_num(t_star, nan=0.0, posinf=np.inf, neginf=-np.inf), t_obs)
    if enumerated:
        return count / S.shape[1]
    return (1 + count) / (1 + S.shape[1])


def _bootstrap_variances(
    ds: Dataset,
    vspec: VarianceSpec,
    solver: DesignSolver,
    D: np.ndarray,
    S: np.ndarray,
    *,
    z: np.ndarray,
    rar: float,
    df: int,
) -> np.ndarray:
    """Variance of r'beta* for every sign column, sharing the analytic
    formulas with the plain estimators."""
    n = ds.n
    if vspec.kind == "crve":
        vlabels = ds.cluster_labels(vspec.cluster_level)
        if vlabels is None:
            raise ConfigurationError(f"crve needs {vspec.cluster_level} labels")
        n_v = int(vlabels.max()) + 1
        onehot = np.zeros((n, n_v))
        onehot[np.arange(n), vlabels] = 1.0
        Q = onehot.T @ (z[:, None] * D)
        T = Q @ S
        dof = solver.df_model if vspec.dof_convention == "absorb_counted" else ds.k
        c = (n_v / (n_v - 1)) * ((n - 1) / (n - dof))
        return c * np.einsum("gb,gb->b", T, T)
    resid = D @ S
    if vspec.kind in ("hc0", "hc1"):
        meat = np.einsum("ib,ib->b", (z[:, None] * resid), (z[:, None] * resid))
        if vspec.kind == "hc1":
            meat *= n / (n - df)
        return meat
    pi = solver.weights
    s2 = np.einsum("ib,ib->b", pi[:, None] * resid, resid) / (n - df)
    return s2 * rar


# ---------------------------------------------------------------------------
# Permutation tests
# ---------------------------------------------------------------------------


def _unit_structure(ds: Dataset, x: np.ndarray, scheme: str):
    """Reduce the assignment problem to (unit labels per row, unit treatment,
    unit stratum). Units are rows, clusters, or schools-within-strata."""
    if scheme == "unit_level":
        return np.arange(ds.n), x.astype(np.int64), None
    if scheme == "cluster_level":
        labels = ds.cluster_primary
        if labels is None:
            raise ConfigurationError("cluster_level permutation needs primary labels")
        strata = None
    else:
        strata_rows = ds.cluster_coarse
        if strata_rows is None:
            raise ConfigurationError("within_strata permutation needs coarse labels")
        labels = ds.cluster_primary if ds.cluster_primary is not None else np.arange(ds.n)
        strata = np.zeros(int(labels.max()) + 1, dtype=np.int64)
        strata[labels] = strata_rows
    n_units = int(labels.max()) + 1
    unit_x = np.full(n_units, -1, dtype=np.int64)
    for row, g in enumerate(labels):
        val = int(x[row])
        if unit_x[g] == -1:
            unit_x[g] = val
        elif unit_x[g] != val:
            raise ConfigurationError("treatment is not constant within assignment units")
    return labels, unit_x, strata


def _n_arrangements(unit_x: np.ndarray, strata: np.ndarray | None) -> int:
    if strata is None:
        return math.comb(unit_x.size, int(unit_x.sum()))
    total = 1
    for s in np.unique(strata):
        members = unit_x[strata == s]
        total *= math.comb(members.size, int(members.sum()))
    return total


def _enumerate_assignments(unit_x: np.ndarray, strata: np.ndarray | None) -> np.ndarray:
    n_units = unit_x.size
    if strata is None:
        treated = int(unit_x.sum())
        combos = list(itertools.combinations(range(n_units), treated))
        out = np.zeros((n_units, len(combos)))
        for b, combo in enumerate(combos):
            out[list(combo), b] = 1.0
        return out
    per_stratum = []
    for s in np.unique(strata):
        members = np.flatnonzero(strata == s)
        treated = int(unit_x[members].sum())
        per_stratum.append([list(c) for c in itertools.combinations(members, treated)])
    out = np.zeros((n_units, math.prod(len(p) for p in per_stratum)))
    for b, pick in enumerate(itertools.product(*per_stratum)):
        rows = [i for block in pick for i in block]
        out[rows, b] = 1.0
    return out


def _sample_assignments(
    unit_x: np.ndarray, strata: np.ndarray | None, n_draws: int, rng: np.random.Generator
) -> np.ndarray:
    n_units = unit_x.size
    keys = rng.random((n_units, n_draws))
    out = np.zeros((n_units, n_draws))
    groups = [np.arange(n_units)] if strata is None else [
        np.flatnonzero(strata == s) for s in np.unique(strata)
    ]
    for members in groups:
        treated = int(unit_x[members].sum())
        if treated == 0:
            continue
        order = np.argsort(keys[members], axis=0, kind="stable")
        picked = members[order[:treated]]
        out[picked, np.arange(n_draws)[None, :].repeat(treated, 0)] = 1.0
    return out


def permutation_p(
    ds: Dataset,
    h: LinearHypothesis,
    scheme: str,
    inner_reps: int,
    rng: np.random.Generator,
    solver: DesignSolver | None = None,
) -> float:
    """Permutation test of a binary regressor using the raw coefficient.

    Treatment labels are re-randomized per the scheme (unit level, cluster
    level, or within strata holding per-stratum counts fixed), the coefficient
    recomputed each draw, and all arrangements enumerated when feasible.
    """
    if scheme not in PERMUTATION_SCHEMES:
        raise ConfigurationError(f"unknown permutation scheme {scheme!r}")
    if solver is None:
        solver = DesignSolver(ds)
    col = h.single_index()
    x = ds.X[:, col]
    if not np.all(np.isin(x, (0.0, 1.0))):
        raise ConfigurationError("permutation test needs a binary tested regressor")
    row_labels, unit_x, strata = _unit_structure(ds, x, scheme)

    proj = solver.control_projector(col)
    pi = solver.weights
    x_t = proj.residualize(x)
    denom = float(pi @ x_t**2)
    if denom <= 0:
        raise DegenerateTestError("tested regressor has no residual variation")
    beta_obs = float((pi * x_t) @ ds.y) / denom

    total = _n_arrangements(unit_x, strata)
    if total <= inner_reps:
        unit_assign = _enumerate_assignments(unit_x, strata)
        enumerated = True
    else:
        unit_assign = _sample_assignments(unit_x, strata, inner_reps, rng)
        enumerated = False

    Xs = unit_assign[row_labels, :]
    Xt = proj.residualize(Xs)
    denoms = np.einsum("ib,ib->b", pi[:, None] * Xt, Xt)
    numerators = Xt.T @ (pi * ds.y)
    with np.errstate(divide="ignore", invalid="ignore"):
        betas = numerators / denoms
    count = _count_at_least(np.nan_to_num(betas, nan=0.0, posinf=np.inf, neginf=-np.inf), beta_obs)
    if enumerated:
        return count / unit_assign.shape[1]
    return (1 + count) / (1 + unit_assign.shape[1])


# ---------------------------------------------------------------------------
# Shift-share (shock-level) standard errors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _ShiftShareContext:
    x_t: np.ndarray
    y_t: np.ndarray
    pi: np.ndarray
    denom: float
    g_centered: np.ndarray
    labels: np.ndarray
    n_shock_clusters: int


def _shift_share_context(
    ds: Dataset, h: LinearHypothesis, solver: DesignSolver | None
) -> _ShiftShareContext:
    if ds.shares is None or ds.shocks is None:
        raise ConfigurationError("shift-share inference needs shares and shocks")
    col = h.single_index()
    x = ds.X[:, col]
    recon = ds.shares @ ds.shocks
    scale = max(float(np.linalg.norm(x)), 1e-30)
    if float(np.linalg.norm(x - recon)) > 1e-6 * scale:
        raise ConfigurationError("tested regressor does not equal shares @ shocks")
    if solver is None:
        solver = DesignSolver(ds)
    proj = solver.control_projector(col)
    x_t = proj.residualize(x)
    y_t = proj.residualize(np.asarray(ds.y))
    pi = solver.weights
    denom = float(pi @ x_t**2)
    if denom <= 0:
        raise DegenerateTestError("shift-share regressor has no residual variation")
    g_centered = ds.shocks - ds.shocks.mean()
    if ds.shock_cluster is not None:
        labels = ds.shock_cluster
    else:
        labels = np.arange(ds.shares.shape[1], dtype=np.int64)
    return _ShiftShareContext(
        x_t=x_t,
        y_t=y_t,
        pi=pi,
        denom=denom,
        g_centered=g_centered,
        labels=labels,
        n_shock_clusters=int(labels.max()) + 1,
    )


def _shock_cluster_sums(ds: Dataset, ctx: _ShiftShareContext, e: np.ndarray) -> np.ndarray:
    sector = ds.shares.T @ (ctx.pi * e)
    return np.bincount(ctx.labels, weights=ctx.g_centered * sector, minlength=ctx.n_shock_clusters)


def akm_se(ds: Dataset, h: LinearHypothesis, solver: DesignSolver | None = None) -> float:
    """Shock-level standard error of the shift-share coefficient (no null
    imposed): residuals are aggregated to sectors through the shares, paired
    with the demeaned shifters, and summed within shock clusters."""
    ctx = _shift_share_context(ds, h, solver)
    beta = float((ctx.pi * ctx.x_t) @ ctx.y_t) / ctx.denom
    sums = _shock_cluster_sums(ds, ctx, ctx.y_t - beta * ctx.x_t)
    return float(np.sqrt(sums @ sums)) / ctx.denom


def akm_p(ds: Dataset, h: LinearHypothesis, solver: DesignSolver | None = None) -> float:
    """Normal-reference t-test of the shift-share coefficient with akm_se."""
    ctx = _shift_share_context(ds, h, solver)
    beta = float((ctx.pi * ctx.x_t) @ ctx.y_t) / ctx.denom
    sums = _shock_cluster_sums(ds, ctx, ctx.y_t - beta * ctx.x_t)
    se = float(np.sqrt(sums @ sums)) / ctx.denom
    if se == 0.0:
        raise DegenerateTestError("shift-share standard error is exactly zero")
    return float(scipy.special.erfc(abs(beta - float(h.q[0])) / se / math.sqrt(2.0)))


def akm0_p(ds: Dataset, h: LinearHypothesis, solver: DesignSolver | None = None) -> float:
    """Null-imposed shock-level test: score and variance are built from the
    restricted residuals y_t - beta0 * x_t."""
    ctx = _shift_share_context(ds, h, solver)
    beta0 = float(h.q[0])
    sums = _shock_cluster_sums(ds, ctx, ctx.y_t - beta0 * ctx.x_t)
    score = float(sums.sum())
    variance = float(sums @ sums)
    if variance == 0.0:
        raise DegenerateTestError("null-imposed variance is exactly zero")
    return float(scipy.special.erfc(abs(score) / np.sqrt(2.0 * variance)))


@dataclass(frozen=True)
class ConfidenceRegion:
    """Solution set of a test inversion: an interval, the complement of an
    interval (two half-lines), the whole line, or empty."""

    kind: str  # "interval" | "outside" | "line" | "empty"
    lower: float = float("nan")
    upper: float = float("nan")

    def contains(self, value: float) -> bool:
        if self.kind == "line":
            return True
        if self.kind == "empty":
            return False
        inside = self.lower <= value <= self.upper
        return inside if self.kind == "interval" else not (self.lower < value < self.upper)


def akm0_ci(
    ds: Dataset,
    h: LinearHypothesis,
    level: float = 0.05,
    solver: DesignSolver | None = None,
) -> ConfidenceRegion:
    """Invert the null-imposed test: the region of beta0 with p >= level.

    The acceptance region solves a quadratic inequality in beta0, so the
    result can be a bounded interval, a union of half-lines, or the whole
    line; a numerically degenerate leading coefficient falls back to the
    linear case rather than erroring.
    """
    ctx = _shift_share_context(ds, h, solver)
    z = float(scipy.stats.norm.ppf(1.0 - level / 2.0))
    A_c = _shock_cluster_sums(ds, ctx, ctx.y_t)
    B_c = _shock_cluster_sums(ds, ctx, ctx.x_t)
    sa, sb = float(A_c.sum()), float(B_c.sum())
    # score(b0) = sa - b0*sb; variance(b0) = sum_c (A_c - b0*B_c)^2.
    a = sb**2 - z**2 * float(B_c @ B_c)
    b = -2.0 * (sa * sb - z**2 * float(A_c @ B_c))
    c = sa**2 - z**2 * float(A_c @ A_c)

    scale = max(sb**2, z**2 * float(B_c @ B_c), 1.0)
    if abs(a) <= 1e-12 * scale:
        if abs(b) <= 1e-12 * max(abs(sa * sb), 1.0):
            return ConfidenceRegion("line") if c <= 0 else ConfidenceRegion("empty")
        root = -c / b
        if b > 0:
            return ConfidenceRegion("interval", float("-inf"), root)
        return ConfidenceRegion("interval", root, float("inf"))

    disc = b**2 - 4.0 * a * c
    disc_scale = b**2 + abs(4.0 * a * c)
    if disc <= 1e-9 * disc_scale:
        # A vanishing discriminant means the p-value curve only touches the
        # level: the region degenerates to a point (a > 0) or the whole line.
        if a > 0:
            root = -b / (2.0 * a)
            return ConfidenceRegion("interval", root, root)
        return ConfidenceRegion("line")
    sqrt_disc = math.sqrt(disc)
    lo = (-b - sqrt_disc) / (2.0 * a)
    hi = (-b + sqrt_disc) / (2.0 * a)
    lo, hi = min(lo, hi), max(lo, hi)
    if a > 0:
        return ConfidenceRegion("interval", lo, hi)
    return ConfidenceRegion("outside", lo, hi)


# ---------------------------------------------------------------------------
# Sign-change randomization
# ---------------------------------------------------------------------------


def sign_change_p(
    discrepancies: np.ndarray,
    rng: np.random.Generator,
    inner_reps: int = 999,
) -> float:
    """Randomization test over sign changes of the discrepancy vector.

    The statistic is mean / sample standard deviation; the randomization
    distribution enumerates all 2^m sign vectors when that fits within
    ``inner_reps`` (the identity transformation is always part of the
    reference set). The attainable p-values are floored at 2 / 2^m.
    """
    d = np.asarray(discrepancies, dtype=np.float64)
    if d.ndim != 1 or d.size < 2:
        raise ValidationError("need at least two discrepancies")
    m = d.size
    sum_sq = float(d @ d)

    def stats_for(signs: np.ndarray) -> np.ndarray:
        means = (d @ signs) / m
        var = np.maximum((sum_sq - m * means**2) / (m - 1), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return means / np.sqrt(var)

    t_obs = float(stats_for(np.ones((m, 1)))[0])
    if math.isnan(t_obs):
        raise DegenerateTestError("discrepancies have zero mean and zero variance")

    if 2**m <= inner_reps:
        t_all = stats_for(_enumerate_signs(m))
        count = _count_at_least(np.nan_to_num(t_all, nan=0.0, posinf=np.inf, neginf=-np.inf), t_obs)
        return count / t_all.size
    signs = (rng.integers(0, 2, size=(m, inner_reps)) * 2 - 1).astype(np.float64)
    t_draw = stats_for(signs)
    count = _count_at_least(np.nan_to_num(t_draw, nan=0.0, posinf=np.inf, neginf=-np.inf), t_obs)
    return (1 + count) / (1 + inner_reps)
