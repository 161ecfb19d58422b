"""Synthetic designs for the replication and acceptance presets.

Each generator is deterministic given its seed and produces the fixed
"empirical design" an assessment conditions on; outcomes are placeholders
(regenerated every replicate) unless a generator draws them explicitly.
"""

from __future__ import annotations

import numpy as np

from .datamodel import Dataset
from .errorgen import ErrorModel
from .errors import ConfigurationError, ValidationError


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def gen_two_sample(n1: int, n0: int, y_seed: int | None = None) -> Dataset:
    """Intercept plus treatment dummy; the first ``n1`` rows are treated.

    ``y_seed`` optionally fills the outcome with standard normal draws (needed
    by residual-based error models); otherwise outcomes are zeros.
    """
    if n1 < 1 or n0 < 1:
        raise ValidationError("need at least one observation per group")
    n = n1 + n0
    dummy = np.zeros(n)
    dummy[:n1] = 1.0
    X = np.column_stack([np.ones(n), dummy])
    y = np.zeros(n) if y_seed is None else _rng(y_seed).standard_normal(n)
    return Dataset(y=y, X=X)


def gen_stratified(
    n_schools: int,
    n_strata: int,
    schools_per_stratum: int,
    students_per_school: int,
    n_covariates: int,
    cov_seed: int = 0,
) -> Dataset:
    """Stratified school-level experiment at the student level.

    ``n_schools`` schools sit in ``n_strata`` strata of ``schools_per_stratum``
    each; exactly half the schools in every stratum are treated and treatment
    is constant within school. School labels go in ``cluster_primary``, strata
    in ``cluster_coarse`` and ``absorb`` (strata fixed effects are absorbed).
    School-level covariates are drawn once from ``cov_seed`` and repeated
    across each school's students, so they are part of the fixed design.
    """
    if n_schools != n_strata * schools_per_stratum:
        raise ConfigurationError("n_schools must equal n_strata * schools_per_stratum")
    if schools_per_stratum % 2 != 0:
        raise ConfigurationError("schools_per_stratum must be even for balanced treatment")
    school = np.repeat(np.arange(n_schools), students_per_school)
    stratum_of_school = np.arange(n_schools) // schools_per_stratum
    within = np.arange(n_schools) % schools_per_stratum
    treat_school = (within < schools_per_stratum // 2).astype(np.float64)

    cols = [treat_school[school]]
    if n_covariates:
        covs = _rng(cov_seed).standard_normal((n_schools, n_covariates))
        cols.extend(covs[school, j] for j in range(n_covariates))
    X = np.column_stack(cols)
    n = n_schools * students_per_school
    return Dataset(
        y=np.zeros(n),
        X=X,
        absorb=stratum_of_school[school],
        cluster_primary=school,
        cluster_coarse=stratum_of_school[school],
    )


def gen_shift_share_simple(
    n_sectors: int,
    group_size: int,
    beta: float,
    error_sd: float,
    rng,
) -> Dataset:
    """Group-indicator shift-share design with binary shocks.

    Observations are partitioned into equally sized sector groups, shares are
    the group indicators (rows sum to one), and a random half of the sectors
    receives shock 1. Outcomes are y = beta * x + eps with iid normal errors,
    so the placebo-variance algebra below applies exactly.
    """
    if n_sectors % 2 != 0:
        raise ConfigurationError("n_sectors must be even (half the sectors are shocked)")
    if group_size < 1:
        raise ConfigurationError("group_size must be at least 1")
    gen = _rng(rng)
    n = n_sectors * group_size
    sector = np.repeat(np.arange(n_sectors), group_size)
    shares = np.zeros((n, n_sectors))
    shares[np.arange(n), sector] = 1.0
    shocks = np.zeros(n_sectors)
    shocks[gen.permutation(n_sectors)[: n_sectors // 2]] = 1.0
    x = shares @ shocks
    eps = gen.standard_normal(n) * error_sd
    y = beta * x + eps
    return Dataset(
        y=y,
        X=np.column_stack([np.ones(n), x]),
        shares=shares,
        shocks=shocks,
        shock_cluster=np.arange(n_sectors),
        shares_sum_to_one=True,
    )


def placebo_variances(ds: Dataset, beta: float, epsilon: np.ndarray) -> tuple[float, float]:
    """True variance of the shock-resampled placebo estimator vs. the limit
    an observation-level cluster variance converges to.

    Works on :func:`gen_shift_share_simple` designs: both formulas center the
    treated-group mean shift beta/2 and differ only in whether the dispersion
    is taken across sector means or across observations.
    """
    if ds.shares is None or ds.shocks is None:
        raise ConfigurationError("placebo_variances needs a shift-share design")
    epsilon = np.asarray(epsilon, dtype=np.float64)
    n = ds.n
    if epsilon.shape[0] != n:
        raise ValidationError("epsilon must have one entry per observation")
    n_sectors = ds.shares.shape[1]
    sector = np.argmax(ds.shares, axis=1)
    counts = np.bincount(sector, minlength=n_sectors)
    eps_sector = np.bincount(sector, weights=epsilon, minlength=n_sectors) / counts
    eps_bar = epsilon.mean()
    treated_sector = ds.shocks == 1.0

    dev_true = beta * treated_sector - beta / 2.0 + eps_sector - eps_bar
    v_true = 4.0 / (n_sectors * (n_sectors - 2)) * float(dev_true @ dev_true)

    treated_obs = treated_sector[sector]
    dev_obs = beta * treated_obs - beta / 2.0 + epsilon - eps_bar
    v_crve = 4.0 / (n * (n - 2)) * float(dev_obs @ dev_obs)
    return v_true, v_crve


def duplicate_dataset(ds: Dataset, times: int) -> Dataset:
    """Stack ``times`` copies of the data, offsetting every label vector so
    the copies count as independent clusters."""
    if times < 2:
        raise ValidationError("times must be at least 2")

    def _tile_labels(labels):
        if labels is None:
            return None
        span = int(labels.max()) + 1
        return np.concatenate([labels + t * span for t in range(times)])

    return Dataset(
        y=np.tile(ds.y, times),
        X=np.tile(ds.X, (times, 1)),
        absorb=_tile_labels(ds.absorb),
        cluster_primary=_tile_labels(ds.cluster_primary),
        cluster_coarse=_tile_labels(ds.cluster_coarse),
        weights=None if ds.weights is None else np.tile(ds.weights, times),
        shares=None if ds.shares is None else np.tile(ds.shares, (times, 1)),
        shocks=ds.shocks,
        shock_cluster=ds.shock_cluster,
        shares_sum_to_one=ds.shares_sum_to_one,
    )


def gen_weighted_mean_toy(n: int, w: float, hetero: bool = False) -> tuple[Dataset, ErrorModel]:
    """Intercept-only weighted-mean design: the first half of the rows gets
    weight one, the second half weight ``w``.

    Returns the dataset together with the companion error model: iid standard
    normal, or variance 0.1 on the heavily weighted half when ``hetero``.
    """
    if n % 2 != 0:
        raise ConfigurationError("n must be even")
    weights = np.ones(n)
    weights[n // 2 :] = w
    ds = Dataset(y=np.zeros(n), X=np.ones((n, 1)), weights=weights)
    if hetero:
        variances = np.ones(n)
        variances[n // 2 :] = 0.1
        model = ErrorModel(kind="scaled_normal", variances=variances)
    else:
        model = ErrorModel(kind="iid_normal")
    return ds, model


def gen_shift_share_cluster(
    n_obs: int,
    n_clusters: int,
    n_sectors: int,
    *,
    weighted: bool = False,
    weight_sigma: float = 1.5,
    share_concentration: float = 0.5,
    seed: int = 0,
) -> Dataset:
    """Structure-matched synthetic shift-share design with regional clusters.

    Stands in for applications whose microdata cannot ship: observations sit
    in contiguous clusters, shares are Dirichlet rows (smaller
    ``share_concentration`` concentrates exposure on fewer sectors), weights
    are log-normal with spread ``weight_sigma`` when requested, and the
    regressor is shares @ shocks for one draw of standard normal shocks.
    """
    gen = _rng(seed)
    cluster = (np.arange(n_obs) * n_clusters) // n_obs
    shares = gen.dirichlet(np.full(n_sectors, share_concentration), size=n_obs)
    shocks = gen.standard_normal(n_sectors)
    x = shares @ shocks
    weights = np.exp(gen.normal(0.0, weight_sigma, size=n_obs)) if weighted else None
    eps = gen.standard_normal(n_obs)
    return Dataset(
        y=eps,
        X=np.column_stack([np.ones(n_obs), x]),
        cluster_primary=cluster,
        weights=weights,
        shares=shares,
        shocks=shocks,
        shock_cluster=np.arange(n_sectors),
        shares_sum_to_one=True,
    )


def gen_matching_design(
    n_treated: int,
    n_control: int,
    n_covariates: int = 2,
    seed: int = 0,
) -> Dataset:
    """Treatment dummy plus standard normal covariates for matching demos."""
    gen = _rng(seed)
    n = n_treated + n_control
    treat = np.zeros(n)
    treat[:n_treated] = 1.0
    covs = gen.standard_normal((n, n_covariates))
    return Dataset(y=np.zeros(n), X=np.column_stack([treat, covs]))
