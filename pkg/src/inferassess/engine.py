"""The assessment loop: regenerate outcomes (or shocks) under the null,
re-run the inference method per replicate, aggregate rejection rates.

Replicates are independent and each draws from its own counter-based
substream keyed by (seed, replicate index), so reports are identical for any
worker count. The full sorted p-value vector is stored, not just rejection
counts: the maximum over-rejection and the p-value CDF need it.
"""

from __future__ import annotations

import dataclasses
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import errorgen, resampling
from .datamodel import Dataset, LinearHypothesis
from .errorgen import ErrorModel, ShockScheme
from .errors import (
    AssessmentAbortError,
    ConfigurationError,
    DegenerateTestError,
    SingularDesignError,
)
from .matching import MatchPlan, MatchTestSpec
from .regression import DesignSolver
from .streams import substream
from .variance import VarianceSpec, _direction_variance, _reference_pvalue, t_test
from .resampling import ResamplingTestSpec

_FAILURE_FRACTION = 0.01

MethodSpec = VarianceSpec | ResamplingTestSpec | MatchTestSpec


@dataclass(frozen=True)
class AssessmentSpec:
    """Everything Step 1 fixes: the null, the method under audit, the
    replicate-generating distribution, and the simulation budget."""

    hypothesis: LinearHypothesis
    method: MethodSpec
    error_model: ErrorModel | ShockScheme = ErrorModel()
    beta_tilde_policy: str = "zero_then_project"
    reps: int = 10000
    alphas: tuple[float, ...] = (0.01, 0.05, 0.10)
    seed: int = 0
    power_alternative: float | None = None

    def __post_init__(self):
        if self.reps < 100:
            raise ConfigurationError("need at least 100 replicates")
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas or any(not 0.0 < a < 1.0 for a in alphas):
            raise ConfigurationError("alphas must lie strictly inside (0, 1)")
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ConfigurationError("alphas must be strictly increasing")
        object.__setattr__(self, "alphas", alphas)
        if self.beta_tilde_policy not in ("zero_then_project", "restricted_fit"):
            raise ConfigurationError(f"unknown beta_tilde policy {self.beta_tilde_policy!r}")


@dataclass(frozen=True)
class RejectionRate:
    alpha: float
    rate: float
    mc_se: float


@dataclass(frozen=True)
class FailureSummary:
    count: int
    reasons: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True)
class AssessmentReport:
    """Per-alpha rejection rates plus the full p-value distribution."""

    rejection_rates: tuple[RejectionRate, ...]
    pvalues: np.ndarray
    ks_uniform: float
    max_over_rejection: float
    replicate_failures: FailureSummary
    n_requested: int
    seed: int
    setup_warnings: tuple[str, ...] = ()

    def rejection_rate(self, alpha: float) -> float:
        for entry in self.rejection_rates:
            if entry.alpha == alpha:
                return entry.rate
        raise KeyError(f"alpha {alpha} not in report")

    def to_dict(self) -> dict:
        """JSON-ready summary (the p-value vector ships separately)."""
        return {
            "rejection_rates": [
                {"alpha": r.alpha, "rate": r.rate, "mc_se": r.mc_se}
                for r in self.rejection_rates
            ],
            "ks_uniform": self.ks_uniform,
            "max_over_rejection": self.max_over_rejection,
            "failures": {
                "count": self.replicate_failures.count,
                "reasons": dict(self.replicate_failures.reasons),
            },
            "n_requested": self.n_requested,
            "n_effective": int(self.pvalues.size),
            "seed": self.seed,
            "setup_warnings": list(self.setup_warnings),
        }


# ---------------------------------------------------------------------------
# Per-replicate machinery
# ---------------------------------------------------------------------------


class _Prepared:
    """Everything that can be computed once per assessment: the cached design
    factorization, the resolved error model, the mean vector X @ beta_tilde,
    and the per-replicate method closure."""

    def __init__(self, ds: Dataset, spec: AssessmentSpec, generate_q: np.ndarray):
        self.ds = ds
        self.spec = spec
        self.solver = DesignSolver(ds)
        self.shock_mode = isinstance(spec.error_model, ShockScheme)
        self.warnings: tuple[str, ...] = ()

        method = spec.method
        self.tested_col: int | None = None
        if self._needs_single_column():
            self.tested_col = spec.hypothesis.single_index()

        _check_compat(ds, spec, self.tested_col)

        if not self.shock_mode:
            model = spec.error_model
            base_residuals = None
            if model.kind in errorgen.RESIDUAL_KINDS or model.kind == "fitted_scaled_normal":
                base_fit = (
                    self.solver.fit_restricted(ds.y, spec.hypothesis)
                    if model.restricted_residuals
                    else self.solver.fit(ds.y)
                )
                base_residuals = base_fit.residuals
            self.resolved = errorgen.resolve_error_model(
                model, ds, base_residuals=base_residuals, tested_col=self.tested_col
            )
            self.warnings = self.resolved.warnings
            self.mu = self._mean_vector(generate_q)

        if isinstance(method, VarianceSpec):
            r = spec.hypothesis.R[0]
            ar = self.solver.xtx_inv @ r
            self._u = self.solver.Xd @ ar
            self._rar = float(r @ ar)
            self._q0 = float(spec.hypothesis.q[0])
            if method.kind == "crve":
                labels = ds.cluster_labels(method.cluster_level)
                self._n_clusters = int(labels.max()) + 1
            else:
                self._n_clusters = None
        elif isinstance(method, MatchTestSpec):
            self.match_plan = MatchPlan(ds, method.match, method.treat_col)

    def _needs_single_column(self) -> bool:
        spec = self.spec
        if isinstance(spec.error_model, ShockScheme):
            return True
        if spec.error_model.kind == "two_group_hetero":
            return True
        method = spec.method
        if isinstance(method, ResamplingTestSpec) and method.kind in (
            "permutation",
            "akm",
            "akm0",
        ):
            return True
        return isinstance(method, MatchTestSpec)

    def _mean_vector(self, generate_q: np.ndarray) -> np.ndarray:
        h = self.spec.hypothesis
        if self.spec.beta_tilde_policy == "zero_then_project":
            # Minimum-norm solution of R beta = q; zero when q is zero.
            beta, *_ = np.linalg.lstsq(h.R, generate_q, rcond=None)
            return self.ds.X @ beta
        gen_h = LinearHypothesis(h.R, generate_q)
        restricted = self.solver.fit_restricted(self.ds.y, gen_h)
        return np.asarray(self.ds.y) - restricted.residuals

    # -- single replicate -------------------------------------------------

    def run_replicate(self, b: int) -> float:
        seed = self.spec.seed
        rng = substream(seed, b)
        if self.shock_mode:
            ds_b = errorgen.draw_shocks(
                self.ds,
                rng,
                tested_col=self.tested_col,
                cluster_draws=self.spec.error_model.cluster_draws,
            )
            return self._pvalue_for_dataset(ds_b, substream(seed, b, 1))
        eps = errorgen.draw_resolved(self.resolved, self.ds, rng)
        y_b = self.mu + eps
        return self._pvalue_for_outcome(y_b, substream(seed, b, 1))

    def _pvalue_for_outcome(self, y_b: np.ndarray, inner_rng: np.random.Generator) -> float:
        spec = self.spec
        method = spec.method
        if isinstance(method, VarianceSpec):
            fit = self.solver.fit(y_b)
            var = _direction_variance(
                fit,
                self.ds,
                method,
                resid=fit.residuals,
                u=self._u,
                rar=self._rar,
                weights=self.solver.weights,
            )
            se = float(np.sqrt(max(var, 0.0)))
            if se == 0.0:
                raise DegenerateTestError("standard error is exactly zero")
            t = (float(spec.hypothesis.R[0] @ fit.beta_hat) - self._q0) / se
            return _reference_pvalue(
                t,
                method.resolved_reference(),
                n_clusters=self._n_clusters,
                dof=self.ds.n - fit.df_model,
            )
        if isinstance(method, MatchTestSpec):
            if method.kind == "ai":
                return self.match_plan.large_sample_p(y_b)
            return resampling.sign_change_p(
                self.match_plan.discrepancies(y_b), inner_rng, method.inner_reps
            )
        ds_b = self.ds._replace_unchecked(y=y_b)
        if method.kind == "wild_cluster":
            return resampling.wild_cluster_p(ds_b, spec.hypothesis, method, inner_rng, self.solver)
        if method.kind == "permutation":
            return resampling.permutation_p(
                ds_b, spec.hypothesis, method.scheme, method.inner_reps, inner_rng, self.solver
            )
        if method.kind == "akm":
            return resampling.akm_p(ds_b, spec.hypothesis, self.solver)
        if method.kind == "akm0":
            return resampling.akm0_p(ds_b, spec.hypothesis, self.solver)
        raise ConfigurationError(f"unknown method kind {method.kind!r}")

    def _pvalue_for_dataset(self, ds_b: Dataset, inner_rng: np.random.Generator) -> float:
        spec = self.spec
        method = spec.method
        solver_b = DesignSolver(ds_b)
        if isinstance(method, VarianceSpec):
            return t_test(solver_b.fit(ds_b.y), ds_b, spec.hypothesis, method, solver_b)
        if isinstance(method, ResamplingTestSpec):
            if method.kind == "wild_cluster":
                return resampling.wild_cluster_p(ds_b, spec.hypothesis, method, inner_rng, solver_b)
            if method.kind == "permutation":
                return resampling.permutation_p(
                    ds_b, spec.hypothesis, method.scheme, method.inner_reps, inner_rng, solver_b
                )
            if method.kind == "akm":
                return resampling.akm_p(ds_b, spec.hypothesis, solver_b)
            if method.kind == "akm0":
                return resampling.akm0_p(ds_b, spec.hypothesis, solver_b)
        raise ConfigurationError("method cannot be combined with shock resampling")


def _check_compat(ds: Dataset, spec: AssessmentSpec, tested_col: int | None) -> None:
    method = spec.method
    if isinstance(method, VarianceSpec) and method.kind == "crve":
        if ds.cluster_labels(method.cluster_level) is None:
            raise ConfigurationError(f"crve needs {method.cluster_level} cluster labels")
    if isinstance(method, ResamplingTestSpec):
        if method.kind == "wild_cluster" and ds.cluster_labels(method.cluster_level) is None:
            raise ConfigurationError("wild bootstrap needs cluster labels")
        if method.kind in ("akm", "akm0") and (ds.shares is None or ds.shocks is None):
            raise ConfigurationError("shift-share inference needs shares and shocks")
        if method.kind == "sign_change":
            raise ConfigurationError(
                "sign_change applies to matching discrepancies; use a MatchTestSpec"
            )
        if method.kind == "permutation":
            if method.scheme == "cluster_level" and ds.cluster_primary is None:
                raise ConfigurationError("cluster_level permutation needs primary labels")
            if method.scheme == "within_strata" and ds.cluster_coarse is None:
                raise ConfigurationError("within_strata permutation needs coarse labels")
    if isinstance(method, MatchTestSpec):
        if tested_col is not None and tested_col != method.treat_col:
            raise ConfigurationError("hypothesis column and matching treat_col disagree")
    if isinstance(spec.error_model, ShockScheme):
        if ds.shares is None:
            raise ConfigurationError("shock resampling needs shares")
        if spec.error_model.cluster_draws and ds.shock_cluster is None:
            raise ConfigurationError("clustered shock draws need shock_cluster labels")
    elif spec.error_model.kind == "cluster_normal":
        if ds.cluster_primary is None and ds.cluster_coarse is None:
            raise ConfigurationError("cluster_normal needs cluster labels")
    elif spec.error_model.kind == "fitted_scaled_normal" and ds.weights is None:
        raise ConfigurationError("fitted_scaled_normal needs weights")


# ---------------------------------------------------------------------------
# Worker plumbing
# ---------------------------------------------------------------------------

_WORKER_PREP: _Prepared | None = None


def _init_worker(ds: Dataset, spec: AssessmentSpec, generate_q: np.ndarray) -> None:
    global _WORKER_PREP
    _WORKER_PREP = _Prepared(ds, spec, generate_q)


def _worker_chunk(indices: list[int]) -> list[tuple[int, float | None, str | None]]:
    out = []
    for b in indices:
        out.append(_safe_replicate(_WORKER_PREP, b))
    return out


def _safe_replicate(prep: _Prepared, b: int) -> tuple[int, float | None, str | None]:
    try:
        return b, prep.run_replicate(b), None
    except (SingularDesignError, DegenerateTestError, np.linalg.LinAlgError) as exc:
        return b, None, f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def _run(ds: Dataset, spec: AssessmentSpec, generate_q: np.ndarray, threads: int) -> AssessmentReport:
    prep = _Prepared(ds, spec, generate_q)
    if threads <= 1:
        results = [_safe_replicate(prep, b) for b in range(spec.reps)]
    else:
        chunk = max(64, -(-spec.reps // (threads * 8)))
        batches = [list(range(i, min(i + chunk, spec.reps))) for i in range(0, spec.reps, chunk)]
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_worker, initargs=(ds, spec, generate_q)
        ) as pool:
            results = [item for batch in pool.map(_worker_chunk, batches) for item in batch]
    results.sort(key=lambda item: item[0])

    pvals = np.array([p for _, p, _ in results if p is not None], dtype=np.float64)
    reasons = Counter(reason for _, _, reason in results if reason is not None)
    n_failed = spec.reps - pvals.size
    if n_failed > _FAILURE_FRACTION * spec.reps:
        detail = "; ".join(f"{k} x{v}" for k, v in reasons.most_common())
        raise AssessmentAbortError(
            f"{n_failed} of {spec.reps} replicates failed (> {_FAILURE_FRACTION:.0%}): {detail}"
        )

    pvals.sort()
    b = pvals.size
    ecdf_hi = np.arange(1, b + 1) / b
    ecdf_lo = np.arange(0, b) / b
    ks = float(np.max(np.maximum(ecdf_hi - pvals, pvals - ecdf_lo)))
    max_over = float(max(np.max(ecdf_hi - pvals), 0.0))
    rates = tuple(
        RejectionRate(
            alpha=a,
            rate=float(np.mean(pvals <= a)),
            mc_se=float(np.sqrt(np.mean(pvals <= a) * (1 - np.mean(pvals <= a)) / b)),
        )
        for a in spec.alphas
    )
    frozen = pvals.copy()
    frozen.setflags(write=False)
    return AssessmentReport(
        rejection_rates=rates,
        pvalues=frozen,
        ks_uniform=ks,
        max_over_rejection=max_over,
        replicate_failures=FailureSummary(
            count=int(n_failed), reasons=tuple(sorted(reasons.items()))
        ),
        n_requested=spec.reps,
        seed=spec.seed,
        setup_warnings=prep.warnings,
    )


def run_assessment(ds: Dataset, spec: AssessmentSpec, threads: int = 1) -> AssessmentReport:
    """Empirical size of the method under the null-imposed replicate DGP."""
    return _run(ds, spec, np.asarray(spec.hypothesis.q), threads)


def run_power(ds: Dataset, spec: AssessmentSpec, threads: int = 1) -> AssessmentReport:
    """Rejection rate when replicates are generated under the alternative.

    The mean vector imposes ``power_alternative`` on the tested combination;
    every replicate still tests the original null, so the report reads as
    power (against that alternative, under the chosen error distribution).
    """
    if spec.power_alternative is None:
        raise ConfigurationError("run_power needs power_alternative")
    if spec.hypothesis.n_restrictions != 1:
        raise ConfigurationError("power mode handles scalar hypotheses only")
    return _run(ds, spec, np.array([float(spec.power_alternative)]), threads)


@dataclass(frozen=True)
class SweepEntry:
    ratio: float
    report: AssessmentReport


@dataclass(frozen=True)
class SweepResult:
    entries: tuple[SweepEntry, ...]

    def max_rejection(self, alpha: float = 0.05) -> tuple[float, float]:
        """(ratio, rate) of the worst assessment at the given level."""
        best = max(self.entries, key=lambda e: e.report.rejection_rate(alpha))
        return best.ratio, best.report.rejection_rate(alpha)


def worst_case_sweep(
    ds: Dataset,
    spec: AssessmentSpec,
    ratio_grid: list[float],
    threads: int = 1,
) -> SweepResult:
    """Re-run the assessment across a grid of group variance ratios for a
    binary tested regressor and report the worst case."""
    if not ratio_grid:
        raise ConfigurationError("ratio grid is empty")
    col = spec.hypothesis.single_index()
    if not np.all(np.isin(ds.X[:, col], (0.0, 1.0))):
        raise ConfigurationError("worst-case sweep needs a binary tested regressor")
    entries = []
    for ratio in ratio_grid:
        spec_r = dataclasses.replace(
            spec, error_model=ErrorModel(kind="two_group_hetero", variance_ratio=float(ratio))
        )
        entries.append(SweepEntry(ratio=float(ratio), report=run_assessment(ds, spec_r, threads)))
    return SweepResult(entries=tuple(entries))


def pvalue_cdf(report: AssessmentReport, grid: np.ndarray) -> np.ndarray:
    """Empirical CDF of the replicate p-values on a grid, as (alpha, cdf)
    rows ready for plotting."""
    grid = np.asarray(grid, dtype=np.float64)
    if report.pvalues.size == 0:
        raise ConfigurationError("report holds no p-values")
    cdf = np.searchsorted(report.pvalues, grid, side="right") / report.pvalues.size
    return np.column_stack([grid, cdf])
