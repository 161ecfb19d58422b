"""OLS / weighted OLS with one-way fixed-effect absorption.

The design matrix is fixed across assessment replicates, so the expensive
part (within-group demeaning plus a pivoted QR) is factored once into a
:class:`DesignSolver`; per-replicate fits on fresh outcome vectors are then
cheap and allocation-light.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .datamodel import Dataset, FitResult, LinearHypothesis
from .errors import SingularDesignError, ValidationError

_PIVOT_RTOL = 1e-10


class _GroupDemeaner:
    """Weighted within-group demeaning for one absorb factor."""

    def __init__(self, labels: np.ndarray, weights: np.ndarray):
        self.labels = labels
        self.n_groups = int(labels.max()) + 1
        self.weights = weights
        self._wsum = np.bincount(labels, weights=weights, minlength=self.n_groups)

    def demean(self, v: np.ndarray) -> np.ndarray:
        if v.ndim == 1:
            means = np.bincount(self.labels, weights=self.weights * v, minlength=self.n_groups)
            means /= self._wsum
            return v - means[self.labels]
        out = np.empty_like(v)
        for j in range(v.shape[1]):
            out[:, j] = self.demean(v[:, j])
        return out


class ControlProjector:
    """Residualize vectors on a fixed set of control columns (weighted,
    after absorption). Used for Frisch-Waugh partialling."""

    def __init__(self, controls: np.ndarray, weights: np.ndarray, demeaner: _GroupDemeaner | None):
        self._demeaner = demeaner
        self._weights = weights
        self._controls = controls  # already demeaned
        if controls.shape[1] == 0:
            self._coef_map = None
        else:
            ctc = controls.T @ (weights[:, None] * controls)
            self._coef_map = np.linalg.solve(ctc, (weights[:, None] * controls).T)

    def residualize(self, v: np.ndarray) -> np.ndarray:
        squeeze = v.ndim == 1
        mat = v[:, None] if squeeze else v
        if self._demeaner is not None:
            mat = self._demeaner.demean(mat)
        if self._coef_map is not None:
            mat = mat - self._controls @ (self._coef_map @ mat)
        return mat[:, 0] if squeeze else mat


class DesignSolver:
    """Cached factorization of (weighted, absorbed) X for repeated fits."""

    def __init__(self, ds: Dataset):
        self.ds = ds
        n, k = ds.n, ds.k
        self.weights = np.ones(n) if ds.weights is None else np.asarray(ds.weights)
        self.demeaner = None
        n_absorbed = 0
        if ds.absorb is not None:
            self.demeaner = _GroupDemeaner(ds.absorb, self.weights)
            n_absorbed = self.demeaner.n_groups
        self.Xd = self.demeaner.demean(np.asarray(ds.X)) if self.demeaner else np.asarray(ds.X)
        self.df_model = k + (n_absorbed - 1 if n_absorbed else 0)

        sw = np.sqrt(self.weights)
        q, r, piv = scipy.linalg.qr(sw[:, None] * self.Xd, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        tol = _PIVOT_RTOL * (diag[0] if diag.size else 0.0)
        deficient = np.flatnonzero(diag <= tol)
        if diag.size == 0 or deficient.size:
            bad = int(piv[deficient[0]]) if deficient.size else 0
            raise SingularDesignError(bad)
        self._q = q
        self._r = r
        self._piv = piv
        self._sw = sw

        rinv = scipy.linalg.solve_triangular(r, np.eye(k))
        xtx_inv = np.empty((k, k))
        xtx_inv[np.ix_(piv, piv)] = rinv @ rinv.T
        self.xtx_inv = xtx_inv
        self.leverage = self.weights * np.einsum("ij,ij->i", self.Xd @ xtx_inv, self.Xd)
        self._projectors: dict[int, ControlProjector] = {}

    # -- per-replicate entry points -------------------------------------

    def demean(self, y: np.ndarray) -> np.ndarray:
        return self.demeaner.demean(y) if self.demeaner else np.asarray(y, dtype=np.float64)

    def fit(self, y: np.ndarray) -> FitResult:
        yd = self.demean(y)
        coef_piv = scipy.linalg.solve_triangular(self._r, self._q.T @ (self._sw * yd))
        beta = np.empty(self.ds.k)
        beta[self._piv] = coef_piv
        residuals = yd - self.Xd @ beta
        return FitResult(
            beta_hat=beta,
            residuals=residuals,
            xtx_inv=self.xtx_inv,
            df_model=self.df_model,
            leverage=self.leverage,
        )

    def fit_restricted(self, y: np.ndarray, h: LinearHypothesis) -> FitResult:
        """Least squares subject to R beta = q via the closed-form projection."""
        free = self.fit(y)
        R, q = h.R, h.q
        A = self.xtx_inv
        gap = R @ free.beta_hat - q
        middle = np.linalg.solve(R @ A @ R.T, gap)
        beta = free.beta_hat - A @ (R.T @ middle)
        residuals = self.demean(y) - self.Xd @ beta
        return FitResult(
            beta_hat=beta,
            residuals=residuals,
            xtx_inv=self.xtx_inv,
            df_model=self.df_model,
            leverage=self.leverage,
        )

    def control_projector(self, target_col: int) -> ControlProjector:
        """Projector onto the orthocomplement of every column except
        ``target_col`` (plus absorbed effects)."""
        if target_col not in self._projectors:
            keep = [j for j in range(self.ds.k) if j != target_col]
            controls = self.Xd[:, keep]
            if controls.shape[1]:
                rank = np.linalg.matrix_rank(controls)
                if rank < controls.shape[1]:
                    raise SingularDesignError(keep[0], "control columns are rank deficient")
            self._projectors[target_col] = ControlProjector(
                controls, self.weights, self.demeaner
            )
        return self._projectors[target_col]

    def partial_out(self, y: np.ndarray, target_col: int) -> tuple[np.ndarray, np.ndarray]:
        proj = self.control_projector(target_col)
        return proj.residualize(np.asarray(y, dtype=np.float64)), proj.residualize(
            np.asarray(self.ds.X[:, target_col])
        )


def fit(ds: Dataset) -> FitResult:
    """Weighted least squares of y on X with optional absorbed fixed effects."""
    return DesignSolver(ds).fit(ds.y)


def fit_restricted(ds: Dataset, h: LinearHypothesis) -> FitResult:
    """Least squares with the null R beta = q imposed."""
    return DesignSolver(ds).fit_restricted(ds.y, h)


def partial_out(ds: Dataset, target_col: int) -> tuple[np.ndarray, np.ndarray]:
    """Frisch-Waugh residuals of y and X[:, target_col] on the remaining
    columns and absorbed effects; the slope of the first on the second equals
    the full-model coefficient."""
    if not 0 <= target_col < ds.k:
        raise ValidationError(f"target column {target_col} out of range")
    return DesignSolver(ds).partial_out(ds.y, target_col)
