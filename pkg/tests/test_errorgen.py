"""Replicate-generating distributions."""

import numpy as np
import pytest
import scipy.stats

from inferassess import (
    ConfigurationError,
    Dataset,
    ErrorModel,
    ValidationError,
    draw_errors,
    draw_shocks,
    fit_variance_model,
)
from inferassess.designs import gen_shift_share_simple
from inferassess.errorgen import fitted_variances, resolve_error_model


def _plain(n=100):
    return Dataset(y=np.zeros(n), X=np.ones((n, 1)))


def _clustered(n=100, g=10):
    return Dataset(y=np.zeros(n), X=np.ones((n, 1)), cluster_primary=np.arange(n) % g)


class TestDrawErrors:
    def test_iid_normal_moments(self):
        n = 1_000_000
        draws = draw_errors(ErrorModel("iid_normal"), _plain(n), np.random.default_rng(0))
        assert abs(draws.mean()) < 4 / np.sqrt(n)
        assert abs(draws.var() - 1.0) < 0.01

    def test_lognormal_demeaned_center_and_skew(self):
        n = 1_000_000
        draws = draw_errors(ErrorModel("lognormal_demeaned"), _plain(n), np.random.default_rng(1))
        sd = np.sqrt((np.e - 1) * np.e)
        assert abs(draws.mean()) < 5 * sd / np.sqrt(n)
        assert scipy.stats.skew(draws) > 1.0

    def test_cluster_normal_rho_zero_matches_standard_normal(self):
        n = 100_000
        ds = _clustered(n, 100)
        draws = draw_errors(ErrorModel("cluster_normal", rho=0.0), ds, np.random.default_rng(2))
        stat = scipy.stats.kstest(draws, "norm").statistic
        assert stat < 0.01

    def test_cluster_normal_induces_within_cluster_correlation(self):
        n, g = 100_000, 1000
        ds = _clustered(n, g)
        draws = draw_errors(ErrorModel("cluster_normal", rho=0.6), ds, np.random.default_rng(3))
        by_cluster = draws.reshape(-1, g)  # labels are i % g: columns are clusters
        first, second = by_cluster[0], by_cluster[1]
        corr = np.corrcoef(first, second)[0, 1]
        assert abs(corr - 0.6) < 0.05

    def test_scaled_normal_unit_variances_equals_iid_stream(self):
        n = 1000
        ds = _plain(n)
        a = draw_errors(ErrorModel("iid_normal"), ds, np.random.default_rng(4))
        b = draw_errors(
            ErrorModel("scaled_normal", variances=np.ones(n)), ds, np.random.default_rng(4)
        )
        assert np.array_equal(a, b)

    def test_residual_bootstrap_is_multiset_of_input(self):
        base = np.array([0.3, -1.2, 0.9, 0.0, 2.2])
        ds = _plain(5)
        draws = draw_errors(
            ErrorModel("residual_bootstrap"), ds, np.random.default_rng(5), base_residuals=base
        )
        assert np.all(np.isin(draws, base))

    def test_sign_flip_preserves_magnitudes(self):
        base = np.linspace(-2, 2, 50)
        draws = draw_errors(
            ErrorModel("sign_flip_residuals"), _plain(50), np.random.default_rng(6), base_residuals=base
        )
        assert np.allclose(np.abs(draws), np.abs(base))

    def test_two_group_hetero_variances(self):
        n = 200_000
        d = np.repeat([1.0, 0.0], n // 2)
        ds = Dataset(y=np.zeros(n), X=np.column_stack([np.ones(n), d]))
        draws = draw_errors(
            ErrorModel("two_group_hetero", variance_ratio=4.0),
            ds,
            np.random.default_rng(7),
            tested_col=1,
        )
        assert abs(draws[d == 1].var() - 4.0) < 0.1
        assert abs(draws[d == 0].var() - 1.0) < 0.05

    def test_all_generators_mean_zero(self):
        n = 1_000_000
        ds = _clustered(n, 100)
        base = np.random.default_rng(8).standard_normal(n)
        base -= base.mean()
        # Standard error of the sample mean; the cluster model's common
        # component is drawn once per cluster, so its mean is much noisier.
        g = 100
        cases = [
            (ErrorModel("iid_normal"), 1.0 / np.sqrt(n)),
            (ErrorModel("scaled_normal", variances=np.full(n, 2.5)), np.sqrt(2.5 / n)),
            (ErrorModel("cluster_normal", rho=0.3), np.sqrt(0.3 / g + 0.7 / n)),
            (ErrorModel("residual_bootstrap"), 1.0 / np.sqrt(n)),
            (ErrorModel("sign_flip_residuals"), 1.0 / np.sqrt(n)),
            (ErrorModel("lognormal_demeaned"), np.sqrt((np.e - 1) * np.e / n)),
        ]
        for i, (model, se_mean) in enumerate(cases):
            draws = draw_errors(model, ds, np.random.default_rng(100 + i), base_residuals=base)
            assert abs(draws.mean()) < 5 * se_mean, model.kind

    def test_missing_prerequisites(self):
        with pytest.raises(ConfigurationError):
            draw_errors(ErrorModel("residual_bootstrap"), _plain(), np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            draw_errors(ErrorModel("cluster_normal", rho=0.2), _plain(), np.random.default_rng(0))
        with pytest.raises(ValidationError):
            ErrorModel("cluster_normal", rho=1.0)
        with pytest.raises(ValidationError):
            ErrorModel("scaled_normal", variances=np.array([1.0, -1.0]))


class TestFitVarianceModel:
    def test_recovers_inverse_weight_variance(self):
        rng = np.random.default_rng(9)
        n = 200_000
        M = rng.uniform(1.0, 20.0, n)
        resid = rng.standard_normal(n) * np.sqrt(3.0 / M)
        a, b = fit_variance_model(resid, M)
        assert abs(a) < 0.02
        assert abs(b - 3.0) < 0.1

    def test_homoskedastic_gives_zero_slope(self):
        rng = np.random.default_rng(10)
        n = 200_000
        M = rng.uniform(1.0, 20.0, n)
        resid = rng.standard_normal(n)
        a, b = fit_variance_model(resid, M)
        assert abs(a - 1.0) < 0.02
        assert abs(b) < 0.1

    def test_clamping_counts_nonpositive_fits(self):
        # Engineered so a_hat + b_hat/M is negative for the largest M values.
        M = np.array([1.0, 1.0, 10.0, 10.0, 100.0, 100.0])
        resid = np.array([3.0, 3.0, 0.1, 0.1, 0.01, 0.01])
        v, clamped = fitted_variances(resid, M)
        assert clamped > 0
        assert np.all(v > 0)
        ds = Dataset(y=np.zeros(6), X=np.ones((6, 1)), weights=M)
        resolved = resolve_error_model(
            ErrorModel("fitted_scaled_normal"), ds, base_residuals=resid
        )
        assert resolved.warnings


class TestDrawShocks:
    def test_identity_block_structure(self):
        ds = gen_shift_share_simple(4, 2, 0.0, 1.0, np.random.default_rng(11))
        rep = draw_shocks(ds, np.random.default_rng(12), tested_col=1)
        x = np.asarray(rep.X[:, 1])
        assert np.allclose(x[0::2], x[1::2])  # constant within sector groups
        assert np.array_equal(rep.y, ds.y)  # outcomes fixed

    def test_seed_determinism(self):
        ds = gen_shift_share_simple(6, 3, 0.0, 1.0, np.random.default_rng(13))
        a = draw_shocks(ds, np.random.default_rng(14), tested_col=1)
        b = draw_shocks(ds, np.random.default_rng(14), tested_col=1)
        c = draw_shocks(ds, np.random.default_rng(15), tested_col=1)
        assert np.array_equal(a.X, b.X)
        assert not np.array_equal(a.X, c.X)

    def test_cluster_draws_constant_within_shock_cluster(self):
        ds = gen_shift_share_simple(6, 2, 0.0, 1.0, np.random.default_rng(16))
        ds = ds.replace(shock_cluster=np.array([0, 0, 1, 1, 2, 2]))
        rep = draw_shocks(ds, np.random.default_rng(17), tested_col=1, cluster_draws=True)
        g = np.asarray(rep.shocks)
        assert g[0] == g[1] and g[2] == g[3] and g[4] == g[5]

    def test_needs_shares(self):
        with pytest.raises(ConfigurationError):
            draw_shocks(_plain(), np.random.default_rng(0), tested_col=0)
