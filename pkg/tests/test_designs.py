"""Synthetic design generators and the placebo-variance formulas."""

import numpy as np
import pytest

from inferassess import ConfigurationError
from inferassess.designs import (
    duplicate_dataset,
    gen_matching_design,
    gen_shift_share_cluster,
    gen_shift_share_simple,
    gen_stratified,
    gen_two_sample,
    gen_weighted_mean_toy,
    placebo_variances,
)


class TestTwoSample:
    def test_shapes(self):
        ds = gen_two_sample(5, 100)
        assert ds.n == 105
        assert ds.X[:, 1].sum() == 5

    def test_smallest_design(self):
        ds = gen_two_sample(1, 1)
        assert ds.n == 2

    def test_large_design(self):
        ds = gen_two_sample(2000, 2000)
        assert ds.n == 4000
        assert ds.X[:, 1].sum() == 2000

    def test_seeded_outcomes(self):
        a = gen_two_sample(3, 3, y_seed=1)
        b = gen_two_sample(3, 3, y_seed=1)
        c = gen_two_sample(3, 3, y_seed=2)
        assert np.array_equal(a.y, b.y)
        assert not np.array_equal(a.y, c.y)


class TestStratified:
    def test_panel_a_smallest_cell(self):
        ds = gen_stratified(12, 6, 2, 10, 0)
        assert ds.n == 120
        assert int(ds.cluster_primary.max()) + 1 == 12
        assert int(ds.cluster_coarse.max()) + 1 == 6

    def test_two_strata_panel(self):
        ds = gen_stratified(40, 2, 20, 10, 0)
        assert int(ds.cluster_coarse.max()) + 1 == 2

    def test_balanced_treatment_within_stratum(self):
        ds = gen_stratified(20, 5, 4, 3, 0)
        treat = ds.X[:, 0]
        for s in range(5):
            rows = ds.cluster_coarse == s
            schools = np.unique(ds.cluster_primary[rows])
            treated_schools = sum(
                treat[ds.cluster_primary == g][0] == 1.0 for g in schools
            )
            assert treated_schools == 2

    def test_treatment_constant_within_school(self):
        ds = gen_stratified(12, 6, 2, 10, 0)
        treat = ds.X[:, 0]
        for g in range(12):
            vals = treat[ds.cluster_primary == g]
            assert np.all(vals == vals[0])

    def test_covariates_deterministic_given_seed(self):
        a = gen_stratified(12, 6, 2, 5, 3, cov_seed=9)
        b = gen_stratified(12, 6, 2, 5, 3, cov_seed=9)
        c = gen_stratified(12, 6, 2, 5, 3, cov_seed=10)
        assert np.array_equal(a.X, b.X)
        assert not np.array_equal(a.X, c.X)

    def test_odd_group_size_rejected(self):
        with pytest.raises(ConfigurationError):
            gen_stratified(9, 3, 3, 10, 0)


class TestShiftShareSimple:
    def test_structure(self):
        ds = gen_shift_share_simple(4, 2, 0.0, 1.0, np.random.default_rng(0))
        assert ds.n == 8
        x = ds.X[:, 1]
        assert np.allclose(x[0::2], x[1::2])  # constant within groups
        assert ds.shocks.sum() == 2  # half the sectors shocked
        assert np.allclose(ds.shares.sum(axis=1), 1.0)

    def test_zero_beta_zero_noise_gives_zero_variances(self):
        ds = gen_shift_share_simple(6, 3, 0.0, 1.0, np.random.default_rng(1))
        v_true, v_crve = placebo_variances(ds, 0.0, np.zeros(ds.n))
        assert v_true == 0.0
        assert v_crve == 0.0

    def test_placebo_variance_identity(self):
        # Average gap over error draws matches the analytic expression.
        n_sectors, per, beta = 200, 5, 1.0
        n = n_sectors * per
        gaps = []
        for seed in range(60):
            rng = np.random.default_rng(1000 + seed)
            ds = gen_shift_share_simple(n_sectors, per, beta, 1.0, rng)
            eps = np.asarray(ds.y) - beta * np.asarray(ds.X[:, 1])
            v_true, v_crve = placebo_variances(ds, beta, eps)
            gaps.append(n_sectors * (v_true - v_crve))
        target = beta**2 * (n_sectors / (n_sectors - 2) - n_sectors / (n - 2))
        assert abs(np.mean(gaps) / target - 1.0) < 0.10


class TestDuplicate:
    def test_doubling_doubles_clusters(self):
        rng = np.random.default_rng(2)
        from inferassess import Dataset

        ds = Dataset(
            y=rng.standard_normal(20),
            X=np.column_stack([np.ones(20), rng.standard_normal(20)]),
            cluster_primary=np.arange(20) % 7,
            weights=rng.uniform(1, 2, 20),
        )
        doubled = duplicate_dataset(ds, 2)
        assert doubled.n == 40
        assert int(doubled.cluster_primary.max()) + 1 == 14
        assert np.array_equal(doubled.y[:20], doubled.y[20:])
        quadrupled = duplicate_dataset(ds, 4)
        assert quadrupled.n == 80
        assert int(quadrupled.cluster_primary.max()) + 1 == 28

    def test_rejects_single_copy(self):
        ds = gen_two_sample(2, 2)
        with pytest.raises(Exception):
            duplicate_dataset(ds, 1)


class TestWeightedToy:
    def test_weight_halves(self):
        ds, model = gen_weighted_mean_toy(10, 10.0, hetero=False)
        assert np.all(ds.weights[:5] == 1.0)
        assert np.all(ds.weights[5:] == 10.0)
        assert model.kind == "iid_normal"

    def test_hetero_variant_scales_second_half(self):
        ds, model = gen_weighted_mean_toy(10, 10.0, hetero=True)
        assert model.kind == "scaled_normal"
        assert np.all(model.variances[:5] == 1.0)
        assert np.all(model.variances[5:] == 0.1)

    def test_odd_n_rejected(self):
        with pytest.raises(ConfigurationError):
            gen_weighted_mean_toy(9, 10.0)


class TestClusterShiftShare:
    def test_structure_and_determinism(self):
        a = gen_shift_share_cluster(100, 10, 8, weighted=True, seed=3)
        b = gen_shift_share_cluster(100, 10, 8, weighted=True, seed=3)
        assert np.array_equal(a.X, b.X)
        assert np.array_equal(a.weights, b.weights)
        assert np.allclose(a.shares.sum(axis=1), 1.0)
        assert int(a.cluster_primary.max()) + 1 == 10
        assert np.allclose(a.X[:, 1], a.shares @ a.shocks)


class TestMatchingDesign:
    def test_shape(self):
        ds = gen_matching_design(3, 7, 2, seed=4)
        assert ds.n == 10
        assert ds.X[:, 0].sum() == 3
