"""Samplers: quota arithmetic, determinism, and Monte Carlo expectations."""

import numpy as np
import pytest

from pcseg.geometry import PointCloud
from pcseg.sampling import (
    biased_fg_count,
    biased_sample,
    cap_points,
    leakage_audit,
    uniform_sample,
)


def labeled_cloud(n, fg_count, fg_class=1, seed=0):
    """n points, the first fg_count labeled fg_class, the rest 0."""
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=np.int64)
    labels[:fg_count] = fg_class
    return PointCloud(rng.uniform(0, 1, (n, 3)), rng.random((n, 3)), labels)


class TestBiasedQuota:
    def test_proportional_branch(self):
        # n=10, m=5, 4 foreground points -> quota floor(5*4/10) = 2
        assert biased_fg_count(10, 5, 4) == 2

    def test_small_cloud_branch(self):
        # n=3 < m=5 -> quota is the whole foreground set
        assert biased_fg_count(3, 5, 2) == 2

    def test_quota_never_exceeds_foreground(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 100))
            m = int(rng.integers(1, 100))
            p = int(rng.integers(0, n + 1))
            q = biased_fg_count(n, m, p)
            assert 0 <= q <= p
            if n >= m:
                assert q <= m


class TestBiasedSample:
    def test_output_size_exact(self):
        cloud = labeled_cloud(50, 10)
        for m in (1, 7, 50, 80):
            assert len(biased_sample(cloud, m, 1, 3)) == m

    def test_no_foreground_is_plain_uniform(self):
        cloud = labeled_cloud(40, 0)
        out = biased_sample(cloud, 12, 1, 5)
        assert len(out) == 12
        assert (out.labels == 0).all()

    def test_duplicates_from_double_sampling(self):
        # 2 points, both foreground, m=4: the quota takes both, the
        # whole-cloud draw takes both again -> every point duplicated
        cloud = labeled_cloud(2, 2)
        out = biased_sample(cloud, 4, 1, 0)
        assert len(out) == 4
        assert {tuple(p) for p in out.positions} == {tuple(p) for p in cloud.positions}

    def test_deterministic(self):
        cloud = labeled_cloud(100, 30)
        a = biased_sample(cloud, 64, 1, 42)
        b = biased_sample(cloud, 64, 1, 42)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_rejects_bad_m(self):
        cloud = labeled_cloud(10, 2)
        with pytest.raises(ValueError):
            biased_sample(cloud, 0, 1, 0)


class TestUniformSample:
    def test_full_draw_is_permutation(self):
        cloud = labeled_cloud(20, 5)
        out = uniform_sample(cloud, 20, 7)
        np.testing.assert_array_equal(
            np.sort(out.positions, axis=0), np.sort(cloud.positions, axis=0)
        )

    def test_single_point(self):
        cloud = labeled_cloud(10, 3)
        out = uniform_sample(cloud, 1, 2)
        assert len(out) == 1

    def test_with_replacement_when_small(self):
        cloud = labeled_cloud(3, 1)
        assert len(uniform_sample(cloud, 10, 0)) == 10

    def test_unbiased_expectation(self):
        # f = 0.2, m = 2048 of n = 10000: trial means concentrate near f
        cloud = labeled_cloud(10_000, 2_000)
        fractions = [
            (uniform_sample(cloud, 2048, 100 + t).labels == 1).mean() for t in range(200)
        ]
        assert abs(np.mean(fractions) - 0.2) < 0.01

    def test_deterministic(self):
        cloud = labeled_cloud(50, 10)
        a = uniform_sample(cloud, 30, 9)
        b = uniform_sample(cloud, 30, 9)
        np.testing.assert_array_equal(a.positions, b.positions)


class TestCapPoints:
    def test_identity_when_small(self):
        cloud = labeled_cloud(100, 10)
        out = cap_points(cloud, 20_480, 0)
        assert out is cloud

    def test_caps_when_large(self):
        cloud = labeled_cloud(3000, 100)
        assert len(cap_points(cloud, 2048, 0)) == 2048

    def test_deterministic(self):
        cloud = labeled_cloud(3000, 100)
        a = cap_points(cloud, 2048, 5)
        b = cap_points(cloud, 2048, 5)
        np.testing.assert_array_equal(a.positions, b.positions)


class TestLeakageAudit:
    def test_all_background(self):
        cloud = labeled_cloud(500, 0)
        rep = leakage_audit(cloud, 1, 128, "biased", 20, 0)
        assert rep.mean_output_fg_fraction == 0.0
        assert rep.input_fg_fraction == 0.0

    def test_all_foreground(self):
        cloud = labeled_cloud(500, 500)
        rep = leakage_audit(cloud, 1, 128, "biased", 20, 0)
        assert rep.mean_output_fg_fraction == 1.0
        assert rep.density_ratio == 1.0

    def test_biased_matches_closed_form(self):
        # f = 0.2 -> f(2 - f) = 0.36; Monte Carlo cross-check
        cloud = labeled_cloud(10_000, 2_000)
        rep = leakage_audit(cloud, 1, 2048, "biased", 300, 0)
        assert abs(rep.expected_biased_fraction - 0.36) < 1e-3
        assert abs(rep.mean_output_fg_fraction - 0.36) < 0.01

    def test_biased_mean_within_three_standard_errors(self):
        cloud = labeled_cloud(5_000, 1_500)  # f = 0.3
        m = 1024
        trials = 1000
        rep = leakage_audit(cloud, 1, m, "biased", trials, 7)
        f = rep.input_fg_fraction
        n_fg = biased_fg_count(5_000, m, 1_500)
        expected = (n_fg + (m - n_fg) * f) / m
        # Res_2 is a without-replacement draw: binomial variance is an upper bound.
        se = np.sqrt(expected * (1 - expected) / m / trials)
        assert abs(rep.mean_output_fg_fraction - expected) < 3 * se + 1e-9

    def test_uniform_unbiased_within_three_standard_errors(self):
        cloud = labeled_cloud(5_000, 1_500)
        rep = leakage_audit(cloud, 1, 1024, "uniform", 1000, 11)
        se = np.sqrt(0.3 * 0.7 / 1024 / 1000)
        assert abs(rep.mean_output_fg_fraction - 0.3) < 3 * se + 1e-9

    def test_biased_dominates_uniform(self):
        for fg in (500, 2_500, 4_500):
            cloud = labeled_cloud(5_000, fg)
            biased = leakage_audit(cloud, 1, 512, "biased", 100, 3)
            uniform = leakage_audit(cloud, 1, 512, "uniform", 100, 3)
            assert biased.mean_output_fg_fraction > uniform.mean_output_fg_fraction

    def test_report_round_trip_keys(self):
        cloud = labeled_cloud(100, 20)
        rep = leakage_audit(cloud, 1, 64, "uniform", 5, 0)
        text = rep.to_text()
        keys = [line.split("=")[0] for line in text.strip().splitlines()]
        assert keys == [
            "input_fg_fraction",
            "mean_output_fg_fraction",
            "expected_biased_fraction",
            "density_ratio",
            "trials",
        ]

    def test_rejects_unknown_sampler(self):
        cloud = labeled_cloud(100, 20)
        with pytest.raises(ValueError):
            leakage_audit(cloud, 1, 64, "sobol", 5, 0)

    def test_deterministic(self):
        cloud = labeled_cloud(1000, 200)
        a = leakage_audit(cloud, 1, 256, "biased", 50, 21)
        b = leakage_audit(cloud, 1, 256, "biased", 50, 21)
        assert a == b
