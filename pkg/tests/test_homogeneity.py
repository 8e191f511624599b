import numpy as np
import pytest

from gda_stream.errors import HomogeneityTestInfeasible
from gda_stream.homogeneity import (CovarianceMode, box_m_test, class_moments)
from gda_stream.stats import f_quantile


def hard_probs(labels, k):
    probs = np.zeros((len(labels), k))
    probs[np.arange(len(labels)), labels] = 1.0
    return probs


def moments_from_gaussians(rng, k, d, n, scales=None):
    """Hard-assignment class moments from sampled Gaussian data."""
    scales = scales or [1.0] * k
    X = np.concatenate([scales[j] * rng.standard_normal((n, d)) for j in range(k)])
    labels = np.repeat(np.arange(k), n)
    return class_moments(X, hard_probs(labels, k))


class TestClassMoments:
    def test_hard_assignment_reduces_to_sample_moments(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(40, 3))
        labels = np.array([0] * 25 + [1] * 15)
        m = class_moments(X, hard_probs(labels, 2))
        for j, sel in ((0, labels == 0), (1, labels == 1)):
            np.testing.assert_allclose(m.counts[j], sel.sum())
            np.testing.assert_allclose(m.means[j], X[sel].mean(axis=0), atol=1e-12)
            np.testing.assert_allclose(
                m.covariances[j], np.cov(X[sel], rowvar=False, ddof=0), atol=1e-12)

    def test_uniform_probs_give_global_mean(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(60, 4))
        probs = np.full((60, 3), 1.0 / 3.0)
        m = class_moments(X, probs)
        for j in range(3):
            np.testing.assert_allclose(m.means[j], X.mean(axis=0), atol=1e-12)

    def test_soft_probs_match_naive_loop(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(100, 3))
        raw = rng.uniform(0.01, 1.0, size=(100, 3))
        probs = raw / raw.sum(axis=1, keepdims=True)
        m = class_moments(X, probs)
        for j in range(3):
            n_j = sum(probs[i, j] for i in range(100))
            mu_j = sum(probs[i, j] * X[i] for i in range(100)) / n_j
            cov_j = sum(probs[i, j] * np.outer(X[i] - mu_j, X[i] - mu_j)
                        for i in range(100)) / n_j
            assert abs(m.counts[j] - n_j) < 1e-10
            np.testing.assert_allclose(m.means[j], mu_j, atol=1e-10)
            np.testing.assert_allclose(m.covariances[j], cov_j, atol=1e-10)

    def test_pooled_is_weighted_average(self):
        rng = np.random.default_rng(3)
        m = moments_from_gaussians(rng, k=3, d=4, n=50)
        w = m.counts[m.included] - 1.0
        expected = np.einsum("k,kij->ij", w, m.covariances[m.included]) / w.sum()
        np.testing.assert_allclose(m.pooled, expected, atol=1e-10)

    def test_low_count_classes_masked(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(30, 3))
        labels = np.array([0] * 14 + [1] * 14 + [2] * 2)   # class 2 below d+1
        m = class_moments(X, hard_probs(labels, 3))
        assert list(m.included) == [True, True, False]

    def test_infeasible_when_one_class_survives(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(12, 3))
        labels = np.array([0] * 10 + [1] * 2)
        with pytest.raises(HomogeneityTestInfeasible, match="infeasible"):
            class_moments(X, hard_probs(labels, 2))

    def test_bad_probability_rows_rejected(self):
        X = np.zeros((4, 2))
        probs = np.full((4, 2), 0.3)
        with pytest.raises(ValueError, match="sum to 1"):
            class_moments(X, probs)


def box_m_direct(ns, covs, d, kappa):
    """Independent evaluation of the M statistic and its F correction."""
    k = len(ns)
    w = [n - 1.0 for n in ns]
    pooled = sum(wi * ci for wi, ci in zip(w, covs)) / sum(w)
    m_stat = sum(w) * np.linalg.slogdet(pooled)[1] \
        - sum(wi * np.linalg.slogdet(ci)[1] for wi, ci in zip(w, covs))
    c = 1.0 - (2 * d * d + 3 * d - 1) / (6.0 * (d + 1) * (k - 1)) * (
        sum(1.0 / wi for wi in w) - 1.0 / (sum(ns) - k))
    m_star = m_stat / c
    lam = d * (d + 1) * (k - 1) * (k + 1) / (6.0 * (sum(ns) - k - (k - 1)))
    d1 = d * (d + 1) * (k - 1) / 2.0
    d2 = (d1 + 2.0) / (lam + 1e-12)
    f = m_star / (d1 * (1.0 + m_star / d2))
    return m_stat, c, m_star, lam, d1, d2, f


class TestBoxMTest:
    def test_identical_covariances_vanish(self):
        rng = np.random.default_rng(6)
        base = np.eye(3) * 0.7
        from gda_stream.homogeneity import ClassMoments
        moments = ClassMoments(counts=np.array([50.0, 50.0, 50.0]),
                               means=rng.normal(size=(3, 3)),
                               covariances=np.stack([base, base, base]),
                               pooled=base,
                               included=np.array([True, True, True]))
        report = box_m_test(moments)
        assert abs(report.m_statistic) < 1e-8
        assert abs(report.f_statistic) < 1e-8
        assert report.decision is CovarianceMode.HOMOGENEOUS

    def test_known_moments_match_direct_formulas(self):
        from gda_stream.homogeneity import ClassMoments
        covs = np.stack([np.eye(2), 4.0 * np.eye(2)])
        counts = np.array([100.0, 100.0])
        w = counts - 1.0
        pooled = np.einsum("k,kij->ij", w, covs) / w.sum()
        moments = ClassMoments(counts=counts, means=np.zeros((2, 2)),
                               covariances=covs, pooled=pooled,
                               included=np.array([True, True]))
        report = box_m_test(moments, kappa=0.05)
        m, c, m_star, lam, d1, d2, f = box_m_direct([100.0, 100.0], covs, 2, 0.05)
        assert abs(report.m_statistic - m) < 1e-9
        assert abs(report.scaling_factor - c) < 1e-12
        assert abs(report.corrected_m - m_star) < 1e-9
        assert abs(report.adjustment - lam) < 1e-12
        assert report.dof1 == d1
        assert abs(report.dof2 - d2) < 1e-9
        assert abs(report.f_statistic - f) < 1e-9
        assert report.decision is CovarianceMode.HETEROGENEOUS

    def test_report_field_identities(self):
        rng = np.random.default_rng(7)
        m = moments_from_gaussians(rng, k=4, d=3, n=80)
        report = box_m_test(m)
        assert report.corrected_m == report.m_statistic / report.scaling_factor
        assert report.dof2 == (report.dof1 + 2.0) / (report.adjustment + 1e-12)
        assert report.m_statistic >= -1e-8
        assert (report.decision is CovarianceMode.HETEROGENEOUS) == \
            (report.f_statistic > report.critical_value)
        assert abs(report.critical_value
                   - f_quantile(1 - report.kappa, report.dof1, report.dof2)) < 1e-12

    def test_invariant_under_orthonormal_basis_change(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(150, 4))
        labels = rng.integers(0, 3, size=150)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        m1 = class_moments(X, hard_probs(labels, 3))
        m2 = class_moments(X @ q.T, hard_probs(labels, 3))
        r1, r2 = box_m_test(m1), box_m_test(m2)
        assert abs(r1.m_statistic - r2.m_statistic) < 1e-7

    def test_doubling_counts_increases_m(self):
        rng = np.random.default_rng(9)
        m = moments_from_gaussians(rng, k=3, d=3, n=60)
        from dataclasses import replace
        doubled = replace(m, counts=2.0 * m.counts)
        r1, r2 = box_m_test(m), box_m_test(doubled)
        assert r2.m_statistic > r1.m_statistic
        # equal-covariance data stays homogeneous even with doubled counts
        assert r2.decision is CovarianceMode.HOMOGENEOUS

    def test_monte_carlo_calibration_under_h0(self):
        # shared covariance, soft counts well above 20 * d; fixed seed
        rng = np.random.default_rng(2024)
        k, d, n, trials = 3, 5, 2000, 1000
        rejections = 0
        for _ in range(trials):
            m = moments_from_gaussians(rng, k, d, n)
            if box_m_test(m, kappa=0.05).decision is CovarianceMode.HETEROGENEOUS:
                rejections += 1
        rate = rejections / trials
        assert 0.03 <= rate <= 0.07, f"H0 rejection rate {rate}"

    def test_power_under_scaled_covariance(self):
        rng = np.random.default_rng(11)
        rejections = 0
        for _ in range(50):
            m = moments_from_gaussians(rng, k=2, d=2, n=100, scales=[1.0, 2.0])
            if box_m_test(m).decision is CovarianceMode.HETEROGENEOUS:
                rejections += 1
        assert rejections == 50
