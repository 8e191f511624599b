"""Covariance homogeneity test fixing the engine's covariance structure.

Sketch-weighted class moments are computed in a low-dimensional PCA space,
compared through Box's M statistic, and corrected to an F statistic for the
accept/reject decision. The outcome (one shared covariance vs per-class
covariances) is fixed once per stream, on the first batch.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import HomogeneityTestInfeasible
from .stats import f_quantile, regularized_spd_rel, weighted_moments

DOF_EPSILON = 1e-12          # guards the d2 division
LOGDET_REL_FLOOR = 1e-6      # eigenvalue floor (relative) before log-determinants
DEFAULT_KAPPA = 0.05
DEFAULT_PCA_DIM = 10


class CovarianceMode(enum.Enum):
    HOMOGENEOUS = "homogeneous"      # one shared covariance (linear boundaries)
    HETEROGENEOUS = "heterogeneous"  # per-class covariances (quadratic boundaries)


@dataclass(frozen=True)
class ClassMoments:
    """Soft-count weighted per-class moments plus the pooled covariance."""

    counts: np.ndarray        # (K,) soft counts
    means: np.ndarray         # (K, d)
    covariances: np.ndarray   # (K, d, d), 1/count normalization
    pooled: np.ndarray        # (d, d), (count-1)-weighted over included classes
    included: np.ndarray      # (K,) bool

    @property
    def n_included(self) -> int:
        return int(self.included.sum())

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class HomogeneityReport:
    """All statistics of the M test pipeline plus the decision."""

    m_statistic: float
    scaling_factor: float     # c
    corrected_m: float        # M* = M / c
    adjustment: float         # lambda
    dof1: float
    dof2: float
    f_statistic: float
    critical_value: float
    kappa: float
    decision: CovarianceMode
    n_classes_tested: int

    def as_text(self) -> str:
        """key=value block for run logs."""
        lines = [
            f"homogeneity.M={self.m_statistic!r}",
            f"homogeneity.c={self.scaling_factor!r}",
            f"homogeneity.M_star={self.corrected_m!r}",
            f"homogeneity.lambda={self.adjustment!r}",
            f"homogeneity.d1={self.dof1!r}",
            f"homogeneity.d2={self.dof2!r}",
            f"homogeneity.F={self.f_statistic!r}",
            f"homogeneity.critical={self.critical_value!r}",
            f"homogeneity.kappa={self.kappa!r}",
            f"homogeneity.classes_tested={self.n_classes_tested}",
            f"homogeneity.decision={self.decision.value}",
        ]
        return "\n".join(lines)


def class_moments(projected: np.ndarray, sketch_probs: np.ndarray,
                  min_count: float = 0.0) -> ClassMoments:
    """Per-class weighted moments with soft class-probability weights.

    Classes whose soft count is <= max(min_count, d + 1) are masked out of
    the pooled estimate and the test. Raises HomogeneityTestInfeasible when
    fewer than 2 classes survive.
    """
    projected = np.atleast_2d(np.asarray(projected, dtype=np.float64))
    sketch_probs = np.atleast_2d(np.asarray(sketch_probs, dtype=np.float64))
    n, d = projected.shape
    if sketch_probs.shape[0] != n:
        raise ValueError("sketch probability rows must match sample count")
    if d < 1:
        raise ValueError("projected dimension must be >= 1")
    row_sums = sketch_probs.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise ValueError("sketch probability rows must sum to 1")
    k = sketch_probs.shape[1]
    counts = np.zeros(k)
    means = np.zeros((k, d))
    covs = np.zeros((k, d, d))
    for j in range(k):
        w = sketch_probs[:, j]
        if w.sum() <= 0.0:
            continue
        counts[j], means[j], covs[j] = weighted_moments(projected, w)
    threshold = max(float(min_count), d + 1.0)
    included = counts > threshold
    if included.sum() < 2:
        raise HomogeneityTestInfeasible(
            f"test infeasible: only {int(included.sum())} classes have soft count "
            f"above {threshold}")
    w_incl = counts[included] - 1.0
    pooled = np.einsum("k,kij->ij", w_incl, covs[included]) / w_incl.sum()
    pooled = 0.5 * (pooled + pooled.T)
    return ClassMoments(counts=counts, means=means, covariances=covs,
                        pooled=pooled, included=included)


def box_m_test(moments: ClassMoments, kappa: float = DEFAULT_KAPPA) -> HomogeneityReport:
    """Box's M with the F-distribution small-sample correction.

    Only classes flagged as included enter the statistic; the formulas' class
    count K is the included count, and soft counts are used fractionally
    without rounding. Log-determinants go through the relative eigenvalue
    floor so near-singular moment matrices stay finite.
    """
    if not 0.0 < kappa < 1.0:
        raise ValueError("kappa must lie in (0, 1)")
    if moments.n_included < 2:
        raise HomogeneityTestInfeasible("test infeasible: fewer than 2 included classes")
    ns = moments.counts[moments.included]
    covs = moments.covariances[moments.included]
    k = int(len(ns))
    d = moments.dim
    weights = ns - 1.0
    logdet_pooled = regularized_spd_rel(moments.pooled, LOGDET_REL_FLOOR).logdet
    logdets = np.array([regularized_spd_rel(c, LOGDET_REL_FLOOR).logdet for c in covs])

    m_stat = float(weights.sum() * logdet_pooled - weights @ logdets)
    c = 1.0 - (2.0 * d * d + 3.0 * d - 1.0) / (6.0 * (d + 1.0) * (k - 1.0)) * (
        float((1.0 / weights).sum()) - 1.0 / (float(ns.sum()) - k))
    m_star = m_stat / c
    lam = d * (d + 1.0) * (k - 1.0) * (k + 1.0) / (
        6.0 * (float(ns.sum()) - k - (k - 1.0)))
    dof1 = d * (d + 1.0) * (k - 1.0) / 2.0
    dof2 = (dof1 + 2.0) / (lam + DOF_EPSILON)
    f_stat = m_star / (dof1 * (1.0 + m_star / dof2))
    critical = f_quantile(1.0 - kappa, dof1, dof2)
    decision = (CovarianceMode.HETEROGENEOUS if f_stat > critical
                else CovarianceMode.HOMOGENEOUS)
    return HomogeneityReport(
        m_statistic=m_stat, scaling_factor=c, corrected_m=m_star, adjustment=lam,
        dof1=dof1, dof2=dof2, f_statistic=f_stat, critical_value=critical,
        kappa=float(kappa), decision=decision, n_classes_tested=k)
