"""Incremental EM over a class-conditional Gaussian mixture.

The engine's persistent memory: per-class means, one shared or K per-class
covariances (fixed by the homogeneity decision), cumulative soft counts, and
the class priors they induce. Updates propagate sufficient statistics batch
by batch; no raw data is retained.

Update recursion per batch (responsibilities gamma from the previous state):

  s_k   <- s_k + sum_i gamma_ik
  mu_k  <- (s_k_old * mu_k_old + sum_i gamma_ik z_i) / s_k
  shared:    Sigma <- (s_old * Sigma_old + sum_ik gamma_ik dz dz^T) / (s_old + N)
  per-class: Sigma_k <- (s_k_old * Sigma_k_old + sum_i gamma_ik dz dz^T) / s_k
  Sigma <- (1 - eps) * Sigma + eps * prior_var * I
  pi_k  <- s_k / sum_j s_j

with dz measured against the *updated* mean. The shared-covariance
denominator (s_old + N) and the per-class one (s_k) are intentionally
asymmetric; both recursions are kept verbatim.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .homogeneity import CovarianceMode
from .io import ClassPrototypes
from .stats import SpdSummary, gaussian_logpdf, regularized_spd_rel

DEFAULT_REG_STRENGTH = 0.01
DEFAULT_PRIOR_VARIANCE = 0.1
STATE_MAGIC = b"GDAS"


@dataclass(frozen=True)
class GmmState:
    """Mixture parameters at one point in the stream. Immutable; updates
    return a new state."""

    means: np.ndarray           # (K, D)
    covariances: np.ndarray     # (1, D, D) shared or (K, D, D) per-class
    priors: np.ndarray          # (K,)
    counts: np.ndarray          # (K,) cumulative soft counts, >= 1
    mode: CovarianceMode
    step: int
    reg_strength: float
    prior_variance: float

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def total_count(self) -> float:
        return float(self.counts.sum())

    def covariance_for(self, k: int) -> np.ndarray:
        if self.mode is CovarianceMode.HOMOGENEOUS:
            return self.covariances[0]
        return self.covariances[k]

    def covariance_summaries(self) -> list[SpdSummary]:
        """Regularized (pseudo-inverse ready) views, one per class.

        In homogeneous mode the single shared summary is repeated, so the
        log-determinant term is class-constant by construction.
        """
        if self.mode is CovarianceMode.HOMOGENEOUS:
            shared = regularized_spd_rel(self.covariances[0])
            return [shared] * self.n_classes
        return [regularized_spd_rel(c) for c in self.covariances]


def init_state(prototypes: ClassPrototypes, mode: CovarianceMode,
               reg_strength: float = DEFAULT_REG_STRENGTH,
               prior_variance: float = DEFAULT_PRIOR_VARIANCE) -> GmmState:
    """Fresh state: means at the L2-normalized prototypes, identity
    covariance(s), uniform priors, unit soft counts."""
    protos = prototypes.prototypes.astype(np.float64)
    means = protos / np.linalg.norm(protos, axis=1, keepdims=True)
    k, d = means.shape
    n_cov = 1 if mode is CovarianceMode.HOMOGENEOUS else k
    covs = np.broadcast_to(np.eye(d), (n_cov, d, d)).copy()
    return GmmState(means=means, covariances=covs,
                    priors=np.full(k, 1.0 / k), counts=np.ones(k),
                    mode=mode, step=0,
                    reg_strength=float(reg_strength),
                    prior_variance=float(prior_variance))


def e_step(state: GmmState, features: np.ndarray) -> np.ndarray:
    """Posterior responsibilities of each class for each sample, (N, K).

    Computed in log space with a log-sum-exp normalization, so widely
    separated components cannot underflow to an all-zero row.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != state.dim:
        raise ValueError("feature dimension disagrees with state")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    summaries = state.covariance_summaries()
    log_joint = np.empty((X.shape[0], state.n_classes))
    with np.errstate(divide="ignore"):
        log_priors = np.log(state.priors)
    for k in range(state.n_classes):
        log_joint[:, k] = log_priors[k] + gaussian_logpdf(X, state.means[k], summaries[k])
    shift = log_joint.max(axis=1, keepdims=True)
    resp = np.exp(log_joint - shift)
    resp /= resp.sum(axis=1, keepdims=True)
    return resp


def m_step(state: GmmState, features: np.ndarray, resp: np.ndarray) -> GmmState:
    """One incremental update of counts, means, covariance(s) and priors."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    resp = np.atleast_2d(np.asarray(resp, dtype=np.float64))
    n, d = X.shape
    if resp.shape != (n, state.n_classes) or d != state.dim:
        raise ValueError("shape mismatch between features, responsibilities and state")
    if not np.all(np.isfinite(resp)):
        raise ValueError("non-finite responsibility")

    counts_old = state.counts
    total_old = state.total_count
    gamma_sums = resp.sum(axis=0)
    counts_new = counts_old + gamma_sums
    means_new = (counts_old[:, None] * state.means + resp.T @ X) / counts_new[:, None]

    if state.mode is CovarianceMode.HOMOGENEOUS:
        scatter = np.zeros((d, d))
        for k in range(state.n_classes):
            centered = X - means_new[k]
            scatter += (centered * resp[:, k, None]).T @ centered
        cov = (total_old * state.covariances[0] + scatter) / (total_old + n)
        covs_new = cov[None, :, :]
    else:
        covs_new = np.empty_like(state.covariances)
        for k in range(state.n_classes):
            centered = X - means_new[k]
            scatter = (centered * resp[:, k, None]).T @ centered
            covs_new[k] = (counts_old[k] * state.covariances[k] + scatter) / counts_new[k]

    eye = np.eye(d)
    covs_new = (1.0 - state.reg_strength) * covs_new \
        + state.reg_strength * state.prior_variance * eye
    covs_new = 0.5 * (covs_new + np.transpose(covs_new, (0, 2, 1)))
    priors_new = counts_new / counts_new.sum()
    return replace(state, means=means_new, covariances=covs_new,
                   priors=priors_new, counts=counts_new, step=state.step + 1)


def marginal_loglik(state: GmmState, features: np.ndarray) -> float:
    """Mean per-sample log of the mixture density, log-sum-exp stabilized."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    summaries = state.covariance_summaries()
    log_joint = np.empty((X.shape[0], state.n_classes))
    with np.errstate(divide="ignore"):
        log_priors = np.log(state.priors)
    for k in range(state.n_classes):
        log_joint[:, k] = log_priors[k] + gaussian_logpdf(X, state.means[k], summaries[k])
    shift = log_joint.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(log_joint - shift).sum(axis=1))
    return float(lse.mean())


def save_state(state: GmmState, fh) -> None:
    """Append the state checkpoint block (magic GDAS) to an open binary file."""
    mode_byte = 0 if state.mode is CovarianceMode.HOMOGENEOUS else 1
    fh.write(STATE_MAGIC)
    fh.write(struct.pack("<BIIQ", mode_byte, state.n_classes, state.dim, state.step))
    fh.write(state.means.astype("<f8").tobytes())
    fh.write(state.covariances.astype("<f8").tobytes())
    fh.write(state.priors.astype("<f8").tobytes())
    fh.write(state.counts.astype("<f8").tobytes())


def load_state(fh, reg_strength: float = DEFAULT_REG_STRENGTH,
               prior_variance: float = DEFAULT_PRIOR_VARIANCE) -> GmmState:
    """Read one GDAS block from an open binary file."""
    magic = fh.read(4)
    if magic != STATE_MAGIC:
        raise DataError("bad state checkpoint magic")
    header = fh.read(struct.calcsize("<BIIQ"))
    mode_byte, k, d, step = struct.unpack("<BIIQ", header)
    mode = CovarianceMode.HOMOGENEOUS if mode_byte == 0 else CovarianceMode.HETEROGENEOUS
    n_cov = 1 if mode is CovarianceMode.HOMOGENEOUS else k

    def read_array(shape):
        count = int(np.prod(shape))
        buf = fh.read(8 * count)
        if len(buf) != 8 * count:
            raise DataError("truncated state checkpoint")
        return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    means = read_array((k, d))
    covs = read_array((n_cov, d, d))
    priors = read_array((k,))
    counts = read_array((k,))
    return GmmState(means=means, covariances=covs, priors=priors, counts=counts,
                    mode=mode, step=int(step), reg_strength=reg_strength,
                    prior_variance=prior_variance)


def save_state_file(state: GmmState, path) -> None:
    with open(Path(path), "wb") as fh:
        save_state(state, fh)


def load_state_file(path, **kwargs) -> GmmState:
    with open(Path(path), "rb") as fh:
        return load_state(fh, **kwargs)
