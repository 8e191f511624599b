"""Prediction calibration: sketch scoring, discriminant scores, logit fusion.

The sketch is the frozen zero-shot path (cosine against class prototypes,
temperature softmax). Discriminant scores come from the tracked mixture:

  D_k(z) = log pi_k - 1/2 (z - mu_k)^T Sigma_k^-1 (z - mu_k) - 1/2 log|Sigma_k|

with the shared covariance substituted for every class in homogeneous mode.
Fusion adds alpha * D_k to the raw cosine logits (not the temperature-scaled
ones) and predicts by row argmax, ties broken toward the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gmm import GmmState
from .io import ClassPrototypes


@dataclass(frozen=True)
class LogitBundle:
    """Everything the calibrated prediction of one batch is made of."""

    sketch_logits: np.ndarray          # (N, K) cosine similarities
    sketch_probs: np.ndarray           # (N, K) softmax(logits / tau)
    discriminant_scores: np.ndarray    # (N, K)
    adapted_logits: np.ndarray         # (N, K) sketch + alpha * discriminant
    predictions: np.ndarray            # (N,) int
    fusion_weight: float


def sketch(features: np.ndarray, prototypes: ClassPrototypes
           ) -> tuple[np.ndarray, np.ndarray]:
    """Cosine logits against the prototypes and their temperature softmax."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    protos = prototypes.prototypes.astype(np.float64)
    if X.shape[1] != protos.shape[1]:
        raise ValueError("feature dimension disagrees with prototypes")
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm feature row")
    proto_unit = protos / np.linalg.norm(protos, axis=1, keepdims=True)
    logits = (X / norms) @ proto_unit.T
    scaled = logits / prototypes.temperature
    scaled -= scaled.max(axis=1, keepdims=True)
    probs = np.exp(scaled)
    probs /= probs.sum(axis=1, keepdims=True)
    return logits, probs


def discriminant_scores(state: GmmState, features: np.ndarray) -> np.ndarray:
    """Per-class discriminant scores (N, K) under the current mixture state."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != state.dim:
        raise ValueError("feature dimension disagrees with state")
    summaries = state.covariance_summaries()
    with np.errstate(divide="ignore"):
        log_priors = np.log(state.priors)
    scores = np.empty((X.shape[0], state.n_classes))
    for k in range(state.n_classes):
        s = summaries[k]
        scores[:, k] = log_priors[k] - 0.5 * s.mahalanobis(X - state.means[k]) \
            - 0.5 * s.logdet
    return scores


def fuse_and_predict(sketch_logits: np.ndarray, disc_scores: np.ndarray,
                     alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """adapted = sketch + alpha * discriminant; predictions = row argmax."""
    sketch_logits = np.atleast_2d(np.asarray(sketch_logits, dtype=np.float64))
    disc_scores = np.atleast_2d(np.asarray(disc_scores, dtype=np.float64))
    if sketch_logits.shape != disc_scores.shape:
        raise ValueError("logit shapes disagree")
    if alpha < 0.0:
        raise ValueError("fusion weight must be >= 0")
    adapted = sketch_logits + alpha * disc_scores
    return adapted, np.argmax(adapted, axis=1)


def score_batch(state: GmmState, features: np.ndarray,
                prototypes: ClassPrototypes, alpha: float) -> LogitBundle:
    """Full scoring of one batch: sketch, discriminant, fusion, prediction."""
    logits, probs = sketch(features, prototypes)
    disc = discriminant_scores(state, features)
    adapted, preds = fuse_and_predict(logits, disc, alpha)
    return LogitBundle(sketch_logits=logits, sketch_probs=probs,
                       discriminant_scores=disc, adapted_logits=adapted,
                       predictions=preds, fusion_weight=float(alpha))
