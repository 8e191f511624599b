"""Per-dimension affine feature adapter trained by self-paced refinement.

The adapter applies ``out = normalize(scale * x + shift)`` row-wise. It is
the only trainable part of the engine: one gradient-descent step per batch
on the soft cross-entropy between the calibrated (adapted) distribution,
treated as a fixed pseudo-label, and the temperature-scaled sketch
distribution recomputed through the live parameters. An EMA shadow of the
parameters feeds every inference-time forward pass.

The gradient is exact through the whole chain
scale/shift -> row L2 normalization -> cosine -> softmax -> cross-entropy;
the normalization Jacobian (projection onto the sphere tangent) is included
analytically, not approximated.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .io import ClassPrototypes


@dataclass(frozen=True)
class AdapterState:
    """Affine parameters, their EMA shadow, and the optimizer knobs."""

    scale: np.ndarray        # (D,)
    shift: np.ndarray        # (D,)
    ema_scale: np.ndarray    # (D,)
    ema_shift: np.ndarray    # (D,)
    lr: float
    ema_decay: float
    steps: int = 0
    skipped_steps: int = 0

    @property
    def dim(self) -> int:
        return self.scale.shape[0]


@dataclass(frozen=True)
class RefineLoss:
    """Self-paced refinement loss value and, when requested, its gradients."""

    value: float
    grad_scale: np.ndarray | None = None
    grad_shift: np.ndarray | None = None


def init_adapter(dim: int, lr: float = 0.005, ema_decay: float = 0.99) -> AdapterState:
    if lr <= 0.0:
        raise ValueError("learning rate must be positive")
    if not 0.0 <= ema_decay <= 1.0:
        raise ValueError("ema decay must lie in [0, 1]")
    ones = np.ones(dim)
    zeros = np.zeros(dim)
    return AdapterState(scale=ones, shift=zeros, ema_scale=ones.copy(),
                        ema_shift=zeros.copy(), lr=float(lr),
                        ema_decay=float(ema_decay))


def forward(adapter: AdapterState, raw_features: np.ndarray,
            use_ema: bool = False) -> np.ndarray:
    """scale * x + shift, then row L2 normalization."""
    X = np.atleast_2d(np.asarray(raw_features, dtype=np.float64))
    if X.shape[1] != adapter.dim:
        raise ValueError("feature dimension disagrees with adapter")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    g = adapter.ema_scale if use_ema else adapter.scale
    b = adapter.ema_shift if use_ema else adapter.shift
    out = X * g + b
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("adapter output row with zero norm")
    return out / norms


def refine_loss(sketch_logits: np.ndarray, adapted_logits: np.ndarray,
                tau: float) -> RefineLoss:
    """Batch-mean soft cross-entropy, value only.

    Targets are softmax(adapted_logits) (no temperature, treated as
    constants); the sketch side is softmax(sketch_logits / tau).
    """
    sk = np.atleast_2d(np.asarray(sketch_logits, dtype=np.float64))
    ad = np.atleast_2d(np.asarray(adapted_logits, dtype=np.float64))
    if sk.shape != ad.shape:
        raise ValueError("logit shapes disagree")
    targets = _softmax(ad)
    log_q = _log_softmax(sk / tau)
    value = float(-(targets * log_q).sum(axis=1).mean())
    return RefineLoss(value=value)


def refine_loss_and_grads(adapter: AdapterState, raw_features: np.ndarray,
                          prototypes: ClassPrototypes,
                          adapted_distribution: np.ndarray) -> RefineLoss:
    """Loss and analytic d(loss)/d(scale, shift) through the live parameters.

    ``adapted_distribution`` rows are fixed pseudo-labels; no gradient flows
    through them.
    """
    X = np.atleast_2d(np.asarray(raw_features, dtype=np.float64))
    P = np.atleast_2d(np.asarray(adapted_distribution, dtype=np.float64))
    n, d = X.shape
    if d != adapter.dim:
        raise ValueError("feature dimension disagrees with adapter")
    protos = prototypes.prototypes.astype(np.float64)
    proto_unit = protos / np.linalg.norm(protos, axis=1, keepdims=True)
    if P.shape != (n, protos.shape[0]):
        raise ValueError("pseudo-label shape disagrees with batch / prototypes")
    tau = prototypes.temperature

    U = X * adapter.scale + adapter.shift          # (N, D)
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("adapter output row with zero norm")
    U_hat = U / norms
    logits = U_hat @ proto_unit.T                  # (N, K) cosine
    Q = _softmax(logits / tau)
    log_q = _log_softmax(logits / tau)
    value = float(-(P * log_q).sum(axis=1).mean())

    # dL/dlogits = (Q - P) / (N * tau); back through the cosine rows:
    # dcos_k/du = (w_hat_k - cos_k * u_hat) / ||u||
    C = (Q - P) / (n * tau)                        # (N, K)
    R = (C @ proto_unit - (C * logits).sum(axis=1, keepdims=True) * U_hat) / norms
    return RefineLoss(value=value,
                      grad_scale=(R * X).sum(axis=0),
                      grad_shift=R.sum(axis=0))


def backward_and_step(adapter: AdapterState, raw_features: np.ndarray,
                      prototypes: ClassPrototypes,
                      adapted_distribution: np.ndarray) -> AdapterState:
    """One gradient-descent step on the live parameters, then the EMA update.

    A non-finite gradient freezes the adapter for this batch: parameters and
    EMA stay untouched and the skip is counted on the returned state.
    """
    loss = refine_loss_and_grads(adapter, raw_features, prototypes,
                                 adapted_distribution)
    if not (np.all(np.isfinite(loss.grad_scale)) and np.all(np.isfinite(loss.grad_shift))):
        return replace(adapter, skipped_steps=adapter.skipped_steps + 1)
    scale = adapter.scale - adapter.lr * loss.grad_scale
    shift = adapter.shift - adapter.lr * loss.grad_shift
    beta = adapter.ema_decay
    ema_scale = beta * adapter.ema_scale + (1.0 - beta) * scale
    ema_shift = beta * adapter.ema_shift + (1.0 - beta) * shift
    return replace(adapter, scale=scale, shift=shift, ema_scale=ema_scale,
                   ema_shift=ema_shift, steps=adapter.steps + 1)


def ema_snapshot(adapter: AdapterState) -> tuple[np.ndarray, np.ndarray]:
    """Copies of the EMA scale and shift vectors."""
    return adapter.ema_scale.copy(), adapter.ema_shift.copy()


ADAPTER_MAGIC = b"GDAA"


def save_adapter(adapter: AdapterState, fh) -> None:
    """Append the adapter checkpoint block (magic GDAA) to an open file.

    Layout: magic, then scale, shift, ema_scale, ema_shift as little-endian
    f64; the dimension comes from the engine state block written before it.
    """
    fh.write(ADAPTER_MAGIC)
    for vec in (adapter.scale, adapter.shift, adapter.ema_scale, adapter.ema_shift):
        fh.write(np.asarray(vec).astype("<f8").tobytes())


def load_adapter(fh, dim: int, lr: float = 0.005,
                 ema_decay: float = 0.99) -> AdapterState:
    """Read one GDAA block of known dimension from an open file."""
    from .errors import DataError

    if fh.read(4) != ADAPTER_MAGIC:
        raise DataError("bad adapter checkpoint magic")
    vecs = []
    for _ in range(4):
        buf = fh.read(8 * dim)
        if len(buf) != 8 * dim:
            raise DataError("truncated adapter checkpoint")
        vecs.append(np.frombuffer(buf, dtype="<f8").copy())
    return AdapterState(scale=vecs[0], shift=vecs[1], ema_scale=vecs[2],
                        ema_shift=vecs[3], lr=float(lr), ema_decay=float(ema_decay))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
