"""Dense numerical kernels shared by the statistical modules.

Everything here is a pure function over immutable inputs. All accumulation
happens in float64 regardless of the dtype the caller hands in; the on-disk
stream format is float32 but covariance recursions are cancellation-prone,
so the working precision is pinned once, here.

A single symmetric eigendecomposition backend (``numpy.linalg.eigh``) serves
PCA, the clamped pseudo-inverse, and log-determinants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


@dataclass(frozen=True)
class PcaProjection:
    """Orthonormal top-d basis of a sample covariance, plus the fit mean."""

    component_basis: np.ndarray  # (d, D), rows orthonormal
    data_mean: np.ndarray        # (D,)
    retained_dim: int
    eigenvalues: np.ndarray      # (d,), descending

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = _as_f64(X)
        return (X - self.data_mean) @ self.component_basis.T


@dataclass(frozen=True)
class SpdSummary:
    """A symmetric matrix regularized to be positive definite.

    Eigenvalues below ``floor`` are clamped up to it, which simultaneously
    yields a finite log-determinant and a well-defined (pseudo-)inverse.
    """

    matrix: np.ndarray           # (D, D), reconstructed from clamped spectrum
    floor: float
    logdet: float
    clamped: bool                # True when any eigenvalue was lifted
    _eigvals: np.ndarray = field(repr=False)   # (D,), clamped
    _eigvecs: np.ndarray = field(repr=False)   # (D, D), columns

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def inverse(self) -> np.ndarray:
        V = self._eigvecs
        return (V / self._eigvals) @ V.T

    def mahalanobis(self, deltas: np.ndarray) -> np.ndarray:
        """(x - mu)^T M^-1 (x - mu) for each row of ``deltas`` (N, D) -> (N,)."""
        deltas = np.atleast_2d(_as_f64(deltas))
        proj = deltas @ self._eigvecs           # (N, D)
        return np.einsum("nd,nd->n", proj, proj / self._eigvals)


def weighted_moments(X, w) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted mass, mean and covariance of the rows of X.

    cov uses the 1/mass convention (divide by the total weight, not by
    mass - 1). Raises ValueError on zero total weight or non-finite input.
    """
    X = np.atleast_2d(_as_f64(X))
    w = _as_f64(w).reshape(-1)
    if X.shape[0] != w.shape[0]:
        raise ValueError(f"weight length {w.shape[0]} != sample count {X.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(w))):
        raise ValueError("non-finite input")
    if np.any(w < 0):
        raise ValueError("negative weight")
    mass = float(w.sum())
    if mass <= 0.0:
        raise ValueError("zero total weight")
    mean = w @ X / mass
    centered = X - mean
    cov = (centered * w[:, None]).T @ centered / mass
    cov = 0.5 * (cov + cov.T)
    return mass, mean, cov


def fit_pca(X, d: int) -> PcaProjection:
    """Top-d principal axes of X, ordered by descending eigenvalue.

    Signs are fixed so each basis row's largest-magnitude entry is positive,
    making the fit reproducible across runs.
    """
    X = np.atleast_2d(_as_f64(X))
    n, dim = X.shape
    if n < 2:
        raise ValueError("need at least 2 samples to fit a PCA basis")
    if not 1 <= d <= min(n, dim):
        raise ValueError(f"retained dim {d} must be in [1, min(N, D)] = [1, {min(n, dim)}]")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / n
    total_var = float(np.trace(cov))
    if total_var <= 0.0:
        raise ValueError("zero variance")
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:d]
    basis = eigvecs[:, order].T.copy()
    vals = eigvals[order].copy()
    for row in basis:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return PcaProjection(component_basis=basis, data_mean=mean,
                         retained_dim=d, eigenvalues=vals)


def regularized_spd(M, floor: float) -> SpdSummary:
    """Clamp the spectrum of a symmetric matrix at ``floor`` (absolute).

    The reconstructed matrix is positive definite; logdet and inverse come
    from the clamped spectrum. Asymmetric input (beyond round-off) raises.
    """
    M = np.atleast_2d(_as_f64(M))
    if M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if floor <= 0.0:
        raise ValueError("floor must be positive")
    scale = max(1.0, float(np.abs(M).max()))
    if float(np.abs(M - M.T).max()) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    sym = 0.5 * (M + M.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    clamped = bool(np.any(eigvals < floor))
    vals = np.maximum(eigvals, floor)
    rebuilt = (eigvecs * vals) @ eigvecs.T
    rebuilt = 0.5 * (rebuilt + rebuilt.T)
    return SpdSummary(matrix=rebuilt, floor=float(floor),
                      logdet=float(np.log(vals).sum()), clamped=clamped,
                      _eigvals=vals, _eigvecs=eigvecs)


def regularized_spd_rel(M, rel_floor: float = 1e-6) -> SpdSummary:
    """regularized_spd with the floor set relative to the largest eigenvalue."""
    M = np.atleast_2d(_as_f64(M))
    sym = 0.5 * (M + M.T)
    top = float(np.linalg.eigvalsh(sym).max()) if sym.size else 0.0
    return regularized_spd(M, rel_floor * max(top, 1.0))


_LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_logpdf(z, mean, cov: SpdSummary) -> float | np.ndarray:
    """log N(z | mean, cov) with cov given as an SpdSummary.

    Accepts a single D-vector (returns a float) or an (N, D) matrix
    (returns an (N,) vector).
    """
    z = _as_f64(z)
    mean = _as_f64(mean)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.shape[1] != mean.shape[0] or mean.shape[0] != cov.dim:
        raise ValueError("dimension mismatch")
    maha = cov.mahalanobis(Z - mean)
    out = -0.5 * (cov.dim * _LOG_2PI + cov.logdet + maha)
    return float(out[0]) if single else out


def gaussian_kl(mean0, cov0, mean1, cov1) -> float:
    """KL(N(mean0, cov0) || N(mean1, cov1)), closed form.

    Both covariances must be positive definite (checked via Cholesky).
    """
    mean0 = _as_f64(mean0)
    mean1 = _as_f64(mean1)
    cov0 = np.atleast_2d(_as_f64(cov0))
    cov1 = np.atleast_2d(_as_f64(cov1))
    d = mean0.shape[0]
    try:
        chol0 = np.linalg.cholesky(cov0)
        chol1 = np.linalg.cholesky(cov1)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc
    logdet0 = 2.0 * float(np.log(np.diag(chol0)).sum())
    logdet1 = 2.0 * float(np.log(np.diag(chol1)).sum())
    # tr(cov1^-1 cov0) via triangular solves against the Cholesky factor
    A = np.linalg.solve(chol1, chol0)
    trace = float((A * A).sum())
    diff = mean1 - mean0
    y = np.linalg.solve(chol1, diff)
    maha = float(y @ y)
    return 0.5 * (trace + maha - d + logdet1 - logdet0)


def f_cdf(x: float, d1: float, d2: float) -> float:
    """CDF of the F(d1, d2) distribution via the regularized incomplete beta."""
    if x <= 0.0:
        return 0.0
    t = d1 * x / (d1 * x + d2)
    return float(betainc(0.5 * d1, 0.5 * d2, t))


def f_quantile(p: float, d1: float, d2: float) -> float:
    """Inverse CDF of F(d1, d2), by bisection on f_cdf.

    The bracket shrinks to a relative width of 1e-14 (absolute 1e-10 or far
    better), which keeps CDF-space error small even where the density
    diverges at 0 (d1 < 2) and the quantile is tiny.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    if d1 <= 0.0 or d2 <= 0.0:
        raise ValueError("degrees of freedom must be positive")
    lo, hi = 0.0, 1.0
    while f_cdf(hi, d1, d2) < p:
        hi *= 2.0
        if hi > 1e300:
            raise ValueError("quantile bracket overflow")
    for _ in range(5000):
        if hi - lo <= 1e-14 * max(hi, 1e-300):
            break
        mid = 0.5 * (lo + hi)
        if f_cdf(mid, d1, d2) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
