"""Dense kernels: one-sided Jacobi SVD, SPD powers, pseudo-inverse, weighted norms.

Singular values are kept in *ascending* order throughout the package, so
``sigma[0]`` is the smallest singular value and column 0 of ``V`` is the
right singular vector that coarse spaces must capture first.
"""

from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg

from .exceptions import DimensionMismatch, NotSpd, SingularInput
from .validation import as_dense, check_finite

_JACOBI_MAX_SWEEPS = 60
_JACOBI_TOL = 1e-15


@dataclass(frozen=True)
class SvdFactorization:
    """``A = U @ diag(sigma) @ V.T`` with ``sigma`` ascending.

    For an m x n input with m >= n, ``U`` is m x n (thin); ``V`` is n x n.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def n(self):
        return self.sigma.shape[0]

    @property
    def sigma_max(self):
        return float(self.sigma[-1]) if self.sigma.size else 0.0

    def reconstruct(self):
        return (self.U * self.sigma) @ self.V.T

    def qa(self):
        """The SPD matrix sqrt(A^T A) = V diag(sigma) V^T."""
        return (self.V * self.sigma) @ self.V.T

    def aq(self):
        """The SPD matrix sqrt(A A^T) = U diag(sigma) U^T."""
        return (self.U * self.sigma) @ self.U.T

    def transpose(self):
        """Factorization of A^T (left and right singular vectors swap)."""
        return SvdFactorization(U=self.V, sigma=self.sigma, V=self.U)


@numba.njit(cache=True)
def _jacobi_sweeps(H, W, tol, max_sweeps):
    """Row-cyclic Hestenes rotations on the rows of ``H``, mirrored into ``W``."""
    n, m = H.shape
    for sweep in range(max_sweeps):
        rotations = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for j in range(m):
                    x = H[p, j]
                    y = H[q, j]
                    alpha += x * x
                    beta += y * y
                    gamma += x * y
                if abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotations += 1
                zeta = (beta - alpha) / (2.0 * gamma)
                sgn = 1.0 if zeta >= 0.0 else -1.0
                t = sgn / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for j in range(m):
                    x = H[p, j]
                    y = H[q, j]
                    H[p, j] = c * x - s * y
                    H[q, j] = s * x + c * y
                for j in range(n):
                    x = W[p, j]
                    y = W[q, j]
                    W[p, j] = c * x - s * y
                    W[q, j] = s * x + c * y
        if rotations == 0:
            return sweep + 1
    return max_sweeps


def _one_sided_jacobi(H):
    """Orthogonalize the rows of ``H`` in place; return the accumulated rotation.

    Rows are used instead of columns so the inner loops walk contiguous
    memory. On return ``H_in = W.T @ H_out`` with ``W`` orthogonal.
    """
    n = H.shape[0]
    W = np.eye(n)
    if n < 2:
        return W, 0
    sweeps = _jacobi_sweeps(H, W, _JACOBI_TOL, _JACOBI_MAX_SWEEPS)
    return W, sweeps


def _complete_basis(U, filled):
    """Replace the columns of ``U`` not flagged in ``filled`` by an orthonormal complement."""
    m, k = U.shape
    if np.all(filled):
        return U
    known = U[:, filled]
    # QR of [known | I] spans everything; the trailing columns give the complement.
    Qfull, _ = np.linalg.qr(np.hstack([known, np.eye(m)]))
    extra = Qfull[:, known.shape[1]:known.shape[1] + (k - known.shape[1])]
    out = U.copy()
    out[:, ~filled] = extra
    return out


def _fix_signs(U, V):
    for j in range(V.shape[1]):
        col = V[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-14 * max(np.abs(col).max(), 1e-300))
        if nz.size and col[nz[0]] < 0:
            V[:, j] = -col
            U[:, j] = -U[:, j]
    return U, V


def svd(A):
    """Singular value decomposition by one-sided (Hestenes) Jacobi.

    Parameters
    ----------
    A : array_like or sparse matrix, shape (m, n)

    Returns
    -------
    SvdFactorization
        ``sigma`` ascending; the first nonzero entry of every column of ``V``
        is positive.

    Raises
    ------
    NonFinite
        If ``A`` has a NaN or Inf entry.
    """
    A = as_dense(A)
    m, n = A.shape
    if m < n:
        F = svd(A.T)
        # A^T = U' S V'^T, hence A = V' S U'^T (V' thin, U' square).
        return SvdFactorization(U=F.V.copy(), sigma=F.sigma, V=F.U.copy())
    if n == 0:
        return SvdFactorization(U=np.zeros((m, 0)), sigma=np.zeros(0), V=np.zeros((0, 0)))
    # Preconditioning: A[:, perm] = Qr @ R, then Jacobi on the rows of R
    # (equivalently the columns of R^T). Column pivoting makes R^T strongly
    # diagonally graded, which cuts the sweep count without hurting accuracy.
    Qr, R, perm = scipy.linalg.qr(A, mode="economic", pivoting=True)
    H = np.ascontiguousarray(R)
    W, _ = _one_sided_jacobi(H)
    # R = W^T H with orthogonal rows in H: R^T = H^T W, so with H = D X
    # (D = row norms, X orthonormal rows) R = W^T D X.
    sigma = np.linalg.norm(H, axis=1)
    order = np.argsort(sigma, kind="stable")
    sigma = sigma[order]
    H = H[order]
    W = W[order]
    tiny = sigma <= max(m, n) * np.finfo(float).eps * max(sigma[-1], 1e-300)
    X = np.zeros_like(H)
    X[~tiny] = H[~tiny] / sigma[~tiny, None]
    # A[:, perm] = Qr W^T D X  => left vectors Qr W^T, right vectors (X with rows unpermuted).
    U = Qr @ W.T
    Vt = np.zeros((n, n))
    Vt[:, perm] = X
    V = Vt.T
    V = _complete_basis(V, ~tiny)
    U, V = _fix_signs(U, V)
    return SvdFactorization(U=U, sigma=sigma, V=V)


def polar_q(F):
    """Orthogonal polar factor ``Q = V U^T`` so that ``Q A = V Sigma V^T``.

    Raises
    ------
    SingularInput
        If the smallest singular value is below ``1e-14 * sigma_max``.
    """
    if F.U.shape[0] != F.V.shape[0]:
        raise DimensionMismatch("polar factor requires a square matrix")
    if F.sigma[0] <= 1e-14 * F.sigma[-1]:
        raise SingularInput(f"sigma_min={F.sigma[0]:.3e} relative to sigma_max={F.sigma[-1]:.3e}")
    return F.V @ F.U.T


def _symmetric_eig(M):
    M = as_dense(M, "M")
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {M.shape}")
    scale = max(np.abs(M).max(), 1e-300)
    if np.abs(M - M.T).max() > 1e-10 * scale:
        raise NotSpd("matrix is not symmetric to 1e-10")
    w, Z = np.linalg.eigh(0.5 * (M + M.T))
    return w, Z


def spd_fractional_power(M, p):
    """``M**p`` for a symmetric positive (semi)definite ``M`` via eigendecomposition."""
    w, Z = _symmetric_eig(M)
    wmax = max(w.max(), 0.0) if w.size else 0.0
    if w.size and w.min() < -1e-10 * max(wmax, 1e-300):
        raise NotSpd(f"minimum eigenvalue {w.min():.3e} is negative")
    w = np.clip(w, 0.0, None)
    if p < 0 and np.any(w <= 0.0):
        raise NotSpd("negative power of a singular matrix")
    if p == 0:
        return np.eye(M.shape[0])
    return (Z * w**p) @ Z.T


def pseudo_inverse(A, rtol=1e-12):
    """Moore-Penrose inverse, dropping singular values below ``rtol * sigma_max``."""
    A = as_dense(A)
    if A.size == 0 or not np.any(A):
        return np.zeros(A.T.shape)
    F = svd(A)
    keep = F.sigma > rtol * F.sigma[-1]
    inv = np.zeros_like(F.sigma)
    inv[keep] = 1.0 / F.sigma[keep]
    return (F.V * inv) @ F.U.T


def weighted_norm(v, W):
    """``sqrt(<W v, v>)`` clamped at zero."""
    v = np.asarray(v, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape != (v.shape[0], v.shape[0]):
        raise DimensionMismatch(f"weight {W.shape} does not match vector length {v.shape[0]}")
    check_finite(v, "v")
    return float(np.sqrt(max(v @ (W @ v), 0.0)))


def singular_values(M):
    """Ascending singular values from LAPACK, for rank and conditioning checks.

    Absolute accuracy is about ``eps * sigma_max``, which is all a relative
    threshold test needs; use :func:`svd` when small singular values must be
    accurate to high relative precision.
    """
    M = np.asarray(M, dtype=float)
    check_finite(M, "M")
    return scipy.linalg.svdvals(M, check_finite=False)[::-1]


def spectral_norm(M):
    """Largest singular value of a dense matrix.

    Uses LAPACK: the largest singular value is well conditioned, so the
    Jacobi SVD's relative accuracy buys nothing here and costs a lot.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    check_finite(M, "M")
    return float(scipy.linalg.svdvals(M, check_finite=False)[0])


def operator_norm_weighted(M, W, W_half=None):
    """``sup ||M x||_W / ||x||_W``, the spectral norm of ``W^{1/2} M W^{-1/2}``.

    ``W_half`` may carry a precomputed ``W^{1/2}``.
    """
    M = as_dense(M, "M")
    if W_half is None:
        W_half = spd_fractional_power(W, 0.5)
    w, Z = _symmetric_eig(W_half)
    if w.min() <= 0:
        raise NotSpd("weight matrix is singular")
    W_mhalf = (Z / w) @ Z.T
    return spectral_norm(W_half @ M @ W_mhalf)
