"""Input validation helpers shared by the estimators and the analysis code."""

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionMismatch, NonFinite, TooLarge

#: Largest dimension the dense analysis routines will accept.
DENSE_CAP = 5000


def check_finite(values, name="input"):
    if not np.all(np.isfinite(values)):
        raise NonFinite(f"{name} contains NaN or Inf")


def as_dense(A, name="A", cap=DENSE_CAP):
    """Return ``A`` as a finite 2-D float array, densifying sparse input."""
    if sp.issparse(A):
        if max(A.shape) > cap:
            raise TooLarge(f"{name} has shape {A.shape}; dense cap is {cap}")
        A = A.toarray()
    A = np.array(A, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got ndim={A.ndim}")
    if max(A.shape) > cap:
        raise TooLarge(f"{name} has shape {A.shape}; dense cap is {cap}")
    check_finite(A, name)
    return A


def as_csr(A, name="A"):
    """Return ``A`` as canonical CSR: sorted indices, no explicit zeros."""
    A = sp.csr_matrix(A, dtype=float)
    check_finite(A.data, name)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def check_square(A, name="A"):
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {A.shape}")
    return A


def check_vector(v, n, name="v"):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise DimensionMismatch(f"{name} must have shape ({n},), got {v.shape}")
    check_finite(v, name)
    return v
