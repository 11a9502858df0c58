"""Model advection problems, scaling, and MatrixMarket I/O.

Both discretizations solve ``b . grad(u) = q`` on the unit square with
``b = (cos(theta), sin(theta))`` and Dirichlet inflow on the south and west
edges. Unknowns are ordered lexicographically, x fastest.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp

from .exceptions import (InvalidSpec, NSAMGError, ParseError, TooLarge, UnsupportedField,
                         ZeroDiagonal)
from .linalg import SvdFactorization, svd
from .validation import DENSE_CAP, as_csr, check_square

DEFAULT_THETA = 3.0 * math.pi / 16.0


@dataclass(frozen=True)
class ProblemSpec:
    """Parameters of a generated advection problem.

    Parameters
    ----------
    disc : {'upwind_fv', 'supg'}
    n : int
        Cells per side; ``h = 1/n``.
    theta : float
        Advection angle in ``(0, pi/2)``.
    tau : float
        SUPG multiplier, ``tau_K = tau * h / (2 |b|)``. Zero gives plain Galerkin.
    seed : int
    """

    disc: str = "upwind_fv"
    n: int = 8
    theta: float = DEFAULT_THETA
    tau: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.disc not in ("upwind_fv", "supg"):
            raise InvalidSpec(f"unknown discretization {self.disc!r}")
        if int(self.n) != self.n or self.n < 2:
            raise InvalidSpec(f"n must be an integer >= 2, got {self.n}")
        if not (0.0 < self.theta < 0.5 * math.pi):
            raise InvalidSpec(f"theta must lie in (0, pi/2), got {self.theta}")
        if not (np.isfinite(self.tau) and self.tau >= 0.0):
            raise InvalidSpec(f"tau must be finite and nonnegative, got {self.tau}")

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def velocity(self):
        return math.cos(self.theta), math.sin(self.theta)


@dataclass(frozen=True)
class ScaledSystem:
    """A matrix rescaled to unit spectral norm, with the factor that was applied.

    ``A = scale * A_input`` (after the optional diagonal scaling). The SVD of
    the scaled matrix is kept when it was needed to compute the scale.
    """

    A: sp.csr_matrix
    scale: float
    diag_applied: bool = False
    normalized: bool = True
    svd: SvdFactorization = field(default=None, repr=False, compare=False)

    @property
    def n(self):
        return self.A.shape[0]

    def factorization(self):
        if self.svd is not None:
            return self.svd
        return svd(self.A)


def generate(spec):
    """Dispatch on ``spec.disc``."""
    if spec.disc == "upwind_fv":
        return gen_upwind_advection(spec)
    return gen_supg_advection(spec)


def gen_upwind_advection(spec):
    """First-order upwind finite volumes on an ``n x n`` cell grid.

    Cell ``(i, j)`` (x index ``i``) has unknown ``j*n + i``. Inflow faces
    contribute to the right-hand side only (see :func:`inflow_rhs`).
    """
    if not isinstance(spec, ProblemSpec):
        raise InvalidSpec("expected a ProblemSpec")
    n, h = spec.n, spec.h
    c, s = spec.velocity
    idx = np.arange(n * n)
    i, j = idx % n, idx // n
    rows = [idx]
    cols = [idx]
    vals = [np.full(n * n, (c + s) / h)]
    west = i > 0
    rows.append(idx[west]); cols.append(idx[west] - 1); vals.append(np.full(west.sum(), -c / h))
    south = j > 0
    rows.append(idx[south]); cols.append(idx[south] - n); vals.append(np.full(south.sum(), -s / h))
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n * n, n * n))
    return as_csr(A)


def _supg_mesh(n):
    """Node coordinates and triangles of the structured right triangulation.

    Every square is cut along its lower-left to upper-right diagonal.
    """
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
    node = jj * (n + 1) + ii
    ll = node[:-1, :-1].ravel()
    lr = node[:-1, 1:].ravel()
    ul = node[1:, :-1].ravel()
    ur = node[1:, 1:].ravel()
    tris = np.concatenate([np.stack([ll, lr, ur], axis=1), np.stack([ll, ur, ul], axis=1)])
    xy = np.stack([ii.ravel(), jj.ravel()], axis=1) / n
    return xy, tris


def _supg_full(spec):
    """Assemble over all ``(n+1)^2`` nodes; returns the matrix and the free mask."""
    n, h = spec.n, spec.h
    bx, by = spec.velocity
    bnorm = math.hypot(bx, by)
    tau_k = spec.tau * h / (2.0 * bnorm)
    xy, tris = _supg_mesh(n)
    nn = xy.shape[0]
    rows, cols, vals = [], [], []
    for tri in tris:
        X = xy[tri]
        T = np.array([[1.0, *X[0]], [1.0, *X[1]], [1.0, *X[2]]])
        coef = np.linalg.inv(T)
        grads = coef[1:, :].T          # row a: gradient of basis a
        area = 0.5 * abs(np.linalg.det(T))
        bg = grads @ np.array([bx, by])  # b . grad(phi_a)
        # test a (row), trial c (column): (b.grad phi_c) |K|/3 + tau (b.grad phi_c)(b.grad phi_a) |K|
        Ke = area / 3.0 * np.tile(bg, (3, 1)) + tau_k * area * np.outer(bg, bg)
        rows.append(np.repeat(tri, 3)); cols.append(np.tile(tri, 3)); vals.append(Ke.ravel())
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nn, nn)).tocsr()
    ii = np.arange(nn) % (n + 1)
    jj = np.arange(nn) // (n + 1)
    free = (ii > 0) & (jj > 0)
    return A, free


def gen_supg_advection(spec):
    """P1 SUPG on the structured triangulation with inflow nodes eliminated.

    The unknowns are the ``n^2`` nodes off the south and west edges, ordered
    lexicographically.
    """
    if not isinstance(spec, ProblemSpec):
        raise InvalidSpec("expected a ProblemSpec")
    A, free = _supg_full(spec)
    return as_csr(A[free][:, free])


def inflow_rhs(spec, g=1.0, q=0.0):
    """Right-hand side carrying Dirichlet inflow ``g`` and constant source ``q``."""
    n, h = spec.n, spec.h
    if spec.disc == "upwind_fv":
        c, s = spec.velocity
        idx = np.arange(n * n)
        i, j = idx % n, idx // n
        b = np.full(n * n, float(q))
        b[i == 0] += c / h * g
        b[j == 0] += s / h * g
        return b
    A, free = _supg_full(spec)
    ones = np.zeros(A.shape[0])
    ones[~free] = g
    b = -(A @ ones)[free]
    if q:
        # load vector of a constant source: test function plus streamline term
        src = ProblemSpec(disc="supg", n=n, theta=spec.theta, tau=spec.tau)
        b += q * _supg_load(src)[free]
    return b


def _supg_load(spec):
    n, h = spec.n, spec.h
    bx, by = spec.velocity
    tau_k = spec.tau * h / (2.0 * math.hypot(bx, by))
    xy, tris = _supg_mesh(n)
    f = np.zeros(xy.shape[0])
    for tri in tris:
        X = xy[tri]
        T = np.array([[1.0, *X[0]], [1.0, *X[1]], [1.0, *X[2]]])
        grads = np.linalg.inv(T)[1:, :].T
        area = 0.5 * abs(np.linalg.det(T))
        f[tri] += area / 3.0 + tau_k * area * (grads @ np.array([bx, by]))
    return f


def diagonal_scale(A):
    """Return ``D^{-1} A`` with ``D = diag(A)``.

    Raises
    ------
    ZeroDiagonal
        If some diagonal entry is exactly zero.
    """
    A = as_csr(A)
    check_square(A)
    d = A.diagonal()
    zero = np.flatnonzero(d == 0.0)
    if zero.size:
        raise ZeroDiagonal(int(zero[0]))
    # divide rather than multiply by 1/d so the diagonal comes out exactly 1
    B = A.copy()
    B.data = B.data / np.repeat(d, np.diff(B.indptr))
    return B


def normalize_spectral(A, diag_applied=False, cap=DENSE_CAP):
    """Scale ``A`` so its largest singular value is one.

    The dense SVD used for the scale is kept on the result.
    """
    A = as_csr(A)
    if max(A.shape) > cap:
        raise TooLarge(f"matrix of shape {A.shape} exceeds the dense cap {cap}")
    F = svd(A)
    smax = F.sigma_max
    if smax == 0.0:
        raise InvalidSpec("cannot normalize the zero matrix")
    scale = 1.0 / smax
    F = SvdFactorization(U=F.U, sigma=F.sigma * scale, V=F.V)
    return ScaledSystem(A=as_csr(A * scale), scale=scale, diag_applied=diag_applied, svd=F)


def prepare(A, diag=True):
    """Diagonal scaling (optional) followed by spectral normalization."""
    if diag:
        A = diagonal_scale(A)
    return normalize_spectral(A, diag_applied=diag)


# -- MatrixMarket -----------------------------------------------------------

def read_matrix_market(path):
    """Read a real ``coordinate`` MatrixMarket file into CSR.

    Symmetric storage is expanded and duplicate entries are summed.
    """
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(1, "empty file")
    header = lines[0].strip().split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise ParseError(1, "missing %%MatrixMarket banner")
    obj, fmt, fieldname, symmetry = (h.lower() for h in header[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise UnsupportedField(f"only 'matrix coordinate' is supported, got {obj} {fmt}")
    if fieldname not in ("real", "integer", "double"):
        raise UnsupportedField(f"field {fieldname!r} is not supported")
    if symmetry not in ("general", "symmetric"):
        raise UnsupportedField(f"symmetry {symmetry!r} is not supported")
    pos = 1
    while pos < len(lines) and (not lines[pos].strip() or lines[pos].lstrip().startswith("%")):
        pos += 1
    if pos == len(lines):
        raise ParseError(pos + 1, "missing size line")
    try:
        m, n, nnz = (int(t) for t in lines[pos].split())
    except ValueError:
        raise ParseError(pos + 1, f"bad size line {lines[pos]!r}") from None
    rows, cols, vals = [], [], []
    stored = 0
    for lineno in range(pos + 1, len(lines)):
        text = lines[lineno].strip()
        if not text or text.startswith("%"):
            continue
        parts = text.split()
        if len(parts) != 3:
            raise ParseError(lineno + 1, f"expected 'row col value', got {text!r}")
        try:
            r, c, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(lineno + 1, f"cannot parse {text!r}") from None
        if not (1 <= r <= m and 1 <= c <= n):
            raise ParseError(lineno + 1, f"index ({r}, {c}) outside {m}x{n}")
        if not np.isfinite(v):
            raise ParseError(lineno + 1, "non-finite value")
        stored += 1
        rows.append(r - 1); cols.append(c - 1); vals.append(v)
        if symmetry == "symmetric" and r != c:
            rows.append(c - 1); cols.append(r - 1); vals.append(v)
    if stored != nnz:
        raise ParseError(len(lines), f"expected {nnz} entries, found {stored}")
    A = sp.coo_matrix((vals, (rows, cols)), shape=(m, n))
    try:
        return as_csr(A)
    except NSAMGError as exc:
        raise ParseError(len(lines), str(exc)) from None


def write_matrix_market(path, A, comment=None):
    """Write ``A`` in ``coordinate real general`` form with 17 significant digits."""
    A = as_csr(A).tocoo()
    order = np.lexsort((A.row, A.col))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            for line in str(comment).splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for k in order:
            fh.write(f"{A.row[k] + 1} {A.col[k] + 1} {A.data[k]:.17g}\n")
