"""Restriction and interpolation operators and the coarse operator ``R^T A P``.

Transfer operators are stored as ``n x n_c`` sparse matrices for both sides,
so restriction applies ``R.T`` and the coarse operator is ``R.T @ A @ P``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionMismatch, RankDeficientP, SingularCoarseOperator, SingularRow
from .linalg import pseudo_inverse, singular_values
from .validation import as_csr, as_dense, check_square


@dataclass(frozen=True)
class CfSplit:
    """Coarse/fine labels. ``coarse_index[i]`` is -1 at F points."""

    is_coarse: np.ndarray
    coarse_index: np.ndarray

    @classmethod
    def from_mask(cls, is_coarse):
        is_coarse = np.asarray(is_coarse, dtype=bool)
        idx = np.full(is_coarse.shape[0], -1, dtype=int)
        idx[is_coarse] = np.arange(int(is_coarse.sum()))
        return cls(is_coarse=is_coarse, coarse_index=idx)

    @property
    def n(self):
        return self.is_coarse.shape[0]

    @property
    def n_c(self):
        return int(self.is_coarse.sum())

    @property
    def c_points(self):
        return np.flatnonzero(self.is_coarse)

    @property
    def f_points(self):
        return np.flatnonzero(~self.is_coarse)

    def labels(self):
        return "".join("C" if c else "F" for c in self.is_coarse)


@dataclass(frozen=True)
class TransferPair:
    """Restriction and interpolation, both ``n x n_c``, with builder tags."""

    R: object
    P: object
    builder_R: str = "unknown"
    builder_P: str = "unknown"

    def __post_init__(self):
        if self.R.shape != self.P.shape:
            raise DimensionMismatch(f"R {self.R.shape} and P {self.P.shape} differ in shape")

    @property
    def n_c(self):
        return self.P.shape[1]

    def check_rank(self, tol=1e-10):
        """Raise ``RankDeficientP`` unless both operators have full column rank."""
        for name, M in (("P", self.P), ("R", self.R)):
            s = singular_values(as_dense(M))
            if s[0] <= tol * max(s[-1], 1e-300):
                raise RankDeficientP(f"{name} is rank deficient (sigma_min={s[0]:.2e})")
        return self


def strength_graph(A, theta_s=0.25):
    """Classical strength of connection on ``-a_ij``.

    Row ``i`` depends strongly on ``j != i`` when
    ``-a_ij >= theta_s * max_{k != i}(-a_ik)`` and ``-a_ij > 0``.

    Returns
    -------
    scipy.sparse.csr_matrix
        Boolean pattern, ``S[i, j]`` true for a strong dependence.
    """
    if not (0.0 < theta_s <= 1.0):
        raise ValueError(f"theta_s must lie in (0, 1], got {theta_s}")
    A = as_csr(A)
    check_square(A)
    n = A.shape[0]
    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    neg = np.where(rows != A.indices, -A.data, 0.0)
    rowmax = np.zeros(n)
    np.maximum.at(rowmax, rows, neg)
    keep = (neg > 0.0) & (neg >= theta_s * rowmax[rows])
    S = sp.csr_matrix((np.ones(int(keep.sum()), dtype=bool), (rows[keep], A.indices[keep])),
                      shape=A.shape)
    S.sort_indices()
    return S


def cf_split(S):
    """Ruge-Stuben style first pass plus a repair sweep.

    The measure of a point is the number of points that depend strongly on it.
    The unassigned point of largest measure (lowest index on ties) becomes C,
    its unassigned dependents become F, and the measure of every unassigned
    strong neighbour of a new F point is incremented. Afterwards any F point
    left without a strong C neighbour is promoted to C.
    """
    S = sp.csr_matrix(S, dtype=bool)
    check_square(S)
    n = S.shape[0]
    S.setdiag(False)
    S.eliminate_zeros()
    ST = S.T.tocsr()
    measure = np.diff(ST.indptr).astype(float)
    state = np.zeros(n, dtype=int)  # 0 unassigned, 1 C, 2 F
    work = measure.copy()
    for _ in range(n):
        free = state == 0
        if not free.any():
            break
        cand = np.where(free, work, -np.inf)
        i = int(np.argmax(cand))
        state[i] = 1
        deps = ST.indices[ST.indptr[i]:ST.indptr[i + 1]]
        for j in deps:
            if state[j] != 0:
                continue
            state[j] = 2
            for k in S.indices[S.indptr[j]:S.indptr[j + 1]]:
                if state[k] == 0:
                    work[k] += 1.0
    is_c = state == 1
    for i in range(n):
        if is_c[i]:
            continue
        nbrs = S.indices[S.indptr[i]:S.indptr[i + 1]]
        if not np.any(is_c[nbrs]):
            is_c[i] = True
    return CfSplit.from_mask(is_c)


def classical_interp(A, S, cf):
    """Classical (Ruge-Stuben) interpolation.

    For an F row ``i`` with strong C neighbours ``C_i``, strong F neighbours
    ``F_i`` and weak neighbours ``W_i``::

        w_ij = -(a_ij + sum_{k in F_i} a_ik a_kj / sum_{m in C_i} a_km) / (a_ii + sum_{n in W_i} a_in)

    A strong F neighbour with ``sum_{m in C_i} a_km == 0`` is lumped into the
    diagonal instead.
    """
    A = as_csr(A)
    S = sp.csr_matrix(S, dtype=bool)
    n = A.shape[0]
    if S.shape != A.shape or cf.n != n:
        raise DimensionMismatch("A, S and the splitting disagree in size")
    rows, cols, vals = [], [], []
    cpts = cf.c_points
    rows.extend(cpts); cols.extend(cf.coarse_index[cpts]); vals.extend(np.ones(cpts.size))
    for i in cf.f_points:
        lo, hi = A.indptr[i], A.indptr[i + 1]
        acols, avals = A.indices[lo:hi], A.data[lo:hi]
        strong = set(S.indices[S.indptr[i]:S.indptr[i + 1]].tolist())
        strong.discard(i)
        Ci = sorted(j for j in strong if cf.is_coarse[j])
        if not Ci:
            raise SingularRow(int(i), "F point without a strong C neighbour")
        Cset = set(Ci)
        num = {j: 0.0 for j in Ci}
        denom = 0.0
        for j, a in zip(acols, avals):
            if j == i:
                denom += a
            elif j in Cset:
                num[j] += a
            elif j in strong:
                # strong F neighbour: distribute through its C connections
                klo, khi = A.indptr[j], A.indptr[j + 1]
                kc, kv = A.indices[klo:khi], A.data[klo:khi]
                inC = np.array([c in Cset for c in kc], dtype=bool)
                total = kv[inC].sum()
                if total != 0.0:
                    for c, v in zip(kc[inC], kv[inC]):
                        num[c] += a * v / total
                else:
                    denom += a
            else:
                denom += a
        if abs(denom) < 1e-14:
            raise SingularRow(int(i))
        for j in Ci:
            rows.append(i); cols.append(cf.coarse_index[j]); vals.append(-num[j] / denom)
    P = sp.coo_matrix((vals, (rows, cols)), shape=(n, cf.n_c))
    return as_csr(P)


def _neighbourhood(S, cf, c, degree):
    """Strong F points within graph distance ``degree`` of ``c`` (sorted)."""
    frontier = {c}
    seen = set()
    for _ in range(degree):
        nxt = set()
        for p in frontier:
            for q in S.indices[S.indptr[p]:S.indptr[p + 1]]:
                q = int(q)
                if not cf.is_coarse[q] and q not in seen:
                    nxt.add(q)
        seen |= nxt
        frontier = nxt
    return np.array(sorted(seen), dtype=int)


def lair_neighbourhoods(S, cf, degree=1):
    S = sp.csr_matrix(S, dtype=bool)
    return {int(c): _neighbourhood(S, cf, int(c), degree) for c in cf.c_points}


def lair_restrict(A, S, cf, degree=1):
    """Local approximate ideal restriction.

    Column ``c`` of ``R`` is ``e_c + sum_f r_f e_f`` over the F neighbourhood
    ``N_c``, with ``r`` chosen so that ``(R^T A)[c, N_c] = 0``, i.e.
    ``A[N_c, N_c]^T r = -A[c, N_c]^T``. Singular local systems fall back to
    the pseudo-inverse.
    """
    if degree not in (1, 2):
        raise ValueError(f"degree must be 1 or 2, got {degree}")
    A = as_csr(A)
    S = sp.csr_matrix(S, dtype=bool)
    n = A.shape[0]
    if S.shape != A.shape or cf.n != n:
        raise DimensionMismatch("A, S and the splitting disagree in size")
    rows, cols, vals = [], [], []
    for c in cf.c_points:
        jc = cf.coarse_index[c]
        rows.append(c); cols.append(jc); vals.append(1.0)
        N = _neighbourhood(S, cf, int(c), degree)
        if N.size == 0:
            continue
        Aloc = A[N][:, N].toarray()
        rhs = -A[c][:, N].toarray().ravel()
        try:
            r = np.linalg.solve(Aloc.T, rhs)
            if not np.all(np.isfinite(r)) or np.linalg.cond(Aloc) > 1e12:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            r = pseudo_inverse(Aloc.T) @ rhs
        rows.extend(N); cols.extend([jc] * N.size); vals.extend(r)
    R = sp.coo_matrix((vals, (rows, cols)), shape=(n, cf.n_c))
    return as_csr(R)


def laip_interp(A, S_T, cf, degree=1, theta_s=0.25):
    """Local approximate ideal interpolation: ``lair_restrict`` applied to ``A^T``.

    ``S_T`` is the strength graph of ``A.T``; it is computed with ``theta_s``
    when None.
    """
    AT = as_csr(A).T.tocsr()
    if S_T is None:
        S_T = strength_graph(AT, theta_s)
    return lair_restrict(AT, S_T, cf, degree)


def svd_transfer(F, n_c, side="right"):
    """The first ``n_c`` (smallest-sigma) right or left singular vectors."""
    if not (1 <= n_c <= F.n):
        raise ValueError(f"n_c must lie in [1, {F.n}], got {n_c}")
    if side == "right":
        return F.V[:, :n_c].copy()
    if side == "left":
        return F.U[:, :n_c].copy()
    raise ValueError(f"side must be 'right' or 'left', got {side!r}")


def q_pair_restrict(P, Q):
    """``R = Q^T P``, which makes ``I - Pi`` QA-orthogonal."""
    P = as_dense(P, "P")
    Q = as_dense(Q, "Q")
    if Q.shape[0] != Q.shape[1] or Q.shape[1] != P.shape[0]:
        raise DimensionMismatch(f"Q {Q.shape} does not conform with P {P.shape}")
    return Q.T @ P


def counterexample_pair(F, n_c, ell):
    """Pair for which both sides have good approximation but ``R^T A P`` is singular.

    ``P = [v_1..v_{ell-1}, v_{ell+1}..v_{n_c+1}]`` and ``R = [u_1..u_{n_c}]``,
    indices 1-based in ascending singular value order.
    """
    if not (1 <= ell < n_c < F.n):
        raise ValueError(f"need 1 <= ell < n_c < n, got ell={ell}, n_c={n_c}, n={F.n}")
    keep = [i for i in range(n_c + 1) if i != ell - 1]
    P = F.V[:, keep].copy()
    R = F.U[:, :n_c].copy()
    return TransferPair(R=R, P=P, builder_R="svd_left", builder_P="counterexample")


def coarse_operator(R, A, P, level=None, rtol=1e-12):
    """Dense ``A_c = R^T A P``.

    Raises
    ------
    SingularCoarseOperator
        If ``sigma_min(A_c) < rtol * sigma_max(A_c)``.
    """
    if R.shape != P.shape or A.shape[1] != P.shape[0] or A.shape[0] != R.shape[0]:
        raise DimensionMismatch(f"R {R.shape}, A {A.shape}, P {P.shape} do not conform")
    AP = A @ P
    Ac = R.T @ AP
    Ac = as_dense(Ac.toarray() if sp.issparse(Ac) else Ac, "A_c")
    s = singular_values(Ac)
    if s[-1] == 0.0 or s[0] < rtol * s[-1]:
        ratio = s[0] / s[-1] if s[-1] else 0.0
        raise SingularCoarseOperator(f"R^T A P is singular (sigma ratio {ratio:.2e})", level=level)
    return Ac
