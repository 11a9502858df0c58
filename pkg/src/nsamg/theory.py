"""Diagnostics for nonsymmetric two-grid and W-cycle convergence theory.

Everything here works in the singular-vector coordinates of a spectrally
normalized ``A = U diag(sigma) V^T`` (``sigma`` ascending, ``sigma[-1] == 1``):
interpolation is analysed through ``V^T P`` with respect to ``QA = V Sigma V^T``
and restriction through ``U^T R`` with respect to ``AQ = U Sigma U^T``.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.linalg

from .exceptions import (DegenerateBlock, DeterminantCondition, DimensionMismatch, InvalidBeta,
                         InvalidSpec, RankDeficientP, TrivialProjection)
from .linalg import (operator_norm_weighted, singular_values, spd_fractional_power, spectral_norm,
                     svd)
from .transfer import coarse_operator
from .validation import as_dense

#: Operators whose sigma_min/sigma_max falls below this are treated as rank deficient.
RANK_TOL = 1e-10
#: Cosines at or below this are treated as zero when checking the s_1 hypothesis.
S1_FLOOR = 1e-10
#: Largest FAP power pairs used throughout: WAP, SAP and SSAP.
WAP, SAP, SSAP = (0.5, 0.0), (1.0, 1.0), (1.0, 0.0)


def _require_normalized(F, tol=1e-8):
    if abs(F.sigma_max - 1.0) > tol:
        raise InvalidSpec(f"analysis needs ||A|| = 1, got {F.sigma_max:.6g}; normalize first")


def _transfer(M, F, name):
    M = as_dense(M, name)
    if M.ndim != 2 or M.shape[0] != F.n or M.shape[1] < 1 or M.shape[1] > F.n:
        raise DimensionMismatch(f"{name} has shape {M.shape}, expected ({F.n}, n_c)")
    return M


def _check_rank(M, name="P"):
    s = singular_values(M)
    if s[0] <= RANK_TOL * max(s[-1], 1e-300):
        raise RankDeficientP(f"{name} is rank deficient (sigma_min/sigma_max={s[0] / max(s[-1], 1e-300):.2e})")


def _orth_complement(M):
    """Orthonormal bases of range(M) and its complement, from a full QR."""
    Qf, _ = scipy.linalg.qr(M, mode="full")
    r = M.shape[1]
    return Qf[:, :r], Qf[:, r:]


# -- approximation properties ----------------------------------------------

@dataclass(frozen=True)
class FapReport:
    """Per-singular-vector FAP constants for one ``(beta, eta)``.

    ``uniform_K`` is the largest per-vector constant. ``sup_K`` is the
    constant over *all* fine vectors, which is what the definition asks for;
    it bounds ``uniform_K`` from above.
    """

    beta: float
    eta: float
    sigma: np.ndarray
    K: np.ndarray
    uniform_K: float
    sup_K: float

    @property
    def per_vector(self):
        return list(zip(self.sigma.tolist(), self.K.tolist()))


def fap_constant(P, F, beta, eta):
    """FAP(beta, eta) constants of ``P`` with respect to ``QA``.

    For each right singular vector ``v_i``::

        K_i = ||(I - Pi_eta) v_i||^2_{(QA)^eta} * ||QA||^(2 beta - eta) / sigma_i^(2 beta)

    where ``Pi_eta`` is the ``(QA)^eta``-orthogonal projection onto range(P)
    (Euclidean when ``eta == 0``). For restriction pass ``F.transpose()``.

    Parameters
    ----------
    P : array_like, shape (n, n_c)
    F : SvdFactorization
    beta, eta : float
        Nonnegative powers.

    Returns
    -------
    FapReport
    """
    if beta < 0 or eta < 0:
        raise InvalidSpec("FAP powers must be nonnegative")
    P = _transfer(P, F, "P")
    _check_rank(P)
    sig = F.sigma
    if sig[0] <= 0.0:
        raise InvalidSpec("FAP constants need a nonsingular A")
    smax = F.sigma_max
    w_half = sig ** (0.5 * eta)
    Y = w_half[:, None] * (F.V.T @ P)
    _, Qperp = _orth_complement(Y)
    # (I - Qy Qy^T) D e_i has norm w_half_i * ||Qperp[i, :]||: no cancellation.
    resid = w_half**2 * np.einsum("ij,ij->i", Qperp, Qperp)
    scale = smax ** (2.0 * beta - eta) / sig ** (2.0 * beta)
    K = resid * scale
    if Qperp.shape[1]:
        T = Qperp.T * (w_half / sig**beta)[None, :]
        sup_K = spectral_norm(T) ** 2 * smax ** (2.0 * beta - eta)
    else:
        sup_K = 0.0
    return FapReport(beta=float(beta), eta=float(eta), sigma=sig.copy(), K=K,
                     uniform_K=float(K.max()), sup_K=float(sup_K))


def check_fap_implications(P, F, slack=1e-8, betas=(0.5, 1.0, 1.5), etas=(0.0, 0.5, 1.0)):
    """Orderings between FAP constants.

    ``K_W <= K_S``, ``K_SAP <= K_S`` and monotonicity (nondecreasing in
    ``beta``, nonincreasing in ``eta``) hold vector by vector, so they are
    checked on both the per-vector maximum and the constant over all vectors.
    ``K_S <= K_SAP^2`` is a statement about the latter only; for the
    per-vector maximum it is reported under ``notes`` and can fail.

    Returns
    -------
    dict
        ``constants`` per property and measure, ``violations`` (empty when
        everything that must hold does) and ``notes``.
    """
    reps = {name: fap_constant(P, F, *pw) for name, pw in (("wap", WAP), ("sap", SAP), ("ssap", SSAP))}
    out = {"constants": {}, "violations": [], "notes": []}

    def check(measure, label, lhs, rhs, target):
        if lhs > rhs + slack * max(1.0, abs(rhs)):
            target.append({"measure": measure, "check": label, "lhs": lhs, "rhs": rhs})

    grid = {(b, e): fap_constant(P, F, b, e) for b in betas for e in etas}
    for measure in ("uniform_K", "sup_K"):
        kw, ks, kp = (getattr(reps[k], measure) for k in ("wap", "ssap", "sap"))
        out["constants"][measure] = {"wap": kw, "sap": kp, "ssap": ks}
        check(measure, "K_W <= K_S", kw, ks, out["violations"])
        check(measure, "K_SAP <= K_S", kp, ks, out["violations"])
        check(measure, "K_S <= K_SAP^2", ks, kp**2,
              out["violations"] if measure == "sup_K" else out["notes"])
        for (b, e), rep in grid.items():
            k0 = getattr(rep, measure)
            for b2 in betas:
                if b2 > b:
                    check(measure, f"K({b},{e}) <= K({b2},{e})", k0,
                          getattr(grid[b2, e], measure), out["violations"])
            for e2 in etas:
                if e2 > e:
                    check(measure, f"K({b},{e2}) <= K({b},{e})",
                          getattr(grid[b, e2], measure), k0, out["violations"])
    return out


def check_fap_theorem_proof(P, F, betas=(0.5, 1.0, 1.5), slack=1e-8):
    """``K_{beta,0} <= K_{beta,beta}^2`` for several ``beta``.

    Each entry records both the per-vector maximum and the constant over all
    vectors. The inequality is a statement about the latter; per-vector
    maxima are reported alongside for comparison.
    """
    rows, violations = [], []
    for beta in betas:
        kbb = fap_constant(P, F, beta, beta)
        kb0 = fap_constant(P, F, beta, 0.0)
        row = {"beta": beta,
               "K_beta_beta": kbb.sup_K, "K_beta_0": kb0.sup_K,
               "K_beta_beta_max": kbb.uniform_K, "K_beta_0_max": kb0.uniform_K}
        rows.append(row)
        if kb0.sup_K > kbb.sup_K**2 + slack * max(1.0, kbb.sup_K**2):
            violations.append(row)
    return {"rows": rows, "violations": violations}


def restricted_fap_constant(P, F, k, beta):
    """``||(I - Pi_0) V_1 Sigma_1^{-beta}||^2``: FAP(beta, 0) over span(v_1..v_k)."""
    P = _transfer(P, F, "P")
    Qp, _ = _orth_complement(F.V.T @ P)
    return _restricted_from_basis(Qp, F.sigma, k, beta)


def _restricted_screen(Qp, sig, k, beta):
    """Cheap version of :func:`_restricted_from_basis` for scanning ``k``.

    Uses ``N1^T N1 = I - Qk Qk^T``, so only a k x k symmetric eigenproblem is
    solved; absolute error is about ``eps / sigma_1^(2 beta)``, fine for
    screening the hypotheses.
    """
    Qk = Qp[:k, :]
    d = sig[:k] ** -beta
    G = np.eye(k) - Qk @ Qk.T
    G = d[:, None] * G * d[None, :]
    return max(float(np.linalg.eigvalsh(0.5 * (G + G.T))[-1]), 0.0)


def _restricted_from_basis(Qp, sig, k, beta):
    N1 = -Qp @ Qp[:k, :].T
    N1[np.arange(k), np.arange(k)] += 1.0
    return spectral_norm(N1 / sig[:k] ** beta) ** 2


# -- bases, stability and equivalence ---------------------------------------

@dataclass(frozen=True)
class BasisDecomposition:
    """Change of basis that splits both transfers at index ``k``.

    ``Ptilde = V [[I, 0], [-N2hat Sigma_1^beta, W2hat]] = P @ B_P`` and the
    mirror image for ``R`` with ``U``, ``M2hat``, ``Z2hat`` and ``gamma``;
    ``Z2hat^T Sigma_2 W2hat = diag(S2)`` with ``S2`` ascending.
    """

    k: int
    n_c: int
    sigma_k: float
    sigma_k1: float
    beta: float
    gamma: float
    W2hat: np.ndarray
    Z2hat: np.ndarray
    N2hat: np.ndarray
    M2hat: np.ndarray
    S2: np.ndarray
    B_P: np.ndarray
    B_R: np.ndarray
    Ptilde: np.ndarray
    Rtilde: np.ndarray
    K_P: float
    K_R: float
    delta_P: float
    delta_R: float
    delta_PR_sq: float
    Khat_P: float
    Khat_R: float
    P: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    F: object = field(repr=False)

    @property
    def s1(self):
        return float(self.S2[0]) if self.S2.size else 1.0

    @property
    def delta_PR(self):
        return math.sqrt(self.delta_PR_sq) if np.isfinite(self.delta_PR_sq) else math.inf

    @property
    def deltahat_P_sq(self):
        return self.sigma_k ** (2.0 * self.beta - 1.0) * self.Khat_P

    def hypotheses(self):
        """Flags for the stability hypotheses (the s_1 test is waived at ``k == n_c``)."""
        d2 = self.delta_PR_sq
        if self.k == self.n_c:
            s1_ok = True
        else:
            s1_ok = bool(d2 < 1.0 and self.s1 > S1_FLOOR and self.s1 > d2 / (1.0 - d2))
        return {
            "delta_P": bool(self.delta_P < 1.0 / math.sqrt(2.0)),
            "delta_R": bool(self.delta_R < 1.0 / math.sqrt(2.0)),
            "delta_PR": bool(d2 < 0.5),
            "s1": s1_ok,
        }

    def certified(self):
        return all(self.hypotheses().values())


def _khat(K, delta):
    return K / (1.0 - delta**2) if delta**2 < 1.0 else math.inf


def _side_basis(Mh, sig, k, power, K):
    """One side of the construction in singular-vector coordinates.

    Returns ``(N2hat, W2raw, C2, K_used)`` where ``W2raw`` spans the part of
    range(Mh) with vanishing leading ``k`` entries (bottom block only),
    normalized so that ``W2^T Sigma_2 W2 = I``.
    """
    n, nc = Mh.shape
    Qp, _ = _orth_complement(Mh)
    N1 = -Qp @ Qp[:k, :].T
    N1[np.arange(k), np.arange(k)] += 1.0
    N11, N21 = N1[:k], N1[k:]
    IN = np.eye(k) - N11
    s_in = singular_values(IN)
    if s_in[0] <= 1e-12 * max(s_in[-1], 1.0):
        raise DegenerateBlock(f"I - N11 is singular at k={k} (sigma_min={s_in[0]:.2e})")
    K_loc = spectral_norm(N1 / sig[:k] ** power) ** 2
    K_used = K_loc if K is None else float(K)
    N2hat = np.linalg.solve(IN.T, N21.T).T / sig[:k] ** power
    if k < nc:
        _, C2 = _orth_complement(Mh[:k, :].T)
        W2 = (Mh @ C2)[k:]
        G = W2.T @ (sig[k:, None] * W2)
        W2 = W2 @ spd_fractional_power(G, -0.5)
    else:
        W2 = np.zeros((n - k, 0))
    return N2hat, W2, K_used


def build_pr_bases(P, R, F, k, beta=1.0, gamma=1.0, K_P=None, K_R=None):
    """Construct the split bases of ``P`` and ``R`` at index ``k`` (1-based).

    Parameters
    ----------
    P, R : array_like, shape (n, n_c)
    F : SvdFactorization
        Of the normalized ``A``.
    k : int
        ``1 <= k <= n_c``.
    beta, gamma : float
        FAP powers assumed for ``P`` (w.r.t. ``QA``) and ``R`` (w.r.t. ``AQ``).
    K_P, K_R : float, optional
        FAP(beta, 0) / FAP(gamma, 0) constants. When omitted the constant
        restricted to the first ``k`` singular vectors is used, which is the
        quantity the construction actually needs.

    Returns
    -------
    BasisDecomposition

    Raises
    ------
    DegenerateBlock
        If ``I - N11`` (either side) is numerically singular.
    """
    _require_normalized(F)
    P = _transfer(P, F, "P")
    R = _transfer(R, F, "R")
    if P.shape != R.shape:
        raise DimensionMismatch(f"P {P.shape} and R {R.shape} differ in shape")
    n, nc = P.shape
    if not (1 <= k <= nc):
        raise InvalidSpec(f"k must lie in [1, {nc}], got {k}")
    _check_rank(P, "P")
    _check_rank(R, "R")
    sig = F.sigma
    Ph = F.V.T @ P
    Rh = F.U.T @ R
    N2hat, W2, KP = _side_basis(Ph, sig, k, beta, K_P)
    M2hat, Z2, KR = _side_basis(Rh, sig, k, gamma, K_R)
    if k < nc:
        Mx = Z2.T @ (sig[k:, None] * W2)
        Fm = svd(Mx)
        S2 = Fm.sigma
        W2 = W2 @ Fm.V
        Z2 = Z2 @ Fm.U
    else:
        S2 = np.zeros(0)
    sk = float(sig[k - 1])
    sk1 = float(sig[k]) if k < n else 1.0
    s1b, s1g = sig[:k] ** beta, sig[:k] ** gamma
    Pt = np.zeros((n, nc))
    Pt[:k, :k] = np.eye(k)
    Pt[k:, :k] = -N2hat * s1b
    Pt[k:, k:] = W2
    Rt = np.zeros((n, nc))
    Rt[:k, :k] = np.eye(k)
    Rt[k:, :k] = -M2hat * s1g
    Rt[k:, k:] = Z2
    B_P = np.linalg.lstsq(Ph, Pt, rcond=None)[0]
    B_R = np.linalg.lstsq(Rh, Rt, rcond=None)[0]
    dP = sk**beta * math.sqrt(KP)
    dR = sk**gamma * math.sqrt(KR)
    KhP, KhR = _khat(KP, dP), _khat(KR, dR)
    dPR2 = sk ** (beta + gamma - 1.0) * math.sqrt(KhP * KhR) if np.isfinite(KhP * KhR) else math.inf
    return BasisDecomposition(
        k=int(k), n_c=nc, sigma_k=sk, sigma_k1=sk1, beta=float(beta), gamma=float(gamma),
        W2hat=W2, Z2hat=Z2, N2hat=N2hat, M2hat=M2hat, S2=S2, B_P=B_P, B_R=B_R,
        Ptilde=Pt, Rtilde=Rt, K_P=float(KP), K_R=float(KR), delta_P=dP, delta_R=dR,
        delta_PR_sq=dPR2, Khat_P=KhP, Khat_R=KhR, P=P, R=R, F=F)


def _deltas(sk, KP, KR, beta, gamma):
    dP = sk**beta * math.sqrt(KP)
    dR = sk**gamma * math.sqrt(KR)
    KhP, KhR = _khat(KP, dP), _khat(KR, dR)
    if not np.isfinite(KhP * KhR):
        return dP, dR, math.inf
    return dP, dR, sk ** (beta + gamma - 1.0) * math.sqrt(KhP * KhR)


def select_k(P, R, F, beta=1.0, gamma=1.0, K_P=None, K_R=None, return_decomposition=False):
    """Largest ``k`` for which the stability hypotheses hold, or None.

    ``k`` runs from ``n_c`` down to 1. The delta hypotheses are screened
    first (cheap); the basis is only built, and ``s_1`` checked, for the
    survivors.
    """
    _require_normalized(F)
    P = _transfer(P, F, "P")
    R = _transfer(R, F, "R")
    nc = P.shape[1]
    sig = F.sigma
    Qp, _ = _orth_complement(F.V.T @ P)
    Qr, _ = _orth_complement(F.U.T @ R)
    for k in range(nc, 0, -1):
        KP = _restricted_screen(Qp, sig, k, beta) if K_P is None else K_P
        KR = _restricted_screen(Qr, sig, k, gamma) if K_R is None else K_R
        dP, dR, d2 = _deltas(float(sig[k - 1]), KP, KR, beta, gamma)
        if not (dP < 1 / math.sqrt(2) and dR < 1 / math.sqrt(2) and d2 < 0.5):
            continue
        try:
            dec = build_pr_bases(P, R, F, k, beta, gamma, K_P, K_R)
        except DegenerateBlock:
            continue
        if dec.certified():
            return (k, dec) if return_decomposition else k
    return (None, None) if return_decomposition else None


def block_bounds(a0, a1, b, c, d0, d1, pairing="ab_cd"):
    """Bounds ``eta0 <= ||M z||^2 / ||z||^2 <= eta1`` for ``M = [[A, -B], [-C, D]]``.

    ``a0 <= ||A x||/||x|| <= a1``, ``d0 <= ||D x||/||x|| <= d1``, ``||B|| <= b``
    and ``||C|| <= c``. ``pairing='ab_cd'`` uses the discriminant
    ``(a^2 + c^2 - b^2 - d^2)^2 + 4(ab + cd)^2``; ``'ac_bd'`` uses
    ``(a^2 + b^2 - c^2 - d^2)^2 + 4(ac + bd)^2``. The two are algebraically
    equal (they come from ``M^T M`` and ``M M^T``).

    Raises
    ------
    DeterminantCondition
        If ``a0 * d0 <= b * c``.
    """
    vals = np.array([a0, a1, b, c, d0, d1], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise InvalidSpec("block bounds must be finite")
    if a0 <= 0 or d0 <= 0 or b < 0 or c < 0 or a1 < a0 or d1 < d0:
        raise InvalidSpec("need a0, d0 > 0, b, c >= 0, a1 >= a0, d1 >= d0")
    if a0 * d0 <= b * c:
        raise DeterminantCondition(f"a0*d0 = {a0 * d0:.6g} <= b*c = {b * c:.6g}")

    def disc(a, d):
        if pairing == "ab_cd":
            return (a * a + c * c - b * b - d * d) ** 2 + 4.0 * (a * b + c * d) ** 2
        if pairing == "ac_bd":
            return (a * a + b * b - c * c - d * d) ** 2 + 4.0 * (a * c + b * d) ** 2
        raise ValueError(f"unknown pairing {pairing!r}")

    t0 = a0 * a0 + b * b + c * c + d0 * d0
    t1 = a1 * a1 + b * b + c * c + d1 * d1
    r0 = math.sqrt(disc(a0, d0))
    # t0 - r0 cancels badly; use eta0 = det^2 / eta0_partner instead.
    eta0_hi = 0.5 * (t0 + r0)
    det = a0 * d0 - b * c
    eta0 = det * det / eta0_hi if pairing == "ab_cd" else 0.5 * (t0 - r0)
    eta1 = 0.5 * (t1 + math.sqrt(disc(a1, d1)))
    return eta0, eta1


@dataclass(frozen=True)
class StabilityReport:
    k: int
    hypotheses_ok: dict
    certified: bool
    a0: float
    b: float
    c: float
    d0: float
    eta0: float
    eta1: float
    C_Pi_formula: float
    C_Pi_bound: float
    measured_Pi_QA: float
    measured_Pi_l2: float


def stability_constants(sigma_k, Khat_P, Khat_R, s1, beta, gamma, full=False):
    """Block constants and ``C_Pi`` for the stability bound.

    With ``a0 = 1 - delta_PR^2``, ``d0 = s1``,
    ``b = sigma_k^(gamma-1/2) Khat_R^(1/2)``, ``c = sigma_k^(beta-1/2) Khat_P^(1/2)``::

        C_Pi = (1 + sigma_k^(2beta-1) Khat_P)(1 + sigma_k^(2gamma-1) Khat_R) / eta0

    ``full=True`` means ``k == n_c``: the off-diagonal blocks vanish and
    ``eta0 = a0^2``.
    """
    d2 = sigma_k ** (beta + gamma - 1.0) * math.sqrt(Khat_P * Khat_R)
    a0 = 1.0 - d2
    b = sigma_k ** (gamma - 0.5) * math.sqrt(Khat_R)
    c = sigma_k ** (beta - 0.5) * math.sqrt(Khat_P)
    if full:
        eta0, eta1 = block_bounds(a0, 1.0 + d2, 0.0, 0.0, a0, 1.0 + d2)
        b = c = 0.0
        d0 = a0
    else:
        d0 = s1
        eta0, eta1 = block_bounds(a0, 1.0 + d2, b, c, d0, 1.0)
    num = (1.0 + sigma_k ** (2 * beta - 1) * Khat_P) * (1.0 + sigma_k ** (2 * gamma - 1) * Khat_R)
    return {"a0": a0, "b": b, "c": c, "d0": d0, "eta0": eta0, "eta1": eta1, "C_Pi": num / eta0}


def stability_bound(decomp, beta=None, gamma=None):
    """Evaluate the stability bound and measure ``||Pi||`` for a decomposition.

    The bound is reported only when the hypotheses hold; the flags and the
    measured norms are always reported.
    """
    beta = decomp.beta if beta is None else beta
    gamma = decomp.gamma if gamma is None else gamma
    hyp = decomp.hypotheses()
    ok = all(hyp.values())
    nan = float("nan")
    consts = {"a0": nan, "b": nan, "c": nan, "d0": nan, "eta0": nan, "eta1": nan, "C_Pi": nan}
    if np.isfinite(decomp.Khat_P) and np.isfinite(decomp.Khat_R):
        try:
            consts = stability_constants(decomp.sigma_k, decomp.Khat_P, decomp.Khat_R, decomp.s1,
                                         beta, gamma, full=decomp.k == decomp.n_c)
        except (DeterminantCondition, InvalidSpec):
            pass
    qa = measure_projection(decomp.P, decomp.R, decomp.F, "QA")
    l2 = measure_projection(decomp.P, decomp.R, decomp.F, "l2")
    return StabilityReport(
        k=decomp.k, hypotheses_ok=hyp, certified=ok, a0=consts["a0"], b=consts["b"],
        c=consts["c"], d0=consts["d0"], eta0=consts["eta0"], eta1=consts["eta1"],
        C_Pi_formula=consts["C_Pi"], C_Pi_bound=consts["C_Pi"] if ok else None,
        measured_Pi_QA=qa.operator_norm, measured_Pi_l2=l2.operator_norm)


# -- projections ------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionReport:
    metric: str
    amplification: np.ndarray
    operator_norm: float
    operator_norm_sigma: float


def projection_matrix(P, R, F):
    """Dense ``Pi = P (R^T A P)^{-1} R^T A``."""
    P = _transfer(P, F, "P")
    R = _transfer(R, F, "R")
    A = F.reconstruct()
    Ac = coarse_operator(R, A, P)
    return P @ np.linalg.solve(Ac, R.T @ A)


def _sigma_route(P, R, F):
    """``Sigma^{1/2} Ph (Rh^T Sigma Ph)^{-1} Rh^T Sigma^{1/2}`` (the QA-isometric image of Pi)."""
    sig = F.sigma
    Ph = F.V.T @ as_dense(P, "P")
    Rh = F.U.T @ as_dense(R, "R")
    sh = np.sqrt(sig)
    core = Rh.T @ (sig[:, None] * Ph)
    return (sh[:, None] * Ph) @ np.linalg.solve(core, Rh.T * sh[None, :])


def measure_projection(P, R, F, metric="QA"):
    """``||Pi v_i||_M / ||v_i||_M`` for every right singular vector and ``||Pi||_M``.

    ``metric`` is ``'l2'``, ``'QA'`` or ``'AQ'``. For QA the norm is also
    evaluated through the singular-value route and reported as
    ``operator_norm_sigma``.

    Raises
    ------
    SingularCoarseOperator
    """
    Pi = projection_matrix(P, R, F)
    if metric == "l2":
        W = None
    elif metric == "QA":
        W = F.qa()
    elif metric == "AQ":
        W = F.aq()
    else:
        raise ValueError(f"unknown metric {metric!r}")
    PV = Pi @ F.V
    if W is None:
        amp = np.linalg.norm(PV, axis=0)
        norm = spectral_norm(Pi)
    else:
        num = np.sqrt(np.clip(np.einsum("ij,ij->j", PV, W @ PV), 0.0, None))
        den = np.sqrt(np.clip(np.einsum("ij,ij->j", F.V, W @ F.V), 0.0, None))
        amp = num / den
        norm = operator_norm_weighted(Pi, W)
    route = spectral_norm(_sigma_route(P, R, F)) if metric == "QA" else float("nan")
    return ProjectionReport(metric=metric, amplification=amp, operator_norm=norm,
                            operator_norm_sigma=route)


@dataclass(frozen=True)
class CgcAngle:
    theta_min: float
    sin_theta: float
    norm_Pi: float
    norm_I_minus_Pi: float
    consistent: bool


def cgc_angle(P, R, F, rtol=1e-6):
    """Minimal QA-angle between range(Pi) and range(I - Pi).

    ``consistent`` records whether ``||Pi||_QA = ||I - Pi||_QA = 1/sin(theta_min)``
    to ``rtol``.

    Raises
    ------
    TrivialProjection
        If ``n_c == n`` (``Pi = I``).
    """
    P = _transfer(P, F, "P")
    R = _transfer(R, F, "R")
    n, nc = P.shape
    if nc >= n:
        raise TrivialProjection("Pi is the identity; no complementary subspace")
    coarse_operator(R, F.reconstruct(), P)
    sig = F.sigma
    sh = np.sqrt(sig)
    Ph = F.V.T @ P
    Rh = F.U.T @ R
    Xo, _ = _orth_complement(sh[:, None] * Ph)
    # null(R^T A) in V coordinates is null(Rh^T Sigma) = complement of range(Sigma Rh)
    _, Nb = _orth_complement(sig[:, None] * Rh)
    Yo, _ = _orth_complement(sh[:, None] * Nb)
    proj = Yo - Xo @ (Xo.T @ Yo)
    s = svd(proj).sigma[0]
    s = float(min(max(s, 0.0), 1.0))
    theta = math.asin(s)
    T = _sigma_route(P, R, F)
    nPi = spectral_norm(T)
    nIPi = spectral_norm(np.eye(n) - T)
    inv = 1.0 / s if s > 0 else math.inf
    ok = abs(nPi - inv) <= rtol * nPi and abs(nPi - nIPi) <= rtol * nPi
    return CgcAngle(theta_min=theta, sin_theta=s, norm_Pi=nPi, norm_I_minus_Pi=nIPi, consistent=bool(ok))


# -- inner-product equivalence ------------------------------------------------

@dataclass(frozen=True)
class EquivalenceReport:
    """Equivalence of ``(A_c^T A_c)^{1/2}`` and ``P^T QA P``.

    ``c0_measured``/``c1_measured`` are the extreme eigenvalues of the pencil;
    ``ratio_min``/``ratio_max`` the extremes of
    ``||A_c x||^2 / ||P^T QA P x||^2``, the quantity the bounds are derived for.
    """

    c0_measured: float
    c1_measured: float
    ratio_min: float
    ratio_max: float
    c0_bound: float
    c1_bound: float
    c0_tilde: float
    c1_tilde: float
    hypotheses_ok: dict
    hyp5_ok: bool
    certified: bool


def equivalence_measured(P, R, F):
    """Pencil eigenvalues and norm-ratio extremes (no theory involved)."""
    P = _transfer(P, F, "P")
    R = _transfer(R, F, "R")
    A = F.reconstruct()
    Ac = coarse_operator(R, A, P)
    G = P.T @ F.qa() @ P
    G = 0.5 * (G + G.T)
    # (Ac^T Ac)^{1/2} from the SVD of Ac, which avoids squaring its condition number
    Fc = svd(Ac)
    H = (Fc.V * Fc.sigma) @ Fc.V.T
    Gmh = spd_fractional_power(G, -0.5)
    lam = np.linalg.eigvalsh(0.5 * ((Gmh @ H @ Gmh) + (Gmh @ H @ Gmh).T))
    s = svd(Ac @ np.linalg.inv(G)).sigma
    return float(lam[0]), float(lam[-1]), float(s[0] ** 2), float(s[-1] ** 2)


def equivalence_bounds(decomp):
    """``(c0, c1, c0_tilde, c1_tilde)`` from the block bounds and change of basis."""
    sk, beta, gamma = decomp.sigma_k, decomp.beta, decomp.gamma
    KhP, KhR = decomp.Khat_P, decomp.Khat_R
    dh2 = decomp.deltahat_P_sq
    d2 = decomp.delta_PR_sq
    if decomp.k == decomp.n_c:
        e0, e1 = block_bounds(1.0, 1.0 + dh2, 0.0, 0.0, 1.0, 1.0 + dh2)
        f0, f1 = block_bounds(1.0 - d2, 1.0 + d2, 0.0, 0.0, 1.0 - d2, 1.0 + d2)
    else:
        e0, e1 = block_bounds(1.0, 1.0 + dh2, sk**beta * math.sqrt(KhP),
                              sk ** (beta - 1.0) * math.sqrt(KhP), 1.0, 1.0)
        f0, f1 = block_bounds(1.0 - d2, 1.0 + d2, sk**gamma * math.sqrt(KhR),
                              sk ** (beta - 1.0) * math.sqrt(KhP), decomp.s1, 1.0)
    ct0, ct1 = f0 / e1, f1 / e0
    nBP, nBR = spectral_norm(decomp.B_P), spectral_norm(decomp.B_R)
    nBPi = spectral_norm(np.linalg.inv(decomp.B_P))
    nBRi = spectral_norm(np.linalg.inv(decomp.B_R))
    c0 = ct0 / (nBPi * nBR) ** 2
    c1 = (nBP * nBRi) ** 2 * ct1
    return c0, c1, ct0, ct1


def inner_product_equivalence(P, R, F, decomp=None, beta=None, gamma=None):
    """Measured and (when certified) theoretical equivalence constants.

    The bounds need the stability hypotheses, ``beta >= 1`` and
    ``sigma_k^(2beta-1) Khat_P < 1``.
    """
    c0m, c1m, rmin, rmax = equivalence_measured(P, R, F)
    hyp, hyp5, cert = {}, False, False
    c0b = c1b = ct0 = ct1 = None
    if decomp is not None:
        if (beta is not None and beta != decomp.beta) or (gamma is not None and gamma != decomp.gamma):
            decomp = build_pr_bases(decomp.P, decomp.R, decomp.F, decomp.k,
                                    beta if beta is not None else decomp.beta,
                                    gamma if gamma is not None else decomp.gamma)
        hyp = dict(decomp.hypotheses())
        hyp5 = bool(decomp.beta >= 1.0 and decomp.deltahat_P_sq < 1.0)
        hyp["deltahat_P"] = hyp5
        hyp["gamma_positive"] = bool(decomp.gamma > 0.0)
        cert = all(hyp.values())
        if cert:
            c0b, c1b, ct0, ct1 = equivalence_bounds(decomp)
    return EquivalenceReport(c0_measured=c0m, c1_measured=c1m, ratio_min=rmin, ratio_max=rmax,
                             c0_bound=c0b, c1_bound=c1b, c0_tilde=ct0, c1_tilde=ct1,
                             hypotheses_ok=hyp, hyp5_ok=hyp5, certified=cert)


# -- convergence bounds ---------------------------------------------------------

def two_grid_bound(C_Pi, K_P1, nu, beta=1.0):
    """Two-grid QA contraction bound for ``nu`` Richardson sweeps.

    ``(4/(4+(2beta-1)))^2 ((2beta-1)/(4nu+(2beta-1)))^((2beta-1)/2) C_Pi K_P1``;
    at ``beta = 1`` this is ``16 C_Pi K_P1 / (25 sqrt(4nu+1))``.
    """
    if beta <= 0.5:
        raise InvalidBeta(f"beta must exceed 1/2, got {beta}")
    if nu < 1:
        raise InvalidSpec(f"nu must be at least 1, got {nu}")
    if C_Pi < 1.0 or K_P1 < 0.0:
        raise InvalidSpec("need C_Pi >= 1 and K_P1 >= 0")
    t = 2.0 * beta - 1.0
    return (4.0 / (4.0 + t)) ** 2 * (t / (4.0 * nu + t)) ** (t / 2.0) * C_Pi * K_P1


@dataclass(frozen=True)
class WcycleRequirements:
    """Relaxation count and contraction bound for the W-cycle.

    ``C_mu = 2 (c1/c0) K_P C_Pi`` is the primary constant; ``C_mu_noK`` is the
    variant ``2 (c1/c0) C_Pi`` without the FAP factor. ``nu_min`` uses the
    factor 4 inside the power; ``nu_consistent`` uses 8, which is what makes
    ``rho_nu <= 1/(4 C_mu_noK)`` follow from the two-grid estimate.
    """

    nu_min: int  # or inf
    C_mu: float
    rho_bound: float
    nu_raw: float
    C_mu_noK: float
    rho_bound_noK: float
    nu_consistent: int  # or inf

    def __iter__(self):
        return iter((self.nu_min, self.C_mu, self.rho_bound))


def _power_count(t, X):
    """``(t/4) X^(2/t)`` evaluated in logs; inf when it overflows a float."""
    if X <= 0.0:
        return 0.0
    log_raw = math.log(t / 4.0) + (2.0 / t) * math.log(X)
    return math.exp(log_raw) if log_raw < 700.0 else math.inf


def _ceil_count(raw):
    return int(math.ceil(raw - 1e-12)) if math.isfinite(raw) else math.inf


def wcycle_requirements(c0, c1, K_P1, C_Pi, beta=1.0):
    """Relaxation count and contraction bound for the W-cycle.

    ``nu_min`` is ``inf`` when the count does not fit in a float (very large
    constants with ``beta`` close to 1/2).
    """
    if beta <= 0.5:
        raise InvalidBeta(f"beta must exceed 1/2, got {beta}")
    if not (c1 >= c0 > 0):
        raise InvalidSpec(f"need c1 >= c0 > 0, got c0={c0}, c1={c1}")
    t = 2.0 * beta - 1.0
    ratio = c1 / c0
    X = 4.0 * ratio * K_P1 * C_Pi * (2.0 * C_Pi - 1.0)
    raw = _power_count(t, X)
    raw8 = _power_count(t, 2.0 * X)
    C_mu = 2.0 * ratio * K_P1 * C_Pi
    C_mu_noK = 2.0 * ratio * C_Pi
    rho = 1.0 / (2.0 * C_mu) if C_mu > 0 else math.inf
    return WcycleRequirements(
        nu_min=_ceil_count(raw), C_mu=C_mu, rho_bound=rho, nu_raw=raw,
        C_mu_noK=C_mu_noK, rho_bound_noK=1.0 / (2.0 * C_mu_noK),
        nu_consistent=_ceil_count(raw8))
