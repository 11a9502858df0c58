"""Nonsymmetric AMG cycles driven by Richardson relaxation on the normal equations.

Every level stores a matrix of unit spectral norm. The raw coarse operator
``R^T A P`` is kept alongside the scale that normalizes it, so a coarse
residual is restricted as ``scale * R^T r``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .exceptions import InvalidSpec, Stagnation, TooFewIterations
from .linalg import SvdFactorization, polar_q, svd
from .transfer import (TransferPair, cf_split, classical_interp, coarse_operator, laip_interp,
                       lair_restrict, q_pair_restrict, strength_graph, svd_transfer)
from .validation import DENSE_CAP, as_csr, check_vector

INTERP_CHOICES = ("classical", "laip", "svd")
RESTRICT_CHOICES = ("classical_t", "lair", "qstar", "svd")


@dataclass
class Level:
    """One level of the hierarchy.

    ``R`` and ``P`` are None on the coarsest level. ``coarse_scale`` is the
    factor that turns ``A_coarse_raw`` into the next level's matrix.
    """

    A: sp.csr_matrix
    scale: float
    R: object = None
    P: object = None
    A_coarse_raw: np.ndarray = None
    coarse_scale: float = 1.0
    n_c: int = 0
    _svd: SvdFactorization = field(default=None, repr=False)

    @property
    def n(self):
        return self.A.shape[0]

    def factorization(self):
        """SVD of ``A`` (cached); None above the dense cap."""
        if self._svd is None and self.n <= DENSE_CAP:
            self._svd = svd(self.A)
        return self._svd


@dataclass
class Hierarchy:
    levels: list
    config: dict
    _lu: tuple = field(default=None, repr=False)

    @property
    def coarsest_size(self):
        return self.levels[-1].n

    @property
    def sizes(self):
        return [lvl.n for lvl in self.levels]

    def coarse_factor(self):
        if self._lu is None:
            self._lu = scipy.linalg.lu_factor(self.levels[-1].A.toarray())
        return self._lu

    def __len__(self):
        return len(self.levels)


def _build_transfers(A, F, interp, restrict, theta_s, degree, svd_ratio):
    n = A.shape[0]
    if interp == "svd":
        if restrict not in ("svd", "qstar"):
            raise InvalidSpec("interp='svd' pairs only with restrict 'svd' or 'qstar'")
        n_c = max(1, min(n - 1, int(round(svd_ratio * n))))
        P = svd_transfer(F, n_c, "right")
        R = svd_transfer(F, n_c, "left") if restrict == "svd" else q_pair_restrict(P, polar_q(F))
        return TransferPair(R=R, P=P, builder_R=restrict, builder_P=interp)
    S = strength_graph(A, theta_s)
    cf = cf_split(S)
    if cf.n_c == n:
        return None
    if interp == "classical":
        P = classical_interp(A, S, cf)
    else:
        P = laip_interp(A, strength_graph(A.T.tocsr(), theta_s), cf, degree)
    if restrict == "classical_t":
        R = classical_interp(A, S, cf)
    elif restrict == "lair":
        R = lair_restrict(A, S, cf, degree)
    elif restrict == "qstar":
        R = q_pair_restrict(P.toarray(), polar_q(F))
    else:
        R = svd_transfer(F, cf.n_c, "left")
    return TransferPair(R=R, P=P, builder_R=restrict, builder_P=interp)


def build_hierarchy(system, interp="classical", restrict="lair", theta_s=0.25, degree=1,
                    max_levels=10, coarsest_max=40, svd_ratio=0.5, transfers=None):
    """Set up the multilevel hierarchy.

    Parameters
    ----------
    system : ScaledSystem
        Normalized fine-level system.
    interp : {'classical', 'laip', 'svd'}
    restrict : {'classical_t', 'lair', 'qstar', 'svd'}
        ``classical_t`` uses the classical interpolation as restriction
        (Galerkin).
    transfers : TransferPair, optional
        Overrides the level-0 transfers (used to inject hand-built pairs).

    Raises
    ------
    SingularCoarseOperator
        With the offending level attached.
    """
    if interp not in INTERP_CHOICES:
        raise InvalidSpec(f"interp must be one of {INTERP_CHOICES}, got {interp!r}")
    if restrict not in RESTRICT_CHOICES:
        raise InvalidSpec(f"restrict must be one of {RESTRICT_CHOICES}, got {restrict!r}")
    if not getattr(system, "normalized", False):
        raise InvalidSpec("build_hierarchy expects a normalized ScaledSystem")
    if max_levels < 1 or coarsest_max < 1:
        raise InvalidSpec("max_levels and coarsest_max must be positive")
    config = dict(interp=interp, restrict=restrict, theta_s=theta_s, degree=degree,
                  max_levels=max_levels, coarsest_max=coarsest_max, svd_ratio=svd_ratio)
    levels = [Level(A=as_csr(system.A), scale=system.scale, _svd=system.svd)]
    while len(levels) < max_levels:
        lvl = levels[-1]
        if lvl.n <= coarsest_max and not (transfers is not None and len(levels) == 1):
            break
        F = lvl.factorization() if (interp == "svd" or restrict in ("qstar", "svd")) else None
        if transfers is not None and len(levels) == 1:
            pair = transfers
        else:
            pair = _build_transfers(lvl.A, F, interp, restrict, theta_s, degree, svd_ratio)
        if pair is None or pair.n_c >= lvl.n:
            break
        R = pair.R if sp.issparse(pair.R) else np.asarray(pair.R, dtype=float)
        P = pair.P if sp.issparse(pair.P) else np.asarray(pair.P, dtype=float)
        Ac = coarse_operator(R, lvl.A, P, level=len(levels) - 1)
        Fc = svd(Ac)
        cscale = 1.0 / Fc.sigma_max
        lvl.R, lvl.P, lvl.A_coarse_raw, lvl.coarse_scale, lvl.n_c = R, P, Ac, cscale, Ac.shape[0]
        Fc = SvdFactorization(U=Fc.U, sigma=Fc.sigma * cscale, V=Fc.V)
        levels.append(Level(A=as_csr(Ac * cscale), scale=cscale, _svd=Fc))
    return Hierarchy(levels=levels, config=config)


# -- relaxation and cycles ------------------------------------------------------

def richardson_normal_apply(A, x, b, nu):
    """``nu`` sweeps of ``x <- x + A^T (b - A x)`` (assumes ``||A|| = 1``)."""
    x = np.array(x, dtype=float, copy=True)
    AT = A.T
    for _ in range(int(nu)):
        x += AT @ (b - A @ x)
    return x


def _cycle(h, ell, x, b, nu, mu):
    lvl = h.levels[ell]
    if ell == len(h.levels) - 1:
        return scipy.linalg.lu_solve(h.coarse_factor(), b)
    x = richardson_normal_apply(lvl.A, x, b, nu)
    r = b - lvl.A @ x
    rc = lvl.coarse_scale * (lvl.R.T @ r)
    ec = np.zeros(lvl.n_c)
    for _ in range(mu):
        ec = _cycle(h, ell + 1, ec, rc, nu, mu)
    return x + lvl.P @ ec


def cycle(h, x, b, nu=1, mu=1):
    """One multilevel cycle on the finest level; no post-relaxation."""
    return _cycle(h, 0, x, b, nu, mu)


def two_grid_cycle(h, x, b, nu=1):
    """Relaxation plus an exact coarse solve on level 1."""
    if len(h.levels) < 2:
        raise InvalidSpec("two-grid cycle needs at least two levels")
    lvl = h.levels[0]
    x = richardson_normal_apply(lvl.A, x, b, nu)
    r = b - lvl.A @ x
    rc = lvl.coarse_scale * (lvl.R.T @ r)
    if len(h.levels) == 2:
        ec = scipy.linalg.lu_solve(h.coarse_factor(), rc)
    else:
        ec = np.linalg.solve(h.levels[1].A.toarray(), rc)
    return x + lvl.P @ ec


@dataclass
class SolveReport:
    residual_history: list
    error_history_QA: list
    cycle: str
    nu: int
    mu: int
    converged: bool = False
    rho_estimate: float = float("nan")
    step_ratios: np.ndarray = None
    x: np.ndarray = field(default=None, repr=False)

    @property
    def iterations(self):
        return len(self.residual_history) - 1

    def ratios(self, which="auto"):
        if self.step_ratios is not None:
            return np.asarray(self.step_ratios, dtype=float)
        hist = self.error_history_QA if (which == "qa" or (which == "auto" and self.error_history_QA)) \
            else self.residual_history
        h = np.asarray(hist, dtype=float)
        good = h[:-1] > 0
        return h[1:][good] / h[:-1][good]


def measure_rho(report, last=5):
    """Geometric mean of the last ``last`` contraction ratios.

    QA-error ratios are used when available, residual ratios otherwise.

    Raises
    ------
    TooFewIterations
        With fewer than ``last + 1`` ratios.
    """
    r = report.ratios() if isinstance(report, SolveReport) else np.asarray(report, dtype=float)
    if r.size < last + 1:
        raise TooFewIterations(f"need at least {last + 1} ratios, have {r.size}")
    tail = r[-last:]
    if np.any(tail <= 0):
        return 0.0
    return float(np.exp(np.mean(np.log(tail))))


def _qa_norm(F, e):
    return float(np.linalg.norm(np.sqrt(F.sigma) * (F.V.T @ e)))


def _iterate(h, step, b, x0, x_true, tol, max_iters, label, nu, mu, stall=10):
    A = h.levels[0].A
    b = check_vector(b, A.shape[0], "b")
    x = np.zeros_like(b) if x0 is None else check_vector(x0, A.shape[0], "x0").copy()
    F = h.levels[0].factorization() if x_true is not None else None
    res = [float(np.linalg.norm(b - A @ x))]
    err = [_qa_norm(F, x - x_true)] if F is not None else []
    bnorm = float(np.linalg.norm(b))
    target = tol * (bnorm if bnorm > 0 else res[0])
    report = SolveReport(residual_history=res, error_history_QA=err, cycle=label, nu=nu, mu=mu)
    streak = 0
    for _ in range(int(max_iters)):
        if res[-1] <= target or res[-1] == 0.0:
            report.converged = True
            break
        x = step(x, b)
        if not np.all(np.isfinite(x)):
            raise Stagnation("iterate became non-finite", report)
        res.append(float(np.linalg.norm(b - A @ x)))
        if F is not None:
            err.append(_qa_norm(F, x - x_true))
        hist = err if F is not None else res
        if hist[-2] > 0 and hist[-1] / hist[-2] >= 1.0:
            streak += 1
            if streak >= stall:
                report.rho_estimate = _safe_rho(report)
                raise Stagnation(f"no contraction for {stall} consecutive iterations", report)
        else:
            streak = 0
    else:
        report.converged = res[-1] <= target
    report.x = x
    report.rho_estimate = _safe_rho(report)
    return report


def _safe_rho(report):
    try:
        return measure_rho(report)
    except TooFewIterations:
        r = report.ratios()
        r = r[r > 0]
        return float(np.exp(np.mean(np.log(r)))) if r.size else float("nan")


def two_grid_solve(h, b, nu=1, tol=1e-10, max_iters=100, x0=None, x_true=None):
    """Iterate the two-grid cycle ``e <- (I - Pi) G^nu e``.

    Raises
    ------
    Stagnation
        If the error (QA when ``x_true`` is given, else residual) fails to
        contract for 10 consecutive iterations.
    """
    return _iterate(h, lambda x, rhs: two_grid_cycle(h, x, rhs, nu), b, x0, x_true, tol,
                    max_iters, "two_grid", nu, 1)


def mu_cycle_solve(h, b, nu=1, mu=2, tol=1e-10, max_iters=100, x0=None, x_true=None):
    """Iterate the recursive mu-cycle (``mu = 2`` is the W-cycle)."""
    if mu < 1:
        raise InvalidSpec(f"mu must be at least 1, got {mu}")
    return _iterate(h, lambda x, rhs: cycle(h, x, rhs, nu, mu), b, x0, x_true, tol,
                    max_iters, "mu_cycle", nu, mu)


def asymptotic_factor(h, nu=1, mu=2, cycle_kind="mu_cycle", iters=40, seed=0):
    """QA contraction of the homogeneous iteration from a random start.

    The error is renormalized after every cycle so long runs never
    underflow; the returned report holds the per-cycle ratios (as a QA
    history starting at 1) and its ``rho_estimate``.
    """
    F = h.levels[0].factorization()
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(h.levels[0].n)
    e /= _qa_norm(F, e)
    zero = np.zeros_like(e)
    hist = [1.0]
    for _ in range(int(iters)):
        if cycle_kind == "two_grid":
            e = two_grid_cycle(h, e, zero, nu)
        else:
            e = cycle(h, e, zero, nu, mu)
        ratio = _qa_norm(F, e)
        if ratio == 0.0:
            hist.append(0.0)
            break
        hist.append(ratio)
        e /= ratio
    ratios = np.array(hist[1:])
    report = SolveReport(residual_history=[], error_history_QA=[], cycle=cycle_kind, nu=nu,
                         mu=mu if cycle_kind != "two_grid" else 1, converged=True,
                         step_ratios=ratios)
    report.rho_estimate = measure_rho(ratios) if ratios.size > 5 else float(ratios[-1])
    return report


def error_propagation_matrix(h, nu=1, mu=1, cycle_kind="mu_cycle"):
    """Dense error propagation of one cycle, column by column."""
    n = h.levels[0].n
    zero = np.zeros(n)
    E = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        E[:, j] = two_grid_cycle(h, e, zero, nu) if cycle_kind == "two_grid" else cycle(h, e, zero, nu, mu)
    return E
