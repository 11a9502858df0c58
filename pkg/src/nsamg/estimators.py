"""scikit-learn style front ends for the solver and the transfer diagnostics.

Both estimators are fitted on a square matrix. ``fit`` applies the optional
diagonal scaling and the spectral normalization, so ``predict`` can take
right-hand sides of the *original* system.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import InvalidSpec
from .problems import diagonal_scale, normalize_spectral
from .solver import (INTERP_CHOICES, RESTRICT_CHOICES, asymptotic_factor, build_hierarchy,
                     mu_cycle_solve, two_grid_solve)
from .theory import (fap_constant, inner_product_equivalence, measure_projection, select_k,
                     stability_bound, two_grid_bound, wcycle_requirements)
from .validation import as_csr, check_square, check_vector


def _finite_or_none(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def analyze_pair(P, R, F, beta=1.0, gamma=1.0):
    """Theory constants and measured norms for one transfer pair.

    Parameters
    ----------
    P, R : array_like, shape (n, n_c)
    F : SvdFactorization
        Of the normalized fine operator.

    Returns
    -------
    dict
        Plain floats, booleans and None only, so it serializes directly.

    Raises
    ------
    SingularCoarseOperator
    """
    P = np.asarray(P.toarray() if hasattr(P, "toarray") else P, dtype=float)
    R = np.asarray(R.toarray() if hasattr(R, "toarray") else R, dtype=float)
    k, dec = select_k(P, R, F, beta, gamma, return_decomposition=True)
    kp = fap_constant(P, F, beta, 1.0)
    out = {"n": int(F.n), "n_c": int(P.shape[1]), "k": k, "K_P_beta_1": kp.sup_K,
           "K_P_beta_1_max": kp.uniform_K}
    if dec is None:
        qa = measure_projection(P, R, F, "QA").operator_norm
        l2 = measure_projection(P, R, F, "l2").operator_norm
        eq = inner_product_equivalence(P, R, F)
        out.update(delta_P=None, delta_R=None, delta_PR=None, s1=None, hypotheses={},
                   stability_block=None, stability_certified=False, C_Pi_bound=None, norm_Pi_QA=qa, norm_Pi_l2=l2)
    else:
        st = stability_bound(dec)
        eq = inner_product_equivalence(P, R, F, decomp=dec)
        out.update(delta_P=dec.delta_P, delta_R=dec.delta_R, delta_PR=dec.delta_PR,
                   s1=dec.s1, hypotheses={**{k_: bool(v) for k_, v in st.hypotheses_ok.items()},
                                          "deltahat_P": bool(eq.hyp5_ok)},
                   stability_block={name: _finite_or_none(getattr(st, name))
                                    for name in ("a0", "b", "c", "d0", "eta0", "eta1")},
                   stability_certified=bool(st.certified), C_Pi_bound=_finite_or_none(st.C_Pi_bound),
                   norm_Pi_QA=st.measured_Pi_QA, norm_Pi_l2=st.measured_Pi_l2)
    out["norm_Pi_QA_sq"] = out["norm_Pi_QA"] ** 2
    out.update(c0_measured=eq.c0_measured, c1_measured=eq.c1_measured,
               ratio_min=eq.ratio_min, ratio_max=eq.ratio_max,
               c0_bound=_finite_or_none(eq.c0_bound), c1_bound=_finite_or_none(eq.c1_bound),
               equivalence_certified=bool(eq.certified))
    out["certified"] = bool(out["stability_certified"] and eq.certified)
    return {k_: (float(v) if isinstance(v, np.floating) else v) for k_, v in out.items()}


def combine_levels(per_level, beta=1.0):
    """W-cycle requirements from the worst constants over all levels.

    Returns None entries when some level is not certified.
    """
    if not per_level or not all(lv["certified"] for lv in per_level):
        return {"certified": False, "nu_min": None, "C_mu": None, "rho_bound": None,
                "C_mu_noK": None, "rho_bound_noK": None, "nu_consistent": None}
    C_Pi = max(lv["C_Pi_bound"] for lv in per_level)
    c0 = min(lv["c0_bound"] for lv in per_level)
    c1 = max(lv["c1_bound"] for lv in per_level)
    K = max(lv["K_P_beta_1"] for lv in per_level)
    w = wcycle_requirements(c0, c1, K, C_Pi, beta)
    return {"certified": True, "C_Pi": C_Pi, "c0": c0, "c1": c1, "K_P": K,
            "nu_min": w.nu_min, "C_mu": w.C_mu, "rho_bound": w.rho_bound,
            "C_mu_noK": w.C_mu_noK, "rho_bound_noK": w.rho_bound_noK,
            "nu_consistent": w.nu_consistent}


class _HierarchyMixin:

    def _validate_choices(self):
        if self.interp not in INTERP_CHOICES:
            raise InvalidSpec(f"interp must be one of {INTERP_CHOICES}, got {self.interp!r}")
        if self.restrict not in RESTRICT_CHOICES:
            raise InvalidSpec(f"restrict must be one of {RESTRICT_CHOICES}, got {self.restrict!r}")

    def _fit_hierarchy(self, A):
        A = as_csr(A)
        check_square(A)
        self._validate_choices()
        d = A.diagonal() if self.diag else None
        B = diagonal_scale(A) if self.diag else A
        system = normalize_spectral(B, diag_applied=self.diag)
        self.n_features_in_ = A.shape[0]
        self.diag_ = d
        self.scale_ = system.scale
        self.system_ = system
        self.hierarchy_ = build_hierarchy(
            system, self.interp, self.restrict, theta_s=self.theta_s, degree=self.degree,
            max_levels=self.max_levels, coarsest_max=self.coarsest_max)
        return self

    def _scaled_rhs(self, b):
        b = check_vector(b, self.n_features_in_, "b")
        if self.diag_ is not None:
            b = b / self.diag_
        return self.scale_ * b


class NSAMGSolver(_HierarchyMixin, BaseEstimator):
    """Multilevel solver for ``A x = b`` with nonsymmetric ``A``.

    Parameters
    ----------
    interp : {'classical', 'laip', 'svd'}
    restrict : {'classical_t', 'lair', 'qstar', 'svd'}
    nu : int
        Richardson sweeps on the normal equations per level.
    mu : int
        Recursive coarse solves per level (2 is a W-cycle). Ignored when
        ``cycle='two_grid'``.
    cycle : {'mu_cycle', 'two_grid'}
    diag : bool
        Apply ``D^{-1}`` before normalizing.

    Attributes
    ----------
    hierarchy_ : Hierarchy
    report_ : SolveReport
        From the most recent ``predict``.
    """

    def __init__(self, interp="classical", restrict="lair", nu=1, mu=2, cycle="mu_cycle",
                 theta_s=0.25, degree=1, max_levels=10, coarsest_max=40, diag=True,
                 tol=1e-10, max_iter=200):
        self.interp = interp
        self.restrict = restrict
        self.nu = nu
        self.mu = mu
        self.cycle = cycle
        self.theta_s = theta_s
        self.degree = degree
        self.max_levels = max_levels
        self.coarsest_max = coarsest_max
        self.diag = diag
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, A, y=None):
        if self.cycle not in ("mu_cycle", "two_grid"):
            raise InvalidSpec(f"cycle must be 'mu_cycle' or 'two_grid', got {self.cycle!r}")
        return self._fit_hierarchy(A)

    def predict(self, b, x_true=None):
        """Solve for one right-hand side of the original system."""
        check_is_fitted(self, "hierarchy_")
        rhs = self._scaled_rhs(b)
        if self.cycle == "two_grid":
            rep = two_grid_solve(self.hierarchy_, rhs, self.nu, self.tol, self.max_iter,
                                 x_true=x_true)
        else:
            rep = mu_cycle_solve(self.hierarchy_, rhs, self.nu, self.mu, self.tol, self.max_iter,
                                 x_true=x_true)
        self.report_ = rep
        return rep.x

    def asymptotic_rate(self, iters=40, seed=0):
        check_is_fitted(self, "hierarchy_")
        return asymptotic_factor(self.hierarchy_, self.nu, self.mu, self.cycle, iters, seed).rho_estimate


class TransferAnalyzer(_HierarchyMixin, BaseEstimator):
    """Theory diagnostics for the transfers of every level of a hierarchy.

    ``fit`` builds the hierarchy and, level by level, the stability and
    equivalence constants; ``transform`` returns them as a list of dicts.

    Attributes
    ----------
    levels_ : list of dict
        One :func:`analyze_pair` result per coarsened level.
    wcycle_ : dict
        :func:`combine_levels` over ``levels_``.
    """

    def __init__(self, interp="classical", restrict="lair", beta=1.0, gamma=1.0, nu=1,
                 theta_s=0.25, degree=1, max_levels=2, coarsest_max=40, diag=True):
        self.interp = interp
        self.restrict = restrict
        self.beta = beta
        self.gamma = gamma
        self.nu = nu
        self.theta_s = theta_s
        self.degree = degree
        self.max_levels = max_levels
        self.coarsest_max = coarsest_max
        self.diag = diag

    def fit(self, A, y=None):
        self._fit_hierarchy(A)
        h = self.hierarchy_
        self.levels_ = []
        for lvl in h.levels[:-1]:
            rep = analyze_pair(lvl.P, lvl.R, lvl.factorization(), self.beta, self.gamma)
            if rep["C_Pi_bound"] is not None and self.beta > 0.5:
                rep["two_grid_bound"] = two_grid_bound(max(rep["C_Pi_bound"], 1.0),
                                                       rep["K_P_beta_1"], self.nu, self.beta)
            else:
                rep["two_grid_bound"] = None
            self.levels_.append(rep)
        self.wcycle_ = combine_levels(self.levels_, self.beta)
        return self

    def transform(self, A=None):
        check_is_fitted(self, "levels_")
        return list(self.levels_)
