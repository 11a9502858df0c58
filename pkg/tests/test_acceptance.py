"""Acceptance criteria 1-10. Each test prints one ``CRITERION n: PASS|FAIL`` line."""

import math
import time

import numpy as np
import pytest
import scipy.linalg

from nsamg.cli import main
from nsamg.estimators import NSAMGSolver, TransferAnalyzer
from nsamg.exceptions import SingularCoarseOperator
from nsamg.linalg import operator_norm_weighted, polar_q, svd
from nsamg.problems import ProblemSpec, generate
from nsamg.report import block_bound_fuzz, config_pair
from nsamg.solver import build_hierarchy, error_propagation_matrix
from nsamg.theory import (build_pr_bases, cgc_angle, check_fap_implications, fap_constant,
                          inner_product_equivalence, measure_projection, select_k,
                          stability_bound, stability_constants, two_grid_bound)
from nsamg.transfer import counterexample_pair, q_pair_restrict, svd_transfer

from conftest import builders, random_unit_system, system


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def _pair(disc, n, interp, restrict):
    P, R, _ = builders(disc, n)
    return P[interp], R[restrict], system(disc, n).factorization()


IDENTITY_CONFIGS = [("upwind_fv", 8, "classical", "lair", 0), ("upwind_fv", 12, "laip", "lair", 1),
                    ("supg", 8, "classical", "lair", 2), ("supg", 8, "laip", "lair", 3),
                    ("upwind_fv", 16, "classical", "classical_t", 4), ("supg", 12, "svd", "svd", 5)]


def test_criterion_01_identities(capsys):
    t0 = time.perf_counter()
    worst = {"angle": 0.0, "route": 0.0, "basis": 0.0}
    for disc, n, interp, restrict, seed in IDENTITY_CONFIGS:
        P, R, F = _pair(disc, n, interp, restrict)
        ang = cgc_angle(P, R, F)
        worst["angle"] = max(worst["angle"], abs(ang.norm_Pi - 1 / ang.sin_theta) / ang.norm_Pi,
                             abs(ang.norm_Pi - ang.norm_I_minus_Pi) / ang.norm_Pi)
        rep = measure_projection(P, R, F, "QA")
        worst["route"] = max(worst["route"], abs(rep.operator_norm - rep.operator_norm_sigma) / rep.operator_norm)
        r = np.random.default_rng(seed)
        nc = P.shape[1]
        BP = np.eye(nc) + 0.2 * r.standard_normal((nc, nc))
        BR = np.eye(nc) + 0.2 * r.standard_normal((nc, nc))
        rep2 = measure_projection(P @ BP, R @ BR, F, "QA")
        worst["basis"] = max(worst["basis"], np.abs(rep2.amplification - rep.amplification).max()
                             / max(1.0, np.abs(rep.amplification).max()))
    elapsed = time.perf_counter() - t0
    ok = worst["angle"] <= 1e-6 and worst["route"] <= 1e-8 and worst["basis"] <= 1e-8 and elapsed < 60
    verdict(capsys, 1, ok, f"configs={len(IDENTITY_CONFIGS)} worst={worst} time={elapsed:.1f}s")


def test_criterion_02_orthogonal_limit(capsys):
    worst = 0.0
    for n in (8, 12):
        F = system("upwind_fv", n).factorization()
        for P in builders("upwind_fv", n)[0].values():
            R = q_pair_restrict(P, polar_q(F))
            eq = inner_product_equivalence(P, R, F)
            worst = max(worst, abs(measure_projection(P, R, F, "QA").operator_norm - 1),
                        abs(eq.c0_measured - 1), abs(eq.c1_measured - 1))
    verdict(capsys, 2, worst <= 1e-8, f"max deviation from 1: {worst:.2e}")


def test_criterion_03_counterexample(capsys):
    results = []
    for label, F in (("diag", svd(np.diag(np.linspace(0.05, 1.0, 12)))),
                     ("upwind", system("upwind_fv", 6).factorization())):
        pair = counterexample_pair(F, 6, 3)
        try:
            measure_projection(pair.P, pair.R, F)
            raised = False
        except SingularCoarseOperator:
            raised = True
        k = select_k(pair.P, pair.R, F)
        s1 = build_pr_bases(pair.P, pair.R, F, 2).s1
        results.append((label, raised, k, s1))
    ok = all(raised and k is None and s1 <= 1e-10 for _, raised, k, s1 in results)
    verdict(capsys, 3, ok, "; ".join(f"{lab}: singular={r} k={k} s1={s:.1e}" for lab, r, k, s in results))


def _fap_oracle(P, F, beta, eta):
    W = F.V @ np.diag(F.sigma**eta) @ F.V.T
    G = P.T @ W @ P
    out = []
    for i in range(F.n):
        v = F.V[:, i]
        r = v - P @ np.linalg.solve(G, P.T @ W @ v)
        out.append((r @ W @ r) / F.sigma[i] ** (2 * beta))
    return np.array(out)


def test_criterion_04_fap(capsys):
    bad = []
    checked = 0
    for disc in ("upwind_fv", "supg"):
        for n in (8, 16):
            F = system(disc, n).factorization()
            P, R, _ = builders(disc, n)
            cases = [(f"P:{k}", M, F) for k, M in P.items()]
            cases += [(f"R:{k}", R[k], F.transpose()) for k in ("lair", "svd")]
            for name, M, G in cases:
                rep = check_fap_implications(M, G)
                checked += 1
                if rep["violations"]:
                    bad.append((disc, n, name, rep["violations"][0]["check"]))
    worst = 0.0
    for seed in range(3):
        F = svd(random_unit_system(30, seed, cond=20.0))
        P = np.random.default_rng(seed + 50).standard_normal((30, 10))
        for beta, eta in ((0.5, 0.0), (1.0, 1.0), (1.0, 0.0)):
            K = fap_constant(P, F, beta, eta).K
            ref = _fap_oracle(P, F, beta, eta)
            worst = max(worst, np.max(np.abs(K - ref) / np.maximum(np.abs(ref), 1e-12)))
    ok = not bad and worst <= 1e-8
    verdict(capsys, 4, ok, f"builders checked={checked} violations={bad} oracle rel err={worst:.1e}")


def test_criterion_05_block_fuzz(capsys):
    t0 = time.perf_counter()
    res = block_bound_fuzz(10_000, seed=0)
    elapsed = time.perf_counter() - t0
    v = res["violations"]
    verdict(capsys, 5, v["ab_cd"] == 0,
            f"ab_cd violations={v['ab_cd']} ac_bd violations={v['ac_bd']} "
            f"worst excess={res['worst_relative_excess']} time={elapsed:.1f}s")


STABILITY_CONFIGS = [(d, n, i, r) for d in ("upwind_fv", "supg") for n in (8, 12)
                     for i, r in (("classical", "lair"), ("laip", "lair"), ("svd", "svd"),
                                  ("classical", "classical_t"), ("svd", "lair"))]


def test_criterion_06_stability(capsys):
    certified, bad = 0, []
    for disc, n, interp, restrict in STABILITY_CONFIGS:
        P, R, F = _pair(disc, n, interp, restrict)
        for beta in (1.0, 1.5):
            _, dec = select_k(P, R, F, beta, beta, return_decomposition=True)
            if dec is None:
                continue
            rep = stability_bound(dec)
            certified += 1
            if not rep.measured_Pi_QA**2 <= rep.C_Pi_bound + 1e-6:
                bad.append((disc, n, interp, restrict, beta, rep.measured_Pi_QA**2, rep.C_Pi_bound))
    # hand example: block eta0 from a 2x2 SVD, not from the closed form
    sk, K, s1 = 0.1, 4.0, 0.9
    Kh = K / (1 - sk**2 * K)
    d2 = sk * Kh
    bc = math.sqrt(sk * Kh)
    eta0 = np.linalg.svd(np.array([[1 - d2, -bc], [-bc, s1]]), compute_uv=False)[-1] ** 2
    expected = (1 + sk * Kh) ** 2 / eta0
    got = stability_constants(sk, Kh, Kh, s1, 1.0, 1.0)["C_Pi"]
    rel = abs(got - expected) / expected
    ok = certified > 0 and not bad and rel <= 1e-10
    verdict(capsys, 6, ok, f"certified={certified} violations={bad} hand C_Pi={got:.6g} rel err={rel:.1e}")


def _pencil_oracle(P, R, F):
    A = F.reconstruct()
    _, s, Vt = scipy.linalg.svd(R.T @ A @ P)
    H = Vt.T @ np.diag(s) @ Vt
    _, sa, Vat = scipy.linalg.svd(A)
    G = P.T @ (Vat.T @ np.diag(sa) @ Vat) @ P
    lam = scipy.linalg.eigh(0.5 * (H + H.T), 0.5 * (G + G.T), eigvals_only=True)
    return lam[0], lam[-1]


def test_criterion_07_equivalence(capsys):
    certified, bad, worst = 0, [], 0.0
    for disc, n, interp, restrict in STABILITY_CONFIGS:
        P, R, F = _pair(disc, n, interp, restrict)
        _, dec = select_k(P, R, F, return_decomposition=True)
        eq = inner_product_equivalence(P, R, F, decomp=dec)
        lo, hi = _pencil_oracle(P, R, F)
        worst = max(worst, abs(eq.c0_measured - lo) / lo, abs(eq.c1_measured - hi) / hi)
        if eq.certified:
            certified += 1
            chain = (eq.c0_bound, min(eq.c0_measured, eq.ratio_min),
                     max(eq.c1_measured, eq.ratio_max), eq.c1_bound)
            if not (chain[0] <= chain[1] * (1 + 1e-6) and chain[2] <= chain[3] * (1 + 1e-6)):
                bad.append((disc, n, interp, restrict, chain))
    ok = certified > 0 and not bad and worst <= 1e-8
    verdict(capsys, 7, ok, f"certified={certified} violations={bad} oracle rel err={worst:.1e}")


def test_criterion_08_convergence(capsys):
    t0 = time.perf_counter()
    A = generate(ProblemSpec(n=16))
    # (a) two-grid, exact SVD transfers, nu = nu_min of the certified pair
    an2 = TransferAnalyzer(interp="svd", restrict="svd", max_levels=2, coarsest_max=1).fit(A)
    lv = an2.levels_[0]
    nu_a = an2.wcycle_["nu_min"]
    bound_a = two_grid_bound(max(lv["C_Pi_bound"], 1.0), lv["K_P_beta_1"], nu_a)
    h2 = an2.hierarchy_
    F = h2.levels[0].factorization()
    rho_a = operator_norm_weighted(error_propagation_matrix(h2, nu_a, cycle_kind="two_grid"), F.qa())
    ok_a = rho_a <= bound_a
    # (b) three-level W-cycle
    an3 = TransferAnalyzer(interp="svd", restrict="svd", max_levels=3, coarsest_max=1).fit(A)
    w = an3.wcycle_
    nu_b = w["nu_min"]
    est = NSAMGSolver("svd", "svd", nu=nu_b, mu=2, max_levels=3, coarsest_max=1).fit(A)
    rho_b = est.asymptotic_rate()
    ok_b = w["certified"] and len(est.hierarchy_) == 3 and rho_b <= w["rho_bound"] + 1e-6
    # (c) V-cycle, reported only
    v = NSAMGSolver("classical", "lair", nu=2, mu=1, coarsest_max=20).fit(A)
    rho_c = v.asymptotic_rate()
    elapsed = time.perf_counter() - t0
    ok = ok_a and ok_b and np.isfinite(rho_c) and elapsed < 300
    verdict(capsys, 8, ok, f"(a) nu={nu_a} rho={rho_a:.3e} bound={bound_a:.3e}; "
            f"(b) levels={est.hierarchy_.sizes} nu={nu_b} rho={rho_b:.3e} bound={w['rho_bound']:.3e}; "
            f"(c) V-cycle rho={rho_c:.3f}; time={elapsed:.1f}s")


def test_criterion_09_trends(capsys):
    n = 20
    s = system("upwind_fv", n)
    F = s.factorization()
    P, _, _ = builders("upwind_fv", n)
    m = max(1, int(round(0.1 * F.n)))
    k_classical = fap_constant(P["classical"], F, 1.0, 1.0).K[:m].max()
    k_laip = fap_constant(P["laip"], F, 1.0, 1.0).K[:m].max()
    ok_a = k_classical > k_laip
    Pc, Rl = config_pair(s, "classical", "lair")
    pg = measure_projection(Pc, Rl, F, "QA").operator_norm
    try:
        gal = measure_projection(Pc, Pc, F, "QA").operator_norm
    except SingularCoarseOperator:
        gal = math.inf
    ok_b = math.isfinite(pg) and (not math.isfinite(gal) or pg < gal)
    verdict(capsys, 9, ok_a and ok_b,
            f"(a) SAP max over smallest 10%: classical={k_classical:.6g} laip={k_laip:.6g} "
            f"(max |P_classical - P_laip| = {np.abs(P['classical'] - P['laip']).max():.1e}); "
            f"(b) ||Pi||_QA Petrov-Galerkin={pg:.6f} Galerkin={gal:.6f}")


def test_criterion_10_determinism(capsys, tmp_path):
    names = ("fap_constants.csv", "projection_norms.csv", "theory.json")
    for d in ("first", "second"):
        assert main(["analyze", "--n", "8", "--seed", "7", "--out", str(tmp_path / d),
                     "--formats", "csv", "json"]) == 0
    same = {nm: (tmp_path / "first" / nm).read_bytes() == (tmp_path / "second" / nm).read_bytes()
            for nm in names}
    verdict(capsys, 10, all(same.values()), f"byte-identical: {same}")
