"""Experiment runners behind the ``nsamg`` command line.

Each runner takes a :class:`RunConfig`, writes its files into ``config.out``
and returns the list of paths written. CSV files follow RFC 4180 with ``.``
as decimal separator; floats are written with ``repr`` so reruns are
byte-identical. JSON is written with sorted keys and non-finite values as
``null``.
"""

import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .estimators import analyze_pair, combine_levels
from .exceptions import ConfigError, InvalidSpec, NSAMGError, Stagnation
from .linalg import polar_q
from .problems import ProblemSpec, generate, prepare, read_matrix_market, write_matrix_market
from .solver import (INTERP_CHOICES, RESTRICT_CHOICES, _build_transfers, asymptotic_factor,
                     build_hierarchy, mu_cycle_solve, two_grid_solve)
from .theory import (SAP, SSAP, WAP, block_bounds, cgc_angle, fap_constant, measure_projection,
                     two_grid_bound)
from .transfer import (TransferPair, cf_split, classical_interp, counterexample_pair,
                       laip_interp, lair_restrict, q_pair_restrict, strength_graph, svd_transfer)

log = logging.getLogger(__name__)

COMMANDS = ("generate", "analyze", "solve", "sweep", "block-bound")
LOG_FLOOR = 1e-16
DISC_ALIASES = {"upwind": "upwind_fv", "upwind_fv": "upwind_fv", "supg": "supg"}


@dataclass
class RunConfig:
    """Everything one command needs; see ``nsamg --help`` for the meaning of each field."""

    command: str = "analyze"
    disc: str = "upwind"
    n: int = 8
    theta: float = 3.0 * math.pi / 16.0
    tau: float = 1.0
    matrix: str = None
    interp: str = "classical"
    restrict: str = "lair"
    beta: float = 1.0
    gamma: float = 1.0
    nu: int = 1
    mu: int = 2
    levels: int = 2
    theta_s: float = 0.25
    degree: int = 1
    seed: int = 0
    out: str = "nsamg_out"
    diag: bool = True
    tol: float = 1e-10
    max_iters: int = 200
    n_list: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    fuzz: int = 0
    block: list = field(default_factory=list)
    formats: list = field(default_factory=lambda: ["csv", "json", "svg"])

    def validate(self):
        if self.command not in COMMANDS:
            raise InvalidSpec(f"unknown command {self.command!r}")
        if self.disc not in DISC_ALIASES:
            raise InvalidSpec(f"disc must be 'upwind' or 'supg', got {self.disc!r}")
        if self.interp not in INTERP_CHOICES:
            raise InvalidSpec(f"interp must be one of {INTERP_CHOICES}, got {self.interp!r}")
        if self.restrict not in RESTRICT_CHOICES:
            raise InvalidSpec(f"restrict must be one of {RESTRICT_CHOICES}, got {self.restrict!r}")
        if self.degree not in (1, 2):
            raise InvalidSpec(f"degree must be 1 or 2, got {self.degree}")
        if self.nu < 0 or self.mu < 1 or self.levels < 1:
            raise InvalidSpec("need nu >= 0, mu >= 1 and levels >= 1")
        if self.command == "sweep":
            if not self.n_list:
                raise InvalidSpec("sweep needs --n-list")
            if list(self.n_list) != sorted(self.n_list):
                raise InvalidSpec("--n-list must be ascending")
        if self.command == "block-bound" and not self.fuzz and len(self.block) != 6:
            raise InvalidSpec("block-bound needs six values a0 a1 b c d0 d1 or --fuzz N")
        bad = set(self.formats) - {"csv", "json", "svg"}
        if bad:
            raise InvalidSpec(f"unknown formats {sorted(bad)}")
        return self

    def problem(self, n=None):
        return ProblemSpec(disc=DISC_ALIASES[self.disc], n=self.n if n is None else n,
                           theta=self.theta, tau=self.tau, seed=self.seed)


# -- output helpers -------------------------------------------------------------

class _Outputs:
    """Collects written files; removes them all if the run fails."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.paths = []

    def __enter__(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        if not os.access(self.dir, os.W_OK):
            raise ConfigError(f"output directory {self.dir} is not writable")
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and not issubclass(exc_type, Stagnation):
            for p in self.paths:
                p.unlink(missing_ok=True)
        return False

    def _write(self, name, text):
        path = self.dir / name
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=f".{name}.")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
        self.paths.append(path)
        return path

    def csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
        return self._write(name, buf.getvalue())

    def json(self, name, obj):
        return self._write(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def text(self, name, text):
        return self._write(name, text)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ("nan" if math.isnan(v) else
                                                        ("inf" if v > 0 else "-inf"))
    if v is None:
        return ""
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def svg_plot(title, x, series, markers=None, secondary=None, xlabel="index i",
             ylabel="constant", width=640, height=400):
    """Log-y line plot as an SVG 1.1 string.

    Parameters
    ----------
    x : array_like
    series : dict of name -> array_like
        One polyline each, values floored at ``LOG_FLOOR``.
    markers : dict of name -> float, optional
        Horizontal dashed lines on the primary axis.
    secondary : (name, array_like), optional
        Dotted polyline on a linear right-hand axis (used for sigma_i).
    """
    markers = markers or {}
    x = np.asarray(x, dtype=float)
    ys = {k: np.maximum(np.asarray(v, dtype=float), LOG_FLOOR) for k, v in series.items()}
    for v in ys.values():
        if v.shape != x.shape:
            raise InvalidSpec("series lengths must match x")
    allv = np.concatenate([v for v in ys.values()] +
                          [np.maximum(np.array(list(markers.values()), dtype=float), LOG_FLOOR)])
    allv = allv[np.isfinite(allv)]
    lo = math.floor(math.log10(allv.min())) if allv.size else -16
    hi = math.ceil(math.log10(allv.max())) if allv.size else 0
    if hi <= lo:
        hi = lo + 1
    ml, mr, mt, mb = 70, 70, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    x0, x1 = float(x.min()), float(x.max()) if x.size else 1.0
    if x1 <= x0:
        x1 = x0 + 1.0

    def px(xv):
        return ml + (xv - x0) / (x1 - x0) * pw

    def py(yv):
        return mt + (hi - math.log10(yv)) / (hi - lo) * ph

    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
           f'<title>{_esc(title)}</title>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for e in range(lo, hi + 1):
        yy = py(10.0**e)
        out.append(f'<text x="{ml - 6}" y="{yy:.2f}" font-size="10" text-anchor="end">1e{e}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" font-size="12" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2:.1f}" font-size="12" transform="rotate(-90 14 {mt + ph / 2:.1f})" '
               f'text-anchor="middle">{_esc(ylabel)}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="24" font-size="14" text-anchor="middle">{_esc(title)}</text>')
    for j, (name, y) in enumerate(ys.items()):
        col = colors[j % len(colors)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline data-series="{_esc(name)}" points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        out.append(f'<text x="{ml + 8}" y="{mt + 14 + 14 * j}" font-size="11" fill="{col}">{_esc(name)}</text>')
    for j, (name, val) in enumerate(markers.items()):
        col = colors[j % len(colors)]
        yy = py(max(float(val), LOG_FLOOR)) if math.isfinite(val) else mt
        out.append(f'<line data-marker="{_esc(name)}" x1="{ml}" y1="{yy:.2f}" x2="{ml + pw}" y2="{yy:.2f}" '
                   f'stroke="{col}" stroke-dasharray="6,3"/>')
    if secondary is not None:
        name, s = secondary
        s = np.asarray(s, dtype=float)
        smax = float(s.max()) if s.size and s.max() > 0 else 1.0
        pts = " ".join(f"{px(a):.2f},{mt + (1 - b / smax) * ph:.2f}" for a, b in zip(x, s))
        out.append(f'<polyline data-series="{_esc(name)}" points="{pts}" fill="none" stroke="gray" '
                   f'stroke-dasharray="2,2"/>')
        out.append(f'<text x="{ml + pw + 6}" y="{mt + 10}" font-size="10">{_esc(name)} (max {smax:.3g})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s):
    return (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


# -- problem and transfer setup -------------------------------------------------

def load_system(config, n=None):
    """Normalized system for the configured problem or matrix file."""
    if config.matrix:
        A = read_matrix_market(config.matrix)
    else:
        A = generate(config.problem(n))
    return prepare(A, diag=config.diag)


def _dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def level0_builders(system, theta_s=0.25, degree=1):
    """Interpolation and restriction candidates on the finest level.

    Returns ``(P_builders, R_builders, cf)``; all operators dense.
    """
    A = system.A
    F = system.factorization()
    S = strength_graph(A, theta_s)
    cf = cf_split(S)
    nc = cf.n_c
    P = {"classical": _dense(classical_interp(A, S, cf)),
         "laip": _dense(laip_interp(A, strength_graph(A.T.tocsr(), theta_s), cf, degree)),
         "svd": svd_transfer(F, nc, "right")}
    R = {"classical_t": P["classical"],
         "lair": _dense(lair_restrict(A, S, cf, degree)),
         "svd": svd_transfer(F, nc, "left")}
    return P, R, cf


def config_pair(system, interp, restrict, theta_s=0.25, degree=1):
    """The configured (P, R) pair on the finest level, dense."""
    pair = _build_transfers(system.A, system.factorization(), interp, restrict, theta_s, degree, 0.5)
    if pair is None:
        raise InvalidSpec("no coarse points selected; nothing to analyze")
    return _dense(pair.P), _dense(pair.R)


# -- analyze ------------------------------------------------------------------------

def run_analyze(config):
    """FAP constants, projection norms and theory constants on the finest level."""
    config.validate()
    system = load_system(config)
    F = system.factorization()
    FT = F.transpose()
    log.info("analyze: n=%d, %s + %s", F.n, config.interp, config.restrict)
    Pb, Rb, cf = level0_builders(system, config.theta_s, config.degree)
    P, R = config_pair(system, config.interp, config.restrict, config.theta_s, config.degree)
    sigma = F.sigma

    fap_rows, fap_summary, fap_series = [], {}, {}
    for side, builders, FF in (("P", Pb, F), ("R", Rb, FT)):
        for name, M in builders.items():
            reps = {lab: fap_constant(M, FF, *pw) for lab, pw in (("wap", WAP), ("sap", SAP), ("ssap", SSAP))}
            for i in range(F.n):
                fap_rows.append((side, name, i, float(sigma[i]), float(reps["wap"].K[i]),
                                 float(reps["sap"].K[i]), float(reps["ssap"].K[i])))
            fap_summary[f"{side}:{name}"] = {lab: {"uniform_K": r.uniform_K, "sup_K": r.sup_K}
                                              for lab, r in reps.items()}
            fap_series[(side, name)] = reps

    Q = polar_q(F)
    variants = {"orthogonal": (P, q_pair_restrict(P, Q)),
                "galerkin": (P, P),
                "petrov_galerkin": (P, R)}
    proj_rows, proj_summary, proj_series = [], {}, {}
    for vname, (Pv, Rv) in variants.items():
        try:
            for metric in ("l2", "QA"):
                rep = measure_projection(Pv, Rv, F, metric)
                proj_series[(vname, metric)] = rep
                for i in range(F.n):
                    proj_rows.append((vname, metric, i, float(sigma[i]), float(rep.amplification[i]),
                                      float(rep.operator_norm)))
            proj_summary[vname] = {"l2": proj_series[(vname, "l2")].operator_norm,
                                   "QA": proj_series[(vname, "QA")].operator_norm}
        except NSAMGError as exc:
            proj_summary[vname] = {"error": f"{type(exc).__name__}: {exc}"}

    theory = analyze_pair(P, R, F, config.beta, config.gamma)
    try:
        ang = cgc_angle(P, R, F)
        theory["cgc_angle"] = {"theta_min": ang.theta_min, "inv_sin": 1.0 / ang.sin_theta,
                               "norm_Pi_QA": ang.norm_Pi, "norm_I_minus_Pi_QA": ang.norm_I_minus_Pi}
    except NSAMGError as exc:
        theory["cgc_angle"] = {"error": f"{type(exc).__name__}: {exc}"}
    wc = combine_levels([theory], config.beta)
    theory["wcycle"] = wc
    if theory["certified"] and config.beta > 0.5 and config.nu >= 1:
        theory["two_grid_bound"] = two_grid_bound(max(theory["C_Pi_bound"], 1.0), theory["K_P_beta_1"],
                                                  config.nu, config.beta)
    else:
        theory["two_grid_bound"] = None
    theory["nu_min"] = wc["nu_min"]
    theory["rho_bound"] = wc["rho_bound"]
    theory["block_bound_variant"] = _variant_note(theory.get("stability_block"))
    doc = {"config": _config_dict(config), "n": F.n, "n_c": int(P.shape[1]), "cf_coarse": cf.n_c,
           "scale": system.scale, "theory": theory, "fap_constants": fap_summary,
           "projection_norms": proj_summary}

    with _Outputs(config.out) as out:
        if "csv" in config.formats:
            out.csv("fap_constants.csv", ("side", "builder", "vector_index", "sigma", "K_wap", "K_sap", "K_ssap"),
                    fap_rows)
            out.csv("projection_norms.csv", ("variant", "metric", "vector_index", "sigma", "amplification",
                                             "operator_norm"), proj_rows)
        if "json" in config.formats:
            out.json("theory.json", doc)
        if "svg" in config.formats:
            idx = np.arange(F.n)
            for side in ("P", "R"):
                for lab in ("wap", "sap", "ssap"):
                    names = [nm for (sd, nm) in fap_series if sd == side]
                    series = {nm: fap_series[(side, nm)][lab].K for nm in names}
                    marks = {nm: fap_series[(side, nm)][lab].uniform_K for nm in names}
                    out.text(f"fap_{side}_{lab}.svg",
                             svg_plot(f"{lab.upper()} constants, {side} side", idx, series, marks,
                                      secondary=("sigma_i", sigma)))
            for metric in ("l2", "QA"):
                series = {v: proj_series[(v, metric)].amplification for v in variants if (v, metric) in proj_series}
                marks = {v: proj_series[(v, metric)].operator_norm for v in series}
                out.text(f"projection_{metric}.svg",
                         svg_plot(f"projection amplification ({metric})", idx, series, marks,
                                  secondary=("sigma_i", sigma), ylabel="||Pi v_i|| / ||v_i||"))
        return out.paths


def _variant_note(block):
    note = {"shipped": "ab_cd",
            "ac_bd_variant": "discriminant (a^2+b^2-c^2-d^2)^2 + 4(ac+bd)^2",
            "ab_cd_variant": "discriminant (a^2+c^2-b^2-d^2)^2 + 4(ab+cd)^2"}
    if block and all(block.get(k) is not None for k in ("a0", "b", "c", "d0")):
        try:
            args = (block["a0"], block["a0"], block["b"], block["c"], block["d0"], block["d0"])
            note["eta0_ab_cd"] = block_bounds(*args, pairing="ab_cd")[0]
            note["eta0_ac_bd"] = block_bounds(*args, pairing="ac_bd")[0]
        except NSAMGError as exc:
            note["error"] = f"{type(exc).__name__}: {exc}"
    return note


def _config_dict(config):
    d = asdict(config)
    d.pop("out", None)
    return d


# -- solve ---------------------------------------------------------------------------

def _hierarchy_bounds(h, config):
    """Per-level theory and the bound that applies to the configured cycle."""
    per = []
    for lvl in h.levels[:-1]:
        per.append(analyze_pair(lvl.P, lvl.R, lvl.factorization(), config.beta, config.gamma))
    info = {"levels": per, "rho_bound": None, "bound_kind": None, "nu_min": None}
    if len(h.levels) == 2:
        lv = per[0]
        if lv["certified"] and config.nu >= 1 and config.beta > 0.5:
            info["rho_bound"] = two_grid_bound(max(lv["C_Pi_bound"], 1.0), lv["K_P_beta_1"],
                                               config.nu, config.beta)
            info["bound_kind"] = "two_grid_squared"
    else:
        wc = combine_levels(per, config.beta)
        info["wcycle"] = wc
        info["nu_min"] = wc["nu_min"]
        if wc["certified"] and config.mu == 2 and config.nu >= wc["nu_min"]:
            info["rho_bound"] = wc["rho_bound"]
            info["bound_kind"] = "wcycle"
    return info


def run_solve(config):
    """Solve ``A x = A x_true`` for a seeded ``x_true`` and record the histories.

    On stagnation the partial history is written before the exception
    propagates.
    """
    config.validate()
    system = load_system(config)
    h = build_hierarchy(system, config.interp, config.restrict, config.theta_s, config.degree,
                        max_levels=config.levels, coarsest_max=1 if config.levels > 1 else 40)
    rng = np.random.default_rng(config.seed)
    x_true = rng.standard_normal(system.n)
    b = system.A @ x_true
    kind = "two_grid" if len(h.levels) == 2 else "mu_cycle"
    summary = {"config": _config_dict(config), "level_sizes": h.sizes,
               "coarsening_ratios": [h.sizes[i + 1] / h.sizes[i] for i in range(len(h.sizes) - 1)],
               "nu": config.nu, "mu": config.mu if kind == "mu_cycle" else 1, "cycle": kind}
    with _Outputs(config.out) as out:
        try:
            if kind == "two_grid":
                rep = two_grid_solve(h, b, config.nu, config.tol, config.max_iters, x_true=x_true)
            else:
                rep = mu_cycle_solve(h, b, config.nu, config.mu, config.tol, config.max_iters, x_true=x_true)
        except Stagnation as exc:
            _write_history(out, exc.report)
            summary.update(status="stagnation", rho_measured=exc.report.rho_estimate,
                           iterations=exc.report.iterations)
            out.json("summary.json", summary)
            raise
        _write_history(out, rep)
        summary.update(status="converged" if rep.converged else "max_iters", iterations=rep.iterations,
                       rho_measured=rep.rho_estimate)
        if len(h.levels) > 1 and config.nu >= 1:
            asym = asymptotic_factor(h, config.nu, config.mu, kind, iters=30, seed=config.seed)
            summary["rho_asymptotic"] = asym.rho_estimate
            if system.n <= 1200:
                info = _hierarchy_bounds(h, config)
                summary["rho_bound"] = info["rho_bound"]
                summary["bound_kind"] = info["bound_kind"]
                summary["nu_min"] = info["nu_min"]
                summary["certified_levels"] = [lv["certified"] for lv in info["levels"]]
                if info["rho_bound"] is not None:
                    r = asym.rho_estimate ** 2 if info["bound_kind"] == "two_grid_squared" else asym.rho_estimate
                    summary["rho_compared"] = r
                    summary["rho_within_bound"] = bool(r <= info["rho_bound"] + 1e-6)
        out.json("summary.json", summary)
        return out.paths


def _write_history(out, rep):
    res = rep.residual_history
    err = rep.error_history_QA or [None] * len(res)
    out.csv("convergence.csv", ("iter", "l2_residual", "qa_error"),
            [(i, float(r), None if e is None else float(e)) for i, (r, e) in enumerate(zip(res, err))])


# -- sweep ---------------------------------------------------------------------------

SWEEP_HEADER = ("n", "interp", "restrict", "K_P_wap", "K_P_sap", "K_P_ssap", "K_R_wap", "K_R_sap",
                "K_R_ssap", "norm_Pi_QA", "C_Pi", "c1_over_c0", "nu_min", "rho_measured", "error")


def _sweep_row(config, n, pair, system):
    F = system.factorization()
    if pair == "counterexample":
        nc = max(1, F.n // 2)
        cp = counterexample_pair(F, nc, 1)
        P, R = cp.P, cp.R
        interp, restrict = "counterexample", "counterexample"
    else:
        interp, restrict = pair.split("+")
        P, R = config_pair(system, interp, restrict, config.theta_s, config.degree)
    row = {"n": n, "interp": interp, "restrict": restrict}
    for side, M, FF in (("P", P, F), ("R", R, F.transpose())):
        for lab, pw in (("wap", WAP), ("sap", SAP), ("ssap", SSAP)):
            row[f"K_{side}_{lab}"] = fap_constant(M, FF, *pw).uniform_K
    th = analyze_pair(P, R, F, config.beta, config.gamma)
    row["norm_Pi_QA"] = th["norm_Pi_QA"]
    row["C_Pi"] = th["C_Pi_bound"]
    row["c1_over_c0"] = th["c1_measured"] / th["c0_measured"]
    row["nu_min"] = combine_levels([th], config.beta)["nu_min"]
    h = build_hierarchy(system, transfers=TransferPair(R=R, P=P, builder_R=restrict, builder_P=interp),
                        max_levels=2, interp="classical", restrict="lair")
    row["rho_measured"] = asymptotic_factor(h, max(config.nu, 1), 1, "two_grid", iters=30,
                                            seed=config.seed).rho_estimate
    return row


def run_sweep(config):
    """One row per ``(n, pair)``; a failing row is tagged and the sweep goes on."""
    config.validate()
    pairs = config.pairs or [f"{config.interp}+{config.restrict}"]
    rows = []
    for n in config.n_list:
        system = None
        for pair in pairs:
            try:
                # one normalized system (and its SVD) per size, shared by all pairs
                system = system or load_system(config, n)
                row = _sweep_row(config, n, pair, system)
                row["error"] = ""
            except NSAMGError as exc:
                log.info("sweep row n=%d %s failed: %s", n, pair, exc)
                ip, _, rs = pair.partition("+")
                row = {"n": n, "interp": ip, "restrict": rs or ip, "error": type(exc).__name__}
            rows.append(row)
    with _Outputs(config.out) as out:
        out.csv("sweep.csv", SWEEP_HEADER, [[r.get(k) for k in SWEEP_HEADER] for r in rows])
        return out.paths


# -- block bound ---------------------------------------------------------------------

def scalar_oracle(a, b, c, d):
    """Extreme squared singular values of ``[[a, -b], [-c, d]]``."""
    s = np.linalg.svd(np.array([[a, -b], [-c, d]], dtype=float), compute_uv=False)
    return float(s[-1] ** 2), float(s[0] ** 2)


def block_bound_table(a0, a1, b, c, d0, d1):
    rows = []
    for pairing in ("ab_cd", "ac_bd"):
        e0, e1 = block_bounds(a0, a1, b, c, d0, d1, pairing=pairing)
        rows.append((pairing, e0, e1))
    lo, hi = scalar_oracle(a0, b, c, d0)
    lo1, hi1 = scalar_oracle(a1, b, c, d1)
    return rows, (min(lo, lo1), max(hi, hi1))


def block_bound_fuzz(count, seed=0, rtol=1e-9):
    """Violation counts of the sandwich ``eta0 <= s_min^2 <= s_max^2 <= eta1`` per pairing.

    Samples scalar quadruples ``(a, b, c, d)`` with ``a d > b c`` and uses
    ``a0 = a1 = a``, ``d0 = d1 = d``. Both ends get an absolute slack of
    ``rtol * s_max^2``, the roundoff scale of the 2x2 problem.
    """
    rng = np.random.default_rng(seed)
    counts = {"ab_cd": 0, "ac_bd": 0}
    worst = {"ab_cd": 0.0, "ac_bd": 0.0}
    done = 0
    while done < count:
        a, b, c, d = np.exp(rng.uniform(-3.0, 3.0, 4))
        if a * d <= b * c * (1.0 + 1e-9):
            continue
        lo, hi = scalar_oracle(a, b, c, d)
        for pairing in counts:
            e0, e1 = block_bounds(a, a, b, c, d, d, pairing=pairing)
            excess = max(e0 - lo, hi - e1) / hi
            if excess > rtol:
                counts[pairing] += 1
            worst[pairing] = max(worst[pairing], excess)
        done += 1
    return {"samples": count, "violations": counts, "worst_relative_excess": worst}


def run_block_bound(config):
    """Return the stdout table for a single evaluation or a fuzz run."""
    config.validate()
    if config.fuzz:
        res = block_bound_fuzz(int(config.fuzz), config.seed)
        lines = [f"samples {res['samples']}",
                 "pairing     violations  worst_rel_excess"]
        for p in ("ab_cd", "ac_bd"):
            lines.append(f"{p:<11} {res['violations'][p]:>10d}  {res['worst_relative_excess'][p]:.3e}")
        return "\n".join(lines) + "\n", res
    a0, a1, b, c, d0, d1 = (float(v) for v in config.block)
    rows, (lo, hi) = block_bound_table(a0, a1, b, c, d0, d1)
    lines = ["pairing     eta0                   eta1                   sandwich"]
    res = {"oracle": (lo, hi), "pairings": {}}
    for pairing, e0, e1 in rows:
        ok = max(e0 - lo, hi - e1) <= 1e-9 * hi
        lines.append(f"{pairing:<11} {e0:<22.17g} {e1:<22.17g} {'ok' if ok else 'FLAGGED'}")
        res["pairings"][pairing] = {"eta0": e0, "eta1": e1, "ok": ok}
    lines.append(f"oracle      {lo:<22.17g} {hi:<22.17g}")
    return "\n".join(lines) + "\n", res


# -- generate ------------------------------------------------------------------------

def run_generate(config):
    """Write the configured problem as MatrixMarket."""
    config.validate()
    spec = config.problem()
    A = generate(spec)
    with _Outputs(config.out) as out:
        path = out.dir / f"{spec.disc}_n{spec.n}.mtx"
        write_matrix_market(path, A, comment=f"disc={spec.disc} n={spec.n} theta={spec.theta!r} tau={spec.tau!r}")
        out.paths.append(path)
        return out.paths
