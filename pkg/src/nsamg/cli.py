"""``nsamg`` command line: generate, analyze, solve, sweep, block-bound.

Configuration precedence is built-in defaults, then a ``key = value`` file
given with ``--config``, then explicit flags. Exit codes: 0 success, 2
configuration error, 3 numerical failure, 4 stagnation.
"""

import argparse
import logging
import sys
from dataclasses import fields

from .exceptions import ConfigError, NSAMGError, NumericalError, Stagnation
from .report import (RunConfig, run_analyze, run_block_bound, run_generate, run_solve,
                     run_sweep)
from .solver import INTERP_CHOICES, RESTRICT_CHOICES

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_STAGNATION = 0, 2, 3, 4

_LIST_KEYS = {"n_list": int, "pairs": str, "block": float, "formats": str}
_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(key, raw):
    """Convert a config-file string to the type of the RunConfig field."""
    if key not in {f.name for f in fields(RunConfig)}:
        raise ConfigError(f"unknown config key {key!r}")
    if key in _LIST_KEYS:
        conv = _LIST_KEYS[key]
        items = [s for s in raw.replace(",", " ").split() if s]
        try:
            return [conv(s) for s in items]
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    default = getattr(RunConfig(), key)
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"bad boolean for {key}: {raw!r}")
    if key == "matrix":
        return raw.strip() or None
    conv = type(default) if default is not None else str
    try:
        return conv(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys are allowed."""
    out = {}
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _coerce(key, val)
    return out


def _common(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="key = value file; flags override it")
    p.add_argument("--disc", choices=("upwind", "supg"), default=S)
    p.add_argument("--n", type=int, default=S, help="grid cells per side")
    p.add_argument("--theta", type=float, default=S, help="advection angle in radians")
    p.add_argument("--tau", type=float, default=S, help="SUPG stabilization factor")
    p.add_argument("--matrix", default=S, help="MatrixMarket file used instead of a generated problem")
    p.add_argument("--no-diag", dest="diag", action="store_false", default=S,
                   help="skip the D^{-1} scaling")
    p.add_argument("--interp", choices=INTERP_CHOICES, default=S)
    p.add_argument("--restrict", choices=RESTRICT_CHOICES, default=S)
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--gamma", type=float, default=S)
    p.add_argument("--nu", type=int, default=S, help="relaxation sweeps per level")
    p.add_argument("--mu", type=int, default=S, help="recursive coarse solves (2 = W-cycle)")
    p.add_argument("--levels", type=int, default=S)
    p.add_argument("--theta-s", dest="theta_s", type=float, default=S, help="strength threshold")
    p.add_argument("--degree", type=int, choices=(1, 2), default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--formats", nargs="+", choices=("csv", "json", "svg"), default=S)
    p.add_argument("-v", "--verbose", action="store_true", default=False)


def build_parser():
    parser = argparse.ArgumentParser(prog="nsamg", description="Nonsymmetric AMG transfer diagnostics and solver.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("generate", "write a test problem as MatrixMarket"),
                        ("analyze", "approximation, stability and equivalence constants"),
                        ("solve", "run the multilevel solver"),
                        ("sweep", "constants and rates over several grid sizes"),
                        ("block-bound", "2x2 block singular value bounds")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "solve":
            p.add_argument("--tol", type=float, default=argparse.SUPPRESS)
            p.add_argument("--max-iters", dest="max_iters", type=int, default=argparse.SUPPRESS)
        if name == "sweep":
            p.add_argument("--n-list", dest="n_list", type=int, nargs="+", default=argparse.SUPPRESS)
            p.add_argument("--pairs", nargs="+", default=argparse.SUPPRESS,
                           help="interp+restrict pairs, or 'counterexample'")
        if name == "block-bound":
            p.add_argument("block", type=float, nargs="*", metavar="a0 a1 b c d0 d1")
            p.add_argument("--fuzz", type=int, default=argparse.SUPPRESS, help="number of random samples")
    return parser


def make_config(argv):
    args = vars(build_parser().parse_args(argv))
    verbose = args.pop("verbose", False)
    values = {}
    if "config" in args:
        values.update(read_config_file(args.pop("config")))
    if args.get("block") == []:
        args.pop("block")
    values.update(args)
    return RunConfig(**values), verbose


RUNNERS = {"generate": run_generate, "analyze": run_analyze, "solve": run_solve, "sweep": run_sweep}


def main(argv=None):
    try:
        config, verbose = make_config(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    except ConfigError as exc:
        print(f"nsamg: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if config.command == "block-bound":
            text, _ = run_block_bound(config)
            sys.stdout.write(text)
        else:
            for path in RUNNERS[config.command](config):
                print(path)
    except ConfigError as exc:
        print(f"nsamg: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Stagnation as exc:
        print(f"nsamg: stagnation: {exc}", file=sys.stderr)
        return EXIT_STAGNATION
    except NumericalError as exc:
        print(f"nsamg: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NSAMGError as exc:
        print(f"nsamg: error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"nsamg: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
