"""Command-line front end: ``browndim {simulate,estimate,decide,oracle,experiment}``.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.
Any flag may also be given in a ``key = value`` file passed with
``--config``; flags on the command line take precedence.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys

import numpy as np

from . import __version__
from .deciders import RULES, ThresholdSchedule, ci_test, ci_pairs, decide
from .estimators import build_panel, panel_lbar_csv, panel_z_csv
from .experiment import ExperimentPlan, power_estimate, quantile_table, rate_check, replicate
from .oracle import CoeffPath, l_true, lbar_true, rank_true
from .pathdata import FLOAT_FMT, load_csv, save_csv, subsample
from .simulator import DEFAULT_H, MODEL_NAMES, ModelConfigError, make_model, simulate_euler


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- value parsers -------------------------------------------------------------

def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _matrix(text: str) -> list[list[float]]:
    """``"1,0;0,1"`` -> ``[[1, 0], [0, 1]]``."""
    rows = [r for r in str(text).split(";") if r.strip()]
    return [[float(x) for x in r.split(",")] for r in rows]


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


def _pairs(text: str) -> list[tuple[int, int]]:
    """``"1:1,1:2"`` -> ``[(1, 1), (1, 2)]``."""
    out = []
    for item in str(text).split(","):
        if item.strip():
            a, b = item.split(":")
            out.append((int(a), int(b)))
    return out


def read_config(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, keys may use ``-`` or ``_``."""
    cfg = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg[key.replace("-", "_")] = value
    return cfg


# -- parser --------------------------------------------------------------------

_MODEL_FLAGS = {
    "rho": float, "sigma1": float, "sigma2": float, "r1": float, "r2": float,
    "preset": int, "eta": float, "theta": float,
    "beta": _floats, "K": _floats, "alpha_coef": _floats, "nu": _floats, "mu": _floats,
    "Sigma": _matrix, "sigma": _matrix, "a": _floats, "x0": _floats,
}
_MODEL_KEYS = {"alpha_coef": "alpha"}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", help="output file or directory (default: stdout)")
    p.add_argument("--config", help="key = value file supplying defaults for any flag")


def _add_model(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=MODEL_NAMES, default="sv2d")
    for name, conv in _MODEL_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        g.add_argument(flag, dest=name, type=conv, default=None)
    g.add_argument("--T", type=float, default=10.0, help="horizon")
    g.add_argument("--h", type=float, default=DEFAULT_H, help="Euler step")


def _add_rule(p: argparse.ArgumentParser, rho_flags=("--rho-n",)) -> None:
    # in `experiment` --rho is the sv2d correlation, so the threshold is --rho-n there
    g = p.add_argument_group("decision rule")
    g.add_argument("--rule", choices=sorted(RULES) + ["ci"], default="relative")
    g.add_argument(*rho_flags, dest="rho_n", type=float, default=None,
                   help="fixed threshold rho_n (default 0.01)")
    g.add_argument("--c", dest="sched_c", type=float, default=None,
                   help="power schedule rho_n = c n^-theta")
    g.add_argument("--theta-exp", dest="sched_theta", type=float, default=0.25)
    g.add_argument("--zero-clause", choices=("exact", "absolute"), default="exact")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="browndim", description="Brownian-dimension estimation toolkit")
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("simulate", help="simulate a catalog model and write the observed path")
    _add_common(p)
    _add_model(p)
    p.add_argument("--n", type=int, default=1000, help="observations kept")
    p.add_argument("--coeff-out", help="also write c_s on the fine grid")

    p = sub.add_parser("estimate", help="Lbar, xi and Z statistics of a path CSV")
    _add_common(p)
    p.add_argument("--in", dest="input", required=False)
    p.add_argument("--t", type=_floats, default=None, help="evaluation time(s), comma separated")
    p.add_argument("--rmax", type=int, default=None)
    p.add_argument("--z", type=_pairs, default=[], help="Z pairs, e.g. 1:1,1:2")
    p.add_argument("--z-out", help="file for the Z table")

    p = sub.add_parser("decide", help="choose the explicative dimension of a path CSV")
    _add_common(p)
    p.add_argument("--in", dest="input", required=False)
    p.add_argument("--t", type=float, default=None)
    _add_rule(p, ("--rho", "--rho-n"))
    p.add_argument("--r", type=int, default=2, help="order tested by the ci rule")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.05)

    p = sub.add_parser("oracle", help="true integrals from a coefficient CSV or a fresh simulation")
    _add_common(p)
    _add_model(p)
    p.add_argument("--coeff-in", help="coefficient CSV (time,c11,c12,...)")
    p.add_argument("--t", type=_floats, default=None)

    p = sub.add_parser("experiment", help="replicated runs: quantile, power and rate tables")
    _add_common(p)
    _add_model(p)
    _add_rule(p)
    p.add_argument("--n", type=_ints, default=[1000], help="observation counts, comma separated")
    p.add_argument("--times", type=_floats, default=None, help="evaluation times (default 2..10)")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--true-r", type=int, default=None, help="true dimension for power.csv")
    p.add_argument("--eps", type=float, default=None, help="discard reps with oracle Lbar(s)_t < eps t")
    p.add_argument("--rate-r", type=int, default=None, help="write rate.csv for this order")
    p.add_argument("--no-oracle", action="store_true")
    return top


def parse(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        cfg = read_config(args.config)
        sp = parser._subparsers._group_actions[0].choices[args.command]
        dests = {a.dest: a for a in sp._actions}
        for a in sp._actions:
            for opt in a.option_strings:
                dests.setdefault(opt.lstrip("-").replace("-", "_"), a)
        defaults = {}
        for key, value in cfg.items():
            if key not in dests or key in ("help", "config"):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            action = dests[key]
            key = action.dest
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                conv = action.type or str
                try:
                    defaults[key] = conv(value)
                except ValueError as exc:
                    raise UsageError(f"bad value for {key}: {exc}") from exc
                if action.choices is not None and defaults[key] not in action.choices:
                    raise UsageError(f"{key} must be one of {list(action.choices)}")
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# -- plumbing ------------------------------------------------------------------

def _model(args):
    params = {}
    for name in _MODEL_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            params[_MODEL_KEYS.get(name, name)] = v
    try:
        return make_model(args.model, **params)
    except ModelConfigError as exc:
        raise UsageError(str(exc)) from exc


def _schedule(args) -> ThresholdSchedule:
    try:
        if args.sched_c is not None:
            return ThresholdSchedule("power", c=args.sched_c, theta=args.sched_theta)
        return ThresholdSchedule("fixed", rho=0.01 if args.rho_n is None else args.rho_n)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _need_input(args):
    if not args.input:
        raise UsageError("--in is required")
    return load_csv(args.input)


def coeff_csv(coeffs, h: float) -> str:
    """``time,c11,c12,...`` with the upper triangle of each ``c`` in row-major order."""
    c = np.asarray(coeffs)
    d = c.shape[1]
    iu = np.triu_indices(d)
    buf = io.StringIO()
    buf.write(",".join(["time"] + [f"c{i + 1}{j + 1}" for i, j in zip(*iu)]) + "\n")
    flat = np.column_stack([np.arange(len(c)) * h, c[:, iu[0], iu[1]]])
    np.savetxt(buf, flat, delimiter=",", fmt=FLOAT_FMT)
    return buf.getvalue()


def load_coeff_csv(path: str) -> CoeffPath:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    m = len(header) - 1
    d = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if header[0] != "time" or d * (d + 1) // 2 != m or data.shape[1] != m + 1:
        raise ValueError(f"{path}: not a coefficient CSV")
    if len(data) < 2:
        raise ValueError(f"{path}: need at least two rows")
    iu = np.triu_indices(d)
    c = np.zeros((len(data), d, d))
    c[:, iu[0], iu[1]] = data[:, 1:]
    c[:, iu[1], iu[0]] = data[:, 1:]
    return CoeffPath(h=float(data[1, 0] - data[0, 0]), c=c)


# -- subcommands -----------------------------------------------------------------

def cmd_simulate(args) -> None:
    model = _model(args)
    res = simulate_euler(model, args.T, args.h, seed=args.seed, record_coeffs=bool(args.coeff_out))
    path = subsample(res.path, args.n)
    if args.out:
        save_csv(path, args.out)
    else:
        save_csv(path, sys.stdout)
    if args.coeff_out:
        _emit(coeff_csv(res.coeffs, args.h), args.coeff_out)


def cmd_estimate(args) -> None:
    path = _need_input(args)
    panel = build_panel(path, times=args.t, rmax=args.rmax, z_pairs=args.z)
    _emit(panel_lbar_csv(panel), args.out)
    if args.z:
        if args.z_out:
            _emit(panel_z_csv(panel), args.z_out)
        elif args.out:
            raise UsageError("--z with --out needs --z-out")
        else:
            sys.stdout.write(panel_z_csv(panel))


def cmd_decide(args) -> None:
    path = _need_input(args)
    t = path.T if args.t is None else args.t
    if args.rule == "ci":
        panel = build_panel(path, times=[t], z_pairs=ci_pairs(args.r))
        report = ci_test(panel, args.r, t, args.eps, args.alpha)
    else:
        panel = build_panel(path, times=[t])
        rho = _schedule(args).value(path.n)
        kw = {"zero_clause": args.zero_clause} if args.rule in ("relative", "relative_sup") else {}
        report = decide(panel, t, args.rule, rho, **kw)
    _emit(report.to_text() + "\n", args.out)


def cmd_oracle(args) -> None:
    if args.coeff_in:
        cp = load_coeff_csv(args.coeff_in)
    else:
        model = _model(args)
        res = simulate_euler(model, args.T, args.h, seed=args.seed)
        cp = CoeffPath(args.h, res.coeffs)
    times = args.t or [cp.horizon]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "r", "lbar_true", "l_true", "rank_true"])
    for t in times:
        rk = rank_true(cp, t)
        for r in range(1, cp.d + 1):
            w.writerow([FLOAT_FMT % t, r, FLOAT_FMT % lbar_true(cp, r, t),
                        FLOAT_FMT % l_true(cp, r, t), rk])
    _emit(buf.getvalue(), args.out)


def cmd_experiment(args) -> None:
    model = _model(args)
    kw = {}
    if args.times is not None:
        kw["times"] = tuple(args.times)
    if args.rule == "ci":
        raise UsageError("experiment supports the threshold rules only")
    try:
        plan = ExperimentPlan(model=model, T=args.T, h=args.h, n_obs=tuple(args.n), reps=args.reps,
                              seed=args.seed, rule=args.rule, schedule=_schedule(args),
                              oracle=not args.no_oracle, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    store = replicate(plan, workers=args.workers)
    _emit(quantile_table(store).to_csv(), os.path.join(outdir, "quantiles.csv"))
    if args.true_r is not None:
        table = power_estimate(plan, true_r=args.true_r, eps=args.eps, store=store)
        _emit(table.to_csv(), os.path.join(outdir, "power.csv"))
    if args.rate_r is not None:
        table = rate_check(plan, args.rate_r, store=store)
        _emit(table.to_csv(), os.path.join(outdir, "rate.csv"))
    if store.diverged:
        print(f"{len(store.diverged)} replication(s) diverged and were excluded", file=sys.stderr)


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "decide": cmd_decide,
            "oracle": cmd_oracle, "experiment": cmd_experiment}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, OSError) as exc:
        print(f"browndim: error: {exc}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"browndim {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, OSError, RuntimeError, KeyError, IndexError) as exc:
        print(f"browndim {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
