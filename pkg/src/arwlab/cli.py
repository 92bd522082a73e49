"""Command-line entry point: ``arwlab <command> [flags]``.

Every command writes one table (CSV or JSON) preceded by ``#`` metadata
lines.  Flags may also come from a ``key=value`` file given with
``--config``; flags on the command line win, and ``ARW_SEED`` supplies the
default seed.  Exit codes: 0 success, 2 configuration error, 3 failed
``--check``.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import experiments as ex
from .lattice import FuelExhausted
from .stabilizer import DEFAULT_FUEL
from .stats import FAILURES, TRIALS, estimate_rho_star, mean_ci
from .tape import ModelParams

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3

SAMPLE_COLUMNS = ("replica_index", "value")
SUMMARY_COLUMNS = ("n_or_k", "mean", "ci_lo", "ci_hi", "n_samples")
DOMINANCE_COLUMNS = ("n", "m", "max_gap", "band", "verdict")

# resolved-config keys that cannot change a result and stay out of headers
NOT_IN_HEADER = ("out", "workers", "config", "format", "check")


class ConfigError(ValueError):
    def __init__(self, flag: str, message: str):
        super().__init__(f"--{flag}: {message}")
        self.flag = flag


@dataclass
class Table:
    columns: Sequence[str]
    rows: list
    extra: dict = field(default_factory=dict)   # summary values for the header
    ok: Optional[bool] = None                   # embedded check, if any


# -- value parsers -------------------------------------------------------------------

def int_list(text: str) -> list:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def float_list(text: str) -> list:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def pair_list(text: str) -> list:
    try:
        out = []
        for item in str(text).split(","):
            if item.strip():
                a, b = item.split(":")
                out.append((int(a), int(b)))
        return out
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected pairs like 5:5,20:30, got {text!r}")


def seed_value(text: str) -> int:
    v = int(str(text), 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


# -- commands ------------------------------------------------------------------------------

def _plan(cfg, kind, sizes) -> ex.ExperimentPlan:
    return ex.ExperimentPlan(kind, ModelParams(cfg.lam, cfg.p), sizes, cfg.replicas,
                             cfg.seed, cfg.fuel, cfg.workers)


def _summary_row(x, values):
    m, lo, hi = mean_ci(values)
    return [x, m, lo, hi, int(np.asarray(values).size)]


def cmd_sample_sn(cfg) -> Table:
    s = ex.run_sample_sn(_plan(cfg, ex.Kind.SAMPLE_SN, [cfg.n]))[cfg.n]
    rows = [[int(i), int(v)] for i, v in zip(s.index, s.values)]
    return Table(SAMPLE_COLUMNS, rows, {"exhausted": s.exhausted,
                                        "mean_over_n": s.dist.mean() / cfg.n})


def cmd_dd_run(cfg) -> Table:
    steps = cfg.steps if cfg.steps is not None else 2 * cfg.n
    s = ex.run_dd(_plan(cfg, ex.Kind.HOCKEY_CURVE, [cfg.n]), cfg.n, steps)
    rows = [[int(i), int(v)] for i, v in zip(s.index, s.values)]
    return Table(SAMPLE_COLUMNS, rows, {"steps": steps, "exhausted": s.exhausted,
                                        "mean_over_n": s.dist.mean() / cfg.n})


def cmd_hockey(cfg) -> Table:
    grid = ex.default_rho_grid(cfg.rho_max, cfg.rho_step)
    rows = ex.run_hockey(_plan(cfg, ex.Kind.HOCKEY_CURVE, [cfg.n]), grid)[cfg.n]
    ok = all(r.ci_lo <= r.x + 1e-12 for r in rows)   # Y_t <= t
    return Table(SUMMARY_COLUMNS, [[r.x, r.mean, r.ci_lo, r.ci_hi, r.n_samples] for r in rows],
                 {"plateau": rows[-1].mean}, ok)


def cmd_ball(cfg) -> Table:
    res = ex.run_ball(_plan(cfg, ex.Kind.BALL, cfg.k))
    rows = [_summary_row(k, b.density) for k, b in res.items()]
    extra = {f"center_offset_k{k}": float(b.center.mean()) for k, b in res.items()}
    return Table(SUMMARY_COLUMNS, rows, extra)


def cmd_dominance(cfg) -> Table:
    res = ex.run_superadd_dominance(_plan(cfg, ex.Kind.SUPERADD_DOMINANCE, [1]), cfg.pairs)
    rows = [[r.n, r.m, r.result.max_gap, r.result.band, r.result.verdict] for r in res]
    return Table(DOMINANCE_COLUMNS, rows, {}, all(not r.result.rejected for r in res))


def cmd_ejector(cfg) -> Table:
    res = ex.run_ejector_check(_plan(cfg, ex.Kind.EJECTOR_CHECK, [cfg.n]), [(cfg.n, cfg.m)])
    cols = ("n", "m", "replicas", "identity_one", "deep_checked", "identity_deep",
            "exhausted", "mean_sv", "mean_n1")
    rows = [[getattr(r, c) for c in cols] for r in res]
    return Table(cols, rows, {}, all(r.ok for r in res))


def cmd_exit_fraction(cfg) -> Table:
    res = ex.run_exit_fraction(_plan(cfg, ex.Kind.EXIT_FRACTION, cfg.sizes), cfg.rho,
                               cfg.initial, cfg.eps)
    cols = ["n", "rho", "mean", "n_samples"] + [f"p_gt_{e:g}" for e in cfg.eps]
    rows = [[r.n, r.initial_density, r.mean, int(r.fractions.size)]
            + [r.tail[e] for e in cfg.eps] for r in res]
    return Table(cols, rows)


def cmd_nml_check(cfg) -> Table:
    res = ex.run_nml_enlargement(_plan(cfg, ex.Kind.NML_ENLARGEMENT, [cfg.n]), cfg.i, cfg.j,
                                 convention=cfg.geometric)
    cols = ("i", "j", "containment", "se_containment", "p_exits_le_i", "geometric_cdf",
            "bound", "se_bound")
    rows = [[getattr(r, c) for c in cols] + [int(r.ok)] for r in res]
    return Table(list(cols) + ["ok"], rows, {}, all(r.ok for r in res))


def cmd_inner_bound(cfg) -> Table:
    grid = [(n, k, x) for n in cfg.sizes for k in cfg.k for x in cfg.x]
    res = ex.run_inner_bound(_plan(cfg, ex.Kind.INNER_BOUND_CHECK, cfg.sizes), grid)
    cols = ("n", "k", "x", "containment", "p_sn_ge_k", "se")
    rows = [[getattr(r, c) for c in cols] + [int(r.ok)] for r in res]
    return Table(list(cols) + ["ok"], rows, {}, all(r.ok for r in res))


def cmd_abelian_check(cfg) -> Table:
    r = ex.run_abelian_check(_plan(cfg, ex.Kind.ABELIAN_CHECK, [12]))
    return Table(("instances", "agree", "kernel_agree"),
                 [[r.instances, r.agree, r.kernel_agree]], {}, r.ok)


def cmd_monotonicity_check(cfg) -> Table:
    r = ex.run_monotonicity_check(_plan(cfg, ex.Kind.MONOTONICITY_CHECK, [cfg.n]), cfg.x_site)
    return Table(DOMINANCE_COLUMNS, [[r.n, r.x, r.result.max_gap, r.result.band,
                                      r.result.verdict]],
                 {"mean_more": r.mean_more, "mean_less": r.mean_less},
                 not r.result.rejected)


def cmd_estimate_rhoc(cfg) -> Table:
    res = ex.run_sample_sn(_plan(cfg, ex.Kind.SAMPLE_SN, cfg.sizes))
    est = estimate_rho_star({n: s.dist for n, s in res.items()}, seed=cfg.seed)
    rows = [_summary_row(n, s.values / n) for n, s in res.items()]
    return Table(SUMMARY_COLUMNS, rows, {"rho_star": est.estimate, "rho_star_ci_lo": est.ci_lo,
                                         "rho_star_ci_hi": est.ci_hi,
                                         "argmax_n": est.argmax_n})


# name -> (runner, extra flag names, help)
COMMANDS = {
    "sample-sn": (cmd_sample_sn, ("n",), "samples of S_n (sleepers left by 1 per site)"),
    "dd-run": (cmd_dd_run, ("n", "steps"), "particle count after driving the chain"),
    "hockey": (cmd_hockey, ("n", "rho_max", "rho_step"), "retained density curve"),
    "ball": (cmd_ball, ("k",), "density k/|A_k| of the point-source aggregate"),
    "dominance": (cmd_dominance, ("pairs",), "superadditivity dominance test"),
    "ejector": (cmd_ejector, ("n", "m"), "per-tape ejector identities"),
    "exit-fraction": (cmd_exit_fraction, ("sizes", "rho", "initial", "eps"),
                      "fraction of particles leaving the segment"),
    "nml-check": (cmd_nml_check, ("n", "i", "j", "geometric"), "enlargement bound check"),
    "inner-bound": (cmd_inner_bound, ("sizes", "k", "x"), "aggregate containment bound"),
    "abelian-check": (cmd_abelian_check, (), "order independence on random instances"),
    "monotonicity-check": (cmd_monotonicity_check, ("n", "x_site"),
                           "adding a particle raises the sleeper count"),
    "estimate-rhoc": (cmd_estimate_rhoc, ("sizes",), "sup_n E S_n / n over a size ladder"),
}

DEFAULTS = {
    "lam": 1.0, "p": 0.5, "replicas": 1000, "fuel": DEFAULT_FUEL, "workers": 1,
    "out": None, "format": "csv", "config": None, "check": False,
    "n": 100, "m": 100, "k": [100], "steps": None, "rho_max": 2.0, "rho_step": 0.1,
    "pairs": [(20, 30)], "sizes": [25, 50, 100, 200], "rho": [0.05],
    "initial": "bernoulli", "eps": list(ex.EPS_GRID), "i": [0, 2, 5, 10], "j": [0, 2, 5, 10],
    "geometric": None, "x": [0], "x_site": None,
}


def _add_flag(p: argparse.ArgumentParser, name: str) -> None:
    S = argparse.SUPPRESS
    spec = {
        "n": dict(type=int, help="segment length"),
        "m": dict(type=int, help="right extension of the segment"),
        "k": dict(type=int_list, help="particle counts, comma separated"),
        "steps": dict(type=int, help="driving steps (default 2n)"),
        "rho_max": dict(type=float, help="largest density of the grid"),
        "rho_step": dict(type=float, help="grid step"),
        "pairs": dict(type=pair_list, help="size pairs n:m, comma separated"),
        "sizes": dict(type=int_list, help="segment lengths, comma separated"),
        "rho": dict(type=float_list, help="initial densities"),
        "initial": dict(choices=("bernoulli", "ones"), help="initial configuration"),
        "eps": dict(type=float_list, help="exit-fraction thresholds"),
        "i": dict(type=int_list, help="exit-count thresholds"),
        "j": dict(type=int_list, help="enlargement widths"),
        "geometric": dict(choices=(FAILURES, TRIALS), help="geometric support convention"),
        "x": dict(type=int_list, help="translations"),
        "x_site": dict(type=int, help="site receiving the extra particle"),
    }[name]
    flag = "--" + ("x" if name == "x_site" else name.replace("_", "-"))
    p.add_argument(flag, dest=name, default=S, **spec)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="arwlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"arwlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, flags, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--lambda", dest="lam", type=float, default=S, help="sleep rate")
        p.add_argument("--p", type=float, default=S, help="probability of a left jump")
        p.add_argument("--seed", type=seed_value, default=S, help="master seed")
        p.add_argument("--replicas", type=int, default=S)
        p.add_argument("--fuel", type=int, default=S, help="topplings allowed per replica")
        p.add_argument("--workers", type=int, default=S, help="worker processes")
        p.add_argument("--out", default=S, help="output file (default stdout)")
        p.add_argument("--format", choices=("csv", "json"), default=S)
        p.add_argument("--config", default=S, help="key=value file")
        p.add_argument("--check", action="store_true", default=S,
                       help="exit 3 when the embedded check fails")
        for f in flags:
            _add_flag(p, f)
    return parser


def read_config_file(path: str) -> list:
    """``key=value`` lines (``#`` comments allowed) turned into flags."""
    args = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("config", f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("_", "-")
            if key == "check":
                if value.lower() in ("1", "true", "yes"):
                    args.append("--check")
                continue
            args += [f"--{key}", value]
    return args


def resolve(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    ns = parser.parse_args(argv)
    file_args = []
    if getattr(ns, "config", None):
        try:
            file_args = read_config_file(ns.config)
        except OSError as e:
            raise ConfigError("config", str(e))
        # file first so that command-line flags override it
        ns = parser.parse_args([argv[0]] + file_args + list(argv[1:]))
    cfg = dict(DEFAULTS)
    env = os.environ.get("ARW_SEED")
    try:
        cfg["seed"] = seed_value(env) if env not in (None, "") else 0
    except (ValueError, argparse.ArgumentTypeError):
        raise ConfigError("seed", f"ARW_SEED={env!r} is not a valid seed")
    cfg.update(vars(ns))
    if cfg["geometric"] is None:
        # only the enlargement check uses geometric sums; see run_nml_enlargement
        cfg["geometric"] = TRIALS if cfg["command"] == "nml-check" else FAILURES
    out = argparse.Namespace(**cfg)
    validate(out)
    return out


def validate(cfg) -> None:
    if not (cfg.lam > 0 and math.isfinite(cfg.lam)):
        raise ConfigError("lambda", f"must be a positive finite real, got {cfg.lam}")
    if not 0 < cfg.p < 1:
        raise ConfigError("p", f"must lie in the open interval (0,1), got {cfg.p}")
    for name in ("replicas", "fuel", "workers"):
        if getattr(cfg, name) < 1:
            raise ConfigError(name, "must be a positive integer")
    for name in ("n", "m"):
        if getattr(cfg, name) < 1:
            raise ConfigError(name, "must be a positive integer")
    for name in ("k", "sizes"):
        v = getattr(cfg, name)
        if not v or min(v) < 1:
            raise ConfigError(name, "must be a non-empty list of positive integers")
    if cfg.steps is not None and cfg.steps < 0:
        raise ConfigError("steps", "must be non-negative")
    if not cfg.rho_step > 0 or cfg.rho_max < 0:
        raise ConfigError("rho-step", "grid needs rho-step > 0 and rho-max >= 0")
    if any(not 0 <= r <= 1 for r in cfg.rho):
        raise ConfigError("rho", "densities must lie in [0, 1]")
    if any(a < 1 or b < 1 for a, b in cfg.pairs):
        raise ConfigError("pairs", "sizes must be positive")
    if min(cfg.i, default=0) < 0 or min(cfg.j, default=0) < 0:
        raise ConfigError("i", "thresholds must be non-negative")
    if cfg.x_site is not None and not 1 <= cfg.x_site <= cfg.n:
        raise ConfigError("x", f"site must lie in 1..{cfg.n}")


# -- output -------------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def header_config(cfg) -> dict:
    own = set(COMMANDS[cfg.command][1]) | {"lam", "p", "replicas", "fuel"}
    return {k: getattr(cfg, k) for k in sorted(own)}


def metadata(cfg, table: Table) -> dict:
    meta = {"version": __version__, "command": cfg.command,
            "config": {k: _jsonable(v) for k, v in header_config(cfg).items()},
            "seed": cfg.seed, "geometric_convention": cfg.geometric, "alpha": ex.ALPHA}
    meta["results"] = {k: _jsonable(v) for k, v in table.extra.items()}
    if table.ok is not None:
        meta["check"] = "pass" if table.ok else "fail"
    return meta


def render(cfg, table: Table) -> str:
    meta = metadata(cfg, table)
    if cfg.format == "json":
        doc = dict(meta, columns=list(table.columns),
                   rows=[[_jsonable(v) for v in r] for r in table.rows])
        return json.dumps(doc, sort_keys=True) + "\n"
    buf = io.StringIO()
    buf.write(f"# arwlab {meta['version']}\n")
    buf.write(f"# command={cfg.command}\n")
    for k, v in meta["config"].items():
        buf.write(f"# config.{k}={json.dumps(v)}\n")
    buf.write(f"# seed={cfg.seed}\n")
    buf.write(f"# geometric_convention={cfg.geometric}\n")
    buf.write(f"# alpha={ex.ALPHA}\n")
    for k, v in meta["results"].items():
        buf.write(f"# result.{k}={_fmt(v)}\n")
    if "check" in meta:
        buf.write(f"# check={meta['check']}\n")
    buf.write(",".join(table.columns) + "\n")
    for r in table.rows:
        buf.write(",".join(_fmt(v) for v in r) + "\n")
    return buf.getvalue()


def parse_and_run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = resolve(argv)
    except ConfigError as e:
        print(f"arwlab: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as e:            # argparse reports its own errors
        return int(e.code or 0)
    echo = dict(header_config(cfg), command=cfg.command, seed=cfg.seed,
                **{k: getattr(cfg, k) for k in NOT_IN_HEADER})
    print("arwlab: resolved config: " + json.dumps(
        {k: _jsonable(v) for k, v in sorted(echo.items())}), file=sys.stderr)
    try:
        table = COMMANDS[cfg.command][0](cfg)
    except ValueError as e:
        print(f"arwlab: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FuelExhausted, ex.ConservationError) as e:
        print(f"arwlab: run aborted: {e}", file=sys.stderr)
        return 1
    text = render(cfg, table)
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if cfg.check and table.ok is False:
        print("arwlab: embedded check failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def main() -> None:
    sys.exit(parse_and_run())
