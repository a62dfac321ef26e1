"""Command-line front end: analysis, simulation, comparison, sweeps.

Every subcommand accepts ``--config FILE`` holding flat ``key = value``
lines (``#`` starts a comment); keys are the long flag names without the
leading dashes.  Flags given on the command line win over the file.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Policy, SourceParams
from .distribution import aggregate_metrics, analyze, default_grid
from .mfq import ModelConstructionError, state_count
from .observer import NumericalError, enumerate_observer_states
from .simulator import SimConfig, simulate

log = logging.getLogger("aoimfq")

EXIT_NUMERICAL = 1
EXIT_USAGE = 2
EXIT_THRESHOLD = 3

DEFAULT_GAMMAS = (1.0, 2.0, 5.0, 10.0, 20.0)


class UsageError(ValueError):
    pass


# -- parsing helpers -----------------------------------------------------------


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in str(text).replace(" ", "").split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _policies(text: str) -> tuple[Policy, ...]:
    try:
        return tuple(Policy.parse(x) for x in str(text).split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _span(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in str(text).split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    if not (0 <= lo < hi):
        raise argparse.ArgumentTypeError(f"range must satisfy 0 <= lo < hi, got {text!r}")
    return lo, hi


def _int_span(text: str) -> tuple[int, int]:
    text = str(text)
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split(".."))
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or lo..hi, got {text!r}") from None
    if not 1 <= lo <= hi:
        raise argparse.ArgumentTypeError(f"bad source-count range {text!r}")
    return lo, hi


def _grid_spec(text: str):
    """Either a point count or ``lo:hi:points``."""
    parts = str(text).split(":")
    try:
        if len(parts) == 1:
            k = int(parts[0])
            if k < 2:
                raise ValueError
            return k
        lo, hi, k = float(parts[0]), float(parts[1]), int(parts[2])
    except (ValueError, IndexError):
        raise argparse.ArgumentTypeError(f"grid must be POINTS or lo:hi:points, got {text!r}") from None
    if not (0 <= lo < hi and k >= 2):
        raise argparse.ArgumentTypeError(f"bad grid {text!r}")
    return np.linspace(lo, hi, k)


def read_config(path: str | Path) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


# -- output helpers ------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_grid_csv(path: Path, x, columns: np.ndarray, origin: str | None = None) -> None:
    """``x, source_1, ..., source_N`` (plus ``source`` when ``origin`` given)."""
    columns = np.atleast_2d(columns)
    header = ["x"] + [f"source_{k}" for k in range(1, columns.shape[0] + 1)]
    if origin:
        header.append("source")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for j, xv in enumerate(x):
            row = [_fmt(xv)] + [_fmt(c) for c in columns[:, j]]
            if origin:
                row.append(origin)
            w.writerow(row)


def write_summary_csv(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "source", "value"])
        for metric, source, value in rows:
            w.writerow([metric, source, _fmt(value)])


def write_table_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# -- scenario resolution -------------------------------------------------------


def _params(args, rho: float | None = None) -> SourceParams:
    if args.balanced:
        if args.n is None:
            raise UsageError("--balanced needs --n")
        load = rho if rho is not None else args.rho
        if load is None:
            raise UsageError("--balanced needs --rho (or a sweep over rho)")
        lo, hi = args.n
        if lo != hi:
            raise UsageError("--n must be a single source count here")
        return SourceParams.balanced(lo, load, args.mu)
    if args.lambdas is None or args.mus is None:
        raise UsageError("give --lambdas and --mus, or --balanced with --n and --rho")
    try:
        return SourceParams(args.lambdas, args.mus)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _policy_list(args) -> tuple[Policy, ...]:
    pols = args.policies or ((args.policy,) if args.policy else ())
    if not pols:
        raise UsageError("give --policy or --policies")
    return pols


def _resolve_grid(args, dists_by_policy) -> np.ndarray:
    if isinstance(args.grid, np.ndarray):
        return args.grid
    points = args.grid if isinstance(args.grid, int) else 400
    return default_grid([d for ds in dists_by_policy for d in ds], points)


# -- subcommands ---------------------------------------------------------------


def cmd_analyze(args) -> int:
    params = _params(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pols = _policy_list(args)
    dists = {p: analyze(p, params) for p in pols}
    grid = _resolve_grid(args, dists.values())
    gammas = np.asarray(args.gammas or DEFAULT_GAMMAS)
    for pol, ds in dists.items():
        name = pol.value
        write_grid_csv(out / f"{name}_cdf.csv", grid, np.array([d.cdf(grid) for d in ds]))
        write_grid_csv(out / f"{name}_pdf.csv", grid, np.array([d.pdf(grid) for d in ds]))
        agg = aggregate_metrics(ds, gammas)
        rows = []
        for k, d in enumerate(ds, start=1):
            rows += [("mean", k, d.mean), ("moment_2", k, d.moment(2))]
            rows += [(f"violation@{float(g)!r}", k, v) for g, v in zip(gammas, d.sf(gammas))]
        rows.append(("mean", "all", agg.mean_aoi))
        rows += [(f"violation@{float(g)!r}", "all", v) for g, v in zip(gammas, agg.theta_grid)]
        write_summary_csv(out / f"{name}_summary.csv", rows)
        print(f"{pol}: E[AoI] = {agg.mean_aoi:.6g}  per source = {np.array2string(agg.per_source_mean, precision=6)}")
    return 0


def _sim_config(args, params, policy, grid) -> SimConfig:
    if args.horizon is not None and args.events is not None:
        raise UsageError("give only one of --horizon and --events")
    events = args.events if args.horizon is None else None
    if args.horizon is None and events is None:
        events = 10**7
    try:
        return SimConfig(params, policy, horizon=args.horizon, events=events, seed=args.seed,
                         cdf_grid=tuple(grid), warmup=args.warmup)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args) -> int:
    params = _params(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pols = _policy_list(args)
    if isinstance(args.grid, np.ndarray):
        grid = args.grid
    else:
        grid = _resolve_grid(args, [analyze(p, params) for p in pols])
    for pol in pols:
        res = simulate(_sim_config(args, params, pol, grid))
        name = pol.value
        write_grid_csv(out / f"{name}_sim_cdf.csv", grid, res.per_source_cdf, origin="sim")
        rows = [("mean", k, m) for k, m in enumerate(res.per_source_mean, start=1)]
        rows += [("mean", "all", res.mean_aoi), ("seed", "all", res.config.seed),
                 ("events", "all", res.event_count), ("observed_time", "all", res.observed_time)]
        write_summary_csv(out / f"{name}_sim_summary.csv", rows)
        print(f"{pol}: simulated E[AoI] = {res.mean_aoi:.6g} over {res.event_count} events (seed {res.config.seed})")
    return 0


def cmd_compare(args) -> int:
    params = _params(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pols = _policy_list(args)
    dists = {p: analyze(p, params) for p in pols}
    grid = _resolve_grid(args, dists.values())
    rows, worst = [], 0.0
    for pol, ds in dists.items():
        res = simulate(_sim_config(args, params, pol, grid))
        model = np.array([d.cdf(grid) for d in ds])
        sup = np.abs(model - res.per_source_cdf).max(axis=1)
        worst = max(worst, float(sup.max()))
        for k, d in enumerate(ds):
            rows.append((pol.value, k + 1, sup[k], d.mean, res.per_source_mean[k]))
            print(f"{pol} source {k + 1}: sup|F_model - F_sim| = {sup[k]:.3e}  "
                  f"mean model {d.mean:.6g} sim {res.per_source_mean[k]:.6g}")
    write_table_csv(out / "compare.csv", ["policy", "source", "sup_distance", "model_mean", "sim_mean"], rows)
    if worst > args.threshold:
        print(f"worst sup-distance {worst:.3e} exceeds threshold {args.threshold}", file=sys.stderr)
        return EXIT_THRESHOLD
    return 0


def cmd_statecount(args) -> int:
    lo, hi = args.n if args.n else (2, 5)
    pols = args.policies or (Policy.SBR, Policy.FSFS, Policy.ESFS)
    ns = list(range(lo, hi + 1))
    table = {p: [state_count(p, n) for n in ns] for p in pols}
    width = max(6, *(len(str(v)) + 1 for vals in table.values() for v in vals))
    print("policy".ljust(8) + "".join(f"N={n}".rjust(width) for n in ns))
    for p, vals in table.items():
        print(str(p).ljust(8) + "".join(str(v).rjust(width) for v in vals))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = [(p.value, n, L, len(enumerate_observer_states(p, n))) for p, vals in table.items()
                for n, L in zip(ns, vals)]
        write_table_csv(out / "statecount.csv", ["policy", "n", "L", "observer_states"], rows)
    return 0


def cmd_sweep(args) -> int:
    if args.axis is None:
        raise UsageError("sweep needs --axis")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pols = _policy_list(args)
    if args.points < 2:
        raise UsageError("--points must be >= 2")
    if args.axis == "gamma":
        lo, hi = args.range or (0.0, 20.0)
        xs = np.linspace(lo, hi, args.points)
        params = _params(args)
        cols = [aggregate_metrics(analyze(p, params), xs).theta_grid for p in pols]
        header = "theta"
    elif args.axis == "rho":
        if not args.balanced:
            raise UsageError("the rho axis sweeps balanced loads; add --balanced --n N")
        lo, hi = args.range or (0.1, 12.0)
        if lo <= 0:
            raise UsageError("system load must be positive")
        xs = np.linspace(lo, hi, args.points)
        cols = [[aggregate_metrics(analyze(p, _params(args, rho=x))).mean_aoi for x in xs] for p in pols]
        header = "mean_aoi"
    else:
        rho = args.rho
        if rho is None:
            raise UsageError("the rho1 axis needs --rho (total load)")
        lo, hi = args.range or (0.5, 0.99)
        if hi >= 1.0:
            raise UsageError("rho1/rho must stay below 1 so source 2 keeps a positive rate")
        xs = np.linspace(lo, hi, args.points)
        mus = (args.mu, args.mu)
        cols = []
        for p in pols:
            col = []
            for r in xs:
                prm = SourceParams((r * rho * args.mu, (1 - r) * rho * args.mu), mus)
                col.append(aggregate_metrics(analyze(p, prm)).mean_aoi)
            cols.append(col)
        header = "mean_aoi"
    names = [f"{header}_{p.value}" for p in pols]
    rows = [[x] + [c[j] for c in cols] for j, x in enumerate(xs)]
    write_table_csv(out / f"sweep_{args.axis}.csv", [args.axis] + names, rows)
    for row in rows:
        print(" ".join(f"{v:.6g}" for v in row))
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--policy", type=Policy.parse)
    common.add_argument("--policies", type=_policies)
    common.add_argument("--lambdas", type=_floats, help="arrival rates, comma separated")
    common.add_argument("--mus", type=_floats, help="service rates, comma separated")
    common.add_argument("--n", type=_int_span, help="source count, or lo..hi for statecount")
    common.add_argument("--mu", type=float, default=1.0, help="common service rate for --balanced")
    common.add_argument("--rho", type=float, help="system load for --balanced / rho1 sweeps")
    common.add_argument("--balanced", action="store_true", help="lambda_n = rho*mu/N for every source")
    common.add_argument("--axis", choices=("rho", "rho1", "gamma"))
    common.add_argument("--range", type=_span, help="sweep range lo:hi")
    common.add_argument("--points", type=int, default=24)
    common.add_argument("--grid", type=_grid_spec, default=400, help="POINTS or lo:hi:points")
    common.add_argument("--gammas", type=_floats, help="violation thresholds for summaries")
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--horizon", type=float, help="simulated seconds")
    common.add_argument("--events", type=lambda s: int(float(s)), help="simulation event budget")
    common.add_argument("--warmup", type=float, default=0.1)
    common.add_argument("--threshold", type=float, default=0.01)
    common.add_argument("--out", default=".")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="aoimfq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in (
        ("analyze", cmd_analyze, "exact per-source AoI CDF/pdf and summary"),
        ("simulate", cmd_simulate, "discrete-event simulation"),
        ("compare", cmd_compare, "model vs simulation sup-distance"),
        ("statecount", cmd_statecount, "order of W per policy and N"),
        ("sweep", cmd_sweep, "E[AoI] or violation sweeps"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=fn)
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    cfg = read_config(known.config)
    # config values become subparser defaults, so explicit flags still win
    for sub in parser._subparsers._group_actions[0].choices.values():
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in cfg.items():
            action = actions.get(key)
            if action is None or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r}")
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
                continue
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {key}: {exc}") from None
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except (UsageError, OSError) as exc:
        print(f"aoimfq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"aoimfq {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ModelConstructionError, np.linalg.LinAlgError) as exc:
        print(f"aoimfq {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
