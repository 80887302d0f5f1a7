"""Command-line front end: run experiments, audit traces, emit plot data.

Exit codes are 0 on success, 1 when a check finds a problem and 2 for
usage or configuration errors. Set ``CONSENSUS_LAB_LOG`` to a logging level
name (``DEBUG``, ``INFO``, ...) to change verbosity.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import random
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .checks import snapshot_deviations
from .config import ExperimentConfigError, load_experiment
from .graph import (
    GraphError,
    complete_graph,
    cycle_with_chords,
    dump_graph,
    erdos_strongly_connected,
    is_strongly_connected,
    ring_graph,
)
from .oracle import oracle_compare, spread_series, t_snapshots_csv
from .simulator import (
    SimulationError,
    Trace,
    TraceCorruptionError,
    TraceFormatError,
    TraceVersionError,
    dump_trace,
    dumps_trace,
    parse_trace,
    recompute_reports,
    report_json,
    run,
    validate_trace,
)

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2
CONVERGED_TOL = 1e-6

log = logging.getLogger("consensus_lab")


def _setup_logging() -> None:
    level = os.environ.get("CONSENSUS_LAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# -- summaries ----------------------------------------------------------------

def rounds_to_tolerance(trace: Trace, tol: float = CONVERGED_TOL) -> int | None:
    """First recorded round from which every later ratio error stays below ``tol``."""
    hit = None
    for rec in trace.rounds:
        if trace.max_ratio_error(rec) < tol:
            if hit is None:
                hit = rec.k
        else:
            hit = None
    return hit


def summarize(trace: Trace) -> dict:
    cfg = trace.config
    return {
        "n": cfg.graph.n,
        "rounds": cfg.rounds,
        "mode": cfg.mode,
        "scheme": cfg.scheme.kind,
        "arithmetic": cfg.arithmetic,
        "average": float(cfg.average),
        "final_max_error": trace.max_ratio_error(),
        "rounds_to_1e-6": rounds_to_tolerance(trace),
        "atc": [{"k0": rep.k0, "failed": rep.failed} for rep in trace.reports],
        "warnings": list(trace.warnings),
    }


def format_summary(s: dict, verbosity: str = "normal") -> str:
    conv = s["rounds_to_1e-6"]
    conv_txt = f"converged (1e-6) at round {conv}" if conv is not None else "not converged to 1e-6"
    if verbosity == "quiet":
        return f"avg={s['average']!r} err={s['final_max_error']:.3e} {conv_txt}"
    lines = [
        f"nodes: {s['n']}  rounds: {s['rounds']}  mode: {s['mode']}  scheme: {s['scheme']}  arithmetic: {s['arithmetic']}",
        f"average: {s['average']!r}",
        f"final max |r_j - avg|: {s['final_max_error']:.3e}",
        conv_txt,
    ]
    for ep in s["atc"]:
        verdict = "pass" if not ep["failed"] else "FAIL targets " + ",".join(map(str, ep["failed"]))
        lines.append(f"ATC k0={ep['k0']}: {verdict}")
    for w in s["warnings"]:
        lines.append(f"warning: {w}")
    return "\n".join(lines)


def plot_rows(trace: Trace, with_spread: bool = False) -> str:
    cfg = trace.config
    n = cfg.graph.n
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["k"] + [f"r_{j}" for j in range(1, n + 1)] + ["residual_y", "residual_z", "max_local_dev"]
    if with_spread:
        header.append("column_spread")
    writer.writerow(header)
    if not trace.rounds:
        return buf.getvalue()
    spreads = spread_series(cfg) if with_spread else None
    x0s = trace.rounds[0].x if trace.rounds[0].k == 0 else None
    for rec in trace.rounds:
        dev = ""
        if x0s is not None:
            devs = snapshot_deviations(cfg.graph, cfg.mode, rec.x, rec.sigma, x0s)
            dev = repr(max(float(d.norm_inf()) for d in devs))
        row = [rec.k] + ["" if r is None else repr(float(r)) for r in rec.r]
        row += [repr(float(rec.global_residual.y)), repr(float(rec.global_residual.z)), dev]
        if spreads is not None:
            row.append(repr(spreads[rec.k]))
        writer.writerow(row)
    return buf.getvalue()


# -- subcommands ----------------------------------------------------------------

def _overrides(args) -> dict:
    return {
        "seed": args.seed,
        "rounds": args.rounds,
        "k_atc": args.katc,
        "tau": args.tau,
        "arithmetic": args.arithmetic,
    }


def _load(args):
    if not args.config:
        raise ExperimentConfigError(["no config given (use --config PATH)"])
    return load_experiment(args.config, _overrides(args))


def cmd_run(args) -> int:
    try:
        exp = _load(args)
    except ExperimentConfigError as exc:
        _err("invalid config")
        for p in exc.problems:
            print(f"  {p}", file=sys.stderr)
        return EXIT_USAGE
    if not is_strongly_connected(exp.sim.graph):
        _err("communication graph is not strongly connected; average consensus needs a path between every pair of nodes")
        return EXIT_USAGE
    log.info("running %d rounds on %d nodes (%s, %s)", exp.sim.rounds, exp.sim.graph.n, exp.sim.mode, exp.sim.scheme.kind)
    try:
        trace = run(exp.sim)
    except SimulationError as exc:
        _err(str(exc))
        return EXIT_USAGE
    out = args.out or exp.output.get("trace") or "trace.jsonl"
    dump_trace(trace, out)
    summary = summarize(trace)
    print(format_summary(summary, exp.verbosity))
    print(f"trace: {out}")
    if exp.output.get("summary"):
        Path(exp.output["summary"]).write_text(json.dumps(summary, indent=2) + "\n")
    if exp.output.get("plot_data"):
        Path(exp.output["plot_data"]).write_text(plot_rows(trace))
    return EXIT_OK


def _read_trace(path) -> Trace:
    return parse_trace(Path(path).read_text())


def _first_line_diff(a: str, b: str) -> tuple[int, dict | None, dict | None] | None:
    la, lb = a.splitlines(), b.splitlines()
    for i in range(max(len(la), len(lb))):
        x = la[i] if i < len(la) else None
        y = lb[i] if i < len(lb) else None
        if x != y:
            return i, (json.loads(x) if x else None), (json.loads(y) if y else None)
    return None


def _locate(got: dict | None, want: dict | None) -> str:
    rec = got or want
    kind = rec.get("record")
    if got is None or want is None:
        return f"{kind} record missing or extra at k={rec.get('k', rec.get('k0'))}"
    if kind == "round":
        for field in ("x", "sigma", "r"):
            for idx, (u, v) in enumerate(zip(got.get(field, []), want.get(field, [])), start=1):
                if u != v:
                    return f"round {got['k']}: {field} entry {idx} differs (trace {u}, rerun {v})"
        return f"round {got['k']}: record differs from rerun"
    if kind == "atc":
        return f"check epoch k0={got.get('k0')}: embedded report differs from rerun"
    return "header differs from rerun"


def audit_trace(trace: Trace, text: str | None = None) -> list[str]:
    """Every inconsistency found in a parsed trace; empty means clean."""
    problems = []
    try:
        validate_trace(trace)
    except TraceCorruptionError as exc:
        problems.append(str(exc))
    except TraceFormatError as exc:
        problems.append(str(exc))
        return problems
    try:
        fresh = recompute_reports(trace)
    except TraceFormatError as exc:
        problems.append(str(exc))
        fresh = None
    if fresh is not None:
        embedded = {rep.k0: report_json(rep) for rep in trace.reports}
        again = {rep.k0: report_json(rep) for rep in fresh}
        if set(embedded) != set(again):
            problems.append(f"check epochs {sorted(embedded)} embedded, {sorted(again)} expected")
        for k0 in sorted(set(embedded) & set(again)):
            if embedded[k0] != again[k0]:
                bad = [
                    t["target"]
                    for t, u in zip(embedded[k0]["targets"], again[k0]["targets"])
                    if t != u
                ]
                problems.append(f"check epoch k0={k0}: embedded report disagrees with recomputation (targets {bad})")
    if text is not None:
        try:
            rerun = dumps_trace(run(trace.config))
        except (SimulationError, ValueError) as exc:
            problems.append(f"cannot rerun configuration: {exc}")
        else:
            diff = _first_line_diff(text, rerun)
            if diff is not None:
                problems.append("rerun diverges: " + _locate(diff[1], diff[2]))
    return problems


def cmd_check(args) -> int:
    try:
        text = Path(args.trace).read_text()
        trace = parse_trace(text)
    except TraceVersionError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except TraceFormatError as exc:
        _err(f"corrupt trace: {exc}")
        return EXIT_CHECK
    problems = audit_trace(trace, text)
    for p in problems:
        print(f"FAIL {p}")
    if problems:
        return EXIT_CHECK
    print(f"ok: {len(trace.rounds)} rounds and {len(trace.reports)} check reports consistent")
    return EXIT_OK


def cmd_gen_graph(args) -> int:
    rng = random.Random(args.seed)
    try:
        if args.model == "ring":
            g = ring_graph(args.n)
        elif args.model == "complete":
            g = complete_graph(args.n)
        elif args.model == "erdos":
            g = erdos_strongly_connected(args.n, args.p, rng)
        else:
            g = cycle_with_chords(args.n, args.p, rng)
    except (GraphError, ValueError, RuntimeError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    assert is_strongly_connected(g)
    if args.out:
        dump_graph(g, args.out)
    else:
        print(json.dumps(g.to_dict()))
    return EXIT_OK


def cmd_oracle_compare(args) -> int:
    try:
        trace = _read_trace(args.trace)
    except (OSError, TraceFormatError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    rep = oracle_compare(trace, args.tol)
    print(f"max deviation {rep.max_deviation:.3e} at round {rep.worst_round} (tolerance {args.tol:g})")
    for k in rep.exceeding():
        print(f"FAIL round {k}")
    if args.t_csv:
        Path(args.t_csv).write_text(t_snapshots_csv(trace, args.every))
    return EXIT_OK if rep.ok else EXIT_CHECK


def cmd_plot_data(args) -> int:
    try:
        trace = _read_trace(args.trace)
    except (OSError, TraceFormatError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    text = plot_rows(trace, args.spread)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def _batch_one(job) -> tuple[int, dict, str]:
    sim, seed, out_dir = job
    trace = run(replace(sim, seed=seed))
    path = ""
    if out_dir:
        path = str(Path(out_dir) / f"trace_seed{seed}.jsonl")
        dump_trace(trace, path)
    return seed, summarize(trace), path


def cmd_batch(args) -> int:
    try:
        exp = _load(args)
        seeds = _parse_seeds(args.seeds)
    except ExperimentConfigError as exc:
        _err("invalid config")
        for p in exc.problems:
            print(f"  {p}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        _err(f"bad --seeds: {exc}")
        return EXIT_USAGE
    if not is_strongly_connected(exp.sim.graph):
        _err("communication graph is not strongly connected")
        return EXIT_USAGE
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    jobs = [(exp.sim, s, args.out) for s in sorted(set(seeds))]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_batch_one, jobs))
    else:
        results = list(map(_batch_one, jobs))
    for seed, summary, path in results:
        failed = sorted({i for ep in summary["atc"] for i in ep["failed"]})
        line = f"seed {seed}: {format_summary(summary, 'quiet')}"
        if failed:
            line += f" atc_fail={failed}"
        if path:
            line += f" trace={path}"
        print(line)
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def _sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--katc", type=int, help="check period in rounds")
    p.add_argument("--tau", type=float, help="detection threshold")
    p.add_argument("--arithmetic", choices=["float", "rational"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consensus-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a config and write its trace")
    _sim_flags(p)
    p.add_argument("--out", help="trace output path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="audit a trace file")
    p.add_argument("trace")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("gen-graph", help="generate a strongly connected digraph")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--model", choices=["ring", "complete", "erdos", "chords"], default="chords")
    p.add_argument("--p", type=float, default=0.3, help="edge or chord probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_graph)

    p = sub.add_parser("oracle-compare", help="compare a trace with the dense reference")
    p.add_argument("trace")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--t-csv", help="also write T[k] snapshots as CSV")
    p.add_argument("--every", type=int, default=1)
    p.set_defaults(func=cmd_oracle_compare)

    p = sub.add_parser("plot-data", help="per-round CSV series from a trace")
    p.add_argument("trace")
    p.add_argument("--spread", action="store_true", help="include column spread of T[k]")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("batch", help="run one config over many seeds")
    _sim_flags(p)
    p.add_argument("--seeds", default="0", help="e.g. 1-10 or 1,4,9")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="directory for per-seed traces")
    p.set_defaults(func=cmd_batch)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
