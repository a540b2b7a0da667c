"""Command-line front end: ``hecc <command> [options]``.

Commands write plot-ready CSV files into ``--out``. Exit status is 0 when every
requested file was written, 1 for usage or configuration errors and 2 for
failures while running an experiment.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import benchmarks
from .bnb import NodeLimitReached, SearchSpaceTooLarge, solve_exact
from .longterm import DEFAULT_ALPHA, OBJECTIVE_SCALE, solve_lsp
from .orchestrator import default_allocation, run
from .scenario import Scenario, ScenarioConfig, load_config, substream
from .shortterm import SspInfeasible, solve_ssp
from .system_model import total_cost

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

COMMANDS = ("run", "convergence", "compare", "oracle-gap", "sweep")
DEFAULT_ALPHAS = (10.0, 5e2, 1e3, 1e4, 1e6)
DEFAULT_SIZES = ((8, 2), (10, 2), (10, 4))

RUN_HEADER = ("frame", "slot", "scheme", "seed", "objective", "latency_total", "cost_total", "trigger", "feasible")
CONVERGENCE_HEADER = ("algorithm", "alpha", "M", "K", "iteration", "objective", "penalty")
COMPARE_HEADER = ("scheme", "seed", "metric", "value")
ORACLE_HEADER = ("frame", "alg2_obj", "bnb_obj", "gap_pct")
ORACLE_COST_HEADER = ("frame", "alg2_cost", "bnb_cost")
ORACLE_NODE_LIMIT = 20_000
SWEEP_HEADER = ("parameter", "level", "scheme", "seed", "metric", "value")

# short names for the usual sweep parameters
SWEEP_ALIASES = {"f_k": "es_rate", "e_max": "energy_cap", "t_max": "latency_cap", "x_max": "cost_cap"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class ExperimentSpec:
    command: str
    config: ScenarioConfig
    seeds: list
    alphas: list
    out: str
    schemes: list = field(default_factory=list)
    sweep: tuple | None = None  # (field name, grid)
    sizes: list = field(default_factory=list)
    frames: int | None = None
    slots: int | None = None
    workers: int = 1


# ---------------------------------------------------------------------------
# argument parsing


_SEED_RE = re.compile(r"^(\d+)(?:-(\d+))?$")


def parse_seeds(text: str) -> list[int]:
    """``"0-4"``, ``"1,3,7"`` or a mix such as ``"0-2,9"``."""
    seeds: list[int] = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        m = _SEED_RE.match(part)
        if not m:
            raise UsageError(f"bad seed list {text!r}")
        lo = int(m.group(1))
        hi = int(m.group(2)) if m.group(2) else lo
        if hi < lo:
            raise UsageError(f"bad seed range {part!r}")
        seeds.extend(range(lo, hi + 1))
    if not seeds:
        raise UsageError("seed list is empty")
    return seeds


def parse_floats(text: str, what: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad {what} list {text!r}") from None
    if not values:
        raise UsageError(f"{what} list is empty")
    return values


def parse_sizes(text: str) -> list[tuple[int, int]]:
    out = []
    for part in text.split(","):
        try:
            m, k = part.lower().split("x")
            out.append((int(m), int(k)))
        except ValueError:
            raise UsageError(f"bad size {part!r}; expected MxK") from None
    return out


def parse_sweep(text: str) -> tuple[str, list[float]]:
    """``param:lo:hi:steps`` with an evenly spaced, inclusive grid."""
    parts = text.split(":")
    if len(parts) != 4:
        raise UsageError("--sweep expects param:lo:hi:steps")
    name = SWEEP_ALIASES.get(parts[0].lower(), parts[0])
    fields = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
    if name not in fields or not isinstance(getattr(ScenarioConfig(), name), float):
        raise UsageError(f"cannot sweep {parts[0]!r}; use a float config field or one of {sorted(SWEEP_ALIASES)}")
    try:
        lo, hi, steps = float(parts[1]), float(parts[2]), int(parts[3])
    except ValueError:
        raise UsageError(f"bad sweep grid {text!r}") from None
    if steps < 1:
        raise UsageError("sweep grid must have at least one point")
    grid = [lo] if steps == 1 else [float(v) for v in np.linspace(lo, hi, steps)]
    return name, grid


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hecc", description="Two-timescale edge-cloud placement and offloading experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML config (default: $HECC_CONFIG, then built-in defaults)")
    p.add_argument("--seeds", default="0", help="seed list, e.g. 0-19 or 1,4,9")
    p.add_argument("--alpha", default=None, help="comma separated penalty weights")
    p.add_argument("--schemes", default=None, help="comma separated scheme ids, e.g. PROPOSED,FUAS,FIXED_OFFLOAD(30)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--workers", type=int, default=1, help="processes used across seeds")
    p.add_argument("--sweep", default=None, help="param:lo:hi:steps (f_k, E_max, T_max, X_max or a config field)")
    p.add_argument("--sizes", default=None, help="MxK list for convergence, default 8x2,10x2,10x4")
    p.add_argument("--frames", type=int, default=None, help="override the number of long-term frames")
    p.add_argument("--slots", type=int, default=None, help="override the slots per frame")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _split_schemes(text: str) -> list[str]:
    # commas inside FIXED_OFFLOAD(...) never occur, so a plain split is enough
    return [s for s in (t.strip() for t in text.split(",")) if s]


def make_spec(argv) -> ExperimentSpec:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from None
    alphas = parse_floats(args.alpha, "alpha") if args.alpha else (
        list(DEFAULT_ALPHAS) if args.command == "convergence" else [DEFAULT_ALPHA])
    if any(a <= 0 for a in alphas):
        raise UsageError("alpha values must be positive")
    try:
        if args.schemes:
            schemes = [benchmarks.parse_scheme(s) for s in _split_schemes(args.schemes)]
        elif args.command == "run":
            schemes = [benchmarks.SchemeSpec(benchmarks.PROPOSED)]
        else:
            schemes = benchmarks.default_schemes()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.command == "compare" and len(schemes) < 2:
        raise UsageError("compare needs at least two schemes")
    sweep = parse_sweep(args.sweep) if args.sweep else None
    if args.command == "sweep" and sweep is None:
        raise UsageError("sweep needs --sweep param:lo:hi:steps")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    for name in ("frames", "slots"):
        value = getattr(args, name)
        if value is not None and value < 1:
            raise UsageError(f"--{name} must be >= 1")
    return ExperimentSpec(
        command=args.command, config=config, seeds=parse_seeds(args.seeds), alphas=alphas, out=args.out,
        schemes=schemes, sweep=sweep, sizes=parse_sizes(args.sizes) if args.sizes else list(DEFAULT_SIZES),
        frames=args.frames, slots=args.slots, workers=args.workers,
    )


# ---------------------------------------------------------------------------
# output


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str, header, rows) -> str:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _map(spec: ExperimentSpec, fn, items):
    """Ordered map, in worker processes when asked for."""
    items = list(items)
    if spec.workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# ---------------------------------------------------------------------------
# commands


def _trace_rows(job):
    config, scheme, seed, frames, slots, alpha = job
    trace = run(Scenario(config.replace(rng_seed=seed)), scheme, frames=frames, slots=slots, alpha=alpha)
    return [(r.frame, r.slot, scheme.name, seed, r.objective, float(r.latency.sum()), r.cost_total,
             r.trigger, r.feasible) for r in trace.slots]


def cmd_run(spec: ExperimentSpec) -> list[str]:
    jobs = [(spec.config, s, seed, spec.frames, spec.slots, spec.alphas[0]) for s in spec.schemes for seed in spec.seeds]
    rows = [r for chunk in _map(spec, _trace_rows, jobs) for r in chunk]
    return [write_csv(os.path.join(spec.out, "run_trace.csv"), RUN_HEADER, rows)]


def _convergence_rows(job):
    config, M, K, alphas, seed = job
    cfg = config.replace(num_ues=M, num_ess=K, rng_seed=seed, ue_positions=None, es_positions=None)
    inst = Scenario(cfg).instance(0, 0)
    alloc = default_allocation(M)
    rows = []
    decision = None
    for alpha in alphas:
        res = solve_lsp(inst, alloc, None, alpha=alpha, rng=substream(seed, "solver", 0))
        for it in res.trace:
            rows.append(("alg2", alpha, M, K, it.iteration, it.penalized_objective / OBJECTIVE_SCALE, it.penalty_value))
        if decision is None or alpha == DEFAULT_ALPHA:
            decision = res.decision
    ssp = solve_ssp(inst, decision, cost_term=total_cost(decision, None, cfg).total)
    for it in ssp.trace:
        rows.append(("alg3", "", M, K, it.iteration, it.objective, it.max_residual))
    return rows


def cmd_convergence(spec: ExperimentSpec) -> list[str]:
    jobs = [(spec.config, M, K, spec.alphas, spec.seeds[0]) for M, K in spec.sizes]
    rows = [r for chunk in _map(spec, _convergence_rows, jobs) for r in chunk]
    return [write_csv(os.path.join(spec.out, "convergence.csv"), CONVERGENCE_HEADER, rows)]


def _compare_rows(job):
    config, scheme, seed, frames, slots, alpha = job
    rows = benchmarks.run_comparison(config, [scheme], [seed], frames=frames, slots=slots, alpha=alpha)
    return [(r.scheme, r.seed, r.metric, r.value) for r in rows]


def cmd_compare(spec: ExperimentSpec) -> list[str]:
    jobs = [(spec.config, s, seed, spec.frames, spec.slots, spec.alphas[0]) for s in spec.schemes for seed in spec.seeds]
    rows = [r for chunk in _map(spec, _compare_rows, jobs) for r in chunk]
    return [write_csv(os.path.join(spec.out, "compare.csv"), COMPARE_HEADER, rows)]


def cmd_sweep(spec: ExperimentSpec) -> list[str]:
    name, grid = spec.sweep
    jobs = []
    for level in grid:
        try:
            cfg = spec.config.replace(**{name: level})
        except ValueError as exc:
            raise UsageError(f"sweep level {name}={level}: {exc}") from None
        jobs += [(cfg, s, seed, spec.frames, spec.slots, spec.alphas[0]) for s in spec.schemes for seed in spec.seeds]
    chunks = _map(spec, _compare_rows, jobs)
    rows = [(name, getattr(job[0], name), *r) for job, chunk in zip(jobs, chunks) for r in chunk]
    return [write_csv(os.path.join(spec.out, "sweep.csv"), SWEEP_HEADER, rows)]


def oracle_gap_rows(config: ScenarioConfig, frames: int, alpha: float = DEFAULT_ALPHA,
                    node_limit: int | None = None):
    """Per-frame long-term SCA versus exact objective on the same sub-problem.

    Both solve frame t from the placement the SCA chose at t-1, so the
    switching costs they see are identical.
    """
    node_limit = ORACLE_NODE_LIMIT if node_limit is None else node_limit
    scenario = Scenario(config)
    prev = None
    gaps, costs = [], []
    for t in range(frames):
        inst = scenario.instance(t, 0)
        alloc = default_allocation(inst.M)
        res = solve_lsp(inst, alloc, prev, alpha=alpha, rng=substream(config.rng_seed, "solver", t))
        exact = solve_exact(inst, alloc, prev, node_limit=node_limit)
        gap = 100.0 * (res.objective - exact.objective) / exact.objective
        gaps.append((t, res.objective, exact.objective, gap))
        costs.append((t, total_cost(res.decision, prev, config).total, total_cost(exact.decision, prev, config).total))
        prev = res.decision.placement.copy()
    return gaps, costs


def cmd_oracle_gap(spec: ExperimentSpec) -> list[str]:
    frames = spec.frames or spec.config.frames
    gaps, costs = oracle_gap_rows(spec.config.replace(rng_seed=spec.seeds[0]), frames, spec.alphas[0],
                                  ORACLE_NODE_LIMIT)
    return [
        write_csv(os.path.join(spec.out, "oracle_gap.csv"), ORACLE_HEADER, gaps),
        write_csv(os.path.join(spec.out, "oracle_cost.csv"), ORACLE_COST_HEADER, costs),
    ]


HANDLERS = {
    "run": cmd_run,
    "convergence": cmd_convergence,
    "compare": cmd_compare,
    "oracle-gap": cmd_oracle_gap,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    try:
        spec = make_spec(sys.argv[1:] if argv is None else argv)
        try:
            os.makedirs(spec.out, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"output directory {spec.out!r} is not writable: {exc}") from None
        if not os.access(spec.out, os.W_OK):
            raise UsageError(f"output directory {spec.out!r} is not writable")
        written = HANDLERS[spec.command](spec)
    except UsageError as exc:
        print(f"hecc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SearchSpaceTooLarge, NodeLimitReached) as exc:
        print(f"hecc: oracle cap exceeded: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, ValueError, SspInfeasible, OSError, ArithmeticError) as exc:
        print(f"hecc: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
