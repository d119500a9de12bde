"""Command-line front end: ``corrcache <subcommand> --config FILE``.

Exit codes: 0 ok, 2 config parse error, 3 invalid config, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigInvalid, CorrCacheError, InstanceTooLarge, IoFailure
from .estimators import (
    EULER_GAP,
    ResultRow,
    aggregate,
    cost_average,
    lemma1_probe,
    regenerative_fault,
    time_average_fault,
    write_results,
)
from .placement import (
    PlacementProblem,
    cost_weighted_set,
    exact_knapsack,
    prefix_sizes,
    size_aware_prefix,
    top_x,
)
from .policies import PolicyKind, new_policy, replay
from .rng import RNG_ALGORITHM
from .workload import generate

BRACKET_TOL = 1e-12


def _policy(cfg: ExperimentConfig, pc, x, seed):
    if pc.kind is PolicyKind.STATIC_TOP_X:
        ctx = cfg.validated.marginal
    elif pc.kind is PolicyKind.STATIC_GIVEN_SET:
        ctx = pc.documents
    else:
        ctx = None
    return new_policy(pc.kind, int(x), ctx, pc.seed if pc.seed is not None else seed)


def _simulate_seed(cfg: ExperimentConfig, seed: int) -> dict:
    """Run every (policy, x) cell on one seed's stream."""
    trace = generate(cfg.validated, cfg.stop, seed)
    rows, cost_rows, violations = [], [], 0
    h = cfg.validated.hash()
    for pc in cfg.policies:
        for x in cfg.cache_sizes:
            rep = replay(_policy(cfg, pc, x, seed), trace.docs, trace.cycle_index)
            violations += rep.violations
            if cfg.method == "regenerative":
                est = regenerative_fault(trace, rep)
            else:
                est = time_average_fault(trace, rep, cfg.warmup_fraction)
            rows.append(ResultRow(cfg.id, pc.label, x, est.point, est.stderr, trace.num_cycles, str(seed), h))
            if cfg.costs is not None:
                c = cost_average(trace, rep, cfg.costs, cfg.method, cost_bound=cfg.cost_bound,
                                 warmup_fraction=cfg.warmup_fraction)
                cost_rows.append(ResultRow(cfg.id, pc.label, x, c.point, c.stderr, trace.num_cycles,
                                           str(seed), h))
    return {"seed": seed, "rows": rows, "cost_rows": cost_rows, "violations": violations}


def _run_seeds(cfg: ExperimentConfig, fn, workers: int) -> list:
    if workers <= 1 or len(cfg.seeds) <= 1:
        out = [fn(cfg, s) for s in cfg.seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(fn, [cfg] * len(cfg.seeds), cfg.seeds))
    return sorted(out, key=lambda r: r["seed"])


def _with_aggregates(rows: list[ResultRow]) -> list[ResultRow]:
    rows = sorted(rows, key=lambda r: (r.policy, r.x, int(r.seed)))
    cells: dict = {}
    for r in rows:
        cells.setdefault((r.policy, r.x), []).append(r)
    out = list(rows)
    if any(len(v) > 1 for v in cells.values()):
        out += [aggregate(v) for _, v in sorted(cells.items())]
    return out


class _Writer:
    """Serializes every output file and remembers what was written."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.files: list[str] = []
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IoFailure(f"cannot create output directory {out_dir}: {e}") from e

    def open(self, name: str):
        self.files.append(name)
        try:
            return open(self.dir / name, "w", newline="", encoding="utf-8")
        except OSError as e:
            raise IoFailure(f"cannot write {self.dir / name}: {e}") from e

    def manifest(self, cfg: ExperimentConfig, command: str, extra: dict | None = None):
        data = {
            "tool": "corrcache",
            "version": __version__,
            "command": command,
            "experiment_id": cfg.id,
            "config": str(cfg.source) if cfg.source else None,
            "spec_hash": cfg.validated.hash(),
            "rng_algorithm": RNG_ALGORITHM,
            "seeds": cfg.seeds,
            "files": sorted(self.files),
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        }
        data.update(extra or {})
        try:
            (self.dir / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        except OSError as e:
            raise IoFailure(f"cannot write manifest: {e}") from e


# --------------------------------------------------------------------------
# Subcommands


def cmd_validate(cfg: ExperimentConfig, args) -> int:
    v = cfg.validated
    print(f"experiment {cfg.id}: {v.num_states} state(s), {v.universe_size} documents, spec {v.hash()}")
    print("time-stationary pi: " + " ".join(f"{p:.6g}" for p in v.stationary))
    print("embedded nu:        " + " ".join(f"{p:.6g}" for p in v.embedded))
    top = v.order[:5]
    print("top documents by q: " + ", ".join(f"{d}:{v.marginal[d - 1]:.4g}" for d in top))
    for x in cfg.cache_sizes:
        if float(x).is_integer() and x <= v.universe_size:
            print(f"static fault probability at x={x}: {v.tail_mass(int(x)):.6g}")
    return 0


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    results = _run_seeds(cfg, _simulate_seed, args.workers)
    w = _Writer(cfg.out_dir)
    with w.open("results.csv") as fh:
        write_results(_with_aggregates([r for res in results for r in res["rows"]]), fh)
    if cfg.costs is not None:
        with w.open("cost_results.csv") as fh:
            write_results(_with_aggregates([r for res in results for r in res["cost_rows"]]), fh)
    violations = sum(r["violations"] for r in results)
    w.manifest(cfg, "simulate", {"lower_bound_violations": violations})
    print(f"wrote {', '.join(w.files)} to {cfg.out_dir}")
    return 0


def cmd_curve(cfg: ExperimentConfig, args) -> int:
    v = cfg.validated
    xs = [int(x) for x in cfg.cache_sizes]
    if any(b <= a for a, b in zip(xs, xs[1:])) or xs[-1] > v.universe_size / 10:
        raise ConfigInvalid("experiment.cache_sizes: curves need strictly increasing sizes "
                            f"no larger than universe_size/10 = {v.universe_size / 10:g}")
    results = _run_seeds(cfg, _simulate_seed, args.workers)
    rows = _with_aggregates([r for res in results for r in res["rows"]])
    w = _Writer(cfg.out_dir)
    with w.open("curve_results.csv") as fh:
        write_results(rows, fh)
    final = {(r.policy, r.x): r for r in rows}  # aggregated rows come last
    for pc in cfg.policies:
        with w.open(f"curve_{pc.label}.csv") as fh:
            fh.write("x,ratio,ci_low,ci_high,static\n")
            for x in xs:
                r = final[(pc.label, x)]
                ps = v.tail_mass(x)
                ratio, se = r.point / ps, r.stderr / ps
                fh.write(f"{x},{ratio!r},{ratio - 1.96 * se!r},{ratio + 1.96 * se!r},{ps!r}\n")
    w.manifest(cfg, "curve", {"euler_gap": EULER_GAP,
                              "lower_bound_violations": sum(r["violations"] for r in results)})
    print(f"wrote {', '.join(w.files)} to {cfg.out_dir}")
    return 0


def cmd_lemma1(cfg: ExperimentConfig, args) -> int:
    if not cfg.probe_docs:
        raise ConfigInvalid("lemma1.docs: the lemma1 subcommand needs a [lemma1] table with docs")
    w = _Writer(cfg.out_dir)
    with w.open("lemma1.csv") as fh:
        fh.write("seed,doc,hit_prob,hit_stderr,product_form,identity_gap,identity_stderr,"
                 "ratio,ratio_stderr,mean_cycle_length,num_cycles\n")
        for seed in cfg.seeds:
            for p in lemma1_probe(cfg.validated, cfg.probe_docs, cfg.probe_cycles, seed, min_cycles=1):
                fh.write(f"{seed},{p.doc},{p.hit_prob!r},{p.hit_stderr!r},{p.product_form!r},"
                         f"{p.identity_gap!r},{p.identity_stderr!r},{p.ratio!r},{p.ratio_stderr!r},"
                         f"{p.mean_cycle_length!r},{p.num_cycles}\n")
    w.manifest(cfg, "lemma1")
    print(f"wrote {', '.join(w.files)} to {cfg.out_dir}")
    return 0


def _chosen(res) -> str:
    return " ".join(str(d) for d in sorted(res.chosen))


def cmd_placement(cfg: ExperimentConfig, args) -> int:
    q = cfg.validated.marginal
    n = len(q)
    w = _Writer(cfg.out_dir)
    bracket_failures = 0
    with w.open("placement.csv") as fh:
        fh.write("method,budget,objective,used_budget,split_index,bracket_ok,chosen\n")

        def row(method, budget, res, ok=""):
            split = "" if res.split_index is None else res.split_index
            fh.write(f"{method},{budget},{res.predicted_objective!r},{res.used_budget!r},{split},{ok},"
                     f"{_chosen(res)}\n")

        for x in cfg.cache_sizes:
            if float(x).is_integer() and x <= n:
                row("top_x", x, top_x(PlacementProblem(q, int(x))))
                if cfg.costs is not None:
                    prob = PlacementProblem(q, int(x), cost=cfg.costs, cost_bound=cfg.cost_bound)
                    row("cost_weighted_set", x, cost_weighted_set(prob))
                    _maybe_exact(row, "exact_cost", x, prob)
            if cfg.sizes is not None:
                prob = PlacementProblem(q, x, sizes=cfg.sizes)
                pre = size_aware_prefix(prob)
                ex = _maybe_exact(None, None, x, prob)
                ok = ""
                if ex is not None:
                    below, _ = prefix_sizes(prob, pre)
                    upper = exact_knapsack(PlacementProblem(q, below, sizes=cfg.sizes))
                    good = (ex.predicted_objective - BRACKET_TOL <= pre.predicted_objective
                            <= upper.predicted_objective + BRACKET_TOL)
                    bracket_failures += not good
                    ok = "yes" if good else "no"
                row("size_aware_prefix", x, pre, ok)
                if ex is not None:
                    row("exact_knapsack", x, ex)
    w.manifest(cfg, "placement", {"bracket_failures": bracket_failures})
    print(f"wrote {', '.join(w.files)} to {cfg.out_dir}")
    return 0


def _maybe_exact(row, name, x, prob):
    try:
        res = exact_knapsack(prob)
    except InstanceTooLarge:
        return None
    if row is not None:
        row(name, x, res)
    return res


def cmd_export_trace(cfg: ExperimentConfig, args) -> int:
    w = _Writer(cfg.out_dir)
    for seed in cfg.seeds:
        trace = generate(cfg.validated, cfg.stop, seed)
        with w.open(f"trace_{seed}.csv") as fh:
            trace.write_csv(fh)
    w.manifest(cfg, "export-trace")
    print(f"wrote {', '.join(w.files)} to {cfg.out_dir}")
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "curve": cmd_curve,
    "lemma1": cmd_lemma1,
    "placement": cmd_placement,
    "export-trace": cmd_export_trace,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="corrcache", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"corrcache {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, help="output directory (overrides outputs.dir)")
        sp.add_argument("--workers", type=int, help="parallel seeds (default: CORRCACHE_WORKERS or config)")
        sp.add_argument("--seed-override", help="comma-separated seeds replacing experiment.seeds")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.out_dir = args.out
        if args.seed_override:
            try:
                cfg.seeds = [int(s) for s in args.seed_override.split(",") if s.strip()]
            except ValueError:
                raise ConfigInvalid("--seed-override: must be a comma-separated list of integers") from None
            if not cfg.seeds or any(s < 0 for s in cfg.seeds):
                raise ConfigInvalid("--seed-override: need at least one non-negative seed")
        if args.workers is None:
            env = os.environ.get("CORRCACHE_WORKERS")
            try:
                args.workers = int(env) if env else cfg.workers
            except ValueError:
                raise ConfigInvalid("CORRCACHE_WORKERS: must be an integer") from None
        if args.workers < 1:
            raise ConfigInvalid("--workers: must be a positive integer")
        return COMMANDS[args.command](cfg, args)
    except CorrCacheError as e:
        code = getattr(e, "exit_code", 3)
        print(f"corrcache: {type(e).__name__}: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
