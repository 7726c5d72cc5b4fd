"""Command-line harness: instance generation, solver runs, experiments, metrics.

Exit codes: 0 success, 2 bad input, 3 ran out of time before convergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import dataclass


import gclr
from gclr import exact, heuristics, synth
from gclr.core import (ContractError, DegeneracyError, GuardError,
                       InfeasibilityError, ParseError, parse_dataset)

ALGORITHMS = ("cg", "cg-plain", "cg-heur", "ga-lloyd", "spaeth", "two-stage", "brute")


# ---------------------------------------------------------------------------
# Metrics.

def relative_improvement(sse1: float, sse2: float) -> float:
    """(sse1 - sse2) / sse2; positive means the second algorithm is better."""
    if sse2 <= 0:
        raise ContractError("reference SSE must be positive")
    return (sse1 - sse2) / sse2


def opt_gap(sse_algo: float, sse_cg: float) -> float:
    """Relative excess over the exact objective."""
    if sse_cg <= 0:
        raise ContractError("CG SSE must be positive")
    return (sse_algo - sse_cg) / sse_cg


def gap_from_best(sse_algo: float, sse_all) -> float:
    """Relative excess over the best value among all competitors."""
    sse_all = list(sse_all)
    if not sse_all:
        raise ContractError("need at least one competitor SSE")
    best = min(sse_all)
    if best <= 0:
        raise ContractError("best SSE must be positive")
    return (sse_algo - best) / best


# ---------------------------------------------------------------------------
# Algorithm dispatch shared by `solve` and the experiment harness.

def run_algorithm(name: str, dataset, seed: int = 0, time_limit: float | None = None,
                  trace=None, params: dict | None = None):
    """Run one solver; returns (Partition, sse, converged)."""
    params = params or {}
    deadline = None if time_limit is None else time.perf_counter() + time_limit
    if name == "cg":
        res = exact.run_cg(dataset, seed=seed, deadline=deadline, trace=trace)
        return res.partition, res.objective, res.converged
    if name == "cg-plain":
        res = exact.run_cg_plain(dataset, seed=seed, deadline=deadline, trace=trace)
        return res.partition, res.objective, res.converged
    if name == "cg-heur":
        part, sse = heuristics.run_cg_heuristic(
            dataset, R=int(params.get("R", 8)), seed=seed,
            deadline=deadline, trace=trace)
        return part, sse, True
    if name == "ga-lloyd":
        ga = heuristics.GaParams(H=int(params.get("pop_size", 10)),
                                 p=float(params.get("mutation_prob", 0.01)),
                                 max_stall=int(params.get("max_stall", 50)),
                                 seed=seed)
        part, sse = heuristics.run_ga_lloyd(dataset, ga, deadline=deadline, trace=trace)
        return part, sse, True
    if name == "spaeth":
        part, sse = heuristics.run_spaeth(dataset, seed=seed, deadline=deadline, trace=trace)
        return part, sse, True
    if name == "two-stage":
        part, sse = heuristics.run_two_stage(
            dataset, discount_col=int(params.get("discount_col", 0)))
        return part, sse, True
    if name == "brute":
        part, sse = exact.brute_force_optimum(dataset)
        return part, sse, True
    raise ContractError(f"unknown algorithm {name!r}")


# ---------------------------------------------------------------------------
# Experiment harness.

@dataclass
class RunRecord:
    instance_id: str
    algorithm: str
    params: dict
    sse: float
    wall_time_ms: float
    partition: list
    converged: bool
    error: str = ""


@dataclass
class ExperimentConfig:
    instances: list
    algorithms: list
    K: list
    n: int = 1
    repetitions: int = 1
    seed0: int = 0
    time_limit: float = 600.0
    out_dir: str = "results"

    def __post_init__(self):
        if self.repetitions < 1:
            raise ContractError("repetitions must be >= 1")
        if self.time_limit <= 0:
            raise ContractError("time_limit must be positive")


def _load_instance(spec, n: int, K: int):
    """A path loads a CSV; a dict drives the generator. Returns (id, dataset)."""
    if isinstance(spec, str):
        ds = parse_dataset(spec, n=n, K=K)
        return spec, ds
    cfg = synth.SyntheticConfig(I=int(spec["I"]), K=K, seed=int(spec.get("seed", 0)),
                                noise_scale=float(spec.get("noise_scale", 5.0)), n=n)
    inst = synth.gen_type2(cfg) if int(spec.get("type", 1)) == 2 else synth.gen_type1(cfg)
    iid = f"{cfg.I}_{K}-t{spec.get('type', 1)}-s{cfg.seed}"
    return iid, inst.dataset

def run_experiment(cfg: ExperimentConfig):
    """Execute the full (instance x algorithm x K x seed) grid.

    Returns (records, traces); traces maps a record index to a list of
    (elapsed_seconds, best_sse) points.
    """
    records, traces = [], {}
    for K in cfg.K:
        for spec in cfg.instances:
            try:
                iid, ds = _load_instance(spec, cfg.n, K)
            except Exception as exc:  # record the cell failure, keep going
                records.append(RunRecord(str(spec), "-", {"K": K}, float("nan"),
                                         0.0, [], False, error=str(exc)))
                continue
            for algo in cfg.algorithms:
                name = algo["name"]
                params = dict(algo.get("params", {}))
                for rep in range(cfg.repetitions):
                    seed = cfg.seed0 + rep
                    points = []
                    t0 = time.perf_counter()
                    try:
                        part, sse, conv = run_algorithm(
                            name, ds, seed=seed, time_limit=cfg.time_limit,
                            trace=lambda el, v: points.append((el, v)),
                            params=params)
                        rec = RunRecord(iid, name, {**params, "K": K, "seed": seed},
                                        sse, 1000 * (time.perf_counter() - t0),
                                        [int(k) for k in part.assignment], conv)
                    except Exception as exc:
                        rec = RunRecord(iid, name, {**params, "K": K, "seed": seed},
                                        float("nan"),
                                        1000 * (time.perf_counter() - t0),
                                        [], False, error=str(exc))
                    traces[len(records)] = points
                    records.append(rec)
    return records, traces


def write_experiment_outputs(cfg: ExperimentConfig, records, traces, out_dir=None):
    import os

    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    rec_path = os.path.join(out, "records.csv")
    with open(rec_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "instance_id", "algorithm", "params", "sse",
                    "wall_time_ms", "converged", "partition", "error"])
        for idx, r in enumerate(records):
            w.writerow([idx, r.instance_id, r.algorithm, json.dumps(r.params, sort_keys=True),
                        f"{r.sse:.17g}", f"{r.wall_time_ms:.3f}", int(r.converged),
                        " ".join(map(str, r.partition)), r.error])
    trace_path = os.path.join(out, "traces.csv")
    with open(trace_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "elapsed_s", "best_sse"])
        for idx, points in traces.items():
            best = float("inf")
            for el, v in points:
                best = min(best, v)   # traces must be monotone non-increasing
                w.writerow([idx, f"{el:.6f}", f"{best:.17g}"])
    digest = hashlib.sha256(json.dumps(
        {"instances": [str(s) for s in cfg.instances], "algorithms": cfg.algorithms,
         "K": cfg.K, "n": cfg.n, "repetitions": cfg.repetitions,
         "seed0": cfg.seed0, "time_limit": cfg.time_limit},
        sort_keys=True).encode()).hexdigest()
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump({"config_sha256": digest, "version": gclr.__version__,
                   "records": len(records)}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return rec_path, trace_path


# ---------------------------------------------------------------------------
# Subcommands.

def _cmd_gen(args) -> int:
    cfg = synth.SyntheticConfig(I=args.entities, K=args.k, seed=args.seed,
                                noise_scale=args.noise_scale, n=args.n)
    inst = synth.gen_type2(cfg) if args.type == 2 else synth.gen_type1(cfg)
    synth.write_instance(inst, args.out)
    print(f"wrote {args.out} ({cfg.I} entities, type {args.type})")
    return 0


def _cmd_solve(args) -> int:
    ds = parse_dataset(getattr(args, "in"), n=args.n, K=args.k)
    t0 = time.perf_counter()
    params = {"R": args.groups, "pop_size": args.pop_size,
              "mutation_prob": args.mutation_prob, "max_stall": args.max_stall,
              "discount_col": args.discount_col}
    part, sse, converged = run_algorithm(args.algo, ds, seed=args.seed,
                                         time_limit=args.time_limit, params=params)
    payload = {
        "algorithm": args.algo,
        "sse": sse,
        "wall_time_ms": 1000 * (time.perf_counter() - t0),
        "converged": converged,
        "seed": args.seed,
        "partition": {ds.entities[i].id: int(k) for i, k in enumerate(part.assignment)},
    }
    text = json.dumps(payload, indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0 if converged else 3


def _cmd_bench(args) -> int:
    with open(args.config) as fh:
        raw = json.load(fh)
    cfg = ExperimentConfig(**raw)
    records, traces = run_experiment(cfg)
    rec_path, trace_path = write_experiment_outputs(cfg, records, traces)
    print(f"wrote {rec_path} and {trace_path} ({len(records)} records)")
    return 0


def _cmd_metrics(args) -> int:
    """Augment a records CSV with OptGap (vs the cg row) and Gap-from-best."""
    with open(args.records, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cells: dict = {}
    for r in rows:
        if r["error"]:
            continue
        key = (r["instance_id"], json.loads(r["params"]).get("K"))
        cells.setdefault(key, []).append(r)
    w = csv.writer(sys.stdout)
    w.writerow(["instance_id", "K", "algorithm", "seed", "sse", "opt_gap", "gap_from_best"])
    for (iid, K), group in cells.items():
        sses = [float(r["sse"]) for r in group]
        cg = [float(r["sse"]) for r in group if r["algorithm"] == "cg"]
        ref = min(cg) if cg else None
        for r in group:
            sse = float(r["sse"])
            og = f"{opt_gap(sse, ref):.6f}" if ref else ""
            w.writerow([iid, K, r["algorithm"], json.loads(r["params"]).get("seed"),
                        f"{sse:.17g}", og, f"{gap_from_best(sse, sses):.6f}"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gclr",
                                 description="Cluster-wise linear regression solvers")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic instance")
    g.add_argument("--type", type=int, choices=(1, 2), default=1)
    g.add_argument("--entities", type=int, required=True)
    g.add_argument("--k", type=int, default=1)
    g.add_argument("--n", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-scale", type=float, default=5.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)

    s = sub.add_parser("solve", help="run one algorithm on one instance")
    s.add_argument("--algo", choices=ALGORITHMS, required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--time-limit", type=float, default=None)
    s.add_argument("--in", dest="in", required=True)
    s.add_argument("--out", default=None)
    s.add_argument("--groups", type=int, default=8, help="R for cg-heur")
    s.add_argument("--pop-size", type=int, default=10)
    s.add_argument("--mutation-prob", type=float, default=0.01)
    s.add_argument("--max-stall", type=int, default=50)
    s.add_argument("--discount-col", type=int, default=0)
    s.set_defaults(func=_cmd_solve)

    b = sub.add_parser("bench", help="run an experiment grid from a JSON config")
    b.add_argument("--config", required=True)
    b.set_defaults(func=_cmd_bench)

    m = sub.add_parser("metrics", help="compute comparison metrics from records")
    m.add_argument("--records", required=True)
    m.set_defaults(func=_cmd_metrics)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ContractError, InfeasibilityError, DegeneracyError,
            GuardError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
