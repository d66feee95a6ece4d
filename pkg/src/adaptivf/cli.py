"""Command-line entry point: build indexes, profile scan latency, generate
workload traces, replay them with metrics, and compute ground truth.

Configuration comes from flags, optionally layered over a JSON config file
(flags win). Every randomized command takes --seed (default 42) and echoes
it into its outputs. Exit code 0 on success; failures print a single
"error: ..." line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .aps import ApsConfig
from .engine import EngineConfig
from .executor import NodeTopology
from .index import MultiLevelIndex
from .io import read_fvecs, write_fvecs, write_ivecs
from .kernels import Metric, brute_force_knn
from .maintenance import (
    LatencyProfile,
    MaintenanceConfig,
    export_actions,
    profile_scan_latency,
)
from .workload import (
    WorkloadSpec,
    engine_from_trace,
    generate_trace,
    read_trace,
    replay,
    write_trace,
)

DEFAULT_PROFILE_GRID = [50, 100, 250, 500, 1000, 2500, 5000, 10000]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptivf",
        description="adaptive partitioned vector search engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path,
                       help="JSON file of flag defaults (flags win)")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (42)")
        p.add_argument("--output-dir", type=Path, default=Path("."),
                       help="directory for output files")

    p = sub.add_parser("build", help="build an index from an fvecs dataset")
    common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--metric", default="l2", choices=["l2", "ip"])
    p.add_argument("--partitions", type=int, default=None,
                   help="data-level partition count (default sqrt(n))")
    p.add_argument("--levels", type=int, nargs="*", default=None,
                   help="full partition-count list, data level first")
    p.add_argument("--build-iters", type=int, default=10)

    p = sub.add_parser("profile", help="measure the scan latency profile")
    common(p)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--metric", default="l2", choices=["l2", "ip"])
    p.add_argument("--grid", type=str, default=None,
                   help="comma-separated partition sizes")
    p.add_argument("--repetitions", type=int, default=9)

    p = sub.add_parser("generate", help="generate a workload trace")
    common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--metric", default="l2", choices=["l2", "ip"])
    p.add_argument("--ops", type=int, default=100)
    p.add_argument("--mix", type=str, default="0.5,0.5,0.0",
                   help="query,insert,delete fractions")
    p.add_argument("--vectors-per-op", type=int, default=100)
    p.add_argument("--queries-per-op", type=int, default=10)
    p.add_argument("--initial-size", type=int, default=1000)
    p.add_argument("--skew-clusters", type=int, default=20)
    p.add_argument("--skew-concentration", type=float, default=0.0)
    p.add_argument("--query-noise", type=float, default=0.1)
    p.add_argument("--max-live", type=int, default=None)
    p.add_argument("--maintain-every", type=int, default=1)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--recall-target", type=str, default="0.9")

    p = sub.add_parser("run", help="replay a trace and emit metrics")
    common(p)
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--profile", type=Path, default=None,
                   help="latency profile JSON (measured if omitted)")
    p.add_argument("--partitions", type=int, default=None)
    p.add_argument("--levels", type=int, nargs="*", default=None)
    p.add_argument("--build-iters", type=int, default=10)
    p.add_argument("--k", type=int, default=None,
                   help="override the trace's k")
    p.add_argument("--recall-target", type=str, default=None,
                   help="target or comma-separated sweep (trace default)")
    p.add_argument("--f-m", type=float, default=0.1)
    p.add_argument("--upper-f-m", type=float, default=0.25)
    p.add_argument("--tau-rho", type=float, default=0.01)
    p.add_argument("--tau", type=float, default=250e-9)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--refine-radius", type=int, default=50)
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads per node")
    p.add_argument("--nodes", type=int, default=1,
                   help="logical node groups")
    p.add_argument("--nprobe", type=int, default=20,
                   help="fixed scan count used with --no-aps")
    p.add_argument("--no-aps", action="store_true",
                   help="fixed nprobe instead of adaptive termination")
    p.add_argument("--no-maintenance", action="store_true")
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--no-reject", action="store_true")
    p.add_argument("--baseline-size-threshold", action="store_true",
                   help="size-threshold maintenance instead of the cost model")

    p = sub.add_parser("groundtruth", help="exact k-NN ids for a query file")
    common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--metric", default="l2", choices=["l2", "ip"])
    p.add_argument("--k", type=int, default=100)

    return parser


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    """Layer config-file values under explicit flags (flags win)."""
    if getattr(args, "config", None) is None:
        return
    with open(args.config) as fh:
        overrides = json.load(fh)
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ValueError(f"unknown config key {key!r}")
        flag = "--" + key.replace("_", "-")
        given = any(a == flag or a.startswith(flag + "=") for a in argv)
        if not given:
            setattr(args, attr, value)


def _load_dataset(path: Path) -> np.ndarray:
    data = read_fvecs(path)
    if data.size == 0:
        raise ValueError(f"{path}: dataset is empty")
    return data


def _seed(args) -> int:
    return 42 if args.seed is None else args.seed


def cmd_build(args) -> int:
    vectors = _load_dataset(args.dataset)
    levels = args.levels if args.levels else (
        [args.partitions] if args.partitions else None)
    index = MultiLevelIndex.build(
        vectors, n_partitions=levels, metric=Metric.parse(args.metric),
        seed=_seed(args), n_iters=args.build_iters,
    )
    args.output_dir.mkdir(parents=True, exist_ok=True)
    out = args.output_dir / "index.bin"
    index.save(out)
    print(json.dumps({
        "index": str(out), "vectors": index.n_vectors, "dim": index.d,
        "levels": index.n_levels,
        "partitions": [index.n_partitions(l) for l in range(index.n_levels)],
        "seed": _seed(args),
    }))
    return 0


def cmd_profile(args) -> int:
    grid = ([int(x) for x in args.grid.split(",")] if args.grid
            else DEFAULT_PROFILE_GRID)
    profile = profile_scan_latency(args.dim, Metric.parse(args.metric), grid,
                                   repetitions=args.repetitions,
                                   seed=_seed(args))
    args.output_dir.mkdir(parents=True, exist_ok=True)
    out = args.output_dir / "latency_profile.json"
    profile.save(out)
    print(json.dumps({"profile": str(out), "sizes": profile.sizes.tolist(),
                      "latencies_s": profile.latencies.tolist(),
                      "seed": _seed(args)}))
    return 0


def cmd_generate(args) -> int:
    vectors = _load_dataset(args.dataset)
    mix = [float(x) for x in args.mix.split(",")]
    if len(mix) != 3:
        raise ValueError("--mix needs query,insert,delete fractions")
    spec = WorkloadSpec(
        n_operations=args.ops, query_fraction=mix[0], insert_fraction=mix[1],
        delete_fraction=mix[2], vectors_per_op=args.vectors_per_op,
        queries_per_op=args.queries_per_op, initial_size=args.initial_size,
        skew_clusters=args.skew_clusters,
        skew_concentration=args.skew_concentration,
        query_noise=args.query_noise, max_live=args.max_live,
        maintain_every=args.maintain_every, seed=_seed(args), k=args.k,
        recall_target=float(args.recall_target),
    )
    trace = generate_trace(vectors, spec, metric=Metric.parse(args.metric))
    args.output_dir.mkdir(parents=True, exist_ok=True)
    out = args.output_dir / "trace.jsonl"
    write_trace(trace, out)
    print(json.dumps({"trace": str(out), "operations": trace.counts(),
                      "seed": spec.seed}))
    return 0


def _engine_config(args, trace, target: float) -> EngineConfig:
    aps = ApsConfig(
        k=args.k or trace.k, recall_target=target, f_m=args.f_m,
        tau_rho=args.tau_rho, upper_f_m=args.upper_f_m,
        fixed_nprobe=args.nprobe if args.no_aps else None,
    )
    maintenance = MaintenanceConfig(
        tau=args.tau, alpha=args.alpha, refine_radius=args.refine_radius,
        enable_refinement=not args.no_refine,
        enable_rejection=not args.no_reject,
        seed=_seed(args),
    )
    policy = "none" if args.no_maintenance else (
        "size-threshold" if args.baseline_size_threshold else "cost")
    levels = args.levels if args.levels else (
        [args.partitions] if args.partitions else None)
    return EngineConfig(
        n_partitions=levels, metric=trace.metric, seed=_seed(args),
        build_iters=args.build_iters, aps=aps, maintenance=maintenance,
        topology=NodeTopology(n_nodes=args.nodes,
                              workers_per_node=args.threads),
        use_parallel=args.threads * args.nodes > 1,
        maintenance_policy=policy,
    )


def cmd_run(args) -> int:
    trace = read_trace(args.trace)
    if args.profile is not None:
        profile = LatencyProfile.load(args.profile)
    else:
        profile = profile_scan_latency(trace.d, trace.metric,
                                       DEFAULT_PROFILE_GRID,
                                       repetitions=3, seed=_seed(args))
    targets = ([float(x) for x in args.recall_target.split(",")]
               if args.recall_target else [trace.recall_target])
    args.output_dir.mkdir(parents=True, exist_ok=True)
    for target in targets:
        tag = f"_{target:g}" if len(targets) > 1 else ""
        engine = engine_from_trace(trace, profile,
                                   _engine_config(args, trace, target))
        metrics = replay(trace, engine,
                         maintenance_enabled=not args.no_maintenance)
        metrics.write_csv(args.output_dir / f"metrics{tag}.csv")
        summary = metrics.summary()
        summary["seed"] = _seed(args)
        summary["recall_target"] = target
        with open(args.output_dir / f"summary{tag}.json", "w") as fh:
            json.dump(summary, fh, indent=1)
        actions_path = args.output_dir / f"actions{tag}.jsonl"
        actions_path.write_text("")
        export_actions(engine.actions, actions_path)
        print(json.dumps(summary))
    return 0


def cmd_groundtruth(args) -> int:
    vectors = _load_dataset(args.dataset)
    queries = _load_dataset(args.queries)
    results = brute_force_knn(queries, vectors, k=args.k,
                              metric=Metric.parse(args.metric))
    k_eff = min(args.k, vectors.shape[0])
    ids = np.stack([r.ids for r in results]).astype(np.int32)
    scores = np.stack([r.scores for r in results]).astype(np.float32)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    ids_path = args.output_dir / "groundtruth.ivecs"
    write_ivecs(ids_path, ids)
    write_fvecs(args.output_dir / "groundtruth_scores.fvecs", scores)
    print(json.dumps({"groundtruth": str(ids_path),
                      "queries": int(queries.shape[0]), "k": k_eff}))
    return 0


_COMMANDS = {
    "build": cmd_build,
    "profile": cmd_profile,
    "generate": cmd_generate,
    "run": cmd_run,
    "groundtruth": cmd_groundtruth,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, argv)
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
