"""Command-line front end.

Each subcommand wraps one library entry point and exchanges data through
files: TrackML-style CSV pairs for events, JSON for the density model and
configs, a plain text format for QUBOs (with a JSON sidecar mapping
variables back to hit pairs), and run directories for reports.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

from .anneal import Schedule, backend_name, brute_force, simulated_anneal
from .event_model import (Event, GeneratorConfig, dedup_hits, generate_event,
                          ingest_trackml, write_trackml)
from .pipeline import (PipelineConfig, _preprocess_event, build_event_qubo,
                       build_kde, run_pipeline, run_staged_sparse,
                       scaling_benchmark, tune_params, write_run)
from .preprocess import Edge, KdeModel, write_candidates_csv
from .qubo import build_qubo, load_qubo, save_qubo


def _load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path) as fh:
        return PipelineConfig.from_json(fh.read())


def _load_event(args) -> Event:
    if getattr(args, "generate", None) is not None:
        cfg = GeneratorConfig(n_particles=args.generate, seed=args.seed or 0)
        return generate_event(cfg)
    if not args.hits or not args.truth:
        raise ValueError("either --hits/--truth or --generate is required")
    return ingest_trackml(args.hits, args.truth)


def _event_io_flags(p: argparse.ArgumentParser, allow_generate: bool = False) -> None:
    p.add_argument("--hits", help="hits CSV path")
    p.add_argument("--truth", help="truth CSV path")
    if allow_generate:
        p.add_argument("--generate", type=int, metavar="N",
                       help="generate a synthetic event with N tracks instead")


def _write_map_sidecar(path: str, q, edges: list[Edge], mode: str) -> None:
    doc = {
        "mode": mode,
        "vars": {str(v): {"edge_id": e.id, "a": e.a, "b": e.b, "prior": e.prior}
                 for v, e in zip(range(q.n), edges)},
    }
    with open(path + ".map.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_generate(args) -> int:
    cfg = GeneratorConfig(n_particles=args.tracks, noise_fraction=args.noise,
                          pt_range=(args.pt_min, args.pt_max),
                          eta_range=(args.eta_min, args.eta_max),
                          seed=args.seed)
    event = generate_event(cfg)
    write_trackml(event, f"{args.out_prefix}-hits.csv",
                  f"{args.out_prefix}-truth.csv")
    print(f"wrote {len(event.hits)} hits ({len(event.particles)} particles, "
          f"noise fraction {event.noise_fraction:.3f}) to "
          f"{args.out_prefix}-{{hits,truth}}.csv")
    return 0


def _cmd_ingest(args) -> int:
    if not args.hits or not args.truth:
        raise ValueError("--hits and --truth are required")
    event = ingest_trackml(args.hits, args.truth)
    n_before = len(event.hits)
    if args.dedup:
        event = dedup_hits(event)
    print(f"{len(event.hits)} hits, {len(event.particles)} particles, "
          f"noise fraction {event.noise_fraction:.3f}"
          + (f" ({n_before - len(event.hits)} duplicates removed)"
             if args.dedup else ""))
    if args.out_prefix:
        write_trackml(event, f"{args.out_prefix}-hits.csv",
                      f"{args.out_prefix}-truth.csv")
        print(f"rewrote canonical CSVs to {args.out_prefix}-{{hits,truth}}.csv")
    return 0


def _cmd_calibrate_kde(args) -> int:
    config = _load_config(args.config)
    model = build_kde(config)
    model.save(args.out)
    print(f"trained on {len(model.samples)} segments, "
          f"threshold {model.threshold:.6g} "
          f"(target recall {config.target_recall:.3f}, "
          f"achieved {model.threshold_recall:.3f}); saved to {args.out}")
    return 0


def _cmd_preprocess(args) -> int:
    config = _load_config(args.config)
    event = dedup_hits(_load_event(args))
    kde = KdeModel.load(args.kde)
    os.makedirs(args.out_dir, exist_ok=True)
    totals = {"edges": 0, "subgraphs": 0}
    graph_doc = {}
    for sector, edges, graphs in _preprocess_event(event, config, kde):
        write_candidates_csv(
            edges, os.path.join(args.out_dir,
                                f"candidates_sector_{sector.index:02d}.csv"))
        graph_doc[str(sector.index)] = [list(g.edge_ids) for g in graphs]
        totals["edges"] += len(edges)
        totals["subgraphs"] += len(graphs)
        if edges:
            sizes = [g.m for g in graphs]
            print(f"sector {sector.index:2d}: {len(edges):5d} candidates, "
                  f"{len(graphs):4d} sub-graphs (largest {max(sizes)})")
    with open(os.path.join(args.out_dir, "subgraphs.json"), "w") as fh:
        json.dump(graph_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"total: {totals['edges']} candidate edges in "
          f"{totals['subgraphs']} sub-graphs; wrote {args.out_dir}")
    return 0


def _cmd_build_qubo(args) -> int:
    config = _load_config(args.config)
    event = dedup_hits(_load_event(args))
    kde = KdeModel.load(args.kde)
    if args.whole_event:
        q, edges = build_event_qubo(event, config, kde, args.mode)
    else:
        if args.sector is None:
            raise ValueError("--sector is required unless --whole-event is set")
        prep = _preprocess_event(event, config, kde)
        sector, edges, graphs = prep[args.sector]
        if args.subgraph is not None:
            by_id = {e.id: e for e in edges}
            edges = [by_id[i] for i in graphs[args.subgraph].edge_ids]
        q = build_qubo(edges, event, config.qubo, args.mode)
    save_qubo(q, args.out)
    _write_map_sidecar(args.out, q, list(edges), args.mode)
    print(f"{q.n} variables, {len(q.quadratic)} couplings, "
          f"offset {q.offset:.6g}; wrote {args.out} (+.map.json)")
    return 0


def _cmd_solve(args) -> int:
    q = load_qubo(args.qubo)
    if args.brute_force:
        a = brute_force(q)
        method = "brute-force"
    else:
        schedule = Schedule(sweeps=args.sweeps, beta_init=args.beta0,
                            beta_fin=args.beta1)
        a = simulated_anneal(q, schedule, args.runs, args.seed)
        method = f"sa[{backend_name()}]"
    n_on = sum(a.bits)
    print(f"{method}: energy {a.energy:.6f}, {n_on}/{q.n} variables on")
    if args.out:
        doc = {"bits": list(a.bits), "energy": a.energy, "n": q.n,
               "method": method}
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _apply_overrides(config: PipelineConfig, args) -> PipelineConfig:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        updates["anneal_runs"] = args.runs
    if getattr(args, "sweeps", None) is not None:
        updates["sweeps"] = args.sweeps
    return replace(config, **updates) if updates else config


def _print_metrics(label: str, m: dict) -> None:
    print(f"{label}: purity {m['purity']:.4f}, efficiency "
          f"{m['efficiency']:.4f}, f1 {m['f1']:.4f} "
          f"({m['n_reconstructed']} candidates, "
          f"{m['n_true_reconstructed']} true, {m['n_true']} particles)")


def _cmd_reconstruct(args) -> int:
    config = _apply_overrides(_load_config(args.config), args)
    event = _load_event(args)
    kde = KdeModel.load(args.kde) if args.kde else None
    t0 = time.perf_counter()
    report = run_pipeline(event, config, kde)
    wall = time.perf_counter() - t0
    write_run(args.out_dir, config, report, wall)
    _print_metrics("reconstructed", report["metrics"])
    _print_metrics("random baseline", report["baseline"])
    print(f"run directory: {args.out_dir} (wall {wall:.1f}s, "
          f"backend {report['backend']})")
    return 0


def _cmd_staged(args) -> int:
    config = _apply_overrides(_load_config(args.config), args)
    event = _load_event(args)
    kde = KdeModel.load(args.kde) if args.kde else None
    t0 = time.perf_counter()
    report = run_staged_sparse(event, config, kde)
    wall = time.perf_counter() - t0
    write_run(args.out_dir, config, report, wall)
    for row in report["stages"]:
        _print_metrics(f"stage {row['stage']} ({row['mode']})", row["metrics"])
    print(f"run directory: {args.out_dir} (wall {wall:.1f}s)")
    return 0


def _cmd_bench_scaling(args) -> int:
    config = _apply_overrides(_load_config(args.config), args)
    counts = [int(tok) for tok in args.counts.split(",")]
    fit = scaling_benchmark(counts, config, args.events_per_point)
    os.makedirs(args.out_dir, exist_ok=True)
    cols = ["track_count", "event", "n_subqubos", "sum_m", "max_m",
            "proxy_mean", "ci_low", "ci_high"]
    with open(os.path.join(args.out_dir, "scaling.csv"), "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in fit.points:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float)
                              else str(row[c]) for c in cols) + "\n")
    with open(os.path.join(args.out_dir, "fit.json"), "w") as fh:
        json.dump({"c": fit.c, "stderr": fit.stderr}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    for row in fit.points:
        print(f"tracks {row['track_count']:4d} event {row['event']}: "
              f"{row['n_subqubos']} sub-QUBOs, proxy mean "
              f"{row['proxy_mean']:.1f} [{row['ci_low']:.1f}, "
              f"{row['ci_high']:.1f}]")
    print(f"exponential fit: {fit.summary()}; wrote {args.out_dir}")
    return 0


def _cmd_tune(args) -> int:
    config = _apply_overrides(_load_config(args.config), args)
    with open(args.space) as fh:
        raw = json.load(fh)
    space = {k: (float(v[0]), float(v[1])) for k, v in raw.items()}
    params, trials = tune_params(space, config, budget=args.budget,
                                 seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    names = sorted(space)
    with open(os.path.join(args.out_dir, "trials.csv"), "w") as fh:
        fh.write(",".join(["trial", "f1"] + names) + "\n")
        for t in trials:
            fh.write(",".join([str(t["trial"]), repr(t["f1"])]
                              + [repr(t[n]) for n in names]) + "\n")
    best = {n: getattr(params, "lambda_" if n == "lambda" else n)
            for n in names}
    with open(os.path.join(args.out_dir, "best_params.json"), "w") as fh:
        json.dump(best, fh, indent=2, sort_keys=True)
        fh.write("\n")
    top = max(trials, key=lambda t: (t["f1"], -t["trial"]))
    print(f"best f1 {top['f1']:.4f} at trial {top['trial']}: "
          + ", ".join(f"{n}={best[n]:.4g}" for n in names))
    print(f"wrote {args.out_dir}/trials.csv and best_params.json")
    return 0


def _cmd_report(args) -> int:
    with open(os.path.join(args.run_dir, "report.json")) as fh:
        report = json.load(fh)
    with open(os.path.join(args.run_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    print(f"run {args.run_dir}: mode {report.get('mode', '?')}, "
          f"backend {manifest['backend']}, "
          f"package {manifest['package_version']}, "
          f"config {manifest['config_sha256'][:12]}")
    if "stages" in report:
        for row in report["stages"]:
            _print_metrics(f"stage {row['stage']} ({row['mode']})",
                           row["metrics"])
    else:
        _print_metrics("metrics", report["metrics"])
        _print_metrics("baseline", report["baseline"])
        pool = report["candidate_pool"]
        print(f"candidate pool: {pool['n_candidates']} edges, "
              f"true fraction {pool['true_fraction']:.4f}, "
              f"recall ceiling {pool['recall_ceiling']:.3f}")
        hist = report["subgraph_size_histogram"]
        sizes = sorted(hist, key=int)
        print("sub-graph sizes: "
              + ", ".join(f"{m}x{hist[m]}" for m in sizes))
    timing_path = os.path.join(args.run_dir, "timing.json")
    if os.path.exists(timing_path):
        with open(timing_path) as fh:
            print(f"wall time: {json.load(fh)['wall_seconds']:.1f}s "
                  "(not part of the deterministic report)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qubotrack",
        description="Track reconstruction via QUBO formulation and "
                    "simulated annealing.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic event as CSV")
    p.add_argument("--tracks", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--pt-min", type=float, default=1.0)
    p.add_argument("--pt-max", type=float, default=10.0)
    p.add_argument("--eta-min", type=float, default=-0.8)
    p.add_argument("--eta-max", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("ingest", help="validate and summarize an event CSV pair")
    _event_io_flags(p)
    p.add_argument("--dedup", action="store_true",
                   help="drop same-layer duplicate hits per particle")
    p.add_argument("--out-prefix", help="rewrite canonical CSVs here")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("calibrate-kde",
                       help="train the segment density model and freeze its "
                            "selection threshold")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_calibrate_kde)

    p = sub.add_parser("preprocess",
                       help="sector the event and emit candidate edges and "
                            "sub-graphs")
    _event_io_flags(p)
    p.add_argument("--kde", required=True)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("build-qubo", help="write a QUBO as text")
    _event_io_flags(p)
    p.add_argument("--kde", required=True)
    p.add_argument("--config")
    p.add_argument("--sector", type=int)
    p.add_argument("--subgraph", type=int,
                   help="restrict to one sub-graph of the sector")
    p.add_argument("--whole-event", action="store_true",
                   help="single QUBO over all candidates (capped; benchmark "
                        "mode)")
    p.add_argument("--mode", choices=["full", "classic_dp", "partial"],
                   default="full")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_qubo)

    p = sub.add_parser("solve", help="anneal (or brute-force) a QUBO file")
    p.add_argument("--qubo", required=True)
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta0", type=float, default=0.1)
    p.add_argument("--beta1", type=float, default=10.0)
    p.add_argument("--brute-force", action="store_true")
    p.add_argument("--out", help="write the assignment as JSON")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("reconstruct", help="run the full pipeline on an event")
    _event_io_flags(p, allow_generate=True)
    p.add_argument("--kde", help="reuse a saved density model")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int, help="override anneal restarts")
    p.add_argument("--sweeps", type=int, help="override sweeps")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("staged", help="three-stage sparse reconstruction")
    _event_io_flags(p, allow_generate=True)
    p.add_argument("--kde")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--sweeps", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_staged)

    p = sub.add_parser("bench-scaling",
                       help="convergence-cost scaling over event sizes")
    p.add_argument("--config")
    p.add_argument("--counts", required=True,
                   help="comma-separated track counts, ascending")
    p.add_argument("--events-per-point", type=int, default=2)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_bench_scaling)

    p = sub.add_parser("tune", help="random-search the energy weights")
    p.add_argument("--config")
    p.add_argument("--space", required=True,
                   help="JSON file mapping parameter name to [lo, hi]")
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
