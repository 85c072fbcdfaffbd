"""End-to-end orchestration: events in, scored track candidates and
serializable reports out.

Every stage communicates through plain data (events, edge lists, QUBOs,
assignments), each stage is deterministic given the single top-level seed,
and reports never embed wall-clock times, so rerunning a configuration
reproduces its report byte for byte. Wall-clock numbers go to a separate
timing sidecar; the machine-independent cost proxy inside reports is
sweeps * variables.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.special import logsumexp

from . import __version__
from .anneal import (ConvergenceProtocol, ConvergenceStats, Schedule,
                     backend_name, bootstrap_mean, measure_convergence,
                     random_baseline, simulated_anneal)
from .event_model import (Event, GeneratorConfig, dedup_hits, generate_event,
                          true_edges)
from .preprocess import (Edge, KdeModel, SubGraph, calibrate_threshold,
                         sectorize, select_candidates, subgraph, train_kde)
from .qubo import Qubo, QuboParams, build_qubo, segment_length
from .tracking import (Metrics, assemble_tracks, binned_metrics, merge_sectors,
                       score)

_MASK = (1 << 64) - 1
CONFIG_VERSION = 1
FULL_EVENT_CAP = 2000

_QUBO_JSON_KEYS = {
    "lambda": "lambda_", "rho": "rho", "eta_bias": "eta_bias", "zeta": "zeta",
    "alpha": "alpha", "beta": "beta", "gamma": "gamma", "tau": "tau",
    "scale_r": "scale_r", "scale_phi": "scale_phi", "scale_z": "scale_z",
}


def derive_seed(master: int, *labels) -> int:
    """Stable child seed for a pipeline stage. Labels may be ints or strings."""
    s = master & _MASK
    for label in labels:
        v = label & _MASK if isinstance(label, int) else zlib.crc32(str(label).encode())
        s = ((s ^ v) * 0x100000001B3 + 0x9E3779B9) & _MASK
    return s


@dataclass
class PipelineConfig:
    seed: int = 0
    generator: GeneratorConfig | None = None
    qubo: QuboParams = field(default_factory=QuboParams)
    sweeps: int = 1000
    beta_init: float = 0.1
    beta_fin: float = 10.0
    anneal_runs: int = 1000
    target_recall: float = 0.93
    max_degree: int = 5
    min_hits: int = 3
    exact_match: bool = False
    kde_max_samples: int | None = 4000
    calibration_events: int = 3
    protocol: ConvergenceProtocol = field(default_factory=ConvergenceProtocol)

    def schedule(self) -> Schedule:
        return Schedule(sweeps=self.sweeps, beta_init=self.beta_init,
                        beta_fin=self.beta_fin)

    def validate(self) -> None:
        self.schedule()
        if self.anneal_runs < 1:
            raise ValueError("anneal_runs must be >= 1")
        if not 0.0 < self.target_recall <= 1.0:
            raise ValueError("target_recall must lie in (0, 1]")
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")
        if self.min_hits < 2:
            raise ValueError("min_hits must be >= 2")
        if self.calibration_events < 1:
            raise ValueError("calibration_events must be >= 1")
        if self.generator is not None:
            self.generator.validate()

    def to_json(self) -> str:
        doc = {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "generator": asdict(self.generator) if self.generator else None,
            "qubo": {k: getattr(self.qubo, v) for k, v in _QUBO_JSON_KEYS.items()},
            "sweeps": self.sweeps,
            "beta_init": self.beta_init,
            "beta_fin": self.beta_fin,
            "anneal_runs": self.anneal_runs,
            "target_recall": self.target_recall,
            "max_degree": self.max_degree,
            "min_hits": self.min_hits,
            "exact_match": self.exact_match,
            "kde_max_samples": self.kde_max_samples,
            "calibration_events": self.calibration_events,
            "protocol": asdict(self.protocol),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise ValueError("config must be a JSON object")
        version = doc.pop("version", None)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version!r}")
        known = {"seed", "generator", "qubo", "sweeps", "beta_init", "beta_fin",
                 "anneal_runs", "target_recall", "max_degree", "min_hits",
                 "exact_match", "kde_max_samples", "calibration_events",
                 "protocol"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        gen = kwargs.pop("generator", None)
        if gen is not None:
            for key in ("pt_range", "eta_range", "layer_radii"):
                if key in gen:
                    gen[key] = tuple(gen[key])
            gen = GeneratorConfig(**gen)
        qubo_doc = kwargs.pop("qubo", None)
        params = QuboParams(**{_QUBO_JSON_KEYS[k]: v for k, v in qubo_doc.items()}) \
            if qubo_doc else QuboParams()
        proto_doc = kwargs.pop("protocol", None)
        proto = ConvergenceProtocol(**proto_doc) if proto_doc else ConvergenceProtocol()
        cfg = cls(generator=gen, qubo=params, protocol=proto, **kwargs)
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def calibration_events(config: PipelineConfig) -> list[Event]:
    """Synthetic events reserved for KDE training and threshold calibration,
    generated from the config's geometry on seeds disjoint from any event
    the pipeline scores."""
    base = config.generator or GeneratorConfig(n_particles=100)
    events = []
    for i in range(config.calibration_events):
        gcfg = replace(base, seed=derive_seed(config.seed, "calibration", i))
        events.append(dedup_hits(generate_event(gcfg)))
    return events


def build_kde(config: PipelineConfig) -> KdeModel:
    events = calibration_events(config)
    model = train_kde(events, max_samples=config.kde_max_samples)
    calibrate_threshold(model, events, config.target_recall)
    return model


def _edge_bias(edges: Sequence[Edge], params: QuboParams,
               event: Event) -> dict[int, float]:
    """Per-edge pruning bias: the edge's optimistic single-edge gain in the
    QUBO.

    This is the linear benefit (beta * prior - gamma) plus the edge's
    best-case half-share of a chain reward, (1 + rho) / (2 * length) for a
    perfectly aligned continuation. Including the length part mirrors the
    energy's preference for short segments, so the degree cap keeps the
    edges the annealer could actually profit from instead of breaking ties
    between a track's consecutive and layer-skipping edges on prior noise.
    """
    hits = event.hit_index
    return {e.id: params.beta * e.prior - params.gamma
            + (1.0 + params.rho)
            / (2.0 * segment_length(hits[e.a], hits[e.b], params))
            for e in edges}


def _preprocess_event(event: Event, config: PipelineConfig, kde: KdeModel):
    """Per sector: candidate edges and their sub-graph decomposition."""
    out = []
    for sector in sectorize(event):
        edges = select_candidates(sector, event, kde, config.target_recall)
        graphs = subgraph(edges, _edge_bias(edges, config.qubo, event),
                          config.max_degree)
        out.append((sector, edges, graphs))
    return out


def _anneal_subgraphs(event: Event, edges: Sequence[Edge],
                      graphs: Sequence[SubGraph], config: PipelineConfig,
                      mode: str, seed: int) -> tuple[list[Edge], int]:
    """Anneal each sub-graph's QUBO; returns (selected edges, cost proxy)."""
    by_id = {e.id: e for e in edges}
    schedule = config.schedule()
    selected: list[Edge] = []
    proxy = 0
    for g in graphs:
        sub = [by_id[i] for i in g.edge_ids]
        q = build_qubo(sub, event, config.qubo, mode)
        a = simulated_anneal(q, schedule, config.anneal_runs,
                             derive_seed(seed, g.index))
        selected.extend(e for e, bit in zip(sub, a.bits) if bit)
        proxy += schedule.sweeps * config.anneal_runs * q.n
    return selected, proxy


def _sector_truth_metrics(sector_candidates: Mapping[int, Sequence],
                          sector_hits: Mapping[int, set[int]],
                          event: Event, config: PipelineConfig):
    """Per-sector metrics for spread estimates.

    A sector's truth reference is the set of particles fully contained in
    it, so sector efficiencies are comparable to the global one.
    """
    spreads = {"purity": [], "efficiency": []}
    for k, assembled in sector_candidates.items():
        hits = sector_hits[k]
        contained = [p for p in event.particles
                     if len(p.hit_ids) >= config.min_hits
                     and all(h in hits for h in p.hit_ids)]
        if not contained:
            continue
        cands = [c for c in assembled if len(c.hit_ids) >= config.min_hits]
        matched = set()
        n_true_recon = 0
        for c in cands:
            pids = {event.hit_index[h].particle_id for h in c.hit_ids}
            if len(pids) != 1:
                continue
            pid = pids.pop()
            p = event.particle_index.get(pid)
            if p and len(c.hit_ids) >= 0.5 * len(p.hit_ids):
                n_true_recon += 1
                matched.add(pid)
        if cands:
            spreads["purity"].append(n_true_recon / len(cands))
        spreads["efficiency"].append(
            len(matched & {p.particle_id for p in contained}) / len(contained))
    out = {}
    for key, vals in spreads.items():
        out[key] = float(np.std(vals, ddof=1)) if len(vals) >= 2 else None
    return out


def _default_bins(event: Event, config: PipelineConfig) -> dict[str, list[float]]:
    particles = [p for p in event.particles if len(p.hit_ids) >= config.min_hits]
    gen = config.generator
    if gen is not None:
        pt_lo, pt_hi = gen.pt_range
        eta_lo, eta_hi = gen.eta_range
        max_len = len(gen.layer_radii)
    else:
        pt_lo = min((p.pt for p in particles), default=0.0)
        pt_hi = max((p.pt for p in particles), default=1.0)
        eta_lo = min((p.eta for p in particles), default=-1.0)
        eta_hi = max((p.eta for p in particles), default=1.0)
        max_len = max((len(p.hit_ids) for p in particles), default=3)
    eps = 1e-9
    return {
        "pt": list(np.linspace(pt_lo - eps, pt_hi + eps, 6)),
        "length": [k + 0.5 for k in range(config.min_hits - 1, max_len + 1)],
        "phi": list(np.linspace(-math.pi - eps, math.pi + eps, 9)),
        "eta": list(np.linspace(eta_lo - eps, eta_hi + eps, 9)),
    }


def _report_skeleton(config: PipelineConfig) -> dict:
    return {
        "report_version": 1,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "backend": backend_name(),
    }


def _candidate_pool(per_sector_edges: Mapping[int, Sequence[Edge]],
                    event: Event) -> tuple[list[Edge], float]:
    """Merged candidate set and its true-edge fraction."""
    pool = merge_sectors(per_sector_edges)
    truth = true_edges(event)
    n_true = sum(1 for e in pool if (e.a, e.b) in truth)
    return pool, (n_true / len(pool) if pool else 0.0)


def run_pipeline(event: Event, config: PipelineConfig,
                 kde: KdeModel | None = None) -> dict:
    """Reconstruct one event: dedup, sectorize, select candidates, decompose,
    anneal the full QUBO per sub-graph, merge sectors, assemble and score.

    Returns the report as a JSON-serializable dict, including a
    density-matched random baseline and binned metrics.
    """
    config.validate()
    event = dedup_hits(event)
    kde = kde or build_kde(config)
    prep = _preprocess_event(event, config, kde)

    selected_by_sector: dict[int, list[Edge]] = {}
    edges_by_sector: dict[int, list[Edge]] = {}
    sector_hits: dict[int, set[int]] = {}
    subgraph_sizes: list[int] = []
    proxy_total = 0
    for sector, edges, graphs in prep:
        sel, proxy = _anneal_subgraphs(event, edges, graphs, config, "full",
                                       derive_seed(config.seed, "sa", sector.index))
        selected_by_sector[sector.index] = sel
        edges_by_sector[sector.index] = edges
        sector_hits[sector.index] = set(sector.hit_ids)
        subgraph_sizes.extend(g.m for g in graphs)
        proxy_total += proxy

    merged = merge_sectors(selected_by_sector)
    candidates = assemble_tracks(merged, event, config.qubo)
    metrics = score(candidates, event, config.min_hits, config.exact_match)
    sector_candidates = {k: assemble_tracks(sel, event, config.qubo)
                         for k, sel in selected_by_sector.items()}
    spread = _sector_truth_metrics(sector_candidates, sector_hits, event, config)
    metrics = replace(metrics, sigma_purity=spread["purity"],
                      sigma_efficiency=spread["efficiency"])

    pool, true_fraction = _candidate_pool(edges_by_sector, event)
    baseline_bits = random_baseline(len(pool), true_fraction,
                                    derive_seed(config.seed, "baseline"))
    baseline_sel = [e for e, b in zip(pool, baseline_bits) if b]
    baseline = score(assemble_tracks(baseline_sel, event, config.qubo),
                     event, config.min_hits, config.exact_match)

    bins = _default_bins(event, config)
    binned = {var: binned_metrics(candidates, event, var, edges,
                                  config.min_hits, config.exact_match,
                                  sector_candidates)
              for var, edges in bins.items()}

    hist: dict[str, int] = {}
    for m in sorted(subgraph_sizes):
        hist[str(m)] = hist.get(str(m), 0) + 1

    report = _report_skeleton(config)
    report.update({
        "mode": "standard",
        "metrics": metrics.to_dict(),
        "baseline": baseline.to_dict(),
        "candidate_pool": {
            "n_candidates": len(pool),
            "true_fraction": true_fraction,
            "recall_ceiling": kde.threshold_recall,
            "kde_threshold": kde.threshold,
        },
        "bins": binned,
        "subgraph_size_histogram": hist,
        "cost_proxy_sweep_flips": proxy_total,
        "n_selected_edges": len(merged),
        "n_candidates": len(candidates),
    })
    return report


def run_staged_sparse(event: Event, config: PipelineConfig,
                      kde: KdeModel | None = None) -> dict:
    """Three-stage sparse reconstruction.

    Stage 1 anneals the partial QUBO (geometric quadratic terms only) on
    each sub-graph; only edges selected ON survive. Stage 2 re-decomposes
    the survivors and anneals the full QUBO per sub-graph. Stage 3 anneals
    one full QUBO per sector over stage-2 survivors with no sub-graph
    constraint. Metrics are recorded after every stage.
    """
    config.validate()
    event = dedup_hits(event)
    kde = kde or build_kde(config)
    prep = _preprocess_event(event, config, kde)

    stage_rows = []
    survivors: dict[int, list[Edge]] = {}
    edges_by_sector = {s.index: e for s, e, _ in prep}
    stage1_subgraph_count = 0

    # Stage 1: partial QUBO on the initial sub-graphs.
    for sector, edges, graphs in prep:
        stage1_subgraph_count += len(graphs)
        sel, _ = _anneal_subgraphs(event, edges, graphs, config, "partial",
                                   derive_seed(config.seed, "stage1", sector.index))
        survivors[sector.index] = sel
    stage_rows.append(_stage_row(1, "partial", survivors, event, config))

    # Stage 2: full QUBO on re-decomposed survivors.
    stage2: dict[int, list[Edge]] = {}
    for k, sel in survivors.items():
        graphs = subgraph(sel, _edge_bias(sel, config.qubo, event),
                          config.max_degree)
        kept, _ = _anneal_subgraphs(event, sel, graphs, config, "full",
                                    derive_seed(config.seed, "stage2", k))
        stage2[k] = kept
    stage_rows.append(_stage_row(2, "full", stage2, event, config))

    # Stage 3: full QUBO per sector, no sub-graph constraint.
    stage3: dict[int, list[Edge]] = {}
    for k, sel in stage2.items():
        if not sel:
            stage3[k] = []
            continue
        q = build_qubo(sel, event, config.qubo, "full")
        a = simulated_anneal(q, config.schedule(), config.anneal_runs,
                             derive_seed(config.seed, "stage3", k))
        stage3[k] = [e for e, bit in zip(sel, a.bits) if bit]
    stage_rows.append(_stage_row(3, "full", stage3, event, config))

    report = _report_skeleton(config)
    report.update({
        "mode": "staged",
        "stages": stage_rows,
        "metrics": stage_rows[-1]["metrics"],
        "stage1_subgraph_count": stage1_subgraph_count,
        "candidate_pool": {
            "n_candidates": len(merge_sectors(edges_by_sector)),
            "recall_ceiling": kde.threshold_recall,
        },
    })
    return report


def _stage_row(stage: int, mode: str, survivors: Mapping[int, Sequence[Edge]],
               event: Event, config: PipelineConfig) -> dict:
    merged = merge_sectors(survivors)
    metrics = score(assemble_tracks(merged, event, config.qubo), event,
                    config.min_hits, config.exact_match)
    return {"stage": stage, "mode": mode, "n_selected_edges": len(merged),
            "metrics": metrics.to_dict()}


def build_event_qubo(event: Event, config: PipelineConfig,
                     kde: KdeModel | None = None, mode: str = "full",
                     cap: int = FULL_EVENT_CAP) -> tuple[Qubo, list[Edge]]:
    """Benchmark mode: one QUBO over the whole event's merged candidate set,
    skipping sector decomposition and degree capping. Refuses to build more
    than `cap` variables."""
    event = dedup_hits(event)
    kde = kde or build_kde(config)
    per_sector = {s.index: select_candidates(s, event, kde, config.target_recall)
                  for s in sectorize(event)}
    pool = merge_sectors(per_sector)
    if len(pool) > cap:
        raise ValueError(f"full-event QUBO would have {len(pool)} variables, "
                         f"above the cap of {cap}")
    return build_qubo(pool, event, config.qubo, mode), pool


@dataclass(frozen=True)
class ScalingFit:
    c: float
    stderr: float
    points: tuple[dict, ...]

    def summary(self) -> str:
        return f"c = {self.c:.3e} +/- {self.stderr:.3e}"


def fit_exponential(points: Sequence[tuple[Sequence[int], float]]) -> tuple[float, float]:
    """Least-squares estimate of c in t ~ sum_i exp(c * m_i).

    points are (sub-graph size list, measured total time) pairs; the fit
    minimises sum_k (log t_k - log sum_i exp(c m_ki))^2. Returns (c, stderr).
    """
    if len(points) < 3:
        raise ValueError("fit_exponential needs at least 3 points")
    ms = [np.asarray(m, dtype=float) for m, _ in points]
    ts = np.array([t for _, t in points], dtype=float)
    if any(len(m) == 0 for m in ms):
        raise ValueError("every point needs at least one sub-graph size")
    if np.any(ts <= 0):
        raise ValueError("times must be positive")
    logt = np.log(ts)

    def residual(c):
        return np.array([lt - logsumexp(c[0] * m) for m, lt in zip(ms, logt)])

    sol = least_squares(residual, x0=[0.01])
    r = residual(sol.x)
    dof = len(points) - 1
    jac = sol.jac[:, 0]
    jtj = float(jac @ jac)
    if jtj == 0.0:
        raise ValueError("degenerate fit: zero sensitivity to c")
    stderr = math.sqrt((r @ r) / dof / jtj)
    return float(sol.x[0]), float(stderr)


def scaling_benchmark(track_counts: Sequence[int], config: PipelineConfig,
                      events_per_point: int = 2,
                      kde: KdeModel | None = None) -> ScalingFit:
    """Convergence-cost scaling over event sizes.

    For each track count, synthetic events are generated, pre-processed and
    decomposed; measure_convergence runs on every sub-QUBO; per-event totals
    (in the sweeps * variables proxy) are bootstrapped over sub-QUBOs and
    fed to fit_exponential together with the sub-graph size distribution.
    """
    if len(track_counts) < 3:
        raise ValueError("need at least 3 track counts")
    counts = list(track_counts)
    if counts != sorted(counts) or len(set(counts)) != len(counts):
        raise ValueError("track_counts must be strictly ascending")
    if events_per_point < 1:
        raise ValueError("events_per_point must be >= 1")
    config.validate()
    base = config.generator or GeneratorConfig(n_particles=counts[0])
    kde = kde or build_kde(config)
    fit_points = []
    rows = []
    for count in counts:
        for ev in range(events_per_point):
            gcfg = replace(base, n_particles=count,
                           seed=derive_seed(config.seed, "scaling", count, ev))
            event = dedup_hits(generate_event(gcfg))
            samples: dict[int, list[float]] = {}
            sizes: list[int] = []
            idx = 0
            for sector, edges, graphs in _preprocess_event(event, config, kde):
                by_id = {e.id: e for e in edges}
                for g in graphs:
                    q = build_qubo([by_id[i] for i in g.edge_ids], event,
                                   config.qubo, "full")
                    st = measure_convergence(
                        q, config.protocol,
                        derive_seed(config.seed, "conv", count, ev, idx))
                    samples[idx] = [s * q.n for s in st.sweeps_to_converge]
                    sizes.append(q.n)
                    idx += 1
            if not samples:
                raise ValueError(f"no sub-QUBOs at track count {count}")
            mean, lo, hi = bootstrap_mean(
                samples, seed=derive_seed(config.seed, "boot", count, ev))
            fit_points.append((sizes, mean))
            rows.append({"track_count": count, "event": ev,
                         "n_subqubos": len(sizes), "sum_m": int(sum(sizes)),
                         "max_m": max(sizes), "proxy_mean": mean,
                         "ci_low": lo, "ci_high": hi})
    c, stderr = fit_exponential(fit_points)
    return ScalingFit(c=c, stderr=stderr, points=tuple(rows))


def tune_params(space: Mapping[str, tuple[float, float]], config: PipelineConfig,
                objective: str = "f1", budget: int = 20,
                seed: int | None = None) -> tuple[QuboParams, list[dict]]:
    """Random-search the QUBO weights.

    Each trial samples every named parameter uniformly from its range and
    scores the mean objective over the config's calibration-sized events.
    Trials are drawn from one stream, so a larger budget extends a smaller
    one with the same prefix. Returns (best params, trial log).
    """
    if objective != "f1":
        raise ValueError(f"unsupported objective {objective!r}")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not space:
        raise ValueError("empty search space")
    valid = set(_QUBO_JSON_KEYS.values()) - {"scale_r", "scale_phi", "scale_z"}
    for name, (lo, hi) in space.items():
        if name not in valid:
            raise ValueError(f"unknown parameter {name!r}; tunable: {sorted(valid)}")
        if not lo <= hi:
            raise ValueError(f"empty range for {name!r}")
    config.validate()
    seed = config.seed if seed is None else seed
    base = config.generator or GeneratorConfig(n_particles=50)
    events = [dedup_hits(generate_event(replace(
        base, seed=derive_seed(seed, "tune-event", i)))) for i in range(2)]
    kde = build_kde(config)
    rng = np.random.default_rng(derive_seed(seed, "tune"))
    names = sorted(space)
    best: tuple[float, int, QuboParams] | None = None
    trials = []
    for t in range(budget):
        sampled = {name: float(rng.uniform(*space[name])) for name in names}
        params = replace(config.qubo, **sampled)
        trial_cfg = replace_config(config, qubo=params)
        f1s = [run_pipeline(ev, trial_cfg, kde)["metrics"]["f1"] for ev in events]
        value = float(np.mean(f1s))
        trials.append({"trial": t, "f1": value, **sampled})
        if best is None or value > best[0]:
            best = (value, t, params)
    return best[2], trials


def replace_config(config: PipelineConfig, **kwargs) -> PipelineConfig:
    return replace(config, **kwargs)


# ---------------------------------------------------------------------------
# Run directories


def _write_bin_csv(rows: Sequence[dict], path: str) -> None:
    cols = ["lo", "hi", "center", "n_true", "n_reconstructed",
            "n_true_reconstructed", "purity", "efficiency",
            "sigma_purity", "sigma_efficiency"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join("" if row[c] is None else repr(row[c])
                              if isinstance(row[c], float) else str(row[c])
                              for c in cols) + "\n")


def write_run(run_dir: str, config: PipelineConfig, report: dict,
              wall_seconds: float | None = None) -> None:
    """Persist a run: config, report, manifest and per-bin CSV plot data.

    Everything except timing.json is byte-identical across reruns of the
    same config and seed.
    """
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        fh.write(config.to_json() + "\n")
    with open(os.path.join(run_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = {
        "config_sha256": config.config_hash(),
        "package_version": __version__,
        "backend": backend_name(),
        "report_version": report.get("report_version", 1),
    }
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for var, rows in report.get("bins", {}).items():
        _write_bin_csv(rows, os.path.join(run_dir, f"bins_{var}.csv"))
    if wall_seconds is not None:
        with open(os.path.join(run_dir, "timing.json"), "w") as fh:
            json.dump({"wall_seconds": wall_seconds}, fh, indent=2)
            fh.write("\n")
