"""From selected edges to scored track candidates.

A track candidate is a maximal chain of selected edges. Chains are read off
the selected-edge graph after a deterministic branch resolution: at any hit
with several inbound or outbound edges, the (inbound, outbound) pairing
with the best angular continuation survives and the losing edges are
detached as 2-hit stubs. Scoring follows the usual definitions: a candidate
is a true track when all of its hits share one non-noise particle and it
carries at least half of that particle's hits; purity is true candidates
over reconstructed candidates, efficiency is matched particles over truth
particles, both restricted to tracks of at least min_hits hits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .event_model import Event
from .preprocess import Edge
from .qubo import Qubo, QuboParams, angle_kernel, energy

BIN_VARIABLES = ("pt", "length", "phi", "eta")


@dataclass(frozen=True)
class TrackCandidate:
    """Hits ordered by increasing radius plus the edges that chained them."""

    hit_ids: tuple[int, ...]
    edge_ids: tuple[int, ...]


@dataclass(frozen=True)
class Metrics:
    purity: float
    efficiency: float
    f1: float
    n_reconstructed: int
    n_true_reconstructed: int
    n_true: int
    sigma_purity: float | None = None
    sigma_efficiency: float | None = None

    def to_dict(self) -> dict:
        return {
            "purity": self.purity,
            "efficiency": self.efficiency,
            "f1": self.f1,
            "n_reconstructed": self.n_reconstructed,
            "n_true_reconstructed": self.n_true_reconstructed,
            "n_true": self.n_true,
            "sigma_purity": self.sigma_purity,
            "sigma_efficiency": self.sigma_efficiency,
        }


def assemble_tracks(selected: Sequence[Edge], event: Event,
                    params: QuboParams = QuboParams()) -> list[TrackCandidate]:
    """Chain selected edges into candidates.

    Where a hit has more than one inbound and outbound edge, every
    (inbound, outbound) pairing is ranked by cos(theta) of the continuation
    (ties by edge id pair) and only the best keeps passing through; edges
    cut at either endpoint become their own 2-hit stub candidate. A hit
    with surplus inbound edges and no outbound (or vice versa) keeps the
    smallest-id edge. On branch-free input the candidates' hit sets are
    disjoint; a stub shares its branch hit with the winning chain.
    """
    hits = event.hit_index
    edges = sorted(selected, key=lambda e: e.id)
    inbound: dict[int, list[Edge]] = {}
    outbound: dict[int, list[Edge]] = {}
    for e in edges:
        if e.a not in hits or e.b not in hits:
            raise ValueError(f"edge {e.id} references a hit not in the event")
        inbound.setdefault(e.b, []).append(e)
        outbound.setdefault(e.a, []).append(e)

    kept_in: dict[int, Edge] = {}
    kept_out: dict[int, Edge] = {}
    for hid in sorted(set(inbound) | set(outbound)):
        ins = inbound.get(hid, [])
        outs = outbound.get(hid, [])
        if ins and outs:
            best = None
            best_key = None
            for ei in ins:
                for eo in outs:
                    ct, _ = angle_kernel(hits[ei.a], hits[hid], hits[eo.b], params)
                    key = (-ct, ei.id, eo.id)
                    if best_key is None or key < best_key:
                        best_key = key
                        best = (ei, eo)
            kept_in[hid], kept_out[hid] = best
        elif ins:
            kept_in[hid] = min(ins, key=lambda e: e.id)
        elif outs:
            kept_out[hid] = min(outs, key=lambda e: e.id)

    retained = [e for e in edges
                if kept_out.get(e.a) is e and kept_in.get(e.b) is e]
    stubs = [e for e in edges
             if not (kept_out.get(e.a) is e and kept_in.get(e.b) is e)]

    succ = {e.a: e for e in retained}
    has_pred = {e.b for e in retained}
    candidates = []
    for e in retained:
        if e.a in has_pred:
            continue
        chain = [e]
        while chain[-1].b in succ:
            chain.append(succ[chain[-1].b])
        candidates.append(TrackCandidate(
            hit_ids=(chain[0].a,) + tuple(step.b for step in chain),
            edge_ids=tuple(step.id for step in chain)))
    for e in stubs:
        candidates.append(TrackCandidate(hit_ids=(e.a, e.b), edge_ids=(e.id,)))
    candidates.sort(key=lambda c: (c.hit_ids[0], c.hit_ids))
    return candidates


def _candidate_truth(candidate: TrackCandidate, event: Event,
                     exact_match: bool) -> int | None:
    """The particle this candidate reconstructs, or None if it is not true."""
    pids = {event.hit_index[h].particle_id for h in candidate.hit_ids}
    if len(pids) != 1:
        return None
    pid = pids.pop()
    if pid == 0:
        return None
    particle = event.particle_index.get(pid)
    if particle is None:
        return None
    needed = len(particle.hit_ids) if exact_match else 0.5 * len(particle.hit_ids)
    return pid if len(candidate.hit_ids) >= needed else None


def score(candidates: Sequence[TrackCandidate], event: Event,
          min_hits: int = 3, exact_match: bool = False) -> Metrics:
    """Purity / efficiency / F1 against the event's truth particles."""
    if not event.particles:
        raise ValueError("event carries no truth particles to score against")
    if min_hits < 2:
        raise ValueError("min_hits must be >= 2")
    recon = [c for c in candidates if len(c.hit_ids) >= min_hits]
    matched: set[int] = set()
    n_true_recon = 0
    for c in recon:
        pid = _candidate_truth(c, event, exact_match)
        if pid is not None:
            n_true_recon += 1
            matched.add(pid)
    n_true = sum(1 for p in event.particles if len(p.hit_ids) >= min_hits)
    purity = n_true_recon / len(recon) if recon else 0.0
    efficiency = len(matched) / n_true if n_true else 0.0
    f1 = (2.0 * purity * efficiency / (purity + efficiency)
          if purity + efficiency > 0 else 0.0)
    return Metrics(purity=purity, efficiency=efficiency, f1=f1,
                   n_reconstructed=len(recon), n_true_reconstructed=n_true_recon,
                   n_true=n_true)


def _particle_variable(particle, variable: str) -> float:
    if variable == "pt":
        return particle.pt
    if variable == "length":
        return float(len(particle.hit_ids))
    if variable == "phi":
        return particle.phi
    if variable == "eta":
        return particle.eta
    raise ValueError(f"unknown binning variable {variable!r}; "
                     f"expected one of {BIN_VARIABLES}")


def _majority_pid(candidate: TrackCandidate, event: Event) -> int:
    counts: dict[int, int] = {}
    for h in candidate.hit_ids:
        pid = event.hit_index[h].particle_id
        if pid != 0:
            counts[pid] = counts.get(pid, 0) + 1
    if not counts:
        return 0
    return min(counts, key=lambda p: (-counts[p], p))


def binned_metrics(candidates: Sequence[TrackCandidate], event: Event,
                   variable: str, bin_edges: Sequence[float],
                   min_hits: int = 3, exact_match: bool = False,
                   per_sector_candidates: Mapping[int, Sequence[TrackCandidate]] | None = None,
                   ) -> list[dict]:
    """Per-bin purity and efficiency.

    Truth particles are binned by the named variable; candidates land in
    the bin of their matched particle, or of their majority (non-noise)
    particle when not true. All-noise candidates are unbinnable and are
    skipped. Bins with nothing to measure report fractions as None. When
    per-sector candidate lists are supplied, each bin also reports the
    1-sigma spread of the fractions across sectors.
    """
    edges_arr = np.asarray(bin_edges, dtype=float)
    if len(edges_arr) < 2 or not np.all(np.diff(edges_arr) > 0):
        raise ValueError("bin_edges must be ascending with >= 2 entries")

    def one_pass(cands: Sequence[TrackCandidate]):
        nbins = len(edges_arr) - 1
        n_true = [0] * nbins
        n_recon = [0] * nbins
        n_true_recon = [0] * nbins
        matched: list[set[int]] = [set() for _ in range(nbins)]
        pbin = {}
        for p in event.particles:
            if len(p.hit_ids) < min_hits:
                continue
            b = int(np.digitize(_particle_variable(p, variable), edges_arr)) - 1
            if 0 <= b < nbins:
                pbin[p.particle_id] = b
                n_true[b] += 1
        for c in cands:
            if len(c.hit_ids) < min_hits:
                continue
            pid = _candidate_truth(c, event, exact_match)
            owner = pid if pid is not None else _majority_pid(c, event)
            if owner == 0 or owner not in pbin:
                continue
            b = pbin[owner]
            n_recon[b] += 1
            if pid is not None:
                n_true_recon[b] += 1
                matched[b].add(pid)
        return n_true, n_recon, n_true_recon, matched

    n_true, n_recon, n_true_recon, matched = one_pass(candidates)
    sector_fracs = None
    if per_sector_candidates is not None:
        sector_fracs = []
        for k in sorted(per_sector_candidates):
            st, sr, str_, smat = one_pass(per_sector_candidates[k])
            sector_fracs.append((
                [str_[b] / sr[b] if sr[b] else None for b in range(len(st))],
                [len(smat[b]) / st[b] if st[b] else None for b in range(len(st))]))

    out = []
    for b in range(len(edges_arr) - 1):
        purity = n_true_recon[b] / n_recon[b] if n_recon[b] else None
        eff = len(matched[b]) / n_true[b] if n_true[b] else None
        row = {
            "lo": float(edges_arr[b]), "hi": float(edges_arr[b + 1]),
            "center": float(0.5 * (edges_arr[b] + edges_arr[b + 1])),
            "n_true": n_true[b], "n_reconstructed": n_recon[b],
            "n_true_reconstructed": n_true_recon[b],
            "purity": purity, "efficiency": eff,
            "sigma_purity": None, "sigma_efficiency": None,
        }
        if sector_fracs is not None:
            for field, slot in (("sigma_purity", 0), ("sigma_efficiency", 1)):
                vals = [f[slot][b] for f in sector_fracs if f[slot][b] is not None]
                if len(vals) >= 2:
                    row[field] = float(np.std(vals, ddof=1))
        out.append(row)
    return out


def merge_sectors(per_sector_selections: Mapping[int, Iterable[Edge]]) -> list[Edge]:
    """Union of per-sector edge selections, deduplicated by hit pair.

    The same physical pair selected in two overlapping sectors appears once.
    Ids are reassigned sequentially over the (a, b)-sorted union, so merged
    output is independent of sector ordering and merging is idempotent.
    """
    by_pair: dict[tuple[int, int], Edge] = {}
    for k in sorted(per_sector_selections):
        for e in per_sector_selections[k]:
            by_pair.setdefault((e.a, e.b), e)
    merged = []
    for new_id, pair in enumerate(sorted(by_pair)):
        e = by_pair[pair]
        merged.append(Edge(id=new_id, a=e.a, b=e.b, prior=e.prior))
    return merged


def energy_scan(q: Qubo, assignments: Sequence[tuple[str, Sequence[int], Metrics]],
                ) -> list[tuple[str, float, float, float]]:
    """(tag, normalized energy, purity, efficiency) rows for a set of
    assignments of the same QUBO.

    Exactly one row must be tagged 'truth'. Energies are shifted so the
    lowest maps to 1000, which keeps scans from different sub-problems
    comparable on one axis.
    """
    if not assignments:
        raise ValueError("energy_scan needs at least one assignment")
    tags = [tag for tag, _, _ in assignments]
    if tags.count("truth") != 1:
        raise ValueError("energy_scan requires exactly one assignment tagged 'truth'")
    energies = [energy(q, bits) for _, bits, _ in assignments]
    shift = 1000.0 - min(energies)
    return [(tag, e + shift, m.purity, m.efficiency)
            for (tag, _, m), e in zip(assignments, energies)]


def write_energy_scan_csv(rows: Sequence[tuple[str, float, float, float]],
                          path: str) -> None:
    with open(path, "w") as fh:
        fh.write("energy,purity,efficiency,tag\n")
        for tag, e, purity, eff in rows:
            fh.write(f"{e!r},{purity!r},{eff!r},{tag}\n")
