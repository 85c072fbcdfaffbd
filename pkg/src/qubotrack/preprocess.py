"""Classical pre-processing that shrinks the edge-selection problem.

Three stages, all deterministic:

* sectorize: 32 overlapping azimuthal sectors of width 2*pi/16 at stride
  2*pi/32, so every hit lands in exactly two sectors and every
  sufficiently-local hit pair shares at least one sector.
* KDE edge prior: a two-feature Gaussian kernel density estimate, trained
  on true consecutive-hit segments, scores how compatible a hit pair is
  with coming from a beamspot track. Features: the segment's z-intercept
  (mm at r = 0) and its angle in the rz plane. Densities are rescaled by
  the model's peak so priors live in [0, 1]. A recall-targeted threshold,
  calibrated once and then frozen, prunes candidate pairs.
* subgraph: a per-hit degree cap followed by a flood fill over the
  "edges sharing a hit" relation splits the surviving edges into disjoint
  sub-problems small enough to anneal independently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .event_model import Event, Hit, true_edges

SECTOR_COUNT = 32
SECTOR_WIDTH = 2.0 * math.pi / 16.0
SECTOR_STRIDE = 2.0 * math.pi / 32.0

KDE_MODEL_VERSION = 1
MIN_KDE_SAMPLES = 100

# Pair visits performed by select_candidates since the last reset. The
# enumeration contract is O(h^2) per sector; tests assert on this counter.
_PAIR_VISITS = 0


def reset_pair_visits() -> None:
    global _PAIR_VISITS
    _PAIR_VISITS = 0


def pair_visits() -> int:
    return _PAIR_VISITS


@dataclass(frozen=True)
class Sector:
    index: int
    phi_min: float
    phi_max: float
    hit_ids: tuple[int, ...]


@dataclass(frozen=True)
class Edge:
    """A directed candidate hit pair a -> b with r_a < r_b."""

    id: int
    a: int
    b: int
    prior: float


@dataclass(frozen=True)
class SubGraph:
    index: int
    edge_ids: tuple[int, ...]

    @property
    def m(self) -> int:
        return len(self.edge_ids)


def sectorize(event: Event) -> list[Sector]:
    """Assign every hit to the two half-overlapping sectors containing it."""
    members: list[list[int]] = [[] for _ in range(SECTOR_COUNT)]
    for h in event.hits:
        shifted = (h.phi + math.pi) % (2.0 * math.pi)
        k = int(shifted // SECTOR_STRIDE) % SECTOR_COUNT
        members[k].append(h.id)
        members[(k - 1) % SECTOR_COUNT].append(h.id)
    sectors = []
    for k in range(SECTOR_COUNT):
        lo = -math.pi + k * SECTOR_STRIDE
        sectors.append(Sector(index=k, phi_min=lo, phi_max=lo + SECTOR_WIDTH,
                              hit_ids=tuple(sorted(members[k]))))
    return sectors


def segment_features(r_a: float, z_a: float, r_b: float, z_b: float):
    """(z-intercept, rz angle) of the segment a -> b. Requires r_a < r_b."""
    dr = r_b - r_a
    dz = z_b - z_a
    z0 = z_b - (dz / dr) * r_b
    return z0, math.atan2(dz, dr)


@dataclass
class KdeModel:
    """Gaussian product-kernel density over (z-intercept, rz angle).

    Bandwidths follow Scott's rule per dimension: n**(-1/6) times the
    sample standard deviation. peak_density is the maximum density over
    the training points; priors are density / peak clipped to [0, 1].
    The candidate-selection threshold is calibrated once (see
    calibrate_threshold) and stored here so later selections reuse it.
    """

    samples: np.ndarray          # (n, 2)
    bandwidths: np.ndarray       # (2,)
    peak_density: float
    threshold: float | None = None
    threshold_recall: float | None = None

    def density(self, points: np.ndarray) -> np.ndarray:
        """Density at each query row of points, shape (m, 2) -> (m,)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(self.samples)
        bw = self.bandwidths
        norm = 1.0 / (n * 2.0 * math.pi * bw[0] * bw[1])
        out = np.empty(len(pts))
        # Chunked so the (chunk, n) residual matrices stay modest.
        chunk = max(1, int(4e6) // max(n, 1))
        for lo in range(0, len(pts), chunk):
            q = pts[lo:lo + chunk]
            u0 = (q[:, 0, None] - self.samples[None, :, 0]) / bw[0]
            u1 = (q[:, 1, None] - self.samples[None, :, 1]) / bw[1]
            out[lo:lo + chunk] = np.exp(-0.5 * (u0 * u0 + u1 * u1)).sum(axis=1) * norm
        return out

    def prior(self, points: np.ndarray) -> np.ndarray:
        return np.clip(self.density(points) / self.peak_density, 0.0, 1.0)

    def save(self, path: str) -> None:
        payload = {
            "version": KDE_MODEL_VERSION,
            "samples": self.samples.tolist(),
            "bandwidths": self.bandwidths.tolist(),
            "peak_density": self.peak_density,
            "threshold": self.threshold,
            "threshold_recall": self.threshold_recall,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path: str) -> "KdeModel":
        with open(path) as fh:
            payload = json.load(fh)
        version = payload.get("version")
        if version != KDE_MODEL_VERSION:
            raise ValueError(f"{path}: unsupported KDE model version {version!r}")
        return cls(samples=np.asarray(payload["samples"], dtype=float),
                   bandwidths=np.asarray(payload["bandwidths"], dtype=float),
                   peak_density=float(payload["peak_density"]),
                   threshold=payload["threshold"],
                   threshold_recall=payload["threshold_recall"])


def _true_segment_features(events: Iterable[Event]) -> np.ndarray:
    feats = []
    for event in events:
        index = event.hit_index
        for a, b in sorted(true_edges(event)):
            ha, hb = index[a], index[b]
            feats.append(segment_features(ha.r, ha.z, hb.r, hb.z))
    return np.asarray(feats, dtype=float)


def train_kde(events: Sequence[Event], max_samples: int | None = None) -> KdeModel:
    """Fit the edge-prior KDE on true consecutive-hit segments.

    Requires at least 100 segments. With max_samples set, the training set
    is thinned deterministically by even striding.
    """
    feats = _true_segment_features(events)
    if len(feats) < MIN_KDE_SAMPLES:
        raise ValueError(f"need >= {MIN_KDE_SAMPLES} true segments to train the KDE, "
                         f"got {len(feats)}")
    if max_samples is not None and len(feats) > max_samples:
        idx = np.unique(np.linspace(0, len(feats) - 1, max_samples).round().astype(int))
        feats = feats[idx]
    n = len(feats)
    bw = feats.std(axis=0, ddof=1) * n ** (-1.0 / 6.0)
    bw = np.where(bw > 0, bw, 1e-6)
    model = KdeModel(samples=feats, bandwidths=bw, peak_density=1.0)
    model.peak_density = float(model.density(feats).max())
    return model


def edge_prior(model: KdeModel, a: Hit, b: Hit) -> float:
    """Prior probability in [0, 1] that hit pair a -> b is a true segment."""
    if not a.r < b.r:
        raise ValueError(f"edge_prior requires r_a < r_b, got {a.r} >= {b.r}")
    z0, ang = segment_features(a.r, a.z, b.r, b.z)
    return float(model.prior(np.array([[z0, ang]]))[0])


def calibrate_threshold(model: KdeModel, events: Sequence[Event],
                        target_recall: float = 0.93) -> tuple[float, float]:
    """Choose and freeze the largest prior threshold keeping >= target_recall
    of true segments. Returns (threshold, achieved recall)."""
    if not 0.0 < target_recall <= 1.0:
        raise ValueError(f"target_recall must lie in (0, 1], got {target_recall}")
    feats = _true_segment_features(events)
    if len(feats) == 0:
        raise ValueError("calibration events contain no true segments")
    priors = model.prior(feats)
    order = np.sort(priors)[::-1]
    k = math.ceil(target_recall * len(priors))
    threshold = float(order[k - 1])
    achieved = float(np.mean(priors >= threshold))
    model.threshold = threshold
    model.threshold_recall = achieved
    return threshold, achieved


def select_candidates(sector: Sector, event: Event, model: KdeModel,
                      target_recall: float = 0.93) -> list[Edge]:
    """Candidate edges in one sector: all r-ordered hit pairs whose KDE prior
    clears the model's frozen threshold.

    Pairs with equal r are excluded (no ordering exists for them). Edge ids
    are unique across sectors: sector index * 10**7 plus an enumeration
    counter, so an event supports up to 10**7 candidates per sector.
    """
    global _PAIR_VISITS
    if not 0.0 < target_recall <= 1.0:
        raise ValueError(f"target_recall must lie in (0, 1], got {target_recall}")
    if model.threshold is None:
        raise ValueError("KDE model has no frozen threshold; run calibrate_threshold first")
    index = event.hit_index
    hits = sorted((index[i] for i in sector.hit_ids), key=lambda h: (h.r, h.id))
    n = len(hits)
    if n < 2:
        return []
    r = np.array([h.r for h in hits])
    z = np.array([h.z for h in hits])
    ids = np.array([h.id for h in hits])
    ii, jj = np.triu_indices(n, k=1)
    _PAIR_VISITS += len(ii)
    keep = r[jj] > r[ii]  # hits are r-sorted; drops only exact radius ties
    ii, jj = ii[keep], jj[keep]
    dr = r[jj] - r[ii]
    dz = z[jj] - z[ii]
    z0 = z[jj] - (dz / dr) * r[jj]
    ang = np.arctan2(dz, dr)
    priors = model.prior(np.column_stack([z0, ang]))
    sel = priors >= model.threshold
    sel_priors = priors[sel]
    base = sector.index * 10_000_000
    edges = []
    for k, (i, j) in enumerate(zip(ii[sel], jj[sel])):
        edges.append(Edge(id=base + k, a=int(ids[i]), b=int(ids[j]),
                          prior=float(sel_priors[k])))
    return edges


def subgraph(edges: Sequence[Edge], linear_bias: Mapping[int, float],
             max_degree: int = 5) -> list[SubGraph]:
    """Cap per-hit degree, then split edges into disjoint connected components.

    Each hit ranks its incident edges by descending linear_bias (ties by
    ascending edge id) and keeps the top max_degree; an edge survives only
    if both of its hits keep it. A flood fill over the "edges sharing a
    hit" relation labels the surviving edges. Components are returned
    sorted by descending size, ties by smallest contained edge id.
    """
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    by_id = {}
    incident: dict[int, list[int]] = {}
    for e in edges:
        if e.id in by_id:
            raise ValueError(f"duplicate edge id {e.id}")
        by_id[e.id] = e
        incident.setdefault(e.a, []).append(e.id)
        incident.setdefault(e.b, []).append(e.id)
    kept: dict[int, set[int]] = {}
    for hit, eids in incident.items():
        ranked = sorted(eids, key=lambda i: (-linear_bias[i], i))
        kept[hit] = set(ranked[:max_degree])
    surviving = [e for e in by_id.values()
                 if e.id in kept[e.a] and e.id in kept[e.b]]

    adjacency: dict[int, list[int]] = {}
    for e in surviving:
        adjacency.setdefault(e.a, []).append(e.id)
        adjacency.setdefault(e.b, []).append(e.id)
    unvisited = {e.id: e for e in surviving}
    components: list[list[int]] = []
    while unvisited:
        start = min(unvisited)
        stack = [start]
        comp = []
        del unvisited[start]
        while stack:
            eid = stack.pop()
            comp.append(eid)
            e = by_id[eid]
            for hit in (e.a, e.b):
                for nid in adjacency[hit]:
                    if nid in unvisited:
                        del unvisited[nid]
                        stack.append(nid)
        components.append(sorted(comp))
    components.sort(key=lambda c: (-len(c), c[0]))
    return [SubGraph(index=i, edge_ids=tuple(c)) for i, c in enumerate(components)]


def write_candidates_csv(edges: Sequence[Edge], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("edge_id,hit_a,hit_b,prior\n")
        for e in edges:
            fh.write(f"{e.id},{e.a},{e.b},{e.prior!r}\n")


def read_candidates_csv(path: str) -> list[Edge]:
    edges = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "edge_id,hit_a,hit_b,prior":
            raise ValueError(f"{path}:1: unexpected header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns")
            edges.append(Edge(id=int(parts[0]), a=int(parts[1]), b=int(parts[2]),
                              prior=float(parts[3])))
    return edges
