"""Event data model: hits, truth particles, a synthetic generator and
TrackML-style CSV ingestion.

Coordinates are millimetres throughout. Cylindrical quantities are derived
from Cartesian ones: r = hypot(x, y), phi = atan2(y, x) in (-pi, pi].

The synthetic generator produces a barrel-only detector of concentric
cylindrical layers. Each particle traces a circle in the xy plane (helix
projection, curvature set by pt and the field) and a straight line in the
rz plane, starting from a vertex at z ~ Normal(0, beamspot_sigma_z). A
configurable fraction of hits is uniform-random noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

DEFAULT_LAYER_RADII = (32.0, 72.0, 116.0, 172.0, 260.0, 360.0, 500.0, 660.0, 820.0, 1020.0)

HITS_HEADER = ["hit_id", "x", "y", "z", "volume_id", "layer_id", "module_id"]
TRUTH_HEADER = ["hit_id", "particle_id", "tx", "ty", "tz", "tpx", "tpy", "tpz", "weight"]


@dataclass(frozen=True)
class Hit:
    """A single detector measurement. Noise hits carry particle_id 0."""

    id: int
    x: float
    y: float
    z: float
    r: float
    phi: float
    particle_id: int
    volume_id: int = 0
    layer_id: int = 0
    module_id: int = 0


@dataclass(frozen=True)
class Particle:
    """Truth particle. hit_ids are ordered by increasing hit radius.

    momentum stores the truth (px, py, pz) exactly as generated or read, so
    serialization round-trips are bit-exact; pt/eta/phi are derived from it
    at construction time and kept for binning.
    """

    particle_id: int
    vertex_z: float
    pt: float
    eta: float
    phi: float
    hit_ids: tuple[int, ...]
    momentum: tuple[float, float, float] | None = None


@dataclass(eq=False)
class Event:
    """A collection of hits plus the truth particles that produced them.

    Treated as immutable once constructed; the cached lookups below rely
    on that.
    """

    hits: tuple[Hit, ...]
    particles: tuple[Particle, ...]
    noise_fraction: float

    @cached_property
    def hit_index(self) -> dict[int, Hit]:
        index = {}
        for h in self.hits:
            if h.id in index:
                raise ValueError(f"duplicate hit id {h.id} in event")
            index[h.id] = h
        return index

    @cached_property
    def particle_index(self) -> dict[int, Particle]:
        return {p.particle_id: p for p in self.particles}


def _make_event(hits: Sequence[Hit], particles: Sequence[Particle]) -> Event:
    n = len(hits)
    noise = sum(1 for h in hits if h.particle_id == 0)
    return Event(hits=tuple(hits), particles=tuple(particles),
                 noise_fraction=noise / n if n else 0.0)


@dataclass(frozen=True)
class GeneratorConfig:
    n_particles: int
    noise_fraction: float = 0.15
    beamspot_sigma_z: float = 5.5
    pt_range: tuple[float, float] = (1.0, 10.0)
    eta_range: tuple[float, float] = (-0.6, 0.6)
    layer_radii: tuple[float, ...] = DEFAULT_LAYER_RADII
    field_strength: float = 2.0
    smear_sigma: float = 0.05
    z_extent: float = 1100.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not 0.0 <= self.noise_fraction < 1.0:
            raise ValueError("noise_fraction must lie in [0, 1)")
        if self.beamspot_sigma_z < 0:
            raise ValueError("beamspot_sigma_z must be non-negative")
        lo, hi = self.pt_range
        if not (0 < lo <= hi):
            raise ValueError("pt_range must satisfy 0 < lo <= hi")
        if not self.layer_radii or any(r <= 0 for r in self.layer_radii):
            raise ValueError("layer_radii must be positive")
        if list(self.layer_radii) != sorted(self.layer_radii):
            raise ValueError("layer_radii must be ascending")
        if len(set(self.layer_radii)) != len(self.layer_radii):
            raise ValueError("layer_radii must be distinct")
        if self.field_strength <= 0:
            raise ValueError("field_strength must be positive")
        if self.smear_sigma < 0:
            raise ValueError("smear_sigma must be non-negative")
        if self.z_extent <= 0:
            raise ValueError("z_extent must be positive")
        # A track curls up inside the first layer when its full turning
        # diameter is below that radius: it would never produce a hit.
        if 2.0 * helix_radius(lo, self.field_strength) < self.layer_radii[0]:
            raise ValueError("pt_range lower bound makes tracks curl inside the first layer")


def helix_radius(pt: float, field_strength: float) -> float:
    """Bending radius in mm for transverse momentum pt (GeV) in a field (T)."""
    return pt * 1000.0 / (0.3 * field_strength)


def generate_event(config: GeneratorConfig) -> Event:
    """Generate a synthetic event. Deterministic for a given config.

    Signal hits come first (particle by particle, layers inside out), then
    noise hits. Noise count is chosen so noise/total ~= noise_fraction.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    hits: list[Hit] = []
    particles: list[Particle] = []
    hit_id = 1
    for k in range(config.n_particles):
        pid = k + 1
        vertex_z = float(rng.normal(0.0, config.beamspot_sigma_z))
        pt = float(rng.uniform(*config.pt_range))
        eta = float(rng.uniform(*config.eta_range))
        phi0 = float(rng.uniform(-math.pi, math.pi))
        charge = 1 if rng.integers(0, 2) == 1 else -1
        radius = helix_radius(pt, config.field_strength)
        slope = math.sinh(eta)
        ids: list[int] = []
        for layer, r in enumerate(config.layer_radii):
            if r > 2.0 * radius:
                break  # track curls before reaching this layer
            z = vertex_z + slope * r
            if abs(z) > config.z_extent:
                break  # exits the barrel; |z| grows with r from here on
            pos_phi = phi0 + charge * math.asin(r / (2.0 * radius))
            tx = r * math.cos(pos_phi)
            ty = r * math.sin(pos_phi)
            dx, dy, dz = rng.normal(0.0, config.smear_sigma, 3)
            x, y, zz = float(tx + dx), float(ty + dy), float(z + dz)
            hits.append(Hit(id=hit_id, x=x, y=y, z=zz,
                            r=math.hypot(x, y), phi=math.atan2(y, x),
                            particle_id=pid, volume_id=0, layer_id=layer,
                            module_id=0))
            ids.append(hit_id)
            hit_id += 1
        ids.sort(key=lambda i: (hits[i - 1].r, i))
        momentum = (pt * math.cos(phi0), pt * math.sin(phi0), pt * slope)
        particles.append(Particle(particle_id=pid, vertex_z=vertex_z, pt=pt,
                                  eta=eta, phi=phi0, hit_ids=tuple(ids),
                                  momentum=momentum))
    n_signal = len(hits)
    f = config.noise_fraction
    n_noise = int(round(n_signal * f / (1.0 - f))) if f > 0 else 0
    for _ in range(n_noise):
        layer = int(rng.integers(0, len(config.layer_radii)))
        phi = float(rng.uniform(-math.pi, math.pi))
        z = float(rng.uniform(-config.z_extent, config.z_extent))
        r = config.layer_radii[layer]
        x, y = r * math.cos(phi), r * math.sin(phi)
        hits.append(Hit(id=hit_id, x=x, y=y, z=z,
                        r=math.hypot(x, y), phi=math.atan2(y, x),
                        particle_id=0, volume_id=0, layer_id=layer,
                        module_id=0))
        hit_id += 1
    return _make_event(hits, particles)


def dedup_hits(event: Event) -> Event:
    """Keep one hit per (particle, layer): smallest r, ties by smallest id.

    Noise hits are untouched. Particles are rebuilt so hit_ids only name
    surviving hits, still ordered by increasing r. Idempotent.
    """
    keep: dict[tuple[int, int, int], Hit] = {}
    for h in event.hits:
        if h.particle_id == 0:
            continue
        key = (h.particle_id, h.volume_id, h.layer_id)
        best = keep.get(key)
        if best is None or (h.r, h.id) < (best.r, best.id):
            keep[key] = h
    kept_ids = {h.id for h in keep.values()}
    hits = [h for h in event.hits if h.particle_id == 0 or h.id in kept_ids]
    index = {h.id: h for h in hits}
    particles = []
    for p in event.particles:
        ids = [i for i in p.hit_ids if i in index]
        ids.sort(key=lambda i: (index[i].r, i))
        particles.append(replace(p, hit_ids=tuple(ids)))
    return _make_event(hits, particles)


def true_edges(event: Event) -> set[tuple[int, int]]:
    """Ordered pairs of consecutive hits (by r) along each truth particle."""
    edges = set()
    for p in event.particles:
        for a, b in zip(p.hit_ids, p.hit_ids[1:]):
            edges.add((a, b))
    return edges


# ---------------------------------------------------------------------------
# TrackML-style CSV input/output


def _parse_row(row: list[str], header: list[str], lineno: int, path: str) -> dict[str, float]:
    if len(row) != len(header):
        raise ValueError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
    out = {}
    for name, cell in zip(header, row):
        try:
            out[name] = int(cell) if name.endswith("_id") else float(cell)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad value {cell!r} for column {name}") from None
    return out


def _read_csv(path: str, header: list[str]) -> list[tuple[int, dict[str, float]]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ValueError(f"{path}:1: empty file") from None
        if [c.strip() for c in got] != header:
            raise ValueError(f"{path}:1: expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            rows.append((lineno, _parse_row(row, header, lineno, path)))
    return rows


def ingest_trackml(hits_file: str, truth_file: str) -> Event:
    """Read a two-file hits + truth event.

    particle_id is joined from truth by hit id; particle kinematics are
    derived from the truth momentum at the particle's innermost hit. Every
    hit must appear in both files exactly once.
    """
    hit_rows = _read_csv(hits_file, HITS_HEADER)
    truth_rows = _read_csv(truth_file, TRUTH_HEADER)

    truth_by_id: dict[int, tuple[int, dict[str, float]]] = {}
    for lineno, row in truth_rows:
        hid = int(row["hit_id"])
        if hid in truth_by_id:
            raise ValueError(f"{truth_file}:{lineno}: duplicate hit_id {hid} "
                             f"(first at line {truth_by_id[hid][0]})")
        truth_by_id[hid] = (lineno, row)

    hits: list[Hit] = []
    seen: dict[int, int] = {}
    for lineno, row in hit_rows:
        hid = int(row["hit_id"])
        if hid in seen:
            raise ValueError(f"{hits_file}:{lineno}: duplicate hit_id {hid} "
                             f"(first at line {seen[hid]})")
        seen[hid] = lineno
        if hid not in truth_by_id:
            raise ValueError(f"{hits_file}:{lineno}: hit_id {hid} has no truth row")
        pid = int(truth_by_id[hid][1]["particle_id"])
        x, y, z = row["x"], row["y"], row["z"]
        hits.append(Hit(id=hid, x=x, y=y, z=z, r=math.hypot(x, y),
                        phi=math.atan2(y, x), particle_id=pid,
                        volume_id=int(row["volume_id"]),
                        layer_id=int(row["layer_id"]),
                        module_id=int(row["module_id"])))
    for hid, (lineno, _) in truth_by_id.items():
        if hid not in seen:
            raise ValueError(f"{truth_file}:{lineno}: hit_id {hid} absent from hits file")

    by_pid: dict[int, list[Hit]] = {}
    for h in hits:
        if h.particle_id != 0:
            by_pid.setdefault(h.particle_id, []).append(h)
    particles = []
    for pid in sorted(by_pid):
        phits = sorted(by_pid[pid], key=lambda h: (h.r, h.id))
        _, row = truth_by_id[phits[0].id]
        tpx, tpy, tpz = row["tpx"], row["tpy"], row["tpz"]
        pt = math.hypot(tpx, tpy)
        if pt <= 0:
            raise ValueError(f"particle {pid}: zero transverse truth momentum")
        eta = math.asinh(tpz / pt)
        tr = math.hypot(row["tx"], row["ty"])
        vertex_z = row["tz"] - (tpz / pt) * tr
        particles.append(Particle(particle_id=pid, vertex_z=vertex_z, pt=pt,
                                  eta=eta, phi=math.atan2(tpy, tpx),
                                  hit_ids=tuple(h.id for h in phits),
                                  momentum=(tpx, tpy, tpz)))
    return _make_event(hits, particles)


def write_trackml(event: Event, hits_file: str, truth_file: str) -> None:
    """Serialize an event in the same two-file layout ingest_trackml reads.

    Floats are written with repr so an ingest -> write -> ingest cycle is
    exact. Truth positions are the stored hit positions; truth momenta are
    reconstructed from the particle kinematics (zeros for noise).
    """
    with open(hits_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HITS_HEADER)
        for h in event.hits:
            w.writerow([h.id, repr(h.x), repr(h.y), repr(h.z),
                        h.volume_id, h.layer_id, h.module_id])
    pindex = event.particle_index
    with open(truth_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRUTH_HEADER)
        for h in event.hits:
            p = pindex.get(h.particle_id)
            if p is None:
                tpx = tpy = tpz = 0.0
            elif p.momentum is not None:
                tpx, tpy, tpz = p.momentum
            else:
                tpx = p.pt * math.cos(p.phi)
                tpy = p.pt * math.sin(p.phi)
                tpz = p.pt * math.sinh(p.eta)
            w.writerow([h.id, h.particle_id, repr(h.x), repr(h.y), repr(h.z),
                        repr(tpx), repr(tpy), repr(tpz), repr(0.0)])
