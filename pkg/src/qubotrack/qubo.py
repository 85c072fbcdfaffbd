"""QUBO construction for edge selection.

Binary variable X_ab = 1 selects the candidate edge a -> b. The energy to
minimise is

    E = sum_i h_i X_i + sum_{i<j} J_ij X_i X_j + offset

with three kinds of terms in the "full" mode:

* a geometric reward for every pair of edges (a,b), (b,c) chained through a
  shared middle hit: -(cos^lambda(theta) + rho * cos^lambda(phi)) divided by
  the summed standardized segment lengths, gated to zero whenever
  cos^lambda(theta) falls below tau; the same chained pair also pays a
  z-intercept penalty eta_bias * |z0(a, c)|^zeta,
* a bifurcation penalty +alpha for every pair of edges sharing a start hit
  or sharing an end hit,
* a linear bias -(beta * prior - gamma) per edge, rewarding edges the KDE
  considers probable and taxing every selected edge.

theta is the opening angle between the two segments in cylindrical (r, phi,
z) coordinates after dividing each axis by its characteristic scale
(scale_r, scale_phi, scale_z); phi is the same construction on the
Cartesian xy projection. Segment lengths and the z-intercept entering the
energy are measured in the standardized space as well. Negative cosines
contribute no reward (non-integer lambda is undefined there, and such pairs
are nowhere near collinear anyway).

The "partial" mode keeps only the quadratic geometric terms (used as a
cheap first sieve); "classic_dp" is the original Denby-Peterson energy with
a global edge-count constraint, kept for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .event_model import Event, Hit
from .preprocess import Edge

MODES = ("full", "partial", "classic_dp")


@dataclass(frozen=True)
class QuboParams:
    """Energy weights. Defaults are the tuned values used throughout."""

    lambda_: float = 13.17
    rho: float = 5.00
    eta_bias: float = 14.41
    zeta: float = 1.79
    alpha: float = 86.20
    beta: float = 20.91
    gamma: float = 9.79
    tau: float = 0.996
    scale_r: float = 1000.0
    scale_phi: float = math.pi
    scale_z: float = 1000.0

    def __post_init__(self) -> None:
        for name in ("lambda_", "rho", "eta_bias", "zeta", "alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        for name in ("scale_r", "scale_phi", "scale_z"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Qubo:
    """Sparse QUBO: linear terms h_i, strictly upper-triangular quadratic
    terms J_ij (i < j), a constant offset, and the variable -> edge map."""

    n: int
    linear: dict[int, float] = field(default_factory=dict)
    quadratic: dict[tuple[int, int], float] = field(default_factory=dict)
    offset: float = 0.0
    var_to_edge: dict[int, int] = field(default_factory=dict)


@dataclass
class IsingModel:
    n: int
    h: dict[int, float] = field(default_factory=dict)
    j: dict[tuple[int, int], float] = field(default_factory=dict)
    offset: float = 0.0


@dataclass(frozen=True)
class Assignment:
    bits: tuple[int, ...]
    energy: float


def _add(table: dict, key, value: float) -> None:
    if value == 0.0:
        return
    new = table.get(key, 0.0) + value
    if new == 0.0:
        table.pop(key, None)
    else:
        table[key] = new


def _pow_cos(c: float, exponent: float) -> float:
    """cos**exponent with negative cosines clamped to zero reward."""
    return c ** exponent if c > 0.0 else 0.0


def _standardized(h: Hit, params: QuboParams) -> tuple[float, float, float]:
    return h.r / params.scale_r, h.phi / params.scale_phi, h.z / params.scale_z


def _wrap(dphi: float) -> float:
    return (dphi + math.pi) % (2.0 * math.pi) - math.pi


def angle_kernel(a: Hit, b: Hit, c: Hit,
                 params: QuboParams = QuboParams()) -> tuple[float, float]:
    """(cos_theta, cos_phi) for the segment pair a -> b -> c.

    cos_theta is the cosine of the opening angle between the segments in
    standardized cylindrical coordinates (collinear continuation gives +1);
    cos_phi is the same using the raw xy projection. Raises on a
    zero-length segment.
    """
    sp = params.scale_phi
    u = ((b.r - a.r) / params.scale_r, _wrap(b.phi - a.phi) / sp,
         (b.z - a.z) / params.scale_z)
    v = ((c.r - b.r) / params.scale_r, _wrap(c.phi - b.phi) / sp,
         (c.z - b.z) / params.scale_z)
    nu = math.sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
    nv = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if nu == 0.0 or nv == 0.0:
        raise ValueError("zero-length segment in angle_kernel")
    cos_theta = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv)
    ux, uy = b.x - a.x, b.y - a.y
    vx, vy = c.x - b.x, c.y - b.y
    nxy_u = math.hypot(ux, uy)
    nxy_v = math.hypot(vx, vy)
    if nxy_u == 0.0 or nxy_v == 0.0:
        raise ValueError("zero-length xy projection in angle_kernel")
    cos_phi = (ux * vx + uy * vy) / (nxy_u * nxy_v)
    return cos_theta, cos_phi


def z_intercept(a: Hit, c: Hit) -> float:
    """z (mm) at r = 0 of the straight rz-plane line through hits a and c."""
    dr = c.r - a.r
    if dr == 0.0:
        raise ValueError("z_intercept undefined for hits at equal radius")
    return c.z - ((c.z - a.z) / dr) * c.r


def segment_length(a: Hit, b: Hit, params: QuboParams = QuboParams()) -> float:
    """Segment length in the standardized (r, phi, z) space, with phi wrapped."""
    ra, _, za = _standardized(a, params)
    rb, _, zb = _standardized(b, params)
    return math.sqrt((rb - ra) ** 2
                     + (_wrap(b.phi - a.phi) / params.scale_phi) ** 2
                     + (zb - za) ** 2)


def _chain_terms(e1: Edge, e2: Edge, hits: Mapping[int, Hit],
                 params: QuboParams, mode: str) -> float:
    """Quadratic coefficient for edges (a,b), (b,c) chained through b."""
    a, b, c = hits[e1.a], hits[e1.b], hits[e2.b]
    cos_theta, cos_phi = angle_kernel(a, b, c, params)
    ra, _, za = _standardized(a, params)
    rc, _, zc = _standardized(c, params)
    len_ab = segment_length(a, b, params)
    len_bc = segment_length(b, c, params)
    ct_pow = _pow_cos(cos_theta, params.lambda_)
    if mode == "classic_dp":
        return -0.5 * ct_pow / (len_ab + len_bc)
    if ct_pow < params.tau:
        reward = 0.0
    else:
        reward = (ct_pow + params.rho * _pow_cos(cos_phi, params.lambda_)) / (len_ab + len_bc)
    z0 = zc - ((zc - za) / (rc - ra)) * rc  # intercept in standardized coords
    penalty = params.eta_bias * abs(z0) ** params.zeta
    return -reward + penalty


def build_qubo(edges: Sequence[Edge], event: Event,
               params: QuboParams = QuboParams(), mode: str = "full") -> Qubo:
    """Assemble the QUBO over the given candidate edges.

    Variable i corresponds to edges[i]; shuffling the input order permutes
    variable indices but leaves every coefficient intact. Zero-valued
    coefficients are never stored.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    hits = event.hit_index
    for e in edges:
        for hid in (e.a, e.b):
            if hid not in hits:
                raise ValueError(f"edge {e.id} references unknown hit {hid}")
        if not hits[e.a].r < hits[e.b].r:
            raise ValueError(f"edge {e.id} is not r-ordered")
    n = len(edges)
    q = Qubo(n=n, var_to_edge={i: e.id for i, e in enumerate(edges)})
    var = {e.id: i for i, e in enumerate(edges)}
    if len(var) != n:
        raise ValueError("duplicate edge ids in build_qubo input")

    starting: dict[int, list[Edge]] = {}
    ending: dict[int, list[Edge]] = {}
    for e in edges:
        starting.setdefault(e.a, []).append(e)
        ending.setdefault(e.b, []).append(e)

    def quad_key(i: int, j: int) -> tuple[int, int]:
        return (i, j) if i < j else (j, i)

    # Chained pairs: geometric reward and z-intercept penalty.
    for mid, incoming in ending.items():
        outgoing = starting.get(mid)
        if not outgoing:
            continue
        for e1 in incoming:
            for e2 in outgoing:
                coeff = _chain_terms(e1, e2, hits, params, mode)
                _add(q.quadratic, quad_key(var[e1.id], var[e2.id]), coeff)

    if mode in ("full", "classic_dp"):
        # Bifurcations: +alpha per unordered pair sharing a start or an end.
        for group in (starting, ending):
            for shared in group.values():
                for i in range(len(shared)):
                    for j in range(i + 1, len(shared)):
                        _add(q.quadratic,
                             quad_key(var[shared[i].id], var[shared[j].id]),
                             params.alpha)

    if mode == "full":
        for e in edges:
            _add(q.linear, var[e.id], -(params.beta * e.prior - params.gamma))
    elif mode == "classic_dp":
        # Global edge-count constraint -1/2 * (-beta) * (sum X - N)^2 with
        # N = candidate count, expanded over binary variables (X^2 = X).
        half_beta = 0.5 * params.beta
        for i in range(n):
            _add(q.linear, i, half_beta * (1.0 - 2.0 * n))
            for j in range(i + 1, n):
                _add(q.quadratic, (i, j), params.beta)
        q.offset += half_beta * n * n
    return q


def energy(q: Qubo, bits: Sequence[int]) -> float:
    """Evaluate the QUBO at a 0/1 assignment."""
    if len(bits) != q.n:
        raise ValueError(f"assignment length {len(bits)} != n {q.n}")
    if any(b not in (0, 1) for b in bits):
        raise ValueError("bits must be 0 or 1")
    total = q.offset
    for i, h in q.linear.items():
        if bits[i]:
            total += h
    for (i, j), w in q.quadratic.items():
        if bits[i] and bits[j]:
            total += w
    return total


def qubo_to_ising(q: Qubo) -> IsingModel:
    """Exact change of variables X_i = (s_i + 1) / 2, s_i in {-1, +1}.

    The resulting offset keeps the two energy functions equal state by
    state (no constant is dropped).
    """
    m = IsingModel(n=q.n, offset=q.offset)
    for i, h in q.linear.items():
        _add(m.h, i, 0.5 * h)
        m.offset += 0.5 * h
    for (i, j), w in q.quadratic.items():
        _add(m.j, (i, j), 0.25 * w)
        _add(m.h, i, 0.25 * w)
        _add(m.h, j, 0.25 * w)
        m.offset += 0.25 * w
    return m


def ising_energy(m: IsingModel, spins: Sequence[int]) -> float:
    if len(spins) != m.n:
        raise ValueError(f"spin vector length {len(spins)} != n {m.n}")
    if any(s not in (-1, 1) for s in spins):
        raise ValueError("spins must be -1 or +1")
    total = m.offset
    for i, h in m.h.items():
        total += h * spins[i]
    for (i, j), w in m.j.items():
        total += w * spins[i] * spins[j]
    return total


def save_qubo(q: Qubo, path: str) -> None:
    """Plain-text serialization; floats use repr so round-trips are exact."""
    with open(path, "w") as fh:
        fh.write(f"n {q.n}\n")
        fh.write(f"offset {q.offset!r}\n")
        for i in sorted(q.linear):
            fh.write(f"lin {i} {q.linear[i]!r}\n")
        for (i, j) in sorted(q.quadratic):
            fh.write(f"quad {i} {j} {q.quadratic[(i, j)]!r}\n")


def load_qubo(path: str) -> Qubo:
    n = None
    q = Qubo(n=0)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            kind = parts[0]
            try:
                if kind == "n" and len(parts) == 2:
                    n = int(parts[1])
                elif kind == "offset" and len(parts) == 2:
                    q.offset = float(parts[1])
                elif kind == "lin" and len(parts) == 3:
                    q.linear[int(parts[1])] = float(parts[2])
                elif kind == "quad" and len(parts) == 4:
                    i, j = int(parts[1]), int(parts[2])
                    if not i < j:
                        raise ValueError("quad indices must satisfy i < j")
                    q.quadratic[(i, j)] = float(parts[3])
                else:
                    raise ValueError(f"unrecognised line kind {kind!r}")
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if n is None:
        raise ValueError(f"{path}: missing 'n' line")
    q.n = n
    bad = [i for i in q.linear if not 0 <= i < n]
    bad += [i for ij in q.quadratic for i in ij if not 0 <= i < n]
    if bad:
        raise ValueError(f"{path}: variable index out of range: {bad[0]}")
    return q
