"""Simulated annealing and the measurement utilities built around it.

The Metropolis sweep loop is the hot path of the whole package, so it lives
in a compiled kernel (_sa_core, Cython) with a pure-Python fallback
(_sa_py) selected at import time. The two implement one shared protocol
specification and return bit-identical results; QUBOTRACK_SA_BACKEND=python
or =cython forces a choice, anything else raises.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _sa_py
from .qubo import Assignment, Qubo, energy

try:
    from . import _sa_core
except ImportError:
    _sa_core = None


def _pick_backend():
    forced = os.environ.get("QUBOTRACK_SA_BACKEND", "").strip().lower()
    if forced == "python":
        return _sa_py
    if forced == "cython":
        if _sa_core is None:
            raise ImportError("QUBOTRACK_SA_BACKEND=cython but the compiled "
                              "kernel is not available")
        return _sa_core
    if forced:
        raise ValueError(f"unknown QUBOTRACK_SA_BACKEND {forced!r}")
    return _sa_core if _sa_core is not None else _sa_py


_BACKEND = _pick_backend()


def backend_name() -> str:
    """Which annealing kernel is active: 'cython' or 'python'."""
    return _BACKEND.backend_name


@dataclass(frozen=True)
class Schedule:
    """Linear inverse-temperature ramp: beta rises from beta_init by
    (beta_fin - beta_init) / sweeps after every sweep."""

    sweeps: int
    beta_init: float = 0.1
    beta_fin: float = 10.0

    def __post_init__(self) -> None:
        if self.sweeps < 1:
            raise ValueError(f"sweeps must be >= 1, got {self.sweeps}")
        if not self.beta_fin > self.beta_init > 0:
            raise ValueError("schedule requires beta_fin > beta_init > 0")


@dataclass(frozen=True)
class ConvergenceProtocol:
    long_sweeps: int = 15000
    long_runs: int = 5
    samples: int = 5
    epsilon: float = 0.0
    # Above this variable count an exact energy match is no longer a
    # realistic target for single probe runs; epsilon is auto-relaxed.
    relax_above: int = 2000

    def __post_init__(self) -> None:
        if self.long_sweeps < 1 or self.long_runs < 1 or self.samples < 1:
            raise ValueError("protocol counts must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


@dataclass(frozen=True)
class ConvergenceStats:
    reference_energy: float
    sweeps_to_converge: tuple[int, ...]
    mean: float
    ci_low: float
    ci_high: float
    epsilon: float


def _csr(q: Qubo):
    """Symmetric CSR adjacency of the quadratic terms, neighbour-sorted."""
    neighbours: list[list[tuple[int, float]]] = [[] for _ in range(q.n)]
    for (i, j), w in q.quadratic.items():
        neighbours[i].append((j, w))
        neighbours[j].append((i, w))
    indptr = np.zeros(q.n + 1, dtype=np.int64)
    idx: list[int] = []
    wts: list[float] = []
    for i, row in enumerate(neighbours):
        row.sort()
        indptr[i + 1] = indptr[i] + len(row)
        idx.extend(j for j, _ in row)
        wts.extend(w for _, w in row)
    h = np.zeros(q.n, dtype=np.float64)
    for i, v in q.linear.items():
        h[i] = v
    return h, indptr, np.array(idx, dtype=np.int64), np.array(wts, dtype=np.float64)


def simulated_anneal(q: Qubo, schedule: Schedule, runs: int = 1,
                     seed: int = 0) -> Assignment:
    """Best assignment over `runs` independent restarts.

    Deterministic given (q, schedule, runs, seed). Never returns anything
    worse than the best initial random state of its runs, because the
    kernel tracks the best state seen from initialisation onward.
    """
    if q.n < 1:
        raise ValueError("simulated_anneal requires at least one variable")
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    h, indptr, indices, weights = _csr(q)
    bits, _ = _BACKEND.sa_solve(h, indptr, indices, weights, q.offset,
                                schedule.sweeps, runs,
                                schedule.beta_init, schedule.beta_fin,
                                seed & ((1 << 64) - 1))
    bits = tuple(int(b) for b in bits)
    return Assignment(bits=bits, energy=energy(q, bits))


def initial_bits(q_n: int, seed: int, run: int) -> tuple[int, ...]:
    """Initial random state of a given run, as the kernel would draw it."""
    return tuple(_BACKEND.initial_bits(q_n, seed & ((1 << 64) - 1), run))


def acceptance_probe(beta: float, delta_e: float, n_proposals: int,
                     seed: int = 0) -> float:
    """Empirical Metropolis acceptance rate of the active kernel for a
    fixed (beta, delta_e) proposal."""
    if n_proposals < 1:
        raise ValueError("n_proposals must be >= 1")
    acc = _BACKEND.acceptance_probe(beta, delta_e, n_proposals,
                                    seed & ((1 << 64) - 1))
    return acc / n_proposals


def brute_force(q: Qubo) -> Assignment:
    """Exhaustive ground-state search for n <= 25 variables.

    Ties are broken toward the lexicographically smallest bit vector. An
    empty QUBO yields the empty assignment at the offset energy.
    """
    if q.n > 25:
        raise ValueError(f"brute_force limited to 25 variables, got {q.n}")
    if q.n == 0:
        return Assignment(bits=(), energy=q.offset)
    n = q.n
    h = np.zeros(n)
    for i, v in q.linear.items():
        h[i] = v
    jmat = np.zeros((n, n))
    for (i, j), w in q.quadratic.items():
        jmat[i, j] = w
    shifts = np.arange(n - 1, -1, -1, dtype=np.uint64)
    best_e = math.inf
    best_k = 0
    chunk = 1 << 16
    for lo in range(0, 1 << n, chunk):
        ks = np.arange(lo, min(lo + chunk, 1 << n), dtype=np.uint64)
        x = ((ks[:, None] >> shifts[None, :]) & 1).astype(np.float64)
        e = x @ h + np.einsum("ki,ij,kj->k", x, jmat, x)
        a = int(np.argmin(e))
        if e[a] < best_e:  # strict: first occurrence wins, i.e. lex smallest
            best_e = float(e[a])
            best_k = int(ks[a])
    bits = tuple((best_k >> int(s)) & 1 for s in shifts)
    return Assignment(bits=bits, energy=best_e + q.offset)


def random_baseline(n_vars: int, true_fraction: float, seed: int = 0) -> np.ndarray:
    """Independent Bernoulli(true_fraction) bits; the density-matched
    control every annealed selection is compared against."""
    if n_vars < 0:
        raise ValueError("n_vars must be non-negative")
    if not 0.0 <= true_fraction <= 1.0:
        raise ValueError(f"true_fraction must lie in [0, 1], got {true_fraction}")
    rng = np.random.default_rng(seed)
    return (rng.random(n_vars) < true_fraction).astype(np.uint8)


def _derive(seed: int, *salt: int) -> int:
    s = seed & ((1 << 64) - 1)
    for v in salt:
        s = (s * 0x100000001B3 + v + 1) & ((1 << 64) - 1)
    return s


def measure_convergence(q: Qubo, protocol: ConvergenceProtocol = ConvergenceProtocol(),
                        seed: int = 0) -> ConvergenceStats:
    """How many sweeps a single run needs to reach the reference energy.

    The reference is the best of long_runs runs at long_sweeps sweeps. Each
    of `samples` searches then probes increasing sweep counts: doubling
    from 1 until a fresh single-run anneal lands within epsilon of the
    reference, then a binary search for the smallest such count. Probes use
    fresh seeds, so the boundary is stochastic; the recorded value is the
    smallest count whose probe succeeded in that sample's search.
    """
    sched = lambda s: Schedule(sweeps=s)
    ref = simulated_anneal(q, sched(protocol.long_sweeps), protocol.long_runs,
                           _derive(seed, 0)).energy
    eps = protocol.epsilon
    if eps == 0.0 and q.n > protocol.relax_above:
        eps = 1e-3 * abs(ref)
    cap = 4 * protocol.long_sweeps
    samples = []
    for s in range(protocol.samples):
        trial = 0

        def probe(sweeps: int) -> bool:
            nonlocal trial
            trial += 1
            a = simulated_anneal(q, sched(sweeps), 1, _derive(seed, s + 1, trial))
            return a.energy <= ref + eps

        hi = 1
        succeeded = probe(hi)
        lo = 0
        while not succeeded and hi < cap:
            lo = hi
            hi = min(2 * hi, cap)
            succeeded = probe(hi)
        if not succeeded or hi == 1:
            samples.append(hi)
            continue
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if probe(mid):
                hi = mid
            else:
                lo = mid
        samples.append(hi)
    mean, ci_low, ci_high = bootstrap_mean({0: samples}, seed=_derive(seed, 999))
    return ConvergenceStats(reference_energy=ref,
                            sweeps_to_converge=tuple(samples),
                            mean=mean, ci_low=ci_low, ci_high=ci_high,
                            epsilon=eps)


def _pseudo_sums(per_subqubo_samples: Mapping, n_pseudo: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    keys = sorted(per_subqubo_samples)
    arrays = [np.asarray(per_subqubo_samples[k], dtype=float) for k in keys]
    for k, arr in zip(keys, arrays):
        if arr.size == 0:
            raise ValueError(f"sub-QUBO {k!r} has no samples")
    sums = np.zeros(n_pseudo)
    for arr in arrays:
        sums += arr[rng.integers(0, arr.size, n_pseudo)]
    return sums


def bootstrap_mean(per_subqubo_samples: Mapping, n_pseudo: int = 250,
                   seed: int = 0) -> tuple[float, float, float]:
    """Bootstrap the total over sub-QUBOs: each pseudo-sample draws one
    value per sub-QUBO uniformly and sums them. Returns the mean of the
    n_pseudo sums and their central 68% interval."""
    if not per_subqubo_samples:
        raise ValueError("bootstrap_mean requires at least one sub-QUBO")
    if n_pseudo < 1:
        raise ValueError("n_pseudo must be >= 1")
    sums = _pseudo_sums(per_subqubo_samples, n_pseudo, seed)
    mean = float(sums.mean())
    ci_low = float(np.percentile(sums, 16.0))
    ci_high = float(np.percentile(sums, 84.0))
    return mean, min(ci_low, mean), max(ci_high, mean)


def write_convergence_csv(stats_by_key: Mapping, path: str) -> None:
    """One row per measured sub-QUBO."""
    with open(path, "w") as fh:
        fh.write("key,n_vars,reference_energy,mean,ci_low,ci_high,epsilon,samples\n")
        for key in sorted(stats_by_key):
            st, n_vars = stats_by_key[key]
            cells = [str(key), str(n_vars), repr(st.reference_energy),
                     repr(st.mean), repr(st.ci_low), repr(st.ci_high),
                     repr(st.epsilon),
                     ";".join(str(s) for s in st.sweeps_to_converge)]
            fh.write(",".join(cells) + "\n")
