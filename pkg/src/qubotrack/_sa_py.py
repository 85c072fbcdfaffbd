"""Pure-Python simulated-annealing kernel.

This is the reference implementation of the sweep protocol; the compiled
kernel in _sa_core.pyx follows the exact same specification and must
produce bit-identical results, which the test suite checks. Keep the two
in lockstep:

* RNG: splitmix64. The per-run stream starts at
  state = seed XOR ((run + 1) * 0xD2B74407B1CE6E93), all mod 2**64;
  uniforms are (next() >> 11) * 2**-53.
* Initialisation: one uniform per variable in index order; bit = u < 0.5.
* A sweep proposes single-bit flips for variables 0..n-1 in order. The
  energy change of flipping i is (1 - 2 x_i) * g_i where g_i is the local
  field h_i + sum_j J_ij x_j, maintained incrementally. Downhill or flat
  moves are accepted without consuming randomness; uphill moves consume
  one uniform and are accepted when u < exp(-beta * dE).
* beta starts at beta0 and increases by (beta1 - beta0) / sweeps after
  every sweep.
* The best (lowest-energy) state seen, including the initial one, is
  tracked per run; across runs ties are broken toward the
  lexicographically smallest bit vector.
"""

from __future__ import annotations

import math

import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
RUNMIX = 0xD2B74407B1CE6E93

backend_name = "python"


def _next(state: int) -> tuple[int, int]:
    state = (state + GOLDEN) & MASK
    z = state
    z = ((z ^ (z >> 30)) * MIX1) & MASK
    z = ((z ^ (z >> 27)) * MIX2) & MASK
    z ^= z >> 31
    return z, state


def _uniform(state: int) -> tuple[float, int]:
    z, state = _next(state)
    return (z >> 11) * (1.0 / 9007199254740992.0), state


def _run_state(seed: int, run: int) -> int:
    return (seed ^ ((run + 1) * RUNMIX)) & MASK


def initial_bits(n: int, seed: int, run: int) -> list[int]:
    """The initial state of a given run; exposed so tests can verify that
    annealing never returns anything worse than its best starting point."""
    state = _run_state(seed, run)
    bits = []
    for _ in range(n):
        u, state = _uniform(state)
        bits.append(1 if u < 0.5 else 0)
    return bits


def sa_solve(h, indptr, indices, weights, offset, sweeps, runs, beta0, beta1, seed):
    """Anneal the CSR-encoded QUBO; returns (bits uint8 array, energy)."""
    n = len(h)
    dbeta = (beta1 - beta0) / sweeps
    best_bits = None
    best_e = math.inf
    exp = math.exp
    for run in range(runs):
        state = _run_state(seed, run)
        x = [0] * n
        for i in range(n):
            u, state = _uniform(state)
            x[i] = 1 if u < 0.5 else 0
        g = [0.0] * n
        for i in range(n):
            gi = h[i]
            for k in range(indptr[i], indptr[i + 1]):
                if x[indices[k]]:
                    gi += weights[k]
            g[i] = gi
        e = offset
        for i in range(n):
            if x[i]:
                e += h[i]
                for k in range(indptr[i], indptr[i + 1]):
                    j = indices[k]
                    if j > i and x[j]:
                        e += weights[k]
        run_best_e = e
        run_best = list(x)
        for s in range(sweeps):
            beta = beta0 + s * dbeta
            for i in range(n):
                d = g[i] if x[i] == 0 else -g[i]
                if d <= 0.0:
                    accept = True
                else:
                    u, state = _uniform(state)
                    accept = u < exp(-beta * d)
                if accept:
                    sgn = 1.0 if x[i] == 0 else -1.0
                    x[i] ^= 1
                    e += d
                    for k in range(indptr[i], indptr[i + 1]):
                        g[indices[k]] += sgn * weights[k]
                    if e < run_best_e:
                        run_best_e = e
                        run_best = list(x)
        if run_best_e < best_e or (run_best_e == best_e
                                   and (best_bits is None or run_best < best_bits)):
            best_e = run_best_e
            best_bits = run_best
    return np.array(best_bits, dtype=np.uint8), best_e


def acceptance_probe(beta: float, delta_e: float, n_proposals: int, seed: int) -> int:
    """Count Metropolis acceptances of a fixed-dE proposal at fixed beta.

    Uses the same accept rule and RNG as sa_solve; exists so the statistical
    behaviour of the kernel can be tested directly.
    """
    state = _run_state(seed, 0)
    accepted = 0
    exp = math.exp
    threshold = exp(-beta * delta_e)
    for _ in range(n_proposals):
        if delta_e <= 0.0:
            accepted += 1
        else:
            u, state = _uniform(state)
            if u < threshold:
                accepted += 1
    return accepted
