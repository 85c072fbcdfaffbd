# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulated-annealing kernel.

Bit-identical twin of _sa_py.py: same splitmix64 stream, same proposal
order, same accept rule, same tie-breaks. See that module's docstring for
the full protocol specification; any change must be mirrored there.
Compiled without -ffast-math so IEEE semantics match CPython's.
"""

from libc.math cimport exp, INFINITY
from libc.stdint cimport uint64_t, int64_t, uint8_t

import numpy as np

backend_name = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9
cdef uint64_t MIX2 = 0x94D049BB133111EB
cdef uint64_t RUNMIX = 0xD2B74407B1CE6E93


cdef inline uint64_t _next(uint64_t* state) nogil:
    cdef uint64_t z
    state[0] = state[0] + GOLDEN
    z = state[0]
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t* state) nogil:
    return <double>(_next(state) >> 11) * (1.0 / 9007199254740992.0)


def initial_bits(int n, unsigned long long seed, int run):
    cdef uint64_t state = (<uint64_t>seed) ^ ((<uint64_t>(run + 1)) * RUNMIX)
    cdef int i
    out = []
    for i in range(n):
        out.append(1 if _uniform(&state) < 0.5 else 0)
    return out


def sa_solve(double[::1] h, int64_t[::1] indptr, int64_t[::1] indices,
             double[::1] weights, double offset, int sweeps, int runs,
             double beta0, double beta1, unsigned long long seed):
    cdef int n = h.shape[0]
    cdef double dbeta = (beta1 - beta0) / sweeps
    bits_arr = np.zeros(n, dtype=np.uint8)
    run_best_arr = np.zeros(n, dtype=np.uint8)
    best_arr = np.zeros(n, dtype=np.uint8)
    g_arr = np.zeros(n, dtype=np.float64)
    cdef uint8_t[::1] x = bits_arr
    cdef uint8_t[::1] run_best = run_best_arr
    cdef uint8_t[::1] best = best_arr
    cdef double[::1] g = g_arr
    cdef double best_e = INFINITY
    cdef double e, run_best_e, beta, d, sgn
    cdef uint64_t state
    cdef int run, s, i, better, k0
    cdef int64_t k, j
    cdef bint have_best = 0, accept, take

    with nogil:
        for run in range(runs):
            state = (<uint64_t>seed) ^ ((<uint64_t>(run + 1)) * RUNMIX)
            for i in range(n):
                x[i] = 1 if _uniform(&state) < 0.5 else 0
            for i in range(n):
                g[i] = h[i]
                for k in range(indptr[i], indptr[i + 1]):
                    if x[indices[k]]:
                        g[i] += weights[k]
            e = offset
            for i in range(n):
                if x[i]:
                    e += h[i]
                    for k in range(indptr[i], indptr[i + 1]):
                        j = indices[k]
                        if j > i and x[j]:
                            e += weights[k]
            run_best_e = e
            for i in range(n):
                run_best[i] = x[i]
            for s in range(sweeps):
                beta = beta0 + s * dbeta
                for i in range(n):
                    d = g[i] if x[i] == 0 else -g[i]
                    if d <= 0.0:
                        accept = 1
                    else:
                        accept = _uniform(&state) < exp(-beta * d)
                    if accept:
                        sgn = 1.0 if x[i] == 0 else -1.0
                        x[i] ^= 1
                        e += d
                        for k in range(indptr[i], indptr[i + 1]):
                            g[indices[k]] += sgn * weights[k]
                        if e < run_best_e:
                            run_best_e = e
                            for j in range(n):
                                run_best[j] = x[j]
            take = 0
            if run_best_e < best_e or not have_best:
                take = 1
            elif run_best_e == best_e:
                for i in range(n):
                    if run_best[i] != best[i]:
                        take = run_best[i] < best[i]
                        break
            if take:
                best_e = run_best_e
                for i in range(n):
                    best[i] = run_best[i]
                have_best = 1
    return best_arr, best_e


def acceptance_probe(double beta, double delta_e, long n_proposals,
                     unsigned long long seed):
    cdef uint64_t state = (<uint64_t>seed) ^ (<uint64_t>1 * RUNMIX)
    cdef long accepted = 0, p
    cdef double threshold = exp(-beta * delta_e)
    with nogil:
        for p in range(n_proposals):
            if delta_e <= 0.0:
                accepted += 1
            else:
                if _uniform(&state) < threshold:
                    accepted += 1
    return accepted
