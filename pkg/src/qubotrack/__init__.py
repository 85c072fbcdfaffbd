"""Track building by QUBO formulation and simulated annealing.

The package turns hit-pair (edge) selection into a quadratic unconstrained
binary optimisation problem: classical pre-processing (azimuthal sectoring,
a KDE edge prior, sub-graph decomposition) shrinks the candidate set, a
simulated annealer selects edges, and the selected edges are assembled into
track candidates and scored against truth.
"""

__version__ = "0.1.0"
