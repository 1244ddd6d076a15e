"""Eigenvector centrality of the learned adjacency.

A node scores high when it connects to other high-scoring nodes; the
scores are the entries of the dominant right eigenvector, A v = lambda v,
computed by power iteration. For a non-negative matrix with a simple
dominant eigenvalue the iteration started from a uniform positive vector
converges to the non-negative dominant eigenvector; degenerate spectra
surface as a convergence error rather than a silently wrong answer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError, NumericError
from .structure import Adjacency

Array = np.ndarray


@dataclass
class CentralityScores:
    scores: Array  # non-negative, unit L2 norm
    eigenvalue: float
    residual: float  # ||A v - lambda v||_2
    iterations: int


def eigenvector_centrality(
    adjacency: Adjacency | Array, tol: float = 1e-10, max_iter: int = 10_000
) -> CentralityScores:
    a = adjacency.matrix.data if isinstance(adjacency, Adjacency) else np.asarray(adjacency, float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"adjacency must be square, got {a.shape}")
    if np.any(a < 0.0):
        raise NumericError("eigenvector centrality needs a non-negative matrix")
    n = a.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    for iteration in range(1, max_iter + 1):
        av = a @ v
        norm = np.linalg.norm(av)
        if norm == 0.0:
            raise NumericError("power iteration hit the zero vector; graph has no cycles")
        v_next = av / norm
        if np.linalg.norm(v_next - v) < tol:
            v = v_next
            eigenvalue = float(v @ (a @ v))
            residual = float(np.linalg.norm(a @ v - eigenvalue * v))
            return CentralityScores(v, eigenvalue, residual, iteration)
        v = v_next
    residual = float(np.linalg.norm(a @ v - float(v @ (a @ v)) * v))
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations "
        f"(final residual {residual:.3e}); the dominant eigenvalue may not be simple"
    )
