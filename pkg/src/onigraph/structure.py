"""Learned global connectivity: a continuous adjacency matrix computed from
static node features, sparsified to a total edge budget, with self-loops.

Edge scores are bilinear in two learned embeddings of the static node
features. Each entry is a weighted directed connection, the score matrix
need not be symmetric, and both directions of a pair may survive
sparsification. Only the largest ``max_edges`` off-diagonal entries are
kept (a budget on the total edge count, not per node), so informative
nodes are free to accumulate many more connections than others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add_const, matmul, mul_mask, scale, transpose, unary_activation
from .errors import ConfigError, DimensionError

Array = np.ndarray


@dataclass
class StructureParams:
    """Inputs of the connectivity learner.

    static_features: (N, d_in) per-node descriptors, fixed during training.
    w_from / w_to:   (d_in, d_emb) learnable maps producing the sender and
                     receiver embeddings whose inner products score edges.
    feature_gain:    pre-tanh scale; smaller values spread the embeddings.
    score_gain:      pre-sigmoid scale; larger values sharpen edge scores
                     away from 0.5 without changing their order.
    max_edges:       budget on off-diagonal nonzeros after sparsification.
    """

    static_features: Tensor
    w_from: Tensor
    w_to: Tensor
    feature_gain: float = 0.1
    score_gain: float = 2.0
    max_edges: int = 0

    def __post_init__(self):
        n, d_in = self.static_features.shape
        if self.w_from.shape != self.w_to.shape or self.w_from.shape[0] != d_in:
            raise DimensionError(
                f"embedding maps {self.w_from.shape}/{self.w_to.shape} do not fit "
                f"feature width {d_in}"
            )
        if self.feature_gain <= 0.0 or self.score_gain <= 0.0:
            raise ConfigError("feature_gain and score_gain must be positive")
        if not 0 <= self.max_edges <= n * (n - 1):
            raise ConfigError(
                f"max_edges must lie in [0, {n * (n - 1)}], got {self.max_edges}"
            )

    @property
    def node_count(self) -> int:
        return self.static_features.shape[0]


@dataclass
class Adjacency:
    """Sparsified adjacency: entries in [0, 1], plus the survivor mask."""

    matrix: Tensor
    kept_mask: Array  # bool (N, N), True where the entry is nonzero


def compute_scores(params: StructureParams) -> Tensor:
    """Dense edge scores sigmoid(score_gain * E_from @ E_to^T) where
    E_* = tanh(feature_gain * static_features @ w_*). Fully differentiable
    with respect to w_from and w_to."""
    emb_from = unary_activation(
        scale(matmul(params.static_features, params.w_from), params.feature_gain), "tanh"
    )
    emb_to = unary_activation(
        scale(matmul(params.static_features, params.w_to), params.feature_gain), "tanh"
    )
    return unary_activation(
        scale(matmul(emb_from, transpose(emb_to)), params.score_gain), "sigmoid"
    )


def top_edges_mask(scores: Array, max_edges: int) -> Array:
    """Boolean mask of the ``max_edges`` largest off-diagonal entries.

    Ties are broken toward the smallest (row, col) pair so the selection is
    fully deterministic. The diagonal never competes for the budget.
    """
    n = scores.shape[0]
    if max_edges < 0:
        raise ConfigError(f"edge budget must be non-negative, got {max_edges}")
    off = ~np.eye(n, dtype=bool)
    rows, cols = np.nonzero(off)
    values = scores[rows, cols]
    # lexsort: last key is primary, so sort by value desc, then row, then col
    order = np.lexsort((cols, rows, -values))
    keep = order[:max_edges]
    mask = np.zeros((n, n), dtype=bool)
    mask[rows[keep], cols[keep]] = True
    return mask


def sparsify_top_e(scores: Tensor, max_edges: int) -> Adjacency:
    """Zero everything except the ``max_edges`` largest off-diagonal scores.

    Gradient is a masked pass-through: kept entries stay differentiable,
    dropped entries (and the diagonal) receive zero gradient.
    """
    if scores.data.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise DimensionError(f"scores must be square, got {scores.shape}")
    mask = top_edges_mask(scores.data, max_edges)
    return Adjacency(mul_mask(scores, mask), mask)


def add_self_loops(adj: Adjacency) -> Adjacency:
    """Set every diagonal entry to exactly 1.0, off the tape.

    Self-loops do not count against the edge budget and carry no gradient;
    off-diagonal entries are untouched. Idempotent.
    """
    n = adj.matrix.shape[0]
    eye = np.eye(n, dtype=bool)
    cleared = mul_mask(adj.matrix, ~eye)
    return Adjacency(add_const(cleared, np.eye(n)), adj.kept_mask | eye)


def build_adjacency(params: StructureParams, kept_mask: Array | None = None) -> Adjacency:
    """Scores -> top-e sparsification -> self-loops.

    Recomputed from the current parameters on every call, so training sees
    a fresh adjacency each optimization step. Passing ``kept_mask`` skips
    edge selection and reuses a fixed survivor set, which keeps the forward
    pass differentiable at a frozen sparsity pattern (used by gradient
    checks, where re-selection would make finite differences meaningless).
    """
    scores = compute_scores(params)
    if kept_mask is None:
        sparse = sparsify_top_e(scores, params.max_edges)
    else:
        off_mask = kept_mask & ~np.eye(params.node_count, dtype=bool)
        sparse = Adjacency(mul_mask(scores, off_mask), off_mask)
    return add_self_loops(sparse)
