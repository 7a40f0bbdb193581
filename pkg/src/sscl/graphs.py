"""Topology graphs over embedding batches.

A batch of embeddings becomes a fully connected weighted graph: edge weights
are cosine similarities of the (row-normalized) embeddings, and a per-column
softmax with smoothness parameter ``gamma`` turns the similarity matrix into
a column-stochastic transition matrix. Column ``j`` of the transition matrix
is the outgoing random-walk distribution of vertex ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, col_softmax

ZERO_NORM_EPS = 1e-12


@dataclass(frozen=True)
class TopologyGraph:
    """A column-stochastic transition matrix plus its smoothness parameter."""

    transition: np.ndarray
    gamma: float

    @property
    def n(self) -> int:
        return self.transition.shape[0]


def _check_embeddings(Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
        raise ValueError(f"embeddings must be a nonempty 2-D matrix, got shape {Z.shape}")
    finite_rows = np.isfinite(Z).all(axis=1)
    if not finite_rows.all():
        bad = int(np.flatnonzero(~finite_rows)[0])
        raise ValueError(f"embedding row {bad} contains a non-finite value")
    return Z


def cosine_similarity_t(Z: Tensor) -> Tensor:
    """Differentiable cosine-similarity matrix of the rows of ``Z``.

    Rows with norm below ``ZERO_NORM_EPS`` are scaled by 1/eps instead of
    erroring; a rectifier network can emit an exactly-zero embedding and a
    degenerate row should not abort training. The result is symmetrized so
    that A[i, j] == A[j, i] holds bitwise.
    """
    N = Z.l2_normalize_rows(ZERO_NORM_EPS)
    A = N @ N.T
    return (A + A.T) * 0.5


def transition_t(A: Tensor, gamma: float) -> Tensor:
    """Differentiable column softmax of ``A / gamma``."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return col_softmax(A * (1.0 / gamma))


def similarity_matrix(Z: np.ndarray) -> np.ndarray:
    """Cosine similarities between embedding rows, as an exactly symmetric matrix."""
    Z = _check_embeddings(Z)
    return cosine_similarity_t(Tensor(Z)).data


def transition_matrix(A: np.ndarray, gamma: float) -> TopologyGraph:
    """Column-stochastic transition matrix from a similarity matrix.

    P[i, j] = exp(A[i, j] / gamma) normalized over i, so each column is a
    probability distribution. Computed with per-column max subtraction.
    """
    A = np.asarray(A, dtype=np.float64)
    if not np.isfinite(A).all():
        raise ValueError("similarity matrix contains non-finite values")
    P = transition_t(Tensor(A), gamma).data
    return TopologyGraph(transition=P, gamma=float(gamma))


def build_graph(Z: np.ndarray, gamma: float) -> TopologyGraph:
    """Topology graph of an embedding batch: similarity followed by softmax."""
    return transition_matrix(similarity_matrix(Z), gamma)
