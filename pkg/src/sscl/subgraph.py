"""K-order personalized-PageRank vectors and the sub-graph distillation loss.

The K-order PPR value pi^K(s, u) is the probability that a random walk from
vertex ``s`` terminates at ``u`` within K steps, including the zero-step
term: pi^K(s, .) = sum_{t=0..K} P^t e_s. Collecting these values from a
fixed set of start vertices gives each sample a distillation vector that
encodes its local sub-graph structure; the distillation loss is the mean
squared discrepancy between a sample's vectors on the old and new graphs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import AlignmentError
from .graphs import TopologyGraph, _check_embeddings, cosine_similarity_t, transition_t

BRUTE_FORCE_MAX_NODES = 8
BRUTE_FORCE_MAX_ORDER = 5


@dataclass(frozen=True)
class DistillationVectorSet:
    """PPR values from each start vertex to each target sample.

    ``values[x][i]`` is pi^K(start_ids[i], target_ids[x]). Entries lie in
    [0, K+1]; when the targets cover the whole graph, each column sums to
    K+1 (one unit of walk mass per step plus the zero-step unit).
    """

    values: np.ndarray
    start_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    order: int


def _check_graph(G: TopologyGraph) -> np.ndarray:
    P = np.asarray(G.transition, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"transition matrix must be square, got shape {P.shape}")
    return P


def ppr_k(G: TopologyGraph, s: int, K: int) -> np.ndarray:
    """K-order PPR values of every vertex with respect to source ``s``.

    Iterates q <- P q from q = e_s and accumulates the partial sums, so the
    entry for vertex u is the mass of walks from s ending at u within K
    steps (plus the t=0 delta at s itself).
    """
    P = _check_graph(G)
    n = P.shape[0]
    if not 0 <= s < n:
        raise IndexError(f"start vertex {s} out of range for {n} nodes")
    if K < 0:
        raise ValueError(f"order K must be nonnegative, got {K}")
    q = np.zeros(n)
    q[s] = 1.0
    acc = q.copy()
    for _ in range(K):
        q = P @ q
        acc += q
    return acc


def brute_force_ppr(G: TopologyGraph, s: int, K: int) -> np.ndarray:
    """Independent oracle for :func:`ppr_k` by explicit walk enumeration.

    Expands every node sequence (s, v1, ..., vt) for t = 0..K, multiplying
    transition entries along the way and adding each prefix's mass to its
    terminal node. Exponential in K, hence the hard size bounds.
    """
    P = _check_graph(G)
    n = P.shape[0]
    if n > BRUTE_FORCE_MAX_NODES or K > BRUTE_FORCE_MAX_ORDER:
        raise ValueError(
            f"refusing brute-force enumeration for n={n}, K={K} "
            f"(bounds: n <= {BRUTE_FORCE_MAX_NODES}, K <= {BRUTE_FORCE_MAX_ORDER})"
        )
    if not 0 <= s < n:
        raise IndexError(f"start vertex {s} out of range for {n} nodes")
    if K < 0:
        raise ValueError(f"order K must be nonnegative, got {K}")
    out = np.zeros(n)

    def walk(v: int, depth: int, mass: float) -> None:
        out[v] += mass
        if depth == K:
            return
        for u in range(n):
            # P[u, v] is the probability of stepping from v to u.
            walk(u, depth + 1, mass * P[u, v])

    walk(s, 0, 1.0)
    return out


def _ppr_sum_t(P: Tensor, starts: np.ndarray, K: int) -> Tensor:
    """Differentiable n x r matrix of pi^K(starts[i], .) columns."""
    n = P.data.shape[0]
    E = np.zeros((n, len(starts)))
    E[starts, np.arange(len(starts))] = 1.0
    q: Tensor = Tensor(E)
    acc: Tensor = q
    for _ in range(K):
        q = P @ q
        acc = acc + q
    return acc


def distillation_vectors(
    G: TopologyGraph,
    starts: list[int] | np.ndarray,
    targets: list[int] | np.ndarray,
    K: int,
) -> DistillationVectorSet:
    """PPR values from every start to every target, propagated jointly.

    All start columns are pushed through the transition matrix at once, so
    the cost is K dense matrix products instead of one walk per start.
    """
    P = _check_graph(G)
    n = P.shape[0]
    starts = np.asarray(starts, dtype=np.intp)
    targets = np.asarray(targets, dtype=np.intp)
    if starts.size == 0:
        raise ValueError("starts must be nonempty")
    if K < 0:
        raise ValueError(f"order K must be nonnegative, got {K}")
    for name, idx in (("start", starts), ("target", targets)):
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError(f"{name} index out of range for {n} nodes")
    acc = _ppr_sum_t(Tensor(P), starts, K).data
    return DistillationVectorSet(
        values=acc[targets, :],
        start_ids=tuple(int(i) for i in starts),
        target_ids=tuple(int(i) for i in targets),
        order=int(K),
    )


def sgd_loss(S_R: DistillationVectorSet, S_N: DistillationVectorSet) -> float:
    """Sub-graph distillation loss: mean squared gap between vector sets.

    Averaged over both targets and starts so the magnitude does not grow
    with batch or buffer size. Zero exactly when the sets coincide.
    """
    if (
        S_R.start_ids != S_N.start_ids
        or S_R.target_ids != S_N.target_ids
        or S_R.order != S_N.order
    ):
        raise AlignmentError("distillation vector sets disagree on starts, targets, or K")
    if S_R.values.shape != S_N.values.shape:
        raise AlignmentError(
            f"distillation value shapes differ: {S_R.values.shape} vs {S_N.values.shape}"
        )
    diff = S_R.values - S_N.values
    return float(np.mean(diff * diff))


def subgraph_loss_t(
    Z_old: Tensor,
    Z_new: Tensor,
    replay_positions: np.ndarray,
    gamma: float,
    K: int,
) -> Tensor:
    """Differentiable distillation loss between the old and new graphs.

    The old graph covers the replay rows only; the new graph covers the whole
    merged batch, with the replay rows acting as both start and target
    vertices. The old side is detached, so no gradient reaches it.
    """
    r = len(replay_positions)
    P_old = transition_t(cosine_similarity_t(Z_old.detach()), gamma)
    P_new = transition_t(cosine_similarity_t(Z_new), gamma)
    old_idx = np.arange(r)
    S_R = _ppr_sum_t(P_old, old_idx, K).gather_rows(old_idx).detach()
    S_N = _ppr_sum_t(P_new, replay_positions, K).gather_rows(replay_positions)
    diff = S_R - S_N
    return (diff * diff).mean()


def sgd_loss_from_embeddings(
    Z_old: np.ndarray,
    Z_new: np.ndarray,
    replay_positions: list[int] | np.ndarray,
    gamma: float,
    K: int,
) -> tuple[float, np.ndarray]:
    """Distillation loss between old/new embedding graphs, plus its gradient.

    ``Z_old`` holds the previous extractor's embeddings of the replayed
    samples; ``Z_new`` holds the current extractor's embeddings of the merged
    batch, with ``replay_positions`` locating the replayed samples inside it.
    Returns the loss and d(loss)/d(Z_new); the old graph is a constant.
    """
    Z_old = _check_embeddings(Z_old)
    Z_new = _check_embeddings(Z_new)
    positions = np.asarray(replay_positions, dtype=np.intp)
    if positions.size == 0:
        raise ValueError("replay set must be nonempty")
    if len(np.unique(positions)) != positions.size:
        raise ValueError("replay positions must be distinct")
    if positions.min() < 0 or positions.max() >= Z_new.shape[0]:
        raise IndexError("replay position out of range for the merged batch")
    if positions.size != Z_old.shape[0]:
        raise AlignmentError(
            f"{Z_old.shape[0]} old embeddings but {positions.size} replay positions"
        )
    z_new = Tensor(Z_new, requires_grad=True)
    loss = subgraph_loss_t(Tensor(Z_old), z_new, positions, gamma, K)
    loss.backward()
    # K=0 leaves no differentiable path: the zero-step vectors are constants.
    grad = z_new.grad if z_new.grad is not None else np.zeros_like(Z_new)
    return float(loss.data), grad
