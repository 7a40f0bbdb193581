"""Fixed-capacity replay store with labeled/unlabeled quotas and herding.

The buffer keeps two pools: exemplars with true labels and exemplars carrying
a pseudo-label (the model's prediction when they were stored). Capacity is
split between the pools by fixed quotas, and each pool divides its quota
evenly over the classes it has seen. Within a class, exemplars are kept in
herding order: the greedy order whose running mean best tracks the class mean
in embedding space. Shrinking a class to a smaller quota therefore never
needs re-selection, only truncation of the stored order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

ZERO_NORM_EPS = 1e-12


@dataclass(frozen=True)
class Exemplar:
    """One stored sample: raw features plus its label status at storage time."""

    features: np.ndarray
    label: int
    is_pseudo: bool
    task_of_origin: int
    stored_prediction: np.ndarray
    confidence: float | None = None

    def __post_init__(self):
        if self.is_pseudo == (self.confidence is None):
            raise ValueError("confidence must be present exactly when the label is a pseudo-label")
        total = float(np.sum(self.stored_prediction))
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"stored prediction sums to {total:.8f}, expected 1")


@dataclass
class BufferCandidates:
    """Current-task samples offered to the buffer, with model outputs attached.

    Embedding and prediction rows are aligned with the input rows of their
    pool. Predictions are the current model's softmax at insertion time.
    """

    labeled_inputs: np.ndarray
    labeled_targets: np.ndarray
    unlabeled_inputs: np.ndarray
    labeled_embeddings: np.ndarray
    unlabeled_embeddings: np.ndarray
    labeled_predictions: np.ndarray
    unlabeled_predictions: np.ndarray

    def __post_init__(self):
        if not (
            len(self.labeled_inputs)
            == len(self.labeled_targets)
            == len(self.labeled_embeddings)
            == len(self.labeled_predictions)
        ):
            raise ValueError("labeled candidate arrays are not row-aligned")
        if not (
            len(self.unlabeled_inputs)
            == len(self.unlabeled_embeddings)
            == len(self.unlabeled_predictions)
        ):
            raise ValueError("unlabeled candidate arrays are not row-aligned")


@dataclass
class MemoryBuffer:
    """Capacity-bounded exemplar store split into labeled and pseudo-labeled pools."""

    capacity: int
    labeled_quota: int
    unlabeled_quota: int
    labeled_groups: dict[int, list[Exemplar]] = field(default_factory=dict)
    unlabeled_groups: dict[int, list[Exemplar]] = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"capacity must be positive, got {self.capacity}")
        if self.labeled_quota + self.unlabeled_quota != self.capacity:
            raise ValueError(
                f"quotas {self.labeled_quota}+{self.unlabeled_quota} "
                f"must sum to capacity {self.capacity}"
            )

    @property
    def exemplars(self) -> list[Exemplar]:
        """All exemplars: labeled pool first, classes in id order, herding order within."""
        out: list[Exemplar] = []
        for groups in (self.labeled_groups, self.unlabeled_groups):
            for cls in sorted(groups):
                out.extend(groups[cls])
        return out

    def __len__(self) -> int:
        return sum(len(g) for g in self.labeled_groups.values()) + sum(
            len(g) for g in self.unlabeled_groups.values()
        )

    def labeled_count(self) -> int:
        return sum(len(g) for g in self.labeled_groups.values())

    def unlabeled_count(self) -> int:
        return sum(len(g) for g in self.unlabeled_groups.values())

    def check_invariants(self) -> None:
        if len(self) > self.capacity:
            raise AssertionError(f"buffer holds {len(self)} exemplars over capacity {self.capacity}")
        if self.labeled_count() > self.labeled_quota:
            raise AssertionError("labeled pool exceeds its quota")
        if self.unlabeled_count() > self.unlabeled_quota:
            raise AssertionError("unlabeled pool exceeds its quota")

    # ---- serialization -----------------------------------------------------

    def to_snapshot(self) -> dict:
        """JSON-ready snapshot; exemplar order within each class is preserved."""

        def dump_groups(groups: dict[int, list[Exemplar]]) -> dict:
            return {
                str(cls): [
                    {
                        "features": ex.features.tolist(),
                        "label": int(ex.label),
                        "is_pseudo": ex.is_pseudo,
                        "task_of_origin": int(ex.task_of_origin),
                        "stored_prediction": ex.stored_prediction.tolist(),
                        "confidence": ex.confidence,
                    }
                    for ex in items
                ]
                for cls, items in sorted(groups.items())
            }

        return {
            "capacity": self.capacity,
            "labeled_quota": self.labeled_quota,
            "unlabeled_quota": self.unlabeled_quota,
            "labeled_groups": dump_groups(self.labeled_groups),
            "unlabeled_groups": dump_groups(self.unlabeled_groups),
        }

    @classmethod
    def from_snapshot(cls, snapshot: dict) -> "MemoryBuffer":
        def load_groups(raw: dict) -> dict[int, list[Exemplar]]:
            return {
                int(cls): [
                    Exemplar(
                        features=np.asarray(item["features"], dtype=np.float64),
                        label=int(item["label"]),
                        is_pseudo=bool(item["is_pseudo"]),
                        task_of_origin=int(item["task_of_origin"]),
                        stored_prediction=np.asarray(item["stored_prediction"], dtype=np.float64),
                        confidence=item["confidence"],
                    )
                    for item in items
                ]
                for cls, items in raw.items()
            }

        return cls(
            capacity=int(snapshot["capacity"]),
            labeled_quota=int(snapshot["labeled_quota"]),
            unlabeled_quota=int(snapshot["unlabeled_quota"]),
            labeled_groups=load_groups(snapshot["labeled_groups"]),
            unlabeled_groups=load_groups(snapshot["unlabeled_groups"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_snapshot(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MemoryBuffer":
        return cls.from_snapshot(json.loads(text))


def herding_order(F: np.ndarray) -> list[int]:
    """Greedy mean-matching order over the rows of an embedding matrix.

    Embeddings are L2-normalized first. Having picked p_1..p_{k-1}, the k-th
    pick minimizes || mu - (f(x) + sum_j f(p_j)) / k ||, where mu is the mean
    of the normalized group. Ties go to the smallest remaining index. The
    first q entries of the result are the herding selection for any quota q.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] < 1:
        raise ValueError(f"expected a nonempty 2-D embedding matrix, got shape {F.shape}")
    if not np.isfinite(F).all():
        raise ValueError("herding embeddings contain non-finite values")
    norms = np.linalg.norm(F, axis=1, keepdims=True)
    N = F / np.maximum(norms, ZERO_NORM_EPS)
    mu = N.mean(axis=0)
    n = N.shape[0]
    order: list[int] = []
    running = np.zeros(N.shape[1])
    available = np.ones(n, dtype=bool)
    for k in range(1, n + 1):
        candidates = (running + N) / k
        d2 = ((mu - candidates) ** 2).sum(axis=1)
        d2[~available] = np.inf
        pick = int(np.argmin(d2))
        order.append(pick)
        running += N[pick]
        available[pick] = False
    return order


def _shrink_to_quota(
    groups: dict[int, list[Exemplar]], per_class: int, quota: int, pool: str
) -> dict[int, list[Exemplar]]:
    """Apply the per-class cap; if the floor hit zero, keep 1 each and drop oldest classes."""
    kept = {cls: items[:per_class] for cls, items in groups.items() if items[:per_class]}
    total = sum(len(v) for v in kept.values())
    if total <= quota:
        return kept
    # Only reachable on the keep-at-least-one fallback: more classes than slots.
    by_age = sorted(kept, key=lambda cls: (min(ex.task_of_origin for ex in kept[cls]), cls))
    for cls in by_age:
        if total <= quota:
            break
        total -= len(kept[cls])
        log.warning("%s pool over quota: dropping class %d (oldest first)", pool, cls)
        del kept[cls]
    return kept


def _rebuild_pool(
    existing: dict[int, list[Exemplar]],
    incoming: dict[int, list[Exemplar]],
    quota: int,
    pool: str,
) -> dict[int, list[Exemplar]]:
    classes = sorted(set(existing) | set(incoming))
    if not classes:
        return {}
    per_class = quota // len(classes)
    if per_class == 0:
        log.warning(
            "%s pool: quota %d cannot cover %d classes; keeping 1 per class, oldest dropped first",
            pool,
            quota,
            len(classes),
        )
        per_class = 1
    merged: dict[int, list[Exemplar]] = {}
    for cls in classes:
        # Existing exemplars keep their herding-rank priority; new candidates
        # fill whatever slots the per-class cap still leaves open.
        items = list(existing.get(cls, ())) + list(incoming.get(cls, ()))
        merged[cls] = items
    return _shrink_to_quota(merged, per_class, quota, pool)


def update_buffer(
    buf: MemoryBuffer, candidates: BufferCandidates, task: int
) -> MemoryBuffer:
    """Fold a finished task's samples into the buffer and re-apply the quotas.

    Labeled candidates are grouped by true class, unlabeled candidates by
    their predicted (pseudo) class; each group is ranked by herding over
    current-model embeddings. Existing classes are truncated to the new
    per-class quota by keeping the prefix of their stored order.
    """
    incoming_labeled: dict[int, list[Exemplar]] = {}
    targets = np.asarray(candidates.labeled_targets, dtype=np.intp)
    for cls in np.unique(targets):
        rows = np.flatnonzero(targets == cls)
        ranked = [rows[i] for i in herding_order(candidates.labeled_embeddings[rows])]
        incoming_labeled[int(cls)] = [
            Exemplar(
                features=np.asarray(candidates.labeled_inputs[i], dtype=np.float64),
                label=int(cls),
                is_pseudo=False,
                task_of_origin=task,
                stored_prediction=np.asarray(candidates.labeled_predictions[i], dtype=np.float64),
            )
            for i in ranked
        ]

    incoming_unlabeled: dict[int, list[Exemplar]] = {}
    if len(candidates.unlabeled_inputs):
        preds = np.asarray(candidates.unlabeled_predictions, dtype=np.float64)
        pseudo = preds.argmax(axis=1)
        for cls in np.unique(pseudo):
            rows = np.flatnonzero(pseudo == cls)
            ranked = [rows[i] for i in herding_order(candidates.unlabeled_embeddings[rows])]
            incoming_unlabeled[int(cls)] = [
                Exemplar(
                    features=np.asarray(candidates.unlabeled_inputs[i], dtype=np.float64),
                    label=int(cls),
                    is_pseudo=True,
                    task_of_origin=task,
                    stored_prediction=preds[i],
                    confidence=float(preds[i].max()),
                )
                for i in ranked
            ]

    out = MemoryBuffer(
        capacity=buf.capacity,
        labeled_quota=buf.labeled_quota,
        unlabeled_quota=buf.unlabeled_quota,
        labeled_groups=_rebuild_pool(
            buf.labeled_groups, incoming_labeled, buf.labeled_quota, "labeled"
        ),
        unlabeled_groups=_rebuild_pool(
            buf.unlabeled_groups, incoming_unlabeled, buf.unlabeled_quota, "unlabeled"
        ),
    )
    out.check_invariants()
    return out


def sample_replay(buf: MemoryBuffer, m: int, rng: np.random.Generator) -> list[Exemplar]:
    """Uniform replay sample: without replacement when the buffer is large enough.

    An empty buffer yields an empty list so the caller can skip the replay
    terms for that step.
    """
    if m < 1:
        raise ValueError(f"replay size must be positive, got {m}")
    pool = buf.exemplars
    if not pool:
        return []
    idx = rng.choice(len(pool), size=m, replace=m > len(pool))
    return [pool[i] for i in idx]
