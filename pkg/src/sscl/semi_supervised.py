"""Consistency regularization on weak/strong augmentation pairs.

Follows the FixMatch recipe: the model's prediction on a weakly augmented
input becomes a hard pseudo-label whenever its confidence clears a threshold,
and that label is enforced on the strongly augmented version of the same
input. For replayed unlabeled samples the weak prediction is blended with the
prediction stored when the sample entered the memory buffer, with a blend
weight that rises logistically over tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, log_softmax_rows
from .errors import AlignmentError


@dataclass(frozen=True)
class AugmentationPolicy:
    """Gaussian-noise augmentation scales; strong must exceed weak."""

    sigma_weak: float = 0.05
    sigma_strong: float = 0.25

    def __post_init__(self):
        if not self.sigma_weak < self.sigma_strong:
            raise ValueError(
                f"sigma_weak ({self.sigma_weak}) must be below sigma_strong ({self.sigma_strong})"
            )


def augment(
    x: np.ndarray,
    policy: AugmentationPolicy,
    strength: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Add isotropic Gaussian noise at the policy's weak or strong scale.

    A stand-in for image augmentation pipelines that keeps the weak/strong
    asymmetry consistency training relies on.
    """
    if strength not in ("weak", "strong"):
        raise ValueError(f"strength must be 'weak' or 'strong', got {strength!r}")
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("augment input contains non-finite values")
    sigma = policy.sigma_weak if strength == "weak" else policy.sigma_strong
    if sigma == 0.0:
        return x.copy()
    return x + rng.normal(0.0, sigma, size=x.shape)


def fixmatch_loss_t(probs_weak: np.ndarray, logits_strong: Tensor, tau: float) -> Tensor:
    """Differentiable consistency loss; gradient flows into the strong logits only.

    Rows whose weak confidence is below ``tau`` are masked out but still count
    in the denominator, so the loss shrinks as fewer rows qualify.
    """
    probs_weak = np.asarray(probs_weak, dtype=np.float64)
    if probs_weak.shape != logits_strong.data.shape:
        raise AlignmentError(
            f"weak probabilities {probs_weak.shape} and strong logits "
            f"{logits_strong.data.shape} are misaligned"
        )
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"confidence threshold must be in (0, 1], got {tau}")
    row_sums = probs_weak.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise ValueError("weak probability rows must sum to 1")
    m = probs_weak.shape[0]
    confident = probs_weak.max(axis=1) >= tau
    # Hard pseudo-labels: the weak branch contributes targets, not gradients.
    hard = np.zeros_like(probs_weak)
    hard[np.arange(m), probs_weak.argmax(axis=1)] = 1.0
    hard *= confident[:, None]
    logp = log_softmax_rows(logits_strong)
    return -(logp * hard).sum() * (1.0 / m)


def fixmatch_loss(probs_weak: np.ndarray, logits_strong: np.ndarray, tau: float) -> float:
    """Consistency loss between confident weak pseudo-labels and strong logits."""
    return float(fixmatch_loss_t(probs_weak, Tensor(logits_strong), tau).data)


def alpha_schedule(t: int) -> float:
    """Blend weight for stored predictions, rising logistically with the task index.

    alpha(t) = 1 / (1 + exp(-(1 + t/2))); already above 0.8 at the second
    task and approaching 1 as the stream progresses, reflecting that replayed
    predictions become more trustworthy than fresh ones over time.
    """
    if t < 1:
        raise ValueError(f"task index must be >= 1, got {t}")
    return float(1.0 / (1.0 + np.exp(-(1.0 + t / 2.0))))


def ensemble_pseudo(p_old: np.ndarray, p_new: np.ndarray, alpha: float) -> np.ndarray:
    """Convex combination alpha * p_old + (1 - alpha) * p_new.

    ``p_old`` may be narrower than ``p_new`` (it was recorded before later
    classes existed); it is zero-padded to the current width. Both inputs are
    renormalized before blending so the output sums to 1 to near machine
    precision.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    p_old = np.asarray(p_old, dtype=np.float64)
    p_new = np.asarray(p_new, dtype=np.float64)
    if (p_old < 0).any() or (p_new < 0).any():
        raise ValueError("probability vectors must be nonnegative")
    if p_old.size > p_new.size:
        raise AlignmentError(
            f"old prediction has {p_old.size} classes but new has only {p_new.size}"
        )
    padded = np.zeros_like(p_new)
    padded[: p_old.size] = p_old
    for name, vec in (("old", padded), ("new", p_new)):
        if abs(vec.sum() - 1.0) > 1e-6:
            raise ValueError(f"{name} prediction does not sum to 1 (sum={vec.sum():.8f})")
    padded = padded / padded.sum()
    p_new = p_new / p_new.sum()
    return alpha * padded + (1.0 - alpha) * p_new
