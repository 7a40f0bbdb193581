"""Synthetic class-incremental task streams.

Classes are Gaussian clusters whose means sit on a circle in the first two
input dimensions; consecutive classes are assigned to consecutive tasks, so
class sets are disjoint across tasks. Each task exposes a small labeled
subset, an unlabeled pool, and a held-out test set.

Ground-truth labels of the unlabeled pools are kept on the stream object,
not on the tasks: training code receives tasks only, so those labels are
structurally out of its reach and available solely to evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Task:
    """One stage of the stream; carries no ground truth for its unlabeled pool."""

    index: int
    class_ids: tuple[int, ...]
    labeled_inputs: np.ndarray
    labeled_targets: np.ndarray
    unlabeled_inputs: np.ndarray
    test_inputs: np.ndarray
    test_targets: np.ndarray


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple[Task, ...]
    unlabeled_truth: tuple[np.ndarray, ...]
    class_means: np.ndarray


def class_means(num_classes: int, radius: float, input_dim: int) -> np.ndarray:
    """Class means spaced evenly on a circle in the first two dimensions."""
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, input_dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def make_task_stream(config: RunConfig, rng: np.random.Generator) -> TaskStream:
    """Deterministic stream of Gaussian-cluster tasks with sparse labels."""
    total_classes = config.tasks * config.classes_per_task
    means = class_means(total_classes, config.class_radius, config.input_dim)

    n_labeled = int(round(config.labeled_fraction * config.train_per_class))
    if n_labeled == 0:
        log.warning(
            "labeled fraction %.4f gives zero labels per class; forcing 1",
            config.labeled_fraction,
        )
        n_labeled = 1
    n_labeled = min(n_labeled, config.train_per_class)

    tasks = []
    truths = []
    for t in range(1, config.tasks + 1):
        ids = tuple(range((t - 1) * config.classes_per_task, t * config.classes_per_task))
        lab_x, lab_y, unl_x, unl_y, test_x, test_y = [], [], [], [], [], []
        for cls in ids:
            train = means[cls] + config.class_sigma * rng.normal(
                size=(config.train_per_class, config.input_dim)
            )
            test = means[cls] + config.class_sigma * rng.normal(
                size=(config.test_per_class, config.input_dim)
            )
            picks = rng.permutation(config.train_per_class)
            labeled_rows = picks[:n_labeled]
            unlabeled_rows = picks[n_labeled:]
            lab_x.append(train[labeled_rows])
            lab_y.append(np.full(len(labeled_rows), cls, dtype=np.intp))
            unl_x.append(train[unlabeled_rows])
            unl_y.append(np.full(len(unlabeled_rows), cls, dtype=np.intp))
            test_x.append(test)
            test_y.append(np.full(config.test_per_class, cls, dtype=np.intp))

        def shuffled(xs, ys):
            x = np.concatenate(xs, axis=0)
            y = np.concatenate(ys)
            order = rng.permutation(len(x))
            return x[order], y[order]

        labeled_inputs, labeled_targets = shuffled(lab_x, lab_y)
        unlabeled_inputs, unlabeled_targets = shuffled(unl_x, unl_y)
        test_inputs, test_targets = shuffled(test_x, test_y)
        tasks.append(
            Task(
                index=t,
                class_ids=ids,
                labeled_inputs=labeled_inputs,
                labeled_targets=labeled_targets,
                unlabeled_inputs=unlabeled_inputs,
                test_inputs=test_inputs,
                test_targets=test_targets,
            )
        )
        truths.append(unlabeled_targets)

    return TaskStream(tasks=tuple(tasks), unlabeled_truth=tuple(truths), class_means=means)
