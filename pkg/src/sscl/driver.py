"""Task-stream training loop, evaluation, and incremental-accuracy metrics."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .buffer import BufferCandidates, MemoryBuffer, sample_replay, update_buffer
from .config import RunConfig
from .errors import AlignmentError
from .model import (
    LossConfig,
    ModelParams,
    MomentumSGD,
    ReplayBatch,
    StepBatch,
    expand_head,
    forward,
    init_model,
    predict_proba,
    softmax_rows,
    total_loss,
)
from .semi_supervised import AugmentationPolicy, alpha_schedule, augment
from .stream import Task, TaskStream, make_task_stream

LOSS_TERMS = ("ce", "ssl", "logit_distill", "sgd", "total")


class TruthOracle:
    """Ground-truth lookup for the diagnostic distillation scope.

    Maps exact raw feature vectors of unlabeled training samples to their
    hidden labels. Built only when the configuration asks for the
    ground-truth scope; ordinary strategies never see one.
    """

    def __init__(self, stream: TaskStream):
        self._table = {
            row.tobytes(): int(label)
            for task, labels in zip(stream.tasks, stream.unlabeled_truth)
            for row, label in zip(task.unlabeled_inputs, labels)
        }

    def lookup(self, features: np.ndarray) -> int:
        key = np.ascontiguousarray(features, dtype=np.float64).tobytes()
        if key not in self._table:
            raise KeyError("sample is not a known unlabeled training row")
        return self._table[key]


@dataclass
class TrainState:
    model: ModelParams
    old_model: ModelParams | None
    buffer: MemoryBuffer
    rng: np.random.Generator
    task_index: int = 0
    loss_traces: dict[str, list[list[float]]] = field(
        default_factory=lambda: {term: [] for term in LOSS_TERMS}
    )


@dataclass
class ExperimentReport:
    """Accuracies, incremental metrics, and traces of one full run."""

    accuracy: list[list[float]]
    incremental: list[float]
    average: float
    unlabeled_accuracy: list[list[float]]
    unlabeled_pooled: list[float]
    config: dict
    seed: int
    loss_traces: dict[str, list[list[float]]]
    wall_clock_seconds: float

    def to_json_dict(self) -> dict:
        """Serializable view; wall clock is dropped so identical runs match byte for byte."""
        return {
            "schema_version": 1,
            "seed": self.seed,
            "config": self.config,
            "accuracy": self.accuracy,
            "incremental_accuracy": self.incremental,
            "average_incremental_accuracy": self.average,
            "unlabeled_train_accuracy": self.unlabeled_accuracy,
            "unlabeled_train_accuracy_pooled": self.unlabeled_pooled,
            "loss_traces": self.loss_traces,
        }


def incremental_metrics(acc: list[list[float]]) -> tuple[list[float], float]:
    """Per-stage incremental accuracies A_t and their average A.

    A_t is the mean of row t of the lower-triangular accuracy matrix; A is
    the mean of the A_t.
    """
    if not acc:
        raise AlignmentError("accuracy matrix is empty")
    for t, row in enumerate(acc, start=1):
        if len(row) != t:
            raise AlignmentError(f"row {t} of the accuracy matrix has {len(row)} entries, expected {t}")
        for value in row:
            if not 0.0 <= value <= 1.0:
                raise AlignmentError(f"accuracy {value} outside [0, 1]")
    per_stage = [float(np.mean(row)) for row in acc]
    return per_stage, float(np.mean(per_stage))


def evaluate(
    model: ModelParams, stream: TaskStream, upto: int
) -> tuple[list[float], list[float], float]:
    """Top-1 accuracy on each past test set, plus unlabeled-train accuracy.

    The unlabeled-train numbers are diagnostics: the model's accuracy on the
    unlabeled training pools of tasks 1..upto against their hidden labels,
    which training never sees. Returns (test row, unlabeled row, pooled
    unlabeled accuracy).
    """
    acc_row: list[float] = []
    unl_row: list[float] = []
    correct = 0
    total = 0
    for i in range(upto):
        task = stream.tasks[i]
        test_pred = predict_proba(model, task.test_inputs).argmax(axis=1)
        acc_row.append(float(np.mean(test_pred == task.test_targets)))
        unl_pred = predict_proba(model, task.unlabeled_inputs).argmax(axis=1)
        truth = stream.unlabeled_truth[i]
        hits = int(np.sum(unl_pred == truth))
        unl_row.append(hits / len(truth))
        correct += hits
        total += len(truth)
    return acc_row, unl_row, correct / total


def _replay_batch(
    state: TrainState,
    config: RunConfig,
    policy: AugmentationPolicy,
    oracle: TruthOracle | None,
) -> ReplayBatch | None:
    exemplars = sample_replay(state.buffer, config.batch_replay, state.rng)
    if not exemplars:
        return None
    feats = np.stack([ex.features for ex in exemplars])
    true_labels = None
    if oracle is not None:
        true_labels = np.array(
            [oracle.lookup(ex.features) if ex.is_pseudo else ex.label for ex in exemplars]
        )
    return ReplayBatch(
        weak=augment(feats, policy, "weak", state.rng),
        strong=augment(feats, policy, "strong", state.rng),
        labels=np.array([ex.label for ex in exemplars]),
        is_pseudo=np.array([ex.is_pseudo for ex in exemplars]),
        stored_predictions=[ex.stored_prediction for ex in exemplars],
        true_labels=true_labels,
    )


def train_task(
    state: TrainState,
    task: Task,
    config: RunConfig,
    gt_oracle: TruthOracle | None = None,
) -> TrainState:
    """Train the current model on one task and fold the task into the buffer.

    Runs epochs of mixed minibatches (current-task rows plus a replay draw),
    then freezes a copy of the trained model for the next task's distillation
    terms and re-selects the memory buffer with current-model embeddings.
    """
    state.task_index = task.index
    policy = AugmentationPolicy(config.sigma_weak, config.sigma_strong)
    loss_cfg = LossConfig(
        lambda_ssl=config.lambda_ssl,
        lambda_distill=config.lambda_distill,
        lambda_sgd=config.lambda_sgd,
        tau=config.tau,
        gamma=config.gamma,
        k_order=config.k_order,
        alpha=alpha_schedule(task.index),
        logit_distill=config.logit_distill,
        distill_scope=config.distill_scope,
        pse_dis=config.pse_dis,
        dsgd=config.dsgd,
    )
    optimizer = MomentumSGD(lr=config.learning_rate, momentum=config.momentum)

    n_lab = len(task.labeled_inputs)
    n_unl = len(task.unlabeled_inputs)
    n_cur = n_lab + n_unl
    epoch_traces = {term: [] for term in LOSS_TERMS}
    for epoch in range(config.epochs):
        order = state.rng.permutation(n_cur)
        step_values = {term: [] for term in LOSS_TERMS}
        for start in range(0, n_cur, config.batch_current):
            rows = order[start : start + config.batch_current]
            lab_rows = rows[rows < n_lab]
            unl_rows = rows[rows >= n_lab] - n_lab
            x_unl = task.unlabeled_inputs[unl_rows]
            batch = StepBatch(
                labeled_inputs=augment(task.labeled_inputs[lab_rows], policy, "weak", state.rng),
                labeled_targets=task.labeled_targets[lab_rows],
                unlabeled_weak=augment(x_unl, policy, "weak", state.rng),
                unlabeled_strong=augment(x_unl, policy, "strong", state.rng),
            )
            replay = (
                _replay_batch(state, config, policy, gt_oracle) if config.replay else None
            )
            try:
                bundle, grads = total_loss(state.model, batch, replay, state.old_model, loss_cfg)
                state.model = optimizer.step(state.model, grads)
            except Exception as err:
                raise RuntimeError(
                    f"task {task.index}, epoch {epoch + 1}, step {start // config.batch_current + 1}: {err}"
                ) from err
            for term in LOSS_TERMS:
                step_values[term].append(getattr(bundle, term))
        for term in LOSS_TERMS:
            epoch_traces[term].append(float(np.mean(step_values[term])))
    for term in LOSS_TERMS:
        state.loss_traces[term].append(epoch_traces[term])

    state.old_model = state.model.copy()
    if config.replay:
        emb_lab, logits_lab = forward(state.model, task.labeled_inputs)
        emb_unl, logits_unl = forward(state.model, task.unlabeled_inputs)
        candidates = BufferCandidates(
            labeled_inputs=task.labeled_inputs,
            labeled_targets=task.labeled_targets,
            unlabeled_inputs=task.unlabeled_inputs,
            labeled_embeddings=emb_lab,
            unlabeled_embeddings=emb_unl,
            labeled_predictions=softmax_rows(logits_lab),
            unlabeled_predictions=softmax_rows(logits_unl),
        )
        state.buffer = update_buffer(state.buffer, candidates, task.index)
        state.buffer.check_invariants()
    return state


def run_experiment(config: RunConfig) -> ExperimentReport:
    """Full run: stream generation, per-task training, evaluation, metrics.

    Every random draw comes from one generator seeded with ``config.seed``,
    so identical configurations reproduce identical reports.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    stream = make_task_stream(config, rng)
    oracle = TruthOracle(stream) if config.distill_scope == "gt" and config.logit_distill else None
    state = TrainState(
        model=init_model(
            config.input_dim, config.hidden_dim, config.embed_dim, config.classes_per_task, rng
        ),
        old_model=None,
        buffer=MemoryBuffer(
            capacity=config.buffer_capacity,
            labeled_quota=config.labeled_quota,
            unlabeled_quota=config.unlabeled_quota,
        ),
        rng=rng,
    )
    accuracy: list[list[float]] = []
    unlabeled: list[list[float]] = []
    pooled: list[float] = []
    for task in stream.tasks:
        state = train_task(state, task, config, gt_oracle=oracle)
        acc_row, unl_row, unl_pooled = evaluate(state.model, stream, task.index)
        accuracy.append(acc_row)
        unlabeled.append(unl_row)
        pooled.append(unl_pooled)
        if task.index < config.tasks:
            state.model = expand_head(state.model, config.classes_per_task, rng)
    incremental, average = incremental_metrics(accuracy)
    return ExperimentReport(
        accuracy=accuracy,
        incremental=incremental,
        average=average,
        unlabeled_accuracy=unlabeled,
        unlabeled_pooled=pooled,
        config=config.echo(),
        seed=config.seed,
        loss_traces=state.loss_traces,
        wall_clock_seconds=time.perf_counter() - started,
    )
