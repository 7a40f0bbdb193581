"""Small MLP classifier with an expandable head and the combined training loss.

The extractor maps inputs through two hidden rectifier layers to an embedding;
a linear head on top produces logits for every class seen so far. The training
objective combines cross-entropy on hard-labeled rows, consistency loss on
unlabeled rows, logit distillation against the frozen previous-task model, and
the sub-graph distillation loss over the merged batch. All gradients come from
the reverse-mode tape and are checked against finite differences in the tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, log_softmax_rows
from .errors import AlignmentError, ConfigError, NonFiniteError
from .semi_supervised import ensemble_pseudo, fixmatch_loss_t
from .subgraph import subgraph_loss_t

CHECKPOINT_FORMAT_VERSION = 1

_PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "head_w", "head_b")


@dataclass
class ModelParams:
    """Weights of the extractor (d_in -> h -> h -> d_emb) and the class head."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def d_emb(self) -> int:
        return self.w3.shape[1]

    @property
    def num_classes(self) -> int:
        return self.head_w.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    def as_tensors(self, requires_grad: bool) -> dict[str, Tensor]:
        return {name: Tensor(arr, requires_grad=requires_grad) for name, arr in self.arrays().items()}

    def copy(self) -> "ModelParams":
        return ModelParams(**{name: arr.copy() for name, arr in self.arrays().items()})

    def check_finite(self) -> None:
        for name, arr in self.arrays().items():
            if not np.isfinite(arr).all():
                raise NonFiniteError(f"model parameter {name} contains non-finite values")


def _uniform_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    scale = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-scale, scale, size=(fan_in, fan_out))


def init_model(d_in: int, hidden: int, d_emb: int, c0: int, rng: np.random.Generator) -> ModelParams:
    """Fresh parameters: uniform weights scaled by 1/sqrt(fan_in), zero biases."""
    if min(d_in, hidden, d_emb, c0) < 1:
        raise ValueError("all model dimensions must be positive")
    return ModelParams(
        w1=_uniform_layer(rng, d_in, hidden),
        b1=np.zeros(hidden),
        w2=_uniform_layer(rng, hidden, hidden),
        b2=np.zeros(hidden),
        w3=_uniform_layer(rng, hidden, d_emb),
        b3=np.zeros(d_emb),
        head_w=_uniform_layer(rng, d_emb, c0),
        head_b=np.zeros(c0),
    )


def expand_head(params: ModelParams, k_new: int, rng: np.random.Generator) -> ModelParams:
    """Widen the head by ``k_new`` classes; existing parameters are untouched."""
    if k_new < 1:
        raise ValueError(f"head expansion must add at least one class, got {k_new}")
    out = params.copy()
    out.head_w = np.concatenate([out.head_w, _uniform_layer(rng, params.d_emb, k_new)], axis=1)
    out.head_b = np.concatenate([out.head_b, np.zeros(k_new)])
    return out


def _forward_t(p: dict[str, Tensor], X: Tensor) -> tuple[Tensor, Tensor]:
    h1 = (X @ p["w1"] + p["b1"]).relu()
    h2 = (h1 @ p["w2"] + p["b2"]).relu()
    emb = h2 @ p["w3"] + p["b3"]
    logits = emb @ p["head_w"] + p["head_b"]
    return emb, logits


def forward(params: ModelParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings (penultimate activations) and logits for a batch of inputs."""
    params.check_finite()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.d_in:
        raise ValueError(f"expected inputs of shape (m, {params.d_in}), got {X.shape}")
    emb, logits = _forward_t(params.as_tensors(requires_grad=False), Tensor(X))
    return emb.data, logits.data


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba(params: ModelParams, X: np.ndarray) -> np.ndarray:
    _, logits = forward(params, X)
    return softmax_rows(logits)


# ---------------------------------------------------------------------------
# Combined objective
# ---------------------------------------------------------------------------


@dataclass
class StepBatch:
    """Current-task portion of a training step.

    Inputs arrive already augmented: labeled rows weakly, unlabeled rows in a
    weak and a strong version. Any portion may be empty.
    """

    labeled_inputs: np.ndarray
    labeled_targets: np.ndarray
    unlabeled_weak: np.ndarray
    unlabeled_strong: np.ndarray


@dataclass
class ReplayBatch:
    """Replayed exemplars for one step, weakly and strongly augmented.

    ``labels`` holds the hard class target of each row: the true class for
    labeled exemplars, the stored pseudo-class otherwise. ``stored_predictions``
    are the softmax vectors recorded when each exemplar entered the buffer
    (their width may lag the current head). ``true_labels`` is optional and
    only consumed by the ground-truth diagnostic distillation scope.
    """

    weak: np.ndarray
    strong: np.ndarray
    labels: np.ndarray
    is_pseudo: np.ndarray
    stored_predictions: list[np.ndarray]
    true_labels: np.ndarray | None = None


@dataclass(frozen=True)
class LossConfig:
    """Weights, thresholds, and strategy switches for the combined objective."""

    lambda_ssl: float = 1.0
    lambda_distill: float = 1.0
    lambda_sgd: float = 10.0
    tau: float = 0.95
    gamma: float = 1.0
    k_order: int = 6
    alpha: float = 0.5
    logit_distill: bool = True
    distill_scope: str = "all"
    pse_dis: bool = False
    dsgd: bool = True


@dataclass(frozen=True)
class LossBundle:
    """Per-term values of one evaluation of the combined objective."""

    ce: float
    ssl: float
    logit_distill: float
    sgd: float
    total: float
    weights: tuple[float, float, float]


_ZERO = Tensor(np.float64(0.0))


def _as_batch(x, d_in: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, d_in)
    if arr.ndim != 2 or arr.shape[1] != d_in:
        raise ValueError(f"{name} must have shape (m, {d_in}), got {arr.shape}")
    return arr


def _hard_ce(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy of logits rows against hard class targets."""
    m, c = logits.data.shape
    onehot = np.zeros((m, c))
    onehot[np.arange(m), np.asarray(targets, dtype=np.intp)] = 1.0
    return -(log_softmax_rows(logits) * onehot).sum() * (1.0 / m)


def _bce_rows(new_logits: Tensor, old_logits: np.ndarray) -> Tensor:
    """Per-row mean binary cross-entropy against sigmoid targets, as a column."""
    q = 1.0 / (1.0 + np.exp(-old_logits))
    per_entry = (-new_logits).softplus() * q + new_logits.softplus() * (1.0 - q)
    return per_entry.mean(axis=1, keepdims=True)


def logit_distill_loss(old_logits: np.ndarray, new_logits: np.ndarray) -> float:
    """Mean BCE between sigmoids of new logits and frozen sigmoid targets.

    Only the columns the old head covers are compared; the old side carries
    no gradient.
    """
    old_logits = np.asarray(old_logits, dtype=np.float64)
    new_logits = np.asarray(new_logits, dtype=np.float64)
    if old_logits.ndim != 2 or new_logits.ndim != 2 or old_logits.shape[0] != new_logits.shape[0]:
        raise AlignmentError(
            f"logit matrices are misaligned: {old_logits.shape} vs {new_logits.shape}"
        )
    c_old = old_logits.shape[1]
    if c_old > new_logits.shape[1]:
        raise AlignmentError("old head is wider than the new head")
    rows = _bce_rows(Tensor(new_logits).slice_cols(0, c_old), old_logits)
    return float(rows.mean().data)


def _assemble_loss(
    params_t: dict[str, Tensor],
    old_t: dict[str, Tensor] | None,
    batch: StepBatch,
    replay: ReplayBatch | None,
    cfg: LossConfig,
) -> tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
    """Build (ce, ssl, logit_distill, sgd, total) on the tape.

    Separated from :func:`total_loss` so tests can lift the old model with
    gradients enabled and verify that none arrive.
    """
    d_in = params_t["w1"].data.shape[0]
    x_lab = _as_batch(batch.labeled_inputs, d_in, "labeled inputs")
    x_unl_w = _as_batch(batch.unlabeled_weak, d_in, "weak unlabeled inputs")
    x_unl_s = _as_batch(batch.unlabeled_strong, d_in, "strong unlabeled inputs")
    if len(x_unl_w) != len(x_unl_s):
        raise AlignmentError("weak and strong unlabeled batches differ in length")
    x_rep_w = _as_batch(replay.weak, d_in, "weak replay inputs") if replay is not None else None
    m_l, m_u = len(x_lab), len(x_unl_w)
    m_r = len(x_rep_w) if x_rep_w is not None else 0
    if m_l + m_u + m_r == 0:
        raise ConfigError("the merged batch is empty")

    parts = [p for p in (x_lab, x_unl_w, x_rep_w) if p is not None and len(p)]
    merged_weak = np.concatenate(parts, axis=0)
    emb_w, logits_w = _forward_t(params_t, Tensor(merged_weak))
    c = logits_w.data.shape[1]

    # Cross-entropy: labeled rows plus replayed rows with their hard labels.
    ce_rows = list(range(m_l))
    ce_targets = list(np.asarray(batch.labeled_targets, dtype=np.intp))
    if replay is not None:
        ce_rows.extend(range(m_l + m_u, m_l + m_u + m_r))
        ce_targets.extend(np.asarray(replay.labels, dtype=np.intp))
    ce = (
        _hard_ce(logits_w.gather_rows(np.asarray(ce_rows)), np.asarray(ce_targets))
        if ce_rows
        else _ZERO
    )

    # Consistency: current unlabeled rows use their own weak prediction;
    # replayed pseudo-labeled rows blend it with the stored prediction.
    ssl = _ZERO
    ssl_active = False
    if cfg.lambda_ssl != 0.0:
        probs_weak_all = softmax_rows(logits_w.data)
        weak_rows = [probs_weak_all[m_l : m_l + m_u]]
        strong_inputs = [x_unl_s]
        if replay is not None and replay.is_pseudo.any():
            pseudo_idx = np.flatnonzero(replay.is_pseudo)
            blended = np.stack(
                [
                    ensemble_pseudo(
                        replay.stored_predictions[i],
                        probs_weak_all[m_l + m_u + i],
                        cfg.alpha,
                    )
                    for i in pseudo_idx
                ]
            )
            weak_rows.append(blended)
            strong_inputs.append(_as_batch(replay.strong, d_in, "strong replay inputs")[pseudo_idx])
        probs_weak = np.concatenate([w for w in weak_rows if len(w)], axis=0) \
            if any(len(w) for w in weak_rows) else np.zeros((0, c))
        if len(probs_weak):
            _, logits_s = _forward_t(params_t, Tensor(np.concatenate(strong_inputs, axis=0)))
            ssl = fixmatch_loss_t(probs_weak, logits_s, cfg.tau)
            ssl_active = True

    # Old-model terms only exist from the second task on.
    distill = _ZERO
    distill_active = False
    sgd = _ZERO
    sgd_active = False
    if old_t is not None and replay is not None and m_r > 0:
        replay_positions = np.arange(m_l + m_u, m_l + m_u + m_r)
        old_emb, old_logits = _forward_t(old_t, Tensor(x_rep_w))
        c_old = old_logits.data.shape[1]
        new_replay_logits = logits_w.gather_rows(replay_positions)

        if cfg.logit_distill and cfg.lambda_distill != 0.0:
            if cfg.distill_scope not in ("labeled", "all", "gt"):
                raise ConfigError(f"unknown distillation scope {cfg.distill_scope!r}")
            if cfg.distill_scope == "labeled":
                selected = np.flatnonzero(~replay.is_pseudo)
            else:
                selected = np.arange(m_r)
            if len(selected):
                pieces: list[Tensor] = []
                bce_sel = selected[~replay.is_pseudo[selected]]
                hard_sel = selected[replay.is_pseudo[selected]]
                if cfg.distill_scope == "gt" and len(hard_sel):
                    if replay.true_labels is None:
                        raise ConfigError(
                            "ground-truth distillation scope needs true labels on the replay batch"
                        )
                    hard_targets = np.asarray(replay.true_labels, dtype=np.intp)[hard_sel]
                elif cfg.pse_dis and len(hard_sel):
                    hard_targets = np.asarray(
                        [int(np.argmax(replay.stored_predictions[i])) for i in hard_sel]
                    )
                else:
                    # Plain mode distills old logits on pseudo rows as well.
                    bce_sel = selected
                    hard_sel = np.asarray([], dtype=np.intp)
                    hard_targets = None
                if len(bce_sel):
                    pieces.append(
                        _bce_rows(
                            new_replay_logits.gather_rows(bce_sel).slice_cols(0, c_old),
                            old_logits.data[bce_sel],
                        ).sum()
                    )
                if len(hard_sel):
                    hard_logits = new_replay_logits.gather_rows(hard_sel)
                    pieces.append(_hard_ce(hard_logits, hard_targets) * float(len(hard_sel)))
                total_rows = len(bce_sel) + len(hard_sel)
                acc = pieces[0]
                for piece in pieces[1:]:
                    acc = acc + piece
                distill = acc * (1.0 / total_rows)
                distill_active = True

        if cfg.dsgd and cfg.lambda_sgd != 0.0:
            sgd = subgraph_loss_t(old_emb, emb_w, replay_positions, cfg.gamma, cfg.k_order)
            sgd_active = True

    if not (ce_rows or ssl_active or distill_active or sgd_active):
        raise ConfigError("no loss term is active for this batch and configuration")

    total = ce + ssl * cfg.lambda_ssl + distill * cfg.lambda_distill + sgd * cfg.lambda_sgd
    return ce, ssl, distill, sgd, total


def total_loss(
    params: ModelParams,
    batch: StepBatch,
    replay: ReplayBatch | None,
    old_model: ModelParams | None,
    cfg: LossConfig,
) -> tuple[LossBundle, dict[str, np.ndarray]]:
    """Evaluate the combined objective and its gradient for every parameter.

    The merged batch is ordered [labeled, unlabeled, replay]; its weak
    versions feed the new topology graph. Stop-gradients: weak predictions
    used as pseudo-labels, everything computed by the old model, and stored
    buffer predictions are all constants on the tape.
    """
    params.check_finite()
    if old_model is not None:
        old_model.check_finite()
    params_t = params.as_tensors(requires_grad=True)
    old_t = old_model.as_tensors(requires_grad=False) if old_model is not None else None
    ce, ssl, distill, sgd, total = _assemble_loss(params_t, old_t, batch, replay, cfg)
    total.backward()
    grads = {
        name: t.grad if t.grad is not None else np.zeros_like(t.data)
        for name, t in params_t.items()
    }
    bundle = LossBundle(
        ce=float(ce.data),
        ssl=float(ssl.data),
        logit_distill=float(distill.data),
        sgd=float(sgd.data),
        total=float(total.data),
        weights=(cfg.lambda_ssl, cfg.lambda_distill, cfg.lambda_sgd),
    )
    return bundle, grads


def sgd_step(params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> ModelParams:
    """One plain gradient step: params - lr * grads, elementwise."""
    if lr < 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr}")
    new_arrays = {}
    for name, arr in params.arrays().items():
        g = grads[name]
        if g.shape != arr.shape:
            raise AlignmentError(f"gradient for {name} has shape {g.shape}, expected {arr.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"gradient for {name} contains non-finite values")
        new_arrays[name] = arr - lr * g
    return ModelParams(**new_arrays)


class MomentumSGD:
    """Classical momentum on top of :func:`sgd_step`; velocity starts at zero."""

    def __init__(self, lr: float, momentum: float = 0.9):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> ModelParams:
        update = {}
        for name, g in grads.items():
            v = self.velocity.get(name)
            v = g if v is None else self.momentum * v + g
            self.velocity[name] = v
            update[name] = v
        return sgd_step(params, update, self.lr)


def save_checkpoint(params: ModelParams, path: str) -> None:
    """Write parameters as versioned JSON (arrays as nested lists)."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arrays": {name: arr.tolist() for name, arr in params.arrays().items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path: str) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    arrays = {name: np.asarray(vals, dtype=np.float64) for name, vals in payload["arrays"].items()}
    missing = set(_PARAM_NAMES) - set(arrays)
    if missing:
        raise ValueError(f"checkpoint is missing arrays: {sorted(missing)}")
    return ModelParams(**arrays)
