"""Semi-supervised class-incremental learning with topology-graph distillation."""

from .buffer import (
    BufferCandidates,
    Exemplar,
    MemoryBuffer,
    herding_order,
    sample_replay,
    update_buffer,
)
from .config import RunConfig, parse_config
from .driver import (
    ExperimentReport,
    TrainState,
    evaluate,
    incremental_metrics,
    run_experiment,
    train_task,
)
from .graphs import TopologyGraph, build_graph, similarity_matrix, transition_matrix
from .model import (
    LossBundle,
    LossConfig,
    ModelParams,
    MomentumSGD,
    ReplayBatch,
    StepBatch,
    expand_head,
    forward,
    init_model,
    load_checkpoint,
    logit_distill_loss,
    predict_proba,
    save_checkpoint,
    sgd_step,
    total_loss,
)
from .semi_supervised import (
    AugmentationPolicy,
    alpha_schedule,
    augment,
    ensemble_pseudo,
    fixmatch_loss,
)
from .stream import Task, TaskStream, make_task_stream
from .subgraph import (
    DistillationVectorSet,
    brute_force_ppr,
    distillation_vectors,
    ppr_k,
    sgd_loss,
    sgd_loss_from_embeddings,
)

__all__ = [
    "AugmentationPolicy",
    "BufferCandidates",
    "DistillationVectorSet",
    "Exemplar",
    "ExperimentReport",
    "LossBundle",
    "LossConfig",
    "MemoryBuffer",
    "ModelParams",
    "MomentumSGD",
    "ReplayBatch",
    "RunConfig",
    "StepBatch",
    "Task",
    "TaskStream",
    "TopologyGraph",
    "TrainState",
    "alpha_schedule",
    "augment",
    "brute_force_ppr",
    "build_graph",
    "distillation_vectors",
    "ensemble_pseudo",
    "evaluate",
    "expand_head",
    "fixmatch_loss",
    "forward",
    "herding_order",
    "incremental_metrics",
    "init_model",
    "load_checkpoint",
    "logit_distill_loss",
    "make_task_stream",
    "parse_config",
    "ppr_k",
    "predict_proba",
    "run_experiment",
    "sample_replay",
    "save_checkpoint",
    "sgd_loss",
    "sgd_loss_from_embeddings",
    "sgd_step",
    "similarity_matrix",
    "total_loss",
    "train_task",
    "transition_matrix",
    "update_buffer",
]
