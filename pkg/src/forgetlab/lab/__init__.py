"""Discrete post-training lab: worlds, a shared-parameter softmax policy, trainers, exact oracles."""

from .optimum import (
    analytic_optimal_policy,
    check_rl_identity,
    check_sft_identity,
    run_identity_suite,
)
from .policy import EvalReport, LinearSoftmaxPolicy, accuracy, evaluate, task_accuracies
from .training import (
    METHODS,
    Dataset,
    PretrainConfig,
    TrainResult,
    TrainSpec,
    build_expert_dataset,
    build_self_sft_dataset,
    grpo_train,
    group_advantages,
    iterative_sft_train,
    pretrain_initial_policy,
    reinforce_train,
    sft_on_traces,
    sft_train,
    train,
)
from .world import World, make_tabular_world, make_world

__all__ = [
    "METHODS",
    "Dataset",
    "EvalReport",
    "LinearSoftmaxPolicy",
    "PretrainConfig",
    "TrainResult",
    "TrainSpec",
    "World",
    "accuracy",
    "analytic_optimal_policy",
    "build_expert_dataset",
    "build_self_sft_dataset",
    "check_rl_identity",
    "check_sft_identity",
    "evaluate",
    "grpo_train",
    "group_advantages",
    "iterative_sft_train",
    "make_tabular_world",
    "make_world",
    "pretrain_initial_policy",
    "reinforce_train",
    "run_identity_suite",
    "sft_on_traces",
    "sft_train",
    "task_accuracies",
    "train",
]
