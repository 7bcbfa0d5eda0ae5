"""Pretraining and the six post-training procedures on a World."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import DomainError, NumericFailure, SetupError
from .policy import (
    EvalReport,
    LinearSoftmaxPolicy,
    cross_entropy,
    cross_entropy_grad,
    evaluate,
    kl_to_reference_grad,
    sample_responses,
    task_accuracies,
    weighted_score_grad,
)
from .world import World

METHODS = ("sft", "self_sft", "iterative_sft", "sft_on_traces", "reinforce", "grpo")
SFT_FAMILY = ("sft", "self_sft", "iterative_sft", "sft_on_traces")
ADVANTAGE_EPS = 1e-8

Callback = Callable[[int, LinearSoftmaxPolicy], None]


@dataclass(frozen=True)
class PretrainConfig:
    learning_rate: float = 5.0
    threshold: float = 0.99
    max_iters: int = 20000


def pretrain_initial_policy(world: World, config: PretrainConfig = PretrainConfig()) -> LinearSoftmaxPolicy:
    """Full-batch cross-entropy on non-target prompts, from the uniform policy.

    Stops as soon as every non-target task reaches ``config.threshold``.
    """
    xs = world.nontarget_prompts
    ys = world.rewarded[xs]
    W = LinearSoftmaxPolicy.zeros(world).W.copy()
    for _ in range(config.max_iters + 1):
        pol = LinearSoftmaxPolicy(W)
        if task_accuracies(pol, world)[1:].min() >= config.threshold:
            return pol
        W -= config.learning_rate * cross_entropy_grad(pol, world, xs, ys)
        if not np.all(np.isfinite(W)):
            raise NumericFailure("pretraining diverged")
    raise SetupError(
        f"non-target accuracy below {config.threshold} after {config.max_iters} iterations; "
        "use a smaller world or a larger feature dimension"
    )


@dataclass(frozen=True)
class TrainSpec:
    """One post-training run.

    ``epochs`` drives the SFT family, ``steps`` the policy-gradient methods.
    ``batch_size`` is the minibatch of examples for SFT and the number of
    target prompts per step for policy-gradient methods.
    """

    method: str
    learning_rate: float
    epochs: int = 2
    steps: int = 500
    batch_size: int = 16
    group_size: int = 5
    beta: float = 0.05
    k_self: int = 5
    seed: int = 0
    eval_every: int = 50
    label: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"method must be one of {METHODS}, got {self.method!r}")
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise DomainError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0 or self.steps < 0:
            raise DomainError("epochs and steps must be >= 0")
        if self.batch_size < 1 or self.k_self < 1 or self.eval_every < 1:
            raise DomainError("batch_size, k_self and eval_every must be >= 1")
        if self.group_size < (2 if self.method == "grpo" else 1):
            raise DomainError(f"group_size too small for {self.method}: {self.group_size}")
        if not self.beta >= 0:
            raise DomainError(f"beta must be >= 0, got {self.beta}")

    @property
    def name(self) -> str:
        return self.label or self.method

    def replace(self, **changes) -> "TrainSpec":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Dataset:
    world: World
    prompts: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.prompts, dtype=int).reshape(-1)
        r = np.asarray(self.responses, dtype=int).reshape(-1)
        if p.shape != r.shape:
            raise DomainError("prompts and responses must pair up")
        object.__setattr__(self, "prompts", p)
        object.__setattr__(self, "responses", r)

    def __len__(self) -> int:
        return self.prompts.size

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.prompts.tolist(), self.responses.tolist()))


def build_expert_dataset(world: World) -> Dataset:
    xs = world.target_prompts
    return Dataset(world, xs, world.rewarded[xs])


def _draw_self_sft(policy: LinearSoftmaxPolicy, world: World, k: int, rng: np.random.Generator) -> Dataset:
    xs = world.target_prompts
    ys = sample_responses(policy, world, xs, k, rng)
    keep = ys == world.rewarded[xs][:, None]
    rows, _ = np.nonzero(keep)
    return Dataset(world, xs[rows], ys[keep])


def build_self_sft_dataset(pi_0: LinearSoftmaxPolicy, world: World, k: int, seed) -> Dataset:
    """k draws per target prompt from pi_0, keeping every correct one (duplicates too)."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    return _draw_self_sft(pi_0, world, k, np.random.default_rng(seed))


def _check(W: np.ndarray, what: str):
    if not np.all(np.isfinite(W)):
        raise NumericFailure(f"non-finite parameters in {what}")


def _sft_epoch(W, dataset: Dataset, lr, batch_size, rng) -> np.ndarray:
    order = rng.permutation(len(dataset))
    for i in range(0, order.size, batch_size):
        b = order[i : i + batch_size]
        g = cross_entropy_grad(LinearSoftmaxPolicy(W), dataset.world, dataset.prompts[b], dataset.responses[b])
        W = W - lr * g
    return W


def sft_train(
    policy: LinearSoftmaxPolicy,
    dataset: Dataset,
    spec: TrainSpec,
    rng: np.random.Generator | None = None,
    on_epoch: Callback | None = None,
) -> tuple[LinearSoftmaxPolicy, list[float]]:
    """Minibatch gradient descent on mean -log pi(y|x); returns per-epoch dataset loss."""
    if len(dataset) == 0:
        raise DomainError("sft_train needs a nonempty dataset")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    W = policy.W
    losses = []
    for epoch in range(1, spec.epochs + 1):
        W = _sft_epoch(W, dataset, spec.learning_rate, spec.batch_size, rng)
        _check(W, "sft")
        pol = LinearSoftmaxPolicy(W)
        loss = cross_entropy(pol, dataset.world, dataset.prompts, dataset.responses)
        if not np.isfinite(loss):
            raise NumericFailure("non-finite sft loss")
        losses.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, pol)
    return LinearSoftmaxPolicy(W), losses


def iterative_sft_train(
    policy: LinearSoftmaxPolicy,
    world: World,
    spec: TrainSpec,
    rng: np.random.Generator | None = None,
    on_epoch: Callback | None = None,
    notes: list | None = None,
) -> tuple[LinearSoftmaxPolicy, list[EvalReport]]:
    """Each epoch: resample a filtered dataset from the current policy, then one SFT epoch."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    pi_0 = policy
    W = policy.W
    reports = []
    for epoch in range(1, spec.epochs + 1):
        data = _draw_self_sft(LinearSoftmaxPolicy(W), world, spec.k_self, rng)
        if len(data) == 0:
            if notes is not None:
                notes.append(f"iterative_sft epoch {epoch}: no correct samples, skipped")
        else:
            W = _sft_epoch(W, data, spec.learning_rate, spec.batch_size, rng)
            _check(W, "iterative_sft")
        pol = LinearSoftmaxPolicy(W)
        reports.append(evaluate(pi_0, pol, world))
        if on_epoch is not None:
            on_epoch(epoch, pol)
    return LinearSoftmaxPolicy(W), reports


def group_advantages(rewards, eps: float = ADVANTAGE_EPS) -> np.ndarray:
    """Group-standardized rewards (population std), one group per row."""
    r = np.asarray(rewards, dtype=float)
    return (r - r.mean(axis=-1, keepdims=True)) / (r.std(axis=-1, keepdims=True) + eps)


def policy_gradient(
    policy: LinearSoftmaxPolicy,
    world: World,
    prompts,
    responses,
    weights,
    beta: float = 0.0,
    ref_log_probs=None,
) -> np.ndarray:
    """Ascent direction: mean_i w_i grad log pi(y_i|x_i) - beta grad mean_x KL[pi || ref].

    ``prompts`` and ``responses`` are (n, G); the KL term uses each distinct
    prompt row once.
    """
    prompts = np.asarray(prompts, dtype=int)
    responses = np.asarray(responses, dtype=int)
    xs = prompts[:, 0] if prompts.ndim == 2 else prompts
    g = weighted_score_grad(policy, world, prompts.ravel(), responses.ravel(), np.ravel(weights))
    if beta > 0:
        g = g - beta * kl_to_reference_grad(policy, ref_log_probs, world, xs)
    return g


def _policy_gradient_train(policy, world, spec, advantage, traces, on_step):
    rng = np.random.default_rng(spec.seed)
    log_p0 = policy.log_probs(world)
    prompts = world.target_prompts
    rewarded = world.rewarded
    G = spec.group_size
    W = policy.W
    mean_rewards = []
    for step in range(1, spec.steps + 1):
        if spec.batch_size >= prompts.size:
            xs = prompts
        else:
            xs = rng.choice(prompts, spec.batch_size, replace=False)
        pol = LinearSoftmaxPolicy(W)
        ys = sample_responses(pol, world, xs, G, rng)
        r = (ys == rewarded[xs][:, None]).astype(float)
        grad = policy_gradient(
            pol, world, np.repeat(xs[:, None], G, axis=1), ys, advantage(r), spec.beta, log_p0[xs]
        )
        W = W + spec.learning_rate * grad
        _check(W, spec.method)
        mean_rewards.append(float(r.mean()))
        if traces is not None:
            traces.extend(zip(np.repeat(xs, G).tolist(), ys.ravel().tolist(), r.ravel().astype(int).tolist()))
        if on_step is not None:
            on_step(step, LinearSoftmaxPolicy(W))
    return LinearSoftmaxPolicy(W), mean_rewards


def reinforce_train(
    policy: LinearSoftmaxPolicy, world: World, spec: TrainSpec, on_step: Callback | None = None
) -> tuple[LinearSoftmaxPolicy, list[float]]:
    """Raw-reward policy gradient on target prompts with the exact KL penalty."""
    return _policy_gradient_train(policy, world, spec, lambda r: r, None, on_step)


def grpo_train(
    policy: LinearSoftmaxPolicy, world: World, spec: TrainSpec, on_step: Callback | None = None
) -> tuple[LinearSoftmaxPolicy, list[float], list[tuple[int, int, int]]]:
    """Group-relative policy gradient; also returns every sampled (prompt, response, reward)."""
    if spec.group_size < 2:
        raise DomainError("grpo needs group_size >= 2")
    traces: list = []
    pol, rewards = _policy_gradient_train(policy, world, spec, group_advantages, traces, on_step)
    return pol, rewards, traces


def sft_on_traces(
    pi_0: LinearSoftmaxPolicy,
    traces,
    spec: TrainSpec,
    world: World,
    rng: np.random.Generator | None = None,
    on_epoch: Callback | None = None,
) -> tuple[LinearSoftmaxPolicy, bool]:
    """SFT from pi_0 on the rewarded tuples of a policy-gradient run. Returns (policy, skipped)."""
    good = [(x, y) for x, y, r in traces if r == 1]
    if not good:
        return pi_0, True
    xs, ys = zip(*good)
    pol, _ = sft_train(pi_0, Dataset(world, xs, ys), spec, rng, on_epoch)
    return pol, False


@dataclass
class TrainResult:
    policy: LinearSoftmaxPolicy
    skipped: bool = False
    traces: list | None = None
    notes: list = field(default_factory=list)


def train(
    pi_0: LinearSoftmaxPolicy,
    world: World,
    spec: TrainSpec,
    callback: Callback | None = None,
    traces=None,
) -> TrainResult:
    """Dispatch on ``spec.method``. ``callback(progress, policy)`` fires after each epoch/step.

    ``sft_on_traces`` needs ``traces`` from an earlier grpo run.
    """
    m = spec.method
    rng = np.random.default_rng(spec.seed)
    if m == "sft":
        pol, _ = sft_train(pi_0, build_expert_dataset(world), spec, rng, callback)
        return TrainResult(pol)
    if m == "self_sft":
        data = _draw_self_sft(pi_0, world, spec.k_self, rng)
        if len(data) == 0:
            return TrainResult(pi_0, skipped=True, notes=["self_sft: no correct samples, skipped"])
        pol, _ = sft_train(pi_0, data, spec, rng, callback)
        return TrainResult(pol)
    if m == "iterative_sft":
        notes: list = []
        pol, _ = iterative_sft_train(pi_0, world, spec, rng, callback, notes)
        return TrainResult(pol, notes=notes)
    if m == "sft_on_traces":
        if traces is None:
            raise DomainError("sft_on_traces needs traces from a grpo run")
        pol, skipped = sft_on_traces(pi_0, traces, spec, world, rng, callback)
        return TrainResult(pol, skipped=skipped, notes=["sft_on_traces: no rewarded traces"] if skipped else [])
    if m == "reinforce":
        pol, _ = reinforce_train(pi_0, world, spec, callback)
        return TrainResult(pol)
    pol, _, tr = grpo_train(pi_0, world, spec, callback)
    return TrainResult(pol, traces=tr)
