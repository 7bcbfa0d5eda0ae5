"""Shared-parameter softmax policy over a finite response set, and exact evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from ..errors import DomainError
from .world import World


@dataclass(frozen=True, eq=False)
class LinearSoftmaxPolicy:
    """pi(y|x) = softmax_y(phi(x)^T W psi(y)). W is the only parameter."""

    W: np.ndarray

    def __post_init__(self):
        w = np.array(self.W, dtype=float)
        if w.ndim != 2:
            raise DomainError(f"W must be a matrix, got shape {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "W", w)

    @classmethod
    def zeros(cls, world: World) -> "LinearSoftmaxPolicy":
        """The uniform policy."""
        return cls(np.zeros((world.prompt_features.shape[1], world.response_features.shape[1])))

    def logits(self, world: World, prompts=None) -> np.ndarray:
        phi = world.prompt_features if prompts is None else world.prompt_features[prompts]
        return phi @ self.W @ world.response_features.T

    def log_probs(self, world: World, prompts=None) -> np.ndarray:
        return log_softmax(self.logits(world, prompts), axis=-1)

    def probs(self, world: World, prompts=None) -> np.ndarray:
        return softmax(self.logits(world, prompts), axis=-1)

    def same_as(self, other: "LinearSoftmaxPolicy") -> bool:
        return np.array_equal(self.W, other.W)


def logit_grad_to_W(world: World, prompts, coeffs) -> np.ndarray:
    """Chain rule through the bilinear logits: sum_i phi(x_i) c_i^T psi.

    ``coeffs`` has shape (n, V): the derivative of some scalar w.r.t. each
    prompt's logit vector.
    """
    phi = world.prompt_features[prompts]
    return phi.T @ (np.asarray(coeffs) @ world.response_features)


def cross_entropy(policy: LinearSoftmaxPolicy, world: World, prompts, responses) -> float:
    lp = policy.log_probs(world, prompts)
    return float(-lp[np.arange(len(prompts)), responses].mean())


def cross_entropy_grad(policy: LinearSoftmaxPolicy, world: World, prompts, responses) -> np.ndarray:
    """Gradient of the mean of -log pi(y_i|x_i) w.r.t. W."""
    prompts = np.asarray(prompts, dtype=int)
    p = policy.probs(world, prompts)
    p[np.arange(prompts.size), responses] -= 1.0
    return logit_grad_to_W(world, prompts, p) / prompts.size


def weighted_score_grad(policy: LinearSoftmaxPolicy, world: World, prompts, responses, weights) -> np.ndarray:
    """Mean over samples of weight_i * grad log pi(y_i|x_i)."""
    prompts = np.asarray(prompts, dtype=int)
    weights = np.asarray(weights, dtype=float)
    p = policy.probs(world, prompts)
    c = -p * weights[:, None]
    c[np.arange(prompts.size), responses] += weights
    return logit_grad_to_W(world, prompts, c) / prompts.size


def categorical_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL[p || q] for strictly positive q, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def kl_to_reference_grad(policy: LinearSoftmaxPolicy, ref_log_probs, world: World, prompts) -> np.ndarray:
    """Exact gradient of mean_x KL[pi(.|x) || ref(.|x)] w.r.t. W.

    ``ref_log_probs`` holds log ref(y|x) for the given prompts, shape (n, V).
    """
    prompts = np.asarray(prompts, dtype=int)
    lp = policy.log_probs(world, prompts)
    p = np.exp(lp)
    ratio = lp - np.asarray(ref_log_probs)
    kl = (p * ratio).sum(axis=1, keepdims=True)
    return logit_grad_to_W(world, prompts, p * (ratio - kl)) / prompts.size


def sample_responses(policy: LinearSoftmaxPolicy, world: World, prompts, k: int, rng: np.random.Generator) -> np.ndarray:
    """(n, k) responses drawn from pi(.|x) for each prompt by inverse CDF."""
    p = policy.probs(world, prompts)
    cdf = np.cumsum(p, axis=1)
    u = rng.random((p.shape[0], k))
    idx = (u[:, :, None] >= cdf[:, None, :]).sum(axis=2)
    return np.minimum(idx, world.n_responses - 1)


def accuracy(
    policy: LinearSoftmaxPolicy,
    task,
    world: World,
    mode: str = "exact",
    n: int = 1000,
    seed: int = 0,
) -> float:
    """Mean probability of the rewarded response (exact) or mean sampled reward."""
    task = np.asarray(task, dtype=int)
    if task.size == 0:
        raise DomainError("accuracy of an empty task")
    if mode == "exact":
        p = policy.probs(world, task)
        return float(p[np.arange(task.size), world.rewarded[task]].mean())
    if mode == "sampled":
        ys = sample_responses(policy, world, task, n, np.random.default_rng(seed))
        return float((ys == world.rewarded[task][:, None]).mean())
    raise DomainError(f"unknown accuracy mode {mode!r}")


def task_accuracies(policy: LinearSoftmaxPolicy, world: World) -> np.ndarray:
    """Exact accuracy of [target, non-target 1..M]."""
    p = policy.probs(world)
    correct = p[np.arange(world.n_prompts), world.rewarded]
    return np.array([correct[world.task_of == t].mean() for t in range(world.n_nontarget + 1)])


@dataclass(frozen=True)
class EvalReport:
    initial_acc: np.ndarray
    final_acc: np.ndarray
    gain: float
    drop: float
    kl_from_init: float

    @property
    def target_acc(self) -> float:
        return float(self.final_acc[0])

    @property
    def mean_nontarget_acc(self) -> float:
        return float(self.final_acc[1:].mean()) if self.final_acc.size > 1 else float("nan")


def evaluate(pi_0: LinearSoftmaxPolicy, pi_T: LinearSoftmaxPolicy, world: World) -> EvalReport:
    a0 = task_accuracies(pi_0, world)
    aT = task_accuracies(pi_T, world)
    drop = float((a0[1:] - aT[1:]).mean()) if world.n_nontarget else float("nan")
    lp0 = pi_0.log_probs(world)
    kl = (np.exp(lp0) * (lp0 - pi_T.log_probs(world))).sum(axis=1)
    return EvalReport(a0, aT, float(aT[0] - a0[0]), drop, float(kl.mean()))
