"""Finite prompt/response worlds with one rewarded response per prompt."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DomainError

TARGET_TASK = 0


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class World:
    """Prompts x_i with features phi, responses y with features psi.

    ``rewarded[i]`` is the single correct response of prompt ``i``;
    ``task_of[i]`` is 0 for the target task and 1..M for the non-target tasks.
    """

    prompt_features: np.ndarray
    response_features: np.ndarray
    rewarded: np.ndarray
    task_of: np.ndarray
    n_nontarget: int

    def __post_init__(self):
        object.__setattr__(self, "prompt_features", _frozen(self.prompt_features))
        object.__setattr__(self, "response_features", _frozen(self.response_features))
        object.__setattr__(self, "rewarded", _frozen(self.rewarded, int))
        object.__setattr__(self, "task_of", _frozen(self.task_of, int))
        p, v = self.n_prompts, self.n_responses
        if v < 2:
            raise DomainError(f"need at least 2 responses, got {v}")
        if self.rewarded.shape != (p,) or self.task_of.shape != (p,):
            raise DomainError("rewarded and task_of need one entry per prompt")
        if np.any(self.rewarded < 0) or np.any(self.rewarded >= v):
            raise DomainError("rewarded responses out of range")
        if np.any(self.task_of < 0) or np.any(self.task_of > self.n_nontarget):
            raise DomainError("task labels out of range")
        for t in range(self.n_nontarget + 1):
            if not np.any(self.task_of == t):
                raise DomainError(f"task {t} is empty")

    @property
    def n_prompts(self) -> int:
        return self.prompt_features.shape[0]

    @property
    def n_responses(self) -> int:
        return self.response_features.shape[0]

    @property
    def reward(self) -> np.ndarray:
        """(P, V) table of 0/1 rewards."""
        r = np.zeros((self.n_prompts, self.n_responses))
        r[np.arange(self.n_prompts), self.rewarded] = 1.0
        return r

    def task(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.task_of == t)

    @property
    def target_prompts(self) -> np.ndarray:
        return self.task(TARGET_TASK)

    @property
    def nontarget_tasks(self) -> list[np.ndarray]:
        return [self.task(t) for t in range(1, self.n_nontarget + 1)]

    @property
    def nontarget_prompts(self) -> np.ndarray:
        return np.flatnonzero(self.task_of != TARGET_TASK)

    def with_rewarded(self, rewarded) -> "World":
        return World(self.prompt_features, self.response_features, rewarded, self.task_of, self.n_nontarget)


def task_sizes(P: int, M: int) -> list[int]:
    """Sizes of [target, non-target 1..M]; the target absorbs the remainder."""
    if P < 1 or M < 0:
        raise ConfigError(f"need P >= 1 and M >= 0, got P={P}, M={M}", key="P")
    each = P // (M + 1)
    if each < 1:
        raise ConfigError(f"cannot split {P} prompts into {M + 1} nonempty tasks", key="M")
    return [P - M * each] + [each] * M


def make_world(P: int = 64, V: int = 16, M: int = 4, d: int = 64, seed: int = 0, d_response: int | None = None) -> World:
    """Random world; features are i.i.d. N(0, 1/d) so logits stay O(|W|)."""
    if V < 2:
        raise ConfigError(f"need V >= 2, got {V}", key="V")
    if d < 1:
        raise ConfigError(f"need d >= 1, got {d}", key="d")
    sizes = task_sizes(P, M)
    d_r = d if d_response is None else d_response
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((P, d)) / math.sqrt(d)
    psi = rng.standard_normal((V, d_r)) / math.sqrt(d_r)
    rewarded = rng.integers(0, V, size=P)
    labels = np.repeat(np.arange(M + 1), sizes)
    task_of = np.empty(P, dtype=int)
    task_of[rng.permutation(P)] = labels
    return World(phi, psi, rewarded, task_of, M)


def make_tabular_world(rewarded, V: int, task_of=None) -> World:
    """One-hot features, so W is a free (P, V) logit table.

    All prompts belong to the target task unless ``task_of`` is given.
    """
    rewarded = np.atleast_1d(np.asarray(rewarded, dtype=int))
    P = rewarded.size
    task_of = np.zeros(P, dtype=int) if task_of is None else np.asarray(task_of, dtype=int)
    return World(np.eye(P), np.eye(V), rewarded, task_of, int(task_of.max()))
