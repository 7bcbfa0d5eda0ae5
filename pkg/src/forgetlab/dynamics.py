"""Forward/reverse KL gradient dynamics for Gaussian-mixture policies.

The target is always a two-mode mixture ``alpha* p_old + (1 - alpha*) p_new``.
Forward KL steps fit samples drawn from ``p_new`` by maximum likelihood;
reverse KL steps draw from the policy itself and use a score-function
estimator with a batch-mean baseline. Progress is tracked by the overlap of
the policy with each (weighted) target mode.
"""

from __future__ import annotations

import dataclasses
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, NumericFailure
from .mixture import (
    DEFAULT_GRID,
    LOG_DENSITY_FLOOR,
    GaussianComponent,
    GaussianMixture,
    Grid,
    density,
    gain_drop,
    log_density,
    overlap_area_info,
    responsibilities,
    sample,
)

FORWARD_KL = "forward_kl"
REVERSE_KL = "reverse_kl"
OBJECTIVES = (FORWARD_KL, REVERSE_KL)
NEW_MODE_ONLY = "new_mode_only"
FULL_MIXTURE = "full_mixture"
REVERSE_TARGETS = (NEW_MODE_ONLY, FULL_MIXTURE)

DEFAULT_TARGET = GaussianMixture.from_components([0.75, 0.25], [(-3.0, 1.0), (3.5, 0.7)])
UNIMODAL_INIT = GaussianMixture.single(-3.2, 1.0)
BIMODAL_INIT = GaussianMixture.from_components([0.75, 0.25], [(-3.5, 1.0), (0.5, 0.7)])
DEFAULT_LEARNING_RATES = {
    ("uni", FORWARD_KL): 0.05,
    ("uni", REVERSE_KL): 0.05,
    ("bi", FORWARD_KL): 0.15,
    ("bi", REVERSE_KL): 0.01,
}


@dataclass(frozen=True)
class MixtureGradient:
    """Partials of log pi(y) w.r.t. weight logits, means and log-stds.

    Each field has shape ``(K,)`` for a scalar ``y`` or ``(K, n)`` for ``n``
    evaluation points.
    """

    logits: np.ndarray
    means: np.ndarray
    log_stds: np.ndarray

    def vector(self) -> np.ndarray:
        """Stack the trainable coordinates (the last logit is pinned)."""
        return np.concatenate([self.logits[:-1], self.means, self.log_stds], axis=0)


def grad_log_density(m: GaussianMixture, y) -> MixtureGradient:
    y = np.asarray(y, dtype=float)
    r = responsibilities(m, y)
    shape = (-1,) + (1,) * y.ndim
    mu = m.means.reshape(shape)
    sigma = m.stds.reshape(shape)
    z = (y[None, ...] - mu) / sigma
    return MixtureGradient(
        logits=r - m.weights.reshape(shape),
        means=r * z / sigma,
        log_stds=r * (z * z - 1.0),
    )


def _descend(policy: GaussianMixture, loss_grad: np.ndarray, lr: float) -> GaussianMixture:
    if not np.all(np.isfinite(loss_grad)):
        raise NumericFailure("non-finite gradient")
    with np.errstate(over="ignore", invalid="ignore"):
        theta = policy.parameter_vector() - lr * loss_grad
    k = policy.n_components
    if not np.all(np.isfinite(theta[k - 1 :])):
        raise NumericFailure("non-finite parameters after update")
    return policy.with_parameter_vector(theta)


def _check_step_args(n: int, lr: float):
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if not lr >= 0:
        raise DomainError(f"learning rate must be >= 0, got {lr}")


def forward_kl_gradient(policy: GaussianMixture, y) -> np.ndarray:
    """Monte Carlo gradient of mean -log pi(y) over the given target samples."""
    return -grad_log_density(policy, np.asarray(y, dtype=float)).vector().mean(axis=1)


def reverse_kl_gradient(policy: GaussianMixture, log_target, y, counter: Counter | None = None) -> np.ndarray:
    """Score-function estimate of grad KL(policy || target) from policy samples ``y``.

    ``log_target`` holds log target(y); values below the log floor are
    clipped to it and counted in ``counter["target_clip"]``.
    """
    y = np.asarray(y, dtype=float)
    log_target = np.asarray(log_target, dtype=float)
    low = ~(log_target >= LOG_DENSITY_FLOOR)
    if np.any(low):
        log_target = np.where(low, LOG_DENSITY_FLOOR, log_target)
        if counter is not None:
            counter["target_clip"] += int(low.sum())
    f = log_density(policy, y) - log_target
    f = f - f.mean()
    return (grad_log_density(policy, y).vector() * f).mean(axis=1)


def forward_kl_step(
    policy: GaussianMixture,
    target_new_mode: GaussianComponent,
    n: int,
    lr: float,
    rng: np.random.Generator,
) -> GaussianMixture:
    """One gradient step on the Monte Carlo cross-entropy of p_new under the policy."""
    _check_step_args(n, lr)
    y = rng.normal(target_new_mode.mean, target_new_mode.std, size=n)
    return _descend(policy, forward_kl_gradient(policy, y), lr)


def reverse_kl_step(
    policy: GaussianMixture,
    target_log_density: Callable[[np.ndarray], np.ndarray],
    n: int,
    lr: float,
    rng: np.random.Generator,
    counter: Counter | None = None,
) -> GaussianMixture:
    """One score-function step on KL(policy || target) using n policy samples.

    ``target_log_density`` must accept an array of points.
    """
    _check_step_args(n, lr)
    y = sample(policy, rng, n)
    return _descend(policy, reverse_kl_gradient(policy, target_log_density(y), y, counter), lr)


@dataclass(frozen=True)
class SimConfig:
    policy_init: GaussianMixture
    objective: str
    learning_rate: float
    target: GaussianMixture = DEFAULT_TARGET
    reverse_target: str = NEW_MODE_ONLY
    n_samples: int = 1000
    max_steps: int = 1000
    eval_every: int = 100
    gain_stop: float = 0.9
    seed: int = 0
    grid: Grid = DEFAULT_GRID

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise DomainError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.reverse_target not in REVERSE_TARGETS:
            raise DomainError(f"reverse_target must be one of {REVERSE_TARGETS}, got {self.reverse_target!r}")
        if self.target.n_components != 2:
            raise DomainError("target must have exactly two components (old, new)")
        if not 0.0 < self.target.weights[0] < 1.0:
            raise DomainError("target old-mode weight must lie in (0, 1)")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise DomainError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.n_samples < 1 or self.max_steps < 0 or self.eval_every < 1:
            raise DomainError("need n_samples >= 1, max_steps >= 0, eval_every >= 1")

    @property
    def old_weight(self) -> float:
        return float(self.target.weights[0])

    @property
    def old_mode(self) -> GaussianComponent:
        return self.target.components[0]

    @property
    def new_mode(self) -> GaussianComponent:
        return self.target.components[1]

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


def unimodal_config(objective: str, learning_rate: float | None = None, **overrides) -> SimConfig:
    lr = DEFAULT_LEARNING_RATES.get(("uni", objective), 0.05) if learning_rate is None else learning_rate
    return SimConfig(policy_init=UNIMODAL_INIT, objective=objective, learning_rate=lr, **overrides)


def bimodal_config(objective: str, learning_rate: float | None = None, **overrides) -> SimConfig:
    lr = DEFAULT_LEARNING_RATES.get(("bi", objective), 0.01) if learning_rate is None else learning_rate
    return SimConfig(policy_init=BIMODAL_INIT, objective=objective, learning_rate=lr, **overrides)


@dataclass(frozen=True)
class Checkpoint:
    step: int
    logits: np.ndarray
    means: np.ndarray
    log_stds: np.ndarray
    s_old: float
    s_new: float
    gain: float
    drop: float
    density: np.ndarray | None = None
    tail_warning: bool = False

    @property
    def policy(self) -> GaussianMixture:
        return GaussianMixture(self.logits, self.means, self.log_stds)

    @property
    def alpha(self) -> float | None:
        if self.means.size != 2:
            return None
        return float(self.policy.weights[0])


@dataclass
class Trajectory:
    config: SimConfig
    checkpoints: list[Checkpoint] = field(default_factory=list)
    stop_reason: str = "max_steps"
    clip_count: int = 0

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]

    @property
    def gain(self) -> float:
        return self.final.gain

    @property
    def drop(self) -> float:
        return self.final.drop

    @property
    def tail_warnings(self) -> int:
        return sum(ck.tail_warning for ck in self.checkpoints)

    @property
    def reached_gain_stop(self) -> bool:
        return self.stop_reason in ("gain_stop", "already_learned")


def mode_overlaps(policy: GaussianMixture, cfg: SimConfig) -> tuple[float, float, bool]:
    """(S_old, S_new, whether either overlap saw tail mass beyond the grid)."""
    w = cfg.old_weight
    old = overlap_area_info(w, cfg.old_mode, policy, cfg.grid)
    new = overlap_area_info(1.0 - w, cfg.new_mode, policy, cfg.grid)
    return old.value, new.value, old.tail_warning or new.tail_warning


def _checkpoint(step, policy, cfg, base, keep_density) -> Checkpoint:
    s_old, s_new, warn = mode_overlaps(policy, cfg)
    s_old_0, s_new_0 = base if base is not None else (s_old, s_new)
    rep = gain_drop(s_old_0, s_old, s_new_0, s_new)
    return Checkpoint(
        step=step,
        logits=policy.logits.copy(),
        means=policy.means.copy(),
        log_stds=policy.log_stds.copy(),
        s_old=s_old,
        s_new=s_new,
        gain=rep.gain,
        drop=rep.drop,
        density=density(policy, cfg.grid.points) if keep_density else None,
        tail_warning=warn,
    )


def recompute_checkpoint(ck: Checkpoint, first: Checkpoint, cfg: SimConfig) -> Checkpoint:
    """Re-evaluate a stored checkpoint from its parameter snapshot."""
    return _checkpoint(ck.step, ck.policy, cfg, (first.s_old, first.s_new), keep_density=False)


def reverse_target_log_density(cfg: SimConfig) -> Callable[[np.ndarray], np.ndarray]:
    if cfg.reverse_target == NEW_MODE_ONLY:
        return cfg.new_mode.log_pdf
    target = cfg.target
    return lambda y: log_density(target, y)


def _simulate(cfg: SimConfig, keep_density: bool) -> Trajectory:
    rng = np.random.default_rng(cfg.seed)
    traj = Trajectory(config=cfg)
    clips: Counter = Counter()
    if cfg.objective == FORWARD_KL:
        new_mode = cfg.new_mode

        def step_fn(p):
            return forward_kl_step(p, new_mode, cfg.n_samples, cfg.learning_rate, rng)
    else:
        log_target = reverse_target_log_density(cfg)

        def step_fn(p):
            return reverse_kl_step(p, log_target, cfg.n_samples, cfg.learning_rate, rng, clips)

    policy = cfg.policy_init
    first = _checkpoint(0, policy, cfg, None, keep_density)
    traj.checkpoints.append(first)
    base = (first.s_old, first.s_new)
    if first.s_new >= cfg.gain_stop:
        # the target mode is already covered; no gain is left to earn
        traj.stop_reason = "already_learned"
        return traj

    for step in range(1, cfg.max_steps + 1):
        try:
            policy = step_fn(policy)
        except NumericFailure as exc:
            raise NumericFailure(f"step {step}: {exc}", last_good=traj.checkpoints[-1]) from exc
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            ck = _checkpoint(step, policy, cfg, base, keep_density)
            traj.checkpoints.append(ck)
            if ck.gain >= cfg.gain_stop:
                traj.stop_reason = "gain_stop"
                break
    traj.clip_count = clips["target_clip"]
    return traj


def run_unimodal(cfg: SimConfig, keep_density: bool = False) -> Trajectory:
    if cfg.policy_init.n_components != 1:
        raise DomainError("run_unimodal needs a single-component initial policy")
    return _simulate(cfg, keep_density)


def run_bimodal(cfg: SimConfig, keep_density: bool = False) -> Trajectory:
    if cfg.policy_init.n_components != 2:
        raise DomainError("run_bimodal needs a two-component initial policy")
    return _simulate(cfg, keep_density)


def with_distance(cfg: SimConfig, distance: float) -> SimConfig:
    """Move p_new so that |mu*_new - mu_new(init)| equals ``distance``.

    The direction from the initial new component toward the target new mode is
    kept (rightward when they coincide).
    """
    if not distance >= 0:
        raise DomainError(f"distance must be >= 0, got {distance}")
    q_new = float(cfg.policy_init.means[1])
    p_new = cfg.new_mode
    direction = -1.0 if p_new.mean < q_new else 1.0
    moved = GaussianComponent(q_new + direction * distance, p_new.std)
    target = GaussianMixture.from_components(cfg.target.weights, [cfg.old_mode, moved])
    return cfg.replace(target=target)


def run_distance_sweep(
    base_cfg: SimConfig,
    distances: Sequence[float],
    objectives: Sequence[str] | None = None,
) -> list[tuple[float, Trajectory]]:
    if len(distances) == 0:
        raise DomainError("distances must be nonempty")
    objectives = (base_cfg.objective,) if objectives is None else tuple(objectives)
    out = []
    for d in distances:
        for obj in objectives:
            cfg = with_distance(base_cfg, float(d))
            if obj != cfg.objective:
                cfg = cfg.replace(objective=obj)
            out.append((float(d), run_bimodal(cfg)))
    return out
