"""Closed-form KL-regularized optimum and exact-enumeration identity checks.

Policies here are plain probability tables: shape (V,) for one prompt or
(P, V) for many.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..errors import DomainError


def _xlogy(x, y):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, y, 1.0)), 0.0)


def entropy(p) -> float:
    return float(-_xlogy(p, p).sum())


def cross_entropy(p, q) -> float:
    return float(-_xlogy(p, q).sum())


def kl(p, q) -> float:
    return float((_xlogy(p, p) - _xlogy(p, q)).sum())


def log_partition(pi_0, reward, beta: float) -> np.ndarray:
    """log Z(x) = log sum_y pi_0(y|x) exp(r(x,y)/beta), per row."""
    if not beta > 0:
        raise DomainError(f"beta must be > 0, got {beta}")
    with np.errstate(divide="ignore"):
        return logsumexp(np.log(np.asarray(pi_0, dtype=float)) + np.asarray(reward, dtype=float) / beta, axis=-1)


def analytic_optimal_policy(pi_0, reward, beta: float) -> np.ndarray:
    """pi*(y|x) proportional to pi_0(y|x) exp(r(x,y)/beta), evaluated in log space."""
    if not beta > 0:
        raise DomainError(f"beta must be > 0, got {beta}")
    pi_0 = np.asarray(pi_0, dtype=float)
    with np.errstate(divide="ignore"):
        logits = np.log(pi_0) + np.asarray(reward, dtype=float) / beta
    return np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))


def _row(table, prompt):
    table = np.asarray(table, dtype=float)
    return table if table.ndim == 1 else table[prompt]


def check_sft_identity(pi_star, pi_theta, prompt: int = 0) -> float:
    """|CE(pi*, pi) - (KL[pi* || pi] + H(pi*))| for one prompt."""
    p, q = _row(pi_star, prompt), _row(pi_theta, prompt)
    return abs(cross_entropy(p, q) - (kl(p, q) + entropy(p)))


def rl_objective(pi_theta, pi_0, reward, beta: float) -> float:
    """E_pi[r] - beta KL[pi || pi_0] for one prompt row."""
    return float(np.dot(pi_theta, reward)) - beta * kl(pi_theta, pi_0)


def check_rl_identity(pi_theta, pi_0, reward, beta: float, prompt: int = 0) -> float:
    """|J(pi) - (-beta KL[pi || pi*] + beta log Z)| for one prompt."""
    p, p0, r = _row(pi_theta, prompt), _row(pi_0, prompt), _row(reward, prompt)
    star = analytic_optimal_policy(p0, r, beta)
    rhs = -beta * kl(p, star) + beta * float(log_partition(p0, r, beta))
    return abs(rl_objective(p, p0, r, beta) - rhs)


@dataclass(frozen=True)
class IdentitySuiteResult:
    trials: int
    max_sft_residual: float
    max_rl_residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return max(self.max_sft_residual, self.max_rl_residual) < self.tolerance


def random_categorical(rng: np.random.Generator, V: int, concentration: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(V, concentration))


def run_identity_suite(trials: int = 100, seed: int = 0, tolerance: float = 1e-10) -> IdentitySuiteResult:
    """Both identities on random tabular configurations (V, policies, reward, beta)."""
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    sft_max = rl_max = 0.0
    for _ in range(trials):
        V = int(rng.integers(2, 33))
        conc = float(rng.choice([0.3, 1.0, 3.0]))
        p_star, p_theta, p_0 = (random_categorical(rng, V, conc) for _ in range(3))
        reward = (rng.random(V) < 0.3).astype(float)
        beta = float(np.exp(rng.uniform(np.log(0.01), np.log(10.0))))
        sft_max = max(sft_max, check_sft_identity(p_star, p_theta))
        rl_max = max(rl_max, check_rl_identity(p_theta, p_0, reward, beta))
    return IdentitySuiteResult(trials, sft_max, rl_max, tolerance)
