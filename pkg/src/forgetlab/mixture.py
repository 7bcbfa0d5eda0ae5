"""Univariate Gaussian mixtures and grid-based functionals.

Mixtures keep unconstrained parameters (log-weights, means, log-stds) so that
gradient steps never need a projection. All grid functionals use the
composite trapezoid rule on a uniform lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .errors import DomainError

DENSITY_FLOOR = 1e-300
LOG_DENSITY_FLOOR = math.log(DENSITY_FLOOR)
TAIL_MASS_TOLERANCE = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianComponent:
    mean: float
    std: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.std)) or self.std <= 0:
            raise DomainError(f"invalid Gaussian component ({self.mean}, {self.std})")

    def log_pdf(self, y):
        z = (np.asarray(y, dtype=float) - self.mean) / self.std
        return -0.5 * z * z - math.log(self.std) - _HALF_LOG_2PI

    def pdf(self, y):
        return np.exp(self.log_pdf(y))


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Weighted sum of univariate Gaussians.

    ``logits`` are log-weights up to a constant (``-inf`` encodes a zero
    weight); ``log_stds`` hold the log of each standard deviation. Use
    :meth:`from_components` to build one from weights and (mean, std) pairs.
    """

    logits: np.ndarray
    means: np.ndarray
    log_stds: np.ndarray

    def __post_init__(self):
        for name in ("logits", "means", "log_stds"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        k = self.means.size
        if k < 1 or self.logits.size != k or self.log_stds.size != k:
            raise DomainError("logits, means and log_stds must share a length >= 1")
        if not (np.all(np.isfinite(self.means)) and np.all(np.isfinite(self.log_stds))):
            raise DomainError("non-finite mixture parameters")
        if np.any(np.isnan(self.logits)) or np.any(self.logits == np.inf):
            raise DomainError("mixture logits must be finite or -inf")
        if not np.any(np.isfinite(self.logits)):
            raise DomainError("at least one mixture weight must be positive")

    @classmethod
    def from_components(cls, weights: Sequence[float], components: Sequence[GaussianComponent | tuple]):
        w = np.asarray(weights, dtype=float).reshape(-1)
        comps = [c if isinstance(c, GaussianComponent) else GaussianComponent(*c) for c in components]
        if w.size != len(comps) or w.size < 1:
            raise DomainError("weights and components must have the same nonzero length")
        if np.any(w < 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights must lie in [0, 1] and sum to 1, got {w.tolist()}")
        with np.errstate(divide="ignore"):
            logits = np.log(w)
        return cls(
            logits=logits,
            means=[c.mean for c in comps],
            log_stds=[math.log(c.std) for c in comps],
        )

    @classmethod
    def single(cls, mean: float, std: float) -> "GaussianMixture":
        return cls.from_components([1.0], [GaussianComponent(mean, std)])

    @property
    def n_components(self) -> int:
        return self.means.size

    @property
    def log_weights(self) -> np.ndarray:
        return self.logits - logsumexp(self.logits)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def stds(self) -> np.ndarray:
        return np.exp(self.log_stds)

    @property
    def components(self) -> list[GaussianComponent]:
        return [GaussianComponent(float(m), float(s)) for m, s in zip(self.means, self.stds)]

    def replace(self, logits=None, means=None, log_stds=None) -> "GaussianMixture":
        return GaussianMixture(
            logits=self.logits if logits is None else logits,
            means=self.means if means is None else means,
            log_stds=self.log_stds if log_stds is None else log_stds,
        )

    def parameter_vector(self) -> np.ndarray:
        """Trainable parameters: free logits (all but the last), means, log-stds."""
        return np.concatenate([self.logits[:-1], self.means, self.log_stds])

    def with_parameter_vector(self, theta) -> "GaussianMixture":
        k = self.n_components
        theta = np.asarray(theta, dtype=float)
        logits = np.concatenate([theta[: k - 1], self.logits[-1:]])
        return GaussianMixture(logits, theta[k - 1 : 2 * k - 1], theta[2 * k - 1 :])


def _component_log_terms(m: GaussianMixture, y: np.ndarray) -> np.ndarray:
    # shape (K, *y.shape): log w_i + log N(y; mu_i, sigma_i)
    yy = y[None, ...]
    shape = (-1,) + (1,) * y.ndim
    mu = m.means.reshape(shape)
    ls = m.log_stds.reshape(shape)
    z = (yy - mu) * np.exp(-ls)
    return m.log_weights.reshape(shape) - 0.5 * z * z - ls - _HALF_LOG_2PI


def _as_finite_array(y) -> np.ndarray:
    arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("log_density requires finite evaluation points")
    return arr


def log_density(m: GaussianMixture, y):
    """log sum_i w_i N(y; mu_i, sigma_i), accumulated with log-sum-exp."""
    arr = _as_finite_array(y)
    out = logsumexp(_component_log_terms(m, arr), axis=0)
    return float(out) if arr.ndim == 0 else out


def density(m: GaussianMixture, y):
    return np.exp(log_density(m, y))


def responsibilities(m: GaussianMixture, y) -> np.ndarray:
    """Posterior component probabilities r_i(y), shape (K, *y.shape)."""
    arr = _as_finite_array(y)
    terms = _component_log_terms(m, arr)
    return np.exp(terms - logsumexp(terms, axis=0, keepdims=True))


def sample(m: GaussianMixture, rng: np.random.Generator, n: int) -> np.ndarray:
    if n < 1:
        raise DomainError(f"sample size must be >= 1, got {n}")
    comp = rng.choice(m.n_components, size=n, p=m.weights)
    return rng.normal(m.means[comp], m.stds[comp])


@dataclass(frozen=True)
class Grid:
    lo: float = -12.0
    hi: float = 12.0
    n_points: int = 4001
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo >= self.hi:
            raise DomainError(f"grid needs lo < hi, got [{self.lo}, {self.hi}]")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise DomainError(f"grid needs n_points >= 2, got {self.n_points}")
        pts = np.linspace(self.lo, self.hi, int(self.n_points))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n_points - 1)

    def integrate(self, values) -> float:
        values = np.asarray(values, dtype=float)
        if values.shape != self.points.shape:
            raise DomainError(f"expected {self.points.shape} grid values, got {values.shape}")
        h = self.spacing
        return float(h * (values.sum() - 0.5 * (values[0] + values[-1])))

    def refined(self) -> "Grid":
        """Same interval with the spacing halved."""
        return Grid(self.lo, self.hi, 2 * self.n_points - 1)


DEFAULT_GRID = Grid()


def tail_mass(m: GaussianMixture | GaussianComponent, grid: Grid) -> float:
    """Probability mass lying outside [grid.lo, grid.hi]."""
    if isinstance(m, GaussianComponent):
        m = GaussianMixture.single(m.mean, m.std)
    lo = (grid.lo - m.means) / m.stds
    hi = (m.means - grid.hi) / m.stds
    return float(np.sum(m.weights * (np.exp(log_ndtr(lo)) + np.exp(log_ndtr(hi)))))


@dataclass(frozen=True)
class OverlapResult:
    value: float
    raw: float
    tail_warning: bool


def overlap_area_info(weight: float, comp: GaussianComponent, policy: GaussianMixture, grid: Grid = DEFAULT_GRID) -> OverlapResult:
    if not 0.0 < weight < 1.0:
        raise DomainError(f"overlap weight must lie in (0, 1), got {weight}")
    scaled = weight * comp.pdf(grid.points)
    pol = density(policy, grid.points)
    raw = grid.integrate(np.minimum(scaled, pol)) / weight
    warn = tail_mass(comp, grid) > TAIL_MASS_TOLERANCE or tail_mass(policy, grid) > TAIL_MASS_TOLERANCE
    return OverlapResult(value=min(max(raw, 0.0), 1.0), raw=raw, tail_warning=warn)


def overlap_area(weight: float, comp: GaussianComponent, policy: GaussianMixture, grid: Grid = DEFAULT_GRID) -> float:
    """Normalized overlap (1/w) * integral of min(w * comp, policy), clamped to [0, 1]."""
    return overlap_area_info(weight, comp, policy, grid).value


def _grid_pair(f, g, grid: Grid):
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != grid.points.shape or g.shape != grid.points.shape:
        raise DomainError("density arrays must match the grid")
    return f, g


def tv_distance(f, g, grid: Grid = DEFAULT_GRID) -> float:
    f, g = _grid_pair(f, g, grid)
    if np.any(f < 0) or np.any(g < 0):
        raise DomainError("densities must be nonnegative")
    return 0.5 * grid.integrate(np.abs(f - g))


def kl_grid(p, q, grid: Grid = DEFAULT_GRID) -> float:
    """Integral of p log(p/q); +inf when p has mass where q underflows."""
    p, q = _grid_pair(p, q, grid)
    support = p > DENSITY_FLOOR
    if np.any(support & (q <= DENSITY_FLOOR)):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(support, p * (np.log(p) - np.log(q)), 0.0)
    return grid.integrate(integrand)


def cross_entropy_grid(p, q, grid: Grid = DEFAULT_GRID) -> float:
    """Integral of -p log q with q floored at DENSITY_FLOOR."""
    p, q = _grid_pair(p, q, grid)
    return grid.integrate(-p * np.log(np.maximum(q, DENSITY_FLOOR)))


def entropy_grid(p, grid: Grid = DEFAULT_GRID) -> float:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(p > DENSITY_FLOOR, -p * np.log(p), 0.0)
    return grid.integrate(integrand)


def overlap_from_tv(tv: float, weight: float) -> float:
    """Overlap of a unit-mass policy with a mode of mass ``weight``, from their TV."""
    return 0.5 + 0.5 / weight - tv / weight


def drop_from_tv(tv_0: float, tv_T: float, weight: float) -> float:
    """Drop as the normalized increase in TV to the scaled old mode."""
    return (tv_T - tv_0) / weight


def gain_from_tv(tv_0: float, tv_T: float, weight: float) -> float:
    """Gain as the normalized *decrease* in TV to the scaled new mode.

    Note the sign: a gain means the policy got closer to the new mode, so the
    TV shrinks. Writing the numerator as ``tv_T - tv_0`` would flip it.
    """
    return (tv_0 - tv_T) / weight


@dataclass(frozen=True)
class OverlapReport:
    s_old: float
    s_new: float
    gain: float
    drop: float


def gain_drop(s_old_0: float, s_old_T: float, s_new_0: float, s_new_T: float) -> OverlapReport:
    vals = (s_old_0, s_old_T, s_new_0, s_new_T)
    if not all(0.0 <= v <= 1.0 for v in vals):
        raise DomainError(f"overlap values must lie in [0, 1], got {vals}")
    return OverlapReport(s_old=s_old_T, s_new=s_new_T, gain=s_new_T - s_new_0, drop=s_old_0 - s_old_T)
