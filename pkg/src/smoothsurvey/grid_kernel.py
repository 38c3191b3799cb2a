"""Time grid, kernels and Nadaraya-Watson smoothing weights over a shared grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllWeightsZero, AssumptionA3Violated, InvalidConfig

KERNEL_FAMILIES = ("epanechnikov", "gaussian", "uniform")
BOUNDED_FAMILIES = ("epanechnikov", "uniform")

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class TimeGrid:
    """Equispaced instants ``t_j = T (j-1)/(d-1)``, ``j = 1..d``."""

    T: float
    d: int
    instants: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise InvalidConfig(f"horizon T must be positive, got {self.T!r}")
        if int(self.d) != self.d or self.d < 2:
            raise InvalidConfig(f"grid needs d >= 2 instants, got {self.d!r}")
        object.__setattr__(self, "d", int(self.d))
        instants = np.linspace(0.0, float(self.T), self.d)
        instants.setflags(write=False)
        object.__setattr__(self, "instants", instants)

    @property
    def spacing(self) -> float:
        return self.T / (self.d - 1)

    def refine(self, m: int) -> np.ndarray:
        """Uniform evaluation grid of ``m`` points on ``[0, T]``."""
        if m < 2:
            raise InvalidConfig("an evaluation grid needs at least 2 points")
        return np.linspace(0.0, float(self.T), int(m))

    @classmethod
    def from_instants(cls, instants, rtol: float = 1e-9) -> "TimeGrid":
        """Rebuild a grid from explicit instants, checking they are equispaced from 0."""
        t = np.asarray(instants, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise InvalidConfig("need at least two instants")
        grid = cls(float(t[-1]), t.size)
        if not np.allclose(t, grid.instants, rtol=0.0, atol=rtol * grid.T):
            raise InvalidConfig("instants must be equispaced on [0, T] starting at 0")
        return grid


@dataclass(frozen=True)
class KernelSpec:
    family: str
    bandwidth: float

    def __post_init__(self):
        family = self.family.lower()
        if family not in KERNEL_FAMILIES:
            raise InvalidConfig(
                f"unknown kernel {self.family!r}; expected one of {KERNEL_FAMILIES}"
            )
        object.__setattr__(self, "family", family)
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise InvalidConfig(f"bandwidth must be positive, got {self.bandwidth!r}")

    @property
    def bounded(self) -> bool:
        return self.family in BOUNDED_FAMILIES

    def with_bandwidth(self, h: float) -> "KernelSpec":
        return KernelSpec(self.family, h)

    def satisfies_a3(self, grid: TimeGrid) -> bool:
        """True when ``2h > T/(d-1)``; always True for the Gaussian kernel."""
        if not self.bounded:
            return True
        return 2.0 * self.bandwidth > grid.spacing


@dataclass(frozen=True)
class SmoothingWeights:
    t: float
    weights: np.ndarray


def kernel_value(spec: KernelSpec, x):
    """Evaluate ``K(x)`` elementwise. Scalars in, scalar out."""
    x = np.asarray(x, dtype=float)
    if spec.family == "epanechnikov":
        out = np.where(np.abs(x) < 1.0, 0.75 * (1.0 - x * x), 0.0)
    elif spec.family == "uniform":
        out = np.where(np.abs(x) <= 1.0, 0.5, 0.0)
    else:
        out = np.exp(-0.5 * x * x) / _SQRT_2PI
    return float(out) if out.ndim == 0 else out


def kernel_matrix(grid: TimeGrid, spec: KernelSpec, eval_points) -> np.ndarray:
    """Raw kernel values ``K((t - t_j)/h)`` as an ``(m, d)`` array."""
    t = np.atleast_1d(np.asarray(eval_points, dtype=float))
    diff = t[:, None] - grid.instants[None, :]
    k = kernel_value(spec, diff / spec.bandwidth)
    k = np.atleast_2d(k)
    if spec.bounded:
        # locality on the raw distance; x = diff/h can round to just below 1
        k = np.where(np.abs(diff) >= spec.bandwidth, 0.0, k)
    return k


def weight_matrix(grid: TimeGrid, spec: KernelSpec, eval_points=None) -> np.ndarray:
    """Normalized smoothing weights, one row per evaluation point.

    ``eval_points`` defaults to the grid instants. Raises :class:`AllWeightsZero`
    at the first evaluation point where no instant gets positive kernel mass.
    """
    if eval_points is None:
        eval_points = grid.instants
    t = np.atleast_1d(np.asarray(eval_points, dtype=float))
    k = kernel_matrix(grid, spec, t)
    total = k.sum(axis=1)
    bad = np.flatnonzero(~(total > 0))
    if bad.size:
        raise AllWeightsZero(float(t[bad[0]]))
    return k / total[:, None]


def smoothing_weights(grid: TimeGrid, spec: KernelSpec, t: float) -> SmoothingWeights:
    if not (0.0 <= t <= grid.T):
        raise InvalidConfig(f"evaluation point {t!r} outside [0, {grid.T}]")
    return SmoothingWeights(float(t), weight_matrix(grid, spec, [t])[0])


def smooth(values, grid: TimeGrid, spec: KernelSpec, eval_points=None) -> np.ndarray:
    """Smooth a length-``d`` vector (or rows of an ``(n, d)`` matrix) onto ``eval_points``."""
    w = weight_matrix(grid, spec, eval_points)
    return np.asarray(values, dtype=float) @ w.T


def approximation_error_bound(
    grid: TimeGrid, spec: KernelSpec, beta: float, holder_constant: float, safety: float = 1.0
) -> float:
    """Sup-norm bound ``C (2h)^beta`` on the smoothing error of a beta-Holder mean.

    Only established for bounded-support kernels with ``2h > T/(d-1)``.
    ``safety`` multiplies the bound to absorb the finite-``d`` Riemann-sum factor.
    """
    if not spec.bounded:
        raise AssumptionA3Violated("the bound requires a kernel with bounded support")
    if not spec.satisfies_a3(grid):
        raise AssumptionA3Violated(
            f"2h = {2 * spec.bandwidth} must exceed the grid spacing {grid.spacing}"
        )
    if not (0.0 < beta <= 1.0):
        raise InvalidConfig(f"beta must lie in (0, 1], got {beta!r}")
    if holder_constant < 0:
        raise InvalidConfig("Holder constant must be non-negative")
    return safety * holder_constant * (2.0 * spec.bandwidth) ** beta
