"""Finite populations of discretized curves and a synthetic population generator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig
from .grid_kernel import KernelSpec, TimeGrid, weight_matrix


@dataclass
class CurvePopulation:
    """``N`` complete trajectories observed on a shared grid.

    ``strata`` holds arbitrary integer labels; ``stratum_codes`` maps them to
    ``0..Λ-1`` in sorted label order.
    """

    grid: TimeGrid
    values: np.ndarray
    strata: np.ndarray = None
    ids: np.ndarray = None
    stratum_labels: np.ndarray = field(init=False, repr=False)
    stratum_codes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.d:
            raise InvalidConfig(
                f"values must be N x {self.grid.d}, got shape {self.values.shape}"
            )
        if self.values.shape[0] < 1:
            raise InvalidConfig("population needs at least one unit")
        if not np.all(np.isfinite(self.values)):
            raise InvalidConfig("population curves must be complete and finite")
        n_units = self.values.shape[0]
        if self.strata is None:
            self.strata = np.ones(n_units, dtype=int)
        self.strata = np.asarray(self.strata, dtype=int)
        if self.strata.shape != (n_units,):
            raise InvalidConfig("one stratum label per unit is required")
        if self.ids is None:
            self.ids = np.arange(1, n_units + 1)
        self.ids = np.asarray(self.ids)
        self.stratum_labels, self.stratum_codes = np.unique(self.strata, return_inverse=True)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def n_strata(self) -> int:
        return self.stratum_labels.size

    @property
    def stratum_sizes(self) -> np.ndarray:
        return np.bincount(self.stratum_codes, minlength=self.n_strata)

    def members(self, code: int) -> np.ndarray:
        """Population indices of stratum ``code`` (0-based code, not label)."""
        return np.flatnonzero(self.stratum_codes == code)


@dataclass
class PopulationMean:
    grid: TimeGrid
    values: np.ndarray
    stratum_labels: np.ndarray
    stratum_sizes: np.ndarray
    stratum_means: np.ndarray

    def recombine(self) -> np.ndarray:
        """Overall mean rebuilt from stratum means with weights ``N_λ/N``."""
        share = self.stratum_sizes / self.stratum_sizes.sum()
        return share @ self.stratum_means


def population_mean(pop: CurvePopulation) -> PopulationMean:
    sizes = pop.stratum_sizes
    sums = np.zeros((pop.n_strata, pop.grid.d))
    np.add.at(sums, pop.stratum_codes, pop.values)
    return PopulationMean(
        grid=pop.grid,
        values=pop.values.mean(axis=0),
        stratum_labels=pop.stratum_labels.copy(),
        stratum_sizes=sizes,
        stratum_means=sums / sizes[:, None],
    )


def smooth_population_mean(pop: CurvePopulation, spec: KernelSpec, eval_points=None) -> np.ndarray:
    """Kernel-smoothed population mean ``μ̃(t)`` at each evaluation point."""
    w = weight_matrix(pop.grid, spec, eval_points)
    return w @ pop.values.mean(axis=0)


@dataclass
class GeneratorConfig:
    """Shape settings for :func:`generate_population`.

    Curves look like load curves: a positive level plus ``cycles`` periods of a
    low-order sinusoid mixture over the horizon.
    """

    level: float = 10.0
    stratum_separation: float = 1.0
    cycles: float = 1.0
    harmonics: int = 3
    base_amplitude: float = 2.0
    amplitude_sd: float = 0.25
    phase_sd: float = 0.2
    shift_sd: float = 0.5
    noise_sd: float = 0.0
    cusp_location: float = 0.5
    cusp_scale: float = 1.0
    stratum_shares: tuple = None

    def validate(self):
        if self.harmonics < 1:
            raise InvalidConfig("harmonics must be >= 1")
        if self.cycles <= 0:
            raise InvalidConfig("cycles must be positive")
        for name in ("stratum_separation", "amplitude_sd", "phase_sd", "shift_sd", "noise_sd"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be non-negative")
        if not (0.0 <= self.cusp_location <= 1.0):
            raise InvalidConfig("cusp_location is a fraction of the horizon in [0, 1]")


def _allocate(N, n_strata, shares):
    if shares is None:
        shares = np.full(n_strata, 1.0 / n_strata)
    shares = np.asarray(shares, dtype=float)
    if shares.shape != (n_strata,) or np.any(shares <= 0):
        raise InvalidConfig("stratum_shares needs one positive share per stratum")
    shares = shares / shares.sum()
    sizes = np.maximum(1, np.floor(shares * N).astype(int))
    # hand the remainder to the largest fractional parts
    while sizes.sum() < N:
        sizes[np.argmax(shares * N - sizes)] += 1
    while sizes.sum() > N:
        sizes[np.argmax(sizes)] -= 1
    return sizes


def generate_population(
    seed: int,
    N: int,
    grid: TimeGrid,
    n_strata: int = 1,
    beta: float = 1.0,
    config: GeneratorConfig = None,
) -> CurvePopulation:
    """Draw a synthetic stratified population, deterministic in ``seed``.

    Stratum ``λ`` gets a level offset of ``2 λ · separation`` and its own
    harmonic coefficients; units perturb amplitude, phase and level. With
    ``beta < 1`` every curve also carries ``cusp_scale · |t - a|^beta``.
    """
    config = config or GeneratorConfig()
    config.validate()
    if not (N >= n_strata >= 1):
        raise InvalidConfig(f"need N >= number of strata >= 1, got N={N}, strata={n_strata}")
    if not (0.0 < beta <= 1.0):
        raise InvalidConfig("roughness beta must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    sizes = _allocate(N, n_strata, config.stratum_shares)
    strata = np.repeat(np.arange(1, n_strata + 1), sizes)

    u = grid.instants / grid.T
    freqs = np.arange(1, config.harmonics + 1)
    coef = rng.normal(size=(n_strata, config.harmonics)) / freqs
    base_phase = rng.uniform(0.0, 2.0 * np.pi, size=(n_strata, config.harmonics))

    amp = 1.0 + config.amplitude_sd * rng.standard_normal(N)
    phase = config.phase_sd * rng.standard_normal(N)
    shift = config.shift_sd * rng.standard_normal(N)
    code = strata - 1

    angle = (
        2.0 * np.pi * config.cycles * freqs[None, :, None] * u[None, None, :]
        + base_phase[code][:, :, None]
        + phase[:, None, None]
    )
    shape = np.einsum("kh,khj->kj", coef[code], np.sin(angle))
    values = (
        config.level
        + 2.0 * config.stratum_separation * code[:, None]
        + shift[:, None]
        + config.base_amplitude * amp[:, None] * shape
    )
    if config.noise_sd > 0:
        values = values + config.noise_sd * rng.standard_normal(values.shape)
    if beta < 1.0:
        values = values + config.cusp_scale * np.abs(u - config.cusp_location)[None, :] ** beta
    return CurvePopulation(grid=grid, values=values, strata=strata)
