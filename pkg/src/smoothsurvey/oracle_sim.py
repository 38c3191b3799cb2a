"""Exact enumeration oracle and seeded Monte Carlo harness."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .design import PoissonDesign, SRSWOR, StratifiedSRSWOR
from .errors import InvalidConfig, TooLargeToEnumerate
from .estimators import TAGS, _hajek1_core, _hajek2_core, _ht_core, estimate
from .grid_kernel import KernelSpec, TimeGrid, approximation_error_bound, weight_matrix
from .population import CurvePopulation, smooth_population_mean
from .response import HomogeneousGroups, MarkovGap, ResponseModel, simulate_mask
from .variance import (
    variance_estimate_plugin,
    variance_hajek_approx,
    variance_ht_exact,
    variance_stratified,
)

DEFAULT_CONFIG_CAP = 1_000_000


@dataclass
class EnumerationReport:
    description: str
    tag: str
    eval_points: np.ndarray
    expectation: np.ndarray
    variance: np.ndarray
    target_mean: np.ndarray
    formula_variance: np.ndarray
    total_probability: float
    n_configurations: int
    strategy: str

    @property
    def max_mean_error(self) -> float:
        return float(np.max(np.abs(self.expectation - self.target_mean)))

    @property
    def max_variance_error(self) -> float:
        return float(np.max(np.abs(self.variance - self.formula_variance)))

    def to_dict(self):
        out = {k: v.tolist() if isinstance(v, np.ndarray) else v for k, v in asdict(self).items()}
        out["max_mean_error"] = self.max_mean_error
        out["max_variance_error"] = self.max_variance_error
        return out


def _latent_row_probability(model: ResponseModel, group: int, pattern) -> float:
    """Row probability by brute force over the model's latent draws.

    Independent of the closed-form row laws: Bernoulli rows multiply
    per-instant marginals; Markov rows enumerate every keep/redraw decision.
    """
    pattern = [int(x) for x in pattern]
    d = len(pattern)
    if isinstance(model, MarkovGap):
        th, rho = model.theta_stationary[group], model.rho[group]
        total = 0.0
        for latent in itertools.product((0, 1), repeat=1 + 2 * (d - 1)):
            p = th if latent[0] else 1 - th
            state = latent[0]
            ok = state == pattern[0]
            for j in range(1, d):
                keep, fresh = latent[2 * j - 1], latent[2 * j]
                p *= (rho if keep else 1 - rho) * (th if fresh else 1 - th)
                state = state if keep else fresh
                ok = ok and state == pattern[j]
            if ok:
                total += p
        return total
    p = model.marginal[group]
    return float(np.prod([p[j] if pattern[j] else 1 - p[j] for j in range(d)]))


def _factored_masks(model, groups, d):
    """Cartesian product of per-unit row laws, skipping zero-probability rows."""
    masks = np.zeros((1, 0, d), dtype=np.int8)
    probs = np.ones(1)
    for g in groups:
        patterns, p = model.row_law(int(g))
        keep = p > 0
        patterns, p = patterns[keep], p[keep]
        masks = np.concatenate(
            [np.repeat(masks, len(p), axis=0), np.tile(patterns[:, None, :], (len(probs), 1, 1))],
            axis=1,
        )
        probs = np.repeat(probs, len(p)) * np.tile(p, len(probs))
    return masks, probs


def _joint_masks(model, groups, d):
    """Every bit pattern of the whole sample's ``n x d`` mask, decoded from integers."""
    n = len(groups)
    if n == 0:
        return np.zeros((1, 0, d), dtype=np.int8), np.ones(1)
    bits = n * d
    codes = np.arange(2**bits, dtype=np.int64)
    masks = ((codes[:, None] >> np.arange(bits)[::-1]) & 1).astype(np.int8).reshape(-1, n, d)
    cache = {}
    probs = np.ones(len(codes))
    for i, g in enumerate(groups):
        for b, pattern in enumerate(itertools.product((0, 1), repeat=d)):
            key = (int(g), pattern)
            if key not in cache:
                cache[key] = _latent_row_probability(model, int(g), pattern)
            hit = np.all(masks[:, i, :] == np.array(pattern), axis=1)
            probs[hit] *= cache[key]
    return masks, probs


def _batched(tag, y, masks, theta, pi, N, W, t):
    if tag == "ht":
        return _ht_core(y, masks, theta, pi, N, W)
    if tag == "hajek1":
        return _hajek1_core(y, masks, theta, pi, W, t)
    return _hajek2_core(y, masks, theta, pi, W, False, t)


def exact_moments(
    pop: CurvePopulation,
    design,
    response: ResponseModel,
    spec: KernelSpec,
    tag: str = "ht",
    eval_points=None,
    cap: int = DEFAULT_CONFIG_CAP,
    strategy: str = "factored",
) -> EnumerationReport:
    """Exact mean and variance of an estimator over every (sample, mask) pair.

    ``strategy="factored"`` multiplies per-unit row laws; ``"joint"``
    enumerates whole-sample bit patterns and prices them by brute force over
    the response model's latent draws.
    """
    if tag not in TAGS:
        raise ValueError(f"unknown estimator {tag!r}")
    if strategy not in ("factored", "joint"):
        raise ValueError(f"unknown strategy {strategy!r}")
    grid = pop.grid
    d = grid.d
    t = grid.instants if eval_points is None else np.atleast_1d(np.asarray(eval_points, float))
    W = weight_matrix(grid, spec, t)
    samples = design.enumerate(cap)
    n_configs = sum(2 ** (s.n * d) for s, _ in samples)
    if n_configs > cap:
        raise TooLargeToEnumerate(f"{n_configs} (sample, mask) pairs exceed the cap {cap}")

    values, weights = [], []
    for sample, p_s in samples:
        idx = sample.indices
        groups = response.groups[idx]
        builder = _factored_masks if strategy == "factored" else _joint_masks
        masks, p_m = builder(response, groups, d)
        theta = response.unit_marginal(idx)
        y = pop.values[idx]
        if idx.size == 0:
            est = np.zeros((len(p_m), t.size))
        else:
            est = _batched(tag, y, masks.astype(float), theta, sample.pi, design.N, W, t)
        values.append(est)
        weights.append(p_s * p_m)
    values = np.concatenate(values)
    weights = np.concatenate(weights)
    total = float(weights.sum())
    mean = weights @ values
    var = weights @ (values - mean) ** 2

    target = smooth_population_mean(pop, spec, t)
    if tag == "ht":
        formula = variance_ht_exact(pop, design, response, spec, t).values
    else:
        formula = variance_hajek_approx("U1" if tag == "hajek1" else "U2", pop, design, response, spec, t).values
    desc = f"N={pop.N} d={d} design={design.kind} response={response.kind}"
    return EnumerationReport(desc, tag, t, mean, var, target, formula, total, int(values.shape[0]), strategy)


def tiny_instances(seed: int = 0, count: int = 12):
    """Seeded tiny instances (N <= 5, n <= 3, d <= 3) cycling through designs and response laws."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        poisson = i % 2 == 1
        # Poisson samples have random size, so N <= 3 keeps n <= 3 on every draw
        N = int(rng.integers(2, 4)) if poisson else int(rng.integers(3, 6))
        d = int(rng.integers(2, 4))
        grid = TimeGrid(1.0, d)
        values = rng.uniform(0.5, 3.0, size=(N, d))
        pop = CurvePopulation(grid, values)
        if poisson:
            design = PoissonDesign(rng.uniform(0.2, 0.9, size=N))
        else:
            design = SRSWOR(N, int(rng.integers(1, min(3, N - 1) + 1)))
        groups = rng.integers(0, 2, size=N)
        if (i // 2) % 2 == 0:
            response = HomogeneousGroups(rng.uniform(0.4, 0.95, size=(2, d)), groups)
        else:
            response = MarkovGap(rng.uniform(0.5, 0.95, size=2), rng.uniform(0.0, 0.8, size=2), groups, d)
        spec = KernelSpec("epanechnikov", float(rng.uniform(0.6, 1.2)) * grid.spacing)
        out.append((pop, design, response, spec))
    return out


def holder_check(
    beta: float,
    d: int,
    h: float,
    family: str = "epanechnikov",
    C: float = 1.0,
    cusp: float = 0.5,
    n_eval: int = 10_001,
    T: float = 1.0,
    safety: float = 1.5,
):
    """Sup error of ``μ̃`` against ``μ(t) = C |t - cusp|^beta`` on a dense grid, with the bound."""
    grid = TimeGrid(T, d)
    spec = KernelSpec(family, h)
    t = np.linspace(0.0, T, n_eval)
    mu_grid = C * np.abs(grid.instants - cusp) ** beta
    smoothed = weight_matrix(grid, spec, t) @ mu_grid
    sup_error = float(np.max(np.abs(smoothed - C * np.abs(t - cusp) ** beta)))
    bound = approximation_error_bound(grid, spec, beta, C, safety=safety)
    return {"beta": beta, "d": d, "h": h, "sup_error": sup_error, "bound": bound, "ok": sup_error <= bound}


def holder_slope(beta, d, bandwidths, **kwargs):
    """Least-squares slope of log sup-error against log h."""
    errs = [holder_check(beta, d, h, **kwargs)["sup_error"] for h in bandwidths]
    return float(np.polyfit(np.log(bandwidths), np.log(errs), 1)[0]), errs


@dataclass
class Scenario:
    pop: CurvePopulation
    design: object
    response: ResponseModel
    spec: KernelSpec
    eval_points: np.ndarray
    estimators: tuple = TAGS
    theta: str = "known"
    plugin: tuple = ()
    description: str = ""


@dataclass
class MonteCarloReport:
    description: str
    seed: int
    replicates: int
    eval_points: np.ndarray
    target: np.ndarray
    mean: dict
    variance: dict
    se_mean: dict
    se_variance: dict
    formula_variance: dict
    plugin_mean: dict
    estimates: dict = field(repr=False, default_factory=dict)

    def relative_error(self, tag) -> np.ndarray:
        return self.formula_variance[tag] / self.variance[tag] - 1.0

    def plugin_relative_error(self, tag) -> np.ndarray:
        return self.plugin_mean[tag] / self.variance[tag] - 1.0

    def to_dict(self, include_replicates=False):
        def conv(x):
            if isinstance(x, dict):
                return {k: conv(v) for k, v in x.items()}
            if isinstance(x, np.ndarray):
                return x.tolist()
            return x

        out = {
            "description": self.description,
            "seed": self.seed,
            "replicates": self.replicates,
            "eval_points": conv(self.eval_points),
            "target": conv(self.target),
            "mean": conv(self.mean),
            "variance": conv(self.variance),
            "se_mean": conv(self.se_mean),
            "se_variance": conv(self.se_variance),
            "formula_variance": conv(self.formula_variance),
            "plugin_mean": conv(self.plugin_mean),
            "relative_error": {k: conv(self.relative_error(k)) for k in self.formula_variance if k in self.variance},
        }
        if include_replicates:
            out["estimates"] = conv(self.estimates)
        return out


def replicate_rng(seed: int, i: int) -> np.random.Generator:
    """Generator for replicate ``i``; depends only on ``(seed, i)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(i)]))


def jackknife_variance_se(x, batches: int = 20, stat=None) -> np.ndarray:
    """Delete-a-batch jackknife SE of ``stat`` (default: column variance) over replicate rows."""
    x = np.asarray(x, dtype=float)
    stat = stat or (lambda a: a.var(axis=0, ddof=1))
    B = min(batches, x.shape[0])
    if B < 2:
        return np.full(x.shape[1:], np.nan)
    parts = np.array_split(np.arange(x.shape[0]), B)
    loo = np.array([stat(np.delete(x, p, axis=0)) for p in parts])
    return np.sqrt((B - 1) / B * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))


def formula_variances(scenario: Scenario) -> dict:
    pop, design, resp, spec, t = (
        scenario.pop, scenario.design, scenario.response, scenario.spec, scenario.eval_points
    )
    stratified = isinstance(design, StratifiedSRSWOR) and design.n_strata > 1
    out = {}
    for tag in scenario.estimators:
        if stratified:
            out[tag] = variance_stratified(tag, pop, design, resp, spec, t).values
        elif tag == "ht":
            out[tag] = variance_ht_exact(pop, design, resp, spec, t).values
        else:
            out[tag] = variance_hajek_approx("U1" if tag == "hajek1" else "U2", pop, design, resp, spec, t).values
    return out


def monte_carlo(scenario: Scenario, R: int, seed: int) -> MonteCarloReport:
    """Draw ``R`` independent (sample, mask) replicates and summarize the estimators.

    Replicate ``i`` uses :func:`replicate_rng` so results do not depend on
    execution order.
    """
    if R < 2:
        raise InvalidConfig("need at least 2 replicates")
    pop, design, resp, spec = scenario.pop, scenario.design, scenario.response, scenario.spec
    t = np.asarray(scenario.eval_points, dtype=float)
    grid = pop.grid
    est = {tag: np.empty((R, t.size)) for tag in scenario.estimators}
    plug = {tag: np.empty((R, t.size)) for tag in scenario.plugin}
    for i in range(R):
        rng = replicate_rng(seed, i)
        sample = design.draw(rng)
        mask = simulate_mask(resp, sample, grid, rng)
        y = np.where(mask.entries == 1, pop.values[sample.indices], np.nan)
        theta = "estimate" if scenario.theta == "estimate" else resp
        for tag in scenario.estimators:
            est[tag][i] = estimate(tag, y, mask, theta, sample, grid, spec, t).values
        for tag in scenario.plugin:
            plug[tag][i] = variance_estimate_plugin(tag, y, mask, resp, sample, grid, spec, t).values
    mean = {k: v.mean(axis=0) for k, v in est.items()}
    var = {k: v.var(axis=0, ddof=1) for k, v in est.items()}
    se_mean = {k: np.sqrt(var[k] / R) for k in est}
    se_var = {k: jackknife_variance_se(v) for k, v in est.items()}
    return MonteCarloReport(
        description=scenario.description,
        seed=seed,
        replicates=R,
        eval_points=t,
        target=smooth_population_mean(pop, spec, t),
        mean=mean,
        variance=var,
        se_mean=se_mean,
        se_variance=se_var,
        formula_variance=formula_variances(scenario),
        plugin_mean={k: v.mean(axis=0) for k, v in plug.items()},
        estimates=est,
    )


def interior_points(grid: TimeGrid, count: int = 5) -> np.ndarray:
    """``count`` evaluation points evenly spread strictly inside ``(0, T)``."""
    return grid.T * np.arange(1, count + 1) / (count + 1)


def markov_scenario(
    seed: int = 2024,
    N: int = 2000,
    n: int = 200,
    d: int = 48,
    theta: float = 0.85,
    rho: float = 0.6,
    bandwidth_steps: float = 2.5,
    plugin=("hajek1", "hajek2"),
) -> Scenario:
    """SRSWOR with Markov-gap non-response on a generated load-curve population."""
    from .population import generate_population

    grid = TimeGrid(1.0, d)
    pop = generate_population(seed, N, grid, 1)
    design = SRSWOR(N, n)
    resp = MarkovGap([theta], [rho], np.zeros(N, dtype=int), d)
    spec = KernelSpec("epanechnikov", bandwidth_steps * grid.spacing)
    desc = f"SRSWOR N={N} n={n} d={d} markov theta={theta} rho={rho} h={spec.bandwidth:.6g}"
    return Scenario(pop, design, resp, spec, interior_points(grid), TAGS, "known", tuple(plugin), desc)


def stratified_markov_scenario(
    seed: int,
    N: int = 600,
    strata: int = 3,
    n_per_stratum: int = 20,
    d: int = 48,
    bandwidth_steps: float = 0.75,
) -> Scenario:
    """Stratified SRSWOR, one Markov-gap response group per stratum, small bandwidth."""
    from .population import generate_population

    rng = np.random.default_rng(seed)
    grid = TimeGrid(1.0, d)
    pop = generate_population(seed, N, grid, strata)
    design = StratifiedSRSWOR(pop.stratum_codes, [n_per_stratum] * strata)
    resp = MarkovGap(
        rng.uniform(0.6, 0.95, size=strata), rng.uniform(0.2, 0.8, size=strata), pop.stratum_codes, d
    )
    spec = KernelSpec("epanechnikov", bandwidth_steps * grid.spacing)
    desc = f"stratified N={N} strata={strata} n_l={n_per_stratum} d={d} h={spec.bandwidth:.6g}"
    return Scenario(pop, design, resp, spec, interior_points(grid), TAGS, "known", (), desc)
