"""Response processes r_k(t_j): probabilities, mask simulation and estimation.

Every model here is a group model: units carry a group code and each group
has a ``d``-vector of marginal response probabilities and a ``d x d`` matrix
of joint probabilities (diagonal equal to the marginals).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, ZeroResponders, ZeroTheta


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class ObservationMask:
    """Response indicators for sampled units; row ``i`` belongs to ``indices[i]``."""

    indices: np.ndarray
    entries: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)
        entries = np.asarray(self.entries)
        if entries.ndim != 2 or entries.shape[0] != self.indices.size:
            raise InvalidConfig("mask needs one row per sampled unit")
        if not np.all((entries == 0) | (entries == 1)):
            raise InvalidConfig("mask entries must be 0 or 1")
        self.entries = entries.astype(np.int8)

    def row(self, unit: int) -> np.ndarray:
        pos = np.flatnonzero(self.indices == unit)
        if pos.size == 0:
            raise KeyError(unit)
        return self.entries[pos[0]]


class ThetaSource:
    """Group-level marginal and joint response probabilities.

    ``groups`` maps population index to group code. ``known`` is False when
    the probabilities were estimated from an observed mask.
    """

    kind = "generic"

    def __init__(self, groups, marginal, joint, known=True):
        marginal = np.atleast_2d(np.asarray(marginal, dtype=float))
        joint = np.asarray(joint, dtype=float)
        if joint.shape != marginal.shape + (marginal.shape[1],):
            raise InvalidConfig("joint probabilities must be G x d x d")
        self.groups = np.asarray(groups, dtype=int)
        if self.groups.size and (self.groups.min() < 0 or self.groups.max() >= marginal.shape[0]):
            raise InvalidConfig("group codes out of range for the probability tables")
        self.marginal = marginal
        self.joint = joint
        self.known = known

    @property
    def d(self) -> int:
        return self.marginal.shape[1]

    @property
    def n_groups(self) -> int:
        return self.marginal.shape[0]

    def theta(self, k: int, j: int) -> float:
        return float(self.marginal[self.groups[k], j])

    def theta_joint(self, k: int, j: int, jp: int) -> float:
        return float(self.joint[self.groups[k], j, jp])

    def unit_marginal(self, indices) -> np.ndarray:
        """``θ_k(t_j)`` for the given population indices, shape ``(n, d)``."""
        return self.marginal[self.groups[np.asarray(indices, dtype=int)]]

    def covariance_factor(self) -> np.ndarray:
        """``(θ(t_j,t_j') - θ(t_j)θ(t_j')) / (θ(t_j)θ(t_j'))`` per group, ``G x d x d``."""
        outer = self.marginal[:, :, None] * self.marginal[:, None, :]
        if np.any(outer <= 0):
            raise ZeroTheta("covariance factor undefined where a response probability is 0")
        return (self.joint - outer) / outer


class ResponseModel(ThetaSource):
    """A response law that can also simulate masks."""

    def simulate_rows(self, groups, d, rng) -> np.ndarray:
        raise NotImplementedError

    def row_law(self, group: int):
        """All ``2^d`` response patterns of one unit and their probabilities."""
        patterns = np.array(list(itertools.product((0, 1), repeat=self.d)), dtype=np.int8)
        return patterns, self.row_probability(group, patterns)

    def row_probability(self, group: int, patterns) -> np.ndarray:
        raise NotImplementedError


class FullResponse(ResponseModel):
    kind = "full"

    def __init__(self, N: int, d: int):
        super().__init__(np.zeros(N, dtype=int), np.ones((1, d)), np.ones((1, d, d)))

    def simulate_rows(self, groups, d, rng):
        return np.ones((np.size(groups), d), dtype=np.int8)

    def row_probability(self, group, patterns):
        patterns = np.asarray(patterns)
        return np.all(patterns == 1, axis=-1).astype(float)


class HomogeneousGroups(ResponseModel):
    """Units in group ``g`` respond at ``t_j`` independently with probability ``θ_g(t_j)``.

    Responses of one unit at different instants are independent too, so the
    joint probability is the product of the marginals off the diagonal.
    """

    kind = "bernoulli"

    def __init__(self, theta, groups):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if np.any(~(theta > 0)) or np.any(theta > 1):
            raise InvalidConfig("response probabilities must lie in (0, 1]")
        joint = theta[:, :, None] * theta[:, None, :]
        idx = np.arange(theta.shape[1])
        joint[:, idx, idx] = theta
        super().__init__(groups, theta, joint)

    def simulate_rows(self, groups, d, rng):
        p = self.marginal[np.asarray(groups, dtype=int)]
        return (rng.random(p.shape) < p).astype(np.int8)

    def row_probability(self, group, patterns):
        patterns = np.asarray(patterns)
        p = self.marginal[group]
        return np.prod(np.where(patterns == 1, p, 1.0 - p), axis=-1)


class MarkovGap(ResponseModel):
    """Two-state chain over the grid, started at its stationary law.

    At each step the state is kept with probability ``ρ`` and otherwise
    redrawn from Bernoulli(θ), so ``P(r_{j+m}=1 | r_j=1) = θ + (1-θ)ρ^m``.
    Missing stretches have geometric length with mean ``1/(1-p00)`` where
    ``p00 = ρ + (1-ρ)(1-θ)``.
    """

    kind = "markov"

    def __init__(self, theta, rho, groups, d: int):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        rho = np.broadcast_to(np.asarray(rho, dtype=float), theta.shape).copy()
        if np.any(~(theta > 0)) or np.any(theta > 1):
            raise InvalidConfig("stationary response probabilities must lie in (0, 1]")
        if np.any(rho < 0) or np.any(rho >= 1):
            raise InvalidConfig("persistence rho must lie in [0, 1)")
        self.theta_stationary = theta
        self.rho = rho
        lag = np.abs(np.subtract.outer(np.arange(d), np.arange(d)))
        stay = theta[:, None, None] + (1 - theta[:, None, None]) * rho[:, None, None] ** lag
        joint = theta[:, None, None] * stay
        marginal = np.repeat(theta[:, None], d, axis=1)
        super().__init__(groups, marginal, joint)

    def transition(self, group: int) -> np.ndarray:
        """One-step transition matrix, states ordered (0, 1)."""
        th, rho = self.theta_stationary[group], self.rho[group]
        return np.array(
            [[rho + (1 - rho) * (1 - th), (1 - rho) * th], [(1 - rho) * (1 - th), rho + (1 - rho) * th]]
        )

    def p00(self, group: int) -> float:
        return float(self.transition(group)[0, 0])

    def simulate_rows(self, groups, d, rng):
        groups = np.asarray(groups, dtype=int)
        th = self.theta_stationary[groups]
        rho = self.rho[groups]
        n = groups.size
        out = np.empty((n, d), dtype=np.int8)
        state = rng.random(n) < th
        out[:, 0] = state
        for j in range(1, d):
            keep = rng.random(n) < rho
            fresh = rng.random(n) < th
            state = np.where(keep, state, fresh)
            out[:, j] = state
        return out

    def row_probability(self, group, patterns):
        patterns = np.asarray(patterns, dtype=int)
        P = self.transition(group)
        th = self.theta_stationary[group]
        prob = np.where(patterns[..., 0] == 1, th, 1.0 - th)
        for j in range(1, patterns.shape[-1]):
            prob = prob * P[patterns[..., j - 1], patterns[..., j]]
        return prob


def theta(model: ThetaSource, k: int, j: int) -> float:
    return model.theta(k, j)


def theta_joint(model: ThetaSource, k: int, j: int, jp: int) -> float:
    return model.theta_joint(k, j, jp)


def simulate_mask(model: ResponseModel, sample, grid, seed) -> ObservationMask:
    """Draw response rows for the sampled units, independently across units."""
    rng = _rng(seed)
    indices = np.asarray(sample.indices, dtype=int)
    rows = model.simulate_rows(model.groups[indices], grid.d, rng)
    return ObservationMask(indices, rows)


def _group_codes(groups, indices):
    groups = np.asarray(groups)
    if groups.shape[0] != np.size(indices):
        groups = groups[np.asarray(indices)]
    labels, codes = np.unique(groups, return_inverse=True)
    return labels, codes


@dataclass
class GroupThetaEstimate:
    labels: np.ndarray
    marginal: np.ndarray
    joint: np.ndarray
    counts: np.ndarray

    def as_source(self, population_groups) -> ThetaSource:
        """Wrap as a :class:`ThetaSource` for units labelled by ``population_groups``."""
        code_of = {lab: i for i, lab in enumerate(self.labels.tolist())}
        codes = np.array([code_of[g] for g in np.asarray(population_groups).tolist()], dtype=int)
        return ThetaSource(codes, self.marginal, self.joint, known=False)


def estimate_theta_group(mask: ObservationMask, groups, allow_zero: bool = False) -> GroupThetaEstimate:
    """Response rates per group and instant, plus joint response rates.

    ``groups`` is either one label per sampled row or a population-indexed
    label vector. Raises :class:`ZeroResponders` if a rate is zero unless
    ``allow_zero`` is set.
    """
    labels, codes = _group_codes(groups, mask.indices)
    r = mask.entries.astype(float)
    G, d = labels.size, r.shape[1]
    counts = np.bincount(codes, minlength=G)
    marginal = np.zeros((G, d))
    joint = np.zeros((G, d, d))
    for g in range(G):
        rg = r[codes == g]
        marginal[g] = rg.sum(axis=0) / counts[g]
        joint[g] = rg.T @ rg / counts[g]
    if not allow_zero:
        zero = np.argwhere(marginal == 0)
        if zero.size:
            g, j = zero[0]
            raise ZeroResponders(labels[g].item(), int(j))
    return GroupThetaEstimate(labels, marginal, joint, counts)


@dataclass
class StationaryThetaEstimate:
    labels: np.ndarray
    rate: np.ndarray
    lag_rate: np.ndarray
    lags: np.ndarray

    def as_source(self, population_groups) -> ThetaSource:
        d = self.lag_rate.shape[1]
        lag = np.abs(np.subtract.outer(np.arange(d), np.arange(d)))
        marginal = np.repeat(self.rate[:, None], d, axis=1)
        joint = self.lag_rate[:, lag]
        code_of = {lab: i for i, lab in enumerate(self.labels.tolist())}
        codes = np.array([code_of[g] for g in np.asarray(population_groups).tolist()], dtype=int)
        return ThetaSource(codes, marginal, joint, known=False)


def estimate_theta_stationary(mask: ObservationMask, groups, grid=None) -> StationaryThetaEstimate:
    """Pooled response rate and lag-``m`` joint rate per group.

    Both are averages: the rate over units and instants, the lag rate over
    units and the ``d - m`` instant pairs at lag ``m``, so each is a
    probability in ``[0, 1]``.
    """
    labels, codes = _group_codes(groups, mask.indices)
    r = mask.entries.astype(float)
    G, d = labels.size, r.shape[1]
    rate = np.zeros(G)
    lag_rate = np.zeros((G, d))
    for g in range(G):
        rg = r[codes == g]
        rate[g] = rg.mean()
        for m in range(d):
            lag_rate[g, m] = (rg[:, : d - m] * rg[:, m:]).mean()
    zero = np.flatnonzero(rate == 0)
    if zero.size:
        raise ZeroResponders(labels[zero[0]].item(), -1)
    lags = np.arange(d) * (grid.spacing if grid is not None else 1.0)
    return StationaryThetaEstimate(labels, rate, lag_rate, lags)
