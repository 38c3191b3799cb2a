"""Sampling designs: inclusion probabilities, Δ_kl, drawing and exhaustive enumeration.

Second-order probabilities are exposed through closed-form rules. The two
quadratic forms used by the variance module are computed from per-stratum
sufficient statistics, so they cost O(N) rather than O(N^2).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, InvalidDesign, TooLargeToEnumerate, ZeroJointInclusion

DEFAULT_ENUMERATION_CAP = 100_000


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class Sample:
    indices: np.ndarray
    design: "SamplingDesign"

    @property
    def n(self) -> int:
        return self.indices.size

    @property
    def pi(self) -> np.ndarray:
        return self.design.first_order[self.indices]


class SamplingDesign:
    kind = "generic"
    fixed_size = False

    def __init__(self, first_order):
        pi = np.asarray(first_order, dtype=float)
        if pi.ndim != 1 or pi.size == 0:
            raise InvalidDesign("first-order probabilities must be a non-empty vector")
        if np.any(~(pi > 0)) or np.any(pi > 1):
            raise InvalidDesign("inclusion probabilities must lie in (0, 1]")
        pi.setflags(write=False)
        self.first_order = pi

    @property
    def N(self) -> int:
        return self.first_order.size

    def _check(self, *idx):
        for k in idx:
            if not (0 <= k < self.N):
                raise IndexOutOfRange(f"unit index {k} outside 0..{self.N - 1}")

    def pi_joint(self, k: int, l: int) -> float:
        raise NotImplementedError

    def delta(self, k: int, l: int) -> float:
        self._check(k, l)
        pk = self.first_order[k]
        if k == l:
            return pk * (1.0 - pk)
        return self.pi_joint(k, l) - pk * self.first_order[l]

    def second_order_matrix(self) -> np.ndarray:
        """Dense ``π_kl`` matrix; meant for small ``N`` only."""
        return np.array([[self.pi_joint(k, l) for l in range(self.N)] for k in range(self.N)])

    def quadratic_form(self, a) -> np.ndarray:
        """``Σ_{k,l∈U} Δ_kl/(π_k π_l) a_k a_l`` for each column of ``a`` (shape ``(N,)`` or ``(N, m)``)."""
        raise NotImplementedError

    def sample_quadratic_form(self, indices, a) -> np.ndarray:
        """``Σ_{k,l∈s} Δ_kl/(π_kl π_k π_l) a_k a_l``; rows of ``a`` align with ``indices``."""
        raise NotImplementedError

    def draw(self, seed) -> Sample:
        raise NotImplementedError

    def enumerate(self, cap: int = DEFAULT_ENUMERATION_CAP):
        raise NotImplementedError

    def support_size(self) -> int:
        raise NotImplementedError


class StratifiedSRSWOR(SamplingDesign):
    """Independent simple random sampling without replacement inside each stratum.

    ``strata`` are 0-based codes per unit; ``sizes`` gives ``n_λ`` per code.
    """

    kind = "stratified"
    fixed_size = True

    def __init__(self, strata, sizes):
        strata = np.asarray(strata, dtype=int)
        if strata.ndim != 1 or strata.size == 0 or strata.min() < 0:
            raise InvalidDesign("strata must be a vector of non-negative codes")
        n_codes = int(strata.max()) + 1
        sizes = np.asarray(sizes, dtype=int).reshape(-1)
        if sizes.size != n_codes:
            raise InvalidDesign(f"need {n_codes} stratum sample sizes, got {sizes.size}")
        pop_sizes = np.bincount(strata, minlength=n_codes)
        if np.any(pop_sizes == 0):
            raise InvalidDesign("every stratum code must have at least one unit")
        if np.any(sizes < 1) or np.any(sizes > pop_sizes):
            raise InvalidDesign(
                f"stratum sample sizes {sizes.tolist()} must lie in 1..N_λ = {pop_sizes.tolist()}"
            )
        self.strata = strata
        self.sizes = sizes
        self.pop_sizes = pop_sizes
        self._members = [np.flatnonzero(strata == c) for c in range(n_codes)]
        f = sizes / pop_sizes
        super().__init__(f[strata])
        # Δ for k≠l in the same stratum; zero when N_λ = 1
        with np.errstate(divide="ignore", invalid="ignore"):
            joint = np.where(
                pop_sizes > 1, sizes * (sizes - 1) / (pop_sizes * np.maximum(pop_sizes - 1, 1)), 0.0
            )
        self._joint_within = joint
        self._delta_off = joint - f * f
        self._f = f

    @property
    def n(self) -> int:
        return int(self.sizes.sum())

    @property
    def n_strata(self) -> int:
        return self.sizes.size

    def members(self, code: int) -> np.ndarray:
        return self._members[code]

    def pi_joint(self, k, l):
        self._check(k, l)
        if k == l:
            return float(self.first_order[k])
        ck, cl = self.strata[k], self.strata[l]
        if ck != cl:
            return float(self.first_order[k] * self.first_order[l])
        return float(self._joint_within[ck])

    def quadratic_form(self, a):
        a = np.asarray(a, dtype=float)
        flat = a.ndim == 1
        a2 = a[:, None] if flat else a
        s1 = np.zeros((self.n_strata,) + a2.shape[1:])
        s2 = np.zeros_like(s1)
        np.add.at(s1, self.strata, a2)
        np.add.at(s2, self.strata, a2 * a2)
        f = self._f[:, None]
        d_diag = (self._f * (1 - self._f))[:, None]
        d_off = self._delta_off[:, None]
        out = ((d_diag * s2 + d_off * (s1 * s1 - s2)) / (f * f)).sum(axis=0)
        return out[0] if flat else out

    def sample_quadratic_form(self, indices, a):
        indices = np.asarray(indices)
        a = np.asarray(a, dtype=float)
        flat = a.ndim == 1
        a2 = a[:, None] if flat else a
        codes = self.strata[indices]
        s1 = np.zeros((self.n_strata,) + a2.shape[1:])
        s2 = np.zeros_like(s1)
        np.add.at(s1, codes, a2)
        np.add.at(s2, codes, a2 * a2)
        f = self._f[:, None]
        diag = (1.0 - f) / (f * f)
        with np.errstate(divide="ignore", invalid="ignore"):
            off = np.where(
                self._joint_within[:, None] > 0,
                self._delta_off[:, None] / (self._joint_within[:, None] * f * f),
                0.0,
            )
        counts = np.bincount(codes, minlength=self.n_strata)
        if np.any((counts > 1) & (self._joint_within == 0)):
            raise ZeroJointInclusion("two sampled units have zero joint inclusion probability")
        out = (diag * s2 + off * (s1 * s1 - s2)).sum(axis=0)
        return out[0] if flat else out

    def draw(self, seed) -> Sample:
        rng = _rng(seed)
        picked = [
            rng.choice(m, size=n, replace=False) for m, n in zip(self._members, self.sizes)
        ]
        return Sample(np.sort(np.concatenate(picked)), self)

    def support_size(self):
        return math.prod(math.comb(int(N), int(n)) for N, n in zip(self.pop_sizes, self.sizes))

    def enumerate(self, cap=DEFAULT_ENUMERATION_CAP):
        size = self.support_size()
        if size > cap:
            raise TooLargeToEnumerate(f"{size} samples exceed the cap {cap}")
        prob = 1.0 / size
        per_stratum = [
            list(itertools.combinations(m.tolist(), int(n)))
            for m, n in zip(self._members, self.sizes)
        ]
        out = []
        for combo in itertools.product(*per_stratum):
            idx = np.sort(np.fromiter(itertools.chain.from_iterable(combo), dtype=int))
            out.append((Sample(idx, self), prob))
        return out


class SRSWOR(StratifiedSRSWOR):
    """Simple random sampling without replacement of ``n`` units among ``N``."""

    kind = "srswor"

    def __init__(self, N: int, n: int):
        if not (1 <= n <= N):
            raise InvalidDesign(f"sample size n={n} must lie in 1..N={N}")
        super().__init__(np.zeros(int(N), dtype=int), [int(n)])


class PoissonDesign(SamplingDesign):
    """Unit ``k`` enters the sample independently with probability ``π_k``."""

    kind = "poisson"

    def pi_joint(self, k, l):
        self._check(k, l)
        if k == l:
            return float(self.first_order[k])
        return float(self.first_order[k] * self.first_order[l])

    def quadratic_form(self, a):
        a = np.asarray(a, dtype=float)
        pi = self.first_order if a.ndim == 1 else self.first_order[:, None]
        return ((1.0 - pi) / pi * a * a).sum(axis=0)

    def sample_quadratic_form(self, indices, a):
        a = np.asarray(a, dtype=float)
        pi = self.first_order[np.asarray(indices)]
        if a.ndim > 1:
            pi = pi[:, None]
        return ((1.0 - pi) / (pi * pi) * a * a).sum(axis=0)

    def draw(self, seed) -> Sample:
        rng = _rng(seed)
        return Sample(np.flatnonzero(rng.random(self.N) < self.first_order), self)

    def support_size(self):
        return 2 ** int(np.sum(self.first_order < 1.0))

    def enumerate(self, cap=DEFAULT_ENUMERATION_CAP):
        size = self.support_size()
        if size > cap:
            raise TooLargeToEnumerate(f"{size} samples exceed the cap {cap}")
        certain = np.flatnonzero(self.first_order >= 1.0)
        random_units = np.flatnonzero(self.first_order < 1.0)
        pi = self.first_order[random_units]
        out = []
        for bits in itertools.product((0, 1), repeat=random_units.size):
            b = np.array(bits, dtype=bool)
            prob = float(np.prod(np.where(b, pi, 1.0 - pi)))
            idx = np.sort(np.concatenate([certain, random_units[b]])).astype(int)
            out.append((Sample(idx, self), prob))
        return out


def delta(design: SamplingDesign, k: int, l: int) -> float:
    """``Δ_kl = π_kl - π_k π_l`` with ``Δ_kk = π_k (1 - π_k)``."""
    return design.delta(k, l)


def draw_sample(design: SamplingDesign, rng_seed) -> Sample:
    return design.draw(rng_seed)


def enumerate_samples(design: SamplingDesign, cap: int = DEFAULT_ENUMERATION_CAP):
    return design.enumerate(cap)
