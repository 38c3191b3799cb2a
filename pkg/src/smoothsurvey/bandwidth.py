"""Design- and response-weighted leave-one-curve-out cross-validation for the bandwidth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import StratifiedSRSWOR
from .errors import (
    AllCandidatesFailed,
    NotStratified,
    SmoothSurveyError,
    TooFewUnits,
    ZeroDenominator,
    ZeroDenominatorInstant,
)
from .estimators import TAGS, _mask_array, _respondent_ratio, _theta_array
from .grid_kernel import KernelSpec, TimeGrid, weight_matrix
from .response import ObservationMask, estimate_theta_group


@dataclass
class CVResult:
    candidates: np.ndarray
    scores: np.ndarray
    selected: float
    failures: list
    a3_valid: np.ndarray

    def table(self):
        return [
            (float(h), float(s), f or "")
            for h, s, f in zip(self.candidates, self.scores, self.failures)
        ]


def default_candidates(grid: TimeGrid, count: int = 15) -> np.ndarray:
    """Log-spaced bandwidths from the grid spacing to ``T/4``."""
    return np.geomspace(grid.spacing, grid.T / 4.0, count)


def _resolve_theta(theta, r, sample):
    if isinstance(theta, str):
        if theta != "estimate":
            raise ValueError(f"unknown theta source {theta!r}")
        codes = sample.design.strata[sample.indices]
        est = estimate_theta_group(ObservationMask(sample.indices, r), codes)
        return est.marginal[np.searchsorted(est.labels, codes)]
    return _theta_array(theta, sample.indices, r.shape)


def cv_score(
    y, mask, theta, sample, grid, spec, estimator: str = "hajek2", renormalize: bool = False
) -> float:
    """``Σ_λ Σ_{k∈s_λ} (N_λ/n_λ) Σ_j r_k(t_j)/θ_k(t_j) (Y_k(t_j) - μ̂^(-k)(t_j))²``.

    ``μ̂^(-k)`` is the stratified estimator ``estimator`` rebuilt without unit
    ``k``; only stratum ``λ(k)`` changes, so it is obtained by downdating that
    stratum's weighted sums.
    """
    design = sample.design
    if not isinstance(design, StratifiedSRSWOR):
        raise NotStratified("cross-validation needs a stratified (or simple) SRSWOR design")
    if estimator not in TAGS:
        raise ValueError(f"unknown estimator {estimator!r}")
    y = np.asarray(y, dtype=float)
    r = _mask_array(mask, y.shape)
    th = _resolve_theta(theta, r, sample)
    ratio, observed = _respondent_ratio(r, th)
    y_obs = np.where(observed, y, 0.0)
    W = weight_matrix(grid, spec, grid.instants)
    codes = design.strata[sample.indices]

    parts = []
    for code in range(design.n_strata):
        rows = np.flatnonzero(codes == code)
        if rows.size < 2:
            raise TooFewUnits(f"stratum {code} has {rows.size} sampled unit(s); need at least 2")
        sy = (ratio[rows] * y_obs[rows]).sum(axis=0)
        sn = ratio[rows].sum(axis=0)
        parts.append((rows, sy, sn))

    def stratum_curve(sy, sn, n_units):
        if estimator == "ht":
            return (sy / n_units) @ W.T
        if estimator == "hajek1":
            den = sn @ W.T
            if np.any(~(den > 0)):
                raise ZeroDenominator(float(grid.instants[np.argwhere(~(den > 0))[0][-1]]))
            return (sy @ W.T) / den
        empty = ~(sn > 0)
        pointwise = np.divide(sy, sn, out=np.zeros_like(sy), where=~empty)
        if not np.any(empty[..., None, :] & (W > 0)):
            return pointwise @ W.T
        if not renormalize:
            raise ZeroDenominatorInstant(int(np.argwhere(empty)[0][-1]))
        W_eff = np.where(empty[..., None, :], 0.0, W)
        total = W_eff.sum(axis=-1)
        if np.any(~(total > 0)):
            raise ZeroDenominator(float(grid.instants[np.argwhere(~(total > 0))[0][-1]]))
        return np.einsum("...mj,...j->...m", W_eff / total[..., None], pointwise)

    share = design.pop_sizes / design.N
    full = [stratum_curve(sy, sn, rows.size) for rows, sy, sn in parts]
    total_curve = sum(s * c for s, c in zip(share, full))

    score = 0.0
    for code, (rows, sy, sn) in enumerate(parts):
        loo_sy = sy[None, :] - ratio[rows] * y_obs[rows]
        loo_sn = sn[None, :] - ratio[rows]
        loo = stratum_curve(loo_sy, loo_sn, rows.size - 1)
        pred = total_curve[None, :] + share[code] * (loo - full[code][None, :])
        resid = np.where(observed[rows], y_obs[rows] - pred, 0.0)
        weight = design.pop_sizes[code] / design.sizes[code]
        score += weight * float((ratio[rows] * resid * resid).sum())
    return score


def select_bandwidth(
    y,
    mask,
    theta,
    sample,
    grid,
    family="epanechnikov",
    candidates=None,
    estimator="hajek2",
    renormalize=False,
) -> CVResult:
    """Minimize :func:`cv_score` over ``candidates``; ties go to the larger bandwidth.

    Candidates whose evaluation raises a domain error (for instance all
    weights zero near some instant) get an infinite score and the error
    message in ``failures``.
    """
    hs = default_candidates(grid) if candidates is None else np.asarray(candidates, dtype=float)
    if hs.size == 0:
        raise AllCandidatesFailed("empty candidate grid")
    scores = np.full(hs.size, np.inf)
    failures = [None] * hs.size
    valid = np.zeros(hs.size, dtype=bool)
    for i, h in enumerate(hs):
        spec = KernelSpec(family, float(h))
        valid[i] = spec.satisfies_a3(grid)
        try:
            scores[i] = cv_score(y, mask, theta, sample, grid, spec, estimator, renormalize)
        except (TooFewUnits, NotStratified):
            raise
        except SmoothSurveyError as exc:
            failures[i] = f"{type(exc).__name__}: {exc}"
    finite = np.isfinite(scores)
    if not finite.any():
        raise AllCandidatesFailed("no candidate bandwidth produced a finite score")
    best = scores[finite].min()
    # scores closer than rounding noise on the data scale count as ties
    y_obs = np.where(_mask_array(mask, np.shape(y)) > 0, np.asarray(y, dtype=float), 0.0)
    scale = float(np.sum(y_obs * y_obs)) * sample.design.N / max(sample.n, 1)
    tol = 1e-12 * max(abs(best), scale, 1e-300)
    ties = np.flatnonzero(finite & (scores <= best + tol))
    chosen = ties[np.argmax(hs[ties])]
    return CVResult(hs, scores, float(hs[chosen]), failures, valid)
