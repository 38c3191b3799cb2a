"""Smoothed Horvitz-Thompson and Hájek estimators of the mean curve.

The private ``_*_core`` functions accept masks with arbitrary leading batch
dimensions, ``(..., n, d)``, so the enumeration oracle can evaluate every
mask pattern of a sample in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import StratifiedSRSWOR
from .errors import (
    NotStratified,
    StratumError,
    ZeroDenominator,
    ZeroDenominatorInstant,
    ZeroTheta,
)
from .grid_kernel import weight_matrix
from .response import ObservationMask, ThetaSource, estimate_theta_group

TAGS = ("ht", "hajek1", "hajek2")


@dataclass
class EstimatedCurve:
    eval_points: np.ndarray
    values: np.ndarray
    tag: str
    metadata: dict = field(default_factory=dict)


def _respondent_ratio(r, theta):
    """``r/θ`` with unobserved cells forced to 0 before any division."""
    r = np.asarray(r, dtype=float)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), r.shape)
    observed = r > 0
    if np.any(observed & ~(theta > 0)):
        raise ZeroTheta("response probability is 0 at an observed cell")
    out = np.zeros(r.shape)
    np.divide(r, theta, out=out, where=observed)
    return out, observed


def _weighted_totals(y, r, theta, pi):
    """``Ŷ(t_j) = Σ_s r y/(θ π)`` and ``N̂(t_j) = Σ_s r/(θ π)``, shape ``(..., d)``."""
    ratio, observed = _respondent_ratio(r, theta)
    y_obs = np.where(observed, y, 0.0)
    scaled = ratio / np.asarray(pi, dtype=float)[:, None]
    return (scaled * y_obs).sum(axis=-2), scaled.sum(axis=-2)


def _ht_core(y, r, theta, pi, N, W):
    y_tot, _ = _weighted_totals(y, r, theta, pi)
    return (y_tot @ W.T) / N


def _hajek1_core(y, r, theta, pi, W, eval_points):
    y_tot, n_tot = _weighted_totals(y, r, theta, pi)
    num = y_tot @ W.T
    den = n_tot @ W.T
    bad = ~(den > 0)
    if np.any(bad):
        pos = np.argwhere(bad)[0]
        raise ZeroDenominator(float(np.asarray(eval_points)[pos[-1]]))
    return num / den


def _hajek2_core(y, r, theta, pi, W, renormalize=False, eval_points=None):
    y_tot, n_tot = _weighted_totals(y, r, theta, pi)
    empty = ~(n_tot > 0)
    ratio = np.divide(y_tot, n_tot, out=np.zeros_like(y_tot), where=~empty)
    if not np.any(empty):
        return ratio @ W.T
    used = empty[..., None, :] & (W > 0)
    if not renormalize:
        if np.any(used):
            raise ZeroDenominatorInstant(int(np.argwhere(used)[0][-1]))
        return ratio @ W.T
    W_eff = np.where(empty[..., None, :], 0.0, W)
    total = W_eff.sum(axis=-1)
    bad = ~(total > 0)
    if np.any(bad):
        i = int(np.argwhere(bad)[0][-1])
        raise ZeroDenominator(float(eval_points[i]) if eval_points is not None else i)
    W_eff = W_eff / total[..., None]
    return np.einsum("...mj,...j->...m", W_eff, ratio)


def _theta_array(theta, indices, shape):
    if theta is None:
        return np.ones(shape)
    if isinstance(theta, ThetaSource):
        return theta.unit_marginal(indices)
    return np.broadcast_to(np.asarray(theta, dtype=float), shape)


def _mask_array(mask, shape):
    if mask is None:
        return np.ones(shape)
    if isinstance(mask, ObservationMask):
        return mask.entries.astype(float)
    return np.asarray(mask, dtype=float)


def _meta(sample, spec, theta, **extra):
    if theta is None:
        source = "full"
    elif isinstance(theta, ThetaSource):
        source = "known" if theta.known else "estimated"
    else:
        source = "known"
    meta = {
        "kernel": spec.family,
        "bandwidth": spec.bandwidth,
        "design": sample.design.kind,
        "theta_source": source,
    }
    meta.update(extra)
    return meta


def _prepare(y, sample, grid, spec, eval_points):
    y = np.asarray(y, dtype=float)
    if y.shape != (sample.n, grid.d):
        raise ValueError(f"sampled values must be {sample.n} x {grid.d}, got {y.shape}")
    t = grid.instants if eval_points is None else np.atleast_1d(np.asarray(eval_points, float))
    return y, t, weight_matrix(grid, spec, t)


def ht_mean_full(y, sample, grid, spec, eval_points=None) -> EstimatedCurve:
    """``Σ_j w_j(t) (1/N) Σ_s Y_k(t_j)/π_k`` on fully observed rows."""
    y, t, W = _prepare(y, sample, grid, spec, eval_points)
    pointwise = (y / sample.pi[:, None]).sum(axis=0) / sample.design.N
    return EstimatedCurve(t, W @ pointwise, "ht", _meta(sample, spec, None))


def hajek_mean_full(y, sample, grid, spec, eval_points=None) -> EstimatedCurve:
    """Smoothed pointwise Hájek means on fully observed rows."""
    y, t, W = _prepare(y, sample, grid, spec, eval_points)
    inv = 1.0 / sample.pi
    if not inv.sum() > 0:
        raise ZeroDenominator(float(t[0]))
    pointwise = (y * inv[:, None]).sum(axis=0) / inv.sum()
    return EstimatedCurve(t, W @ pointwise, "hajek", _meta(sample, spec, None))


def ht_mean_nr(y, mask, theta, sample, grid, spec, eval_points=None) -> EstimatedCurve:
    """Smoothed HT estimator reweighting each observed cell by ``1/(θ_k(t_j) π_k)``."""
    y, t, W = _prepare(y, sample, grid, spec, eval_points)
    r = _mask_array(mask, y.shape)
    th = _theta_array(theta, sample.indices, y.shape)
    values = _ht_core(y, r, th, sample.pi, sample.design.N, W)
    return EstimatedCurve(t, values, "ht", _meta(sample, spec, theta))


def hajek1_mean_nr(y, mask, theta, sample, grid, spec, eval_points=None) -> EstimatedCurve:
    """Ratio of the smoothed weighted total to the smoothed weighted count."""
    y, t, W = _prepare(y, sample, grid, spec, eval_points)
    r = _mask_array(mask, y.shape)
    th = _theta_array(theta, sample.indices, y.shape)
    values = _hajek1_core(y, r, th, sample.pi, W, t)
    return EstimatedCurve(t, values, "hajek1", _meta(sample, spec, theta))


def hajek2_mean_nr(
    y, mask, theta, sample, grid, spec, eval_points=None, renormalize=False
) -> EstimatedCurve:
    """Smoothed instant-wise ratios ``Ŷ(t_j)/N̂(t_j)``.

    With ``renormalize`` instants without respondents are dropped and the
    remaining weights rescaled to sum to one; otherwise they raise.
    """
    y, t, W = _prepare(y, sample, grid, spec, eval_points)
    r = _mask_array(mask, y.shape)
    th = _theta_array(theta, sample.indices, y.shape)
    values = _hajek2_core(y, r, th, sample.pi, W, renormalize, t)
    return EstimatedCurve(t, values, "hajek2", _meta(sample, spec, theta, renormalize=renormalize))


_NR = {"ht": ht_mean_nr, "hajek1": hajek1_mean_nr, "hajek2": hajek2_mean_nr}


def estimate(tag, y, mask, theta, sample, grid, spec, eval_points=None, renormalize=False):
    """Dispatch on ``tag``; stratified designs use :func:`stratified_mean`."""
    if tag not in TAGS:
        raise ValueError(f"unknown estimator {tag!r}; expected one of {TAGS}")
    if isinstance(sample.design, StratifiedSRSWOR) and sample.design.n_strata > 1:
        return stratified_mean(tag, y, mask, theta, sample, grid, spec, eval_points, renormalize)
    if isinstance(theta, str):
        if theta != "estimate":
            raise ValueError(f"unknown theta source {theta!r}")
        r = _mask_array(mask, np.shape(y))
        est = estimate_theta_group(ObservationMask(sample.indices, r), np.zeros(sample.n, int))
        theta = ThetaSource(np.zeros(sample.design.N, int), est.marginal, est.joint, known=False)
    if tag == "hajek2":
        return hajek2_mean_nr(y, mask, theta, sample, grid, spec, eval_points, renormalize)
    return _NR[tag](y, mask, theta, sample, grid, spec, eval_points)


def stratified_mean(
    tag, y, mask, theta, sample, grid, spec, eval_points=None, renormalize=False
) -> EstimatedCurve:
    """``Σ_λ (N_λ/N) μ̂_λ(t)`` with ``μ̂_λ`` the chosen estimator run inside stratum ``λ``.

    ``theta`` may be the string ``"estimate"``: response rates are then
    estimated per stratum from the mask.
    """
    design = sample.design
    if not isinstance(design, StratifiedSRSWOR):
        raise NotStratified(f"stratified estimator needs a stratified design, got {design.kind}")
    if tag not in TAGS:
        raise ValueError(f"unknown estimator {tag!r}; expected one of {TAGS}")
    y, t, W = _prepare(y, sample, grid, spec, eval_points)
    r = _mask_array(mask, y.shape)
    codes = design.strata[sample.indices]
    source = "full" if theta is None else "known"
    if isinstance(theta, str):
        if theta != "estimate":
            raise ValueError(f"unknown theta source {theta!r}")
        est = estimate_theta_group(ObservationMask(sample.indices, r), codes)
        th = est.marginal[np.searchsorted(est.labels, codes)]
        source = "estimated"
    else:
        th = _theta_array(theta, sample.indices, y.shape)
        if isinstance(theta, ThetaSource) and not theta.known:
            source = "estimated"
    values = np.zeros(t.size)
    for code in range(design.n_strata):
        rows = codes == code
        N_l, n_l = design.pop_sizes[code], design.sizes[code]
        pi = np.full(n_l, n_l / N_l)
        try:
            if tag == "ht":
                part = _ht_core(y[rows], r[rows], th[rows], pi, N_l, W)
            elif tag == "hajek1":
                part = _hajek1_core(y[rows], r[rows], th[rows], pi, W, t)
            else:
                part = _hajek2_core(y[rows], r[rows], th[rows], pi, W, renormalize, t)
        except (ZeroDenominator, ZeroDenominatorInstant, ZeroTheta) as exc:
            raise StratumError(code, exc) from exc
        values += (N_l / design.N) * part
    meta = {
        "kernel": spec.family,
        "bandwidth": spec.bandwidth,
        "design": design.kind,
        "theta_source": source,
        "stratified": True,
    }
    return EstimatedCurve(t, values, tag, meta)
