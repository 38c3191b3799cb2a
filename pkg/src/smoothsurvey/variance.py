"""Variances of the smoothed estimators.

Two families of entry points, kept apart on purpose:

* population-level ("theory") formulas summing over ``U``:
  :func:`variance_ht_exact`, :func:`variance_hajek_approx`,
  :func:`variance_stratified`, :func:`variance_difference_stratified`;
* the sample-level plug-in estimator :func:`variance_estimate_plugin`.

All of them share the two-term structure: a design term built from the
smoothed linearized values ``ũ_k(t)`` and a non-response term built from the
per-instant values ``u_kj(t)`` and the covariance factor
``(θ(t_j,t_j') - θ(t_j)θ(t_j')) / (θ(t_j)θ(t_j'))``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .design import SRSWOR, Sample, StratifiedSRSWOR
from .errors import NoClosedFormJoint, NotStratified
from .estimators import _hajek1_core, _mask_array, _respondent_ratio, _theta_array, _weighted_totals
from .grid_kernel import weight_matrix
from .response import ThetaSource

VARIANTS = ("U1", "U2")
_CHUNK = 20_000_000


@dataclass
class LinearizedVariables:
    variant: str
    u: np.ndarray
    smoothed: np.ndarray


@dataclass
class VarianceCurve:
    eval_points: np.ndarray
    values: np.ndarray
    sampling: np.ndarray
    nonresponse: np.ndarray
    kind: str
    negative: bool = False

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.clip(self.values, 0.0, None))


@dataclass
class VarianceDifference:
    eval_points: np.ndarray
    exact: np.ndarray
    approx: np.ndarray


def _variant(variant):
    v = str(variant).upper()
    aliases = {"HAJEK1": "U1", "HAJEK2": "U2", "1": "U1", "2": "U2"}
    v = aliases.get(v, v)
    if v not in VARIANTS:
        raise ValueError(f"unknown linearization variant {variant!r}")
    return v


def linearized_variables(variant, values, center, weights, N) -> LinearizedVariables:
    """``u_kj(t) = w_j(t) (Y_k(t_j) - c) / N`` at one evaluation point.

    ``center`` is the scalar ``μ̃(t)`` for U1 and the vector ``μ(t_j)`` for U2.
    """
    v = _variant(variant)
    y = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    c = np.asarray(center, dtype=float)
    if v == "U1" and c.ndim != 0:
        raise ValueError("U1 is centred at the scalar smoothed mean")
    if v == "U2" and c.shape != (y.shape[1],):
        raise ValueError("U2 is centred at the per-instant mean vector")
    u = w[None, :] * (y - c) / N
    return LinearizedVariables(v, u, u.sum(axis=1))


def _response_terms(source: ThetaSource):
    if source is None or getattr(source, "joint", None) is None:
        raise NoClosedFormJoint("a response model with joint probabilities is required")
    return source.covariance_factor()


def _nonresponse_term(u, scale, groups, covfac):
    """``Σ_k scale_k Σ_{j,j'} u_kj u_kj' D_g(k)(j,j')`` for each leading index of ``u``."""
    out = np.zeros(u.shape[0])
    for g in np.unique(groups):
        rows = groups == g
        D = covfac[g]
        if not np.any(D):
            continue
        ug = u[:, rows]
        out += ((ug @ D) * ug).sum(axis=-1) @ scale[rows]
    return out


def _chunks(m, N, d):
    step = max(1, _CHUNK // max(1, N * d))
    for start in range(0, m, step):
        yield slice(start, min(m, start + step))


def _population_two_term(values, centers, W, design, source, kind, t):
    """Shared engine; ``centers`` broadcasts to ``(m, d)`` (or is None for no centring)."""
    N, d = values.shape
    covfac = _response_terms(source)
    pi = design.first_order
    m = W.shape[0]
    first = np.zeros(m)
    second = np.zeros(m)
    for sl in _chunks(m, N, d):
        y = values[None, :, :]
        if centers is not None:
            y = y - np.broadcast_to(centers, (m, d))[sl][:, None, :]
        u = W[sl][:, None, :] * y / N
        first[sl] = design.quadratic_form(u.sum(axis=-1).T)
        second[sl] = _nonresponse_term(u, 1.0 / pi, source.groups, covfac)
    return VarianceCurve(t, first + second, first, second, kind)


def _eval(grid, spec, eval_points):
    t = grid.instants if eval_points is None else np.atleast_1d(np.asarray(eval_points, float))
    return t, weight_matrix(grid, spec, t)


def variance_ht_exact(pop, design, response, spec, eval_points=None) -> VarianceCurve:
    """Exact variance of the smoothed HT estimator under non-response.

    ``(1/N²) Σ_{k,l∈U} Δ_kl/(π_kπ_l) Ỹ_k Ỹ_l`` plus the non-response term
    ``(1/N²) Σ_k (1/π_k) Σ_{j,j'} w_j w_j' Y_k(t_j) Y_k(t_j') D_k(j,j')``.
    """
    t, W = _eval(pop.grid, spec, eval_points)
    return _population_two_term(pop.values, None, W, design, response, "ExactHT", t)


def variance_hajek_approx(variant, pop, design, response, spec, eval_points=None) -> VarianceCurve:
    """Linearization-based variance of a Hájek estimator.

    U1 centres each ``Y_k(t_j)`` at ``μ̃(t)``, U2 at ``μ(t_j)``.
    """
    v = _variant(variant)
    t, W = _eval(pop.grid, spec, eval_points)
    mu = pop.values.mean(axis=0)
    if v == "U1":
        centers = (W @ mu)[:, None]
        kind = "ApproxHajek1"
    else:
        centers = mu[None, :]
        kind = "ApproxHajek2"
    return _population_two_term(pop.values, centers, W, design, response, kind, t)


def _require_stratified(design):
    if not isinstance(design, StratifiedSRSWOR):
        raise NotStratified(f"stratified formula needs a stratified SRSWOR design, got {design.kind}")


def _stratum_terms(tag, pop, design, response, W):
    """Per-stratum sampling and non-response terms of ``V(μ̂_λ(t))``, each ``(Λ, m)``."""
    covfac = _response_terms(response)
    groups = response.groups
    m = W.shape[0]
    L = design.n_strata
    sampling = np.zeros((L, m))
    nonresp = np.zeros((L, m))
    for code in range(L):
        rows = design.members(code)
        N_l, n_l = design.pop_sizes[code], design.sizes[code]
        y = pop.values[rows]
        mu_l = y.mean(axis=0)
        smooth_units = y @ W.T
        if N_l > 1:
            dev = smooth_units - smooth_units.mean(axis=0)
            sampling[code] = (1 - n_l / N_l) / n_l / (N_l - 1) * (dev * dev).sum(axis=0)
        if tag == "ht":
            centred = np.broadcast_to(y, (m,) + y.shape)
        elif tag == "hajek1":
            centred = y[None, :, :] - (W @ mu_l)[:, None, None]
        else:
            centred = np.broadcast_to(y - mu_l, (m,) + y.shape)
        u = W[:, None, :] * centred
        scale = np.full(rows.size, 1.0 / (N_l * n_l))
        nonresp[code] = _nonresponse_term(u, scale, groups[rows], covfac)
    return sampling, nonresp


def variance_stratified(tag, pop, design, response, spec, eval_points=None) -> VarianceCurve:
    """``(1/N²) Σ_λ N_λ² V_λ`` for stratified SRSWOR with response groups equal to strata.

    ``tag`` is ``ht`` (exact), ``hajek1`` or ``hajek2`` (linearized).
    """
    _require_stratified(design)
    if tag not in ("ht", "hajek1", "hajek2"):
        raise ValueError(f"unknown estimator {tag!r}")
    t, W = _eval(pop.grid, spec, eval_points)
    sampling, nonresp = _stratum_terms(tag, pop, design, response, W)
    share2 = ((design.pop_sizes / design.N) ** 2)[:, None]
    first = (share2 * sampling).sum(axis=0)
    second = (share2 * nonresp).sum(axis=0)
    kind = {"ht": "ExactHT", "hajek1": "ApproxHajek1", "hajek2": "ApproxHajek2"}[tag]
    return VarianceCurve(t, first + second, first, second, kind)


def variance_difference_stratified(pop, design, response, spec, eval_points=None) -> VarianceDifference:
    """``V(Hájek1) - V(HT)`` under stratified SRSWOR.

    ``exact`` is the full quadratic form
    ``(1/n_λ) (w μ̃_λ)ᵀ Δ_λ (w μ̃_λ - 2 μ̆_λ)`` aggregated with ``(N_λ/N)²``;
    ``approx`` replaces the right factor by ``-w μ̃_λ`` (small-bandwidth form).
    """
    _require_stratified(design)
    t, W = _eval(pop.grid, spec, eval_points)
    covfac = _response_terms(response)
    exact = np.zeros(t.size)
    approx = np.zeros(t.size)
    for code in range(design.n_strata):
        rows = design.members(code)
        N_l, n_l = design.pop_sizes[code], design.sizes[code]
        groups = np.unique(response.groups[rows])
        if groups.size != 1:
            raise NotStratified("response groups must coincide with strata")
        D = covfac[groups[0]]
        mu_l = pop.values[rows].mean(axis=0)
        smoothed = W @ mu_l
        a = W * smoothed[:, None]
        b = a - 2.0 * W * mu_l[None, :]
        share2 = (N_l / design.N) ** 2
        exact += share2 * np.einsum("mj,jl,ml->m", a, D, b) / n_l
        approx -= share2 * np.einsum("mj,jl,ml->m", a, D, a) / n_l
    return VarianceDifference(t, exact, approx)


def _plugin_parts(variant, y, r, th, pi, N, W, t):
    """Return ``(û, ũ̂)`` for the plug-in estimator; ``û`` is ``(m, n, d)``."""
    ratio, observed = _respondent_ratio(r, th)
    y_obs = np.where(observed, y, 0.0)
    if variant == "ht":
        centred = np.broadcast_to(y_obs, (W.shape[0],) + y.shape)
    elif variant == "hajek1":
        center = _hajek1_core(y, r, th, pi, W, t)
        centred = y_obs[None, :, :] - center[:, None, None]
    else:
        y_tot, n_tot = _weighted_totals(y, r, th, pi)
        center = np.divide(y_tot, n_tot, out=np.zeros_like(y_tot), where=n_tot > 0)
        centred = np.broadcast_to(y_obs - center, (W.shape[0],) + y.shape)
    u = W[:, None, :] * centred / N * observed
    smoothed = (u * ratio).sum(axis=-1)
    return u, smoothed


def variance_estimate_plugin(
    variant, y, mask, theta: ThetaSource, sample: Sample, grid, spec, eval_points=None
) -> VarianceCurve:
    """Sample-level variance estimator for ``ht``, ``hajek1`` or ``hajek2``.

    Design term ``Σ_{k,l∈s} Δ_kl/(π_kl π_k π_l) ũ̂_k ũ̂_l`` and non-response term
    ``Σ_{k∈s} (1/π_k) Σ_{j,j'} û_kj û_kj' D_k(j,j') r_k(t_j) r_k(t_j')``.
    The Hájek variants centre at ``μ̂⁽¹⁾(t)`` and at ``Ŷ(t_j)/N̂(t_j)``.
    Stratified designs are handled stratum by stratum. Negative values are
    returned unclamped with ``negative=True``.
    """
    v = {"u1": "hajek1", "u2": "hajek2"}.get(str(variant).lower(), str(variant).lower())
    if v not in ("ht", "hajek1", "hajek2"):
        raise ValueError(f"unknown plug-in variant {variant!r}")
    if not isinstance(theta, ThetaSource):
        raise NoClosedFormJoint("plug-in variance needs joint response probabilities")
    t, W = _eval(grid, spec, eval_points)
    y = np.asarray(y, dtype=float)
    r = _mask_array(mask, y.shape)
    covfac = _response_terms(theta)
    design = sample.design
    if not theta.known:
        warnings.warn(
            "response probabilities were estimated from the mask; the plug-in variance is approximate",
            stacklevel=2,
        )

    if isinstance(design, StratifiedSRSWOR) and design.n_strata > 1:
        codes = design.strata[sample.indices]
        first = np.zeros(t.size)
        second = np.zeros(t.size)
        for code in range(design.n_strata):
            rows = codes == code
            sub = SRSWOR(int(design.pop_sizes[code]), int(design.sizes[code]))
            sub_sample = Sample(np.arange(rows.sum()), sub)
            sub_theta = ThetaSource(
                theta.groups[sample.indices[rows]], theta.marginal, theta.joint, True
            )
            part = variance_estimate_plugin(v, y[rows], r[rows], sub_theta, sub_sample, grid, spec, t)
            share2 = (design.pop_sizes[code] / design.N) ** 2
            first += share2 * part.sampling
            second += share2 * part.nonresponse
        return _finish(t, first, second)

    th = _theta_array(theta, sample.indices, y.shape)
    u, smoothed = _plugin_parts(v, y, r, th, sample.pi, design.N, W, t)
    first = design.sample_quadratic_form(sample.indices, smoothed.T)
    first = np.atleast_1d(first)
    groups = theta.groups[sample.indices]
    # û is already zero at unobserved cells, which carries the r_k(t_j) r_k(t_j') factor
    second = _nonresponse_term(u, 1.0 / sample.pi, groups, covfac)
    return _finish(t, first, second)


def _finish(t, first, second):
    total = first + second
    negative = bool(np.any(total < 0))
    if negative:
        warnings.warn("plug-in variance estimate is negative at some evaluation points", stacklevel=3)
    return VarianceCurve(t, total, first, second, "PlugInEstimate", negative)
