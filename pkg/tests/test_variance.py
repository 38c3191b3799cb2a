import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from smoothsurvey.design import SRSWOR, PoissonDesign, Sample, StratifiedSRSWOR, delta
from smoothsurvey.errors import NotStratified
from smoothsurvey.grid_kernel import KernelSpec, TimeGrid, weight_matrix
from smoothsurvey.population import CurvePopulation, generate_population
from smoothsurvey.response import FullResponse, HomogeneousGroups, MarkovGap, ThetaSource
from smoothsurvey.variance import (
    linearized_variables,
    variance_difference_stratified,
    variance_estimate_plugin,
    variance_hajek_approx,
    variance_ht_exact,
    variance_stratified,
)


def flat_exact_ht(pop, design, response, spec, t):
    """Two-term exact variance by explicit loops over U and over instant pairs."""
    grid = pop.grid
    w = oracles.weights(grid.instants, spec.family, spec.bandwidth, t)
    Y = pop.values
    N, d = Y.shape
    pi = design.first_order
    smoothed = [sum(w[j] * Y[k, j] for j in range(d)) for k in range(N)]
    first = 0.0
    for k in range(N):
        for l in range(N):
            first += delta(design, k, l) / (pi[k] * pi[l]) * smoothed[k] * smoothed[l]
    second = 0.0
    for k in range(N):
        acc = 0.0
        for j in range(d):
            for jp in range(d):
                a, b = response.theta(k, j), response.theta(k, jp)
                D = (response.theta_joint(k, j, jp) - a * b) / (a * b)
                acc += w[j] * w[jp] * Y[k, j] * Y[k, jp] * D
        second += acc / pi[k]
    return first / N**2, second / N**2


def _small_case(seed, design_kind="srswor", response_kind="markov"):
    rng = np.random.default_rng(seed)
    N, d = 7, 4
    grid = TimeGrid(1.0, d)
    pop = CurvePopulation(grid, rng.uniform(0.5, 3, size=(N, d)))
    groups = rng.integers(0, 2, size=N)
    if design_kind == "srswor":
        design = SRSWOR(N, 3)
    elif design_kind == "poisson":
        design = PoissonDesign(rng.uniform(0.2, 0.9, size=N))
    else:
        design = StratifiedSRSWOR(groups, [2, 2] if np.bincount(groups).min() >= 2 else [1, 1])
    if response_kind == "markov":
        resp = MarkovGap(rng.uniform(0.5, 0.95, 2), rng.uniform(0, 0.8, 2), groups, d)
    else:
        resp = HomogeneousGroups(rng.uniform(0.4, 0.95, (2, d)), groups)
    return pop, design, resp


@pytest.mark.parametrize("design_kind", ["srswor", "poisson", "stratified"])
@pytest.mark.parametrize("response_kind", ["markov", "bernoulli"])
def test_exact_ht_flat_loop(design_kind, response_kind):
    pop, design, resp = _small_case(3, design_kind, response_kind)
    spec = KernelSpec("epanechnikov", 0.45)
    t = np.array([0.0, 0.2, 0.5, 0.9])
    got = variance_ht_exact(pop, design, resp, spec, t)
    for i, s in enumerate(t):
        first, second = flat_exact_ht(pop, design, resp, spec, s)
        assert got.sampling[i] == pytest.approx(first, rel=1e-12, abs=1e-15)
        assert got.nonresponse[i] == pytest.approx(second, rel=1e-12, abs=1e-15)
    assert np.array_equal(got.values, got.sampling + got.nonresponse)


def test_census_full_response_zero():
    pop, _, _ = _small_case(1)
    out = variance_ht_exact(pop, SRSWOR(pop.N, pop.N), FullResponse(pop.N, pop.grid.d), KernelSpec("gaussian", 0.3))
    assert np.all(out.values == 0.0)


def test_bernoulli_term_is_diagonal():
    pop, design, resp = _small_case(4, "poisson", "bernoulli")
    spec = KernelSpec("epanechnikov", 0.6)
    t = np.array([0.1, 0.5, 0.8])
    W = weight_matrix(pop.grid, spec, t)
    th = resp.unit_marginal(np.arange(pop.N))
    pi = design.first_order
    want = ((W**2)[:, None, :] * (pop.values**2 * (1 - th) / th)[None]).sum(-1) @ (1 / pi) / pop.N**2
    np.testing.assert_allclose(variance_ht_exact(pop, design, resp, spec, t).nonresponse, want, rtol=1e-12)


def test_linearized_hand_instance():
    y = np.array([[1.0, 3.0], [2.0, 2.0], [4.0, 0.0]])
    w = np.array([0.25, 0.75])
    mu_t = 1.5
    u1 = linearized_variables("U1", y, mu_t, w, 3)
    for k in range(3):
        for j in range(2):
            assert u1.u[k, j] == pytest.approx(w[j] * (y[k, j] - mu_t) / 3, abs=1e-15)
    mu = y.mean(axis=0)
    u2 = linearized_variables("U2", y, mu, w, 3)
    # ũ1 and ũ2 agree when centred at the consistent smoothed mean
    u1c = linearized_variables("U1", y, w @ mu, w, 3)
    np.testing.assert_allclose(u1c.smoothed, u2.smoothed, atol=1e-15)
    const = linearized_variables("U1", np.full((3, 2), 1.5), 1.5, w, 3)
    assert np.all(const.u == 0)


def test_stratified_single_stratum_reduces(rng):
    grid = TimeGrid(1.0, 5)
    pop = CurvePopulation(grid, rng.uniform(1, 2, (9, 5)))
    design = SRSWOR(9, 4)
    resp = MarkovGap([0.8], [0.4], np.zeros(9, int), 5)
    spec = KernelSpec("epanechnikov", 0.4)
    np.testing.assert_allclose(
        variance_stratified("ht", pop, design, resp, spec).values,
        variance_ht_exact(pop, design, resp, spec).values,
        rtol=1e-12,
    )
    for tag, variant in (("hajek1", "U1"), ("hajek2", "U2")):
        np.testing.assert_allclose(
            variance_stratified(tag, pop, design, resp, spec).values,
            variance_hajek_approx(variant, pop, design, resp, spec).values,
            rtol=1e-12,
        )


def test_stratified_ht_matches_global_formula():
    pop = generate_population(5, 60, TimeGrid(1.0, 12), 3)
    design = StratifiedSRSWOR(pop.stratum_codes, [4, 6, 5])
    resp = MarkovGap([0.7, 0.8, 0.9], [0.2, 0.5, 0.7], pop.stratum_codes, 12)
    spec = KernelSpec("epanechnikov", 0.1)
    a = variance_stratified("ht", pop, design, resp, spec)
    b = variance_ht_exact(pop, design, resp, spec)
    np.testing.assert_allclose(a.sampling, b.sampling, rtol=1e-12)
    np.testing.assert_allclose(a.nonresponse, b.nonresponse, rtol=1e-12)


def test_stratified_full_response_and_census():
    pop = generate_population(2, 40, TimeGrid(1.0, 8), 2)
    design = StratifiedSRSWOR(pop.stratum_codes, [5, 7])
    resp = FullResponse(pop.N, 8)
    spec = KernelSpec("epanechnikov", 0.2)
    vals = [variance_stratified(tag, pop, design, resp, spec) for tag in ("ht", "hajek1", "hajek2")]
    for v in vals:
        assert np.all(v.nonresponse == 0)
        np.testing.assert_allclose(v.values, vals[0].values, rtol=1e-12)
    census = StratifiedSRSWOR(pop.stratum_codes, pop.stratum_sizes)
    assert np.allclose(variance_stratified("ht", pop, census, resp, spec).values, 0.0, atol=1e-15)
    diff = variance_difference_stratified(pop, design, resp, spec)
    assert np.all(diff.exact == 0) and np.all(diff.approx == 0)


def test_difference_matches_variances():
    pop = generate_population(9, 90, TimeGrid(1.0, 16), 3)
    design = StratifiedSRSWOR(pop.stratum_codes, [5, 5, 5])
    resp = MarkovGap([0.6, 0.75, 0.9], [0.3, 0.5, 0.1], pop.stratum_codes, 16)
    spec = KernelSpec("epanechnikov", 0.08)
    diff = variance_difference_stratified(pop, design, resp, spec)
    direct = variance_stratified("hajek1", pop, design, resp, spec).values - variance_stratified("ht", pop, design, resp, spec).values
    np.testing.assert_allclose(diff.exact, direct, rtol=1e-9, atol=1e-14)


def test_difference_bernoulli_uses_diagonal():
    pop = generate_population(9, 30, TimeGrid(1.0, 6), 2)
    design = StratifiedSRSWOR(pop.stratum_codes, [3, 3])
    th = np.array([[0.8] * 6, [0.6] * 6])
    resp = HomogeneousGroups(th, pop.stratum_codes)
    spec = KernelSpec("epanechnikov", 0.3)
    t = np.array([0.4])
    diff = variance_difference_stratified(pop, design, resp, spec, t)
    w = weight_matrix(pop.grid, spec, t)[0]
    want = 0.0
    for code in range(2):
        rows = design.members(code)
        mu = pop.values[rows].mean(axis=0)
        mt = w @ mu
        Dd = (1 - th[code]) / th[code]
        want += (rows.size / pop.N) ** 2 * np.sum(w * mt * Dd * (w * mt - 2 * w * mu)) / 3
    assert diff.exact[0] == pytest.approx(want, rel=1e-12)


def test_not_stratified():
    pop, design, resp = _small_case(0, "poisson")
    with pytest.raises(NotStratified):
        variance_stratified("ht", pop, design, resp, KernelSpec("gaussian", 0.3))


@st.composite
def populations(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    N = draw(st.integers(2, 50))
    d = draw(st.integers(2, 24))
    grid = TimeGrid(1.0, d)
    pop = CurvePopulation(grid, rng.normal(2, 1, size=(N, d)))
    n = draw(st.integers(1, N))
    design = SRSWOR(N, n) if draw(st.booleans()) else PoissonDesign(rng.uniform(0.05, 1, N))
    groups = rng.integers(0, 3, N)
    resp = MarkovGap(rng.uniform(0.3, 1, 3), rng.uniform(0, 0.9, 3), groups, d)
    spec = KernelSpec(draw(st.sampled_from(["epanechnikov", "gaussian"])), grid.spacing * draw(st.floats(0.6, 5)))
    t = rng.uniform(0, 1, 3)
    return pop, design, resp, spec, t


@given(populations())
def test_hajek_first_terms_equal(args):
    pop, design, resp, spec, t = args
    a = variance_hajek_approx("U1", pop, design, resp, spec, t)
    b = variance_hajek_approx("U2", pop, design, resp, spec, t)
    np.testing.assert_allclose(a.sampling, b.sampling, rtol=1e-10, atol=1e-12)


@given(populations(), st.floats(-10, 10))
def test_variance_scale(args, c):
    pop, design, resp, spec, t = args
    scaled = CurvePopulation(pop.grid, c * pop.values)
    for fn in (
        lambda p: variance_ht_exact(p, design, resp, spec, t),
        lambda p: variance_hajek_approx("U1", p, design, resp, spec, t),
        lambda p: variance_hajek_approx("U2", p, design, resp, spec, t),
    ):
        np.testing.assert_allclose(fn(scaled).values, c * c * fn(pop).values, rtol=1e-10, atol=1e-13)


@given(populations())
def test_full_response_second_terms_zero(args):
    pop, design, _, spec, t = args
    resp = FullResponse(pop.N, pop.grid.d)
    for v in (
        variance_ht_exact(pop, design, resp, spec, t),
        variance_hajek_approx("U1", pop, design, resp, spec, t),
        variance_hajek_approx("U2", pop, design, resp, spec, t),
    ):
        assert np.all(v.nonresponse == 0.0)
        assert np.array_equal(v.values, v.sampling + v.nonresponse)


def flat_plugin(variant, y, r, th, sample, response, grid, spec, t):
    design = sample.design
    idx = sample.indices
    pi = sample.pi
    N = design.N
    n, d = y.shape
    w = oracles.weights(grid.instants, spec.family, spec.bandwidth, t)
    if variant == "ht":
        center = [0.0] * d
    elif variant == "hajek1":
        c = oracles.hajek1(y, r, th, pi, grid.instants, spec.family, spec.bandwidth, t)
        center = [c] * d
    else:
        center = []
        for j in range(d):
            num = sum(y[i, j] / (th[i, j] * pi[i]) for i in range(n) if r[i, j])
            den = sum(1 / (th[i, j] * pi[i]) for i in range(n) if r[i, j])
            center.append(num / den)
    u = [[w[j] * (y[i, j] - center[j]) / N if r[i, j] else 0.0 for j in range(d)] for i in range(n)]
    ut = [sum(u[i][j] / th[i, j] for j in range(d) if r[i, j]) for i in range(n)]
    first = 0.0
    for a in range(n):
        for b in range(n):
            k, l = idx[a], idx[b]
            first += delta(design, k, l) / (design.pi_joint(k, l) * pi[a] * pi[b]) * ut[a] * ut[b]
    second = 0.0
    for a in range(n):
        k = idx[a]
        for j in range(d):
            for jp in range(d):
                p, q = response.theta(k, j), response.theta(k, jp)
                D = (response.theta_joint(k, j, jp) - p * q) / (p * q)
                second += u[a][j] * u[a][jp] * D * r[a, j] * r[a, jp] / pi[a]
    return first, second


@pytest.mark.parametrize("variant", ["ht", "hajek1", "hajek2"])
@pytest.mark.parametrize("design_kind", ["srswor", "poisson"])
def test_plugin_flat_loop(variant, design_kind):
    rng = np.random.default_rng(17)
    N, d = 12, 5
    grid = TimeGrid(1.0, d)
    design = SRSWOR(N, 5) if design_kind == "srswor" else PoissonDesign(rng.uniform(0.3, 0.8, N))
    idx = np.array([0, 2, 3, 7, 10])
    sample = Sample(idx, design)
    groups = rng.integers(0, 2, N)
    resp = MarkovGap([0.7, 0.85], [0.5, 0.3], groups, d)
    y = rng.uniform(1, 4, (5, d))
    r = (rng.random((5, d)) < 0.75).astype(int)
    r[0] = 1
    th = resp.unit_marginal(idx)
    spec = KernelSpec("epanechnikov", 0.4)
    t = np.array([0.1, 0.5, 0.75])
    got = variance_estimate_plugin(variant, y, r, resp, sample, grid, spec, t)
    for i, s in enumerate(t):
        first, second = flat_plugin(variant, y, r, th, sample, resp, grid, spec, s)
        assert got.sampling[i] == pytest.approx(first, rel=1e-11, abs=1e-15)
        assert got.nonresponse[i] == pytest.approx(second, rel=1e-11, abs=1e-15)


def test_plugin_stratified_sums_strata():
    pop = generate_population(1, 40, TimeGrid(1.0, 6), 2)
    design = StratifiedSRSWOR(pop.stratum_codes, [4, 5])
    resp = MarkovGap([0.8, 0.9], [0.5, 0.5], pop.stratum_codes, 6)
    sample = design.draw(3)
    y = pop.values[sample.indices]
    spec = KernelSpec("epanechnikov", 0.4)
    full = variance_estimate_plugin("hajek2", y, None, resp, sample, pop.grid, spec)
    total = np.zeros(6)
    codes = design.strata[sample.indices]
    for code in range(2):
        rows = codes == code
        sub = Sample(np.flatnonzero(rows), SRSWOR(int(design.pop_sizes[code]), int(design.sizes[code])))
        part = variance_estimate_plugin("hajek2", y[rows], None, ThetaSource(resp.groups[sample.indices], resp.marginal, resp.joint), sub, pop.grid, spec)
        total += (design.pop_sizes[code] / design.N) ** 2 * part.values
    np.testing.assert_allclose(full.values, total, rtol=1e-12)


def test_plugin_census_full_response_zero():
    grid = TimeGrid(1.0, 4)
    y = np.random.default_rng(0).normal(size=(5, 4))
    sample = Sample(np.arange(5), SRSWOR(5, 5))
    out = variance_estimate_plugin("ht", y, None, FullResponse(5, 4), sample, grid, KernelSpec("gaussian", 0.5))
    assert np.all(out.values == 0)


def test_plugin_poisson_diagonal_only():
    rng = np.random.default_rng(8)
    design = PoissonDesign(rng.uniform(0.2, 0.9, 10))
    sample = Sample(np.array([1, 4, 6]), design)
    grid = TimeGrid(1.0, 3)
    y = rng.uniform(1, 2, (3, 3))
    spec = KernelSpec("gaussian", 0.4)
    out = variance_estimate_plugin("ht", y, None, FullResponse(10, 3), sample, grid, spec, [0.5])
    w = weight_matrix(grid, spec, [0.5])[0]
    pi = sample.pi
    ut = y @ w / 10
    assert out.sampling[0] == pytest.approx(np.sum((1 - pi) / pi**2 * ut**2), rel=1e-12)


def test_plugin_negative_flag():
    # anti-correlated joint probabilities make the response term negative
    marginal = np.full((1, 3), 0.5)
    joint = np.zeros((1, 3, 3))
    joint[0][np.diag_indices(3)] = 0.5
    src = ThetaSource(np.zeros(4, int), marginal, joint)
    sample = Sample(np.arange(4), SRSWOR(4, 4))
    grid = TimeGrid(1.0, 3)
    with pytest.warns(UserWarning, match="negative"):
        out = variance_estimate_plugin("ht", np.ones((4, 3)), None, src, sample, grid, KernelSpec("uniform", 2.0), [0.5])
    assert out.negative and out.values[0] < 0


def test_plugin_warns_on_estimated_theta():
    src = ThetaSource(np.zeros(4, int), np.full((1, 2), 0.8), np.full((1, 2, 2), 0.7), known=False)
    src.joint[0][np.diag_indices(2)] = 0.8
    sample = Sample(np.arange(2), SRSWOR(4, 2))
    with pytest.warns(UserWarning, match="approximate"):
        variance_estimate_plugin("hajek1", np.ones((2, 2)), None, src, sample, TimeGrid(1.0, 2), KernelSpec("gaussian", 1.0))
