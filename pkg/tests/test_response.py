import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smoothsurvey.design import SRSWOR, Sample
from smoothsurvey.errors import InvalidConfig, ZeroResponders
from smoothsurvey.grid_kernel import TimeGrid
from smoothsurvey.response import (
    FullResponse,
    HomogeneousGroups,
    MarkovGap,
    ObservationMask,
    estimate_theta_group,
    estimate_theta_stationary,
    simulate_mask,
    theta,
    theta_joint,
)


def _sample(N):
    return Sample(np.arange(N), SRSWOR(N, N))


def test_marginals():
    assert theta(FullResponse(3, 4), 2, 3) == 1.0
    groups = np.array([0, 1, 1])
    model = HomogeneousGroups(np.array([[0.8] * 3, [0.6] * 3]), groups)
    assert theta(model, 0, 2) == 0.8 and theta(model, 2, 1) == 0.6
    markov = MarkovGap([0.9], [0.5], np.zeros(4, int), 6)
    assert all(theta(markov, k, j) == 0.9 for k in range(4) for j in range(6))


def test_joint_examples():
    model = HomogeneousGroups(np.array([[0.8, 0.8]]), [0])
    assert theta_joint(model, 0, 0, 1) == pytest.approx(0.64)
    assert theta_joint(model, 0, 1, 1) == 0.8
    markov = MarkovGap([0.9], [0.5], [0], 5)
    # P(1 then 1) = θ · P(1 -> 1), with the transition from the one-step chain
    P = markov.transition(0)
    assert theta_joint(markov, 0, 2, 3) == pytest.approx(0.9 * P[1, 1], abs=1e-15)
    assert theta_joint(markov, 0, 3, 3) == 0.9


def test_markov_joint_frequency():
    markov = MarkovGap([0.9], [0.5], np.zeros(1_000_000, int), 2)
    rows = markov.simulate_rows(markov.groups, 2, np.random.default_rng(3))
    freq = np.mean(rows[:, 0] & rows[:, 1])
    p = theta_joint(markov, 0, 0, 1)
    assert abs(freq - p) < 3 * np.sqrt(p * (1 - p) / rows.shape[0])


def test_bernoulli_rate_frequency():
    model = HomogeneousGroups(np.full((1, 100), 0.5), np.zeros(10_000, int))
    mask = simulate_mask(model, _sample(10_000), TimeGrid(1.0, 100), 4)
    rate = mask.entries.mean()
    assert abs(rate - 0.5) < 3 * np.sqrt(0.25 / mask.entries.size)


def test_markov_gap_run_lengths():
    th, rho = 0.8, 0.7
    model = MarkovGap([th], [rho], np.zeros(40, int), 5000)
    rows = model.simulate_rows(model.groups, 5000, np.random.default_rng(5))
    lengths = []
    for row in rows:
        # interior gaps only; long rows keep the edge-truncation bias negligible
        padded = np.diff(np.r_[1, row, 1].astype(int))
        starts = np.flatnonzero(padded == -1)
        ends = np.flatnonzero(padded == 1)
        for s, e in zip(starts, ends):
            if s > 0 and e < row.size:
                lengths.append(e - s)
    lengths = np.array(lengths)
    p00 = model.p00(0)
    assert p00 == pytest.approx(rho + (1 - rho) * (1 - th))
    mean_theory = 1 / (1 - p00)
    sd_theory = np.sqrt(p00) / (1 - p00)
    assert abs(lengths.mean() - mean_theory) < 3 * sd_theory / np.sqrt(lengths.size)


def test_full_response_mask():
    mask = simulate_mask(FullResponse(5, 3), _sample(5), TimeGrid(1.0, 3), 0)
    assert np.all(mask.entries == 1)


def test_model_validation():
    with pytest.raises(InvalidConfig):
        MarkovGap([0.5], [1.0], [0], 3)
    with pytest.raises(InvalidConfig):
        HomogeneousGroups([[0.0, 0.5]], [0])
    with pytest.raises(InvalidConfig):
        ObservationMask([0, 1], [[1, 2], [0, 1]])


@given(
    st.floats(0.05, 1.0),
    st.floats(0.0, 0.95),
    st.integers(2, 6),
)
def test_row_law_reproduces_probabilities(th, rho, d):
    model = MarkovGap([th], [rho], [0], d)
    patterns, prob = model.row_law(0)
    assert prob.sum() == pytest.approx(1.0, abs=1e-12)
    marg = prob @ patterns
    joint = np.einsum("p,pj,pk->jk", prob, patterns, patterns)
    np.testing.assert_allclose(marg, model.marginal[0], atol=1e-12)
    np.testing.assert_allclose(joint, model.joint[0], atol=1e-12)


@given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=5), st.floats(0.0, 0.95))
def test_joint_symmetric_and_frechet(ths, rho):
    d = len(ths)
    for model in (HomogeneousGroups([ths], [0]), MarkovGap([ths[0]], [rho], [0], d)):
        J = model.joint[0]
        m = model.marginal[0]
        np.testing.assert_array_equal(J, J.T)
        assert np.all(J <= np.minimum.outer(m, m) + 1e-15)
        assert np.all(J >= np.maximum(np.add.outer(m, m) - 1, 0) - 1e-15)
        np.testing.assert_array_equal(np.diag(J), m)


@given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=6))
def test_bernoulli_covariance_offdiagonal_zero(ths):
    model = HomogeneousGroups([ths], [0])
    cov = model.joint[0] - np.outer(ths, ths)
    off = ~np.eye(len(ths), dtype=bool)
    assert np.all(cov[off] == 0.0)


def test_group_estimate_examples():
    mask = ObservationMask(np.arange(4), [[1, 1], [1, 0], [0, 1], [0, 0]])
    est = estimate_theta_group(mask, np.zeros(4, int))
    assert est.marginal[0].tolist() == [0.5, 0.5]
    assert est.joint[0, 0, 1] == 0.25
    full = estimate_theta_group(ObservationMask(np.arange(3), np.ones((3, 2))), [7, 7, 9])
    assert np.all(full.marginal == 1.0) and full.labels.tolist() == [7, 9]
    with pytest.raises(ZeroResponders) as info:
        estimate_theta_group(ObservationMask(np.arange(2), [[0, 1], [0, 1]]), [0, 0])
    assert info.value.instant == 0


def test_stationary_examples():
    est = estimate_theta_stationary(ObservationMask([0], np.ones((1, 5))), [0])
    assert est.rate[0] == 1.0 and np.all(est.lag_rate[0] == 1.0)
    est = estimate_theta_stationary(ObservationMask([0], [[1, 0, 1, 0, 1, 0]]), [0])
    assert est.rate[0] == 0.5
    assert est.lag_rate[0, 1] == 0.0
    assert est.lag_rate[0, 2] == 0.5


def test_stationary_consistency():
    d, n = 48, 500
    model = MarkovGap([0.8], [0.6], np.zeros(n, int), d)
    mask = simulate_mask(model, _sample(n), TimeGrid(1.0, d), 11)
    est = estimate_theta_stationary(mask, np.zeros(n, int), TimeGrid(1.0, d))
    # SE by the per-unit spread of the pooled lag products
    r = mask.entries.astype(float)
    for m in (0, 1, 2, 5, 10):
        per_unit = (r[:, : d - m] * r[:, m:]).mean(axis=1)
        se = per_unit.std(ddof=1) / np.sqrt(n)
        assert abs(est.lag_rate[0, m] - model.joint[0, 0, m]) < 3 * se + 1e-12


def test_group_estimate_converges():
    d = 8
    theta_true = np.array([np.linspace(0.5, 0.9, d), np.linspace(0.9, 0.6, d)])
    errors = []
    rng = np.random.default_rng(21)
    for n_l in (50, 500, 5000):
        groups = np.repeat([0, 1], n_l)
        model = HomogeneousGroups(theta_true, groups)
        sample = _sample(2 * n_l)
        errs = []
        for _ in range(100):
            mask = simulate_mask(model, sample, TimeGrid(1.0, d), rng)
            est = estimate_theta_group(mask, groups)
            errs.append(np.max(np.abs(est.marginal - theta_true)))
        errors.append(np.mean(errs))
    assert errors[0] > errors[1] > errors[2]


def test_as_source_maps_labels():
    mask = ObservationMask([0, 1, 2], [[1, 1], [1, 0], [1, 1]])
    est = estimate_theta_group(mask, [5, 5, 3])
    src = est.as_source(np.array([3, 5, 5, 3]))
    assert not src.known
    np.testing.assert_array_equal(src.unit_marginal([0, 1]), [[1.0, 1.0], [1.0, 0.5]])
