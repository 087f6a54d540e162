import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from gmport import model as gm
from gmport.model import GmModel, ModelError

from _models import random_gm, two_point_model


# validation

def test_identity_model_accepted_unchanged():
    m = GmModel.from_arrays([1.0], [[0.0, 0.0]], [np.eye(2)])
    assert m.n == 2 and m.k == 1
    np.testing.assert_array_equal(m.covariances[0], np.eye(2))
    np.testing.assert_array_equal(m.weights, [1.0])


def test_weights_renormalized_within_tolerance():
    m = GmModel.from_arrays([0.5, 0.5000000001], [[0.0], [1.0]], np.zeros((2, 1, 1)))
    assert abs(m.weights.sum() - 1.0) <= 1e-12


def test_weights_off_by_more_than_tolerance_rejected():
    with pytest.raises(ModelError):
        GmModel.from_arrays([0.5, 0.51], [[0.0], [1.0]], np.zeros((2, 1, 1)))


@pytest.mark.parametrize("weights", [[1.0, 0.0], [1.5, -0.5]])
def test_nonpositive_weight_rejected(weights):
    with pytest.raises(ModelError):
        GmModel.from_arrays(weights, [[0.0], [1.0]], np.zeros((2, 1, 1)))


def test_indefinite_covariance_rejected():
    with pytest.raises(ModelError):
        GmModel.from_arrays([1.0], [[0.0, 0.0]], [np.diag([1.0, -0.01])])


def test_asymmetric_covariance_rejected():
    with pytest.raises(ModelError):
        GmModel.from_arrays([1.0], [[0.0, 0.0]], [[[1.0, 0.1], [0.0, 1.0]]])


def test_tiny_asymmetry_is_symmetrized():
    c = np.array([[1.0, 0.1 + 5e-11], [0.1, 1.0]])
    m = GmModel.from_arrays([1.0], [[0.0, 0.0]], [c])
    np.testing.assert_array_equal(m.covariances[0], m.covariances[0].T)


@pytest.mark.parametrize("means,covs", [
    ([[0.0, 0.0]], np.zeros((1, 3, 3))),
    ([[0.0, 0.0], [1.0, 1.0]], np.zeros((1, 2, 2))),
])
def test_dimension_mismatch_rejected(means, covs):
    with pytest.raises(ModelError):
        GmModel.from_arrays([1.0] if len(means) == 1 else [0.5, 0.5], means, covs)


def test_model_arrays_are_read_only():
    m = two_point_model(0.3)
    with pytest.raises(ValueError):
        m.means[0, 0] = 5.0


def test_finite_values_flag():
    assert two_point_model(0.2).is_finite_values
    assert not random_gm(np.random.default_rng(0), 2, 2).is_finite_values


# projection

def test_project_single_component():
    m = GmModel.from_arrays([1.0], [[1.0, 0.0]], [np.eye(2)])
    p = gm.project(m, [1.0, 0.0])
    np.testing.assert_array_equal(p.nus, [1.0])
    np.testing.assert_array_equal(p.sigmas2, [1.0])


def test_project_finite_values_has_zero_variance():
    p = gm.project(two_point_model(0.4), [0.3, 0.7])
    np.testing.assert_array_equal(p.sigmas2, [0.0, 0.0])


def test_project_matches_naive_loops(rng):
    m = random_gm(rng, 3, 2)
    w = rng.normal(size=3)
    p = gm.project(m, w)
    for i in range(m.k):
        nu = sum(w[a] * m.means[i, a] for a in range(3))
        s2 = sum(w[a] * m.covariances[i, a, b] * w[b] for a in range(3) for b in range(3))
        assert p.nus[i] == pytest.approx(nu, rel=1e-13, abs=1e-15)
        assert p.sigmas2[i] == pytest.approx(s2, rel=1e-12)


def test_project_length_mismatch():
    with pytest.raises(ModelError):
        gm.project(two_point_model(0.4), [1.0, 0.0, 0.0])


# cdf

def test_cdf_standard_normal_median():
    m = GmModel.from_arrays([1.0], [[0.0]], [[[1.0]]])
    assert gm.cdf(m, [1.0], 0.0) == 0.5


def test_cdf_limits(rng):
    m = random_gm(rng, 3, 3)
    w = rng.normal(size=3)
    assert gm.cdf(m, w, 1e6) == pytest.approx(1.0, abs=1e-12)
    assert gm.cdf(m, w, -1e6) == pytest.approx(0.0, abs=1e-12)


def test_cdf_finite_values_is_weighted_step():
    m = two_point_model(0.3)
    w = np.array([2.0, -1.0])
    np.testing.assert_allclose(gm.cdf(m, w, [-2.5, -2.0, 0.0, 2.0, 3.0]), [0.0, 0.3, 0.3, 1.0, 1.0])


def test_cdf_single_gaussian_matches_scipy():
    m = GmModel.from_arrays([1.0], [[0.1, -0.2]], [[[0.04, 0.01], [0.01, 0.09]]])
    w = np.array([0.6, 0.4])
    nu = 0.6 * 0.1 - 0.4 * 0.2
    sd = math.sqrt(w @ m.covariances[0] @ w)
    a = np.linspace(-1, 1, 11)
    np.testing.assert_allclose(gm.cdf(m, w, a), norm.cdf(a, nu, sd), rtol=1e-12, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_cdf_nondecreasing(seed):
    rng = np.random.default_rng(seed)
    m = random_gm(rng, 2, 3)
    w = rng.normal(size=2)
    vals = gm.cdf(m, w, np.linspace(-3, 3, 401))
    assert np.all(np.diff(vals) >= 0)
    assert np.all((vals >= 0) & (vals <= 1))


def test_cdf_matches_monte_carlo(rng):
    m = random_gm(rng, 2, 2)
    w = np.array([0.7, 0.3])
    R = gm.sample(m, 10**6, 11) @ w
    p = gm.cdf(m, w, 0.0)
    emp = float(np.mean(R <= 0.0))
    se = math.sqrt(p * (1 - p) / R.size)
    assert abs(emp - p) <= 3 * se


# mgf / cgf

def test_mgf_at_zero_is_one(rng):
    assert gm.mgf(random_gm(rng, 2, 2), [0.5, 0.5], 0.0) == 1.0


def test_mgf_standard_gaussian():
    m = GmModel.from_arrays([1.0], [[0.0]], [[[1.0]]])
    assert gm.mgf(m, [1.0], 1.0) == pytest.approx(math.exp(0.5), rel=1e-14)


def test_mgf_matches_monte_carlo(rng):
    m = random_gm(rng, 2, 2)
    w = np.array([0.4, 0.6])
    x = np.exp(-2.0 * (gm.sample(m, 10**6, 5) @ w))
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - gm.mgf(m, w, -2.0)) <= 3 * se


def test_mgf_overflow_is_flagged():
    m = GmModel.from_arrays([1.0], [[10.0]], [[[1.0]]])
    value, over = gm.mgf(m, [1.0], 100.0, return_overflow=True)
    assert over and value == math.inf
    with pytest.warns(gm.MgfOverflowWarning):
        assert gm.mgf(m, [1.0], 100.0) == math.inf


def test_cgf_at_zero_is_zero(rng):
    assert gm.cgf(random_gm(rng, 3, 4), rng.normal(size=3), 0.0) == 0.0


def test_cgf_stable_for_large_arguments():
    m = GmModel.from_arrays([0.5, 0.5], [[1.0], [-1.0]], [[[1.0]], [[2.0]]])
    val = gm.cgf(m, [1.0], 30.0)
    assert math.isfinite(val)
    # dominant term 900 (= 30^2 * 2 / 2 - 30) plus log(1/2 + tiny)
    assert val == pytest.approx(math.log(0.5) - 30.0 + 900.0, rel=1e-12)


def test_cgf_equals_log_mgf(rng):
    m = random_gm(rng, 2, 2)
    w = rng.normal(size=2)
    for t in (-3.0, -0.5, 0.7, 2.0):
        assert gm.cgf(m, w, t) == pytest.approx(math.log(gm.mgf(m, w, t)), rel=1e-12, abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(-5, 5))
def test_cgf_scaling_identity(seed, t):
    rng = np.random.default_rng(seed)
    m = random_gm(rng, 3, 3)
    w = rng.normal(size=3)
    lhs = gm.cgf(m, w, t)
    rhs = gm.cgf(m, t * w, 1.0)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(-5, 5), st.floats(-5, 5))
def test_cgf_convex_in_t(seed, t1, t2):
    rng = np.random.default_rng(seed)
    m = random_gm(rng, 2, 3)
    w = rng.normal(size=2)
    mid = gm.cgf(m, w, 0.5 * (t1 + t2))
    assert mid <= 0.5 * (gm.cgf(m, w, t1) + gm.cgf(m, w, t2)) + 1e-10


def test_cgf_derivatives_at_zero_are_moments(rng):
    m = random_gm(rng, 3, 3)
    w = rng.normal(size=3)
    mu, cov = gm.mixture_moments(m)
    h = 1e-5
    d1 = (gm.cgf(m, w, h) - gm.cgf(m, w, -h)) / (2 * h)
    d2 = (gm.cgf(m, w, h) - 2 * gm.cgf(m, w, 0.0) + gm.cgf(m, w, -h)) / h**2
    assert d1 == pytest.approx(w @ mu, rel=1e-5)
    assert d2 == pytest.approx(w @ cov @ w, rel=1e-5)


# moments

def test_mixture_moments_single_component(rng):
    m = random_gm(rng, 3, 1)
    mu, cov = gm.mixture_moments(m)
    np.testing.assert_allclose(mu, m.means[0], rtol=1e-15)
    np.testing.assert_allclose(cov, m.covariances[0], rtol=1e-15)


@pytest.mark.parametrize("pi1", [0.05, 0.3, 0.8])
def test_mixture_moments_two_point_model(pi1):
    mu, cov = gm.mixture_moments(two_point_model(pi1))
    np.testing.assert_allclose(mu, [1 - 2 * pi1, 0.0], atol=1e-15)
    np.testing.assert_allclose(cov, np.diag([4 * pi1 * (1 - pi1), 0.0]), atol=1e-15)


def test_mixture_moments_match_monte_carlo(rng):
    m = random_gm(rng, 2, 3)
    x = gm.sample(m, 10**6, 3)
    mu, cov = gm.mixture_moments(m)
    se_mu = x.std(axis=0, ddof=1) / math.sqrt(x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - mu) <= 3 * se_mu)
    dev = x - x.mean(axis=0)
    prod = dev[:, 0] * dev[:, 1]
    assert abs(prod.mean() - cov[0, 1]) <= 3 * prod.std(ddof=1) / math.sqrt(x.shape[0])


# sampling

def test_sample_zero_covariance_rows_equal_mean():
    m = GmModel.finite_values([1.0], [[0.1, -0.2, 0.3]])
    x = gm.sample(m, 100, 0)
    assert np.all(x == m.means[0])


def test_sample_is_deterministic(rng):
    m = random_gm(rng, 3, 2)
    np.testing.assert_array_equal(gm.sample(m, 1000, 42), gm.sample(m, 1000, 42))


def test_component_frequencies_match_weights():
    m = GmModel.finite_values([0.2, 0.5, 0.3], [[0.0], [1.0], [2.0]])
    count = 10**6
    labels = gm.sample_components(m, count, 9)
    for i, p in enumerate(m.weights):
        freq = np.mean(labels == i)
        assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / count)


# EM

def test_em_single_component_is_closed_form(rng):
    x = rng.normal(size=(400, 2)) @ np.array([[0.2, 0.0], [0.05, 0.1]]) + 0.01
    res = gm.fit_em(x, 1, 0)
    np.testing.assert_allclose(res.model.means[0], x.mean(axis=0), rtol=1e-12, atol=1e-15)
    S = np.cov(x, rowvar=False, bias=True)
    ridge = 1e-6 * np.mean(np.diag(S))
    np.testing.assert_allclose(res.model.covariances[0], S + ridge * np.eye(2), rtol=1e-10)


def test_em_recovers_gaussian_mean(rng):
    truth = GmModel.from_arrays([1.0], [[0.05, -0.02]], [[[0.04, 0.01], [0.01, 0.02]]])
    T = 5000
    x = gm.sample(truth, T, 1)
    res = gm.fit_em(x, 1, 0)
    se = np.sqrt(np.diag(truth.covariances[0]) / T)
    assert np.all(np.abs(res.model.means[0] - truth.means[0]) <= 5 * se)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_em_objective_never_decreases(seed):
    rng = np.random.default_rng(seed)
    truth = random_gm(rng, 2, 3, mean_scale=0.5)
    x = gm.sample(truth, 600, seed)
    res = gm.fit_em(x, 3, seed, restarts=2)
    hist = np.array(res.history)
    assert np.all(np.diff(hist) >= -1e-9 * np.abs(hist[1:]))


def test_em_more_components_fit_at_least_as_well(rng):
    truth = GmModel.from_arrays([0.3, 0.4, 0.3], [[-0.5, 0.2], [0.0, 0.0], [0.6, -0.3]],
                                np.array([np.eye(2) * 0.01] * 3))
    x = gm.sample(truth, 1500, 4)
    ll1 = gm.fit_em(x, 1, 0).log_likelihood
    ll3 = gm.fit_em(x, 3, 0).log_likelihood
    assert ll3 >= ll1
    assert gm.log_likelihood(gm.fit_em(x, 3, 0).model, x) == pytest.approx(ll3, rel=1e-9)


def test_em_rejects_non_finite_data():
    x = np.ones((10, 2))
    x[3, 1] = np.nan
    with pytest.raises(ModelError):
        gm.fit_em(x, 1)


def test_em_drops_degenerate_component():
    # two identical points far from the rest pull one component onto a spike
    x = np.concatenate([np.zeros((50, 1)), np.ones((50, 1))])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", gm.DegenerateComponentWarning)
        res = gm.fit_em(x, 5, 0, restarts=1, max_iter=300)
    assert res.model.k + res.dropped == 5
    assert np.all(res.model.weights >= 1e-8)


# files

def test_model_file_round_trip(tmp_path, rng):
    m = random_gm(rng, 3, 2)
    path = tmp_path / "m.json"
    gm.save_model(m, path)
    back = gm.load_model(path)
    np.testing.assert_array_equal(back.weights, m.weights)
    np.testing.assert_array_equal(back.means, m.means)
    np.testing.assert_array_equal(back.covariances, m.covariances)


def test_model_file_declared_shape_checked():
    data = two_point_model(0.2).to_dict()
    data["n"] = 3
    with pytest.raises(ModelError):
        GmModel.from_dict(data)


def test_model_file_missing_field():
    data = two_point_model(0.2).to_dict()
    del data["means"]
    with pytest.raises(ModelError):
        GmModel.from_dict(data)
