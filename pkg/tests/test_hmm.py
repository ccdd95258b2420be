import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from mmencode.evaluation import pearson_per_parcel
from mmencode.hmm import (
    GaussianHMM,
    GaussianLinearHMM,
    HmmPipelineConfig,
    HmmPreprocessor,
    forward_backward,
    predict_glhmm_pipeline,
    preprocess,
    sample_hmm,
)
from mmencode.hmm._inference import ZeroProbabilityError, forward_backward_log, forward_backward_scaled
from oracles import enumerate_hmm
from planted import coupled_parcels, markov_path, matched_accuracy, planted_glhmm, sticky_transmat


def random_chain(rng, K, T):
    pi = rng.dirichlet(np.ones(K))
    A = rng.dirichlet(np.ones(K), size=K)
    B = rng.uniform(0.01, 1.0, size=(T, K))
    return pi, A, B


@pytest.mark.parametrize("fb", [forward_backward_scaled, forward_backward_log])
def test_exact_posteriors_small_chain(fb, rng):
    pi, A, B = random_chain(rng, 2, 5)
    gamma, xi, _, loglik = fb(np.log(pi), np.log(A), np.log(B))
    g, x, ll = enumerate_hmm(pi, A, B)
    np.testing.assert_allclose(gamma, g, atol=1e-10)
    np.testing.assert_allclose(xi, x, atol=1e-10)
    assert loglik == pytest.approx(ll, abs=1e-10)


def test_runs_are_independent_chains(rng):
    pi, A, B = random_chain(rng, 3, 9)
    gamma, xi, _, ll = forward_backward_scaled(np.log(pi), np.log(A), np.log(B), (0, 4))
    g1, x1, l1 = enumerate_hmm(pi, A, B[:4])
    g2, x2, l2 = enumerate_hmm(pi, A, B[4:])
    np.testing.assert_allclose(gamma, np.vstack([g1, g2]), atol=1e-12)
    np.testing.assert_allclose(xi[:3], x1, atol=1e-12)
    np.testing.assert_array_equal(xi[3], 0)
    np.testing.assert_allclose(xi[4:], x2, atol=1e-12)
    assert ll == pytest.approx(l1 + l2, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(1, 60), st.integers(0, 2**32 - 1), st.integers(0, 3))
def test_scaled_equals_log_space(K, T, seed, n_cuts):
    r = np.random.default_rng(seed)
    pi, A = r.dirichlet(np.ones(K)), r.dirichlet(np.ones(K), size=K)
    log_B = r.normal(0, 20, size=(T, K))
    bounds = tuple(sorted({0, *r.integers(1, T, n_cuts).tolist()})) if T > 1 else (0,)
    a = forward_backward_scaled(np.log(pi), np.log(A), log_B, bounds)
    b = forward_backward_log(np.log(pi), np.log(A), log_B, bounds)
    np.testing.assert_allclose(a[0], b[0], atol=1e-10)
    np.testing.assert_allclose(a[1], b[1], atol=1e-10)
    assert a[3] == pytest.approx(b[3], rel=1e-10, abs=1e-9)
    np.testing.assert_allclose(a[0].sum(axis=1), 1, atol=1e-10)
    # xi rows marginalize to gamma wherever t and t+1 share a run
    inner = np.setdiff1d(np.arange(T - 1), np.asarray(bounds[1:]) - 1)
    np.testing.assert_allclose(a[1][inner].sum(axis=2), a[0][inner], atol=1e-10)
    np.testing.assert_allclose(a[1][inner].sum(axis=1), a[0][inner + 1], atol=1e-10)


def test_long_series_no_underflow(rng):
    T, K = 100_000, 3
    log_B = rng.normal(-300, 30, size=(T, K))
    pi, A = np.full(K, 1 / K), sticky_transmat(K, 0.9)
    gamma, _, _, ll = forward_backward_scaled(np.log(pi), np.log(A), log_B, return_xi=False)
    assert np.all(np.isfinite(gamma)) and np.isfinite(ll)
    np.testing.assert_allclose(gamma.sum(axis=1), 1, atol=1e-10)


def test_impossible_observation_rejected():
    log_B = np.zeros((3, 2))
    log_B[1] = -np.inf
    with pytest.raises((ZeroProbabilityError, ValueError, FloatingPointError)):
        forward_backward_scaled(np.log([0.5, 0.5]), np.log(np.full((2, 2), 0.5)), log_B)


def test_single_state_model(rng):
    Y = rng.standard_normal((20, 3))
    mu, S = rng.standard_normal(3), np.eye(3) * 2 + 0.5
    m = GaussianHMM.from_params([1.0], [[1.0]], [mu], [S])
    out = forward_backward(m, Y)
    np.testing.assert_array_equal(out["gamma"], 1.0)
    assert out["loglik"] == pytest.approx(multivariate_normal(mu, S).logpdf(Y).sum(), abs=1e-9)


def test_absorbing_evidence():
    means = np.array([[0.0, 0.0], [5.0, 5.0]])
    m = GaussianHMM.from_params([0.5, 0.5], np.eye(2), means, np.array([np.eye(2)] * 2))
    gamma = forward_backward(m, np.zeros((30, 2)))["gamma"]
    assert np.all(gamma[:, 0] > 1 - 1e-10)


def test_model_posteriors_match_enumeration(rng):
    A = sticky_transmat(2, 0.8)
    z = markov_path(rng, A, [0.5, 0.5], 6)
    Y = np.array([[0.0], [3.0]])[z] + 0.5 * rng.standard_normal((6, 1))
    m = GaussianHMM(n_states=2, random_state=0).fit(Y)
    out = forward_backward(m, Y)
    B = np.column_stack([multivariate_normal(m.means_[k], m.covars_[k]).pdf(Y) for k in range(2)])
    g, x, ll = enumerate_hmm(m.startprob_, m.transmat_, B)
    np.testing.assert_allclose(out["gamma"], g, atol=1e-8)
    np.testing.assert_allclose(out["xi"], x, atol=1e-8)
    assert out["loglik"] == pytest.approx(ll, abs=1e-8)


def test_single_state_fit_is_sample_moments(rng):
    Y = rng.standard_normal((200, 4)) @ rng.standard_normal((4, 4)) + 3.0
    m = GaussianHMM(n_states=1, coef_prior_precision=0.0, reg_covar=0.0, prior_dof=4 + 1).fit(Y)
    np.testing.assert_allclose(m.means_[0], Y.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(m.covars_[0], np.cov(Y, rowvar=False, ddof=0), atol=1e-10)
    np.testing.assert_array_equal(m.posteriors_, 1.0)


def test_planted_gaussian_chain_recovered():
    rng = np.random.default_rng(3)
    K, d, T = 3, 5, 4000
    A = np.array([[0.9, 0.05, 0.05], [0.1, 0.8, 0.1], [0.05, 0.15, 0.8]])
    z = markov_path(rng, A, np.full(K, 1 / K), T)
    means = np.array([[0.0] * d, [5.0] * d, [-5.0] * d])
    Y = means[z] + rng.standard_normal((T, d))
    m = GaussianHMM(n_states=K, random_state=0).fit(Y)
    acc, mapping = matched_accuracy(z, m.predict(Y), K)
    assert acc > 0.95
    order = [mapping[k] for k in range(K)]
    A_hat = m.transmat_[np.ix_(order, order)]
    assert np.abs(A_hat - A).max() < 0.05


def test_fitted_model_invariants(rng):
    d = planted_glhmm(0, K=3, dx=3, dy=6, T=600)
    for m in (GaussianHMM(n_states=4, random_state=0).fit(d["y"]),
              GaussianLinearHMM(n_states=4, random_state=0).fit(d["x"], d["y"])):
        assert abs(m.startprob_.sum() - 1) <= 1e-12
        np.testing.assert_allclose(m.transmat_.sum(axis=1), 1, atol=1e-12)
        for S in m.covars_:
            np.testing.assert_array_equal(S, S.T)
            assert np.linalg.eigvalsh(S).min() >= 1e-10
        assert np.all(np.diff(m.free_energy_) <= 1e-6)
        assert m.converged_ and m.n_iter_ <= m.max_iter
    assert not hasattr(GaussianHMM(n_states=2).fit(d["y"]), "coef_")


@pytest.mark.parametrize("K", [2, 5])
def test_free_energy_nonincreasing(K):
    d = planted_glhmm(K, K=3, dx=4, dy=8, T=500)
    for m in (GaussianHMM(n_states=K, random_state=1).fit(d["y"], run_boundaries=(0, 250)),
              GaussianLinearHMM(n_states=K, random_state=1).fit(d["x"], d["y"], run_boundaries=(0, 250))):
        assert np.all(np.diff(m.free_energy_) <= 1e-6)


def test_fit_is_deterministic():
    d = planted_glhmm(5, K=3, dx=3, dy=6, T=400)
    a = GaussianLinearHMM(n_states=3, random_state=7).fit(d["x"], d["y"])
    b = GaussianLinearHMM(n_states=3, random_state=7).fit(d["x"], d["y"])
    np.testing.assert_array_equal(a.free_energy_, b.free_energy_)
    np.testing.assert_array_equal(a.coef_, b.coef_)
    np.testing.assert_array_equal(a.posteriors_, b.posteriors_)


def test_linear_with_zero_regressors_reduces_to_gaussian():
    d = planted_glhmm(2, K=3, dx=3, dy=5, T=800)
    g = GaussianHMM(n_states=3, random_state=0).fit(d["y"])
    gl = GaussianLinearHMM(n_states=3, random_state=0).fit(np.zeros((800, 3)), d["y"])
    np.testing.assert_allclose(gl.coef_, 0, atol=1e-12)
    np.testing.assert_allclose(gl.means_, g.means_, atol=1e-6)
    np.testing.assert_allclose(gl.covars_, g.covars_, atol=1e-6)
    np.testing.assert_allclose(gl.predict(np.zeros((50, 3))), sample_hmm(g, 50, mode="expectation"), atol=1e-6)


def test_planted_glhmm_recovery_small():
    d = planted_glhmm(1, K=3, dx=4, dy=12, T=1500)
    m = GaussianLinearHMM(n_states=3, random_state=0).fit(d["x"], d["y"])
    acc, mapping = matched_accuracy(d["z"], m.predict_states(d["x"], d["y"]), 3)
    assert acc > 0.95
    beta_hat = np.array([m.coef_[mapping[k]] for k in range(3)])
    assert np.linalg.norm(beta_hat - d["beta"]) / np.linalg.norm(d["beta"]) < 0.1


# -- sampling ---------------------------------------------------------------------


def test_degenerate_emission_sample():
    m = GaussianHMM.from_params([1.0], [[1.0]], [[1.0, -2.0]], [np.eye(2) * 1e-10])
    out = sample_hmm(m, 100, seed=0)
    np.testing.assert_allclose(out, np.tile([1.0, -2.0], (100, 1)), atol=1e-4)


def test_identity_regression_expectation(rng):
    m = GaussianLinearHMM.from_params([1.0], [[1.0]], [np.zeros(3)], [np.eye(3)], [np.eye(3)])
    x = rng.standard_normal((40, 3))
    np.testing.assert_allclose(sample_hmm(m, 40, x=x, mode="expectation"), x, atol=1e-14)


def test_transition_counts_follow_transmat():
    A = np.array([[0.7, 0.2, 0.1], [0.3, 0.5, 0.2], [0.1, 0.1, 0.8]])
    m = GaussianHMM.from_params(np.full(3, 1 / 3), A, np.eye(3), np.array([np.eye(3)] * 3))
    _, z = sample_hmm(m, 100_000, seed=11, return_states=True)
    C = np.zeros((3, 3))
    np.add.at(C, (z[:-1], z[1:]), 1)
    assert np.abs(C / C.sum(axis=1, keepdims=True) - A).max() < 0.01


def test_sampling_deterministic_and_requires_x(rng):
    m = GaussianLinearHMM.from_params([0.5, 0.5], np.full((2, 2), 0.5), np.zeros((2, 2)),
                                      np.array([np.eye(2)] * 2), np.zeros((2, 1, 2)))
    x = rng.standard_normal((30, 1))
    np.testing.assert_array_equal(sample_hmm(m, 30, x=x, seed=4), sample_hmm(m, 30, x=x, seed=4))
    with pytest.raises(ValueError, match="requires x"):
        sample_hmm(m, 30)
    with pytest.raises(ValueError):
        sample_hmm(m, 31, x=x)


# -- preprocessing and pipeline -------------------------------------------------------


def test_single_session_standardization(rng):
    y = rng.standard_normal((300, 20)) * 3 + 7
    prep = HmmPreprocessor(None, 20).fit(y)
    Z = prep.pca_y_.inverse_transform(prep.transform_y(y)[0])
    assert np.abs(Z.mean(axis=0)).max() <= 1e-12
    np.testing.assert_allclose(Z.std(axis=0), 1, atol=1e-12)


def test_sessions_standardized_independently(rng):
    y = rng.standard_normal((200, 4))
    y[100:] += 50
    _, y_pc, prep = preprocess(None, y, n_components_y=4, run_boundaries=(0, 100))
    Z = prep.pca_y_.inverse_transform(y_pc)
    np.testing.assert_allclose(Z[:100].mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(Z[100:].mean(axis=0), 0, atol=1e-12)


def test_preprocess_roundtrip_rank_100(rng):
    y = rng.standard_normal((400, 100)) @ rng.standard_normal((100, 130)) + rng.standard_normal(130)
    x = rng.standard_normal((400, 30))
    # one session: per-session scaling of several sessions breaks the rank
    bounds = (0,)
    x_pc, y_pc, prep = preprocess(x, y, 10, 100, bounds)
    assert x_pc.shape == (400, 10) and y_pc.shape == (400, 100)
    back = prep.inverse_transform_y(y_pc, bounds, prep.session_stats_y_)
    np.testing.assert_allclose(back, y, atol=1e-8)


def test_zero_variance_channel_rejected(rng):
    y = rng.standard_normal((20, 3))
    y[10:, 1] = 2.0
    with pytest.raises(ValueError, match="session 1"):
        preprocess(None, y, n_components_y=2, run_boundaries=(0, 10))


def test_strategy_i_with_true_predictors():
    x, y, _ = coupled_parcels(0, 4000)
    cfg = HmmPipelineConfig(n_states=3, seed=0)
    pred = predict_glhmm_pipeline(y[:2000], train_x=x[:2000], test_x=x[2000:], cfg=cfg)
    assert pearson_per_parcel(pred, y[2000:]).mean_r >= 0.5


def test_strategy_ii_with_noise_provider():
    x, y, _ = coupled_parcels(0, 4000)
    cfg = HmmPipelineConfig(n_states=3, seed=0)
    noise = np.random.default_rng(99).standard_normal((2000, x.shape[1]))
    pred = predict_glhmm_pipeline(y[:2000], train_x=x[:2000], test_x=noise, cfg=cfg)
    assert abs(pearson_per_parcel(pred, y[2000:]).mean_r) <= 0.05


def test_gaussian_kind_on_noise():
    rng = np.random.default_rng(5)
    y = rng.standard_normal((4000, 120))
    cfg = HmmPipelineConfig(kind="gaussian", n_states=4, seed=0)
    pred = predict_glhmm_pipeline(y[:2000], test_T=2000, cfg=cfg)
    assert abs(pearson_per_parcel(pred, y[2000:]).mean_r) <= 0.05


def test_memorization_ceiling():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((600, 12))
    y = x @ rng.standard_normal((12, 30))
    cfg = HmmPipelineConfig(n_states=2, n_components_x=12, n_components_y=12, seed=0)
    pred = predict_glhmm_pipeline(y, train_x=x, test_x=x, cfg=cfg)
    assert pearson_per_parcel(pred, y).mean_r >= 0.99


def test_pipeline_errors(rng):
    y = rng.standard_normal((50, 5))
    with pytest.raises(ValueError):
        predict_glhmm_pipeline(y, test_x=None, cfg=HmmPipelineConfig(n_states=2, n_components_y=3))
    with pytest.raises(ValueError):
        predict_glhmm_pipeline(y, cfg=HmmPipelineConfig(kind="gaussian", n_states=2, n_components_y=3))
