import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmencode.data import TimeSeriesMatrix
from mmencode.stacking import StackedRegression, apply_stacking, fit_stacking, simplex_kkt_residual, simplex_lstsq
from oracles import simplex_qp_enumerate


def test_identical_sets_get_uniform_weights(rng):
    p = rng.standard_normal((50, 4))
    y = p + rng.standard_normal((50, 4))
    m = fit_stacking([p, p.copy()], y)
    np.testing.assert_allclose(m.weights_, 0.5, atol=1e-12)


def test_constructed_optimum(rng):
    p1, p2 = rng.standard_normal((80, 5)), rng.standard_normal((80, 5))
    m = fit_stacking([p1, p2], 0.7 * p1 + 0.3 * p2)
    np.testing.assert_allclose(m.weights_, np.tile([0.7, 0.3], (5, 1)), atol=1e-8)


def test_dominant_predictor(rng):
    y = rng.standard_normal((200, 3))
    p1 = y + 1e-3 * rng.standard_normal((200, 3))
    p2 = rng.standard_normal((200, 3))
    np.testing.assert_allclose(fit_stacking([p1, p2], y).weights_, np.tile([1, 0], (3, 1)), atol=1e-3)


def test_selection_and_uniform_application(rng):
    p1, p2 = rng.standard_normal((10, 3)), rng.standard_normal((10, 3))
    m = fit_stacking([p1, p2], p1)
    m.weights_ = np.tile([1.0, 0.0], (3, 1))
    np.testing.assert_array_equal(apply_stacking(m, [p1, p2]), p1)
    m3 = fit_stacking([p1, p1, p1], p2)
    np.testing.assert_allclose(m3.predict([p1, p1, p1]), p1, atol=1e-14)


def test_weights_feasible_and_rows_sum_to_one(rng):
    preds = [rng.standard_normal((60, 7)) for _ in range(4)]
    m = fit_stacking(preds, rng.standard_normal((60, 7)))
    assert np.all(m.weights_ >= 0)
    np.testing.assert_allclose(m.weights_.sum(axis=1), 1, atol=1e-10)
    np.testing.assert_array_equal(m.intercept_, 0)


def test_degenerate_parcel_uniform_and_flagged(rng):
    preds = [rng.standard_normal((20, 3)) for _ in range(3)]
    y = rng.standard_normal((20, 3))
    y[:, 1] = 4.0
    m = fit_stacking(preds, y)
    np.testing.assert_allclose(m.weights_[1], 1 / 3)
    assert m.degenerate_parcels_.tolist() == [1]


def test_unconstrained_mode(rng):
    p1, p2 = rng.standard_normal((40, 2)), rng.standard_normal((40, 2))
    y = 2.0 * p1 - 0.5 * p2 + 3.0
    m = fit_stacking([p1, p2], y, mode="ridge_unconstrained")
    np.testing.assert_allclose(m.weights_, np.tile([2.0, -0.5], (2, 1)), atol=1e-6)
    np.testing.assert_allclose(m.intercept_, 3.0, atol=1e-6)


def test_standardized_predictions_roundtrip(rng):
    p1, p2 = rng.standard_normal((40, 2)) * 5 + 1, rng.standard_normal((40, 2))
    y = p1 + rng.standard_normal((40, 2))
    m = StackedRegression(standardize_predictions=True).fit([p1, p2], y)
    assert m.predict([p1, p2]).shape == (40, 2)


def test_errors(rng):
    p = rng.standard_normal((10, 2))
    with pytest.raises(ValueError, match="at least 2"):
        fit_stacking([p], p)
    with pytest.raises(ValueError):
        fit_stacking([p, rng.standard_normal((10, 3))], p)
    with pytest.raises(ValueError):
        fit_stacking([p, p], rng.standard_normal((9, 2)))
    with pytest.raises(ValueError):
        StackedRegression(mode="median").fit([p, p], p)
    m = fit_stacking([p, p], p)
    with pytest.raises(ValueError):
        m.predict([p, p, p])


def test_time_series_matrix_output(rng):
    p = TimeSeriesMatrix(rng.standard_normal((10, 2)), (0, 5))
    q = TimeSeriesMatrix(rng.standard_normal((10, 2)), (0, 5))
    out = fit_stacking([p, q], p.data).predict([p, q])
    assert isinstance(out, TimeSeriesMatrix) and out.run_boundaries == (0, 5)


@st.composite
def stacking_problems(draw):
    M = draw(st.integers(2, 4))
    T = draw(st.integers(5, 40))
    seed = draw(st.integers(0, 2**32 - 1))
    r = np.random.default_rng(seed)
    y = r.standard_normal((T, 2))
    preds = [y * r.uniform(-1, 2) + r.standard_normal((T, 2)) * r.uniform(0.1, 2) for _ in range(M)]
    return preds, y


@settings(max_examples=100, deadline=None)
@given(stacking_problems())
def test_matches_support_enumeration(problem):
    preds, y = problem
    m = fit_stacking(preds, y)
    P = np.stack(preds, axis=2)
    T = y.shape[0]
    for p in range(y.shape[1]):
        G, c = P[:, p].T @ P[:, p] / T, P[:, p].T @ y[:, p] / T
        _, f_best = simplex_qp_enumerate(G, c)
        w = m.weights_[p]
        assert 0.5 * w @ G @ w - c @ w <= f_best + 1e-10


@settings(max_examples=100, deadline=None)
@given(stacking_problems())
def test_kkt_conditions(problem):
    preds, y = problem
    m = fit_stacking(preds, y)
    P = np.stack(preds, axis=2)
    T = y.shape[0]
    for p in range(y.shape[1]):
        G, c = P[:, p].T @ P[:, p] / T, P[:, p].T @ y[:, p] / T
        w = m.weights_[p]
        assert simplex_kkt_residual(G, c, w) <= 1e-8
        g = G @ w - c
        active = w > 0
        assert np.ptp(g[active]) <= 1e-8
        assert np.all(g[~active] >= g[active].mean() - 1e-8)


@settings(max_examples=100, deadline=None)
@given(stacking_problems())
def test_never_worse_than_any_single_set(problem):
    preds, y = problem
    out = fit_stacking(preds, y).predict(preds)
    stacked = ((y - out) ** 2).sum(axis=0)
    for p in preds:
        assert np.all(stacked <= ((y - p) ** 2).sum(axis=0) + 1e-12 * (1 + (y ** 2).sum()))


@settings(max_examples=100, deadline=None)
@given(stacking_problems(), st.randoms(use_true_random=False))
def test_permutation_equivariance(problem, rnd):
    preds, y = problem
    order = list(range(len(preds)))
    rnd.shuffle(order)
    a = fit_stacking(preds, y)
    b = fit_stacking([preds[i] for i in order], y)
    np.testing.assert_allclose(b.weights_, a.weights_[:, order], atol=1e-8)
    np.testing.assert_allclose(b.predict([preds[i] for i in order]), a.predict(preds), atol=1e-8)


def test_simplex_solver_degenerate_gram():
    G = np.zeros((3, 3))
    c = np.zeros(3)
    np.testing.assert_allclose(simplex_lstsq(G, c), 1 / 3)
