import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmencode.alignment import AlignmentConfig, AlignmentError, LagDesigner, build_design, check_target_alignment
from mmencode.data import TimeSeriesMatrix


def lag_oracle(X, bounds, delay, sw):
    """Row-by-row construction straight from the definition."""
    T, D = X.shape
    ends = list(bounds[1:]) + [T]
    out = np.zeros((T, D * sw))
    for start, end in zip(bounds, ends):
        for t in range(start, end):
            for j in range(sw):
                src = t - delay - j
                if src >= start:
                    out[t, j * D:(j + 1) * D] = X[src]
    return out


def test_identity_configuration(rng):
    X = TimeSeriesMatrix(rng.standard_normal((10, 3)), (0, 4))
    design, idx = build_design(X, AlignmentConfig(1, 0))
    np.testing.assert_array_equal(design.data, X.data)
    np.testing.assert_array_equal(idx, np.arange(10))


def test_two_tr_window_after_three_tr_delay():
    X = TimeSeriesMatrix(np.arange(8.0)[:, None], (0,))
    design, _ = build_design(X, AlignmentConfig(2, 3))
    np.testing.assert_array_equal(design.data[5], [2, 1])
    np.testing.assert_array_equal(design.data[3], [0, 0])
    np.testing.assert_array_equal(design.data[:3], 0)


def test_lags_do_not_cross_runs():
    X = TimeSeriesMatrix(np.arange(1.0, 11.0)[:, None], (0, 5))
    design, _ = build_design(X, AlignmentConfig(1, 2))
    np.testing.assert_array_equal(design.data.ravel(), [0, 0, 1, 2, 3, 0, 0, 6, 7, 8])


def test_drop_rows_index_map():
    X = TimeSeriesMatrix(np.arange(1.0, 11.0)[:, None], (0, 5))
    design, idx = build_design(X, AlignmentConfig(2, 1, "drop_rows"))
    np.testing.assert_array_equal(idx, [2, 3, 4, 7, 8, 9])
    np.testing.assert_array_equal(design.data, [[2, 1], [3, 2], [4, 3], [7, 6], [8, 7], [9, 8]])
    assert design.run_boundaries == (0, 3)


def test_drop_rows_emptying_every_run():
    X = TimeSeriesMatrix(np.ones((6, 2)), (0, 3))
    with pytest.raises(AlignmentError):
        build_design(X, AlignmentConfig(2, 2, "drop_rows"))


def test_drop_rows_skips_short_run():
    X = TimeSeriesMatrix(np.arange(7.0)[:, None], (0, 2))
    design, idx = build_design(X, AlignmentConfig(1, 2, "drop_rows"))
    np.testing.assert_array_equal(idx, [4, 5, 6])
    assert design.run_boundaries == (0,)


@pytest.mark.parametrize("kwargs", [dict(stimulus_window=0), dict(hrf_delay=-1),
                                    dict(boundary_policy="wrap")])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        AlignmentConfig(**kwargs)


def test_target_alignment_checks():
    a = TimeSeriesMatrix(np.zeros((10, 2)), (0, 3, 6))
    check_target_alignment(a, TimeSeriesMatrix(np.ones((10, 4)), (0, 3, 6)))
    with pytest.raises(AlignmentError, match="10.*9|9.*10"):
        check_target_alignment(a, TimeSeriesMatrix(np.ones((9, 4)), (0, 3, 6)))
    with pytest.raises(AlignmentError, match="boundary 2"):
        check_target_alignment(a, TimeSeriesMatrix(np.ones((10, 4)), (0, 3, 7)))


def test_lag_designer_sklearn_api(rng):
    X = rng.standard_normal((12, 2))
    est = LagDesigner(stimulus_window=2, hrf_delay=1)
    out = est.fit_transform(X, run_boundaries=(0, 6))
    np.testing.assert_array_equal(out, lag_oracle(X, (0, 6), 1, 2))
    assert est.get_params() == {"stimulus_window": 2, "hrf_delay": 1, "boundary_policy": "zero_pad"}


@st.composite
def lagged_problems(draw):
    lengths = draw(st.lists(st.integers(1, 12), min_size=1, max_size=4))
    D = draw(st.integers(1, 4))
    sw = draw(st.integers(1, 4))
    delay = draw(st.integers(0, 5))
    seed = draw(st.integers(0, 2**32 - 1))
    X = np.random.default_rng(seed).standard_normal((sum(lengths), D))
    bounds = tuple(np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(int))
    return TimeSeriesMatrix(X, bounds), delay, sw


@settings(max_examples=150, deadline=None)
@given(lagged_problems())
def test_matches_row_by_row_construction(problem):
    X, delay, sw = problem
    design, _ = build_design(X, AlignmentConfig(sw, delay))
    np.testing.assert_array_equal(design.data, lag_oracle(X.data, X.run_boundaries, delay, sw))


@settings(max_examples=150, deadline=None)
@given(lagged_problems())
def test_single_window_is_within_run_shift(problem):
    X, delay, _ = problem
    design, _ = build_design(X, AlignmentConfig(1, delay))
    for a, b in X.runs():
        block = X.data[a:b]
        expect = np.zeros_like(block)
        if delay < b - a:
            expect[delay:] = block[:b - a - delay]
        np.testing.assert_array_equal(design.data[a:b], expect)


@settings(max_examples=150, deadline=None)
@given(lagged_problems())
def test_most_recent_lag_first(problem):
    X, delay, sw = problem
    design, _ = build_design(X, AlignmentConfig(sw, delay))
    D = X.shape[1]
    for a, b in X.runs():
        for t in range(a + delay + sw - 1, b):
            np.testing.assert_array_equal(design.data[t, :D], X.data[t - delay])


@settings(max_examples=150, deadline=None)
@given(lagged_problems())
def test_drop_rows_is_zero_pad_minus_padded_rows(problem):
    X, delay, sw = problem
    padded, _ = build_design(X, AlignmentConfig(sw, delay, "zero_pad"))
    try:
        dropped, idx = build_design(X, AlignmentConfig(sw, delay, "drop_rows"))
    except AlignmentError:
        assert all(b - a < delay + sw for a, b in X.runs())
        return
    np.testing.assert_array_equal(dropped.data, padded.data[idx])
    expected = [t for a, b in X.runs() for t in range(a + delay + sw - 1, b)]
    np.testing.assert_array_equal(idx, expected)
