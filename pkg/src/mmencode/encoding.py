"""Feature-to-parcel encoding model: PCA, lagging and LOO-ridge in one estimator."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .alignment import AlignmentConfig, build_design, check_target_alignment
from .data import TimeSeriesMatrix
from .decomposition import SubsampledPCA
from .ridge import RidgeLOOCV
from .validation import check_matrix


def _as_tsm(X, run_boundaries=None):
    if isinstance(X, TimeSeriesMatrix):
        return X if run_boundaries is None else TimeSeriesMatrix(X.data, run_boundaries, X.tr_seconds)
    return TimeSeriesMatrix(np.asarray(X, dtype=float), run_boundaries or (0,))


class LaggedRidgeEncoder(RegressorMixin, BaseEstimator):
    """Reduce features with PCA, lag them behind the BOLD signal, fit ridge.

    Parameters
    ----------
    n_components : int, default=100
        PCs kept; clipped to what the PCA fit data supports when
        ``clip_components`` is set.
    stimulus_window : int, default=1
    hrf_delay : int, default=3
    pca_stride : int, default=5
        PCA is estimated from every ``pca_stride``-th row.
    alphas : sequence of float or None
    standardize : bool, default=False
    clip_components : bool, default=False

    Attributes
    ----------
    pca_ : SubsampledPCA
    ridge_ : RidgeLOOCV
    n_components_ : int
        Components actually kept.
    """

    def __init__(self, n_components=100, stimulus_window=1, hrf_delay=3, pca_stride=5,
                 alphas=None, standardize=False, clip_components=False):
        self.n_components = n_components
        self.stimulus_window = stimulus_window
        self.hrf_delay = hrf_delay
        self.pca_stride = pca_stride
        self.alphas = alphas
        self.standardize = standardize
        self.clip_components = clip_components

    def _design(self, X):
        # project without centering so padded lags stay the image of a zero
        # feature row; the ridge intercept absorbs the offset
        reduced = X.with_data(check_matrix(X.data, "X") @ self.pca_.components_.T)
        cfg = AlignmentConfig(self.stimulus_window, self.hrf_delay, "zero_pad")
        return build_design(reduced, cfg)[0]

    def fit(self, X, y, pca_data=None):
        """Fit on features ``X`` and BOLD ``y`` (row- and run-aligned).

        ``pca_data`` optionally supplies different features for the PCA fit
        (for example held-out stimuli); by default ``X`` is used.
        """
        X = _as_tsm(X)
        y = _as_tsm(y, X.run_boundaries if not isinstance(y, TimeSeriesMatrix) else None)
        check_target_alignment(X, y)
        pca_src = X.data if pca_data is None else _as_tsm(pca_data).data
        k = int(self.n_components)
        if self.clip_components:
            rows_used = -(-pca_src.shape[0] // int(self.pca_stride))
            k = min(k, rows_used, pca_src.shape[1])
        self.pca_ = SubsampledPCA(k, self.pca_stride).fit(pca_src)
        self.n_components_ = k
        self.ridge_ = RidgeLOOCV(self.alphas, self.standardize).fit(self._design(X).data, y.data)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "ridge_")
        X = _as_tsm(X)
        return X.with_data(self.ridge_.predict(self._design(X).data))
