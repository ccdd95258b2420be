"""PCA fitted on a strided subsample of rows."""

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import TimeSeriesMatrix
from .validation import check_matrix

__all__ = ["SubsampledPCA", "fit_pca"]


def _wrap(like, data):
    if isinstance(like, TimeSeriesMatrix):
        return like.with_data(data)
    return data


class SubsampledPCA(TransformerMixin, BaseEstimator):
    """Principal components estimated from every ``stride``-th row.

    The subsample (rows ``0, stride, 2*stride, ...``) supplies both the
    centering mean and the components, which are then applied to the full
    series. Each component is sign-flipped so that its largest-magnitude
    entry is positive.

    Parameters
    ----------
    n_components : int
    stride : int, default=1

    Attributes
    ----------
    mean_ : ndarray of shape (n_features,)
    components_ : ndarray of shape (n_components, n_features)
        Orthonormal rows.
    explained_variance_ : ndarray of shape (n_components,)
        Variances (ddof=1) of the subsample along each component.
    n_samples_fit_ : int
        Number of rows in the subsample.
    """

    def __init__(self, n_components=100, stride=1):
        self.n_components = n_components
        self.stride = stride

    def fit(self, X, y=None):
        X = check_matrix(X)
        stride = int(self.stride)
        if stride < 1:
            raise ValueError("stride must be a positive integer")
        sub = X[::stride]
        n, d = sub.shape
        k = int(self.n_components)
        if k < 1 or k > min(n, d):
            raise ValueError(
                f"n_components={k} must be in [1, min(rows_used={n}, n_features={d})]"
            )
        mean = sub.mean(axis=0)
        centered = sub - mean
        _, s, vt = linalg.svd(centered, full_matrices=False, lapack_driver="gesdd")
        if n < 2 or s[0] <= np.finfo(float).eps * max(1.0, np.abs(sub).max()) * max(n, d):
            raise ValueError("zero-variance data: all subsampled rows are identical")
        vt = vt[:k]
        flip = np.sign(vt[np.arange(k), np.argmax(np.abs(vt), axis=1)])
        flip[flip == 0] = 1.0
        self.components_ = vt * flip[:, None]
        var = s ** 2 / (n - 1)
        self.explained_variance_ = var[:k]
        self.total_variance_ = var.sum()
        self.explained_variance_ratio_ = self.explained_variance_ / self.total_variance_
        self.mean_ = mean
        self.n_samples_fit_ = n
        self.n_features_in_ = d
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        data = check_matrix(X)
        if data.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {data.shape[1]} columns, PCA was fit on {self.n_features_in_}"
            )
        return _wrap(X, (data - self.mean_) @ self.components_.T)

    def inverse_transform(self, X):
        check_is_fitted(self, "components_")
        data = check_matrix(X)
        if data.shape[1] != self.components_.shape[0]:
            raise ValueError(
                f"reduced data has {data.shape[1]} columns, expected {self.components_.shape[0]}"
            )
        return _wrap(X, data @ self.components_ + self.mean_)


def fit_pca(data, n_comp, subsample_stride=1):
    return SubsampledPCA(n_comp, subsample_stride).fit(data)
