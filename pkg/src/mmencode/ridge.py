"""Multi-target ridge regression with per-target alpha chosen by exact LOO-CV."""

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, MultiOutputMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .data import TimeSeriesMatrix
from .validation import check_matrix, check_same_rows

__all__ = ["DEFAULT_ALPHAS", "RidgeLOOCV", "fit_ridge_loocv", "loo_mse_path"]

DEFAULT_ALPHAS = np.logspace(-3, 8, 12)


class RankError(ValueError):
    """The centered design carries no information."""


def _center(X, Y, standardize):
    x_mean = X.mean(axis=0)
    Xc = X - x_mean
    x_scale = np.ones(X.shape[1])
    if standardize:
        sd = Xc.std(axis=0)
        x_scale = np.where(sd > 0, sd, 1.0)
        Xc = Xc / x_scale
    y_mean = Y.mean(axis=0)
    return Xc, Y - y_mean, x_mean, x_scale, y_mean


def _thin_svd(Xc):
    U, s, Vt = linalg.svd(Xc, full_matrices=False, lapack_driver="gesdd")
    tol = s[0] * max(Xc.shape) * np.finfo(float).eps if s.size else 0.0
    keep = s > tol
    if not np.any(keep):
        raise RankError("design has rank 0 after centering")
    return U[:, keep], s[keep], Vt[keep]


def loo_mse_path(X, Y, alphas, standardize=False):
    """Exact leave-one-out MSE for every (alpha, target) pair.

    Uses one SVD of the centered design. The intercept is refit inside each
    fold, which adds ``1/T`` to every leverage.

    Returns
    -------
    ndarray of shape (n_alphas, n_targets)
    """
    X = check_matrix(X, "X", min_rows=2)
    Y = check_matrix(Y, "Y", min_rows=2)
    check_same_rows(X, Y, ("design", "targets"))
    Xc, Yc, *_ = _center(X, Y, standardize)
    U, s, _ = _thin_svd(Xc)
    return _loo_from_svd(U, s, Yc, np.asarray(alphas, dtype=float))


def _loo_from_svd(U, s, Yc, alphas):
    T = U.shape[0]
    UtY = U.T @ Yc
    U2 = U ** 2
    out = np.empty((alphas.size, Yc.shape[1]))
    for i, a in enumerate(alphas):
        shrink = s ** 2 / (s ** 2 + a)
        resid = Yc - U @ (shrink[:, None] * UtY)
        lev = 1.0 / T + U2 @ shrink
        denom = np.maximum(1.0 - lev, np.finfo(float).eps)
        out[i] = np.mean((resid / denom[:, None]) ** 2, axis=0)
    return out


class RidgeLOOCV(MultiOutputMixin, RegressorMixin, BaseEstimator):
    """Ridge with one regularization strength per target column.

    For each target the alpha minimizing the closed-form leave-one-out MSE
    is picked from ``alphas`` (ties go to the larger alpha), and the final
    weights are refit on all rows. Design and targets are centered; the
    intercept is left unpenalized.

    Parameters
    ----------
    alphas : sequence of float, default=12 log-spaced values in [1e-3, 1e8]
    standardize : bool, default=False
        Z-score design columns before fitting. Weights are reported on the
        original scale either way.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features, n_targets)
    intercept_ : ndarray of shape (n_targets,)
    alpha_ : ndarray of shape (n_targets,)
    loo_mse_ : ndarray of shape (n_alphas, n_targets)
    """

    def __init__(self, alphas=None, standardize=False):
        self.alphas = alphas
        self.standardize = standardize

    def _grid(self):
        grid = DEFAULT_ALPHAS if self.alphas is None else np.asarray(self.alphas, dtype=float).ravel()
        if grid.size == 0 or np.any(grid <= 0) or not np.all(np.isfinite(grid)):
            raise ValueError("alphas must be a nonempty list of positive finite values")
        return np.sort(grid)

    def fit(self, X, y):
        X = check_matrix(X, "design", min_rows=2)
        Y = check_matrix(y, "targets", min_rows=2)
        check_same_rows(X, Y, ("design", "targets"))
        grid = self._grid()
        Xc, Yc, x_mean, x_scale, y_mean = _center(X, Y, self.standardize)
        U, s, Vt = _thin_svd(Xc)

        mse = _loo_from_svd(U, s, Yc, grid)
        # reversed argmin -> ties resolve to the largest alpha
        best = grid.size - 1 - np.argmin(mse[::-1], axis=0)

        UtY = U.T @ Yc
        coef = np.empty((X.shape[1], Y.shape[1]))
        for g in np.unique(best):
            cols = best == g
            d = s / (s ** 2 + grid[g])
            coef[:, cols] = Vt.T @ (d[:, None] * UtY[:, cols])
        coef /= x_scale[:, None]

        self.coef_ = coef
        self.intercept_ = y_mean - x_mean @ coef
        self.alpha_ = grid[best]
        self.alphas_ = grid
        self.loo_mse_ = mse
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        data = check_matrix(X, "design")
        if data.shape[1] != self.n_features_in_:
            raise ValueError(f"design has {data.shape[1]} columns, model expects {self.n_features_in_}")
        pred = data @ self.coef_ + self.intercept_
        if isinstance(X, TimeSeriesMatrix):
            return X.with_data(pred)
        return pred


def fit_ridge_loocv(design, targets, alpha_grid=None, standardize=False):
    return RidgeLOOCV(alpha_grid, standardize).fit(design, targets)
