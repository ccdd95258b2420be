"""Per-session standardization followed by PCA, as applied before HMM fitting."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..decomposition import SubsampledPCA
from ..validation import check_matrix, check_same_rows, resolve_boundaries, run_slices


def session_stats(Z, bounds):
    """Per-session ``(mean, std)`` pairs; rejects zero-variance channels."""
    stats = []
    for i, sl in enumerate(run_slices(bounds, Z.shape[0])):
        block = Z[sl]
        sd = block.std(axis=0)
        bad = np.flatnonzero(~(sd > 0))
        if bad.size:
            raise ValueError(f"session {i}: zero-variance channel(s) {bad[:10].tolist()}")
        stats.append((block.mean(axis=0), sd))
    return stats


def standardize_sessions(Z, bounds, stats=None):
    stats = stats if stats is not None else session_stats(Z, bounds)
    out = np.empty_like(Z)
    for (m, s), sl in zip(stats, run_slices(bounds, Z.shape[0])):
        out[sl] = (Z[sl] - m) / s
    return out, stats


def destandardize_sessions(Z, bounds, stats):
    out = np.empty_like(Z)
    for (m, s), sl in zip(stats, run_slices(bounds, Z.shape[0])):
        out[sl] = Z[sl] * s + m
    return out


class HmmPreprocessor(BaseEstimator):
    """Standardize each session of each stream, then reduce with PCA.

    Parameters
    ----------
    n_components_x : int or None, default=10
        PCs kept for the predictor stream; ``None`` skips PCA on it.
    n_components_y : int, default=100

    Attributes
    ----------
    session_stats_y_, session_stats_x_ : list of (mean, std)
        Statistics of the training sessions.
    pca_y_, pca_x_ : SubsampledPCA
    """

    def __init__(self, n_components_x=10, n_components_y=100):
        self.n_components_x = n_components_x
        self.n_components_y = n_components_y

    def fit(self, y, x=None, run_boundaries=None):
        Y = check_matrix(y, "y")
        bounds = resolve_boundaries(y, run_boundaries)
        Ys, self.session_stats_y_ = standardize_sessions(Y, bounds)
        self.pca_y_ = SubsampledPCA(self.n_components_y).fit(Ys)
        self.pca_x_ = None
        self.session_stats_x_ = None
        if x is not None:
            X = check_matrix(x, "x")
            check_same_rows(X, Y, ("x", "y"))
            Xs, self.session_stats_x_ = standardize_sessions(X, bounds)
            if self.n_components_x is not None:
                self.pca_x_ = SubsampledPCA(self.n_components_x).fit(Xs)
        return self

    def _reduce(self, Z, bounds, pca):
        Zs, stats = standardize_sessions(Z, bounds)
        return (pca.transform(Zs) if pca is not None else Zs), stats

    def transform_y(self, y, run_boundaries=None):
        """Return ``(y_pc, session_stats)`` for new data standardized by its own sessions."""
        check_is_fitted(self, "pca_y_")
        return self._reduce(check_matrix(y, "y"), resolve_boundaries(y, run_boundaries), self.pca_y_)

    def transform_x(self, x, run_boundaries=None):
        check_is_fitted(self, "pca_y_")
        if self.session_stats_x_ is None:
            raise ValueError("preprocessor was fit without a predictor stream")
        return self._reduce(check_matrix(x, "x"), resolve_boundaries(x, run_boundaries), self.pca_x_)

    def pooled_stats_y(self):
        """Average training-session statistics, for sessions whose own are unknown."""
        means = np.mean([m for m, _ in self.session_stats_y_], axis=0)
        stds = np.mean([s for _, s in self.session_stats_y_], axis=0)
        return means, stds

    def inverse_transform_y(self, y_pc, run_boundaries=(0,), session_stats=None):
        """Back-project PCs and undo standardization.

        Without ``session_stats`` every session is de-standardized with the
        pooled training statistics.
        """
        check_is_fitted(self, "pca_y_")
        Z = self.pca_y_.inverse_transform(check_matrix(y_pc, "y_pc"))
        bounds = resolve_boundaries(Z, run_boundaries)
        if session_stats is None:
            session_stats = [self.pooled_stats_y()] * len(bounds)
        return destandardize_sessions(Z, bounds, session_stats)


def preprocess(x, y, n_components_x=10, n_components_y=100, run_boundaries=None):
    """Fit a preprocessor on ``(x, y)``; return ``(x_pc, y_pc, preprocessor)``."""
    prep = HmmPreprocessor(n_components_x, n_components_y).fit(y, x, run_boundaries)
    y_pc, _ = prep.transform_y(y, run_boundaries)
    x_pc = prep.transform_x(x, run_boundaries)[0] if x is not None else None
    return x_pc, y_pc, prep
