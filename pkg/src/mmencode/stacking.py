"""Per-parcel stacked regression over several prediction sets."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import TimeSeriesMatrix
from .validation import check_matrix

__all__ = ["StackedRegression", "simplex_lstsq", "simplex_kkt_residual", "fit_stacking", "apply_stacking"]

UNCONSTRAINED_ALPHA = 1e-6


def simplex_lstsq(G, c, tol=1e-10, max_iter=None):
    """Minimize ``0.5 w'Gw - c'w`` over the probability simplex.

    Primal active-set method started from the uniform vector. Steps on the
    free face use the minimum-norm KKT solution, so flat directions (for
    example duplicated predictors) are never moved along and the uniform
    start is kept when it is already optimal.
    """
    G = np.asarray(G, dtype=float)
    c = np.asarray(c, dtype=float)
    m = c.size
    w = np.full(m, 1.0 / m)
    free = np.ones(m, dtype=bool)
    max_iter = max_iter or 10 * m + 20
    scale = max(1.0, np.abs(G).max(), np.abs(c).max())

    for _ in range(max_iter):
        g = G @ w - c
        F = np.flatnonzero(free)
        nf = F.size
        kkt = np.zeros((nf + 1, nf + 1))
        kkt[:nf, :nf] = G[np.ix_(F, F)]
        kkt[:nf, nf] = 1.0
        kkt[nf, :nf] = 1.0
        rhs = np.concatenate([-g[F], [0.0]])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        p = sol[:nf]

        if np.max(np.abs(p)) <= tol:
            nu = g[F].mean()
            mult = g - nu
            mult[F] = 0.0
            j = np.argmin(mult)
            if mult[j] >= -tol * scale:
                break
            free[j] = True
            continue

        step = 1.0
        blocking = None
        for idx, pi in zip(F, p):
            if pi < 0:
                ratio = -w[idx] / pi
                if ratio < step:
                    step, blocking = ratio, idx
        w[F] += step * p
        if blocking is not None:
            w[blocking] = 0.0
            free[blocking] = False
        w = np.clip(w, 0.0, None)
        w /= w.sum()
    return w


def simplex_kkt_residual(G, c, w):
    """Largest KKT violation of ``w`` for the simplex least-squares problem.

    Zero for an exact optimum: gradients are equal on the support and no
    smaller off the support.
    """
    g = G @ w - c
    support = w > 0
    nu = g[support].mean()
    on = np.abs(g[support] - nu).max()
    off = np.max(nu - g[~support]) if np.any(~support) else 0.0
    infeas = max(abs(w.sum() - 1.0), max(0.0, -w.min()))
    return max(on, off, 0.0, infeas)


def _stack_inputs(predictions, truth=None):
    preds = [check_matrix(p, f"predictions[{i}]") for i, p in enumerate(predictions)]
    if len(preds) < 2:
        raise ValueError(f"stacking needs at least 2 prediction sets, got {len(preds)}")
    shape = preds[0].shape
    for i, p in enumerate(preds):
        if p.shape != shape:
            raise ValueError(f"prediction set {i} has shape {p.shape}, expected {shape}")
    P = np.stack(preds, axis=2)  # (T, parcels, M)
    if truth is None:
        return P
    y = check_matrix(truth, "truth")
    if y.shape != shape:
        raise ValueError(f"truth has shape {y.shape}, predictions have {shape}")
    return P, y


class StackedRegression(BaseEstimator):
    """Per-parcel linear combination of M prediction sets.

    Parameters
    ----------
    mode : {"simplex", "ridge_unconstrained"}, default="simplex"
        ``simplex``: nonnegative weights summing to one, no intercept.
        ``ridge_unconstrained``: free weights plus intercept, ridge penalty
        fixed at 1e-6.
    standardize_predictions : bool, default=False
        Z-score each prediction column on the stacking data before fitting.
    tol : float, default=1e-10
        KKT tolerance of the simplex solver.

    Attributes
    ----------
    weights_ : ndarray of shape (n_parcels, M)
    intercept_ : ndarray of shape (n_parcels,)
    degenerate_parcels_ : ndarray of int
        Parcels whose truth has zero variance; they get uniform weights.
    kkt_residual_ : ndarray of shape (n_parcels,)
        Simplex mode only, in units of the per-row mean squared error.
    """

    def __init__(self, mode="simplex", standardize_predictions=False, tol=1e-10):
        self.mode = mode
        self.standardize_predictions = standardize_predictions
        self.tol = tol

    def _scale(self, P):
        if not self.standardize_predictions:
            return P
        return (P - self.pred_mean_) / self.pred_scale_

    def fit(self, predictions, truth):
        if self.mode not in ("simplex", "ridge_unconstrained"):
            raise ValueError(f"unknown stacking mode {self.mode!r}")
        P, y = _stack_inputs(predictions, truth)
        T, n_parcels, M = P.shape
        if self.standardize_predictions:
            self.pred_mean_ = P.mean(axis=0)
            sd = P.std(axis=0)
            self.pred_scale_ = np.where(sd > 0, sd, 1.0)
        P = self._scale(P)

        W = np.full((n_parcels, M), 1.0 / M)
        b = np.zeros(n_parcels)
        kkt = np.zeros(n_parcels)
        degenerate = np.flatnonzero(np.ptp(y, axis=0) == 0)
        deg = np.zeros(n_parcels, dtype=bool)
        deg[degenerate] = True

        for p in np.flatnonzero(~deg):
            Xp, yp = P[:, p, :], y[:, p]
            if self.mode == "simplex":
                G = Xp.T @ Xp / T
                c = Xp.T @ yp / T
                W[p] = simplex_lstsq(G, c, tol=self.tol)
                kkt[p] = simplex_kkt_residual(G, c, W[p])
            else:
                xm, ym = Xp.mean(axis=0), yp.mean()
                Xc = Xp - xm
                W[p] = np.linalg.solve(Xc.T @ Xc + UNCONSTRAINED_ALPHA * np.eye(M), Xc.T @ (yp - ym))
                b[p] = ym - xm @ W[p]

        self.weights_ = W
        self.intercept_ = b
        self.kkt_residual_ = kkt
        self.degenerate_parcels_ = degenerate
        self.n_sets_ = M
        self.n_parcels_ = n_parcels
        return self

    def predict(self, predictions):
        check_is_fitted(self, "weights_")
        P = _stack_inputs(predictions)
        if P.shape[1:] != (self.n_parcels_, self.n_sets_):
            raise ValueError(
                f"got {P.shape[2]} sets of {P.shape[1]} parcels, model expects "
                f"{self.n_sets_} sets of {self.n_parcels_}"
            )
        out = np.einsum("tpm,pm->tp", self._scale(P), self.weights_) + self.intercept_
        first = predictions[0]
        if isinstance(first, TimeSeriesMatrix):
            return first.with_data(out)
        return out


def fit_stacking(predictions, truth, mode="simplex"):
    return StackedRegression(mode=mode).fit(predictions, truth)


def apply_stacking(model, predictions):
    return model.predict(predictions)
