"""Forward-backward recursions over segmented sequences.

Both routines take log start/transition probabilities (which may be
subnormalized, as in variational updates) and a T x K matrix of log
emission terms, and treat each run as an independent chain.
"""

import numpy as np
from scipy.special import logsumexp

from ..validation import run_slices


class ZeroProbabilityError(FloatingPointError):
    """Every state has zero probability at some time point."""


def _check(log_B):
    if not np.all(np.isfinite(log_B) | (log_B == -np.inf)):
        raise FloatingPointError("non-finite emission log-likelihood")


def forward_backward_scaled(log_pi, log_A, log_B, bounds=(0,), return_xi=True):
    """Scaled forward-backward.

    Returns
    -------
    gamma : (T, K)
    xi : (T-1, K, K) or None
        Zero at positions that straddle a run boundary.
    xi_sum : (K, K)
    loglik : float
    """
    _check(log_B)
    T, K = log_B.shape
    pi = np.exp(log_pi)
    A = np.exp(log_A)
    offsets = log_B.max(axis=1)
    if not np.all(np.isfinite(offsets)):
        raise ZeroProbabilityError("an observation has zero likelihood under every state")
    B = np.exp(log_B - offsets[:, None])

    gamma = np.empty((T, K))
    xi = np.zeros((max(T - 1, 0), K, K)) if return_xi else None
    xi_sum = np.zeros((K, K))
    loglik = float(offsets.sum())
    alpha = np.empty((T, K))
    scale = np.empty(T)

    for sl in run_slices(bounds, T):
        a, b = sl.start, sl.stop
        cur = pi * B[a]
        for t in range(a, b):
            if t > a:
                cur = (alpha[t - 1] @ A) * B[t]
            s = cur.sum()
            if not s > 0:
                raise ZeroProbabilityError(f"zero probability at t={t}")
            scale[t] = s
            alpha[t] = cur / s
        loglik += float(np.log(scale[a:b]).sum())

        beta = np.ones(K)
        gamma[b - 1] = alpha[b - 1]
        for t in range(b - 2, a - 1, -1):
            bb = B[t + 1] * beta
            x = alpha[t][:, None] * A * (bb / scale[t + 1])[None, :]
            xi_sum += x
            if return_xi:
                xi[t] = x
            beta = (A @ bb) / scale[t + 1]
            g = alpha[t] * beta
            gamma[t] = g / g.sum()
    return gamma, xi, xi_sum, loglik


def forward_backward_log(log_pi, log_A, log_B, bounds=(0,), return_xi=True):
    """Log-space forward-backward; same outputs as the scaled version."""
    _check(log_B)
    T, K = log_B.shape
    log_alpha = np.empty((T, K))
    log_beta = np.empty((T, K))
    gamma = np.empty((T, K))
    xi = np.zeros((max(T - 1, 0), K, K)) if return_xi else None
    xi_sum = np.zeros((K, K))
    loglik = 0.0
    with np.errstate(divide="ignore"):
        for sl in run_slices(bounds, T):
            a, b = sl.start, sl.stop
            log_alpha[a] = log_pi + log_B[a]
            for t in range(a + 1, b):
                log_alpha[t] = logsumexp(log_alpha[t - 1][:, None] + log_A, axis=0) + log_B[t]
            ll = logsumexp(log_alpha[b - 1])
            if not np.isfinite(ll):
                raise ZeroProbabilityError("sequence has zero probability")
            loglik += float(ll)
            log_beta[b - 1] = 0.0
            for t in range(b - 2, a - 1, -1):
                log_beta[t] = logsumexp(log_A + (log_B[t + 1] + log_beta[t + 1])[None, :], axis=1)
            lg = log_alpha[a:b] + log_beta[a:b]
            gamma[a:b] = np.exp(lg - logsumexp(lg, axis=1, keepdims=True))
            for t in range(a, b - 1):
                lx = log_alpha[t][:, None] + log_A + (log_B[t + 1] + log_beta[t + 1])[None, :] - ll
                x = np.exp(lx)
                xi_sum += x
                if return_xi:
                    xi[t] = x
    return gamma, xi, xi_sum, loglik


IMPLEMENTATIONS = {"scaling": forward_backward_scaled, "log": forward_backward_log}
