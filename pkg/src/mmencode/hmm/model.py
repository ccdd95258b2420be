"""Gaussian and Gaussian-linear HMMs fitted by variational Bayes.

Both observation models are handled as a per-state multivariate regression
``y_t ~ N(W_k' u_t, inv(L_k))`` with regressors ``u_t = [1]`` (Gaussian) or
``u_t = [1, x_t]`` (Gaussian-linear), so ``W_k`` stacks the state mean on
top of the state's regression coefficients. Each ``(W_k, L_k)`` gets a
conjugate matrix-normal-Wishart posterior; initial and transition
probabilities get Dirichlet posteriors.
"""

import logging

import numpy as np
from scipy import linalg
from scipy.special import digamma, gammaln, multigammaln
from sklearn.base import BaseEstimator
from sklearn.cluster import KMeans
from sklearn.utils.validation import check_is_fitted

from ..data import TimeSeriesMatrix
from ..validation import check_matrix, check_same_rows, resolve_boundaries, run_slices
from ._inference import IMPLEMENTATIONS

_log = logging.getLogger(__name__)

COLLAPSE_THRESHOLD = 1e-8
_LOG2PI = np.log(2 * np.pi)


def _dirichlet_kl(a, b):
    """KL(Dir(a) || Dir(b)) along the last axis."""
    a0 = a.sum(axis=-1)
    return (
        gammaln(a0) - gammaln(a).sum(axis=-1)
        - gammaln(b.sum(axis=-1)) + gammaln(b).sum(axis=-1)
        + ((a - b) * (digamma(a) - digamma(a0)[..., None])).sum(axis=-1)
    )


def _dirichlet_expected_log(a):
    return digamma(a) - digamma(a.sum(axis=-1, keepdims=True))


def _logdet_pd(M):
    c = linalg.cholesky(M, lower=True)
    return 2.0 * np.log(np.diag(c)).sum(), c


class _EmissionPosterior:
    """Matrix-normal-Wishart posterior of one state's regression."""

    __slots__ = ("M", "K", "nu", "S", "chol_S", "logdet_S", "K_inv", "logdet_K", "E_logdet", "count")

    def __init__(self, M, K, nu, S, count):
        d = S.shape[0]
        self.M, self.K, self.nu, self.S, self.count = M, K, float(nu), S, float(count)
        self.logdet_S, self.chol_S = _logdet_pd(S)
        self.logdet_K, cK = _logdet_pd(K)
        self.K_inv = linalg.cho_solve((cK, True), np.eye(K.shape[0]))
        self.E_logdet = (
            digamma(0.5 * (self.nu + 1 - np.arange(1, d + 1))).sum()
            + d * np.log(2.0) - self.logdet_S
        )

    @property
    def E_precision(self):
        return self.nu * linalg.cho_solve((self.chol_S, True), np.eye(self.S.shape[0]))


class _VariationalHMM(BaseEstimator):
    def __init__(self, n_states=10, max_iter=500, tol=1e-5, random_state=None,
                 implementation="scaling", dirichlet_prior=1.0, coef_prior_precision=1e-3,
                 prior_dof=None, reg_covar=1e-6, init_self_transition=0.9, kmeans_n_init=10,
                 verbose=False):
        self.n_states = n_states
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state
        self.implementation = implementation
        self.dirichlet_prior = dirichlet_prior
        self.coef_prior_precision = coef_prior_precision
        self.prior_dof = prior_dof
        self.reg_covar = reg_covar
        self.init_self_transition = init_self_transition
        self.kmeans_n_init = kmeans_n_init
        self.verbose = verbose

    kind = None

    # -- priors -----------------------------------------------------------------

    def _setup_prior(self, p, d):
        self._p, self._d = p, d
        self._nu0 = float(d + 2 if self.prior_dof is None else self.prior_dof)
        self._K0 = float(self.coef_prior_precision) * np.eye(p)
        self._S0 = float(self.reg_covar) * np.eye(d)
        self._coef_proper = self.coef_prior_precision > 0
        self._wishart_proper = self.reg_covar > 0 and self._nu0 > d - 1
        if self._wishart_proper:
            ld, _ = _logdet_pd(self._S0)
            self._log_norm_S0 = 0.5 * self._nu0 * ld - 0.5 * self._nu0 * d * np.log(2) \
                - multigammaln(0.5 * self._nu0, d)
        else:
            self._log_norm_S0 = 0.0
        self._logdet_K0 = p * np.log(self.coef_prior_precision) if self._coef_proper else 0.0

    # -- variational updates ------------------------------------------------------

    def _emission_update(self, U, Y, gamma):
        posts = []
        for k in range(gamma.shape[1]):
            r = gamma[:, k]
            Ur = U * r[:, None]
            Kn = self._K0 + U.T @ Ur
            Sxy = Ur.T @ Y
            M = linalg.solve(Kn, Sxy, assume_a="pos")
            resid = Y - U @ M
            S = self._S0 + (resid * r[:, None]).T @ resid + M.T @ self._K0 @ M
            S = 0.5 * (S + S.T)
            try:
                posts.append(_EmissionPosterior(M, Kn, self._nu0 + r.sum(), S, r.sum()))
            except linalg.LinAlgError:
                raise FloatingPointError(
                    f"state {k} posterior is not positive definite; use a proper prior "
                    "(reg_covar > 0, coef_prior_precision > 0) or more data"
                ) from None
        return posts

    def _expected_log_emission(self, U, Y):
        T, d = Y.shape
        out = np.empty((T, len(self._posts)))
        for k, q in enumerate(self._posts):
            resid = Y - U @ q.M
            z = linalg.solve_triangular(q.chol_S, resid.T, lower=True)
            quad = q.nu * np.einsum("ij,ij->j", z, z)
            unc = d * np.einsum("ij,jk,ik->i", U, q.K_inv, U)
            out[:, k] = 0.5 * q.E_logdet - 0.5 * d * _LOG2PI - 0.5 * (quad + unc)
        return out

    def _emission_kl(self, q):
        d, p = self._d, self._p
        E_L = q.E_precision
        kl_w = 0.5 * (d * np.trace(self._K0 @ q.K_inv)
                      + np.trace(E_L @ q.M.T @ self._K0 @ q.M)
                      - d * p + d * (q.logdet_K - self._logdet_K0))
        log_norm_q = 0.5 * q.nu * q.logdet_S - 0.5 * q.nu * d * np.log(2) - multigammaln(0.5 * q.nu, d)
        e_log_q = log_norm_q + 0.5 * (q.nu - d - 1) * q.E_logdet - 0.5 * q.nu * d
        e_log_p = self._log_norm_S0 + 0.5 * (self._nu0 - d - 1) * q.E_logdet - 0.5 * np.trace(self._S0 @ E_L)
        return kl_w + e_log_q - e_log_p

    def _free_energy(self, loglik):
        a0 = float(self.dirichlet_prior)
        kl = _dirichlet_kl(self._alpha_pi, np.full_like(self._alpha_pi, a0))
        kl += _dirichlet_kl(self._alpha_A, np.full_like(self._alpha_A, a0)).sum()
        kl += sum(self._emission_kl(q) for q in self._posts)
        return -loglik + kl

    def _e_step(self, U, Y, bounds):
        fb = IMPLEMENTATIONS[self.implementation]
        log_B = self._expected_log_emission(U, Y)
        log_pi = _dirichlet_expected_log(self._alpha_pi)
        log_A = _dirichlet_expected_log(self._alpha_A)
        gamma, _, xi_sum, loglik = fb(log_pi, log_A, log_B, bounds, return_xi=False)
        return gamma, xi_sum, loglik

    def _m_step(self, U, Y, bounds, gamma, xi_sum):
        a0 = float(self.dirichlet_prior)
        starts = np.asarray(bounds)
        self._alpha_pi = a0 + gamma[starts].sum(axis=0)
        self._alpha_A = a0 + xi_sum
        self._posts = self._emission_update(U, Y, gamma)

    def _init(self, U, Y, bounds, rng):
        K = int(self.n_states)
        T = Y.shape[0]
        if K == 1:
            labels = np.zeros(T, dtype=int)
        else:
            km = KMeans(n_clusters=K, n_init=int(self.kmeans_n_init),
                        random_state=int(rng.integers(2**31 - 1)))
            labels = km.fit_predict(Y)
        gamma = np.zeros((T, K))
        gamma[np.arange(T), labels] = 1.0
        self._posts = self._emission_update(U, Y, gamma)
        a0 = float(self.dirichlet_prior)
        self._alpha_pi = np.full(K, a0 + 1.0)
        if K == 1:
            trans = np.ones((1, 1))
        else:
            s = float(self.init_self_transition)
            trans = np.full((K, K), (1 - s) / (K - 1))
            np.fill_diagonal(trans, s)
        self._alpha_A = a0 + (T / K) * trans

    def _fit(self, U, Y, bounds):
        K = int(self.n_states)
        if K < 1:
            raise ValueError("n_states must be >= 1")
        if self.implementation not in IMPLEMENTATIONS:
            raise ValueError(f"unknown implementation {self.implementation!r}")
        self._setup_prior(U.shape[1], Y.shape[1])
        rng = np.random.default_rng(self.random_state)
        self._init(U, Y, bounds, rng)

        trace = []
        self.converged_ = False
        for it in range(int(self.max_iter)):
            gamma, xi_sum, loglik = self._e_step(U, Y, bounds)
            F = self._free_energy(loglik)
            trace.append(F)
            if self.verbose:
                _log.info("iter %d free energy %.6f", it, F)
            if len(trace) > 1 and abs(trace[-2] - F) < self.tol * max(1.0, abs(F)):
                self.converged_ = True
                break
            self._m_step(U, Y, bounds, gamma, xi_sum)
        else:
            gamma, xi_sum, loglik = self._e_step(U, Y, bounds)
            trace.append(self._free_energy(loglik))
            _log.warning("variational HMM did not converge in %d iterations", self.max_iter)

        self.free_energy_ = np.asarray(trace)
        self.n_iter_ = len(trace)
        self.posteriors_ = gamma
        self.collapsed_states_ = np.flatnonzero(gamma.sum(axis=0) < COLLAPSE_THRESHOLD)
        self._store_point_estimates()
        return self

    def _store_point_estimates(self):
        d = self._d
        self.startprob_ = self._alpha_pi / self._alpha_pi.sum()
        self.transmat_ = self._alpha_A / self._alpha_A.sum(axis=1, keepdims=True)
        self.means_ = np.array([q.M[0] for q in self._posts])
        self.covars_ = np.array([
            q.S / (q.nu - d - 1) if q.nu > d + 1 else q.S / q.nu for q in self._posts
        ])
        if self._p > 1:
            self.coef_ = np.array([q.M[1:] for q in self._posts])
        self.state_counts_ = np.array([q.count for q in self._posts])

    # -- point-estimate inference --------------------------------------------------

    def _emission_means(self, X, T):
        """(T, K, d) per-state emission means under the point estimates."""
        mu = np.broadcast_to(self.means_[None], (T,) + self.means_.shape)
        if self.kind == "gaussian_linear":
            mu = mu + np.einsum("ti,kij->tkj", X, self.coef_)
        return mu

    def _log_emission(self, X, Y):
        T = Y.shape[0]
        mu = self._emission_means(X, T)
        out = np.empty((T, self.n_states_))
        d = Y.shape[1]
        for k in range(self.n_states_):
            ld, c = _logdet_pd(self.covars_[k])
            z = linalg.solve_triangular(c, (Y - mu[:, k]).T, lower=True)
            out[:, k] = -0.5 * (d * _LOG2PI + ld + np.einsum("ij,ij->j", z, z))
        return out

    @property
    def n_states_(self):
        return self.means_.shape[0]


class GaussianHMM(_VariationalHMM):
    """HMM whose states emit ``N(mu_k, Sigma_k)``.

    Parameters
    ----------
    n_states : int, default=10
    max_iter : int, default=500
    tol : float, default=1e-5
        Stop when the relative change of the free energy drops below this.
    random_state : int or None
        Seeds the k-means initialization.
    implementation : {"scaling", "log"}
    dirichlet_prior : float, default=1.0
        Concentration of the Dirichlet priors on initial and transition
        probabilities.
    coef_prior_precision : float, default=1e-3
        Prior precision (relative to the noise precision) of state means and
        regression coefficients around zero. 0 gives a flat prior.
    prior_dof : float or None
        Wishart degrees of freedom; ``None`` means ``n_features + 2``.
    reg_covar : float, default=1e-6
        Diagonal of the Wishart prior scale, which ridges every covariance.
    init_self_transition : float, default=0.9
    kmeans_n_init : int, default=10

    Attributes
    ----------
    startprob_, transmat_, means_, covars_ : posterior-mean point estimates
    free_energy_ : ndarray
        Variational free energy after each inference step (nonincreasing).
    posteriors_ : ndarray of shape (n_samples, n_states)
    collapsed_states_ : ndarray of int
        States that ended with total responsibility below 1e-8; they sit at
        their prior.
    """

    kind = "gaussian"

    def fit(self, X, y=None, run_boundaries=None, lengths=None):
        Y = check_matrix(X, "Y")
        bounds = resolve_boundaries(X, run_boundaries, lengths)
        self.n_features_in_ = Y.shape[1]
        return self._fit(np.ones((Y.shape[0], 1)), Y, bounds)

    def predict_proba(self, X, run_boundaries=None, lengths=None):
        """State posteriors given observations, using the point estimates."""
        return forward_backward(self, X, run_boundaries=run_boundaries, lengths=lengths)["gamma"]

    def predict(self, X, run_boundaries=None, lengths=None):
        return self.predict_proba(X, run_boundaries, lengths).argmax(axis=1)

    def score(self, X, y=None, run_boundaries=None, lengths=None):
        return forward_backward(self, X, run_boundaries=run_boundaries, lengths=lengths)["loglik"]

    def sample(self, n_samples, random_state=None, mode="sample", run_boundaries=None):
        return sample_hmm(self, n_samples, seed=random_state, mode=mode, run_boundaries=run_boundaries)

    @classmethod
    def from_params(cls, startprob, transmat, means, covars):
        m = cls(n_states=len(startprob))
        m.startprob_ = np.asarray(startprob, dtype=float)
        m.transmat_ = np.asarray(transmat, dtype=float)
        m.means_ = np.atleast_2d(np.asarray(means, dtype=float))
        m.covars_ = np.asarray(covars, dtype=float)
        m.n_features_in_ = m.means_.shape[1]
        _validate_params(m)
        return m


class GaussianLinearHMM(_VariationalHMM):
    """HMM whose states emit ``N(mu_k + x_t beta_k, Sigma_k)``.

    ``x`` is an observed regressor stream; only ``y`` is modeled. Takes the
    same parameters as :class:`GaussianHMM`. ``coef_`` has shape
    ``(n_states, n_regressors, n_outputs)``.
    """

    kind = "gaussian_linear"

    def fit(self, X, y, run_boundaries=None, lengths=None):
        Xm = check_matrix(X, "X")
        Y = check_matrix(y, "Y")
        check_same_rows(Xm, Y)
        bounds = resolve_boundaries(X if isinstance(X, TimeSeriesMatrix) else y, run_boundaries, lengths)
        self.n_features_in_ = Xm.shape[1]
        self.n_outputs_ = Y.shape[1]
        U = np.hstack([np.ones((Y.shape[0], 1)), Xm])
        return self._fit(U, Y, bounds)

    def predict_proba(self, X, y, run_boundaries=None, lengths=None):
        return forward_backward(self, y, X, run_boundaries=run_boundaries, lengths=lengths)["gamma"]

    def predict_states(self, X, y, run_boundaries=None, lengths=None):
        return self.predict_proba(X, y, run_boundaries, lengths).argmax(axis=1)

    def predict(self, X, run_boundaries=None, mode="expectation", random_state=None):
        """Predict ``y`` from ``X`` alone (states follow the prior chain)."""
        X = check_matrix(X, "X")
        return sample_hmm(self, X.shape[0], x=X, seed=random_state, mode=mode,
                          run_boundaries=run_boundaries)

    def score(self, X, y, run_boundaries=None, lengths=None):
        return forward_backward(self, y, X, run_boundaries=run_boundaries, lengths=lengths)["loglik"]

    @classmethod
    def from_params(cls, startprob, transmat, means, covars, coef):
        m = cls(n_states=len(startprob))
        m.startprob_ = np.asarray(startprob, dtype=float)
        m.transmat_ = np.asarray(transmat, dtype=float)
        m.means_ = np.atleast_2d(np.asarray(means, dtype=float))
        m.covars_ = np.asarray(covars, dtype=float)
        m.coef_ = np.asarray(coef, dtype=float)
        m.n_features_in_ = m.coef_.shape[1]
        m.n_outputs_ = m.means_.shape[1]
        _validate_params(m)
        return m


def _validate_params(m):
    K = m.startprob_.size
    if abs(m.startprob_.sum() - 1) > 1e-12 or np.any(m.startprob_ < 0):
        raise ValueError("startprob must be a probability vector")
    if m.transmat_.shape != (K, K) or np.any(np.abs(m.transmat_.sum(axis=1) - 1) > 1e-12):
        raise ValueError("transmat must be a row-stochastic K x K matrix")
    d = m.means_.shape[1]
    if m.means_.shape[0] != K or m.covars_.shape != (K, d, d):
        raise ValueError("means/covars shapes do not match the state count")
    for S in m.covars_:
        if not np.allclose(S, S.T) or np.linalg.eigvalsh(S).min() < 1e-12:
            raise ValueError("covariances must be symmetric positive definite")


def forward_backward(model, y, x=None, run_boundaries=None, lengths=None, implementation=None):
    """State posteriors of a fitted model under its point estimates.

    Returns a dict with ``gamma`` (T, K), ``xi`` (T-1, K, K; zero across run
    boundaries) and the log-likelihood ``loglik``.
    """
    check_is_fitted(model, "means_")
    Y = check_matrix(y, "y")
    bounds = resolve_boundaries(y, run_boundaries, lengths)
    X = None
    if model.kind == "gaussian_linear":
        if x is None:
            raise ValueError("gaussian_linear model needs x")
        X = check_matrix(x, "x")
        check_same_rows(X, Y, ("x", "y"))
    fb = IMPLEMENTATIONS[implementation or model.implementation]
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.startprob_)
        log_A = np.log(model.transmat_)
    gamma, xi, _, loglik = fb(log_pi, log_A, model._log_emission(X, Y), bounds)
    return {"gamma": gamma, "xi": xi, "loglik": loglik}


def state_marginals(model, T, run_boundaries=(0,)):
    """Prior state probabilities ``pi A^t`` restarted at every run."""
    out = np.empty((T, model.n_states_))
    for sl in run_slices(run_boundaries, T):
        p = model.startprob_.copy()
        for t in range(sl.start, sl.stop):
            out[t] = p
            p = p @ model.transmat_
    return out


def sample_states(model, T, rng, run_boundaries=(0,)):
    cum_A = np.cumsum(model.transmat_, axis=1)
    cum_pi = np.cumsum(model.startprob_)
    u = rng.random(T)
    z = np.empty(T, dtype=int)
    K = model.n_states_
    starts = set(run_boundaries)
    for t in range(T):
        row = cum_pi if t in starts else cum_A[z[t - 1]]
        z[t] = min(int(np.searchsorted(row, u[t] * row[-1], side="right")), K - 1)
    return z


def sample_hmm(model, T, x=None, seed=None, mode="sample", run_boundaries=None, return_states=False):
    """Generate a ``T x d`` series from a fitted model.

    ``mode="sample"`` draws a state path from the Markov chain and then
    emissions; ``mode="expectation"`` returns the mean emission under the
    prior state marginals. Gaussian-linear models condition each emission
    mean on the matching row of ``x``.
    """
    check_is_fitted(model, "means_")
    T = int(T)
    if T < 1:
        raise ValueError("T must be positive")
    if run_boundaries is None and isinstance(x, TimeSeriesMatrix):
        run_boundaries = x.run_boundaries
    bounds = resolve_boundaries(np.empty((T, 0)), run_boundaries)
    X = None
    if model.kind == "gaussian_linear":
        if x is None:
            raise ValueError("gaussian_linear sampling requires x")
        X = check_matrix(x, "x")
        if X.shape[0] != T:
            raise ValueError(f"x has {X.shape[0]} rows, expected {T}")
    mu = model._emission_means(X, T)
    if mode == "expectation":
        probs = state_marginals(model, T, bounds)
        out = np.einsum("tk,tkd->td", probs, mu)
        return (out, None) if return_states else out
    if mode != "sample":
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    z = sample_states(model, T, rng, bounds)
    d = model.means_.shape[1]
    noise = rng.standard_normal((T, d))
    out = mu[np.arange(T), z].copy()
    for k in range(model.n_states_):
        rows = z == k
        if np.any(rows):
            c = linalg.cholesky(model.covars_[k], lower=True)
            out[rows] += noise[rows] @ c.T
    return (out, z) if return_states else out
