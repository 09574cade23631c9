"""Stacked-sample membership model for convenience and reference probabilities.

Reference rows (z = 0) and convenience rows (z = 1) are pooled. Both arms
get a logistic link on the same design ``[1, x]``::

    pi_c(x) = expit(x @ beta_c),   pi_r(x) = expit(x @ beta_r)

and the pooled membership indicator is Bernoulli with success probability
``p = pi_c / (pi_c + pi_r)``. On reference rows, where the design
probability is known, a Gaussian anchor ``logit(pi_r(x_i)) ~ N(logit(pi_r_i), tau^2)``
ties the reference link to the design.

Two backends are provided as scikit-learn style estimators:
:class:`MembershipMLE` (Newton / Fisher scoring point estimate) and
:class:`MembershipMCMC` (adaptive random-walk Metropolis posterior draws).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit, log_expit, logit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, EstimationError

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-6
PROB_CEIL = 1.0 - 1e-6


def clamp_probabilities(p):
    return np.clip(p, PROB_FLOOR, PROB_CEIL)


def design_matrix(x):
    """Prepend an intercept column; ``x`` may have zero covariate columns."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _split(theta, p):
    return theta[:p], theta[p:]


# ---------------------------------------------------------------------------
# likelihood


def membership_probability(eta_c, eta_r):
    """``pi_c / (pi_c + pi_r)`` evaluated on the log scale."""
    lc, lr = log_expit(eta_c), log_expit(eta_r)
    return expit(lc - lr)


def log_likelihood(theta, D, z, anchor_logit, ref_mask, tau):
    """Composite log-likelihood: pooled Bernoulli term plus reference anchor."""
    p = D.shape[1]
    beta_c, beta_r = _split(theta, p)
    eta_c, eta_r = D @ beta_c, D @ beta_r
    lc, lr = log_expit(eta_c), log_expit(eta_r)
    log_den = np.logaddexp(lc, lr)
    bern = np.sum(z * (lc - log_den) + (1.0 - z) * (lr - log_den))
    resid = eta_r[ref_mask] - anchor_logit[ref_mask]
    return bern - 0.5 * np.sum(resid**2) / tau**2


def score(theta, D, z, anchor_logit, ref_mask, tau):
    """Analytic gradient of :func:`log_likelihood` with respect to ``theta``."""
    p = D.shape[1]
    beta_c, beta_r = _split(theta, p)
    eta_c, eta_r = D @ beta_c, D @ beta_r
    pi_c, pi_r = expit(eta_c), expit(eta_r)
    m = membership_probability(eta_c, eta_r)
    g_c = (z - m) * (1.0 - pi_c)
    g_r = (m - z) * (1.0 - pi_r)
    g_r = g_r - np.where(ref_mask, eta_r - np.nan_to_num(anchor_logit), 0.0) / tau**2
    return np.concatenate([D.T @ g_c, D.T @ g_r])


def hessian(theta, D, z, anchor_logit, ref_mask, tau, *, expected=False):
    """Observed (or expected, i.e. Fisher) Hessian of the log-likelihood."""
    p = D.shape[1]
    beta_c, beta_r = _split(theta, p)
    eta_c, eta_r = D @ beta_c, D @ beta_r
    pi_c, pi_r = expit(eta_c), expit(eta_r)
    m = membership_probability(eta_c, eta_r)
    a, b = 1.0 - pi_c, 1.0 - pi_r
    w = m * (1.0 - m)
    h_cc = -w * a * a
    h_rr = -w * b * b - ref_mask / tau**2
    h_cr = w * a * b
    if not expected:
        h_cc = h_cc - (z - m) * pi_c * a
        h_rr = h_rr - (m - z) * pi_r * b
    H = np.empty((2 * p, 2 * p))
    H[:p, :p] = (D * h_cc[:, None]).T @ D
    H[p:, p:] = (D * h_rr[:, None]).T @ D
    H[:p, p:] = (D * h_cr[:, None]).T @ D
    H[p:, :p] = H[:p, p:].T
    return H


def is_separated(D, z):
    """True when some hyperplane in the design space splits z = 0 from z = 1 rows.

    Checked as an LP feasibility problem ``s_i * d_i @ w >= 1`` with
    ``s_i = 2 z_i - 1``; under complete separation the likelihood has no
    maximiser.
    """
    signs = 2.0 * np.asarray(z, dtype=float) - 1.0
    res = linprog(np.zeros(D.shape[1]), A_ub=-(signs[:, None] * D), b_ub=-np.ones(D.shape[0]),
                  bounds=[(None, None)] * D.shape[1], method="highs")
    return res.status == 0


class _StackedData:
    """Validated stacked arrays shared by both backends."""

    def __init__(self, X, z, pi_r_anchor):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        z = np.asarray(z, dtype=float)
        anchor = np.asarray(pi_r_anchor, dtype=float)
        if z.shape != (X.shape[0],) or anchor.shape != z.shape:
            raise ConfigurationError("X, z and pi_r_anchor must have matching lengths")
        if not np.all((z == 0) | (z == 1)):
            raise ConfigurationError("z must be a 0/1 membership indicator")
        if z.min() == z.max():
            raise ConfigurationError("stacked sample needs both reference (z=0) and convenience (z=1) rows")
        ref = z == 0
        ref_anchor = anchor[ref]
        if not np.all((ref_anchor > 0) & (ref_anchor <= 1)):
            raise ConfigurationError("reference rows need known inclusion probabilities in (0, 1]")
        self.n_features = X.shape[1]
        self.D = design_matrix(X)
        if np.linalg.matrix_rank(self.D) < self.D.shape[1]:
            raise ConfigurationError("design matrix is rank deficient")
        self.z = z
        self.ref_mask = ref
        self.anchor_logit = np.where(ref, logit(clamp_probabilities(np.where(ref, anchor, 0.5))), np.nan)

    def args(self, tau):
        return self.D, self.z, self.anchor_logit, self.ref_mask, tau


def _check_features(X, n_features):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if n_features == 1 else X.reshape(1, -1)
    if X.shape[1] != n_features:
        raise ConfigurationError(f"X has {X.shape[1]} covariates, model was fitted with {n_features}")
    return X


def newton_maximize(data, tau, *, prior_precision=0.0, max_iter=100, tol=1e-8, theta0=None):
    """Maximise the (optionally ridge-penalised) log-likelihood.

    Uses Newton steps when the observed Hessian is negative definite and
    Fisher scoring otherwise, with step halving. Returns
    ``(theta, info)`` where ``info`` holds the iteration count, the final
    gradient max-norm and the observed Hessian.
    """
    args = data.args(tau)
    dim = 2 * data.D.shape[1]
    theta = np.zeros(dim) if theta0 is None else np.array(theta0, dtype=float)
    if theta0 is None:
        # start the reference link at the mean anchor
        theta[dim // 2] = np.mean(data.anchor_logit[data.ref_mask])

    def objective(t):
        return log_likelihood(t, *args) - 0.5 * prior_precision * t @ t

    def gradient(t):
        return score(t, *args) - prior_precision * t

    value = objective(theta)
    history = []
    for it in range(1, max_iter + 1):
        grad = gradient(theta)
        gnorm = np.max(np.abs(grad))
        history.append((value, gnorm))
        if gnorm < tol:
            break
        H = hessian(theta, *args) - prior_precision * np.eye(dim)
        try:
            np.linalg.cholesky(-H)
        except np.linalg.LinAlgError:
            H = hessian(theta, *args, expected=True) - prior_precision * np.eye(dim)
        try:
            step = np.linalg.solve(-H, grad)
        except np.linalg.LinAlgError:
            raise EstimationError("singular information matrix",
                                  {"n_iter": len(history), "history": history}) from None
        t = 1.0
        while t > 1e-10:
            cand = theta + t * step
            cand_value = objective(cand)
            if np.isfinite(cand_value) and cand_value >= value - 1e-12 * abs(value):
                break
            t *= 0.5
        else:
            raise EstimationError("line search failed",
                                  {"n_iter": len(history), "history": history, "theta": theta})
        theta, value = cand, cand_value
        if np.max(np.abs(theta)) > 50:
            raise EstimationError("coefficients diverging (likely separation)",
                                  {"n_iter": len(history), "history": history, "theta": theta})
    else:
        gnorm = np.max(np.abs(gradient(theta)))
        if gnorm >= tol:
            raise EstimationError(f"no convergence after {max_iter} iterations (gradient {gnorm:.3g})",
                                  {"n_iter": len(history), "history": history, "theta": theta})
    info = {
        "n_iter": len(history),
        "grad_norm": float(np.max(np.abs(gradient(theta)))),
        "hessian": hessian(theta, *args) - prior_precision * np.eye(dim),
        "log_likelihood": float(log_likelihood(theta, *args)),
    }
    return theta, info


def _predict(beta_c, beta_r, X):
    D = design_matrix(X)
    return clamp_probabilities(expit(D @ beta_c.T)), clamp_probabilities(expit(D @ beta_r.T))


# ---------------------------------------------------------------------------
# estimators


class MembershipMLE(BaseEstimator):
    """Maximum-likelihood fit of the stacked membership model.

    Parameters
    ----------
    tau : float, default=0.25
        Standard deviation of the logit-scale reference anchor.
    max_iter : int, default=100
    tol : float, default=1e-8
        Convergence threshold on the gradient max-norm.

    Attributes
    ----------
    beta_c_, beta_r_ : ndarray of shape (n_features + 1,)
        Intercept first.
    cov_ : ndarray
        Inverse observed information for ``(beta_c_, beta_r_)``.
    n_iter_, grad_norm_ : convergence diagnostics.
    """

    def __init__(self, tau=0.25, max_iter=100, tol=1e-8):
        self.tau = tau
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, z, pi_r_anchor):
        data = _StackedData(X, z, pi_r_anchor)
        if is_separated(data.D, data.z):
            raise EstimationError("membership is completely separated by the covariates; no MLE exists",
                                  {"n_iter": 0})
        theta, info = newton_maximize(data, self.tau, max_iter=self.max_iter, tol=self.tol)
        p = data.D.shape[1]
        self.n_features_in_ = data.n_features
        self.beta_c_, self.beta_r_ = theta[:p].copy(), theta[p:].copy()
        try:
            self.cov_ = np.linalg.inv(-info["hessian"])
        except np.linalg.LinAlgError:
            self.cov_ = np.full((2 * p, 2 * p), np.nan)
        self.n_iter_ = info["n_iter"]
        self.grad_norm_ = info["grad_norm"]
        self.log_likelihood_ = info["log_likelihood"]
        return self

    @property
    def coef_(self):
        check_is_fitted(self, "beta_c_")
        return np.concatenate([self.beta_c_, self.beta_r_])

    def standard_errors(self):
        return np.sqrt(np.diag(self.cov_))

    def predict_probabilities(self, X):
        """Return clamped ``(pi_c, pi_r)`` arrays for covariate rows ``X``."""
        check_is_fitted(self, "beta_c_")
        X = _check_features(X, self.n_features_in_)
        return _predict(self.beta_c_, self.beta_r_, X)

    def membership_proba(self, X):
        check_is_fitted(self, "beta_c_")
        D = design_matrix(_check_features(X, self.n_features_in_))
        return membership_probability(D @ self.beta_c_, D @ self.beta_r_)


class MembershipMCMC(BaseEstimator):
    """Posterior draws for the stacked membership model by random-walk Metropolis.

    The chain starts at the posterior mode; the Gaussian proposal uses the
    inverse Hessian there, scaled by ``2.38^2 / dim``, and the scale is tuned
    during burn-in towards an acceptance rate of ``target_accept``. After
    burn-in the proposal is frozen.

    Parameters
    ----------
    n_draws : int, default=700
        Retained draws S.
    tau : float, default=0.25
    prior_scale : float or None, default=10.0
        Standard deviation of independent normal priors on every coefficient;
        None means a flat prior.
    thin : int, default=10
        Chain iterations per retained draw.
    burn_in : int or None
        Discarded iterations; defaults to ``n_draws * thin``.
    target_accept : float, default=0.3
    random_state : int, Generator or None
    """

    def __init__(self, n_draws=700, tau=0.25, prior_scale=10.0, thin=10, burn_in=None,
                 target_accept=0.3, random_state=None):
        self.n_draws = n_draws
        self.tau = tau
        self.prior_scale = prior_scale
        self.thin = thin
        self.burn_in = burn_in
        self.target_accept = target_accept
        self.random_state = random_state

    def fit(self, X, z, pi_r_anchor):
        if self.n_draws < 1:
            raise ConfigurationError("n_draws must be >= 1")
        data = _StackedData(X, z, pi_r_anchor)
        args = data.args(self.tau)
        p = data.D.shape[1]
        dim = 2 * p
        precision = 0.0 if self.prior_scale is None else 1.0 / self.prior_scale**2
        rng = np.random.default_rng(self.random_state)

        mode, info = newton_maximize(data, self.tau, prior_precision=precision)
        cov = np.linalg.inv(-info["hessian"])
        cov = 0.5 * (cov + cov.T)
        chol = np.linalg.cholesky(cov)

        def log_post(t):
            return log_likelihood(t, *args) - 0.5 * precision * t @ t

        burn = self.n_draws * self.thin if self.burn_in is None else self.burn_in
        total = burn + self.n_draws * self.thin
        log_scale = np.log(2.38 / np.sqrt(dim))
        theta, lp = mode.copy(), log_post(mode)
        draws = np.empty((self.n_draws, dim))
        accepted_post = 0
        accepted_burn = 0
        kept = 0
        for it in range(total):
            prop = theta + np.exp(log_scale) * (chol @ rng.standard_normal(dim))
            lp_prop = log_post(prop)
            log_u = np.log(rng.random())
            ok = np.isfinite(lp_prop) and log_u < lp_prop - lp
            if ok:
                theta, lp = prop, lp_prop
            if it < burn:
                accepted_burn += ok
                # Robbins-Monro step on the log proposal scale
                log_scale += ((1.0 if ok else 0.0) - self.target_accept) / np.sqrt(it + 1.0)
            else:
                accepted_post += ok
                if (it - burn + 1) % self.thin == 0:
                    draws[kept] = theta
                    kept += 1

        post_iters = total - burn
        rate = accepted_post / post_iters
        self.n_features_in_ = data.n_features
        self.coef_draws_ = draws
        self.mode_ = mode
        self.acceptance_rate_ = float(rate)
        self.proposal_scale_ = float(np.exp(log_scale))
        self.diagnostics_ = {
            "acceptance_rate": float(rate),
            "burn_in_acceptance_rate": float(accepted_burn / burn) if burn else float("nan"),
            "proposal_scale": float(np.exp(log_scale)),
            "mode_grad_norm": info["grad_norm"],
            "iterations": int(total),
            "warning": "",
        }
        if not 0.05 <= rate <= 0.95:
            msg = f"MCMC acceptance rate {rate:.3f} outside [0.05, 0.95]"
            self.diagnostics_["warning"] = msg
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        logger.debug("mcmc fit: %s", self.diagnostics_)
        return self

    @property
    def beta_c_draws_(self):
        check_is_fitted(self, "coef_draws_")
        return self.coef_draws_[:, : self.coef_draws_.shape[1] // 2]

    @property
    def beta_r_draws_(self):
        check_is_fitted(self, "coef_draws_")
        return self.coef_draws_[:, self.coef_draws_.shape[1] // 2:]

    def predict_probabilities(self, X):
        """Return clamped ``(pi_c, pi_r)`` arrays of shape (S, n)."""
        check_is_fitted(self, "coef_draws_")
        X = _check_features(X, self.n_features_in_)
        pi_c, pi_r = _predict(self.beta_c_draws_, self.beta_r_draws_, X)
        return pi_c.T, pi_r.T


# ---------------------------------------------------------------------------
# draws container and functional API


@dataclass(frozen=True)
class PropensityDraws:
    """Per-draw probabilities for the units of one SampleSet.

    Attributes
    ----------
    pi_c, pi_r : ndarray of shape (S, n_c)
        Estimated convenience and reference probabilities of convenience units.
    ref_smoothed : ndarray of shape (S, n_r)
        Model-smoothed reference probabilities of reference units.
    backend : {"mcmc", "mle"}
    """

    pi_c: np.ndarray
    pi_r: np.ndarray
    ref_smoothed: np.ndarray
    backend: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pi_c.shape != self.pi_r.shape or self.pi_c.shape[0] != self.ref_smoothed.shape[0]:
            raise ConfigurationError("inconsistent draw shapes")
        if self.backend == "mle" and self.S != 1:
            raise ConfigurationError("mle backend carries exactly one draw")

    @property
    def S(self):
        return self.pi_c.shape[0]

    @property
    def n_c(self):
        return self.pi_c.shape[1]

    @classmethod
    def from_model(cls, model, samples, diagnostics=None):
        pi_c, pi_r = predict_probabilities(model, samples.x_conv)
        _, ref = predict_probabilities(model, samples.x_ref)
        backend = "mle" if isinstance(model, MembershipMLE) else "mcmc"
        return cls(np.atleast_2d(pi_c), np.atleast_2d(pi_r), np.atleast_2d(ref), backend,
                   dict(diagnostics or {}))

    @classmethod
    def from_truth(cls, samples):
        """Single 'draw' holding the true design probabilities (oracle weights)."""
        n_c = samples.n_c
        return cls(samples.pi_c_conv_true.reshape(1, n_c),
                   samples.pi_r_conv_true.reshape(1, n_c),
                   samples.pi_r_ref.reshape(1, -1), "mle", {"source": "true"})

    def long_rows(self, conv_ids=None):
        """Long-format rows (draw_index, unit_id, pi_c_hat, pi_r_hat) for CSV export."""
        ids = np.arange(self.n_c) if conv_ids is None else conv_ids
        for s in range(self.S):
            for j in range(self.n_c):
                yield {"draw_index": s, "unit_id": int(ids[j]),
                       "pi_c_hat": self.pi_c[s, j], "pi_r_hat": self.pi_r[s, j]}


def fit_mle(samples, tau=0.25, **kwargs):
    """Fit :class:`MembershipMLE` on a SampleSet's stacked rows."""
    X, z, anchor, _ = samples.stacked()
    return MembershipMLE(tau=tau, **kwargs).fit(X, z, anchor)


def fit_mcmc(samples, S=700, seed=None, **kwargs):
    """Fit :class:`MembershipMCMC` and return draws for the sample's units."""
    X, z, anchor, _ = samples.stacked()
    model = MembershipMCMC(n_draws=S, random_state=seed, **kwargs).fit(X, z, anchor)
    return PropensityDraws.from_model(model, samples, model.diagnostics_)


def predict_probabilities(model, X):
    """Apply a fitted model's links; MLE gives 1-D arrays, MCMC gives (S, n)."""
    if not hasattr(model, "predict_probabilities"):
        raise ConfigurationError(f"{type(model).__name__} cannot predict probabilities")
    return model.predict_probabilities(X)
