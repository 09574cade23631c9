"""Combined survey-weighted domain mean over retained convenience and reference units."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_probabilities
from .exceptions import ConfigurationError, DomainError
from .propensity import MembershipMCMC, MembershipMLE, PropensityDraws
from .sampler import SampleSet
from .threshold import ThresholdSpec, build_acceptance_sets

CI_LEVELS = (0.05, 0.95)


def hajek_combined_mean(y_conv, pi_c, y_ref, pi_r):
    """Weighted ratio ``(sum y/pi_c + sum y/pi_r) / (sum 1/pi_c + sum 1/pi_r)``.

    Either arm may be empty, not both.
    """
    y_conv = np.asarray(y_conv, dtype=float).reshape(-1)
    y_ref = np.asarray(y_ref, dtype=float).reshape(-1)
    if y_conv.size + y_ref.size == 0:
        raise DomainError("both arms are empty")
    w_c = 1.0 / as_probabilities(pi_c, "pi_c") if y_conv.size else np.empty(0)
    w_r = 1.0 / as_probabilities(pi_r, "pi_r") if y_ref.size else np.empty(0)
    if w_c.shape != y_conv.shape or w_r.shape != y_ref.shape:
        raise ConfigurationError("outcome and probability lengths differ")
    return float((w_c @ y_conv + w_r @ y_ref) / (w_c.sum() + w_r.sum()))


def ht_combined_mean(y_conv, pi_c, y_ref, pi_r, population_size):
    """Horvitz-Thompson form with known N: the average of the two arms' ``sum(y/pi) / N``.

    Each arm's term is design-unbiased for the population mean when its
    probabilities are the true ones.
    """
    if population_size <= 0:
        raise DomainError("population_size must be positive")
    y_conv = np.asarray(y_conv, dtype=float).reshape(-1)
    y_ref = np.asarray(y_ref, dtype=float).reshape(-1)
    arms = []
    if y_conv.size:
        arms.append(np.sum(y_conv / as_probabilities(pi_c, "pi_c")) / population_size)
    if y_ref.size:
        arms.append(np.sum(y_ref / as_probabilities(pi_r, "pi_r")) / population_size)
    if not arms:
        raise DomainError("both arms are empty")
    return float(np.mean(arms))


def reference_only_mean(y_ref, pi_r):
    """Hajek mean over the reference sample alone."""
    if np.size(y_ref) == 0:
        raise DomainError("reference sample is empty")
    return hajek_combined_mean([], [], y_ref, pi_r)


@dataclass(frozen=True)
class DomainEstimate:
    """Distribution of the domain mean over draws.

    ``ci90`` holds the equal-tailed 5% / 95% quantiles of ``mu_draws``; with a
    single draw it collapses onto ``mu_point`` and ``has_uncertainty`` is
    False.
    """

    mu_draws: np.ndarray
    mu_point: float
    ci90: tuple
    n_retained_mean: float
    n_retained: np.ndarray

    @property
    def S(self):
        return self.mu_draws.size

    @property
    def has_uncertainty(self):
        return self.S > 1

    def covers(self, value):
        """Whether ``value`` lies inside ``ci90``; None without draw uncertainty."""
        if not self.has_uncertainty:
            return None
        lo, hi = self.ci90
        return bool(lo <= value <= hi)

    @classmethod
    def from_draws(cls, mu_draws, n_retained):
        mu = np.asarray(mu_draws, dtype=float)
        n_retained = np.asarray(n_retained)
        point = float(mu.mean())
        if mu.size > 1:
            lo, hi = np.quantile(mu, CI_LEVELS)
            ci = (float(lo), float(hi))
        else:
            ci = (point, point)
        return cls(mu, point, ci, float(n_retained.mean()), n_retained)

    def draw_rows(self):
        for s in range(self.S):
            yield {"draw_index": s, "mu_s": self.mu_draws[s], "n_retained": int(self.n_retained[s])}


def per_draw_means(y_conv, pi_c, accept, y_ref, pi_r_ref):
    """Vectorised combined Hajek mean for every draw.

    ``pi_c``/``accept`` are (S, n_c); ``pi_r_ref`` is (S, n_r) or (n_r,).
    """
    w_c = np.where(accept, 1.0 / pi_c, 0.0)
    w_r = 1.0 / np.broadcast_to(pi_r_ref, (pi_c.shape[0], np.size(y_ref)))
    num = w_c @ y_conv + w_r @ y_ref
    den = w_c.sum(axis=1) + w_r.sum(axis=1)
    if np.any(den <= 0):
        raise DomainError("no contributing units in some draw")
    return num / den


def estimate_domain(draws, sets, samples, ref_weights="smoothed") -> DomainEstimate:
    """Domain mean per draw from draw-specific probabilities and acceptance sets.

    ``ref_weights="true"`` weights reference units by their design
    probabilities; ``"smoothed"`` uses the model's per-draw reference
    probabilities. ``sets=None`` means no thresholding.
    """
    pi_c = np.atleast_2d(draws.pi_c)
    S, n_c = pi_c.shape
    if n_c != samples.n_c:
        raise ConfigurationError(f"draws cover {n_c} convenience units, sample has {samples.n_c}")
    if sets is None:
        accept = np.ones((S, n_c), dtype=bool)
    else:
        accept = sets.per_draw
        if accept.shape != (S, n_c):
            raise ConfigurationError(f"acceptance sets {accept.shape} do not match draws {(S, n_c)}")
    if ref_weights == "true":
        pi_r_ref = samples.pi_r_ref
    elif ref_weights == "smoothed":
        pi_r_ref = np.atleast_2d(draws.ref_smoothed)
        if pi_r_ref.shape != (S, samples.n_r):
            raise ConfigurationError("smoothed reference draws do not match the reference sample")
    else:
        raise ConfigurationError(f"ref_weights={ref_weights!r}; expected 'true' or 'smoothed'")
    mu = per_draw_means(samples.y_conv, pi_c, accept, samples.y_ref, pi_r_ref)
    return DomainEstimate.from_draws(mu, accept.sum(axis=1))


class ThresholdedDomainMean(BaseEstimator):
    """End-to-end estimator: fit the membership model, threshold, estimate the mean.

    Parameters
    ----------
    statistic, cutoff, gamma, procedure :
        Passed to :class:`~qrthresh.threshold.ThresholdSpec`.
    threshold : bool, default=True
        False skips thresholding (all convenience units retained).
    backend : {"mcmc", "mle"}
    n_draws, tau, prior_scale, thin : model settings.
    ref_weights : {"smoothed", "true"}
    random_state : int or None

    ``fit(X, z, y, pi_r)`` takes stacked rows: covariates, the membership
    indicator (1 = convenience), outcomes, and design probabilities on
    reference rows (ignored on convenience rows).

    Attributes
    ----------
    estimate_ : DomainEstimate
    acceptance_ : AcceptanceSets or None
    draws_ : PropensityDraws
    mu_ : float
    """

    def __init__(self, statistic="balanced", cutoff="percentile", gamma=0.05, procedure="soft",
                 threshold=True, backend="mcmc", n_draws=700, tau=0.25, prior_scale=10.0, thin=10,
                 ref_weights="smoothed", random_state=None):
        self.statistic = statistic
        self.cutoff = cutoff
        self.gamma = gamma
        self.procedure = procedure
        self.threshold = threshold
        self.backend = backend
        self.n_draws = n_draws
        self.tau = tau
        self.prior_scale = prior_scale
        self.thin = thin
        self.ref_weights = ref_weights
        self.random_state = random_state

    def fit(self, X, z, y, pi_r):
        X = np.asarray(X, dtype=float)
        z = np.asarray(z)
        y = np.asarray(y, dtype=float)
        pi_r = np.asarray(pi_r, dtype=float)
        if not (X.shape[0] == z.size == y.size == pi_r.size):
            raise ConfigurationError("X, z, y and pi_r must have the same number of rows")
        ref, conv = z == 0, z == 1
        anchor = np.where(ref, pi_r, np.nan)
        if self.backend == "mle":
            model = MembershipMLE(tau=self.tau).fit(X, z, anchor)
        elif self.backend == "mcmc":
            model = MembershipMCMC(n_draws=self.n_draws, tau=self.tau, prior_scale=self.prior_scale,
                                   thin=self.thin, random_state=self.random_state).fit(X, z, anchor)
        else:
            raise ConfigurationError(f"backend={self.backend!r}")
        nan = np.full(conv.sum(), np.nan)
        samples = SampleSet(np.flatnonzero(ref), np.flatnonzero(conv), X[ref], X[conv], y[ref], y[conv],
                            pi_r[ref], nan, nan)
        self.draws_ = PropensityDraws.from_model(model, samples, getattr(model, "diagnostics_", None))
        self.model_ = model
        if self.threshold:
            spec = ThresholdSpec(self.statistic, self.cutoff, self.gamma, self.procedure)
            self.acceptance_ = build_acceptance_sets(self.draws_, spec)
        else:
            self.acceptance_ = None
        self.estimate_ = estimate_domain(self.draws_, self.acceptance_, samples, self.ref_weights)
        self.mu_ = self.estimate_.mu_point
        return self

    def accepted_mask(self):
        """Boolean mask over convenience rows retained in more than half of the draws."""
        check_is_fitted(self, "estimate_")
        if self.acceptance_ is None:
            return np.ones(self.draws_.n_c, dtype=bool)
        return self.acceptance_.per_draw.mean(axis=0) > 0.5
