"""Trimmed-variance curve for the one-arm Hajek mean, used to check the cutoff solvers.

Outcome variance is taken as constant (``sigma_y2``) across units, so it
only scales the curve and never moves its minimiser.

Two forms of the variance at cutoff ``eps`` are available, both computed
over the surviving units ``A = {e_i > eps}``:

``hajek``
    ``sigma_y2 * sum_A e^-2 / (sum_A e^-1)^2``, the model variance of the
    Hajek mean.
``mean_inverse``
    ``sigma_y2 * sum_A e^-1 / |A|^2``, the ``F(eps) / G(eps)^2`` curve whose
    stationarity condition is ``1/eps = 2 * mean_A e^-1``. This is the curve
    minimised by the fixed-point cutoff.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import as_probabilities
from .exceptions import ConfigurationError, DomainError
from .threshold import NoFixedPointWarning

FORMS = ("hajek", "mean_inverse")
GRID_STEP = 1e-3


def _check_propensities(propensities):
    e = as_probabilities(propensities, "propensities", allow_one=False)
    if e.size == 0:
        raise DomainError("no propensities supplied")
    return e


def variance_at_cutoff(propensities, sigma_y2=1.0, eps=0.0, form="hajek"):
    """Variance of the trimmed mean when units with ``e <= eps`` are dropped."""
    if form not in FORMS:
        raise ConfigurationError(f"form={form!r}; expected one of {FORMS}")
    if sigma_y2 <= 0:
        raise DomainError("sigma_y2 must be positive")
    e = _check_propensities(propensities)
    kept = e[e > eps]
    if kept.size == 0:
        raise DomainError(f"no propensity exceeds the cutoff {eps}")
    inv = 1.0 / kept
    if form == "hajek":
        return float(sigma_y2 * np.sum(inv**2) / np.sum(inv) ** 2)
    return float(sigma_y2 * np.sum(inv) / kept.size**2)


def appendix_cutoff(propensities):
    """Cutoff solving ``1/eps = 2 * sum_{e>eps} e^-1 / #{e > eps}``.

    Returns 0.0 with a warning (retain everything) when no cutoff is
    self-consistent.
    """
    e = _check_propensities(propensities)
    inv = sorted(1.0 / e)
    n = len(inv)
    best, best_var = None, np.inf
    total = 0.0
    for k in range(1, n + 1):
        total += inv[k - 1]
        if k < n and inv[k] == inv[k - 1]:
            continue
        r = 2.0 * total / k
        nxt = inv[k] if k < n else np.inf
        if inv[k - 1] < r <= nxt:
            var = total / k**2
            if var < best_var:
                best, best_var = r, var
    r = best
    if r is None:
        warnings.warn("no self-consistent cutoff; retaining all units", NoFixedPointWarning, stacklevel=2)
        return 0.0
    return 1.0 / r


@dataclass(frozen=True)
class VarianceCurve:
    epsilons: np.ndarray
    variances: np.ndarray
    sigma_y2: float
    form: str

    @property
    def argmin_epsilon(self):
        """Smallest grid cutoff attaining the minimum variance."""
        return float(self.epsilons[np.argmin(self.variances)])

    def minimizing_epsilons(self):
        """Every grid cutoff attaining the minimum (the curve is piecewise constant)."""
        return self.epsilons[self.variances == self.variances.min()]

    def distance_to_argmin(self, eps):
        """Distance from ``eps`` to the nearest minimising grid cutoff."""
        return float(np.min(np.abs(self.minimizing_epsilons() - eps)))

    def rows(self):
        for e, v in zip(self.epsilons, self.variances):
            if np.isfinite(v):
                yield {"epsilon": e, "variance": v}


def variance_curve(propensities, sigma_y2=1.0, step=GRID_STEP, form="mean_inverse"):
    """Evaluate the trimmed variance on the grid ``step, 2*step, ...`` below 1.

    Grid points with no surviving units carry ``inf``. Evaluation uses
    cumulative sums over the sorted propensities, so every grid point in a
    run with the same surviving set gets the identical value.
    """
    if form not in FORMS:
        raise ConfigurationError(f"form={form!r}; expected one of {FORMS}")
    e = _check_propensities(propensities)
    n_grid = int(round(1.0 / step)) - 1
    grid = np.round(np.arange(1, n_grid + 1) * step, 12)
    desc = np.sort(e)[::-1]
    inv = 1.0 / desc
    c1 = np.cumsum(inv)
    c2 = np.cumsum(inv**2)
    # number of units with e > eps
    counts = desc.size - np.searchsorted(np.sort(e), grid, side="right")
    idx = np.maximum(counts - 1, 0)
    if form == "hajek":
        vals = sigma_y2 * c2[idx] / c1[idx] ** 2
    else:
        vals = sigma_y2 * c1[idx] / np.maximum(counts, 1) ** 2
    vals = np.where(counts > 0, vals, np.inf)
    return VarianceCurve(grid, vals, float(sigma_y2), form)
