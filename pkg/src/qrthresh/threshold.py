"""Thresholding statistics, cutoff solvers and acceptance sets for convenience units."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ._validation import as_probabilities, check_choice, check_fraction
from .exceptions import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

STATISTICS = ("one_arm_pi_c", "balanced", "reference_only", "ratio")
CUTOFFS = ("percentile", "fixed_point")
PROCEDURES = ("soft", "hard")


class NoFixedPointWarning(RuntimeWarning):
    """No self-consistent cutoff exists; every unit is retained."""


def statistic_value(stat, pi_c, pi_r):
    """Thresholding statistic for probabilities ``pi_c`` and ``pi_r`` (broadcasting).

    ``one_arm_pi_c`` -> pi_c, ``balanced`` -> sqrt(pi_r pi_c / (pi_r + pi_c)),
    ``reference_only`` -> pi_r, ``ratio`` -> pi_r / pi_c.
    """
    check_choice(stat, "statistic", STATISTICS)
    scalar = np.ndim(pi_c) == 0 and np.ndim(pi_r) == 0
    pc = as_probabilities(pi_c, "pi_c") if stat != "reference_only" else np.asarray(pi_c, float)
    pr = as_probabilities(pi_r, "pi_r") if stat != "one_arm_pi_c" else np.asarray(pi_r, float)
    if stat == "one_arm_pi_c":
        out = pc
    elif stat == "reference_only":
        out = pr
    elif stat == "ratio":
        out = pr / pc
    else:
        out = np.sqrt(pr * pc / (pr + pc))
    return float(out.reshape(-1)[0]) if scalar else out


def _sorted_scan(values, *, on_mean_boundary_inclusive):
    """Shared prefix scan for the fixed-point cutoffs.

    ``values`` are per-unit costs (1/pi, or 1/pi_c + 1/pi_r). For every
    prefix of the ascending order that ends between two distinct values, the
    candidate fixed point is ``r_k = 2 * mean(prefix)``; the prefix is
    self-consistent when it is exactly the set of values below (or, with
    ``on_mean_boundary_inclusive``, not above) ``r_k``. Among self-consistent
    prefixes the one with the smallest ``sum(prefix) / k**2`` is returned.

    Returns ``r_k`` or None when no prefix is self-consistent.
    """
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    k = np.arange(1, n + 1)
    csum = np.cumsum(v)
    r = 2.0 * csum / k
    nxt = np.append(v[1:], np.inf)
    boundary = nxt > v
    if on_mean_boundary_inclusive:
        inside = v <= r
        outside = nxt > r
    else:
        inside = v < r
        outside = nxt >= r
    ok = np.flatnonzero(boundary & inside & outside)
    if ok.size == 0:
        return None
    best = ok[np.argmin(csum[ok] / k[ok] ** 2)]
    return float(r[best])


def solve_fixed_point_one_arm(pi_c_values):
    """Cutoff alpha with ``1/alpha = 2 * mean{1/pi_c : pi_c > alpha}``.

    Units with ``pi_c > alpha`` are retained. If no self-consistent cutoff
    exists, warns and returns 0.0 (retain everything).
    """
    pi = as_probabilities(pi_c_values, "pi_c")
    if pi.size == 0:
        raise DomainError("no propensities supplied")
    r = _sorted_scan(1.0 / pi, on_mean_boundary_inclusive=False)
    if r is None:
        warnings.warn("no self-consistent one-arm cutoff; retaining all units", NoFixedPointWarning, stacklevel=2)
        return 0.0
    return 1.0 / r


def solve_fixed_point_two_arm(pi_c_values, pi_r_values=None):
    """Cutoff alpha with ``1/alpha^2 = 2 * mean{u : u <= 1/alpha^2}``, ``u = 1/pi_c + 1/pi_r``.

    Accepts either two arrays or a single ``(n, 2)`` array of ``(pi_c, pi_r)``
    pairs. The acceptance set is ``{balanced statistic > alpha}``, i.e.
    ``u < 1/alpha^2``. Warns and returns 0.0 when no fixed point exists.
    """
    if pi_r_values is None:
        pairs = np.asarray(pi_c_values, dtype=float).reshape(-1, 2) if np.size(pi_c_values) else np.empty((0, 2))
        pi_c_values, pi_r_values = pairs[:, 0], pairs[:, 1]
    pc = as_probabilities(pi_c_values, "pi_c")
    pr = as_probabilities(pi_r_values, "pi_r")
    if pc.size == 0:
        raise DomainError("no probability pairs supplied")
    if pc.shape != pr.shape:
        raise ConfigurationError("pi_c and pi_r lengths differ")
    r = _sorted_scan(1.0 / pc + 1.0 / pr, on_mean_boundary_inclusive=True)
    if r is None:
        warnings.warn("no self-consistent two-arm cutoff; retaining all units", NoFixedPointWarning, stacklevel=2)
        return 0.0
    return 1.0 / math.sqrt(r)


def nearest_rank(n, gamma):
    """1-based nearest-rank position of the gamma-quantile among n values."""
    return max(1, math.ceil(gamma * n - 1e-9))


def percentile_cutoff(stat_values, gamma):
    """Nearest-rank gamma-quantile; units with a statistic strictly above it are retained."""
    values = np.asarray(stat_values, dtype=float).reshape(-1)
    if values.size == 0:
        raise DomainError("no statistic values supplied")
    check_fraction(gamma, "gamma", 0.0, 0.5)
    k = nearest_rank(values.size, gamma)
    return float(np.partition(values, k - 1)[k - 1])


@dataclass(frozen=True)
class ThresholdSpec:
    """Which statistic, which cutoff rule and which procedure to apply.

    ``cutoff="fixed_point"`` is defined for ``one_arm_pi_c`` (one-arm
    solver) and ``balanced`` (two-arm solver) only.
    """

    statistic: str = "balanced"
    cutoff: str = "percentile"
    gamma: float = 0.05
    procedure: str = "soft"
    membership_fraction: float = 0.5

    def __post_init__(self):
        check_choice(self.statistic, "statistic", STATISTICS)
        check_choice(self.cutoff, "cutoff", CUTOFFS)
        check_choice(self.procedure, "procedure", PROCEDURES)
        if self.cutoff == "percentile":
            check_fraction(self.gamma, "gamma", 0.0, 0.5)
        elif self.statistic not in ("one_arm_pi_c", "balanced"):
            raise ConfigurationError(f"no fixed-point rule for the {self.statistic!r} statistic")
        check_fraction(self.membership_fraction, "membership_fraction", 0.0, 1.0, include_high=False)


@dataclass(frozen=True)
class AcceptanceSets:
    """Acceptance sets over the convenience units of one sample.

    Attributes
    ----------
    soft_sets : bool ndarray (S, n_c)
        ``T_si > alpha_s`` per draw.
    per_draw : bool ndarray (S, n_c)
        Sets the estimator uses: ``soft_sets`` for the soft procedure, the
        hard set repeated on every row for the hard procedure.
    hard_set : bool ndarray (n_c,) or None
    switch_fraction : ndarray (n_c,)
        Fraction of draws on the minority side of the cutoff.
    alphas : ndarray (S,)
    statistics : ndarray (S, n_c)
    """

    soft_sets: np.ndarray
    per_draw: np.ndarray
    hard_set: np.ndarray | None
    switch_fraction: np.ndarray
    alphas: np.ndarray
    statistics: np.ndarray
    spec: ThresholdSpec

    @property
    def S(self):
        return self.per_draw.shape[0]

    @property
    def n_retained(self):
        return self.per_draw.sum(axis=1)


def _draw_cutoff(T, pc, pr, spec):
    if spec.cutoff == "percentile":
        return percentile_cutoff(T, spec.gamma)
    if spec.statistic == "one_arm_pi_c":
        return solve_fixed_point_one_arm(pc)
    return solve_fixed_point_two_arm(pc, pr)


def build_acceptance_sets(draws, spec: ThresholdSpec) -> AcceptanceSets:
    """Per-draw acceptance sets (and the hard set) for a PropensityDraws object.

    An all-equal statistic distribution would exclude everybody under the
    strict inequality; such draws retain all units instead.
    """
    pi_c = np.atleast_2d(np.asarray(draws.pi_c, dtype=float))
    pi_r = np.atleast_2d(np.asarray(draws.pi_r, dtype=float))
    if pi_c.shape != pi_r.shape or pi_c.size == 0:
        raise ConfigurationError(f"draw matrices have shapes {pi_c.shape} and {pi_r.shape}")
    S, n = pi_c.shape
    T = statistic_value(spec.statistic, pi_c, pi_r)

    if spec.cutoff == "percentile":
        k = nearest_rank(n, spec.gamma)
        alphas = np.partition(T, k - 1, axis=1)[:, k - 1]
    else:
        alphas = np.array([_draw_cutoff(T[s], pi_c[s], pi_r[s], spec) for s in range(S)])
    soft = T > alphas[:, None]
    empty = ~soft.any(axis=1)
    if empty.any():
        logger.warning("%d draw(s) with a degenerate statistic distribution; retaining all units", empty.sum())
        soft[empty] = True

    counts = soft.sum(axis=0)
    switch = np.minimum(counts, S - counts) / S
    hard = None
    used = soft
    if spec.procedure == "hard":
        hard = counts > spec.membership_fraction * S
        used = np.broadcast_to(hard, (S, n)).copy()
    return AcceptanceSets(soft, used, hard, switch, alphas, T, spec)


def threshold_diagnostics(sets: AcceptanceSets):
    """Per-unit percentile bands of the statistic across draws.

    For each draw, every unit's statistic is converted to its percentile
    (0-100) among the convenience units; the bands summarise those
    percentiles over draws. Returns a dict of arrays keyed
    ``mean_statistic, mean_percentile, percentile_05, percentile_95,
    switch_fraction``.
    """
    T = sets.statistics
    n = T.shape[1]
    pct = 100.0 * rankdata(T, axis=1) / n
    return {
        "mean_statistic": T.mean(axis=0),
        "mean_percentile": pct.mean(axis=0),
        "percentile_05": np.percentile(pct, 5, axis=0),
        "percentile_95": np.percentile(pct, 95, axis=0),
        "switch_fraction": sets.switch_fraction,
    }
