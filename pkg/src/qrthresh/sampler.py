"""Reference (PPS) and convenience (Poisson) sample draws, stacking and overlap."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from .exceptions import ConfigurationError, DomainError


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def pps_inclusion_probabilities(sizes, n):
    """Inclusion probabilities ``n * s_i / sum(s)`` for a fixed-size PPS design.

    Units whose share would exceed 1 are taken with certainty and the
    remaining sample size is spread over the rest, so the probabilities
    always sum to ``n``. Without oversized units this is exactly
    ``n * s_i / sum(s)``.
    """
    s = np.asarray(sizes, dtype=float)
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise DomainError("PPS sizes must be positive and finite")
    N = s.size
    if not 1 <= n <= N:
        raise DomainError(f"sample size n={n} must lie in [1, N={N}]")
    pi = np.zeros(N)
    certain = np.zeros(N, dtype=bool)
    while True:
        rest = ~certain
        remaining = n - certain.sum()
        pi[rest] = remaining * s[rest] / s[rest].sum()
        over = rest & (pi >= 1.0)
        if not over.any():
            break
        certain |= over
        pi[certain] = 1.0
    return pi


def draw_reference_pps(pop, n_r, seed):
    """Systematic PPS sample of exactly ``n_r`` frame indices, in frame order.

    The frame is randomly permuted before the systematic pass, so each unit's
    marginal inclusion probability equals
    ``pps_inclusion_probabilities(pop.size_r, n_r)``.
    """
    sizes = pop.size_r if hasattr(pop, "size_r") else np.asarray(pop, dtype=float)
    N = sizes.size
    if n_r > N:
        raise DomainError(f"n_r={n_r} exceeds population size {N}")
    pi = pps_inclusion_probabilities(sizes, n_r)
    return systematic_sample(pi, seed)


def systematic_sample(pi, seed):
    """Systematic unequal-probability sample on a randomly permuted order.

    ``pi`` must sum to an integer n; returns n sorted indices.
    """
    rng = _rng(seed)
    pi = np.asarray(pi, dtype=float)
    n = int(round(pi.sum()))
    perm = rng.permutation(pi.size)
    cum = np.cumsum(pi[perm])
    cum *= n / cum[-1]
    points = rng.random() + np.arange(n)
    hits = np.searchsorted(cum, points, side="right")
    chosen = perm[hits]
    if np.unique(chosen).size != n:
        raise DomainError("systematic pass selected a unit twice; probabilities exceed 1")
    return np.sort(chosen)


def draw_convenience_poisson(pop, seed):
    """Poisson sample: unit i enters independently with probability ``pi_c_true[i]``."""
    pi = pop.pi_c_true if hasattr(pop, "pi_c_true") else np.asarray(pop, dtype=float)
    if np.any(pi <= 0) or np.any(pi >= 1):
        raise DomainError("participation probabilities must lie in (0, 1)")
    rng = _rng(seed)
    return np.flatnonzero(rng.random(pi.size) < pi)


def calibrate_offset(x, beta_conv, target_n_c):
    """Offset such that ``sum(expit(x @ beta_conv + offset)) == target_n_c``.

    The sum is strictly increasing in the offset, so a bracketing root
    finder converges; the returned value reproduces the target to ~1e-9.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    eta = x @ np.asarray(beta_conv, dtype=float)
    N = eta.size
    if not 0 < target_n_c < N:
        raise DomainError(f"target_n_c={target_n_c} must lie in (0, N={N})")

    def excess(offset):
        return expit(eta + offset).sum() - target_n_c

    center = float(logit(target_n_c / N) - np.mean(eta))
    width = float(np.ptp(eta)) + 1.0
    lo, hi = center - width, center + width
    while excess(lo) > 0:
        lo -= width
    while excess(hi) < 0:
        hi += width
    return brentq(excess, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


@dataclass(frozen=True)
class SampleSet:
    """Realised reference and convenience samples from one population.

    Index arrays refer to rows of the population frame. ``stacked`` puts the
    reference rows first (z = 0) followed by the convenience rows (z = 1); a
    frame unit drawn by both arms appears twice.
    """

    ref_ids: np.ndarray
    conv_ids: np.ndarray
    x_ref: np.ndarray
    x_conv: np.ndarray
    y_ref: np.ndarray
    y_conv: np.ndarray
    pi_r_ref: np.ndarray
    pi_c_conv_true: np.ndarray
    pi_r_conv_true: np.ndarray

    @property
    def n_r(self):
        return self.ref_ids.size

    @property
    def n_c(self):
        return self.conv_ids.size

    @classmethod
    def from_population(cls, pop, ref_ids, conv_ids):
        ref_ids = np.asarray(ref_ids, dtype=int)
        conv_ids = np.asarray(conv_ids, dtype=int)
        return cls(
            ref_ids=ref_ids,
            conv_ids=conv_ids,
            x_ref=pop.x[ref_ids],
            x_conv=pop.x[conv_ids],
            y_ref=pop.y[ref_ids],
            y_conv=pop.y[conv_ids],
            pi_r_ref=pop.pi_r_true[ref_ids],
            pi_c_conv_true=pop.pi_c_true[conv_ids],
            pi_r_conv_true=pop.pi_r_true[conv_ids],
        )

    def stacked(self):
        """Return ``(x, z, pi_r_anchor, ids)``; ``pi_r_anchor`` is NaN on convenience rows."""
        x = np.vstack([self.x_ref, self.x_conv])
        z = np.concatenate([np.zeros(self.n_r), np.ones(self.n_c)])
        anchor = np.concatenate([self.pi_r_ref, np.full(self.n_c, np.nan)])
        ids = np.concatenate([self.ref_ids, self.conv_ids])
        return x, z, anchor, ids

    def stacked_rows(self):
        """Dict rows for CSV export of the stacked sample."""
        x, z, anchor, ids = self.stacked()
        y = np.concatenate([self.y_ref, self.y_conv])
        for i in range(z.size):
            row = {"id": int(ids[i]), "z_indicator": int(z[i])}
            row.update({f"x{k + 1}": x[i, k] for k in range(x.shape[1])})
            row["y"] = y[i]
            row["pi_r_true_if_reference"] = "" if np.isnan(anchor[i]) else anchor[i]
            yield row


def draw_samples(pop, n_r, ref_seed, conv_seed):
    """Draw both arms with independent random streams and wrap them in a SampleSet."""
    ref = draw_reference_pps(pop, n_r, ref_seed)
    conv = draw_convenience_poisson(pop, conv_seed)
    if conv.size == 0:
        raise DomainError("convenience sample is empty")
    return SampleSet.from_population(pop, ref, conv)


def overlap_percentage(ref_ids, conv_ids, denominator="reference"):
    """Percentage of frame units drawn into both samples.

    ``denominator`` selects what the shared count is divided by: the
    reference sample size (default), the convenience sample size, or the
    size of the union.
    """
    ref = np.unique(np.asarray(ref_ids))
    conv = np.unique(np.asarray(conv_ids))
    if ref.size == 0:
        raise DomainError("reference sample is empty")
    shared = np.intersect1d(ref, conv).size
    if denominator == "reference":
        base = ref.size
    elif denominator == "convenience":
        base = conv.size
    elif denominator == "union":
        base = np.union1d(ref, conv).size
    else:
        raise ConfigurationError(f"unknown overlap denominator {denominator!r}")
    if base == 0:
        raise DomainError("overlap denominator is zero")
    return 100.0 * shared / base
