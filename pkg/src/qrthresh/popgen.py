"""Finite population generation for the simulation study."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .config import PopulationConfig
from .exceptions import ConfigurationError, DomainError
from .sampler import calibrate_offset, pps_inclusion_probabilities

OUTCOME_LOG_VARIANCE = 2.0


class Unit(NamedTuple):
    id: int
    x: np.ndarray
    y: float
    pi_r_true: float
    pi_c_true: float
    size_r: float


@dataclass(frozen=True)
class Population:
    """A frame of N units stored column-wise.

    Attributes
    ----------
    x : ndarray of shape (N, K)
    y : ndarray of shape (N,)
        Strictly positive outcomes.
    size_r : ndarray of shape (N,)
        PPS size measure ``log(exp(x @ beta) + 1)``.
    pi_r_true, pi_c_true : ndarray of shape (N,)
        Design inclusion probability (reference arm) and participation
        probability (convenience arm).
    """

    x: np.ndarray
    y: np.ndarray
    size_r: np.ndarray
    pi_r_true: np.ndarray
    pi_c_true: np.ndarray
    beta_outcome: np.ndarray
    beta_conv: np.ndarray
    conv_offset: float

    @property
    def n_total(self):
        return self.x.shape[0]

    @property
    def ids(self):
        return np.arange(self.n_total)

    def __len__(self):
        return self.n_total

    def unit(self, i):
        return Unit(int(i), self.x[i], float(self.y[i]), float(self.pi_r_true[i]),
                    float(self.pi_c_true[i]), float(self.size_r[i]))

    @property
    def units(self):
        return [self.unit(i) for i in range(self.n_total)]


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def generate_covariates(rng, N, K, n_binary):
    """First ``n_binary`` columns Bernoulli(0.5), the rest standard normal."""
    binary = rng.binomial(1, 0.5, size=(N, n_binary)).astype(float)
    continuous = rng.standard_normal((N, K - n_binary))
    return np.hstack([binary, continuous])


def generate_population(seed, cfg: PopulationConfig | None = None) -> Population:
    """Draw a population: covariates, log-normal outcomes and both true probabilities.

    Covariates and outcomes consume the random stream before anything that
    depends on the convenience design, so H and L populations generated from
    the same seed share ``x`` and ``y``.
    """
    cfg = cfg or PopulationConfig()
    rng = _rng(seed)
    beta = np.asarray(cfg.beta, dtype=float)
    beta_conv = np.asarray(cfg.resolved_beta_conv(), dtype=float)
    if beta.shape != (cfg.K,) or beta_conv.shape != (cfg.K,):
        raise ConfigurationError("beta / beta_conv do not match K")

    x = generate_covariates(rng, cfg.N, cfg.K, cfg.n_binary)
    eta = x @ beta
    log_y = eta + np.sqrt(OUTCOME_LOG_VARIANCE) * rng.standard_normal(cfg.N)
    y = np.exp(log_y)

    size_r = np.logaddexp(eta, 0.0)
    pi_r = pps_inclusion_probabilities(size_r, cfg.n_r)

    eta_c = x @ beta_conv
    offset = cfg.conv_offset
    if offset is None:
        offset = calibrate_offset(x, beta_conv, cfg.target_n_c)
    pi_c = expit(eta_c + offset)
    if np.any(pi_c <= 0.0) or np.any(pi_c >= 1.0):
        raise ConfigurationError("participation probabilities saturate at 0 or 1; shrink beta_conv or offset")

    return Population(x=x, y=y, size_r=size_r, pi_r_true=pi_r, pi_c_true=pi_c,
                      beta_outcome=beta, beta_conv=beta_conv, conv_offset=float(offset))


def true_domain_mean(pop: Population) -> float:
    """Finite-population mean of y."""
    y = pop.y if isinstance(pop, Population) else np.asarray(pop, dtype=float)
    if y.size == 0:
        raise DomainError("empty population")
    return float(np.mean(y))


def population_frame_rows(pop: Population):
    """Yield dict rows (id, x1..xK, y, pi_r_true, pi_c_true) for CSV export."""
    K = pop.x.shape[1]
    for i in range(pop.n_total):
        row = {"id": i}
        row.update({f"x{k + 1}": pop.x[i, k] for k in range(K)})
        row.update(y=pop.y[i], pi_r_true=pop.pi_r_true[i], pi_c_true=pop.pi_c_true[i])
        yield row
