import numpy as np
import pytest
from scipy.special import expit

from qrthresh.config import PopulationConfig, build_scenarios
from qrthresh.popgen import generate_population
from qrthresh.sampler import draw_samples


def simulate_stacked(rng, n, beta_c, beta_r, tau=0.25, n_cov=2):
    """Stacked rows drawn from the membership model itself.

    Covariates are standard normal; z ~ Bernoulli(pi_c / (pi_c + pi_r));
    reference rows carry an anchor whose logit is ``x @ beta_r + tau * noise``.
    """
    x = rng.standard_normal((n, n_cov))
    D = np.column_stack([np.ones(n), x])
    pc, pr = expit(D @ beta_c), expit(D @ beta_r)
    z = (rng.random(n) < pc / (pc + pr)).astype(float)
    anchor = expit(D @ beta_r + tau * rng.standard_normal(n))
    anchor[z == 1] = np.nan
    return x, z, anchor


@pytest.fixture(scope="session")
def small_population():
    cfg = PopulationConfig(N=600, n_r=60, target_n_c=120.0)
    return generate_population(11, cfg)


@pytest.fixture(scope="session")
def small_samples(small_population):
    return draw_samples(small_population, 60, 12, 13)


@pytest.fixture(scope="session")
def default_population():
    return generate_population(5, build_scenarios(overlap="H")[0].population)
