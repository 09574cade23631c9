"""Variance-optimal thresholding of convenience-sample units in combined survey estimates."""

__version__ = "0.1.0"

from .config import ModelConfig, PopulationConfig, ScenarioConfig  # noqa: E402
from .estimator import (  # noqa: E402
    DomainEstimate,
    ThresholdedDomainMean,
    estimate_domain,
    hajek_combined_mean,
    reference_only_mean,
)
from .exceptions import ConfigurationError, DomainError, EstimationError  # noqa: E402
from .popgen import Population, generate_population, true_domain_mean  # noqa: E402
from .propensity import MembershipMCMC, MembershipMLE, PropensityDraws, fit_mcmc, fit_mle  # noqa: E402
from .sampler import SampleSet, draw_samples, overlap_percentage  # noqa: E402
from .threshold import (  # noqa: E402
    AcceptanceSets,
    ThresholdSpec,
    build_acceptance_sets,
    percentile_cutoff,
    solve_fixed_point_one_arm,
    solve_fixed_point_two_arm,
    statistic_value,
)

__all__ = [
    "AcceptanceSets", "ConfigurationError", "DomainError", "DomainEstimate", "EstimationError",
    "MembershipMCMC", "MembershipMLE", "ModelConfig", "Population", "PopulationConfig",
    "PropensityDraws", "SampleSet", "ScenarioConfig", "ThresholdSpec", "ThresholdedDomainMean",
    "build_acceptance_sets", "draw_samples", "estimate_domain", "fit_mcmc", "fit_mle",
    "generate_population", "hajek_combined_mean", "overlap_percentage", "percentile_cutoff",
    "reference_only_mean", "solve_fixed_point_one_arm", "solve_fixed_point_two_arm",
    "statistic_value", "true_domain_mean",
]
