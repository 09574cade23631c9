"""Monte Carlo driver reproducing the simulation study at desk scale."""

from __future__ import annotations

import csv
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import THRESHOLD_VARIANTS, ScenarioConfig
from .estimator import DomainEstimate, estimate_domain, reference_only_mean
from .exceptions import DomainError, QRThreshError
from .popgen import generate_population, true_domain_mean
from .propensity import MembershipMCMC, MembershipMLE, PropensityDraws
from .sampler import draw_samples, overlap_percentage
from .threshold import ThresholdSpec, build_acceptance_sets, threshold_diagnostics

logger = logging.getLogger(__name__)

ITERATION_FIELDS = ["overlap_mode", "iteration", "variant", "gamma", "mu_hat", "mu_true", "error",
                    "ci_lower", "ci_upper", "covered", "n_retained", "n_c", "overlap_pct", "mcmc_warning"]
AGGREGATE_FIELDS = ["overlap_mode", "variant", "gamma", "iterations", "bias", "rmse", "mad", "coverage",
                    "mean_n_retained"]
OVERLAP_FIELDS = ["overlap_mode", "iteration", "n_r", "n_c", "shared", "overlap_pct"]
UNCERTAINTY_FIELDS = ["overlap_mode", "iteration", "statistic", "gamma", "unit_id", "mean_statistic",
                      "mean_percentile", "percentile_05", "percentile_95", "switch_fraction"]

# variant -> (statistic, procedure, cutoff)
_THRESHOLD_RULES = {
    "balanced_soft": ("balanced", "soft", "percentile"),
    "balanced_hard_two_step": ("balanced", "hard", "percentile"),
    "reference_only_stat": ("reference_only", "soft", "percentile"),
    "ratio_stat": ("ratio", "soft", "percentile"),
    "balanced_fixed_point": ("balanced", "soft", "fixed_point"),
}
# statistics whose per-unit percentile bands go to threshold_uncertainty.csv
DIAGNOSTIC_STATISTICS = ("balanced", "ratio")


class IterationError(QRThreshError):
    """A module error raised inside one Monte Carlo iteration."""

    def __init__(self, iteration, overlap_mode, cause):
        super().__init__(f"iteration {iteration} ({overlap_mode}): {type(cause).__name__}: {cause}")
        self.iteration = iteration
        self.overlap_mode = overlap_mode
        self.cause = cause


@dataclass
class McReport:
    config: ScenarioConfig
    per_iteration: list = field(default_factory=list)
    aggregate: list = field(default_factory=list)
    overlap: list = field(default_factory=list)
    threshold_uncertainty: list = field(default_factory=list)

    def rows_for(self, variant, gamma=None):
        return [r for r in self.per_iteration
                if r["variant"] == variant and (gamma is None or r["gamma"] == gamma)]

    def metric(self, variant, name, gamma=""):
        for row in self.aggregate:
            if row["variant"] == variant and row["gamma"] == gamma:
                return row[name]
        raise KeyError((variant, gamma))


def iteration_seeds(base_seed, iteration):
    """Independent child streams (population, reference, convenience, mcmc) for one iteration.

    Keyed only by (base seed, iteration), so H and L runs share populations
    and reference draws.
    """
    root = np.random.SeedSequence(entropy=base_seed, spawn_key=(iteration,))
    return dict(zip(("population", "reference", "convenience", "mcmc"), root.spawn(4)))


def _fit_model(samples, cfg, seed):
    X, z, anchor, _ = samples.stacked()
    m = cfg.model
    if m.backend == "mle":
        model = MembershipMLE(tau=m.tau).fit(X, z, anchor)
        return PropensityDraws.from_model(model, samples, {"grad_norm": model.grad_norm_})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = MembershipMCMC(n_draws=m.S, tau=m.tau, prior_scale=m.prior_scale, thin=m.thin,
                               burn_in=m.burn_in, random_state=seed).fit(X, z, anchor)
    return PropensityDraws.from_model(model, samples, model.diagnostics_)


def _row(cfg, m, variant, gamma, est: DomainEstimate, mu_true, samples, overlap, warning):
    covered = est.covers(mu_true)
    return {
        "overlap_mode": cfg.overlap_mode,
        "iteration": m,
        "variant": variant,
        "gamma": gamma,
        "mu_hat": est.mu_point,
        "mu_true": mu_true,
        "error": est.mu_point - mu_true,
        "ci_lower": est.ci90[0],
        "ci_upper": est.ci90[1],
        "covered": "" if covered is None else int(covered),
        "n_retained": est.n_retained_mean,
        "n_c": samples.n_c,
        "overlap_pct": overlap,
        "mcmc_warning": warning,
    }


def run_iteration(cfg: ScenarioConfig, m: int):
    """One Monte Carlo iteration; returns (iteration rows, overlap row, uncertainty rows)."""
    seeds = iteration_seeds(cfg.seed, m)
    pop = generate_population(seeds["population"], cfg.population)
    samples = draw_samples(pop, cfg.population.n_r, seeds["reference"], seeds["convenience"])
    mu_true = true_domain_mean(pop)
    overlap = overlap_percentage(samples.ref_ids, samples.conv_ids, cfg.overlap_denominator)
    shared = np.intersect1d(samples.ref_ids, samples.conv_ids).size
    overlap_row = {"overlap_mode": cfg.overlap_mode, "iteration": m, "n_r": samples.n_r,
                   "n_c": samples.n_c, "shared": shared, "overlap_pct": overlap}

    needs_model = any(v not in ("true_weights", "reference_sample_only") for v in cfg.variants)
    draws = _fit_model(samples, cfg, seeds["mcmc"]) if needs_model else None
    warning = draws.diagnostics.get("warning", "") if draws is not None else ""

    rows = []
    uncertainty = []
    for variant in cfg.variants:
        if variant == "true_weights":
            truth = PropensityDraws.from_truth(samples)
            est = estimate_domain(truth, None, samples, ref_weights="true")
            rows.append(_row(cfg, m, variant, "", est, mu_true, samples, overlap, ""))
        elif variant == "reference_sample_only":
            mu = reference_only_mean(samples.y_ref, samples.pi_r_ref)
            est = DomainEstimate.from_draws([mu], [0])
            rows.append(_row(cfg, m, variant, "", est, mu_true, samples, overlap, ""))
        elif variant == "smoothed_no_threshold":
            est = estimate_domain(draws, None, samples, ref_weights="smoothed")
            rows.append(_row(cfg, m, variant, "", est, mu_true, samples, overlap, warning))
        else:
            statistic, procedure, cutoff = _THRESHOLD_RULES[variant]
            gammas = cfg.gamma_list if cutoff == "percentile" else ("",)
            for gamma in gammas:
                spec = ThresholdSpec(statistic=statistic, cutoff=cutoff,
                                     gamma=gamma if gamma != "" else 0.05, procedure=procedure)
                sets = build_acceptance_sets(draws, spec)
                est = estimate_domain(draws, sets, samples, ref_weights="smoothed")
                rows.append(_row(cfg, m, variant, gamma, est, mu_true, samples, overlap, warning))
    if draws is not None:
        gamma = 0.05 if 0.05 in cfg.gamma_list else cfg.gamma_list[0]
        for statistic in DIAGNOSTIC_STATISTICS:
            sets = build_acceptance_sets(draws, ThresholdSpec(statistic=statistic, gamma=gamma))
            diag = threshold_diagnostics(sets)
            for j, unit_id in enumerate(samples.conv_ids):
                row = {"overlap_mode": cfg.overlap_mode, "iteration": m, "statistic": statistic,
                       "gamma": gamma, "unit_id": int(unit_id)}
                row.update({k: float(diag[k][j]) for k in UNCERTAINTY_FIELDS[5:]})
                uncertainty.append(row)
    return rows, overlap_row, uncertainty


def _run_iteration_safe(args):
    cfg, m = args
    try:
        return run_iteration(cfg, m)
    except QRThreshError as exc:
        raise IterationError(m, cfg.overlap_mode, exc) from exc


def aggregate_metrics(rows, overlap_mode=None):
    """Bias, RMSE, MAD (median absolute error) and coverage per (variant, gamma).

    Coverage is the mean of the non-blank ``covered`` flags; it is NaN for
    variants without draw uncertainty.
    """
    groups = {}
    for r in rows:
        groups.setdefault((r["variant"], r["gamma"]), []).append(r)
    if not groups:
        raise DomainError("no rows to aggregate")
    out = []
    for (variant, gamma), grp in groups.items():
        if not grp:
            raise DomainError(f"empty group {variant!r}")
        err = np.array([r["mu_hat"] - r["mu_true"] for r in grp], dtype=float)
        flags = [r["covered"] for r in grp if r.get("covered", "") != ""]
        out.append({
            "overlap_mode": overlap_mode if overlap_mode is not None else grp[0].get("overlap_mode", ""),
            "variant": variant,
            "gamma": gamma,
            "iterations": len(grp),
            "bias": float(err.mean()),
            "rmse": float(np.sqrt(np.mean(err**2))),
            "mad": float(np.median(np.abs(err))),
            "coverage": float(np.mean(flags)) if flags else float("nan"),
            "mean_n_retained": float(np.mean([r.get("n_retained", np.nan) for r in grp])),
        })
    return out


def default_jobs():
    return os.cpu_count() or 1


def run_scenario(cfg: ScenarioConfig, jobs=1) -> McReport:
    """Run all M iterations of one scenario and aggregate them.

    Iterations are independent jobs; results are assembled in iteration
    order, so the report does not depend on ``jobs``.
    """
    tasks = [(cfg, m) for m in range(cfg.M)]
    if jobs > 1 and cfg.M > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_iteration_safe, tasks))
    else:
        results = [_run_iteration_safe(t) for t in tasks]
    report = McReport(config=cfg)
    for rows, overlap_row, uncertainty in results:
        report.per_iteration.extend(rows)
        report.overlap.append(overlap_row)
        report.threshold_uncertainty.extend(uncertainty)
    report.aggregate = aggregate_metrics(report.per_iteration, cfg.overlap_mode)
    return report


# ---------------------------------------------------------------------------
# report files


def _format(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_csv(path, fieldnames, rows, metadata):
    """CSV with a leading ``# key=value ...`` metadata comment line and a header row."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in metadata.items()) + "\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(row.get(k, "")) for k in fieldnames})
    return path


def read_csv(path):
    """Read a report CSV written by :func:`write_csv`, skipping the metadata line."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


REPORT_FILES = ("report_aggregate.csv", "report_iterations.csv", "overlap.csv", "threshold_uncertainty.csv")


def write_reports(reports, output_dir, metadata):
    """Write the four report CSVs, concatenating the given scenario reports."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = (
        ("report_aggregate.csv", AGGREGATE_FIELDS, [r for rep in reports for r in rep.aggregate]),
        ("report_iterations.csv", ITERATION_FIELDS, [r for rep in reports for r in rep.per_iteration]),
        ("overlap.csv", OVERLAP_FIELDS, [r for rep in reports for r in rep.overlap]),
        ("threshold_uncertainty.csv", UNCERTAINTY_FIELDS,
         [r for rep in reports for r in rep.threshold_uncertainty]),
    )
    return [write_csv(out / name, fields, rows, metadata) for name, fields, rows in tables]


def report_metadata(cfg: ScenarioConfig):
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed, "tool_version": __version__}


__all__ = [
    "McReport", "IterationError", "THRESHOLD_VARIANTS", "aggregate_metrics", "iteration_seeds",
    "run_iteration", "run_scenario", "write_reports", "write_csv", "read_csv", "report_metadata",
]
