"""Command-line interface.

Subcommands: ``simulate``, ``fit``, ``threshold``, ``estimate``, ``run`` and
``oracle``. Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error. The default output directory comes from
``$QRTHRESH_OUTPUT_DIR`` (falling back to ``./qrthresh_out``).
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import VARIANTS, build_scenarios, read_config_file, to_flat
from .estimator import estimate_domain
from .exceptions import ConfigurationError, QRThreshError
from .harness import (
    REPORT_FILES,
    default_jobs,
    iteration_seeds,
    read_csv,
    report_metadata,
    run_scenario,
    write_csv,
    write_reports,
)
from .oracle import appendix_cutoff, variance_curve
from .popgen import generate_population, population_frame_rows
from .propensity import MembershipMCMC, MembershipMLE, PropensityDraws
from .sampler import SampleSet, draw_samples
from .threshold import STATISTICS, ThresholdSpec, build_acceptance_sets, threshold_diagnostics

logger = logging.getLogger("qrthresh")

OUTPUT_ENV = "QRTHRESH_OUTPUT_DIR"


class UsageError(Exception):
    """Bad flags or unreadable inputs (exit status 2)."""


def default_output_dir():
    import os

    return os.environ.get(OUTPUT_ENV, "qrthresh_out")


# ---------------------------------------------------------------------------
# shared helpers


def _load_values(args):
    values = {}
    if getattr(args, "manifest", None):
        try:
            manifest = json.loads(Path(args.manifest).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read manifest {args.manifest}: {exc}") from None
        values.update(manifest["resolved_config"])
    if getattr(args, "config", None):
        if not Path(args.config).exists() and not _is_bundled(args.config):
            raise UsageError(f"config file not found: {args.config}")
        values.update(read_config_file(args.config))
    return values


def _is_bundled(name):
    from .config import bundled_config_path

    p = Path(name)
    return p.parent == Path(".") and bundled_config_path(p.name).exists()


def _scenarios(args, **extra):
    values = _load_values(args)
    overrides = dict(extra)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "overlap", None):
        overrides["overlap"] = tuple(m.strip().upper() for m in args.overlap.split(","))
    return build_scenarios(values, **overrides)


def _write_manifest(out_dir, args, scenarios, command):
    manifest = {
        "command": command,
        "config_path": getattr(args, "config", None),
        "resolved_config": to_flat(scenarios),
        "seed": scenarios[0].seed,
        "output_dir": str(out_dir),
        "tool_version": __version__,
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _output_dir(args):
    out = Path(args.output_dir or default_output_dir())
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _read_stacked(path):
    try:
        rows = read_csv(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise UsageError(f"{path} has no rows")
    xcols = sorted((c for c in rows[0] if c.startswith("x") and c[1:].isdigit()), key=lambda c: int(c[1:]))
    z = np.array([int(r["z_indicator"]) for r in rows])
    x = np.array([[float(r[c]) for c in xcols] for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    ids = np.array([int(r["id"]) for r in rows])
    anchor = np.array([float(r["pi_r_true_if_reference"]) if r["pi_r_true_if_reference"] else np.nan
                       for r in rows])
    ref, conv = z == 0, z == 1
    nan = np.full(conv.sum(), np.nan)
    return SampleSet(ids[ref], ids[conv], x[ref], x[conv], y[ref], y[conv], anchor[ref], nan, nan)


def _read_draws(draws_path, ref_path, samples):
    conv = read_csv(draws_path)
    S = 1 + max(int(r["draw_index"]) for r in conv)
    pi_c = np.array([float(r["pi_c_hat"]) for r in conv]).reshape(S, -1)
    pi_r = np.array([float(r["pi_r_hat"]) for r in conv]).reshape(S, -1)
    if ref_path:
        ref_rows = read_csv(ref_path)
        ref = np.array([float(r["pi_r_hat"]) for r in ref_rows]).reshape(S, -1)
    else:
        ref = np.broadcast_to(samples.pi_r_ref, (S, samples.n_r)).copy()
    return PropensityDraws(pi_c, pi_r, ref, "mle" if S == 1 else "mcmc")


def _spec_from_args(args):
    return ThresholdSpec(statistic=args.statistic, cutoff=args.cutoff, gamma=args.gamma,
                         procedure=args.procedure)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    scenarios = _scenarios(args)
    if len(scenarios) != 1:
        raise UsageError("simulate takes a single overlap mode (--overlap H or --overlap L)")
    cfg = scenarios[0]
    out = _output_dir(args)
    seeds = iteration_seeds(cfg.seed, args.iteration)
    pop = generate_population(seeds["population"], cfg.population)
    samples = draw_samples(pop, cfg.population.n_r, seeds["reference"], seeds["convenience"])
    meta = report_metadata(cfg)
    K = cfg.population.K
    xcols = [f"x{k + 1}" for k in range(K)]
    write_csv(out / "frame.csv", ["id", *xcols, "y", "pi_r_true", "pi_c_true"], population_frame_rows(pop), meta)
    write_csv(out / "stacked.csv", ["id", "z_indicator", *xcols, "y", "pi_r_true_if_reference"],
              samples.stacked_rows(), meta)
    _write_manifest(out, args, scenarios, "simulate")
    print(f"wrote {out / 'frame.csv'} ({pop.n_total} rows) and {out / 'stacked.csv'} "
          f"({samples.n_r} reference + {samples.n_c} convenience rows)")
    return 0


def cmd_fit(args):
    samples = _read_stacked(args.stacked)
    out = _output_dir(args)
    X, z, anchor, _ = samples.stacked()
    if args.backend == "mle":
        model = MembershipMLE(tau=args.tau).fit(X, z, anchor)
        diag = {"backend": "mle", "n_iter": model.n_iter_, "grad_norm": model.grad_norm_}
    else:
        model = MembershipMCMC(n_draws=args.S, tau=args.tau, thin=args.thin,
                               random_state=args.seed).fit(X, z, anchor)
        diag = {"backend": "mcmc", **model.diagnostics_}
    draws = PropensityDraws.from_model(model, samples, diag)
    meta = {"seed": args.seed, "tool_version": __version__}
    write_csv(out / "draws.csv", ["draw_index", "unit_id", "pi_c_hat", "pi_r_hat"],
              draws.long_rows(samples.conv_ids), meta)
    ref_rows = ({"draw_index": s, "unit_id": int(samples.ref_ids[j]), "pi_r_hat": draws.ref_smoothed[s, j]}
                for s in range(draws.S) for j in range(samples.n_r))
    write_csv(out / "ref_draws.csv", ["draw_index", "unit_id", "pi_r_hat"], ref_rows, meta)
    with open(out / "run.log", "a") as fh:
        fh.write(json.dumps(diag, sort_keys=True, default=float) + "\n")
    print(json.dumps(diag, sort_keys=True, default=float))
    return 0


def cmd_threshold(args):
    samples = _read_stacked(args.stacked)
    draws = _read_draws(args.draws, None, samples)
    sets = build_acceptance_sets(draws, _spec_from_args(args))
    diag = threshold_diagnostics(sets)
    out = _output_dir(args)
    rows = ({"unit_id": int(samples.conv_ids[j]), **{k: float(v[j]) for k, v in diag.items()},
             "retained_fraction": float(sets.per_draw[:, j].mean())}
            for j in range(samples.n_c))
    fields = ["unit_id", "mean_statistic", "mean_percentile", "percentile_05", "percentile_95",
              "switch_fraction", "retained_fraction"]
    write_csv(out / "threshold_diagnostics.csv", fields, rows, {"tool_version": __version__})
    print(f"mean retained per draw: {sets.n_retained.mean():.1f} of {samples.n_c}")
    return 0


def cmd_estimate(args):
    samples = _read_stacked(args.stacked)
    draws = _read_draws(args.draws, args.ref_draws, samples)
    sets = None if args.no_threshold else build_acceptance_sets(draws, _spec_from_args(args))
    est = estimate_domain(draws, sets, samples, ref_weights=args.ref_weights)
    out = _output_dir(args)
    write_csv(out / "estimates.csv", ["draw_index", "mu_s", "n_retained"], est.draw_rows(),
              {"tool_version": __version__})
    summary = {"mu_point": est.mu_point, "ci90": list(est.ci90), "n_retained_mean": est.n_retained_mean,
               "draws": est.S}
    print(json.dumps(summary))
    return 0


def cmd_run(args):
    extra = {}
    if args.variants:
        extra["variants"] = tuple(v.strip() for v in args.variants.split(","))
    if args.M is not None:
        extra["M"] = args.M
    if args.S is not None:
        extra["S"] = args.S
    scenarios = _scenarios(args, **extra)
    if args.dry_run:
        print(json.dumps(to_flat(scenarios), indent=2, sort_keys=True))
        return 0
    out = _output_dir(args)
    staging = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        reports = [run_scenario(cfg, jobs=args.jobs or default_jobs()) for cfg in scenarios]
        meta = {"config_hash": _run_hash(scenarios), "seed": scenarios[0].seed, "tool_version": __version__}
        write_reports(reports, staging, meta)
        if args.plots:
            from .plots import write_plots

            write_plots(staging)
        _write_manifest(staging, args, scenarios, "run")
        for item in staging.iterdir():
            target = out / item.name
            if target.exists():
                target.unlink()
            shutil.move(str(item), target)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    for rep in reports:
        for row in rep.aggregate:
            if row["variant"] in ("balanced_soft", "smoothed_no_threshold", "true_weights"):
                print(f"{row['overlap_mode']} {row['variant']:<24} gamma={row['gamma']!s:<5} "
                      f"bias={row['bias']:+.4f} rmse={row['rmse']:.4f} coverage={row['coverage']:.2f}")
    print("wrote " + ", ".join(REPORT_FILES) + f" to {out}")
    return 0


def _run_hash(scenarios):
    import hashlib

    blob = "".join(s.config_hash() for s in scenarios).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def cmd_oracle(args):
    if args.propensities:
        try:
            text = Path(args.propensities).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read {args.propensities}: {exc.strerror}") from None
        e = np.array([float(t) for t in text.replace(",", " ").split()])
    else:
        rng = np.random.default_rng(args.seed)
        e = np.clip(rng.beta(args.a, args.b, size=args.n), 1e-6, 1 - 1e-6)
    eps = appendix_cutoff(e)
    curve = variance_curve(e, form=args.form)
    out = _output_dir(args)
    write_csv(out / "variance_curve.csv", ["epsilon", "variance"], curve.rows(),
              {"form": args.form, "n": e.size, "tool_version": __version__})
    print(json.dumps({"cutoff": eps, "grid_argmin": curve.argmin_epsilon,
                      "distance_to_argmin": curve.distance_to_argmin(eps), "n": int(e.size)}))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_threshold_flags(p):
    p.add_argument("--statistic", choices=STATISTICS, default="balanced")
    p.add_argument("--cutoff", choices=("percentile", "fixed_point"), default="percentile")
    p.add_argument("--gamma", type=float, default=0.05)
    p.add_argument("--procedure", choices=("soft", "hard"), default="soft")


def build_parser():
    parser = argparse.ArgumentParser(prog="qrthresh", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--output-dir", "-o", default=None)
        p.add_argument("--seed", type=int, default=None)
        if config:
            p.add_argument("--config", default=None, help="flat key = value config file")
            p.add_argument("--manifest", default=None, help="replay the config stored in a manifest.json")

    p = sub.add_parser("simulate", help="generate a population and both samples")
    common(p)
    p.add_argument("--overlap", default=None, help="H or L")
    p.add_argument("--iteration", type=int, default=0, help="Monte Carlo iteration whose streams to use")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the membership model on a stacked sample")
    common(p, config=False)
    p.add_argument("--stacked", required=True)
    p.add_argument("--backend", choices=("mcmc", "mle"), default="mcmc")
    p.add_argument("--S", type=int, default=700)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--tau", type=float, default=0.25)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("threshold", help="per-unit threshold diagnostics from draws")
    common(p, config=False)
    p.add_argument("--stacked", required=True)
    p.add_argument("--draws", required=True)
    _add_threshold_flags(p)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("estimate", help="domain mean from draws and acceptance sets")
    common(p, config=False)
    p.add_argument("--stacked", required=True)
    p.add_argument("--draws", required=True)
    p.add_argument("--ref-draws", default=None)
    p.add_argument("--ref-weights", choices=("smoothed", "true"), default="smoothed")
    p.add_argument("--no-threshold", action="store_true")
    _add_threshold_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("run", help="run full Monte Carlo scenarios")
    common(p)
    p.add_argument("--overlap", default=None, help="comma-separated modes, e.g. H,L")
    p.add_argument("--variants", default=None, help="comma-separated subset of: " + ", ".join(VARIANTS))
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--S", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None, help="parallel iterations (default: all cores)")
    p.add_argument("--plots", action="store_true", help="also write SVG charts")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="trimmed-variance curve and cutoff for a propensity sample")
    common(p, config=False)
    p.add_argument("--propensities", default=None, help="file of whitespace/comma separated values")
    p.add_argument("--n", type=int, default=1400)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--b", type=float, default=2.0)
    p.add_argument("--form", choices=("mean_inverse", "hajek"), default="mean_inverse")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"qrthresh {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (QRThreshError, OSError) as exc:
        print(f"qrthresh {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
