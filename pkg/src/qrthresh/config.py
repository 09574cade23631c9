"""Run configuration: dataclasses plus a flat ``key = value`` file format.

Config files are plain text, one ``key = value`` per line; ``#`` starts a
comment. Lists are comma separated. Recognised keys::

    # population
    N, K, n_binary, beta, overlap, beta_conv, n_r, target_n_c, conv_offset
    # propensity model
    backend, S, tau, prior_scale, thin, burn_in
    # scenario
    M, seed, variants, gamma_list, overlap_denominator

``overlap`` may list several modes (``overlap = H, L``); each is run as a
separate scenario by the CLI.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigurationError

DEFAULT_BETA = (0.6, -0.4, 0.8, -0.5, 0.5)

OVERLAP_MODES = ("H", "L")

VARIANTS = (
    "true_weights",
    "smoothed_no_threshold",
    "balanced_soft",
    "balanced_hard_two_step",
    "reference_only_stat",
    "ratio_stat",
    "reference_sample_only",
)
# opt-in variant thresholding at the two-arm variance-optimal cutoff
EXTRA_VARIANTS = ("balanced_fixed_point",)

THRESHOLD_VARIANTS = ("balanced_soft", "balanced_hard_two_step", "reference_only_stat", "ratio_stat")


@dataclass(frozen=True)
class PopulationConfig:
    N: int = 4000
    K: int = 5
    n_binary: int = 4
    beta: tuple = DEFAULT_BETA
    overlap: str = "H"
    beta_conv: tuple | None = None
    n_r: int = 400
    target_n_c: float = 800.0
    conv_offset: float | None = None

    def __post_init__(self):
        if self.N < 1 or self.K < 1:
            raise ConfigurationError(f"N and K must be >= 1 (got N={self.N}, K={self.K})")
        if not 0 <= self.n_binary <= self.K:
            raise ConfigurationError(f"n_binary={self.n_binary} must lie in [0, K={self.K}]")
        if len(self.beta) != self.K:
            raise ConfigurationError(f"beta has length {len(self.beta)}, expected K={self.K}")
        if self.beta_conv is not None and len(self.beta_conv) != self.K:
            raise ConfigurationError(f"beta_conv has length {len(self.beta_conv)}, expected K={self.K}")
        if self.overlap not in OVERLAP_MODES:
            raise ConfigurationError(f"overlap={self.overlap!r}; expected H or L")
        if not 1 <= self.n_r <= self.N:
            raise ConfigurationError(f"n_r={self.n_r} must lie in [1, N={self.N}]")
        if self.conv_offset is None and not 0 < self.target_n_c < self.N:
            raise ConfigurationError(f"target_n_c={self.target_n_c} must lie in (0, N)")

    def resolved_beta_conv(self):
        """Convenience-arm coefficients: explicit override, else +beta (H) or -beta (L)."""
        if self.beta_conv is not None:
            return tuple(self.beta_conv)
        sign = 1.0 if self.overlap == "H" else -1.0
        return tuple(sign * b for b in self.beta)


@dataclass(frozen=True)
class ModelConfig:
    backend: str = "mcmc"
    S: int = 700
    tau: float = 0.25
    prior_scale: float | None = 10.0
    thin: int = 10
    burn_in: int | None = None

    def __post_init__(self):
        if self.backend not in ("mcmc", "mle"):
            raise ConfigurationError(f"backend={self.backend!r}; expected mcmc or mle")
        if self.S < 1 or self.thin < 1:
            raise ConfigurationError("S and thin must be >= 1")
        if self.tau <= 0:
            raise ConfigurationError("tau must be positive")
        if self.prior_scale is not None and self.prior_scale <= 0:
            raise ConfigurationError("prior_scale must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    population: PopulationConfig = field(default_factory=PopulationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    M: int = 30
    seed: int = 20240501
    variants: tuple = VARIANTS
    gamma_list: tuple = (0.01, 0.05, 0.10)
    overlap_denominator: str = "reference"

    def __post_init__(self):
        if self.M < 1:
            raise ConfigurationError(f"M={self.M} must be >= 1")
        known = set(VARIANTS) | set(EXTRA_VARIANTS)
        for v in self.variants:
            if v not in known:
                raise ConfigurationError(f"unknown variant {v!r}")
        if not self.gamma_list:
            raise ConfigurationError("gamma_list is empty")
        for g in self.gamma_list:
            if not 0 < g <= 0.5:
                raise ConfigurationError(f"gamma={g} outside (0, 0.5]")
        if self.overlap_denominator not in ("reference", "convenience", "union"):
            raise ConfigurationError(f"overlap_denominator={self.overlap_denominator!r}")

    @property
    def overlap_mode(self):
        return self.population.overlap

    def with_overlap(self, mode):
        return dataclasses.replace(self, population=dataclasses.replace(self.population, overlap=mode))

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _floats(text):
    return tuple(float(t) for t in _split(text))


def _split(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _optional(parser):
    def parse(text):
        if str(text).strip().lower() in ("", "none", "null"):
            return None
        return parser(text)

    return parse


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


# key -> (section, parser)
_SCHEMA = {
    "N": ("population", _int),
    "K": ("population", _int),
    "n_binary": ("population", _int),
    "beta": ("population", _floats),
    "overlap": ("scenario", lambda t: tuple(s.upper() for s in _split(t))),
    "beta_conv": ("population", _optional(_floats)),
    "n_r": ("population", _int),
    "target_n_c": ("population", float),
    "conv_offset": ("population", _optional(float)),
    "backend": ("model", str),
    "S": ("model", _int),
    "tau": ("model", float),
    "prior_scale": ("model", _optional(float)),
    "thin": ("model", _int),
    "burn_in": ("model", _optional(_int)),
    "M": ("scenario", _int),
    "seed": ("scenario", _int),
    "variants": ("scenario", lambda t: tuple(_split(t))),
    "gamma_list": ("scenario", _floats),
    "overlap_denominator": ("scenario", str),
}


def parse_config_text(text, source="<string>"):
    """Parse flat config text into a ``{key: parsed value}`` mapping."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _SCHEMA:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _SCHEMA[key][1](value)
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return values


def bundled_config_path(name):
    return Path(__file__).parent / "configs" / name


def read_config_file(path):
    """Read a config file; bare names fall back to the configs shipped with the package."""
    p = Path(path)
    if not p.exists() and not p.is_absolute() and p.parent == Path("."):
        candidate = bundled_config_path(p.name)
        if candidate.exists():
            p = candidate
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config_text(text, source=str(path))


def build_scenarios(values=None, **overrides):
    """Build one :class:`ScenarioConfig` per requested overlap mode.

    ``values`` is a mapping as returned by :func:`parse_config_text`;
    ``overrides`` (same keys) win over it. Returns a list ordered as the
    modes were listed (default ``["H", "L"]``).
    """
    merged = dict(values or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(merged) - set(_SCHEMA)
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    modes = merged.pop("overlap", OVERLAP_MODES)
    if isinstance(modes, str):
        modes = tuple(m.strip().upper() for m in modes.split(","))
    # values read back from JSON manifests arrive as lists
    merged = {k: tuple(v) if isinstance(v, list) else v for k, v in merged.items()}
    sections = {"population": {}, "model": {}, "scenario": {}}
    for key, value in merged.items():
        sections[_SCHEMA[key][0]][key] = value
    scenario_kw = sections["scenario"]
    try:
        model = ModelConfig(**sections["model"])
        return [
            ScenarioConfig(
                population=PopulationConfig(overlap=mode, **sections["population"]),
                model=model,
                **scenario_kw,
            )
            for mode in modes
        ]
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def to_flat(scenarios):
    """Flatten scenarios (differing only in overlap mode) back to config keys.

    The result round-trips through :func:`build_scenarios` and is what run
    manifests store.
    """
    scenarios = list(scenarios)
    if not scenarios:
        raise ConfigurationError("no scenarios")
    first = scenarios[0]
    values = {}
    for key, (section, _) in _SCHEMA.items():
        if key == "overlap":
            values[key] = [s.overlap_mode for s in scenarios]
            continue
        holder = {"population": first.population, "model": first.model, "scenario": first}[section]
        value = getattr(holder, key)
        values[key] = list(value) if isinstance(value, tuple) else value
    return values
