import pytest

from qrthresh.config import (
    DEFAULT_BETA,
    ScenarioConfig,
    build_scenarios,
    bundled_config_path,
    parse_config_text,
    read_config_file,
    to_flat,
)
from qrthresh.exceptions import ConfigurationError


def test_parse_text():
    values = parse_config_text("""
        # comment
        N = 1000   # trailing comment
        beta = 1, 2, 3, 4, 5
        overlap = h, L
        conv_offset = none
    """)
    assert values == {"N": 1000, "beta": (1.0, 2.0, 3.0, 4.0, 5.0), "overlap": ("H", "L"), "conv_offset": None}


@pytest.mark.parametrize("text", ["bogus = 1", "N 1000", "N = 1.5", "M = abc"])
def test_parse_errors(text):
    with pytest.raises(ConfigurationError):
        parse_config_text(text)


def test_defaults():
    h, low = build_scenarios()
    assert (h.overlap_mode, low.overlap_mode) == ("H", "L")
    assert h.population.beta == DEFAULT_BETA
    assert h.population.resolved_beta_conv() == DEFAULT_BETA
    assert low.population.resolved_beta_conv() == tuple(-b for b in DEFAULT_BETA)
    assert h.model.S == 700 and h.M == 30 and h.gamma_list == (0.01, 0.05, 0.10)


def test_bundled_configs():
    for name in ("default.cfg", "full_study.cfg"):
        assert bundled_config_path(name).exists()
        assert build_scenarios(read_config_file(name)) == build_scenarios()


def test_missing_file_names_path():
    with pytest.raises(ConfigurationError, match="nowhere.cfg"):
        read_config_file("/tmp/nowhere.cfg")


def test_flat_roundtrip():
    scen = build_scenarios(N=900, n_r=90, target_n_c=180.0, overlap="L", variants=("true_weights",))
    again = build_scenarios(to_flat(scen))
    assert again == scen
    assert [s.config_hash() for s in again] == [s.config_hash() for s in scen]


def test_invalid_values():
    with pytest.raises(ConfigurationError):
        build_scenarios(M=0)
    with pytest.raises(ConfigurationError):
        build_scenarios(gamma_list=(0.7,))
    with pytest.raises(ConfigurationError):
        build_scenarios(variants=("nope",))
    with pytest.raises(ConfigurationError):
        build_scenarios(overlap="X")
    with pytest.raises(ConfigurationError):
        build_scenarios(backend="gibbs")
    with pytest.raises(ConfigurationError):
        build_scenarios(colour="red")


def test_hash_changes_with_settings():
    a = ScenarioConfig()
    assert a.config_hash() == ScenarioConfig().config_hash()
    assert a.config_hash() != a.with_overlap("L").config_hash()
