import numpy as np
import pytest
from scipy.special import expit, logit

from qrthresh.config import build_scenarios
from qrthresh.exceptions import DomainError
from qrthresh.popgen import generate_population
from qrthresh.sampler import (
    calibrate_offset,
    draw_convenience_poisson,
    draw_reference_pps,
    draw_samples,
    overlap_percentage,
    pps_inclusion_probabilities,
)


def test_pps_probabilities_hand_example():
    np.testing.assert_allclose(pps_inclusion_probabilities([1, 1, 2], 2), [0.5, 0.5, 1.0])


def test_pps_certainty_units_redistribute():
    pi = pps_inclusion_probabilities([10, 1, 1, 1], 2)
    np.testing.assert_allclose(pi, [1.0, 1 / 3, 1 / 3, 1 / 3])
    assert pi.sum() == pytest.approx(2.0)


def test_pps_full_frame():
    idx = draw_reference_pps(np.ones(7), 7, seed=0)
    np.testing.assert_array_equal(idx, np.arange(7))
    np.testing.assert_array_equal(pps_inclusion_probabilities(np.ones(7), 7), np.ones(7))


def test_pps_too_large():
    with pytest.raises(DomainError):
        draw_reference_pps(np.ones(3), 4, seed=0)


def test_pps_fixed_size(default_population):
    idx = draw_reference_pps(default_population, 400, seed=1)
    assert idx.size == 400 and np.unique(idx).size == 400


@pytest.mark.parametrize("sizes,n", [([1, 2, 3, 4, 5, 1, 2, 6, 3, 2], 3), ([8, 1, 1, 1, 2], 2)])
def test_pps_inclusion_frequencies(sizes, n):
    R = 10_000
    rng = np.random.default_rng(123)
    counts = np.zeros(len(sizes))
    for _ in range(R):
        counts[draw_reference_pps(np.asarray(sizes, float), n, rng)] += 1
    pi = pps_inclusion_probabilities(sizes, n)
    se = np.sqrt(np.maximum(pi * (1 - pi), 1e-12) / R)
    assert np.all(np.abs(counts / R - pi) <= 3 * se + 1e-12)


def test_poisson_frequencies():
    pi = np.array([0.2, 0.5, 0.9])
    rng = np.random.default_rng(7)
    R = 10_000
    counts = np.zeros(3)
    for _ in range(R):
        counts[draw_convenience_poisson(pi, rng)] += 1
    assert np.all(np.abs(counts / R - pi) < 3 * np.sqrt(pi * (1 - pi) / R))


def test_poisson_size_distribution():
    pi = np.random.default_rng(0).uniform(0.05, 0.6, size=200)
    rng = np.random.default_rng(1)
    sizes = np.array([draw_convenience_poisson(pi, rng).size for _ in range(2000)])
    assert abs(sizes.mean() - pi.sum()) < 3 * np.sqrt(np.sum(pi * (1 - pi)))


def test_poisson_near_one_takes_everything():
    assert draw_convenience_poisson(np.full(50, 1 - 1e-12), 0).size == 50


def test_poisson_rejects_bad_probabilities():
    with pytest.raises(DomainError):
        draw_convenience_poisson(np.array([0.2, 1.0]), 0)


def test_calibrate_offset_closed_forms():
    x = np.random.default_rng(0).standard_normal((4000, 5))
    assert calibrate_offset(x, np.zeros(5), 800) == pytest.approx(logit(0.2), abs=1e-9)
    assert calibrate_offset(x, np.zeros(5), 2000) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(DomainError):
        calibrate_offset(x, np.zeros(5), 4000)


def test_calibrate_offset_default_low_overlap():
    cfg = build_scenarios(overlap="L")[0].population
    pop = generate_population(4, cfg)
    total = expit(pop.x @ pop.beta_conv + pop.conv_offset).sum()
    assert abs(total - 800) <= 1e-3


def test_default_convenience_size(default_population):
    assert default_population.pi_c_true.sum() == pytest.approx(800, abs=1e-6)


def test_overlap_examples():
    assert overlap_percentage([1, 2, 3, 4], [3, 4, 5]) == 50.0
    assert overlap_percentage([1, 2], [3, 4]) == 0.0
    assert overlap_percentage([1, 2, 3, 4], [3, 4, 5], denominator="convenience") == pytest.approx(200 / 3)
    assert overlap_percentage([1, 2, 3, 4], [3, 4, 5], denominator="union") == 40.0
    with pytest.raises(DomainError):
        overlap_percentage([], [1])


def test_stacked_rows(small_population, small_samples):
    s = small_samples
    X, z, anchor, ids = s.stacked()
    assert X.shape[0] == z.size == s.n_r + s.n_c
    assert np.all(z[: s.n_r] == 0) and np.all(z[s.n_r:] == 1)
    assert np.all(anchor[z == 0] > 0) and np.all(np.isnan(anchor[z == 1]))
    np.testing.assert_array_equal(anchor[z == 0], small_population.pi_r_true[s.ref_ids])
    rows = list(s.stacked_rows())
    assert len(rows) == s.n_r + s.n_c
    assert all(r["pi_r_true_if_reference"] == "" for r in rows if r["z_indicator"] == 1)


def test_draw_samples_deterministic(small_population):
    a = draw_samples(small_population, 60, 1, 2)
    b = draw_samples(small_population, 60, 1, 2)
    np.testing.assert_array_equal(a.ref_ids, b.ref_ids)
    np.testing.assert_array_equal(a.conv_ids, b.conv_ids)
    assert a.n_r == 60
