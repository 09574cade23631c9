import numpy as np
import pytest
from scipy.special import expit

from conftest import simulate_stacked
from qrthresh.exceptions import ConfigurationError, EstimationError
from qrthresh.propensity import (
    MembershipMCMC,
    MembershipMLE,
    PropensityDraws,
    _StackedData,
    design_matrix,
    fit_mcmc,
    fit_mle,
    hessian,
    log_likelihood,
    membership_probability,
    predict_probabilities,
    score,
)

BETA_C = np.array([-0.5, 0.8, -0.4])
BETA_R = np.array([-1.2, 0.3, 0.6])


@pytest.fixture(scope="module")
def model_data():
    return simulate_stacked(np.random.default_rng(2024), 4000, BETA_C, BETA_R)


def _rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def test_gradient_matches_finite_differences(model_data):
    args = _StackedData(*model_data).args(0.25)
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(10):
        theta = rng.normal(0, 0.7, 6)
        fd = np.array([(log_likelihood(theta + h * e, *args) - log_likelihood(theta - h * e, *args)) / (2 * h)
                       for e in np.eye(6)])
        assert _rel_err(score(theta, *args), fd) < 1e-4


def test_hessian_matches_finite_differences(model_data):
    args = _StackedData(*model_data).args(0.25)
    theta = np.random.default_rng(1).normal(0, 0.5, 6)
    h = 1e-5
    fd = np.column_stack([(score(theta + h * e, *args) - score(theta - h * e, *args)) / (2 * h) for e in np.eye(6)])
    assert _rel_err(hessian(theta, *args), fd) < 1e-5


def test_fisher_hessian_is_negative_definite(model_data):
    args = _StackedData(*model_data).args(0.25)
    H = hessian(np.zeros(6), *args, expected=True)
    assert np.all(np.linalg.eigvalsh(H) < 0)


def test_mle_recovers_truth(model_data):
    m = MembershipMLE().fit(*model_data)
    truth = np.concatenate([BETA_C, BETA_R])
    assert np.all(np.abs(m.coef_ - truth) < 3 * m.standard_errors())
    assert m.grad_norm_ < 1e-8


def test_mle_wald_coverage():
    rng = np.random.default_rng(77)
    hits = []
    for _ in range(200):
        m = MembershipMLE().fit(*simulate_stacked(rng, 4000, BETA_C, BETA_R))
        se = m.standard_errors()[:3]
        hits.append(np.abs(m.beta_c_ - BETA_C) < 1.959964 * se)
    coverage = np.mean(hits)
    assert 0.90 <= coverage <= 0.99


def test_intercept_only_symmetry():
    n = 200
    z = np.repeat([0.0, 1.0], n)
    anchor = np.where(z == 0, 0.3, np.nan)
    m = MembershipMLE().fit(np.empty((2 * n, 0)), z, anchor)
    pc, pr = m.predict_probabilities(np.empty((1, 0)))
    assert m.membership_proba(np.empty((1, 0)))[0] == pytest.approx(0.5)
    assert pc[0] == pytest.approx(0.3) and pr[0] == pytest.approx(0.3)


def test_duplicated_rows_same_estimate(model_data):
    x, z, anchor = (a[:800] for a in model_data)
    once = MembershipMLE().fit(x, z, anchor).coef_
    twice = MembershipMLE().fit(np.vstack([x, x]), np.tile(z, 2), np.tile(anchor, 2)).coef_
    np.testing.assert_allclose(once, twice, atol=1e-8)


def test_membership_identity(model_data):
    m = MembershipMLE().fit(*model_data)
    x = model_data[0][:50]
    pc, pr = m.predict_probabilities(x)
    np.testing.assert_allclose(m.membership_proba(x), pc / (pc + pr), rtol=1e-12)


def test_membership_probability_log_scale():
    eta_c, eta_r = np.array([-3.0, 0.0, 40.0]), np.array([1.0, 0.0, -40.0])
    pc, pr = expit(eta_c), expit(eta_r)
    np.testing.assert_allclose(membership_probability(eta_c, eta_r), pc / (pc + pr), rtol=1e-12)


def test_predict_zero_covariates_and_clamp(model_data):
    m = MembershipMLE().fit(*model_data)
    pc, pr = m.predict_probabilities(np.zeros((1, 2)))
    assert pc[0] == pytest.approx(expit(m.beta_c_[0]))
    assert pr[0] == pytest.approx(expit(m.beta_r_[0]))
    m.beta_c_ = np.array([-40.0, 0.0, 0.0])
    assert m.predict_probabilities(np.zeros((1, 2)))[0][0] == 1e-6


def test_predict_monotone_in_positive_coefficient(model_data):
    m = MembershipMLE().fit(*model_data)
    assert m.beta_c_[1] > 0
    base = np.zeros((1, 2))
    bumped = base + np.array([[1e-3, 0.0]])
    assert m.predict_probabilities(bumped)[0][0] > m.predict_probabilities(base)[0][0]


def test_dimension_mismatch(model_data):
    m = MembershipMLE().fit(*model_data)
    with pytest.raises(ConfigurationError):
        m.predict_probabilities(np.zeros((3, 4)))


def test_rank_deficient_design(model_data):
    x, z, anchor = model_data
    with pytest.raises(ConfigurationError):
        MembershipMLE().fit(np.column_stack([x, x[:, 0]]), z, anchor)


def test_single_arm_rejected(model_data):
    x, _, _ = model_data
    with pytest.raises(ConfigurationError):
        MembershipMLE().fit(x, np.ones(x.shape[0]), np.full(x.shape[0], np.nan))


def test_separation_raises_with_diagnostics():
    z = np.repeat([0.0, 1.0], 50)
    x = (z + 0.01 * np.arange(100) / 100).reshape(-1, 1)
    with pytest.raises(EstimationError) as info:
        MembershipMLE().fit(x, z, np.where(z == 0, 0.2, np.nan))
    assert "n_iter" in info.value.diagnostics


def test_mcmc_default_draw_count(small_samples):
    draws = fit_mcmc(small_samples, S=700, seed=3)
    assert draws.S == 700
    assert draws.pi_c.shape == (700, small_samples.n_c)
    assert draws.ref_smoothed.shape == (700, small_samples.n_r)
    assert 0.2 <= draws.diagnostics["acceptance_rate"] <= 0.5
    assert np.all((draws.pi_c > 0) & (draws.pi_c < 1))


def test_mcmc_deterministic(small_samples):
    a = fit_mcmc(small_samples, S=50, seed=5)
    b = fit_mcmc(small_samples, S=50, seed=5)
    np.testing.assert_array_equal(a.pi_c, b.pi_c)
    np.testing.assert_array_equal(a.ref_smoothed, b.ref_smoothed)


def test_mcmc_matches_mle_intercept_only():
    rng = np.random.default_rng(8)
    n = 6000
    z = (rng.random(n) < 0.6).astype(float)
    anchor = np.where(z == 0, 0.25, np.nan)
    X = np.empty((n, 0))
    mle = MembershipMLE().fit(X, z, anchor)
    mc = MembershipMCMC(n_draws=400, prior_scale=None, random_state=1).fit(X, z, anchor)
    pc_mle = mle.predict_probabilities(np.empty((1, 0)))[0][0]
    pc_mc = mc.predict_probabilities(np.empty((1, 0)))[0][:, 0].mean()
    assert abs(pc_mc - pc_mle) < 0.02


def test_mcmc_posterior_spread_matches_laplace(model_data):
    x, z, anchor = (a[:1500] for a in model_data)
    mle = MembershipMLE().fit(x, z, anchor)
    mc = MembershipMCMC(n_draws=1000, prior_scale=None, random_state=2).fit(x, z, anchor)
    np.testing.assert_allclose(mc.coef_draws_.std(axis=0), mle.standard_errors(), rtol=0.2)


def test_mcmc_extreme_acceptance_is_a_warning(small_samples):
    X, z, anchor, _ = small_samples.stacked()
    with pytest.warns(RuntimeWarning, match="acceptance rate"):
        m = MembershipMCMC(n_draws=30, thin=1, burn_in=300, target_accept=0.001, random_state=0).fit(X, z, anchor)
    assert m.diagnostics_["warning"]


def test_functional_api_and_draws(small_samples):
    model = fit_mle(small_samples)
    draws = PropensityDraws.from_model(model, small_samples)
    assert draws.S == 1 and draws.backend == "mle"
    pc, pr = predict_probabilities(model, small_samples.x_conv)
    np.testing.assert_array_equal(draws.pi_c[0], pc)
    rows = list(draws.long_rows(small_samples.conv_ids))
    assert len(rows) == small_samples.n_c and set(rows[0]) == {"draw_index", "unit_id", "pi_c_hat", "pi_r_hat"}
    with pytest.raises(ConfigurationError):
        predict_probabilities(object(), small_samples.x_conv)


def test_get_params_roundtrip():
    m = MembershipMCMC(n_draws=12, thin=3)
    assert m.get_params()["n_draws"] == 12
    assert m.set_params(thin=4).thin == 4
    assert design_matrix(np.zeros((2, 3))).shape == (2, 4)
