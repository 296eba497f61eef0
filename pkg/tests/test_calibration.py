"""Tests for the eta and mu calibration routes."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import ndtr

from ngflex.calibration import (
    Q_INVERSE_AT_2_CONSTANTS,
    build_pc_prior,
    calibrate_eta_events,
    calibrate_eta_marginal,
    calibrate_mu,
    calibration_report,
    gamma_asymmetry,
    gamma_inverse_at_2,
    noise_event_prob,
    q1_expected_events,
    q2_no_event_prob,
    q_inverse_at_2,
    q_ratio,
)
from ngflex.field import MarginalSpec
from ngflex.noise import (
    TAIL_CORRECTED,
    NoiseParams,
    density,
    sample_noise,
    tail_summary,
)
from ngflex.priors import PcPrior

GAUSS_3SD = 2.0 * ndtr(-3.0)


def test_q_ratio_gaussian_limit():
    spec = MarginalSpec("Matern2_d1", 1.0, NoiseParams("nig", 1.0, 0.1, 0.0))
    assert q_ratio(1e-6, spec) == 1.0


def test_q_ratio_increasing_moderate_eta():
    spec = MarginalSpec("Matern2_d1", 1.0, NoiseParams("nig", 1.0, 0.1, 0.0))
    vals = [q_ratio(e, spec) for e in (0.02, 0.1, 0.5, 2.0)]
    assert all(v > 1.0 for v in vals)
    assert all(b > a for a, b in zip(vals, vals[1:]))
    # regression pin for the inversion pipeline behind the ratio
    assert_allclose(vals[2], 2.46514, rtol=1e-4)


def test_q_inverse_ou_root_and_residual():
    root, info = q_inverse_at_2("nig", "OU_d1", 1.0, full_output=True)
    assert_allclose(root, 0.1566, rtol=0.02)
    assert info["residual"] < 1e-3
    spec = MarginalSpec("OU_d1", 1.0, NoiseParams("nig", 1.0, 0.1, 0.0))
    assert abs(q_ratio(root, spec) - 2.0) < 1e-3


@pytest.mark.parametrize(
    "variant,model,kappa",
    [
        ("nig", "OU_d1", 0.5),
        ("gal", "OU_d1", 2.0),
        ("nig", "Matern2_d1", 2.0),
        ("gal", "Matern2_d1", 0.5),
        ("nig", "Matern2_d2", 2.0),
        ("gal", "Matern2_d2", 0.5),
    ],
)
def test_q_inverse_fast_path_matches_inversion(variant, model, kappa):
    fast = q_inverse_at_2(variant, model, kappa, method="fast")
    slow = q_inverse_at_2(variant, model, kappa, method="invert")
    assert abs(fast - slow) < 0.02 * slow


def test_q_inverse_fast_path_scaling_and_guards():
    for model, power in (("OU_d1", 1), ("Matern2_d1", 1), ("Matern2_d2", 2)):
        base = q_inverse_at_2("gal", model, 1.0, method="fast")
        assert_allclose(
            q_inverse_at_2("gal", model, 2.0, method="fast"), base / 2.0**power, rtol=1e-14
        )
        assert_allclose(Q_INVERSE_AT_2_CONSTANTS[("gal", model)], base, rtol=1e-14)
    with pytest.raises(ValueError):
        q_inverse_at_2("nig", "OU_d1", 1.0, mu=0.5, method="fast")
    with pytest.raises(ValueError):
        q_inverse_at_2("nig", "OU_d1", 1.0, ratio=3.0, method="fast")
    with pytest.raises(ValueError):
        q_inverse_at_2("nig", "CAR_d1", 1.0, method="fast")
    with pytest.raises(ValueError):
        q_inverse_at_2("nig", "OU_d1", -1.0)


def test_calibrate_eta_marginal():
    # pick kappa so that the doubling point is exactly 1
    theta = calibrate_eta_marginal(math.exp(-1.0), "nig", "OU_d1", 0.1566)
    assert_allclose(theta, 1.0, rtol=1e-12)
    thetas = [
        calibrate_eta_marginal(a, "nig", "Matern2_d1", 0.2) for a in (0.01, 0.06, 0.3)
    ]
    assert thetas[0] > thetas[1] > thetas[2] > 0.0
    assert_allclose(thetas[1], 1.795985136776276, rtol=1e-12)
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            calibrate_eta_marginal(bad, "nig", "OU_d1", 1.0)


def test_noise_event_prob_gaussian_floor():
    assert noise_event_prob(NoiseParams("nig", 1.0, 0.0, 0.0), 1.0) == GAUSS_3SD
    assert noise_event_prob(NoiseParams("gal", 2.0, 0.0, 0.0), 0.3) == GAUSS_3SD
    near = noise_event_prob(NoiseParams("gal", 1.0, 1e-8, 0.3), 1.0)
    assert abs(near - GAUSS_3SD) < 1e-6
    custom = noise_event_prob(NoiseParams("nig", 1.0, 0.0, 0.0), 1.0, threshold_sd=2.0)
    assert_allclose(custom, 2.0 * ndtr(-2.0), rtol=1e-14)


@pytest.mark.parametrize(
    "variant,eta,mu,h,sigma",
    [
        ("nig", 0.5, 0.0, 1.0, 1.0),
        ("gal", 0.8, 0.6, 1.0, 1.0),
        ("nig", 2.0, -1.0, 0.01, 1.3),
        ("gal", 50.0, 0.0, 0.01, 1.0),
    ],
)
def test_noise_event_prob_against_density_quadrature(variant, eta, mu, h, sigma):
    # independent route: integrate the density over the two tail intervals
    p = NoiseParams(variant, sigma, eta, mu)
    mix = noise_event_prob(p, h)
    thr = 3.0 * math.sqrt(h) * sigma
    ts = tail_summary(p)
    hi = thr + 80.0 / ts.xi
    right, _ = quad(lambda x: density(p, h, x), thr, hi, epsabs=1e-14, limit=400)
    left, _ = quad(lambda x: density(p, h, x), -hi, -thr, epsabs=1e-14, limit=400)
    assert_allclose(mix, left + right, rtol=1e-9)


def test_noise_event_prob_symmetry_and_rising_branch():
    a = noise_event_prob(NoiseParams("gal", 1.0, 0.7, 0.9), 2.0)
    b = noise_event_prob(NoiseParams("gal", 1.0, 0.7, -0.9), 2.0)
    assert_allclose(a, b, rtol=1e-12)
    for variant in ("nig", "gal"):
        vals = [
            noise_event_prob(NoiseParams(variant, 1.0, e, 0.0), 1.0)
            for e in (1e-3, 1e-2, 0.1, 0.3, 1.0)
        ]
        assert all(y > x for x, y in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        noise_event_prob(NoiseParams("nig", 1.0, 0.5, 0.0), 0.0)


def test_noise_event_prob_monte_carlo():
    p = NoiseParams("gal", 1.0, 1.5, 0.8)
    h = 0.25
    rng = np.random.default_rng(7)
    n = 500000
    x = sample_noise(p, np.full(n, h), rng)
    phat = float(np.mean(np.abs(x) > 3.0 * math.sqrt(h)))
    se = math.sqrt(phat * (1.0 - phat) / n)
    assert abs(noise_event_prob(p, h) - phat) < 4.0 * se


def test_q1_q2_edge_cases_and_grouping():
    p0 = NoiseParams("nig", 1.0, 0.0, 0.0)
    assert q1_expected_events(p0, []) == 0.0
    assert q2_no_event_prob(p0, []) == 1.0
    assert_allclose(q1_expected_events(p0, np.ones(100)), 100 * GAUSS_3SD, rtol=1e-14)
    assert_allclose(q2_no_event_prob(p0, np.ones(100)), (1 - GAUSS_3SD) ** 100, rtol=1e-12)

    p = NoiseParams("gal", 1.0, 0.4, 0.2)
    h = np.array([0.01, 0.04, 0.01, 0.01, 0.04])
    p1 = noise_event_prob(p, 0.01)
    p2 = noise_event_prob(p, 0.04)
    assert_allclose(q1_expected_events(p, h), 3 * p1 + 2 * p2, rtol=1e-12)
    assert_allclose(q2_no_event_prob(p, h), (1 - p1) ** 3 * (1 - p2) ** 2, rtol=1e-12)
    assert_allclose(q1_expected_events(p, h[::-1]), q1_expected_events(p, h), rtol=1e-15)


def test_calibrate_eta_events_q1():
    h = np.full(100, 0.01)
    theta, info = calibrate_eta_events(0.01, 1.0, "nig", h, full_output=True)
    assert info["residual"] < 1e-6
    assert_allclose(theta, -math.log(0.01) / info["eta_root"], rtol=1e-14)
    check = q1_expected_events(NoiseParams("nig", 1.0, info["eta_root"], 0.0), h)
    assert abs(check - 1.0) < 1e-6


def test_calibrate_eta_events_q2():
    h = np.full(50, 0.02)
    theta, info = calibrate_eta_events(0.05, 0.5, "gal", h, statistic="q2", full_output=True)
    assert info["residual"] < 1e-6
    check = q2_no_event_prob(NoiseParams("gal", 1.0, info["eta_root"], 0.0), h)
    assert abs(check - 0.5) < 1e-6
    assert theta > 0.0


def test_calibrate_eta_events_bracket_errors():
    h = np.ones(100)
    # the Gaussian floor is already 0.27 expected events
    with pytest.raises(RuntimeError):
        calibrate_eta_events(0.01, 0.2, "nig", h)
    with pytest.raises(RuntimeError):
        calibrate_eta_events(0.01, 1e6, "nig", h)
    with pytest.raises(ValueError):
        calibrate_eta_events(0.01, 1.0, "nig", [])
    with pytest.raises(ValueError):
        calibrate_eta_events(0.01, 1.0, "nig", h, statistic="q3")


def test_gamma_asymmetry_matches_tail_rates():
    for variant in ("nig", "gal"):
        assert gamma_asymmetry(variant, 0.0) == 1.0
        for ms in (0.1, 0.7, 2.0, -1.3):
            p = NoiseParams(variant, 1.0, 0.5, ms, parameterization=TAIL_CORRECTED)
            ts = tail_summary(p)
            ratio = ts.gamma if ms >= 0 else 1.0 / ts.gamma
            assert_allclose(gamma_asymmetry(variant, ms), ratio, rtol=1e-12)
        # the ratio does not depend on eta_star
        g1 = tail_summary(NoiseParams(variant, 1.0, 0.2, 0.8, parameterization=TAIL_CORRECTED))
        g2 = tail_summary(NoiseParams(variant, 1.0, 7.0, 0.8, parameterization=TAIL_CORRECTED))
        assert_allclose(g1.gamma, g2.gamma, rtol=1e-12)


def test_gamma_inverse_at_2():
    assert_allclose(gamma_inverse_at_2("nig"), 0.5 / math.sqrt(2.0), rtol=1e-15)
    assert gamma_inverse_at_2("gal") == 0.5
    for variant in ("nig", "gal"):
        root = brentq(
            lambda m: gamma_asymmetry(variant, m) - 2.0, 1e-8, 5.0, xtol=1e-15, rtol=8.9e-16
        )
        assert abs(root - gamma_inverse_at_2(variant)) < 1e-10
    with pytest.raises(ValueError):
        gamma_inverse_at_2("vg")


def test_calibrate_mu():
    assert_allclose(calibrate_mu(0.01, "nig"), 13.025388268121175, rtol=1e-12)
    assert_allclose(calibrate_mu(0.01, "gal"), -2.0 * math.log(0.01), rtol=1e-14)
    # 2 P(mu_star > gamma^-1(2)) = alpha under Laplace(theta_mu), exactly
    for variant in ("nig", "gal"):
        for alpha in (0.01, 0.2, 0.7):
            theta = calibrate_mu(alpha, variant)
            assert_allclose(
                math.exp(-theta * gamma_inverse_at_2(variant)), alpha, rtol=1e-13
            )
    with pytest.raises(ValueError):
        calibrate_mu(0.0, "nig")
    with pytest.raises(ValueError):
        calibrate_mu(1.5, "gal")


def test_build_pc_prior_and_report():
    pr = build_pc_prior("nig", "Matern2_d1", 0.2, 1e-5, 0.01)
    assert isinstance(pr, PcPrior)
    assert_allclose(pr.theta_eta, -math.log(1e-5) / (0.3133 / 0.2), rtol=1e-12)
    assert_allclose(pr.theta_mu, 13.025388268121175, rtol=1e-12)
    assert pr.calibration["model"] == "Matern2_d1"
    assert pr.calibration["alpha_eta"] == 1e-5

    rep = calibration_report("nig", "Matern2_d1", 0.2, 0.06, 0.01)
    assert rep["schema"] == "ngflex-calibration-1"
    assert rep["method"] == "fast"
    assert_allclose(rep["outputs"]["theta_eta"], 1.795985136776276, rtol=1e-12)
    assert rep["residuals"]["q_ratio"] is None
    assert rep["inputs"]["kappa"] == 0.2

    rep2 = calibration_report("gal", "OU_d1", 1.0, 0.1, 0.1, method="invert")
    assert rep2["residuals"]["q_ratio"] < 1e-3
    assert_allclose(rep2["outputs"]["q_inverse_at_2"], 0.1540, rtol=0.02)
