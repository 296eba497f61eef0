"""Tests for the KLD computations and prior densities."""

import json
import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from ngflex.noise import NoiseParams, log_density, sample_mixing
from ngflex.operators import ar1_operator
from ngflex.field import sample_field
from ngflex.priors import (
    PRIOR_PRESETS,
    PRIOR_SCHEMA,
    PcPrior,
    kld_eta_taylor,
    kld_mu_bound,
    kld_mu_exact_nig,
    kld_noise_numeric,
    load_prior_config,
    log_prior,
    pc_prior_eta_density,
    pc_prior_mu_conditional_density,
    preset_prior_config,
    validate_prior_config,
)

# Reference values from 30-digit quadrature of the closed-form densities,
# with the pole neighbourhood flattened by the substitution z = u^(2 eta/h)
# and integration windows covering 60 e-foldings of the slowest tail.
KLD_PINNED = [
    ("nig", 0.5, 0.0, 1.0, 0.019638420426007),
    ("gal", 0.5, 0.0, 1.0, 0.023965033806324),
    ("nig", 0.05, 0.0, 1.0, 4.0891978190868e-4),
    ("gal", 0.05, 0.0, 1.0, 4.1272770053315e-4),
    ("nig", 0.3, 0.7, 1.0, 0.027333179630776),
    ("gal", 0.3, 0.7, 1.0, 0.026758862545378),
    ("nig", 0.2, 0.0, 2.5, 9.7432123054795e-4),
    ("gal", 0.2, -0.4, 0.5, 0.021414872202582),
    ("gal", 2.0, 0.0, 1.0, 0.214840101933169),
    ("gal", 4.0, 1.0, 1.0, 1.20042843831849),
    ("gal", 100.0, 0.0, 1.0, 44.4069194139241),
]


@pytest.mark.parametrize("variant,eta,mu,h,expected", KLD_PINNED)
def test_kld_numeric_pinned(variant, eta, mu, h, expected):
    assert_allclose(kld_noise_numeric(variant, eta, mu, h), expected, rtol=1e-9)


@pytest.mark.parametrize("variant", ["nig", "gal"])
@pytest.mark.parametrize("eta", [1e-3, 3e-3, 1e-2])
def test_kld_numeric_leading_order(variant, eta):
    lead = 3.0 / 16.0 * eta * eta
    ratio = kld_noise_numeric(variant, eta) / lead
    assert 0.95 < ratio < 1.05


@pytest.mark.parametrize("variant", ["nig", "gal"])
def test_kld_numeric_matches_taylor_small_eta(variant):
    # The three-term series holds both variants to 1% up to eta = 0.03;
    # at eta = 0.05 the omitted eta^5 term already costs GAL 1.3%.
    for eta in (0.01, 0.03):
        num = kld_noise_numeric(variant, eta)
        assert abs(kld_eta_taylor(variant, eta, [1.0]) - num) < 0.01 * num
    num = kld_noise_numeric(variant, 0.05)
    tol = 0.01 if variant == "nig" else 0.02
    assert abs(kld_eta_taylor(variant, 0.05, [1.0]) - num) < tol * num


def test_kld_numeric_scale_invariance():
    # Rescaling x by sqrt(h) maps weight-h noise onto weight-1 noise with
    # eta/h and mu*sqrt(h), and the KLD is invariant under the bijection.
    for variant in ("nig", "gal"):
        for eta, mu, h in [(0.3, 0.0, 4.0), (0.5, 0.6, 0.25), (1.2, -0.8, 2.0)]:
            a = kld_noise_numeric(variant, eta, mu, h)
            b = kld_noise_numeric(variant, eta / h, mu * math.sqrt(h), 1.0)
            assert_allclose(a, b, rtol=1e-9)


def test_kld_numeric_validation():
    with pytest.raises(ValueError):
        kld_noise_numeric("nig", 0.0)
    with pytest.raises(ValueError):
        kld_noise_numeric("nig", 0.5, 0.0, -1.0)


def test_kld_taylor_basics():
    assert kld_eta_taylor("nig", 0.0, [1.0, 2.0]) == 0.0
    two = kld_eta_taylor("gal", 0.02, [1.0, 2.0])
    parts = kld_eta_taylor("gal", 0.02, [1.0]) + kld_eta_taylor("gal", 0.02, [2.0])
    assert_allclose(two, parts, rtol=1e-15)
    # GAL's quartic coefficient is larger, and that is the only difference
    gap = kld_eta_taylor("gal", 0.1, [1.0]) - kld_eta_taylor("nig", 0.1, [1.0])
    assert_allclose(gap, (401.0 - 261.0) / 128.0 * 0.1**4, rtol=1e-12)
    with pytest.raises(ValueError):
        kld_eta_taylor("nig", -0.1, [1.0])
    with pytest.raises(ValueError):
        kld_eta_taylor("cauchy", 0.1, [1.0])


def test_kld_distance_near_linear():
    # d(eta) = sqrt(2 KLD) has slope sqrt(3/8 sum h^-2) at the base model.
    # The 2% envelope holds up to eta about 0.0125; by eta = 0.05 the
    # deviation has grown to 6-7%, so that point is pinned separately.
    slope = math.sqrt(3.0 / 8.0)
    for variant in ("nig", "gal"):
        for eta in (0.004, 0.008, 0.0125):
            d = math.sqrt(2.0 * kld_noise_numeric(variant, eta))
            assert abs(d / (slope * eta) - 1.0) < 0.02
        d = math.sqrt(2.0 * kld_noise_numeric(variant, 0.05))
        assert 0.05 < 1.0 - d / (slope * 0.05) < 0.08


def test_kld_field_additivity_monte_carlo():
    # For x = D^-1 Lambda the field KLD telescopes into the sum of the
    # per-increment KLDs; estimate E[log pi/pi_Z] from field draws.
    rng = np.random.default_rng(41)
    op = ar1_operator(0.6, 3)
    reps = 40000
    for variant, eta, mu in [("nig", 0.3, 0.4), ("gal", 0.3, 0.4)]:
        p = NoiseParams(variant, 1.0, eta, mu)
        eps = np.empty((reps, 3))
        for r in range(reps):
            eps[r] = op.d_matrix @ sample_field(op, p, rng).x
        lr = np.zeros(reps)
        for i in range(3):
            li = log_density(p, op.h[i], eps[:, i])
            lz = -0.5 * np.log(2.0 * np.pi * op.h[i]) - 0.5 * eps[:, i] ** 2 / op.h[i]
            lr += li - lz
        target = sum(kld_noise_numeric(variant, eta, mu, hi) for hi in op.h)
        se = lr.std() / math.sqrt(reps)
        assert abs(lr.mean() - target) < 3.0 * se


def test_kld_mu_bound_values():
    assert kld_mu_bound(4, 0.5, 0.0) == 0.0
    assert_allclose(kld_mu_bound(3, 0.4, 1.5), 0.5 * 3 * 0.4 * 2.25, rtol=1e-15)
    with pytest.raises(ValueError):
        kld_mu_bound(0, 0.5, 1.0)
    with pytest.raises(ValueError):
        kld_mu_bound(3, 0.0, 1.0)


def test_kld_mu_bound_dominates_exact():
    for eta in (0.1, 1.0, 5.0):
        for mu in (0.3, 1.0, 2.0):
            assert kld_mu_bound(7, eta, mu) >= kld_mu_exact_nig(7, eta, mu)


def test_kld_mu_exact_nig_monte_carlo():
    # Conditional Gaussian KLD between the asymmetric model and the
    # symmetric one sharing its mixing vector, averaged over V draws,
    # equals (n/2) log(1 + eta mu^2) exactly for inverse-Gaussian mixing.
    n, eta, mu = 5, 1.0, 1.0
    rng = np.random.default_rng(99)
    reps = 100000
    v = sample_mixing("nig", eta, 1.0, reps * n, rng).reshape(reps, n)
    c = 1.0 + eta * mu * mu
    quad_term = (mu * mu / c) * np.sum((v - 1.0) ** 2 / v, axis=1)
    cond = 0.5 * (n / c - n + quad_term + n * math.log(c))
    se = cond.std() / math.sqrt(reps)
    assert abs(cond.mean() - kld_mu_exact_nig(n, eta, mu)) < 3.0 * se


def test_kld_mu_bound_gal_validity_warning():
    with pytest.warns(RuntimeWarning):
        kld_mu_bound(3, 1.5, 0.5, variant="gal", h_min=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        kld_mu_bound(3, 0.5, 0.5, variant="gal", h_min=1.0)
        kld_mu_bound(3, 1.5, 0.5, variant="nig", h_min=1.0)


def test_pc_eta_density():
    theta = 30.0
    total, _ = quad(lambda e: pc_prior_eta_density(e, theta), 0.0, 3.0)
    assert_allclose(total, 1.0, rtol=1e-9)
    mean, _ = quad(lambda e: e * pc_prior_eta_density(e, theta), 0.0, 3.0)
    assert_allclose(mean, 1.0 / theta, rtol=1e-8)
    tail, _ = quad(lambda e: pc_prior_eta_density(e, theta), 0.1, 5.0)
    assert_allclose(tail, math.exp(-3.0), rtol=1e-8)
    out = pc_prior_eta_density(np.array([-0.5, 0.0, 0.1]), theta)
    assert out[0] == 0.0
    assert_allclose(out[1], theta)
    with pytest.raises(ValueError):
        pc_prior_eta_density(0.1, 0.0)


def test_pc_mu_conditional_density():
    theta = 2.0
    for eta in (0.1, 1.0, 10.0):
        total, _ = quad(
            lambda m: pc_prior_mu_conditional_density(m, eta, theta), -np.inf, np.inf
        )
        assert_allclose(total, 1.0, rtol=1e-9)
    # at eta = 1 this is the Laplace(theta) density itself
    for m in (-1.2, 0.0, 0.4):
        assert_allclose(
            pc_prior_mu_conditional_density(m, 1.0, theta),
            0.5 * theta * math.exp(-theta * abs(m)),
            rtol=1e-14,
        )
    # change of variables mu_star = sqrt(eta) mu gives Laplace(theta) exactly
    eta = 3.7
    for ms in (-2.0, -0.3, 0.0, 1.1):
        back = pc_prior_mu_conditional_density(ms / math.sqrt(eta), eta, theta) / math.sqrt(eta)
        assert_allclose(back, 0.5 * theta * math.exp(-theta * abs(ms)), rtol=1e-14)


def test_pc_mu_conditional_shape():
    grid = np.linspace(0.0, 4.0, 40)
    for eta in (0.2, 1.0, 6.0):
        dens = pc_prior_mu_conditional_density(grid, eta, 1.3)
        assert np.all(np.diff(dens) < 0.0)
        assert_allclose(
            pc_prior_mu_conditional_density(-grid, eta, 1.3), dens, rtol=1e-15
        )


def test_pc_prior_type():
    pr = PcPrior(30.0, 13.0, {"method": "tail", "alpha_eta": 0.01})
    cfg = validate_prior_config(pr.as_config())
    assert cfg["eta_star"]["rate"] == 30.0
    assert cfg["mu_star"]["rate"] == 13.0
    with pytest.raises(ValueError):
        PcPrior(0.0, 1.0)
    with pytest.raises(ValueError):
        PcPrior(1.0, -2.0)


def test_log_prior_pc1_mode():
    cfg = preset_prior_config("pc1")
    val = log_prior({"eta_star": 0.0, "mu_star": 0.0, "sigma_x": 1.0}, cfg)
    # exponential and Laplace peak at the base model; IG(1,1) at sigma = 1
    expected = math.log(30.0) + math.log(13.0 / 2.0) - 1.0
    assert_allclose(val, expected, rtol=1e-12)


def test_log_prior_uniform_and_support():
    cfg = preset_prior_config("uniform")
    a = log_prior({"eta_star": 1.0, "mu_star": -20.0, "sigma_x": 2.0}, cfg)
    b = log_prior({"eta_star": 49.0, "mu_star": 20.0, "sigma_x": 2.0}, cfg)
    assert_allclose(a, b, rtol=1e-15)
    assert log_prior({"eta_star": 51.0, "mu_star": 0.0, "sigma_x": 2.0}, cfg) == -math.inf
    assert log_prior({"eta_star": -0.1, "mu_star": 0.0, "sigma_x": 2.0}, cfg) == -math.inf


def test_log_prior_ig_zero_density_at_base():
    cfg = preset_prior_config("ig1")
    lp = log_prior({"eta_star": 0.0, "mu_star": 0.0, "sigma_x": 1.0}, cfg)
    assert math.exp(lp) == 0.0


def test_log_prior_errors():
    cfg = preset_prior_config("pc2")
    with pytest.raises(ValueError):
        log_prior({"eta_star": 0.1}, cfg)
    bad = {"schema": PRIOR_SCHEMA, "eta_star": {"name": "triangular", "rate": 1.0}}
    with pytest.raises(ValueError):
        log_prior({"eta_star": 0.1}, bad)
    with pytest.raises(ValueError):
        validate_prior_config({"eta_star": {"name": "exponential", "rate": 1.0}})
    with pytest.raises(ValueError):
        validate_prior_config(
            {"schema": PRIOR_SCHEMA, "x": {"name": "uniform", "low": 2.0, "high": 1.0}}
        )


def test_prior_config_files(tmp_path):
    cfg = preset_prior_config("pc2")
    jpath = tmp_path / "prior.json"
    jpath.write_text(json.dumps(cfg))
    assert load_prior_config(str(jpath)) == validate_prior_config(cfg)

    tpath = tmp_path / "prior.toml"
    tpath.write_text(
        'schema = "ngflex-prior-1"\n'
        "[eta_star]\n"
        'name = "exponential"\n'
        "rate = 2.3\n"
        "[mu_star]\n"
        'name = "laplace"\n'
        "rate = 1.0\n"
        "[sigma_x]\n"
        'name = "inverse_gamma"\n'
        "shape = 1.0\n"
        "scale = 1.0\n"
    )
    assert load_prior_config(str(tpath)) == validate_prior_config(cfg)
    with pytest.raises(ValueError):
        load_prior_config(str(tmp_path / "prior.yaml"))


def test_preset_isolation():
    cfg = preset_prior_config("pc1")
    cfg["eta_star"]["rate"] = 999.0
    assert PRIOR_PRESETS["pc1"]["eta_star"]["rate"] == 30.0
    with pytest.raises(ValueError):
        preset_prior_config("jeffreys")
