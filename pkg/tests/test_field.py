"""Tests for field sampling, marginal CFs, stationary marginals and tails.

Monte Carlo comparisons use fixed seeds and standard-error-based bands.
Multi-draw brute force is built directly from D^-1 applied to noise
draws so the moment and CF formulas are checked against an independent
construction of the same model.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import sparse, stats
from scipy.sparse.linalg import splu
from scipy.special import ndtr, zeta

from ngflex import field, noise
from ngflex import operators as ops


def uniform_mesh(a, b, n):
    return ops.Mesh1D(np.linspace(a, b, n))


def draw_fields(op, p, reps, seed):
    """reps independent fields as rows, via one factorization."""
    rng = np.random.default_rng(seed)
    lu = splu(op.d_matrix.tocsc())
    lam = np.stack([noise.sample_noise(p, op.h, rng) for _ in range(reps)])
    return np.stack([lu.solve(row) for row in lam])


# ------------------------------------------------------------------- sampling


def test_sample_field_shapes_and_types():
    op = ops.ar1_operator(0.5, 12)
    p = noise.NoiseParams("gal", 1.0, 0.8, 0.3)
    s = field.sample_field(op, p, np.random.default_rng(0))
    assert s.x.shape == (12,)
    assert s.v.shape == (12,)
    assert np.all(s.v > 0)


def test_sample_field_gaussian_limit_ks():
    op = ops.ar1_operator(0.4, 30)
    p = noise.NoiseParams("nig", 1.0, 1e-6, 0.0)
    rng = np.random.default_rng(1)
    reps = 10_000
    vals = np.empty(reps)
    for r in range(reps):
        vals[r] = field.sample_field(op, p, rng).x[15]
    sd = np.sqrt(field.marginal_moments(15, op, p)[1])
    assert stats.kstest(vals / sd, stats.norm.cdf).pvalue > 0.01


def test_sample_field_node_variance():
    mesh = uniform_mesh(0.0, 50.0, 401)
    op = ops.diff_operator_1d("Matern2", mesh, 0.2)
    p = noise.NoiseParams("nig", 1.0, 1.5, 0.0)
    x = draw_fields(op, p, 4000, seed=2)
    i = 200
    want = field.marginal_moments(i, op, p)[1]
    got = x[:, i].var()
    se = x[:, i].var() * np.sqrt(2.0 / 4000)  # approx SE of a variance
    assert abs(got - want) < 5 * se


def test_sample_field_skewness_sign_follows_mu():
    mesh = uniform_mesh(0.0, 20.0, 101)
    op = ops.diff_operator_1d("Matern2", mesh, 1.0)
    for mu in (2.0, -2.0):
        p = noise.NoiseParams("nig", 1.0, 2.0, mu)
        analytic = [field.marginal_moments(i, op, p)[2] for i in range(0, 101, 10)]
        assert np.all(np.sign(analytic) == np.sign(mu))
        x = draw_fields(op, p, 3000, seed=3)
        assert np.sign(stats.skew(x[:, 50])) == np.sign(mu)


def test_sample_field_gaussian_sentinel_exact():
    op = ops.ar1_operator(0.3, 5)
    p = noise.NoiseParams("gal", 1.0, 0.0, 0.7)
    s = field.sample_field(op, p, np.random.default_rng(4))
    assert_allclose(s.v, op.h)


# ------------------------------------------------------------------ precision


def test_precision_identity():
    op = ops.ModelOperator(sparse.eye(4, format="csr"), np.ones(4), {})
    q = field.precision(op, 1.0)
    assert_allclose(q.toarray(), np.eye(4))


def test_precision_matches_ar1_covariance_inverse():
    op = ops.ar1_operator(0.5, 4)
    q = field.precision(op, 1.0).toarray()
    idx = np.arange(4)
    cov = 0.5 ** np.abs(idx[:, None] - idx[None, :]) / (1.0 - 0.25)
    assert_allclose(q, np.linalg.inv(cov), rtol=1e-12, atol=1e-12)
    assert np.max(np.abs(q - q.T)) < 1e-12


def test_precision_scaling_and_validation():
    op = ops.ar1_operator(0.2, 6)
    q1 = field.precision(op, 1.0).toarray()
    q2 = field.precision(op, 2.0).toarray()
    assert_allclose(q2, q1 / 4.0, rtol=1e-14)
    with pytest.raises(ValueError):
        field.precision(op, 0.0)


# ---------------------------------------------------------------- marginal CF


def test_marginal_log_cf_zero():
    op = ops.ar1_operator(0.5, 8)
    p = noise.NoiseParams("nig", 1.0, 1.0, 0.5)
    assert field.marginal_log_cf(3, op, p, 0.0) == 0.0


def test_marginal_log_cf_single_node_reduces_to_noise():
    op = ops.ModelOperator(sparse.eye(1, format="csr"), np.ones(1), {})
    p = noise.NoiseParams("gal", 1.2, 0.7, -0.4)
    t = np.array([0.3, 1.1, 2.0])
    assert_allclose(field.marginal_log_cf(0, op, p, t), noise.log_cf(p, 1.0, t), rtol=1e-13)


def test_marginal_log_cf_curvature_is_variance():
    op = ops.ar1_operator(0.7, 10)
    p = noise.NoiseParams("nig", 0.9, 1.3, 0.6)
    i = 5
    var = field.marginal_moments(i, op, p)[1]
    eps = 1e-4
    f = lambda t: field.marginal_log_cf(i, op, p, t)
    curv = (f(eps) - 2 * f(0.0) + f(-eps)) / eps**2
    assert_allclose(-np.real(curv), var, rtol=1e-6)
    assert abs(np.imag(curv)) < 1e-6


@pytest.mark.parametrize("case", ["ar1", "sar", "matern1d"])
def test_empirical_cf_matches_marginal_log_cf(case):
    if case == "ar1":
        op = ops.ar1_operator(0.6, 25)
        i = 12
    elif case == "sar":
        n = 16
        w = sparse.lil_matrix((n, n))
        for k in range(n):
            nbrs = [(k - 1) % n, (k + 1) % n]
            for m in nbrs:
                w[k, m] = 0.5
        op = ops.sar_operator(w.tocsr(), 0.55)
        i = 7
    else:
        op = ops.diff_operator_1d("Matern2", uniform_mesh(0.0, 20.0, 101), 1.0)
        i = 50
    p = noise.NoiseParams("gal", 1.0, 1.0, 0.8)
    reps = 60_000
    x = draw_fields(op, p, reps, seed=11)[:, i]
    for t in [0.5, 1.5]:
        emp = np.mean(np.exp(1j * t * x))
        want = np.exp(field.marginal_log_cf(i, op, p, t))
        assert abs(emp - want) < 3.0 / np.sqrt(reps)


# ------------------------------------------------------------------- moments


def test_marginal_moments_symmetric_and_consistency():
    op = ops.ar1_operator(0.5, 9)
    p = noise.NoiseParams("gal", 1.0, 0.9, 0.0)
    mean, var, skew, ek = field.marginal_moments(4, op, p)
    assert mean == 0.0
    assert skew == 0.0
    assert ek > 0
    # single-node operator reduces to the noise moments at h=1
    op1 = ops.ModelOperator(sparse.eye(1, format="csr"), np.ones(1), {})
    p2 = noise.NoiseParams("nig", 1.1, 0.8, 0.5)
    assert_allclose(field.marginal_moments(0, op1, p2), noise.moments(p2, 1.0), rtol=1e-13)


def test_marginal_moments_match_sampled_fields():
    op = ops.ar1_operator(0.7, 20)
    p = noise.NoiseParams("nig", 1.0, 1.2, 0.9)
    reps = 400_000
    rng = np.random.default_rng(13)
    lu = splu(op.d_matrix.tocsc())
    lam = np.column_stack([noise.sample_noise(p, np.full(reps, hj), rng) for hj in op.h])
    x = lu.solve(lam.T).T[:, 10]
    mean, var, skew, ek = field.marginal_moments(10, op, p)
    assert abs(x.mean() - mean) < 5 * np.sqrt(var / reps)
    assert_allclose(x.var(), var, rtol=0.03)
    assert_allclose(stats.skew(x), skew, atol=0.08 * max(1.0, abs(skew)))
    assert_allclose(stats.kurtosis(x), ek, atol=0.15 * max(1.0, abs(ek)))


def test_interior_node_matches_stationary_marginal():
    # fine-mesh interior moments converge to the continuum columns
    kappa = 1.0
    mesh = uniform_mesh(0.0, 60.0, 1201)
    op = ops.diff_operator_1d("Matern2", mesh, kappa)
    p = noise.NoiseParams("nig", 1.0, 2.0, 0.7)
    got = field.marginal_moments(600, op, p)
    spec = field.MarginalSpec("Matern2_d1", kappa, p)
    want = field.stationary_marginal_moments(spec)
    assert_allclose(got[1], want[1], rtol=0.02)
    assert_allclose(got[2], want[2], rtol=0.02)
    assert_allclose(got[3], want[3], rtol=0.02)


def test_stationary_moment_columns():
    # unit-noise scale factors of variance, skewness and excess kurtosis
    # for the three stationary models
    kappa, sigma = 1.7, 1.0
    p_unit = noise.NoiseParams("nig", sigma, 1.0, 0.5)
    _, _, s_u, k_u = noise.moments(p_unit, 1.0)
    checks = {
        "OU_d1": (sigma**2 / (2 * kappa), 2 * np.sqrt(2 * kappa) / 3, kappa),
        "Matern2_d1": (sigma**2 / (4 * kappa**3), 2 * np.sqrt(kappa) / 3, kappa / 2),
        "Matern2_d2": (
            sigma**2 / (4 * np.pi * kappa**2),
            0.661204024435389 * kappa,
            7 * zeta(3) * kappa**2 / (4 * np.pi),
        ),
    }
    for model, (var_c, skew_c, ek_c) in checks.items():
        spec = field.MarginalSpec(model, kappa, p_unit)
        _, var, skew, ek = field.stationary_marginal_moments(spec)
        assert_allclose(var, var_c, rtol=1e-9)
        assert_allclose(skew, s_u * skew_c, rtol=1e-7)
        assert_allclose(ek, k_u * ek_c, rtol=1e-9)


# --------------------------------------------------------- stationary log CF


def test_stationary_log_cf_zero_and_symmetry():
    p = noise.NoiseParams("gal", 1.0, 0.5, 0.0)
    spec = field.MarginalSpec("Matern2_d2", 1.0, p)
    assert field.stationary_marginal_log_cf(spec, 0.0) == 0.0
    vals = field.stationary_marginal_log_cf(spec, np.array([-1.3, 1.3]))
    assert_allclose(vals[0], vals[1], rtol=1e-13)


@pytest.mark.parametrize("model", ["OU_d1", "Matern2_d1"])
@pytest.mark.parametrize("variant", ["nig", "gal"])
def test_stationary_log_cf_closed_forms(model, variant):
    kappa, sigma, eta = 0.7, 1.3, 0.9
    p = noise.NoiseParams(variant, sigma, eta, 0.0)
    spec = field.MarginalSpec(model, kappa, p)
    for u in [0.25, 0.5, 1.0, 2.0]:
        got = field.stationary_marginal_log_cf(spec, u)
        want = field.closed_form_stationary_log_cf(model, variant, kappa, sigma, eta, u)
        assert_allclose(np.real(got), want, rtol=1e-9)
        assert abs(np.imag(got)) < 1e-12


def test_closed_form_rejects_d2():
    with pytest.raises(ValueError):
        field.closed_form_stationary_log_cf("Matern2_d2", "nig", 1.0, 1.0, 1.0, 1.0)


def test_stationary_log_cf_gaussian_consistency():
    # at tiny eta the quadrature must land on the Gaussian exponent
    kappa = 1.0
    p = noise.NoiseParams("nig", 1.0, 1e-9, 0.0)
    spec = field.MarginalSpec("Matern2_d1", kappa, p)
    s2 = field.sigma_marg(kappa, 2, 1, 1.0) ** 2
    got = field.stationary_marginal_log_cf(spec, 1.5)
    assert_allclose(np.real(got), -s2 * 1.5**2 / 2.0, rtol=1e-6)


# ---------------------------------------------------------------------- tails


def test_tail_prob_gaussian_limit():
    p = noise.NoiseParams("nig", 1.0, 1e-6, 0.0)
    spec = field.MarginalSpec("Matern2_d1", 1.0, p)
    s = field.sigma_marg(1.0, 2, 1, 1.0)
    assert abs(field.tail_prob(spec, 3.0 * s) - 2 * ndtr(-3.0)) < 5e-5


def test_tail_prob_monotone_in_eta():
    s = field.sigma_marg(1.0, 2, 1, 1.0)
    probs = []
    for eta in (0.1, 1.0):
        p = noise.NoiseParams("nig", 1.0, eta, 0.0)
        probs.append(field.tail_prob(field.MarginalSpec("Matern2_d1", 1.0, p), 2.0 * s))
    assert probs[1] > probs[0]


def test_tail_prob_matches_monte_carlo():
    kappa = 1.0
    p = noise.NoiseParams("nig", 1.0, 1.0, 0.0)
    spec = field.MarginalSpec("Matern2_d1", kappa, p)
    s = field.sigma_marg(kappa, 2, 1, 1.0)
    tau = 2.0 * s
    want = field.tail_prob(spec, tau)
    mesh = uniform_mesh(0.0, 30.0, 601)
    op = ops.diff_operator_1d("Matern2", mesh, kappa)
    x = draw_fields(op, p, 4000, seed=17)[:, 300]
    emp = np.mean(np.abs(x) > tau)
    se = np.sqrt(want * (1 - want) / 4000)
    assert abs(emp - want) < 3 * se


def test_tail_prob_asymmetric_case():
    # mu breaks symmetry; the inversion must still produce a sane
    # probability that matches Monte Carlo
    kappa = 1.0
    p = noise.NoiseParams("nig", 1.0, 1.0, 1.0)
    spec = field.MarginalSpec("Matern2_d1", kappa, p)
    s = field.sigma_marg(kappa, 2, 1, 1.0)
    tau = 2.0 * s
    got = field.tail_prob(spec, tau)
    assert 0.0 < got < 0.5
    mesh = uniform_mesh(0.0, 30.0, 601)
    op = ops.diff_operator_1d("Matern2", mesh, kappa)
    x = draw_fields(op, p, 4000, seed=19)[:, 300]
    emp = np.mean(np.abs(x) > tau)
    se = np.sqrt(got * (1 - got) / 4000) + 0.002  # small mesh bias slack
    assert abs(emp - got) < 3 * se


def test_tail_prob_validation():
    p = noise.NoiseParams("nig", 1.0, 1.0, 0.0)
    spec = field.MarginalSpec("OU_d1", 1.0, p)
    with pytest.raises(ValueError):
        field.tail_prob(spec, 0.0)


# ----------------------------------------------- covariance invariance in eta


def test_covariance_invariant_under_eta():
    op = ops.ar1_operator(0.6, 15)
    reps = 30_000
    covs = []
    for eta, seed in ((1e-6, 23), (2.0, 29)):
        p = noise.NoiseParams("nig", 1.0, eta, 0.0)
        x = draw_fields(op, p, reps, seed=seed)
        covs.append(np.cov(x.T))
    scale = np.sqrt(np.outer(np.diag(covs[0]), np.diag(covs[0])))
    # entrywise SE of a covariance is about sigma_i sigma_j sqrt(2/N)
    band = 6 * scale * np.sqrt(2.0 / reps)
    assert np.max(np.abs(covs[1] - covs[0]) - band) < 0


# ------------------------------------------------------------------ utilities


def test_sigma_marg_values_and_validation():
    assert_allclose(field.sigma_marg(2.0, 1, 1, 1.0), 1.0 / 2.0, rtol=1e-13)
    assert_allclose(field.sigma_marg(2.0, 2, 1, 3.0), 3.0 / (2 * 2**1.5), rtol=1e-13)
    assert_allclose(field.sigma_marg(2.0, 2, 2, 1.0), 1.0 / (4 * np.sqrt(np.pi)), rtol=1e-13)
    assert_allclose(field.sigma_marg(1.0, 2, 1, 2.0), 2 * field.sigma_marg(1.0, 2, 1, 1.0))
    with pytest.raises(ValueError):
        field.sigma_marg(1.0, 1, 2, 1.0)


def test_dinv_row_bounds():
    op = ops.ar1_operator(0.5, 4)
    with pytest.raises(IndexError):
        field.dinv_row(op, 4)


def test_exports_roundtrip():
    import csv
    import io
    import json

    op = ops.ar1_operator(0.3, 6)
    p = noise.NoiseParams("nig", 1.0, 0.7, 0.2)
    s = field.sample_field(op, p, np.random.default_rng(31))
    text = field.sample_to_csv(s)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 6
    assert float(rows[2]["x"]) == s.x[2]
    assert float(rows[2]["v"]) == s.v[2]
    body = json.loads(field.sample_to_json(s))
    assert body["schema"] == "ngflex-field-1"
    assert_allclose(body["x"], s.x)
    assert body["noise"]["variant"] == "nig"


def test_marginal_spec_validation():
    p = noise.NoiseParams("nig", 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        field.MarginalSpec("CRW1_d1", 1.0, p)
    with pytest.raises(ValueError):
        field.MarginalSpec("OU_d1", 0.0, p)
