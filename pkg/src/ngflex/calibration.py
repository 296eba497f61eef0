"""Calibration of the PC-prior rates from tail-event probabilities.

Two routes translate a user statement about excess non-Gaussian behaviour
into the exponential rate theta_eta:

* the marginal route compares the stationary field's 3-sigma exceedance
  probability against the Gaussian one (the ratio Q) and finds the eta
  at which Q doubles, so that P(Q > 2) = alpha under the prior;
* the event route counts threshold crossings of the driving noise
  increments (Q1 expected events, Q2 no-event probability) and solves
  the corresponding target equation in eta.

The asymmetry rate theta_mu comes from the closed-form tail-asymmetry
ratio gamma(mu_star), whose doubling point is known exactly for both
variants, so no root-finding is needed there.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import replace

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import brentq
from scipy.special import gammaln, ndtr

from .field import MarginalSpec, sigma_marg, tail_prob
from .noise import NoiseParams
from .priors import PcPrior

__all__ = [
    "q_ratio",
    "q_inverse_at_2",
    "calibrate_eta_marginal",
    "noise_event_prob",
    "q1_expected_events",
    "q2_no_event_prob",
    "calibrate_eta_events",
    "gamma_asymmetry",
    "gamma_inverse_at_2",
    "calibrate_mu",
    "build_pc_prior",
    "calibration_report",
]

# Exceedance-doubling constants Q^-1(2 | kappa=1) for symmetric noise,
# precomputed by the same CF-inversion pipeline q_inverse_at_2 runs and
# cross-checked against closed-form marginal CFs and 4e5-sample Monte
# Carlo histograms. Scaling in kappa is exact (see q_inverse_at_2).
Q_INVERSE_AT_2_CONSTANTS = {
    ("nig", "OU_d1"): 0.1566,
    ("gal", "OU_d1"): 0.1540,
    ("nig", "Matern2_d1"): 0.3133,
    ("gal", "Matern2_d1"): 0.3079,
    ("nig", "Matern2_d2"): 0.2712,
    ("gal", "Matern2_d2"): 0.2502,
}

_ETA_BRACKET = (1e-6, 1e3)


def _gaussian_tail(threshold_sd: float) -> float:
    return 2.0 * ndtr(-threshold_sd)


def q_ratio(eta: float, spec: MarginalSpec, threshold_sd: float = 3.0) -> float:
    """Exceedance ratio Q(eta): the stationary marginal's probability of
    leaving +-threshold_sd Gaussian standard deviations, relative to the
    Gaussian field's own exceedance probability.

    The noise scale is pinned to sigma = 1 and the threshold to
    threshold_sd * sigma_marg(kappa), so Q depends only on (eta, mu),
    the model family and kappa. Q -> 1 as eta -> 0.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    base = spec.noise.as_variance_corrected()
    p = replace(base, sigma=1.0, eta=float(eta))
    alpha, d = spec.alpha_d
    threshold = threshold_sd * sigma_marg(spec.kappa, alpha, d, 1.0)
    probe = MarginalSpec(spec.model, spec.kappa, p)
    return tail_prob(probe, threshold) / _gaussian_tail(threshold_sd)


def _kappa_exponent(model: str) -> int:
    # Shrinking the correlation range by kappa repackages the driving
    # noise over cells of volume kappa^-d, which maps eta -> kappa^d eta
    # while the threshold and the field rescale together, so
    # Q(eta | kappa) = Q(kappa^d eta | 1) for symmetric noise.
    _, d = MarginalSpec(model, 1.0, NoiseParams("nig", 1.0, 0.1, 0.0)).alpha_d
    return d


def q_inverse_at_2(
    variant: str,
    model: str,
    kappa: float,
    *,
    mu: float = 0.0,
    ratio: float = 2.0,
    threshold_sd: float = 3.0,
    method: str = "invert",
    full_output: bool = False,
):
    """Smallest eta at which the exceedance ratio reaches ``ratio``.

    method "invert" scans log-eta geometrically over [1e-6, 1e3] for the
    first crossing and polishes it with Brent's method; the result is
    rejected unless |Q(root) - ratio| < 1e-3. method "fast" looks up the
    kappa = 1 doubling constant and rescales by kappa^-d, which is exact
    for symmetric noise; it only exists for ratio = 2 at the default
    threshold.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if method == "fast":
        if mu != 0.0:
            raise ValueError("the fast path is tabulated for symmetric noise only")
        if ratio != 2.0 or threshold_sd != 3.0:
            raise ValueError("the fast path only covers ratio 2 at the 3-sigma threshold")
        key = (variant, MarginalSpec(model, kappa, NoiseParams(variant, 1.0, 0.1, 0.0)).model)
        root = Q_INVERSE_AT_2_CONSTANTS[key] / kappa ** _kappa_exponent(model)
        return (root, {"method": "fast", "residual": None}) if full_output else root
    if method != "invert":
        raise ValueError(f"unknown method {method!r}; expected 'invert' or 'fast'")
    if not ratio > 1.0:
        raise ValueError("ratio must exceed the Gaussian baseline 1")

    spec = MarginalSpec(model, kappa, NoiseParams(variant, 1.0, 0.1, float(mu)))

    def objective(log_eta: float) -> float:
        return q_ratio(math.exp(log_eta), spec, threshold_sd) - ratio

    lo, hi = (math.log(b) for b in _ETA_BRACKET)
    step = math.log(2.0)
    left, f_left = lo, objective(lo)
    if f_left >= 0.0:
        raise RuntimeError(
            f"Q already exceeds {ratio} at eta = {_ETA_BRACKET[0]}; no bracket"
        )
    right = left
    while right < hi:
        right = min(right + step, hi)
        f_right = objective(right)
        if f_right >= 0.0:
            break
        left, f_left = right, f_right
    else:
        raise RuntimeError(
            f"Q stays below {ratio} for eta up to {_ETA_BRACKET[1]}; no bracket"
        )
    log_root = brentq(objective, left, right, xtol=1e-12, rtol=1e-12)
    root = math.exp(log_root)
    residual = abs(q_ratio(root, spec, threshold_sd) - ratio)
    if not residual < 1e-3:
        raise RuntimeError(f"root residual {residual:.2e} exceeds 1e-3")
    return (root, {"method": "invert", "residual": residual}) if full_output else root


def calibrate_eta_marginal(
    alpha_eta: float,
    variant: str,
    model: str,
    kappa: float,
    *,
    method: str = "fast",
    threshold_sd: float = 3.0,
    full_output: bool = False,
):
    """Rate theta_eta such that P(Q(eta_star) > 2) = alpha_eta under the
    exponential prior: theta_eta = -log(alpha_eta) / Q^-1(2 | kappa)."""
    if not 0.0 < alpha_eta < 1.0:
        raise ValueError("alpha_eta must lie in (0, 1)")
    out = q_inverse_at_2(
        variant, model, kappa, threshold_sd=threshold_sd, method=method, full_output=True
    )
    root, info = out
    theta = -math.log(alpha_eta) / root
    if full_output:
        info = dict(info, q_inverse_at_2=root, alpha_eta=float(alpha_eta))
        return theta, info
    return theta


def noise_event_prob(p: NoiseParams, h: float, threshold_sd: float = 3.0) -> float:
    """P(|Lambda_i| > threshold_sd * sqrt(h) * sigma) for one increment.

    Computed by conditioning on the mixing variable: given V the increment
    is Gaussian, so the exceedance is a pair of ndtr calls, and the outer
    integral over the mixing density is smooth (the near-zero mixing pole
    of GAL with h < eta is flattened by the vanishing Gaussian factors).
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if not threshold_sd > 0:
        raise ValueError("threshold_sd must be positive")
    p = p.as_variance_corrected()
    if p.is_gaussian:
        return _gaussian_tail(threshold_sd)
    eta, mu = p.eta, p.mu
    st = p.sigma / math.sqrt(1.0 + eta * mu * mu)
    thr = threshold_sd * math.sqrt(h) * p.sigma

    if p.variant == "nig":
        lam = h * h / eta
        log_const = 0.5 * (math.log(lam) - math.log(2.0 * math.pi))

        def log_mixing(v):
            return log_const - 1.5 * math.log(v) - lam * (v - h) ** 2 / (2.0 * h * h * v)

    else:
        shape = h / eta
        log_const = -gammaln(shape) - shape * math.log(eta)

        def log_mixing(v):
            return log_const + (shape - 1.0) * math.log(v) - v / eta

    def integrand(v):
        if v <= 0.0:
            return 0.0
        lg = log_mixing(v)
        if lg < -745.0:
            return 0.0
        s = st * math.sqrt(v)
        m = st * mu * (v - h)
        return math.exp(lg) * (ndtr((m - thr) / s) + ndtr((-thr - m) / s))

    sd_v = math.sqrt(h * eta)
    v_hi = h + 40.0 * sd_v + 150.0 * eta
    knots = {h / 2.0, h, h - 12.0 * sd_v, h + 12.0 * sd_v, eta}
    # where the conditional sd crosses thr/3 and thr/6: the exceedance
    # probability turns on around here
    knots.update(((thr / (3.0 * st)) ** 2, (thr / (6.0 * st)) ** 2))
    cuts = [0.0] + sorted(k for k in knots if 0.0 < k < v_hi) + [v_hi]
    total = 0.0
    err = 0.0
    # QAGS grumbles about the near-delta mixing spike at small eta but
    # converges; the explicit error gate below is the real guard.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        for a, b in zip(cuts[:-1], cuts[1:]):
            val, e = quad(integrand, a, b, epsabs=1e-13, epsrel=1e-11, limit=200)
            total += val
            err += e
    if err > 1e-9 + 1e-7 * total:
        raise RuntimeError(f"event-probability quadrature error {err:.2e} too large")
    return min(max(total, 0.0), 1.0)


def _grouped_event_probs(p: NoiseParams, h_vec, threshold_sd: float):
    h_arr = np.asarray(h_vec, dtype=float)
    if h_arr.ndim != 1:
        raise ValueError("h_vec must be one-dimensional")
    uniq, counts = np.unique(h_arr, return_counts=True)
    probs = np.array([noise_event_prob(p, h, threshold_sd) for h in uniq])
    return probs, counts


def q1_expected_events(p: NoiseParams, h_vec, threshold_sd: float = 3.0) -> float:
    """Expected number of increments exceeding their own 3-sigma band."""
    h_arr = np.asarray(h_vec, dtype=float)
    if h_arr.size == 0:
        return 0.0
    probs, counts = _grouped_event_probs(p, h_arr, threshold_sd)
    return float(np.sum(counts * probs))


def q2_no_event_prob(p: NoiseParams, h_vec, threshold_sd: float = 3.0) -> float:
    """Probability that no increment exceeds its 3-sigma band."""
    h_arr = np.asarray(h_vec, dtype=float)
    if h_arr.size == 0:
        return 1.0
    probs, counts = _grouped_event_probs(p, h_arr, threshold_sd)
    return float(np.exp(np.sum(counts * np.log1p(-probs))))


def calibrate_eta_events(
    alpha_eta: float,
    target: float,
    variant: str,
    h_vec,
    *,
    statistic: str = "q1",
    mu: float = 0.0,
    sigma: float = 1.0,
    threshold_sd: float = 3.0,
    full_output: bool = False,
):
    """theta_eta from an event-count statement: solve statistic(eta) = target
    for the smallest root, then set theta_eta = -log(alpha_eta)/eta_root.

    With statistic "q1" the target is an expected event count (Q1 rises
    from the Gaussian floor n * 2 Phi(-threshold)); with "q2" it is a
    no-event probability (Q2 falls from the matching Gaussian value).
    Neither statistic is monotone over the whole eta range: with the
    variance pinned, extreme eta concentrates the noise into rare huge
    jumps and the per-increment event probability comes back down. The
    solver therefore scans log eta from the left for the first crossing
    and bisects inside that bracket, matching the smallest-eta reading
    used by the marginal route.
    """
    if not 0.0 < alpha_eta < 1.0:
        raise ValueError("alpha_eta must lie in (0, 1)")
    h_arr = np.asarray(h_vec, dtype=float)
    if h_arr.size == 0:
        raise ValueError("h_vec must be nonempty")
    if statistic == "q1":
        stat, sign = q1_expected_events, 1.0
    elif statistic == "q2":
        stat, sign = q2_no_event_prob, -1.0
    else:
        raise ValueError(f"unknown statistic {statistic!r}; expected 'q1' or 'q2'")

    def value(eta):
        return stat(NoiseParams(variant, sigma, eta, mu), h_arr, threshold_sd)

    def objective(log_eta):
        return sign * (value(math.exp(log_eta)) - target)

    lo, hi = (math.log(b) for b in _ETA_BRACKET)
    step = math.log(2.0)
    left, f_left = lo, objective(lo)
    if not f_left < 0.0:
        raise RuntimeError(
            f"{statistic} already passes the target at eta = {_ETA_BRACKET[0]}"
        )
    right = left
    while right < hi:
        right = min(right + step, hi)
        if objective(right) >= 0.0:
            break
        left = right
    else:
        raise RuntimeError(
            f"{statistic} never reaches the target by eta = {_ETA_BRACKET[1]}"
        )
    lo, hi = left, right
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = objective(mid)
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
        if abs(f_mid) < 1e-8 or hi - lo < 1e-13:
            break
    eta_root = math.exp(0.5 * (lo + hi))
    residual = abs(value(eta_root) - target)
    if not residual < 1e-6:
        raise RuntimeError(f"event-count residual {residual:.2e} exceeds 1e-6")
    theta = -math.log(alpha_eta) / eta_root
    if full_output:
        return theta, {
            "method": statistic,
            "eta_root": eta_root,
            "residual": residual,
            "target": float(target),
            "alpha_eta": float(alpha_eta),
        }
    return theta


def gamma_asymmetry(variant: str, mu_star: float) -> float:
    """Tail-asymmetry ratio gamma(mu_star) in the tail-corrected
    parameterization: the heavier tail's decay rate never moves, and
    gamma is the ratio of the two rates, invariant in eta_star."""
    m = float(mu_star)
    if variant == "nig":
        return 1.0 + 2.0 * (m * m + abs(m) * math.sqrt(1.0 + m * m))
    if variant == "gal":
        return 1.0 + m * m + abs(m) * math.sqrt(2.0 + m * m)
    raise ValueError(f"unknown variant {variant!r}")


def gamma_inverse_at_2(variant: str) -> float:
    """The mu_star at which one tail decays twice as fast as the other.

    Solving gamma(m) = 2 in closed form: the NIG condition
    m^2 + m sqrt(1+m^2) = 1/2 is satisfied by m = 1/(2 sqrt 2), and the
    GAL condition m^2 + m sqrt(2+m^2) = 1 by m = 1/2.
    """
    if variant == "nig":
        return 0.5 / math.sqrt(2.0)
    if variant == "gal":
        return 0.5
    raise ValueError(f"unknown variant {variant!r}")


def calibrate_mu(alpha_mu: float, variant: str) -> float:
    """Rate theta_mu such that P(gamma(mu_star) > 2) = alpha_mu under the
    Laplace(theta_mu) prior: theta_mu = -log(alpha_mu)/gamma^-1(2)."""
    if not 0.0 < alpha_mu < 1.0:
        raise ValueError("alpha_mu must lie in (0, 1)")
    return -math.log(alpha_mu) / gamma_inverse_at_2(variant)


def build_pc_prior(
    variant: str,
    model: str,
    kappa: float,
    alpha_eta: float,
    alpha_mu: float,
    *,
    method: str = "fast",
    threshold_sd: float = 3.0,
) -> PcPrior:
    """Assemble a PcPrior from the two probability statements, recording
    how the rates were derived."""
    theta_eta, info = calibrate_eta_marginal(
        alpha_eta, variant, model, kappa,
        method=method, threshold_sd=threshold_sd, full_output=True,
    )
    theta_mu = calibrate_mu(alpha_mu, variant)
    record = {
        "method": info["method"],
        "alpha_eta": float(alpha_eta),
        "alpha_mu": float(alpha_mu),
        "variant": variant,
        "model": model,
        "kappa": float(kappa),
        "threshold_sd": float(threshold_sd),
        "q_inverse_at_2": info["q_inverse_at_2"],
        "gamma_inverse_at_2": gamma_inverse_at_2(variant),
    }
    return PcPrior(theta_eta, theta_mu, record)


def calibration_report(
    variant: str,
    model: str,
    kappa: float,
    alpha_eta: float,
    alpha_mu: float,
    *,
    method: str = "fast",
    threshold_sd: float = 3.0,
) -> dict:
    """JSON-ready record of a marginal-route calibration run."""
    theta_eta, info = calibrate_eta_marginal(
        alpha_eta, variant, model, kappa,
        method=method, threshold_sd=threshold_sd, full_output=True,
    )
    theta_mu = calibrate_mu(alpha_mu, variant)
    return {
        "schema": "ngflex-calibration-1",
        "inputs": {
            "variant": variant,
            "model": model,
            "kappa": float(kappa),
            "alpha_eta": float(alpha_eta),
            "alpha_mu": float(alpha_mu),
            "threshold_sd": float(threshold_sd),
        },
        "method": info["method"],
        "outputs": {
            "theta_eta": theta_eta,
            "theta_mu": theta_mu,
            "q_inverse_at_2": info["q_inverse_at_2"],
            "gamma_inverse_at_2": gamma_inverse_at_2(variant),
        },
        "residuals": {
            "q_ratio": info["residual"],
            "gamma": 0.0,
        },
    }
