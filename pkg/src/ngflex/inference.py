"""Mixture-representation MCMC for y = A x + eps with a non-Gaussian field x.

The sampler exploits the conditional hierarchy directly: given the mixing
vector V the field is Gaussian, so x | V, y is drawn exactly by
conditioning a prior draw on the observations; given x the mixing
variables decouple into generalized-inverse-Gaussian full conditionals;
and the remaining hyperparameters move by coordinate-wise random-walk
Metropolis on transformed coordinates against the x-collapsed target
p(y | V, theta) p(V | theta) p(theta). Collapsing x in the Metropolis
step is valid because x is redrawn from its full conditional immediately
afterwards, before anything else conditions on it.

Setting the observation noise sd to inf switches the data off entirely:
the x draw falls back to the prior field and the collapsed likelihood is
constant, which turns the sampler into a prior simulator (used by the
validation suite).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu
from scipy.special import gammaln, gammainccinv

from .noise import TAIL_CORRECTED, NoiseParams, sample_gig
from .operators import ModelOperator
from .priors import log_prior, validate_prior_config

FIT_SCHEMA = "ngflex-fit-1"

_PARAM_NAMES = ("sigma_x", "eta_star", "mu_star", "sigma_eps", "struct")
_POSITIVE_PARAMS = ("sigma_x", "eta_star", "sigma_eps")


@dataclass(frozen=True)
class HyperState:
    """Hyperparameter bundle; struct is kappa or rho, or None for models
    whose operator has no free structural parameter."""

    sigma_x: float
    eta_star: float
    mu_star: float
    sigma_eps: float
    struct: float | None = None

    def __post_init__(self):
        if not self.sigma_x > 0:
            raise ValueError("sigma_x must be positive")
        if self.eta_star < 0:
            raise ValueError("eta_star must be nonnegative")
        if not self.sigma_eps > 0:
            raise ValueError("sigma_eps must be positive")

    def noise_params(self, variant: str) -> NoiseParams:
        raw = NoiseParams(
            variant, self.sigma_x, self.eta_star, self.mu_star,
            parameterization=TAIL_CORRECTED,
        )
        return raw.as_variance_corrected()

    def values(self, structural: str) -> dict:
        out = {
            "sigma_x": self.sigma_x,
            "eta_star": self.eta_star,
            "mu_star": self.mu_star,
            "sigma_eps": self.sigma_eps,
        }
        if self.struct is not None:
            out[structural] = self.struct
        return out


@dataclass
class ObservationModel:
    """Observation layer y = A x + eps with the operator factory for x.

    op_builder maps the structural parameter (kappa or rho, named by
    ``structural``) to a ModelOperator; for models without one, pass
    structural="none" and a builder ignoring its argument. noise_sd may
    be a fixed sd, None when sigma_eps is sampled, or inf for the
    prior-simulation mode.
    """

    y: np.ndarray
    a_matrix: sparse.csr_matrix
    op_builder: object
    structural: str = "kappa"
    noise_sd: float | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.y.size < 1:
            raise ValueError("need at least one observation")
        self.a_matrix = sparse.csr_matrix(self.a_matrix)
        if self.a_matrix.shape[0] != self.y.size:
            raise ValueError("A row count must match y")
        rowsums = np.asarray(self.a_matrix.sum(axis=1)).ravel()
        if np.max(np.abs(rowsums - 1.0)) > 1e-6:
            raise ValueError("projector rows must sum to 1")
        if self.structural not in ("kappa", "rho", "none"):
            raise ValueError(f"unknown structural parameter {self.structural!r}")
        if not callable(self.op_builder):
            op = self.op_builder
            self.op_builder = lambda _s, _op=op: _op
        if self.noise_sd is not None and not self.noise_sd > 0:
            raise ValueError("noise_sd must be positive (inf allowed)")

    @property
    def n_obs(self) -> int:
        return self.y.size


def _logdet_from_splu(lu) -> float:
    return float(np.sum(np.log(np.abs(lu.U.diagonal()))))


def _sigma_tilde(p: NoiseParams) -> float:
    return p.sigma / math.sqrt(1.0 + p.eta * p.mu * p.mu)


def gibbs_x(
    obs: ObservationModel,
    op: ModelOperator,
    v: np.ndarray,
    hyper: HyperState,
    rng: np.random.Generator,
    variant: str,
) -> np.ndarray:
    """Exact draw from the Gaussian full conditional x | V, y, theta.

    Conditioning by kriging: draw x* from the prior x | V, perturb the
    residual with fresh observation noise, and correct through the
    posterior precision P = Q_{x|V} + A^T A / sigma_eps^2. The result
    has exactly the posterior mean P^-1 (Q m_V + A^T y / sigma_eps^2)
    and covariance P^-1, without factorizing P symmetrically.
    """
    p = hyper.noise_params(variant)
    st = _sigma_tilde(p)
    h = op.h
    n = h.size
    v_eff = h if p.is_gaussian else v
    lam = st * p.mu * (v_eff - h) + st * np.sqrt(v_eff) * rng.standard_normal(n)
    try:
        lu_d = splu(op.d_matrix.tocsc())
        x_star = lu_d.solve(lam)
        if not math.isfinite(hyper.sigma_eps):
            return x_star
        a = obs.a_matrix
        prec_eps = hyper.sigma_eps ** -2
        w = 1.0 / (st * st * v_eff)
        q_v = (op.d_matrix.T @ sparse.diags_array(w) @ op.d_matrix).tocsc()
        p_mat = q_v + prec_eps * (a.T @ a)
        resid = obs.y - a @ x_star - hyper.sigma_eps * rng.standard_normal(obs.n_obs)
        x = x_star + splu(p_mat.tocsc()).solve(prec_eps * (a.T @ resid))
    except RuntimeError as exc:
        raise RuntimeError(
            f"sparse factorization failed in gibbs_x at {hyper!r}: {exc}"
        ) from exc
    if not np.all(np.isfinite(x)):
        raise RuntimeError(f"non-finite field draw in gibbs_x at {hyper!r}")
    return x


def gibbs_v(
    op: ModelOperator,
    x: np.ndarray,
    hyper: HyperState,
    rng: np.random.Generator,
    variant: str,
) -> np.ndarray:
    """Draw the mixing vector from its factorized GIG full conditional.

    Completing the square of the Gaussian kernel of Lambda_i | V_i in
    V_i and multiplying by the mixing density gives, with
    c_i = Lambda_i + sigma_tilde mu h_i,

    * NIG:  p = -1,            a = mu^2 + 1/eta,  b = c_i^2/st^2 + h_i^2/eta
    * GAL:  p = h_i/eta - 1/2, a = mu^2 + 2/eta,  b = c_i^2/st^2

    both in the GIG(p, a, b) density proportional to
    V^{p-1} exp(-(a V + b / V)/2).
    """
    p = hyper.noise_params(variant)
    h = op.h
    if p.is_gaussian:
        return h.copy()
    st = _sigma_tilde(p)
    lam = op.d_matrix @ np.asarray(x, dtype=float)
    c = lam + st * p.mu * h
    b = (c / st) ** 2
    if variant == "nig":
        p_gig = np.full(h.size, -1.0)
        a = p.mu * p.mu + 1.0 / p.eta
        b = b + h * h / p.eta
    else:
        p_gig = h / p.eta - 0.5
        a = p.mu * p.mu + 2.0 / p.eta
        # Lambda_i exactly at the center point with p <= 0 would make the
        # conditional non-normalizable (a measure-zero event); nudge off it.
        b = np.where((b == 0.0) & (p_gig <= 0.0), 1e-280, b)
    v = sample_gig(p_gig, a, b, h.size, rng)
    return np.maximum(v, 1e-300)


def _mixing_log_density(op: ModelOperator, v: np.ndarray, p: NoiseParams, variant: str) -> float:
    """log p(V | eta) under the IG or gamma mixing law (0 at the sentinel)."""
    if p.is_gaussian:
        return 0.0
    h = op.h
    eta = p.eta
    if variant == "nig":
        terms = (
            0.5 * (2.0 * np.log(h) - math.log(eta) - math.log(2.0 * math.pi))
            - 1.5 * np.log(v)
            - (v - h) ** 2 / (2.0 * eta * v)
        )
    else:
        k = h / eta
        terms = -gammaln(k) - k * math.log(eta) + (k - 1.0) * np.log(v) - v / eta
    return float(np.sum(terms))


def collapsed_log_likelihood(
    obs: ObservationModel,
    op: ModelOperator,
    v: np.ndarray,
    hyper: HyperState,
    variant: str,
) -> float:
    """log p(y | V, theta) with the field integrated out.

    Evaluated through the Gaussian identity
    log p(y | V) = log p(y | x) + log p(x | V) - log p(x | y, V)
    at the conditional mean, which needs one solve with the prior
    precision map and one with the posterior precision P.
    """
    if not math.isfinite(hyper.sigma_eps):
        return 0.0
    p = hyper.noise_params(variant)
    st = _sigma_tilde(p)
    h = op.h
    n = h.size
    n_obs = obs.n_obs
    v_eff = h if p.is_gaussian else v
    d = op.d_matrix
    a = obs.a_matrix
    prec_eps = hyper.sigma_eps ** -2
    lu_d = splu(d.tocsc())
    if p.is_gaussian or p.mu == 0.0:
        m = np.zeros(n)
    else:
        m = lu_d.solve(st * p.mu * (v_eff - h))
    w = 1.0 / (st * st * v_eff)
    q_v = (d.T @ sparse.diags_array(w) @ d).tocsc()
    p_mat = (q_v + prec_eps * (a.T @ a)).tocsc()
    lu_p = splu(p_mat)
    mu_post = lu_p.solve(q_v @ m + prec_eps * (a.T @ obs.y))
    logdet_q = -2.0 * n * math.log(st) - float(np.sum(np.log(v_eff))) + 2.0 * _logdet_from_splu(lu_d)
    logdet_p = _logdet_from_splu(lu_p)
    dy = obs.y - a @ mu_post
    dm = mu_post - m
    quad = prec_eps * float(dy @ dy) + float(dm @ (q_v @ dm))
    return (
        -0.5 * n_obs * math.log(2.0 * math.pi)
        - n_obs * math.log(hyper.sigma_eps)
        + 0.5 * logdet_q
        - 0.5 * logdet_p
        - 0.5 * quad
    )


def _joint_log_likelihood(obs, op, v, x, hyper, variant) -> float:
    """log p(y | x) + log p(x | V, theta) for the uncollapsed target."""
    p = hyper.noise_params(variant)
    st = _sigma_tilde(p)
    h = op.h
    n = h.size
    v_eff = h if p.is_gaussian else v
    lam = op.d_matrix @ x
    resid = lam - st * p.mu * (v_eff - h)
    lu_d = splu(op.d_matrix.tocsc())
    loglik = (
        -0.5 * n * math.log(2.0 * math.pi)
        - n * math.log(st)
        - 0.5 * float(np.sum(np.log(v_eff)))
        + _logdet_from_splu(lu_d)
        - 0.5 * float(np.sum(resid * resid / (st * st * v_eff)))
    )
    if math.isfinite(hyper.sigma_eps):
        dy = obs.y - obs.a_matrix @ x
        loglik += (
            -0.5 * obs.n_obs * math.log(2.0 * math.pi)
            - obs.n_obs * math.log(hyper.sigma_eps)
            - 0.5 * float(dy @ dy) / hyper.sigma_eps ** 2
        )
    return loglik


# ------------------------------------------------------- Metropolis machinery

_LOG_PARAMS = ("sigma_x", "eta_star", "sigma_eps")


def _to_unconstrained(name: str, value: float, structural: str) -> float:
    if name in _LOG_PARAMS or (name == "struct" and structural == "kappa"):
        return math.log(value)
    if name == "struct" and structural == "rho":
        return math.atanh(value)
    return value


def _from_unconstrained(name: str, z: float, structural: str):
    if name in _LOG_PARAMS or (name == "struct" and structural == "kappa"):
        return math.exp(z), z
    if name == "struct" and structural == "rho":
        rho = math.tanh(z)
        return rho, math.log1p(-rho * rho)
    return z, 0.0


def _rw_update(z, lp, log_target, scale, rng):
    """One random-walk Metropolis move in a single coordinate; returns
    (z, lp, accepted). log_target must include any Jacobian terms."""
    z_prop = z + scale * rng.standard_normal()
    lp_prop = log_target(z_prop)
    if math.isnan(lp_prop):
        raise RuntimeError(f"non-finite log target at proposal {z_prop!r}")
    if lp_prop - lp > math.log(rng.random()):
        return z_prop, lp_prop, True
    return z, lp, False


def mh_hyper(
    obs: ObservationModel,
    op: ModelOperator,
    hyper: HyperState,
    v: np.ndarray,
    prior_config: dict,
    scales: dict,
    rng: np.random.Generator,
    *,
    variant: str,
    sampled: tuple,
    x: np.ndarray | None = None,
    target: str = "collapsed",
    adapt_step: float | None = None,
):
    """One sweep of coordinate-wise adaptive Metropolis over ``sampled``.

    Proposals walk the unconstrained coordinates (log for positives,
    atanh for rho) with the Jacobians folded into the target. When
    adapt_step is given (warmup), each scale is nudged toward the 0.3
    acceptance mark after its move and the kernel is non-Markov; after
    warmup pass None so the scales stay frozen.

    Returns (hyper, op, accepted) with accepted a name -> bool dict.
    """
    if target not in ("collapsed", "joint"):
        raise ValueError(f"unknown target {target!r}")
    if target == "joint" and x is None:
        raise ValueError("the joint target needs the current field x")

    def log_post(state: HyperState, operator: ModelOperator, log_jac: float) -> float:
        p = state.noise_params(variant)
        lp = log_prior(state.values(obs.structural), prior_config)
        if lp == -math.inf:
            return -math.inf
        lp += _mixing_log_density(operator, v, p, variant) + log_jac
        if target == "collapsed":
            lp += collapsed_log_likelihood(obs, operator, v, state, variant)
        else:
            lp += _joint_log_likelihood(obs, operator, v, x, state, variant)
        return lp

    accepted = {}
    for name in sampled:
        z0 = _to_unconstrained(
            name, getattr(hyper, name), obs.structural
        )

        def log_target(z, _name=name):
            value, log_jac = _from_unconstrained(_name, z, obs.structural)
            state = replace(hyper, **{_name: value})
            operator = obs.op_builder(state.struct) if _name == "struct" else op
            return log_post(state, operator, log_jac)

        lp0 = log_target(z0)
        if not math.isfinite(lp0) and lp0 != -math.inf:
            raise RuntimeError(f"non-finite log target at {hyper!r}")
        z1, _, acc = _rw_update(z0, lp0, log_target, scales[name], rng)
        if acc:
            value, _ = _from_unconstrained(name, z1, obs.structural)
            hyper = replace(hyper, **{name: value})
            if name == "struct":
                op = obs.op_builder(hyper.struct)
        accepted[name] = acc
        if adapt_step is not None:
            scales[name] *= math.exp(adapt_step * ((1.0 if acc else 0.0) - 0.3))
    return hyper, op, accepted


# ----------------------------------------------------------------- fit driver

@dataclass
class McmcConfig:
    chains: int = 2
    warmup: int = 500
    samples: int = 500
    v_thin: int = 10
    thin: int = 1
    mh_steps: int = 1
    seed: int = 0
    sampled: tuple = ("sigma_x", "eta_star", "mu_star")
    target: str = "collapsed"
    init: dict = field(default_factory=dict)
    init_scales: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("need at least one chain")
        if self.warmup < 1 or self.samples < 1:
            raise ValueError("warmup and samples must be at least 1")
        if self.v_thin < 1 or self.thin < 1 or self.mh_steps < 1:
            raise ValueError("v_thin, thin, and mh_steps must be at least 1")
        self.sampled = tuple(self.sampled)
        for name in self.sampled:
            if name not in _PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r} in sampled")
        if self.target not in ("collapsed", "joint"):
            raise ValueError(f"unknown target {self.target!r}")


@dataclass
class PosteriorChains:
    """Posterior draws over (chain, iteration), thinned mixing draws over
    (chain, kept sweep, node), and the resolved run configuration."""

    draws: dict
    v_draws: np.ndarray
    config: dict
    h: np.ndarray

    def __post_init__(self):
        lengths = {arr.shape for arr in self.draws.values()}
        if len(lengths) > 1:
            raise ValueError("per-parameter draw arrays must share a shape")
        for name in _POSITIVE_PARAMS:
            if name in self.draws and not np.all(self.draws[name] > 0):
                raise ValueError(f"{name} draws must stay positive")

    @property
    def n_samples(self) -> int:
        return next(iter(self.draws.values())).shape[1]


def _prior_median(block: dict) -> float:
    name = block["name"]
    if name == "exponential":
        return math.log(2.0) / block["rate"]
    if name == "laplace":
        return block.get("loc", 0.0)
    if name == "normal":
        return block["mean"]
    if name == "uniform":
        return 0.5 * (block["low"] + block["high"])
    if name == "inverse_gamma":
        return block["scale"] / float(gammainccinv(block["shape"], 0.5))
    raise ValueError(f"no median rule for family {name!r}")


_DEFAULT_SCALES = {
    "sigma_x": 0.4, "eta_star": 0.8, "mu_star": 0.5, "sigma_eps": 0.4, "struct": 0.4,
}


def _resolve_init(obs: ObservationModel, prior_config: dict, config: McmcConfig) -> HyperState:
    values = {"sigma_x": 1.0, "eta_star": 0.0, "mu_star": 0.0, "sigma_eps": None, "struct": None}
    if obs.noise_sd is not None:
        values["sigma_eps"] = float(obs.noise_sd)
    for name in config.sampled:
        key = obs.structural if name == "struct" else name
        if key not in prior_config:
            raise ValueError(f"sampled parameter {name!r} has no prior entry {key!r}")
        values[name] = _prior_median(prior_config[key])
    values.update(config.init)
    if values["sigma_eps"] is None:
        raise ValueError("sigma_eps needs a fixed value, an init, or a prior")
    if values["struct"] is None and obs.structural != "none":
        raise ValueError(f"initial value for {obs.structural!r} is required")
    return HyperState(**values)


def fit(
    obs: ObservationModel,
    variant: str,
    prior_config: dict,
    config: McmcConfig,
) -> PosteriorChains:
    """Run the Gibbs/Metropolis sampler and collect posterior chains.

    Chains run sequentially on independent SeedSequence spawns; a fixed
    config.seed makes the whole run bit-reproducible. Non-finite
    numerics abort with the offending state in the error message.
    """
    prior_config = validate_prior_config(prior_config)
    hyper0 = _resolve_init(obs, prior_config, config)
    root = np.random.SeedSequence(config.seed)
    children = root.spawn(config.chains)
    names = list(config.sampled)
    sweeps = config.samples * config.thin
    draws = {name: np.empty((config.chains, config.samples)) for name in names}
    kept = (config.samples + config.v_thin - 1) // config.v_thin
    op0 = obs.op_builder(hyper0.struct)
    v_draws = np.empty((config.chains, kept, op0.h.size))
    accept_totals = {name: 0 for name in names}

    for c, child in enumerate(children):
        rng = np.random.default_rng(child)
        hyper = hyper0
        op = obs.op_builder(hyper.struct)
        v = op.h.copy()
        scales = dict(_DEFAULT_SCALES)
        scales.update(config.init_scales)
        scales = {name: float(scales[name]) for name in names}
        x = _least_squares_init(obs, op)
        for t in range(config.warmup + sweeps):
            adapt = min(0.3, 2.0 / (1.0 + t) ** 0.6) if t < config.warmup else None
            for _ in range(config.mh_steps):
                hyper, op, acc = mh_hyper(
                    obs, op, hyper, v, prior_config, scales, rng,
                    variant=variant, sampled=config.sampled, x=x,
                    target=config.target, adapt_step=adapt,
                )
                if t >= config.warmup:
                    for name in names:
                        accept_totals[name] += acc[name]
            x = gibbs_x(obs, op, v, hyper, rng, variant)
            v = gibbs_v(op, x, hyper, rng, variant)
            if t >= config.warmup and (t - config.warmup + 1) % config.thin == 0:
                i = (t - config.warmup + 1) // config.thin - 1
                for name in names:
                    draws[name][c, i] = getattr(hyper, name)
                if i % config.v_thin == 0:
                    v_draws[c, i // config.v_thin] = v
        if not all(np.all(np.isfinite(arr[c])) for arr in draws.values()):
            raise RuntimeError(
                f"non-finite draws in chain {c}: last state {hyper!r}, "
                f"V range [{v.min():.3g}, {v.max():.3g}]"
            )

    total = config.chains * sweeps * config.mh_steps
    resolved = {
        "schema": FIT_SCHEMA,
        "variant": variant,
        "chains": config.chains,
        "warmup": config.warmup,
        "samples": config.samples,
        "v_thin": config.v_thin,
        "thin": config.thin,
        "mh_steps": config.mh_steps,
        "seed": config.seed,
        "sampled": names,
        "target": config.target,
        "structural": obs.structural,
        "init": {k: (None if v is None else float(v)) for k, v in vars(hyper0).items()},
        "acceptance": {name: accept_totals[name] / total for name in names},
    }
    return PosteriorChains(draws, v_draws, resolved, op0.h.copy())


def _least_squares_init(obs: ObservationModel, op: ModelOperator) -> np.ndarray:
    a = obs.a_matrix
    n = op.h.size
    normal = (a.T @ a + 1e-8 * sparse.eye_array(n, format="csr")).tocsc()
    return splu(normal).solve(a.T @ obs.y)


# ------------------------------------------------------------ chain summaries

def split_rhat(draws: np.ndarray) -> float:
    """Split-chain potential scale reduction factor."""
    arr = np.atleast_2d(np.asarray(draws, dtype=float))
    c, n = arr.shape
    half = n // 2
    if half < 2:
        return math.nan
    halves = np.concatenate([arr[:, :half], arr[:, half : 2 * half]], axis=0)
    within = halves.var(axis=1, ddof=1).mean()
    between = half * halves.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return 1.0
    var_plus = (half - 1) / half * within + between / half
    return float(math.sqrt(var_plus / within))


def ess(draws: np.ndarray) -> float:
    """Effective sample size with Geyer's initial monotone sequence."""
    arr = np.atleast_2d(np.asarray(draws, dtype=float))
    c, n = arr.shape
    half = n // 2
    if half < 2:
        return math.nan
    halves = np.concatenate([arr[:, :half], arr[:, half : 2 * half]], axis=0)
    m, length = halves.shape
    centered = halves - halves.mean(axis=1, keepdims=True)
    size = 2 ** int(math.ceil(math.log2(2 * length)))
    f = np.fft.rfft(centered, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :length].real
    acov /= length
    within = halves.var(axis=1, ddof=1).mean()
    between = length * halves.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_plus = (length - 1) / length * within + between / length
    if var_plus == 0.0:
        return float(m * length)
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = 0.0
    prev = math.inf
    for k in range(0, length - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0.0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += pair
    tau = max(2.0 * tau - 1.0, 1.0)
    return float(m * length / tau)


def summarize(chains: PosteriorChains) -> dict:
    """Means, quantiles, interval widths, and convergence diagnostics."""
    out = {}
    for name, arr in chains.draws.items():
        flat = arr.ravel()
        q05, q50, q95 = np.quantile(flat, [0.05, 0.5, 0.95])
        out[name] = {
            "mean": float(flat.mean()),
            "sd": float(flat.std(ddof=1)),
            "q05": float(q05),
            "q50": float(q50),
            "q95": float(q95),
            "width90": float(q95 - q05),
            "rhat": split_rhat(arr),
            "ess": ess(arr),
        }
    return out


def chains_to_csv(chains: PosteriorChains) -> str:
    names = list(chains.draws)
    lines = [",".join(["chain", "iter"] + names)]
    n_chain, n_iter = chains.draws[names[0]].shape
    for c in range(n_chain):
        for i in range(n_iter):
            row = [str(c), str(i)] + [
                f"{chains.draws[name][c, i]:.17g}" for name in names
            ]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def fit_summary_json(chains: PosteriorChains, report: "GaussianityReport | None" = None) -> str:
    payload = {
        "schema": FIT_SCHEMA,
        "role": "summary",
        "config": chains.config,
        "params": summarize(chains),
    }
    if report is not None:
        payload["v_star_flags"] = [int(i) for i in report.flagged]
    return json.dumps(payload, indent=1, sort_keys=True)


# ------------------------------------------------------- V-star diagnostics

@dataclass
class GaussianityReport:
    """Per-node summaries of V* = V/h; flagged lists nodes whose 95%
    interval excludes 1 (the Gaussian reference value)."""

    mean: np.ndarray
    lo90: np.ndarray
    hi90: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    flagged: np.ndarray

    def __post_init__(self):
        if not (np.all(self.lo95 <= self.mean) and np.all(self.mean <= self.hi95)):
            raise ValueError("intervals must bracket the posterior mean")


def gaussianity_report(chains: PosteriorChains) -> GaussianityReport:
    """Summarize the standardized mixing draws node by node."""
    v_star = chains.v_draws.reshape(-1, chains.h.size) / chains.h
    mean = v_star.mean(axis=0)
    lo90, hi90 = np.quantile(v_star, [0.05, 0.95], axis=0)
    lo95, hi95 = np.quantile(v_star, [0.025, 0.975], axis=0)
    flagged = np.flatnonzero((lo95 > 1.0) | (hi95 < 1.0))
    return GaussianityReport(mean, lo90, hi90, lo95, hi95, flagged)


def report_to_json(report: GaussianityReport) -> str:
    return json.dumps(
        {
            "mean": [float(x) for x in report.mean],
            "lo90": [float(x) for x in report.lo90],
            "hi90": [float(x) for x in report.hi90],
            "lo95": [float(x) for x in report.lo95],
            "hi95": [float(x) for x in report.hi95],
            "flagged": [int(i) for i in report.flagged],
        },
        indent=1,
    )


def validate_fit_config(cfg: dict) -> dict:
    """Schema guard for the fit input configuration (model, observations,
    priors, mcmc sections); detailed assembly lives in the CLI."""
    if not isinstance(cfg, dict):
        raise ValueError("fit config must be a mapping")
    if cfg.get("schema") != FIT_SCHEMA:
        raise ValueError(f"fit config must declare schema = {FIT_SCHEMA!r}")
    for section in ("model", "mcmc"):
        if section not in cfg or not isinstance(cfg[section], dict):
            raise ValueError(f"fit config needs a {section!r} section")
    model = cfg["model"]
    if "variant" not in model:
        raise ValueError("model section needs a variant")
    if model["variant"] not in ("nig", "gal"):
        raise ValueError(f"unknown variant {model['variant']!r}")
    return cfg
