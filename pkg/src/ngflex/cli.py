"""Command-line front end for the package.

Subcommands cover path simulation, prior-rate calibration, checks of the
small-eta divergence expansion, posterior fitting, chain diagnostics, and
the desk-scale prior-comparison studies. Outputs are plot-ready CSVs and
JSON; every CSV is accompanied by a sidecar JSON holding the fully
resolved configuration, so any file can be traced back to the exact run
that produced it. All randomness flows from --seed (or the config seed),
making reruns bit-identical.

Exit codes: 0 on success, 2 for argument or configuration problems, and
3 when a fitted run fails the mixing gate (some split-Rhat at or above
the limit, 1.05 by default).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy import sparse

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .calibration import calibrate_eta_events, calibrate_mu, calibration_report
from .field import sample_field
from .inference import (
    McmcConfig,
    ObservationModel,
    PosteriorChains,
    chains_to_csv,
    fit,
    fit_summary_json,
    gaussianity_report,
    report_to_json,
    summarize,
    validate_fit_config,
)
from .noise import TAIL_CORRECTED, NoiseParams
from .operators import (
    Mesh1D,
    ar1_operator,
    diff_operator_1d,
    fem_matern_2d,
    projector,
    regular_triangulation,
)
from .priors import (
    PRIOR_PRESETS,
    kld_eta_taylor,
    kld_noise_numeric,
    load_prior_config,
    preset_prior_config,
)

CLI_SCHEMA = "ngflex-cli-1"
SIM_SCHEMA = "ngflex-sim-1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_MIXED = 3

_DIFF_KINDS_1D = ("OU", "CRW1", "CRW2", "Matern2")


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _load_config(path: str) -> dict:
    if path.endswith(".toml"):
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    if path.endswith(".json"):
        with open(path) as fh:
            return json.load(fh)
    raise ValueError(f"config file {path!r} must end in .json or .toml")


def _write_csv(path: str, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([cell if isinstance(cell, str) else _fmt(cell) for cell in row])


def _write_sidecar(csv_path: str, command: str, config: dict, outputs: list) -> str:
    payload = {
        "schema": CLI_SCHEMA,
        "command": command,
        "config": config,
        "outputs": outputs,
    }
    side = os.path.splitext(csv_path)[0] + ".json"
    with open(side, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=float)
        fh.write("\n")
    return side


def _ensure_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ------------------------------------------------------------------- simulate

def _build_sim_operator(model: dict):
    """Operator plus node coordinates (one or two columns) for a model block."""
    kind = str(model.get("kind", ""))
    if kind == "ar1":
        n = int(model["n"])
        op = ar1_operator(float(model.get("rho", 0.0)), n)
        return op, np.arange(n, dtype=float)[:, None]
    if kind == "matern2d":
        mesh = regular_triangulation(
            [float(b) for b in model["bounds"]], int(model["nx"]), int(model["ny"])
        )
        op = fem_matern_2d(float(model["kappa"]), int(model.get("alpha", 2)), mesh)
        return op, mesh.vertices
    matched = [k for k in _DIFF_KINDS_1D if k.lower() == kind.lower()]
    if not matched:
        raise ValueError(f"unknown model kind {kind!r}")
    kind = matched[0]
    if "nodes" in model:
        nodes = np.asarray(model["nodes"], dtype=float)
    else:
        n = int(model["n"])
        nodes = float(model.get("spacing", 1.0)) * np.arange(n)
    mesh = Mesh1D(nodes, boundary=model.get("boundary", "neumann"))
    op = diff_operator_1d(kind, mesh, model.get("kappa"))
    coords = nodes[op.meta["nodes_kept"]] if "nodes_kept" in op.meta else nodes
    return op, coords[:, None]


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    if cfg.get("schema") != SIM_SCHEMA:
        raise ValueError(f"simulation config must declare schema = {SIM_SCHEMA!r}")
    for section in ("model", "noise"):
        if section not in cfg or not isinstance(cfg[section], dict):
            raise ValueError(f"simulation config needs a {section!r} section")
    seed = int(cfg.get("seed", 0) if args.seed is None else args.seed)
    op, coords = _build_sim_operator(cfg["model"])
    nz = cfg["noise"]
    params = NoiseParams(
        nz.get("variant", "nig"),
        float(nz.get("sigma", 1.0)),
        float(nz.get("eta_star", 0.0)),
        float(nz.get("mu_star", 0.0)),
        parameterization=TAIL_CORRECTED,
    )
    s = sample_field(op, params, np.random.default_rng(seed))
    lam = op.d_matrix @ s.x

    out = _ensure_out(args)
    resolved = {"schema": SIM_SCHEMA, "seed": seed, "model": cfg["model"], "noise": nz}
    noise_path = os.path.join(out, "noise.csv")
    path_path = os.path.join(out, "path.csv")
    outputs = ["noise.csv", "path.csv"]
    _write_csv(
        noise_path,
        ["node", "h", "v", "lambda"],
        ((i, op.h[i], s.v[i], lam[i]) for i in range(op.n)),
    )
    loc_names = ["loc"] if coords.shape[1] == 1 else ["loc_x", "loc_y"]
    _write_csv(
        path_path,
        ["node"] + loc_names + ["x"],
        ((i, *coords[i], s.x[i]) for i in range(op.n)),
    )
    _write_sidecar(noise_path, "simulate", resolved, outputs)
    _write_sidecar(path_path, "simulate", resolved, outputs)
    print(f"simulate: {op.n} nodes -> {noise_path}, {path_path} (seed {seed})")
    return EXIT_OK


# ------------------------------------------------------------------ calibrate

def _alpha(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie strictly in (0, 1), got {text}")
    return value


def cmd_calibrate(args) -> int:
    if args.method in ("fast", "invert"):
        report = calibration_report(
            args.variant,
            args.model,
            args.kappa,
            args.alpha_eta,
            args.alpha_mu,
            method=args.method,
            threshold_sd=args.threshold_sd,
        )
    else:
        if args.target is None:
            raise ValueError(f"method {args.method!r} needs --target")
        h_vec = np.full(args.n, args.spacing)
        theta_eta, info = calibrate_eta_events(
            args.alpha_eta,
            args.target,
            args.variant,
            h_vec,
            statistic=args.method,
            threshold_sd=args.threshold_sd,
            full_output=True,
        )
        theta_mu = calibrate_mu(args.alpha_mu, args.variant)
        report = {
            "schema": "ngflex-calibration-1",
            "inputs": {
                "variant": args.variant,
                "statistic": args.method,
                "target": args.target,
                "n": args.n,
                "spacing": args.spacing,
                "alpha_eta": args.alpha_eta,
                "alpha_mu": args.alpha_mu,
                "threshold_sd": args.threshold_sd,
            },
            "method": info["method"],
            "outputs": {
                "theta_eta": theta_eta,
                "theta_mu": theta_mu,
                "eta_root": info["eta_root"],
            },
            "residuals": {"statistic": info["residual"], "gamma": 0.0},
        }
    out = _ensure_out(args)
    path = os.path.join(out, "calibration.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True, default=float)
        fh.write("\n")
    outs = report["outputs"]
    print(f"calibrate: theta_eta={outs['theta_eta']:.6g} theta_mu={outs['theta_mu']:.6g} -> {path}")
    return EXIT_OK


# ------------------------------------------------------------------ kld-check

def _parse_grid(text: str) -> np.ndarray:
    if ":" in text:
        lo, hi, count = text.split(":")
        return np.geomspace(float(lo), float(hi), int(count))
    values = np.array([float(tok) for tok in text.split(",") if tok.strip()])
    if values.size == 0:
        raise ValueError("empty eta grid")
    return values


def cmd_kld_check(args) -> int:
    grid = _parse_grid(args.eta_grid)
    if np.any(grid <= 0):
        raise ValueError("eta grid values must be positive")
    variants = ("nig", "gal") if args.variant == "both" else (args.variant,)
    rows = []
    slopes = {}
    for variant in variants:
        numeric = np.array(
            [kld_noise_numeric(variant, eta, args.mu, args.h) for eta in grid]
        )
        taylor = np.array([kld_eta_taylor(variant, eta, [args.h]) for eta in grid])
        rel = np.where(numeric > 0, (numeric - taylor) / numeric, 0.0)
        rows.extend(
            (variant, grid[i], args.mu, args.h, numeric[i], taylor[i], rel[i])
            for i in range(grid.size)
        )
        if grid.size >= 2 and np.all(numeric > 0):
            slopes[variant] = float(
                np.polyfit(np.log(grid), np.log(numeric), 1)[0]
            )
    out = _ensure_out(args)
    path = os.path.join(out, "kld.csv")
    _write_csv(
        path,
        ["variant", "eta", "mu", "h", "kld_numeric", "kld_taylor", "rel_error"],
        rows,
    )
    resolved = {
        "variant": args.variant,
        "mu": args.mu,
        "h": args.h,
        "eta_grid": [float(g) for g in grid],
        "seed": args.seed,
        "log_log_slope": slopes,
    }
    _write_sidecar(path, "kld-check", resolved, ["kld.csv"])
    slope_text = " ".join(f"{k}={v:.4f}" for k, v in slopes.items())
    print(f"kld-check: {len(rows)} rows -> {path}" + (f" (slope {slope_text})" if slopes else ""))
    return EXIT_OK


# ------------------------------------------------------------------------ fit

def _read_data_csv(path: str):
    with open(path, newline="") as fh:
        records = list(csv.DictReader(fh))
    if not records:
        raise ValueError(f"data file {path!r} is empty")
    cols = records[0].keys()
    if "y" not in cols:
        raise ValueError(f"data file {path!r} needs a 'y' column")
    y = np.array([float(r["y"]) for r in records])
    if "loc_x" in cols and "loc_y" in cols:
        locs = np.array([[float(r["loc_x"]), float(r["loc_y"])] for r in records])
    elif "loc" in cols:
        locs = np.array([float(r["loc"]) for r in records])
    else:
        locs = None
    return locs, y


def _observation_noise_sd(section: dict):
    """Fixed observation noise sd, or None when sigma_eps is sampled."""
    if section.get("sample", False):
        return None
    if "noise_sd" in section:
        return float(section["noise_sd"])
    if "noise_var" in section:
        return math.sqrt(float(section["noise_var"]))
    raise ValueError("observation section needs noise_sd, noise_var, or sample = true")


def _assemble_fit(locs, y, cfg: dict):
    """Build the ObservationModel and the sampled-parameter tuple."""
    model = cfg["model"]
    kind = str(model.get("kind", ""))
    sample_structural = bool(model.get("sample_structural", False))
    n = y.size

    if kind == "ar1":
        structural = "rho" if sample_structural else "none"
        if sample_structural:
            builder = lambda r: ar1_operator(r, n)
        else:
            builder = ar1_operator(float(model["rho"]), n)
        a_matrix = sparse.eye_array(n, format="csr")
        struct_init = model.get("rho")
    elif kind == "matern2d":
        if locs is None or locs.ndim != 2:
            raise ValueError("matern2d fits need loc_x and loc_y data columns")
        mesh = regular_triangulation(
            [float(b) for b in model["bounds"]], int(model["nx"]), int(model["ny"])
        )
        alpha = int(model.get("alpha", 2))
        structural = "kappa" if sample_structural else "none"
        if sample_structural:
            builder = lambda k: fem_matern_2d(k, alpha, mesh)
        else:
            builder = fem_matern_2d(float(model["kappa"]), alpha, mesh)
        a_matrix = projector(mesh, locs)
        struct_init = model.get("kappa")
    else:
        matched = [k for k in _DIFF_KINDS_1D if k.lower() == kind.lower()]
        if not matched:
            raise ValueError(f"unknown model kind {kind!r}")
        kind = matched[0]
        if locs is None or locs.ndim != 1:
            raise ValueError(f"{kind} fits need a 'loc' data column")
        if "mesh_nodes" in model:
            nodes = np.asarray(model["mesh_nodes"], dtype=float)
        elif "n_mesh" in model:
            nodes = np.linspace(locs.min(), locs.max(), int(model["n_mesh"]))
        else:
            nodes = np.unique(locs)
        mesh = Mesh1D(nodes)
        has_kappa = kind in ("OU", "Matern2")
        structural = "kappa" if (sample_structural and has_kappa) else "none"
        if structural == "kappa":
            builder = lambda k: diff_operator_1d(kind, mesh, k)
        else:
            builder = diff_operator_1d(kind, mesh, model.get("kappa"))
        a_matrix = projector(mesh, locs)
        struct_init = model.get("kappa")

    noise_sd = _observation_noise_sd(cfg.get("observation", {}))
    obs = ObservationModel(y, a_matrix, builder, structural=structural, noise_sd=noise_sd)

    sampled = ["sigma_x", "eta_star", "mu_star"]
    if structural != "none":
        sampled.append("struct")
    if noise_sd is None:
        sampled.append("sigma_eps")
    return obs, tuple(sampled), struct_init


def _mcmc_config(cfg: dict, sampled: tuple, struct_init, seed_override) -> McmcConfig:
    m = dict(cfg.get("mcmc", {}))
    init = dict(m.get("init", {}))
    if "struct" in sampled and "struct" not in init and struct_init is not None:
        init["struct"] = float(struct_init)
    return McmcConfig(
        chains=int(m.get("chains", 2)),
        warmup=int(m.get("warmup", 500)),
        samples=int(m.get("samples", 500)),
        v_thin=int(m.get("v_thin", 10)),
        thin=int(m.get("thin", 1)),
        mh_steps=int(m.get("mh_steps", 1)),
        seed=int(m.get("seed", 0) if seed_override is None else seed_override),
        sampled=tuple(m.get("sampled", sampled)),
        target=m.get("target", "collapsed"),
        init=init,
        init_scales=dict(m.get("init_scales", {})),
    )


def _resolve_priors(cfg: dict) -> dict:
    section = cfg.get("priors", "pc2")
    if isinstance(section, str):
        return preset_prior_config(section)
    return load_prior_config(section)


def _vdraws_rows(chains: PosteriorChains):
    n_chain, kept, n = chains.v_draws.shape
    for c in range(n_chain):
        for s in range(kept):
            yield (c, s, *chains.v_draws[c, s])


def _mixing_gate(chains: PosteriorChains, limit: float):
    stats = summarize(chains)
    bad = {
        name: block["rhat"]
        for name, block in stats.items()
        if math.isfinite(block["rhat"]) and block["rhat"] >= limit
    }
    return stats, bad


def _write_fit_outputs(out: str, chains: PosteriorChains, resolved: dict) -> list:
    report = gaussianity_report(chains)
    chains_path = os.path.join(out, "chains.csv")
    vdraws_path = os.path.join(out, "vdraws.csv")
    outputs = ["chains.csv", "vdraws.csv", "summary.json", "report.json"]
    with open(chains_path, "w") as fh:
        fh.write(chains_to_csv(chains))
    n = chains.h.size
    _write_csv(
        vdraws_path,
        ["chain", "sweep"] + [f"v{i}" for i in range(n)],
        _vdraws_rows(chains),
    )
    with open(os.path.join(out, "summary.json"), "w") as fh:
        fh.write(fit_summary_json(chains, report))
        fh.write("\n")
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report_to_json(report))
        fh.write("\n")
    side_payload = dict(resolved)
    side_payload["h"] = [float(v) for v in chains.h]
    _write_sidecar(chains_path, "fit", side_payload, outputs)
    _write_sidecar(vdraws_path, "fit", side_payload, outputs)
    return outputs


def cmd_fit(args) -> int:
    cfg = validate_fit_config(_load_config(args.config))
    locs, y = _read_data_csv(args.data)
    obs, sampled, struct_init = _assemble_fit(locs, y, cfg)
    mcfg = _mcmc_config(cfg, sampled, struct_init, args.seed)
    prior_config = _resolve_priors(cfg)
    variant = cfg["model"]["variant"]

    chains = fit(obs, variant, prior_config, mcfg)
    out = _ensure_out(args)
    resolved = {"fit_config": cfg, "resolved_mcmc": chains.config, "data": args.data}
    _write_fit_outputs(out, chains, resolved)

    stats, bad = _mixing_gate(chains, args.rhat_limit)
    for name, block in stats.items():
        print(
            f"{name}: mean={block['mean']:.4g} sd={block['sd']:.4g} "
            f"rhat={block['rhat']:.3f} ess={block['ess']:.0f}"
        )
    if bad:
        worst = ", ".join(f"{k}={v:.3f}" for k, v in bad.items())
        print(f"fit: not mixed (rhat limit {args.rhat_limit}): {worst}", file=sys.stderr)
        return EXIT_NOT_MIXED
    print(f"fit: done -> {out}")
    return EXIT_OK


# ------------------------------------------------------------------- diagnose

def _read_chain_csv(path: str) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(cell) for cell in row] for row in reader]
    arr = np.asarray(rows)
    names = header[2:]
    n_chain = int(arr[:, 0].max()) + 1
    draws = {}
    for j, name in enumerate(names):
        draws[name] = np.stack(
            [arr[arr[:, 0] == c][:, 2 + j] for c in range(n_chain)]
        )
    return draws


def _read_vdraws_csv(path: str):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [[float(cell) for cell in row] for row in reader]
    arr = np.asarray(rows)
    n_chain = int(arr[:, 0].max()) + 1
    kept = int(arr[:, 1].max()) + 1
    return arr[:, 2:].reshape(n_chain, kept, arr.shape[1] - 2)


def cmd_diagnose(args) -> int:
    chains_path = os.path.join(args.fit_dir, "chains.csv")
    vdraws_path = os.path.join(args.fit_dir, "vdraws.csv")
    sidecar_path = os.path.join(args.fit_dir, "vdraws.json")
    for path in (chains_path, vdraws_path, sidecar_path):
        if not os.path.exists(path):
            raise ValueError(f"missing fit output {path!r}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    draws = _read_chain_csv(chains_path)
    v_draws = _read_vdraws_csv(vdraws_path)
    h = np.asarray(sidecar["config"]["h"], dtype=float)
    chains = PosteriorChains(draws, v_draws, sidecar["config"], h)

    stats, bad = _mixing_gate(chains, args.rhat_limit)
    report = gaussianity_report(chains)
    for name, block in stats.items():
        print(
            f"{name}: mean={block['mean']:.4g} rhat={block['rhat']:.3f} "
            f"ess={block['ess']:.0f}"
        )
    flagged = [int(i) for i in report.flagged]
    print(f"flagged mixing nodes: {flagged if flagged else 'none'}")

    payload = {
        "schema": CLI_SCHEMA,
        "command": "diagnose",
        "rhat_limit": args.rhat_limit,
        "params": stats,
        "flagged": flagged,
        "mixed": not bad,
    }
    path = os.path.join(args.fit_dir, "diagnose.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=float)
        fh.write("\n")
    if bad:
        worst = ", ".join(f"{k}={v:.3f}" for k, v in bad.items())
        print(f"diagnose: not mixed: {worst}", file=sys.stderr)
        return EXIT_NOT_MIXED
    return EXIT_OK


# ---------------------------------------------------------------------- study

_SET1_TRUTH = {1: (0.0, 0.0), 2: (2.0, 0.0), 3: (5.0, 1.0)}
_SET2_JUMP = {1: 0.0, 2: 25.0, 3: 50.0}


def _study_task(task: dict) -> dict:
    """One replication under one prior; self-contained for process pools."""
    n = task["n"]
    mesh = Mesh1D(np.arange(n, dtype=float))
    op = diff_operator_1d("Matern2", mesh, task["kappa"])
    data_rng = np.random.default_rng(
        np.random.SeedSequence([task["seed"], task["rep"], 977])
    )
    truth = NoiseParams(
        "nig", 1.0, task["truth_eta"], task["truth_mu"], parameterization=TAIL_CORRECTED
    )
    x = sample_field(op, truth, data_rng).x
    if task["jump"] > 0.0:
        x = x.copy()
        x[n // 3] += task["jump"]
        x[(2 * n) // 3] += task["jump"]
    y = x + task["obs_sd"] * data_rng.standard_normal(n)

    obs = ObservationModel(
        y, sparse.eye_array(n, format="csr"), op, structural="none", noise_sd=task["obs_sd"]
    )
    mcfg = McmcConfig(
        chains=task["chains"],
        warmup=task["warmup"],
        samples=task["samples"],
        v_thin=task["v_thin"],
        thin=task["thin"],
        mh_steps=task["mh_steps"],
        seed=task["fit_seed"],
    )
    chains = fit(obs, task["variant"], preset_prior_config(task["prior"]), mcfg)
    stats = summarize(chains)
    eta, mu = stats["eta_star"], stats["mu_star"]
    return {
        "set": task["set"],
        "scenario": task["scenario"],
        "prior": task["prior"],
        "rep": task["rep"],
        "n": n,
        "fit_seed": task["fit_seed"],
        "eta_mean": eta["mean"],
        "eta_q05": eta["q05"],
        "eta_q50": eta["q50"],
        "eta_q95": eta["q95"],
        "eta_width90": eta["width90"],
        "mu_mean": mu["mean"],
        "mu_q05": mu["q05"],
        "mu_q50": mu["q50"],
        "mu_q95": mu["q95"],
        "mu_width90": mu["width90"],
        "sigma_x_mean": stats["sigma_x"]["mean"],
        "max_rhat": max(block["rhat"] for block in stats.values()),
        "min_ess": min(block["ess"] for block in stats.values()),
    }


_STUDY_COLUMNS = [
    "set", "scenario", "prior", "rep", "n", "fit_seed",
    "eta_mean", "eta_q05", "eta_q50", "eta_q95", "eta_width90",
    "mu_mean", "mu_q05", "mu_q50", "mu_q95", "mu_width90",
    "sigma_x_mean", "max_rhat", "min_ess",
]


def cmd_study(args) -> int:
    priors = [p.strip() for p in args.priors.split(",") if p.strip()]
    for name in priors:
        if name not in PRIOR_PRESETS:
            raise ValueError(f"unknown prior preset {name!r}; choose from {sorted(PRIOR_PRESETS)}")
    if args.set == 1:
        truth_eta, truth_mu = _SET1_TRUTH[args.scenario]
        jump = 0.0
    else:
        truth_eta, truth_mu = 0.0, 0.0
        jump = _SET2_JUMP[args.scenario]
    obs_sd = args.obs_noise if args.obs_noise_is_sd else math.sqrt(args.obs_noise)

    tasks = []
    for prior_idx, prior in enumerate(priors):
        for rep in range(args.reps):
            fit_seed = int(
                np.random.SeedSequence([args.seed, rep, prior_idx, 31]).generate_state(1)[0]
            )
            tasks.append(
                {
                    "set": args.set,
                    "scenario": args.scenario,
                    "prior": prior,
                    "rep": rep,
                    "n": args.n,
                    "kappa": args.kappa,
                    "variant": args.variant,
                    "truth_eta": truth_eta,
                    "truth_mu": truth_mu,
                    "jump": jump,
                    "obs_sd": obs_sd,
                    "seed": args.seed,
                    "fit_seed": fit_seed,
                    "chains": args.chains,
                    "warmup": args.warmup,
                    "samples": args.samples,
                    "v_thin": args.v_thin,
                    "thin": args.thin,
                    "mh_steps": args.mh_steps,
                }
            )

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_study_task, tasks))
    else:
        results = [_study_task(task) for task in tasks]
    # merge order is deterministic regardless of worker scheduling
    results.sort(key=lambda row: (priors.index(row["prior"]), row["rep"]))

    out = _ensure_out(args)
    resolved = {
        "set": args.set,
        "scenario": args.scenario,
        "priors": priors,
        "reps": args.reps,
        "n": args.n,
        "kappa": args.kappa,
        "variant": args.variant,
        "truth": {"eta_star": truth_eta, "mu_star": truth_mu, "jump": jump},
        "obs_noise": args.obs_noise,
        "obs_noise_is_sd": args.obs_noise_is_sd,
        "obs_sd": obs_sd,
        "chains": args.chains,
        "warmup": args.warmup,
        "samples": args.samples,
        "thin": args.thin,
        "mh_steps": args.mh_steps,
        "v_thin": args.v_thin,
        "seed": args.seed,
        "jobs": args.jobs,
    }
    study_path = os.path.join(out, "study.csv")
    _write_csv(
        study_path,
        _STUDY_COLUMNS,
        ([row[c] for c in _STUDY_COLUMNS] for row in results),
    )

    agg_rows = []
    for prior in priors:
        rows = [r for r in results if r["prior"] == prior]
        agg_rows.append(
            (
                prior,
                len(rows),
                np.median([r["eta_mean"] for r in rows]),
                np.median([r["eta_width90"] for r in rows]),
                np.median([r["mu_mean"] for r in rows]),
                np.median([r["mu_width90"] for r in rows]),
                max(r["max_rhat"] for r in rows),
            )
        )
    agg_path = os.path.join(out, "aggregate.csv")
    _write_csv(
        agg_path,
        ["prior", "reps", "eta_mean_median", "eta_width90_median",
         "mu_mean_median", "mu_width90_median", "rhat_worst"],
        ((p, str(k), *vals) for p, k, *vals in agg_rows),
    )
    _write_sidecar(study_path, "study", resolved, ["study.csv", "aggregate.csv"])
    _write_sidecar(agg_path, "study", resolved, ["study.csv", "aggregate.csv"])
    for row in agg_rows:
        print(
            f"study: {row[0]}: median eta mean {row[2]:.4g}, "
            f"median eta width90 {row[3]:.4g} ({row[1]} reps)"
        )
    print(f"study: set {args.set} scenario {args.scenario} -> {study_path}")
    return EXIT_OK


# ----------------------------------------------------------------- entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ngflex",
        description="Simulation, calibration, and MCMC tools for latent fields "
        "driven by normal inverse Gaussian or generalized asymmetric Laplace noise.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw one field and its noise to CSV")
    p.add_argument("config", help="TOML or JSON simulation config")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="turn tail probabilities into prior rates")
    p.add_argument("--variant", choices=("nig", "gal"), required=True)
    p.add_argument("--model", choices=("OU_d1", "Matern2_d1", "Matern2_d2"),
                   default="Matern2_d1")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--alpha-eta", type=_alpha, required=True,
                   help="tail probability for the eta_star prior, in (0, 1)")
    p.add_argument("--alpha-mu", type=_alpha, required=True,
                   help="tail probability for the mu_star prior, in (0, 1)")
    p.add_argument("--method", choices=("fast", "invert", "q1", "q2"), default="fast")
    p.add_argument("--threshold-sd", type=float, default=3.0)
    p.add_argument("--target", type=float, default=None,
                   help="event-count or no-event-probability target for q1/q2")
    p.add_argument("--n", type=int, default=100, help="node count for q1/q2")
    p.add_argument("--spacing", type=float, default=1.0, help="node weight for q1/q2")
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("kld-check", help="tabulate numeric vs expanded divergence")
    p.add_argument("--variant", choices=("nig", "gal", "both"), default="both")
    p.add_argument("--eta-grid", default="1e-3:1e-2:9",
                   help="comma list or lo:hi:count geometric grid")
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_kld_check)

    p = sub.add_parser("fit", help="run the MCMC sampler on a data CSV")
    p.add_argument("data", help="CSV with y and optional loc / loc_x, loc_y columns")
    p.add_argument("--config", required=True, help="TOML or JSON fit config")
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--rhat-limit", type=float, default=1.05)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", help="recompute diagnostics from fit outputs")
    p.add_argument("fit_dir", help="directory written by the fit subcommand")
    p.add_argument("--rhat-limit", type=float, default=1.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("study", help="desk-scale prior comparison study")
    p.add_argument("--set", type=int, choices=(1, 2), required=True)
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--priors", default="pc1,pc2,ig1,ig2,uniform",
                   help="comma-separated preset names")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--kappa", type=float, default=0.2)
    p.add_argument("--variant", choices=("nig", "gal"), default="nig")
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--warmup", type=int, default=500)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--mh-steps", type=int, default=1)
    p.add_argument("--v-thin", type=int, default=10)
    p.add_argument("--obs-noise", type=float, default=0.7,
                   help="observation noise level; variance unless --obs-noise-is-sd")
    p.add_argument("--obs-noise-is-sd", action="store_true",
                   help="read --obs-noise as a standard deviation")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_study)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"ngflex {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
