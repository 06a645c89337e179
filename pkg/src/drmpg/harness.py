"""Experiment runner: training comparisons, MSE scaling study, oracle suite.

Every run writes its artifacts into an output directory together with the
exact configuration and seed that produced them. CSV files are written only
after a run finishes, so an aborted run leaves no partial tables behind.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .distortion import DistortionFn, all_families
from .drm import drm_empirical, edf
from .estimators import grad_offpolicy, grad_onpolicy
from .mdp import (EpisodicMdp, SoftmaxPolicy, chain_mdp, feasible_return_bound,
                  frozen_lake, rollout_batch, tight_return_bound)
from .optimizer import TrainConfig, TrainTrace, train
from . import oracle

log = logging.getLogger(__name__)

SCHEMAS = {
    "train.csv": ("drmpg.train/1", ("iteration", "mean_return", "batch_drm", "grad_norm")),
    "timing.csv": ("drmpg.timing/1", ("iteration", "wall_ms")),
    "eval.csv": ("drmpg.eval/1", ("iterate", "index", "episodes", "mean_return", "empirical_drm")),
    "plot_data.csv": ("drmpg.plot/1", ("iteration", "smoothed_return", "smoothed_drm")),
    "mse.csv": ("drmpg.mse/1", ("m", "empirical_mse", "lemma_bound", "ratio")),
}

DEFAULTS: dict[str, Any] = {
    "experiment": "train",
    "env": {
        "builtin": "frozenlake",
        "layout": None,
        "mdp_file": None,
        "slip": 0.9,
        "step_reward": -0.25,
        "hole_reward": -10.0,
        "goal_reward": 10.0,
        "cap": 100,
    },
    "train": {
        "N": 200,
        "m": None,
        "alpha": None,
        "gamma": 0.99,
        "distortion": {"family": "logarithmic", "r": 1.0},
        "M_r": "feasible",
        "algorithms": ["onpolicy"],
        "behavior": "uniform",
        "init": "zeros",
    },
    "seeds": [0],
    "repetitions": 1,
    "workers": 1,
    "eval_episodes": 1000,
    "smoothing": 50,
    "mse": {
        "ladder": [32, 64, 128, 256, 512, 1024],
        "batches": 500,
        "estimator": "both",
        "theta_scale": 0.5,
        "behavior": "uniform",
        "gamma": 0.9,
        "distortion": {"family": "logarithmic", "r": 1.0},
    },
    "oracle": {
        "gamma": 0.9,
        "n_theta": 10,
        "fd_step": 1e-5,
        "fd_rtol": 1e-5,
        "lipschitz_pairs": 100,
        "theta_box": 2.0,
        "mc_episodes": 100000,
        "mc_seeds": 1,
    },
}

PRESETS: dict[str, dict[str, Any]] = {
    # Frozen Lake experiment: N = 10000, m = sqrt(N), logarithmic distortion.
    # The step size follows the convergence corollary, alpha = 1/sqrt(N).
    "frozenlake-paper": {
        "experiment": "train",
        "env": {"builtin": "frozenlake"},
        "train": {
            "N": 10000, "m": None, "alpha": None, "gamma": 0.99,
            "distortion": {"family": "logarithmic", "r": 1.0},
            "M_r": "feasible", "algorithms": ["onpolicy", "reinforce"],
        },
    },
    "chain-oracle": {
        "experiment": "oracle-suite",
        "env": {"builtin": "chain2"},
    },
    "chain-mse": {
        "experiment": "mse-study",
        "env": {"builtin": "chain2"},
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the named preset, then the YAML file, then ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    file_cfg: dict = {}
    if path is not None:
        file_cfg = yaml.safe_load(Path(path).read_text()) or {}
    preset = preset or file_cfg.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = deep_merge(cfg, PRESETS[preset])
        cfg["preset"] = preset
    cfg = deep_merge(cfg, file_cfg)
    cfg = deep_merge(cfg, overrides or {})
    if int(cfg["repetitions"]) < 1:
        raise ValueError("repetitions must be >= 1")
    return cfg


def build_env(env: dict) -> EpisodicMdp:
    if env.get("mdp_file"):
        return EpisodicMdp.load(env["mdp_file"])
    name = env.get("builtin", "frozenlake")
    if name == "chain2":
        return chain_mdp()
    if name == "frozenlake":
        layout = Path(env["layout"]).read_text() if env.get("layout") else None
        return frozen_lake(layout, slip=env["slip"], step_reward=env["step_reward"],
                           hole_reward=env["hole_reward"], goal_reward=env["goal_reward"],
                           cap=env["cap"])
    raise ValueError(f"unknown builtin environment {name!r}")


def resolve_return_bound(value, mdp: EpisodicMdp, gamma: float) -> float:
    """``M_r`` from a number, ``"tight"`` (cap-aware geometric) or ``"feasible"`` (exact)."""
    if isinstance(value, (int, float)):
        return float(value)
    if value == "tight":
        return float(tight_return_bound(mdp, gamma))
    if value == "feasible":
        return float(feasible_return_bound(mdp, gamma))
    raise ValueError(f"M_r must be a number, 'tight' or 'feasible', got {value!r}")


def named_policy(value, mdp: EpisodicMdp, seed: int = 0) -> SoftmaxPolicy:
    if value in (None, "zeros", "uniform"):
        return SoftmaxPolicy.for_mdp(mdp)
    if isinstance(value, str) and value.startswith("random"):
        scale = float(value.split(":", 1)[1]) if ":" in value else 1.0
        rng = np.random.default_rng(seed)
        return SoftmaxPolicy.for_mdp(mdp, rng.normal(0.0, scale, mdp.n_params))
    if isinstance(value, (list, tuple)):
        return SoftmaxPolicy.for_mdp(mdp, np.asarray(value, dtype=float))
    return SoftmaxPolicy.load(value)


# -- output helpers ----------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def write_csv(path: Path, columns, rows) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    os.replace(tmp, path)


def write_manifest(out: Path, cfg: dict, files: list[str], extra: dict | None = None) -> None:
    manifest = {
        "config": cfg,
        "schemas": {f: SCHEMAS[f][0] for f in files if f in SCHEMAS},
        "files": sorted(files),
    }
    if extra:
        manifest.update(extra)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float))


def smooth(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average; the first points average what is available."""
    window = max(1, int(window))
    c = np.cumsum(np.insert(np.asarray(x, dtype=float), 0, 0.0))
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


# -- train -------------------------------------------------------------------


def train_config(cfg: dict, mdp: EpisodicMdp, mode: str, seed: int) -> TrainConfig:
    t = cfg["train"]
    g = DistortionFn.from_dict(t["distortion"])
    behavior = None
    if mode == "offpolicy":
        behavior = named_policy(t["behavior"], mdp, seed).flat
    return TrainConfig(N=t["N"], m=t["m"], alpha=t["alpha"], gamma=t["gamma"], g=g,
                       M_r=resolve_return_bound(t["M_r"], mdp, t["gamma"]),
                       seed=seed, mode=mode, behavior_theta=behavior)


def evaluate_policy(mdp: EpisodicMdp, theta, g: DistortionFn, gamma: float, episodes: int,
                    seed) -> tuple[float, float]:
    batch = rollout_batch(mdp, SoftmaxPolicy.for_mdp(mdp, theta), episodes, gamma, seed)
    return float(batch.returns.mean()), drm_empirical(batch.returns, g)


def _train_one(cfg: dict, mode: str, seed: int, out: str) -> dict:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    mdp = build_env(cfg["env"])
    tcfg = train_config(cfg, mdp, mode, seed)
    init = named_policy(cfg["train"].get("init", "zeros"), mdp, seed).flat
    trace = train(mdp, init, tcfg)
    write_train_artifacts(out_dir, cfg, mdp, trace)
    return {"mode": mode, "seed": seed, "out": str(out_dir)}


def write_train_artifacts(out: Path, cfg: dict, mdp: EpisodicMdp, trace: TrainTrace) -> None:
    tcfg = trace.config
    rec = trace.records
    N = trace.N
    write_csv(out / "train.csv", SCHEMAS["train.csv"][1],
              zip(rec["iteration"].astype(int), rec["mean_return"], rec["batch_drm"], rec["grad_norm"]))
    write_csv(out / "timing.csv", SCHEMAS["timing.csv"][1],
              zip(range(N), np.round(trace.wall_ms, 3)))
    window = cfg.get("smoothing", 50)
    write_csv(out / "plot_data.csv", SCHEMAS["plot_data.csv"][1],
              zip(range(N), smooth(rec["mean_return"], window), smooth(rec["batch_drm"], window)))
    eval_seed = np.random.SeedSequence(tcfg.seed).spawn(3)[2]
    n_eval = int(cfg.get("eval_episodes", 1000))
    rows = []
    for name, idx in (("theta_0", 0), ("theta_R", trace.R_index), ("theta_N", N)):
        # same evaluation stream for every iterate: differences reflect the policy only
        mean, drm = evaluate_policy(mdp, trace.thetas[idx], tcfg.g, tcfg.gamma, n_eval, eval_seed)
        rows.append((name, idx, n_eval, mean, drm))
    write_csv(out / "eval.csv", SCHEMAS["eval.csv"][1], rows)
    shape = (mdp.n_states, mdp.n_actions)
    for name, idx in (("theta_0", 0), ("theta_R", trace.R_index), ("theta_N", N)):
        SoftmaxPolicy(trace.thetas[idx].reshape(shape)).save(out / f"{name}.txt")
    run_cfg = copy.deepcopy(cfg)
    run_cfg["run"] = tcfg.to_dict()
    write_manifest(out, run_cfg, ["train.csv", "timing.csv", "plot_data.csv", "eval.csv"],
                   {"R_index": trace.R_index})


def _run_dir(out: Path, mode: str, seed: int, rep: int, reps: int) -> Path:
    d = out / mode / f"seed_{seed}"
    return d / f"rep_{rep}" if reps > 1 else d


def run_train(cfg: dict, out) -> list[dict]:
    """Train every configured algorithm for every seed and repetition."""
    out = Path(out)
    jobs = []
    for mode in cfg["train"]["algorithms"]:
        for seed in cfg["seeds"]:
            for rep in range(int(cfg["repetitions"])):
                jobs.append((mode, int(seed), str(_run_dir(out, mode, int(seed), rep,
                                                          int(cfg["repetitions"])))))
    workers = int(cfg.get("workers", 1))
    args = [(cfg, *j) for j in jobs]
    if workers <= 1 or len(jobs) <= 1:
        results = [_train_job(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_job, args))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))
    return results


def _train_job(args):
    cfg, mode, seed, out = args
    return _train_one(cfg, mode, seed, out)


# -- MSE study ---------------------------------------------------------------


def mse_study(mdp: EpisodicMdp, theta: SoftmaxPolicy, g: DistortionFn, gamma: float,
              ladder, batches: int, seed: int, estimator: str = "onpolicy",
              behavior: SoftmaxPolicy | None = None,
              atlas: oracle.EpisodeAtlas | None = None) -> list[dict]:
    """Empirical MSE of a gradient estimator against the exact gradient.

    Returns one row per batch size with the empirical MSE, the theoretical
    bound, and their ratio.
    """
    atlas = oracle.enumerate_episodes(mdp, gamma) if atlas is None else atlas
    truth = oracle.exact_grad(atlas, theta, g)
    if estimator == "onpolicy":
        consts = oracle.bound_constants_for(mdp, g, gamma, atlas=atlas)
        bound, sampler, est = consts.mse_bound_onpolicy, theta, grad_onpolicy
    elif estimator == "offpolicy":
        behavior = SoftmaxPolicy.for_mdp(mdp) if behavior is None else behavior
        consts = oracle.bound_constants_for(mdp, g, gamma, behavior=behavior, target=theta,
                                            atlas=atlas)
        bound, sampler, est = consts.mse_bound_offpolicy, behavior, grad_offpolicy
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    rows = []
    for m in ladder:
        rng = np.random.default_rng(np.random.SeedSequence([seed, int(m)]))
        err = np.empty(batches)
        for b in range(batches):
            batch = rollout_batch(mdp, sampler, int(m), gamma, rng, target=theta)
            err[b] = np.sum((est(batch, g, consts.M_r).grad - truth) ** 2)
        mse = float(err.mean())
        rows.append({"m": int(m), "empirical_mse": mse, "lemma_bound": bound(int(m)),
                     "ratio": mse / bound(int(m)), "stderr": float(err.std(ddof=1) / math.sqrt(batches))})
    return rows


def scaling_ratios(rows: list[dict], factor: int = 4) -> dict[int, float]:
    """``mse(m) / mse(factor * m)`` for every pair present in ``rows``."""
    by_m = {r["m"]: r["empirical_mse"] for r in rows}
    return {m: by_m[m] / by_m[factor * m] for m in by_m if factor * m in by_m}


def run_mse_study(cfg: dict, out) -> dict[str, list[dict]]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    mc = cfg["mse"]
    mdp = build_env(cfg["env"])
    seed = int(cfg["seeds"][0])
    gamma = float(mc["gamma"])
    g = DistortionFn.from_dict(mc["distortion"])
    theta = named_policy(f"random:{mc['theta_scale']}", mdp, seed)
    behavior = named_policy(mc["behavior"], mdp, seed + 1)
    atlas = oracle.enumerate_episodes(mdp, gamma)
    which = ["onpolicy", "offpolicy"] if mc["estimator"] == "both" else [mc["estimator"]]
    results = {}
    for est in which:
        rows = mse_study(mdp, theta, g, gamma, mc["ladder"], int(mc["batches"]), seed, est,
                         behavior, atlas)
        results[est] = rows
        name = "mse.csv" if est == which[0] else f"mse_{est}.csv"
        write_csv(out / name, SCHEMAS["mse.csv"][1],
                  [(r["m"], r["empirical_mse"], r["lemma_bound"], r["ratio"]) for r in rows])
    files = ["mse.csv"] + [f"mse_{e}.csv" for e in which[1:]]
    summary = {est: {"scaling_ratio_x4": scaling_ratios(rows),
                     "all_below_bound": all(r["empirical_mse"] <= r["lemma_bound"] for r in rows)}
               for est, rows in results.items()}
    write_manifest(out, cfg, files, {"estimators": which, "summary": summary})
    return results


# -- oracle suite ------------------------------------------------------------


def _check(name: str, passed: bool, **details) -> dict:
    return {"check": name, "passed": bool(passed), **details}


def run_oracle_suite(cfg: dict, out=None, exact_grad_fn=None) -> dict:
    """Run the oracle invariants on the configured small MDP.

    ``exact_grad_fn`` replaces :func:`drmpg.oracle.exact_grad`; it exists so a
    deliberately broken gradient can be shown to fail the suite.
    """
    oc = cfg["oracle"]
    exact_grad_fn = exact_grad_fn or oracle.exact_grad
    mdp = build_env(cfg["env"]) if cfg["env"].get("builtin") != "frozenlake" else chain_mdp()
    gamma = float(oc["gamma"])
    seed = int(cfg["seeds"][0])
    rng = np.random.default_rng(seed)
    atlas = oracle.enumerate_episodes(mdp, gamma)
    checks = []

    rand_policy = lambda: SoftmaxPolicy.for_mdp(mdp, rng.normal(0.0, 1.0, mdp.n_params))
    masses = [float(atlas.probs(rand_policy()).sum()) for _ in range(5)]
    checks.append(_check("atlas_normalization", all(abs(x - 1) <= 1e-10 for x in masses),
                         n_episodes=len(atlas), masses=masses))

    worst, failures = 0.0, []
    for g in all_families():
        for _ in range(int(oc["n_theta"])):
            pol = rand_policy()
            e = exact_grad_fn(atlas, pol, g)
            f = oracle.finite_diff_grad(atlas, pol, g, float(oc["fd_step"]))
            rel = float(np.max(np.abs(e - f)) / max(np.max(np.abs(f)), 1e-12))
            worst = max(worst, rel)
            if rel > float(oc["fd_rtol"]):
                failures.append({"distortion": str(g), "theta": pol.flat.tolist(), "rel_err": rel})
    checks.append(_check("gradient_vs_finite_differences", not failures,
                         max_rel_err=worst, violations=failures[:5]))

    cdf_fail = []
    for _ in range(5):
        target, behavior = rand_policy(), rand_policy()
        xs = np.unique(atlas.returns)
        diff = np.abs(oracle.offpolicy_cdf(atlas, target, behavior, xs)
                      - oracle.exact_cdf(atlas, target, xs))
        if np.max(diff) > 1e-10:
            cdf_fail.append({"max_diff": float(np.max(diff))})
    checks.append(_check("offpolicy_cdf_identity", not cdf_fail, violations=cdf_fail))

    grid = np.linspace(atlas.returns.min() - 1, atlas.returns.max() + 1, 200)
    F = oracle.exact_cdf(atlas, rand_policy(), grid)
    checks.append(_check("cdf_monotone", bool(np.all(np.diff(F) >= -1e-15)
                                              and F.min() >= 0 and F.max() <= 1 + 1e-12)))

    g = DistortionFn("logarithmic", 1.0)
    consts = oracle.bound_constants_for(mdp, g, gamma, atlas=atlas)
    box = float(oc["theta_box"])
    lip_fail, worst_ratio = [], 0.0
    for _ in range(int(oc["lipschitz_pairs"])):
        t1 = rng.uniform(-box, box, mdp.n_params)
        t2 = rng.uniform(-box, box, mdp.n_params)
        g1 = exact_grad_fn(atlas, SoftmaxPolicy.for_mdp(mdp, t1), g)
        g2 = exact_grad_fn(atlas, SoftmaxPolicy.for_mdp(mdp, t2), g)
        ratio = float(np.linalg.norm(g1 - g2) / np.linalg.norm(t1 - t2))
        worst_ratio = max(worst_ratio, ratio)
        if ratio > consts.L_rho_prime:
            lip_fail.append({"theta1": t1.tolist(), "theta2": t2.tolist(), "ratio": ratio})
    checks.append(_check("smoothness_bound", not lip_fail, max_ratio=worst_ratio,
                         L_rho_prime=consts.L_rho_prime, violations=lip_fail[:5]))

    pol = rand_policy()
    xs = np.unique(atlas.returns)
    exact = oracle.exact_cdf(atlas, pol, xs)
    m = int(oc["mc_episodes"])
    sup = []
    for k in range(int(oc["mc_seeds"])):
        batch = rollout_batch(mdp, pol, m, gamma, np.random.SeedSequence([seed, 7, k]))
        sup.append(float(np.max(np.abs(edf(batch.returns, xs) - exact))))
    checks.append(_check("edf_consistency", all(s <= 3 / math.sqrt(m) for s in sup),
                         sup_errors=sup, threshold=3 / math.sqrt(m)))

    report = {
        "passed": all(c["passed"] for c in checks),
        "mdp": mdp.name,
        "gamma": gamma,
        "seed": seed,
        "bound_constants": consts.to_dict(),
        "checks": checks,
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "oracle_report.json").write_text(json.dumps(report, indent=2, default=float))
        write_manifest(out, cfg, ["oracle_report.json"])
    return report


def run(cfg: dict, out) -> int:
    """Run the configured experiment; return a process exit code."""
    exp = cfg["experiment"]
    if exp == "train":
        run_train(cfg, out)
        return 0
    if exp == "mse-study":
        results = run_mse_study(cfg, out)
        ok = True
        for est, rows in results.items():
            ok &= all(r["empirical_mse"] <= r["lemma_bound"] for r in rows)
        return 0 if ok else 1
    if exp == "oracle-suite":
        report = run_oracle_suite(cfg, out)
        for c in report["checks"]:
            log.info("%-32s %s", c["check"], "PASS" if c["passed"] else "FAIL")
        return 0 if report["passed"] else 1
    raise ValueError(f"unknown experiment {exp!r}")
