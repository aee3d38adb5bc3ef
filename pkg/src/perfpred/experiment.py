"""Config-driven experiment runner writing CSV convergence traces.

A config is a TOML document (or the equivalent dict) with sections
``[environment]``, ``[algorithm]``, ``[budget]``, ``[run]``, ``[output]`` and
``[audit]``; see ``configs/`` for complete examples.  :func:`parse_config`
fills every default so :meth:`ExperimentConfig.to_dict` is a self-contained
record that reproduces the run.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import Z_90, rgd_step_size
from .core import ConfigurationError, geometric_grid, run_rng
from .data import load_credit_csv, preprocess, synthetic_credit
from .environments import EtaEnv, GaussianEnv, PointMassEnv, StrategicEnv, compute_logistic_constants
from .optimizers import (empirical_stable_point, greedy_deploy_runs, lazy_deploy_runs, rgd, rrm)
from .schedules import DeploymentSchedule, StepSchedule, resolve_greedy_schedule, resolve_lazy_schedule

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUT_DIR_ENV = "PERFPRED_OUT_DIR"
TRACE_COLUMNS = ("run_id", "checkpoint", "samples", "deployments", "dist_sq", "perf_risk", "status")
AGGREGATE_COLUMNS = ("checkpoint", "samples", "deployments", "mean_dist_sq", "lo", "hi", "n_runs")

ENV_KEYS = {
    "gaussian": {"mu": 10.0, "sigma": 0.1, "epsilon": 0.2},
    "eta": {"p": 0.5, "mu": 20.0, "w": 4.0, "epsilon": 0.25},
    "point_mass": {"epsilon": 1.0, "beta_c": 1.0, "gamma_c": 0.0},
    "strategic": {"epsilon": None, "epsilon_ratio": None, "data": "synthetic", "n": 2000, "d": 10,
                  "label_balance": 0.5, "data_seed": 0, "label_column": "SeriousDlqin2yrs",
                  "feature_columns": None, "drop_columns": [], "row_cap": None, "shuffle_seed": 0,
                  "strategic_dims": [1, 6, 8], "index_base": 0, "lambda": None},
}
ALGORITHMS = ("greedy", "lazy", "rgd", "rrm")
SECTIONS = {
    "environment": {"kind"},
    "algorithm": {"name", "step", "step_factor", "eta", "alpha", "n0", "theta1"},
    "budget": {"samples", "deployments", "steps", "rounds", "mc_samples"},
    "run": {"repeats", "base_seed", "checkpoints", "band", "z", "stable_point", "rrm_tol",
            "perf_risk_samples"},
    "output": {"dir"},
    "audit": {"pairs", "n_samples", "seed", "coordinate", "paired", "n_boot", "low", "high"},
}


class ConfigError(ConfigurationError):
    """Every problem found in a config, reported at once."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclass
class ExperimentConfig:
    environment: dict
    algorithm: dict
    budget: dict
    run: dict
    output: dict
    audit: dict
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"environment": copy.deepcopy(self.environment), "algorithm": copy.deepcopy(self.algorithm),
                "budget": copy.deepcopy(self.budget), "run": copy.deepcopy(self.run),
                "output": copy.deepcopy(self.output), "audit": copy.deepcopy(self.audit)}

    def build_environment(self):
        return build_environment(self.environment)


def _load_text(text: str) -> dict:
    stripped = text.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(text)
        # a metadata.json file carries the resolved config under "config"
        return doc["config"] if isinstance(doc.get("config"), dict) and "algorithm" not in doc else doc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"TOML parse error: {exc}"]) from None


def load_config(path) -> "ExperimentConfig":
    return parse_config(Path(path).read_text(encoding="utf-8"))


def build_environment(spec: dict):
    kind = spec["kind"]
    p = {k: v for k, v in spec.items() if k != "kind"}
    if kind == "gaussian":
        return GaussianEnv(p["mu"], p["sigma"], p["epsilon"])
    if kind == "eta":
        return EtaEnv(p["p"], p["mu"], p["w"], p["epsilon"])
    if kind == "point_mass":
        return PointMassEnv(p["epsilon"], p["beta_c"], p["gamma_c"])
    if kind == "strategic":
        if p["data"] == "synthetic":
            data = synthetic_credit(p["n"], p["d"], p["label_balance"], p["data_seed"])
        else:
            raw = load_credit_csv(p["data"], p["label_column"], p["feature_columns"], p["drop_columns"],
                                  p["row_cap"], p["shuffle_seed"])
            data = preprocess(raw)
        eps = p["epsilon"]
        if eps is None:
            c = compute_logistic_constants(data.features, p["lambda"])
            eps = p["epsilon_ratio"] * c.ratio
        return StrategicEnv(data, eps, p["strategic_dims"], p["lambda"], p["index_base"])
    raise ConfigurationError(f"unknown environment kind {kind!r}")


def parse_config(source) -> ExperimentConfig:
    """Validate a config (TOML/JSON text or dict) and resolve every default.

    Raises :class:`ConfigError` listing all violations.
    """
    doc = copy.deepcopy(source) if isinstance(source, dict) else _load_text(source)
    problems = []
    for section, body in doc.items():
        if section not in SECTIONS:
            problems.append(f"unknown section [{section}]")
        elif not isinstance(body, dict):
            problems.append(f"[{section}] must be a table")
    env_in = dict(doc.get("environment", {}))
    alg_in = dict(doc.get("algorithm", {}))
    budget_in = dict(doc.get("budget", {}))
    run_in = dict(doc.get("run", {}))
    out_in = dict(doc.get("output", {}))
    audit_in = dict(doc.get("audit", {}))

    # environment
    kind = env_in.pop("kind", None)
    env = {"kind": kind}
    if kind is None:
        problems.append("missing required key environment.kind")
    elif kind not in ENV_KEYS:
        problems.append(f"environment.kind must be one of {sorted(ENV_KEYS)}, got {kind!r}")
    else:
        defaults = ENV_KEYS[kind]
        for key in env_in:
            if key not in defaults:
                problems.append(f"unknown key environment.{key} for kind {kind!r}")
        env.update({k: env_in.get(k, v) for k, v in defaults.items()})
        if kind == "strategic":
            if (env["epsilon"] is None) == (env["epsilon_ratio"] is None):
                problems.append("strategic environment needs exactly one of epsilon, epsilon_ratio")

    # algorithm
    for key in alg_in:
        if key not in SECTIONS["algorithm"]:
            problems.append(f"unknown key algorithm.{key}")
    name = alg_in.get("name")
    if name is None:
        problems.append("missing required key algorithm.name")
    elif name not in ALGORITHMS:
        problems.append(f"algorithm.name must be one of {ALGORITHMS}, got {name!r}")
    if name != "lazy":
        for key in ("alpha", "n0"):
            if key in alg_in:
                problems.append(f"algorithm.{key} given for {name!r}: only lazy deploy has a deployment schedule")
    alg = {"name": name, "step": alg_in.get("step", "auto"), "eta": alg_in.get("eta"),
           "theta1": alg_in.get("theta1")}
    if alg["step"] == "override":
        alg["step_factor"] = float(alg_in.get("step_factor", 100.0))
    if name == "lazy":
        alg["alpha"] = float(alg_in.get("alpha", 1.0))
        alg["n0"] = float(alg_in.get("n0", 1.0))
        if alg["alpha"] <= 0:
            problems.append("algorithm.alpha must be > 0")
        if alg["n0"] < 1:
            problems.append("algorithm.n0 must be >= 1")
    if alg["step"] not in ("auto", "theorem", "override", "constant"):
        problems.append(f"algorithm.step must be auto|theorem|override|constant, got {alg['step']!r}")
    if alg["step"] == "constant" and (alg["eta"] is None or not alg["eta"] > 0):
        problems.append("algorithm.step = 'constant' needs algorithm.eta > 0")
    if "step_factor" in alg_in and alg["step"] != "override":
        problems.append("algorithm.step_factor only applies to step = 'override'")

    # budget
    for key in budget_in:
        if key not in SECTIONS["budget"]:
            problems.append(f"unknown key budget.{key}")
    budget = {}
    need = {"greedy": ("samples",), "lazy": ("samples", "deployments"), "rgd": ("steps",), "rrm": ("rounds",)}
    if name in need:
        allowed = set(need[name]) | ({"mc_samples"} if name == "rgd" else set())
        for key in budget_in:
            if key in SECTIONS["budget"] and key not in allowed:
                problems.append(f"budget.{key} does not apply to {name!r}")
        if not any(k in budget_in for k in need[name]):
            problems.append(f"missing budget: {name!r} needs one of {need[name]}")
        for key in allowed:
            if key in budget_in:
                value = budget_in[key]
                floor = 0 if key == "mc_samples" else 1
                if not isinstance(value, int) or value < floor:
                    problems.append(f"budget.{key} must be an integer >= {floor}, got {value!r}")
                budget[key] = value
        if name == "rgd":
            budget.setdefault("mc_samples", 0)

    # run
    for key in run_in:
        if key not in SECTIONS["run"]:
            problems.append(f"unknown key run.{key}")
    run = {"repeats": run_in.get("repeats", 30), "base_seed": run_in.get("base_seed", 0),
           "checkpoints": run_in.get("checkpoints", 200), "band": run_in.get("band", True),
           "z": float(run_in.get("z", Z_90)), "stable_point": run_in.get("stable_point", "auto"),
           "rrm_tol": float(run_in.get("rrm_tol", 1e-10)), "perf_risk_samples": run_in.get("perf_risk_samples", 0)}
    if not isinstance(run["repeats"], int) or run["repeats"] < 1:
        problems.append(f"run.repeats must be an integer >= 1, got {run['repeats']!r}")
    ck = run["checkpoints"]
    if isinstance(ck, list):
        if not ck or any(not isinstance(c, int) or c < 1 for c in ck) or any(b <= a for a, b in zip(ck, ck[1:])):
            problems.append("run.checkpoints must be a strictly increasing list of positive integers")
    elif not isinstance(ck, int) or ck < 2:
        problems.append("run.checkpoints must be an int >= 2 (geometric grid size) or a list")
    sp = run["stable_point"]
    if not (sp in ("auto", "closed_form", "rrm_empirical") or isinstance(sp, list)):
        problems.append("run.stable_point must be auto|closed_form|rrm_empirical or an explicit list")

    output = {"dir": out_in.get("dir", "results")}
    for key in out_in:
        if key not in SECTIONS["output"]:
            problems.append(f"unknown key output.{key}")
    for key in audit_in:
        if key not in SECTIONS["audit"]:
            problems.append(f"unknown key audit.{key}")
    audit = {"pairs": audit_in.get("pairs", 10), "n_samples": audit_in.get("n_samples", 100_000),
             "seed": audit_in.get("seed", run["base_seed"]), "coordinate": audit_in.get("coordinate", 0),
             "paired": audit_in.get("paired", False), "n_boot": audit_in.get("n_boot", 100),
             "low": audit_in.get("low", 0.0), "high": audit_in.get("high", 20.0)}

    if problems:
        raise ConfigError(problems)

    cfg = ExperimentConfig(env, alg, budget, run, output, audit)
    # semantic checks that need the environment's constants
    try:
        environment = cfg.build_environment()
    except (ConfigurationError, OSError, ValueError) as exc:
        raise ConfigError([f"environment: {exc}"]) from None
    constants = environment.constants
    if name == "greedy" and alg["step"] == "theorem" and not constants.in_convergence_regime:
        problems.append(f"greedy theorem schedule needs epsilon < gamma/beta (epsilon={constants.epsilon:.6g}, "
                        f"gamma/beta={constants.ratio:.6g}); use step = 'auto' or 'override'")
    if name == "rgd" and alg["step"] != "constant":
        if constants.in_convergence_regime:
            alg["eta"] = rgd_step_size(constants)
        else:
            problems.append("rgd outside epsilon < gamma/beta needs step = 'constant' with an explicit eta")
    if name == "rgd" and budget.get("mc_samples", 0) < 1 and not environment.has_closed_form_population_gradient:
        problems.append("rgd on this environment needs budget.mc_samples >= 1")
    if alg["theta1"] is not None and len(alg["theta1"]) != environment.param_dim:
        problems.append(f"algorithm.theta1 must have length {environment.param_dim}")
    if isinstance(sp, list) and len(sp) != environment.param_dim:
        problems.append(f"run.stable_point must have length {environment.param_dim}")
    if sp == "closed_form" and not environment.has_closed_form_stable_point:
        problems.append(f"{kind!r} has no closed-form stable point; use rrm_empirical or an explicit value")
    if problems:
        raise ConfigError(problems)
    if alg["theta1"] is None:
        alg["theta1"] = environment.default_theta1().tolist()
    if sp == "auto":
        run["stable_point"] = "closed_form" if environment.has_closed_form_stable_point else "rrm_empirical"
    if kind == "strategic" and env["epsilon"] is None:
        cfg.notes.append(f"epsilon resolved from epsilon_ratio: {environment.epsilon!r}")
    return cfg


def dumps_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else f"{float(x):.17g}"
    return str(x)


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def resolve_stable_point(cfg: ExperimentConfig, env=None):
    env = env or cfg.build_environment()
    sp = cfg.run["stable_point"]
    if isinstance(sp, list):
        return np.array(sp, dtype=np.float64), "explicit"
    if sp in ("closed_form", "auto") and env.has_closed_form_stable_point:
        return env.stable_point(), "closed_form"
    theta1 = np.array(cfg.algorithm["theta1"], dtype=np.float64)
    return empirical_stable_point(env, theta1, tol=cfg.run["rrm_tol"]), "rrm_empirical"


def resolve_schedules(cfg: ExperimentConfig, constants):
    alg = cfg.algorithm
    notes = []
    if alg["name"] == "greedy":
        step, note = resolve_greedy_schedule(constants, alg["step"], alg.get("step_factor", 100.0), alg["eta"])
        dep = None
    elif alg["name"] == "lazy":
        step, note = resolve_lazy_schedule(constants, alg["step"], alg.get("step_factor", 100.0), alg["eta"])
        dep = DeploymentSchedule(alg["n0"], alg["alpha"])
    elif alg["name"] == "rgd":
        step, note, dep = StepSchedule.constant(alg["eta"]), None, None
    else:
        step, note, dep = None, None, None
    if note:
        notes.append(note)
    return step, dep, notes


def _checkpoints(cfg: ExperimentConfig) -> Optional[np.ndarray]:
    ck = cfg.run["checkpoints"]
    total = cfg.budget.get("samples") or cfg.budget.get("steps")
    if isinstance(ck, list):
        return np.array(ck, dtype=np.int64)
    if total is None:
        return None
    return geometric_grid(total, ck)


def _run_chunk(config_dict: dict, theta_ps, run_ids):
    cfg = parse_config(config_dict)
    env = cfg.build_environment()
    step, dep, _ = resolve_schedules(cfg, env.constants)
    theta1 = np.array(cfg.algorithm["theta1"], dtype=np.float64)
    seed = cfg.run["base_seed"]
    rngs = [run_rng(seed, r) for r in run_ids]
    name = cfg.algorithm["name"]
    if name == "greedy":
        trajs = greedy_deploy_runs(env, theta1, cfg.budget["samples"], step, rngs,
                                   theta_ps=theta_ps, checkpoints=_checkpoints(cfg))
    elif name == "lazy":
        trajs = lazy_deploy_runs(env, theta1, cfg.budget.get("deployments"), dep, step, rngs,
                                 sample_budget=cfg.budget.get("samples"), theta_ps=theta_ps)
    elif name == "rgd":
        trajs = [rgd(env, theta1, step, cfg.budget["steps"], cfg.budget["mc_samples"], rng, theta_ps=theta_ps)
                 for rng in rngs]
    else:
        trajs = [rrm(env, theta1, cfg.budget["rounds"], cfg.run["rrm_tol"] * 1e-2, theta_ps=theta_ps)
                 for _ in rngs]
    n_risk = cfg.run["perf_risk_samples"]
    risks = []
    for r, traj in zip(run_ids, trajs):
        if n_risk and n_risk > 0:
            rng = run_rng(seed, r, stream=1)
            risks.append([_perf_risk(env, rec.theta, n_risk, rng) if rec.status == "ok" else None
                          for rec in traj.records])
        else:
            risks.append([None] * len(traj.records))
    return trajs, risks


def _perf_risk(env, theta, n, rng):
    from .core import performative_risk
    if hasattr(env, "exact_performative_risk"):
        return env.exact_performative_risk(theta)
    return performative_risk(env, theta, n, rng)


def aggregate_rows(trajs, band: bool = True, z: float = Z_90):
    """One row per checkpoint: mean dist^2 over live runs and its band."""
    table = {}
    for traj in trajs:
        for rec in traj.records:
            if rec.status != "ok" or rec.dist_sq is None:
                continue
            entry = table.setdefault(rec.step, {"samples": rec.samples, "deployments": rec.deployments, "v": []})
            entry["v"].append(rec.dist_sq)
    rows = []
    for step in sorted(table):
        entry = table[step]
        v = np.array(entry["v"])
        mean = float(v.mean())
        if band and v.size >= 2:
            half = z * float(v.std(ddof=1)) / math.sqrt(v.size)
            lo, hi = mean - half, mean + half
        else:
            lo = hi = None
        rows.append((step, entry["samples"], entry["deployments"], mean, lo, hi, int(v.size)))
    return rows


@dataclass
class ExperimentResult:
    out_dir: Path
    trajectories: list
    aggregate: list
    metadata: dict
    files: list


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> ExperimentResult:
    """Run every replicate and write trace, aggregate and metadata files."""
    env = cfg.build_environment()
    out = Path(out_dir if out_dir is not None else cfg.output["dir"])
    theta_ps, sp_source = resolve_stable_point(cfg, env)
    step, dep, notes = resolve_schedules(cfg, env.constants)
    run_ids = list(range(cfg.run["repeats"]))
    config_dict = cfg.to_dict()
    jobs = max(1, int(jobs))
    if jobs == 1 or len(run_ids) == 1:
        trajs, risks = _run_chunk(config_dict, theta_ps, run_ids)
    else:
        chunks = [c.tolist() for c in np.array_split(run_ids, min(jobs, len(run_ids))) if len(c)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_chunk, [config_dict] * len(chunks), [theta_ps] * len(chunks), chunks))
        trajs = [t for p in parts for t in p[0]]
        risks = [r for p in parts for r in p[1]]

    files = []
    for r, traj, risk in zip(run_ids, trajs, risks):
        rows = [(r, rec.step, rec.samples, rec.deployments, rec.dist_sq, risk_i, rec.status)
                for rec, risk_i in zip(traj.records, risk)]
        path = out / f"trace_run{r:03d}.csv"
        _atomic_write(path, _csv_text(TRACE_COLUMNS, rows))
        files.append(path)
    agg = aggregate_rows(trajs, cfg.run["band"], cfg.run["z"])
    path = out / "aggregate.csv"
    _atomic_write(path, _csv_text(AGGREGATE_COLUMNS, agg))
    files.append(path)

    c = env.constants
    metadata = {
        "package_version": __version__,
        "config": config_dict,
        "environment": repr(env),
        "constants": {"epsilon": c.epsilon, "beta": c.beta, "gamma": c.gamma, "sigma_sq": c.sigma_sq,
                      "L_sq": c.L_sq, "gamma_over_beta": c.ratio,
                      "in_convergence_regime": c.in_convergence_regime},
        "theta_ps": theta_ps.tolist(),
        "theta_ps_source": sp_source,
        "rng": "numpy PCG64 seeded by SeedSequence(base_seed, spawn_key=(run_id,)); "
               "performative-risk draws use spawn_key=(run_id, 1)",
        "seeds": {str(r): [cfg.run["base_seed"], r] for r in run_ids},
        "step_schedule": None if step is None else step.describe(),
        "deployment_schedule": None if dep is None else {"n0": dep.n0, "alpha": dep.alpha},
        "schedule_overrides": notes,
        "notes": cfg.notes,
        "statuses": {str(r): t.status for r, t in zip(run_ids, trajs)},
    }
    path = out / "metadata.json"
    _atomic_write(path, json.dumps(metadata, indent=2, sort_keys=True) + "\n")
    files.append(path)
    return ExperimentResult(out, trajs, agg, metadata, files)


def random_theta_pairs(env, n_pairs: int, rng: np.random.Generator, low: float, high: float):
    """Random parameter pairs inside the environment's box (or ``[low, high]^d``)."""
    lo = np.full(env.param_dim, low) if env.box is None else env.box.lower
    hi = np.full(env.param_dim, high) if env.box is None else env.box.upper
    return [(rng.uniform(lo, hi), rng.uniform(lo, hi)) for _ in range(n_pairs)]
