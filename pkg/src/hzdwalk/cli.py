"""Command-line entry point.

Subcommands::

    hzdwalk train --config cfg.json --seed 0 --out runs/a
    hzdwalk eval speed|push|poincare --checkpoint ckpt.json --out runs/b
    hzdwalk reference-gait --seed 0 --out gait.json

Every command writes a ``manifest.json`` holding the SHA-256 of the
resolved configuration, the seed, and the wall clock (excluded from the
hash), so a run can be reproduced byte-for-byte from (config, seed).
Failures print a one-line JSON error object and exit nonzero.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import time

import click
import numpy as np

from . import analysis
from .dynamics import IntegratorConfig
from .gait import (JointBounds, PhaseConfig, expand_free_params,
                   extract_free_params, load_gait_json)
from .model import RobotParams
from .policy import ConstantGaitPolicy, PolicyParams, policy_output_bounds
from .refgait import (GaitSearchConfig, GaitSearchError, search_reference_gait,
                      shipped_gait_path)
from .train import (EpisodeConfig, EsConfig, PpoConfig, WalkingEnv, es_train,
                    make_rollout_fitness, ppo_train)

_VERSION = "hzdwalk-0.1.0"


class ConfigError(ValueError):
    pass


def _fail(kind: str, message: str, **extra):
    doc = {"error": kind, "message": message, **extra}
    click.echo(json.dumps(doc), err=True)
    sys.exit(1)


def _load_json(path, what: str):
    if not os.path.exists(path):
        raise ConfigError(f"{what} file not found: {path}")
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}")


def _take(doc: dict, cls, section: str, **extra):
    """Build a dataclass from a config section, naming any unknown key."""
    fields = cls.__dataclass_fields__
    for key in doc:
        if key not in fields:
            raise ConfigError(f"unknown key '{section}.{key}'")
    try:
        return cls(**doc, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section '{section}': {exc}")


_TOP_KEYS = {"robot", "integrator", "phase", "bounds", "policy",
             "trainer", "es", "ppo", "episode", "seed", "out_dir"}


def build_experiment(doc: dict):
    """Resolve an experiment config document into live objects."""
    for key in doc:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key '{key}'")
    robot_path = doc.get("robot")
    if robot_path is not None:
        if not os.path.exists(robot_path):
            raise ConfigError(f"robot params file not found: {robot_path}")
        robot = RobotParams.load_json(robot_path)
    else:
        robot = RobotParams.default()
    integ = _take(doc.get("integrator", {}), IntegratorConfig, "integrator")
    phase = _take(doc.get("phase", {}), PhaseConfig, "phase")
    bounds_doc = doc.get("bounds", {})
    for key in bounds_doc:
        if key not in ("lo", "hi"):
            raise ConfigError(f"unknown key 'bounds.{key}'")
    default = JointBounds()
    bounds = JointBounds(
        lo=np.asarray(bounds_doc.get("lo", default.lo), float),
        hi=np.asarray(bounds_doc.get("hi", default.hi), float))

    env = WalkingEnv(robot=robot, phase=phase, bounds=bounds, integrator=integ)
    episode = _take(doc.get("episode", {}), EpisodeConfig, "episode")

    pol_doc = dict(doc.get("policy", {}))
    n_out = pol_doc.pop("n_out", 21)
    kd_fixed = pol_doc.pop("kd_fixed", 10.0)
    init_scale = pol_doc.pop("init_scale", 0.5)
    warm_start = pol_doc.pop("warm_start_gait", None)
    if pol_doc:
        raise ConfigError(f"unknown key 'policy.{next(iter(pol_doc))}'")
    if n_out not in (20, 21):
        raise ConfigError("policy.n_out must be 20 or 21")

    trainer = doc.get("trainer", "es")
    if trainer not in ("es", "ppo"):
        raise ConfigError("trainer must be 'es' or 'ppo'")
    es = _take(doc.get("es", {}), EsConfig, "es")
    ppo = _take(doc.get("ppo", {}), PpoConfig, "ppo")
    return {"env": env, "episode": episode, "trainer": trainer,
            "es": es, "ppo": ppo, "n_out": n_out, "kd_fixed": kd_fixed,
            "init_scale": init_scale, "warm_start_gait": warm_start}


def _init_policy(exp, env: WalkingEnv, seed: int) -> PolicyParams:
    kd_range = env.kd_range if exp["n_out"] == 21 else None
    lo, hi = policy_output_bounds(env.bounds, kd_range)
    rng = np.random.default_rng(seed)
    gait_path = exp["warm_start_gait"]
    if gait_path is not None:
        if gait_path == "shipped":
            gait_path = shipped_gait_path()
        alpha, kd = load_gait_json(gait_path)
        targets = extract_free_params(alpha)
        if exp["n_out"] == 21:
            targets = np.concatenate([targets, [kd]])
        from .policy import warm_start_policy
        return warm_start_policy(lo, hi, targets, kd_fixed=exp["kd_fixed"],
                                 rng=rng, hidden_scale=exp["init_scale"])
    return PolicyParams.create(lo, hi, kd_fixed=exp["kd_fixed"], rng=rng,
                               scale=exp["init_scale"])


def _write_manifest(out_dir, command: str, hashed: dict, seed,
                    wall_clock: float, workers: int = 1) -> None:
    blob = json.dumps(hashed, sort_keys=True).encode()
    doc = {"command": command,
           "config_sha256": hashlib.sha256(blob).hexdigest(),
           "config": hashed,
           "seed": seed,
           "workers": workers,
           "version": _VERSION,
           "wall_clock_seconds": round(wall_clock, 3)}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def _sanitize(x):
    """Replace non-finite floats with null so the JSON stays standard."""
    if isinstance(x, dict):
        return {k: _sanitize(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_sanitize(v) for v in x]
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _write_json(path, doc) -> None:
    with open(path, "w") as f:
        json.dump(_sanitize(doc), f, indent=2, sort_keys=True)
        f.write("\n")


def _load_checkpoint(path):
    """A checkpoint is either a policy file or a fixed-gait file."""
    doc = _load_json(path, "checkpoint")
    if "alpha" in doc:
        alpha, kd = load_gait_json(path)
        return ConstantGaitPolicy(extract_free_params(alpha), kd)
    if "params" in doc:
        return PolicyParams.load(path)
    raise ConfigError(f"checkpoint {path} is neither a policy nor a gait file")


@click.group()
def main():
    """Planar-biped walking: training, evaluation, and gait search."""


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(), help="Experiment config JSON.")
@click.option("--seed", required=True, type=int)
@click.option("--workers", default=1, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--budget-seconds", default=None, type=float,
              help="Stop training after this wall-clock budget.")
def train(config_path, seed, workers, out_dir, budget_seconds):
    """Train a policy and write checkpoint, trace CSV, and manifest."""
    t0 = time.time()
    try:
        doc = _load_json(config_path, "config")
        exp = build_experiment(doc)
    except ConfigError as exc:
        _fail("config", str(exc))
    os.makedirs(out_dir, exist_ok=True)
    env, episode = exp["env"], exp["episode"]
    init = _init_policy(exp, env, seed)
    if exp["trainer"] == "es":
        fitness = make_rollout_fitness(init, env, episode)
        policy, trace = es_train(init, exp["es"], fitness, seed=seed,
                                 workers=workers,
                                 budget_seconds=budget_seconds)
        # wall_clock stays out of the trace so reruns are byte-identical
        cols = ("iteration", "fitness_mean", "fitness_best",
                "return_mean", "return_best")
    else:
        policy, trace = ppo_train(init, exp["ppo"], env, episode, seed=seed,
                                  budget_seconds=budget_seconds)
        cols = tuple(c for c in trace[0] if c != "wall_clock") \
            if trace else ("iteration",)
    policy.save(os.path.join(out_dir, "checkpoint.json"))
    with open(os.path.join(out_dir, "trace.csv"), "w") as f:
        f.write(",".join(cols) + "\n")
        for row in trace:
            f.write(",".join(f"{row[c]:.17g}" for c in cols) + "\n")
    _write_manifest(out_dir, "train", doc, seed, time.time() - t0, workers)
    click.echo(f"checkpoint, trace, manifest written to {out_dir}")


@main.group()
def eval():
    """Evaluate a checkpoint (speed tracking, push trials, Poincare)."""


def _eval_setup(checkpoint, seed):
    policy = _load_checkpoint(checkpoint)
    env = WalkingEnv()
    cfg = EpisodeConfig(max_sim_steps=20000, seed=seed,
                        mid_episode_resample=False)
    return policy, env, cfg


_DEFAULT_PROFILE = [[0.0, 0.8], [10.0, 1.2]]


@eval.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--profile", "profile_path", default=None, type=click.Path(),
              help="JSON list of [t, v_d] pairs; default steps 0.8 -> 1.2.")
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def speed(checkpoint, profile_path, seed, out_dir):
    """Speed-tracking report over a commanded-speed profile."""
    t0 = time.time()
    try:
        policy, env, cfg = _eval_setup(checkpoint, seed)
        profile = (_load_json(profile_path, "profile") if profile_path
                   else _DEFAULT_PROFILE)
        profile = [(float(t), float(v)) for t, v in profile]
    except ConfigError as exc:
        _fail("config", str(exc))
    os.makedirs(out_dir, exist_ok=True)
    report, res = analysis.run_tracking_eval(policy, env, cfg, profile,
                                             seed=seed)
    _write_json(os.path.join(out_dir, "tracking.json"),
                {"profile": profile, "termination": res.termination,
                 **report.to_dict()})
    analysis.export_trajectory_csv(res.log,
                                   os.path.join(out_dir, "trajectory.csv"))
    hashed = {"checkpoint": os.path.abspath(checkpoint), "profile": profile}
    _write_manifest(out_dir, "eval speed", hashed, seed, time.time() - t0)
    click.echo(f"tracking report written to {out_dir}")


@eval.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--v-d", default=1.0, show_default=True, type=float)
@click.option("--direction", default="backward", show_default=True,
              type=click.Choice(["forward", "backward"]))
@click.option("--magnitude", default=analysis.PUSH_SMALL_N,
              show_default=True, type=float)
@click.option("--sweep", is_flag=True,
              help="Sweep magnitudes to find the tolerance envelope.")
@click.option("--sweep-max", default=120.0, show_default=True, type=float)
@click.option("--sweep-points", default=7, show_default=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def push(checkpoint, v_d, direction, magnitude, sweep, sweep_max,
         sweep_points, seed, out_dir):
    """Scheduled-push trial (t = 2, 4, 6 s) or a magnitude sweep."""
    t0 = time.time()
    try:
        policy, env, cfg = _eval_setup(checkpoint, seed)
    except ConfigError as exc:
        _fail("config", str(exc))
    os.makedirs(out_dir, exist_ok=True)
    if sweep:
        mags = np.linspace(0.0, sweep_max, sweep_points)
        rows = analysis.push_sweep(policy, env, cfg, mags, direction, v_d,
                                   seed=seed)
        _write_json(os.path.join(out_dir, "push_sweep.json"),
                    {"v_d": v_d, "direction": direction, "trials": rows})
        hashed = {"checkpoint": os.path.abspath(checkpoint), "v_d": v_d,
                  "direction": direction, "sweep": list(map(float, mags))}
    else:
        sched = analysis.make_push_schedule(magnitude, direction)
        trial = analysis.run_push_trial(policy, env, cfg, sched, v_d,
                                        seed=seed)
        _write_json(os.path.join(out_dir, "push_trial.json"),
                    {"v_d": v_d, "direction": direction,
                     "magnitude": magnitude, "outcome": trial.outcome,
                     "fell_time": trial.fell_time,
                     "termination": trial.termination,
                     "steps": trial.steps_completed,
                     **trial.tracking.to_dict()})
        analysis.export_trajectory_csv(
            trial.log, os.path.join(out_dir, "trajectory.csv"))
        analysis.export_stick_frames(trial.log, env.robot,
                                     os.path.join(out_dir, "frames"))
        hashed = {"checkpoint": os.path.abspath(checkpoint), "v_d": v_d,
                  "direction": direction, "magnitude": magnitude}
    _write_manifest(out_dir, "eval push", hashed, seed, time.time() - t0)
    click.echo(f"push results written to {out_dir}")


@eval.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--v-d", default=1.0, show_default=True, type=float)
@click.option("--steps", default=30, show_default=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def poincare(checkpoint, v_d, steps, seed, out_dir):
    """Limit-cycle diagnostics: residual sequence and contraction estimate."""
    t0 = time.time()
    try:
        policy, env, cfg = _eval_setup(checkpoint, seed)
    except ConfigError as exc:
        _fail("config", str(exc))
    os.makedirs(out_dir, exist_ok=True)
    from .train import rollout
    cfg = EpisodeConfig(max_sim_steps=400 * steps, seed=seed,
                        mid_episode_resample=False)
    res = rollout(policy, env, cfg, seed=seed, v_d_schedule=[(0.0, v_d)],
                  keep_log=True)
    samples = analysis.poincare_sections(res.log)
    if len(samples) < 2:
        _fail("runtime", "episode ended before two section crossings",
              termination=res.termination)
    resid = analysis.poincare_residuals(samples)
    with open(os.path.join(out_dir, "residuals.csv"), "w") as f:
        f.write("step,residual\n")
        for s, r in zip(samples[1:], resid):
            f.write(f"{s.step_index},{r:.17g}\n")
    obs = samples[-1]
    from .policy import Observation
    free, kd = policy.act(Observation(v_d=v_d, v_bar=v_d, e_bar=0.0))
    stride = analysis.make_stride_map(env, expand_free_params(free,
                                                              env.bounds), kd)
    est = analysis.return_map_contraction(stride, obs.state())
    _write_json(os.path.join(out_dir, "poincare.json"),
                {"v_d": v_d, "steps_observed": len(samples),
                 "residual_final": float(resid[-1]),
                 "spectral_radius": est.spectral_radius,
                 "invalid_columns": list(est.invalid_columns),
                 "delta": est.delta,
                 "termination": res.termination})
    analysis.export_phase_plane_csv(res.log,
                                    os.path.join(out_dir, "phase_plane.csv"))
    hashed = {"checkpoint": os.path.abspath(checkpoint), "v_d": v_d,
              "steps": steps}
    _write_manifest(out_dir, "eval poincare", hashed, seed, time.time() - t0)
    click.echo(f"poincare diagnostics written to {out_dir}")


@main.command("reference-gait")
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--budget-seconds", default=900.0, show_default=True,
              type=float)
@click.option("--restarts", default=30, show_default=True, type=int)
@click.option("--warm-start", "warm_path", default=None, type=click.Path(),
              help="Gait JSON to descend from ('shipped' for the bundled one).")
@click.option("--verbose", is_flag=True)
def reference_gait(seed, out_path, budget_seconds, restarts, warm_path,
                   verbose):
    """Search for a fixed reference gait and write it as JSON."""
    t0 = time.time()
    cfg = GaitSearchConfig(seed=seed, restarts=restarts,
                           budget_seconds=budget_seconds)
    warm = None
    if warm_path is not None:
        if warm_path == "shipped":
            warm_path = shipped_gait_path()
        try:
            alpha, kd = load_gait_json(warm_path)
        except (OSError, ValueError) as exc:
            _fail("config", f"warm-start gait: {exc}")
        warm = (extract_free_params(alpha), kd)
    try:
        result = search_reference_gait(cfg=cfg, warm_start=warm,
                                       verbose=verbose)
    except GaitSearchError as exc:
        _fail("search", str(exc), diagnostics=exc.diagnostics)
    result.save(out_path)
    out_dir = os.path.dirname(os.path.abspath(out_path)) or "."
    hashed = {"seed": seed, "restarts": restarts,
              "warm_start": warm_path}
    _write_manifest(out_dir, "reference-gait", hashed, seed,
                    time.time() - t0)
    click.echo(json.dumps({"out": out_path, **result.diagnostics()}))


if __name__ == "__main__":
    main()
