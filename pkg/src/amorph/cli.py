"""Command-line entry point: train, eval, replay, render-obs."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AmorphError, ConfigurationError
from .neural import PolicyNetwork
from .observe import GridMap, GridSpec, write_pgm
from .ppo import Trainer
from .runconfig import (RunConfig, apply_flat, apply_resolution_multiplier,
                        format_config, load_config, to_flat)
from .tasks.config import TaskKind
from .tasks.env import ManipulationEnv
from .tasks.evaluate import RandomPolicy, primary_metric_name, rollout_metric

log = logging.getLogger("amorph")

_ABLATION_FIELDS = {
    TaskKind.GATHERING: {"tool": "enable_tool", "movement": "enable_movement",
                         "goal_bonus": "enable_goal_bonus", "progress": "enable_progress"},
    TaskKind.SPREADING: {"movement": "enable_movement", "cells": "enable_cells",
                         "height": "enable_height", "outlier": "enable_outlier"},
    TaskKind.FLIPPING: {"height": "enable_height", "angular": "enable_angular"},
}

_METRIC_HIGHER_IS_BETTER = {TaskKind.GATHERING: False, TaskKind.SPREADING: True,
                            TaskKind.FLIPPING: True}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a key=value config file")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a single config key (repeatable)")
    p.add_argument("--seed", type=int, help="run seed (overrides run.seed)")
    p.add_argument("--out", help="output directory (overrides run.out)")


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config, args.override)
    if getattr(args, "task", None):
        apply_flat(cfg, {"task.kind": args.task})
    if getattr(args, "obs_frame", None):
        apply_flat(cfg, {"task.frame": args.obs_frame})
    if getattr(args, "iters", None) is not None:
        apply_flat(cfg, {"train.iterations": str(args.iters)})
    if getattr(args, "resolution_multiplier", None) is not None:
        apply_flat(cfg, {"run.resolution_multiplier": str(args.resolution_multiplier)})
    if args.seed is not None:
        apply_flat(cfg, {"run.seed": str(args.seed)})
    if args.out is not None:
        apply_flat(cfg, {"run.out": args.out})
    for term in getattr(args, "ablate", []) or []:
        table = _ABLATION_FIELDS[cfg.task.kind]
        if term not in table:
            raise ConfigurationError(
                f"unknown reward term {term!r} for {cfg.task.kind.value}; "
                f"choose from {sorted(table)}")
        section = getattr(cfg.task, cfg.task.kind.value)
        setattr(section, table[term], False)
    cfg.task.validate()
    cfg.solver.validate()
    return cfg


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(format_config(cfg))
    (out / "run_info.json").write_text(json.dumps(
        {"package_version": __version__, "seed": cfg.run.seed}, sort_keys=True) + "\n")
    return out


def cmd_train(args) -> int:
    cfg = _build_config(args)
    out = _prepare_out(cfg)
    metrics_path = out / "metrics.jsonl"
    state_path = out / "train_state.ckpt"

    trainer = Trainer(cfg.task, cfg.solver, cfg.train, seed=cfg.run.seed)
    mode = "w"
    if args.resume:
        if not state_path.exists():
            raise ConfigurationError(f"--resume: no training state at {state_path}")
        trainer.load_state(state_path)
        mode = "a"
    best = None
    higher_better = _METRIC_HIGHER_IS_BETTER[cfg.task.kind]

    with open(metrics_path, mode) as metrics:
        while trainer.iteration < cfg.train.iterations:
            report = trainer.run_iteration()
            metrics.write(report.to_json() + "\n")
            metrics.flush()
            log.info("iter %d: return=%.3f metric=%.3f kl=%.4f level=%d",
                     report.iteration, report.mean_return, report.metric_mean,
                     report.mean_kl, report.curriculum_level)
            trainer.net.save(out / "checkpoint_latest.ckpt")
            trainer.save_state(state_path)
            if cfg.train.checkpoint_every and report.iteration % cfg.train.checkpoint_every == 0:
                trainer.net.save(out / f"checkpoint_{report.iteration:05d}.ckpt")
            m = report.metric_mean
            if np.isfinite(m) and (best is None or (m > best if higher_better else m < best)):
                best = m
                trainer.net.save(out / "checkpoint_best.ckpt")
    return 0


def _load_policy(args, cfg: RunConfig, env: ManipulationEnv):
    if args.random_policy:
        return RandomPolicy(cfg.task, seed=cfg.run.seed)
    if not args.checkpoint:
        raise ConfigurationError("eval needs --checkpoint or --random-policy")
    net = PolicyNetwork.load(args.checkpoint)
    obs = env.reset(seed=0)
    vec_dim = obs.vector().shape[0]
    expected = (cfg.task.grid_n, len(cfg.task.channels()), vec_dim, cfg.task.action_dim())
    actual = (net.n, net.m, net.vec_dim, net.action_dim)
    if expected != actual:
        raise ConfigurationError(
            f"checkpoint shape mismatch: checkpoint (n, m, vec, act)={actual}, "
            f"task needs {expected}")
    return net


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    apply_resolution_multiplier(cfg)
    out = _prepare_out(cfg)
    probe_env = ManipulationEnv(cfg.task, cfg.solver, seed=0)
    policy = _load_policy(args, cfg, probe_env)
    deterministic = not args.stochastic

    seeds = np.random.SeedSequence(cfg.run.seed).spawn(args.rollouts)
    records = []
    with open(out / "eval_metrics.jsonl", "w") as f:
        for k in range(args.rollouts):
            env = ManipulationEnv(cfg.task, cfg.solver, seed=seeds[k])
            env.reset()
            record = rollout_metric(env, policy, deterministic=deterministic,
                                    record_actions=k < args.save_actions)
            actions = record.pop("actions", None)
            rewards = record.pop("rewards", None)
            record["rollout"] = k
            records.append(record)
            f.write(json.dumps(record, sort_keys=True) + "\n")
            if actions is not None:
                log_path = out / f"rollout_{k:03d}.actions.json"
                log_path.write_text(json.dumps({
                    "format": "amorph-actions", "version": 1,
                    "config_flat": to_flat(cfg),
                    "eval_seed": cfg.run.seed, "n_rollouts": args.rollouts,
                    "rollout_index": k,
                    "actions": actions, "rewards": rewards,
                }, sort_keys=True))
        mean = {key: float(np.mean([r[key] for r in records]))
                for key in records[0] if key != "rollout"}
        mean["rollout"] = "mean"
        f.write(json.dumps(mean, sort_keys=True) + "\n")
    metric = primary_metric_name(cfg.task.kind)
    print(f"eval: {args.rollouts} rollouts, mean {metric} = {mean[metric]:.4f}")
    return 0


def _frame_grid_spec(cfg: RunConfig) -> GridSpec:
    if cfg.task.frame == "tool":
        return GridSpec.tool_window(cfg.task.grid_n, cfg.task.grid_cell)
    return GridSpec.world_table(cfg.task.grid_n)


def _write_frames(out: Path, step: int, env: ManipulationEnv, obs) -> None:
    spec = GridSpec.tool_window(env.task.grid_n, env.task.grid_cell) \
        if env.task.frame == "tool" else GridSpec.world_table(env.task.grid_n)
    for k, name in enumerate(env.task.channels()):
        write_pgm(GridMap(obs.images[k], spec), out / f"frame_{step:05d}_{name}.pgm")
    _write_scatter(out / f"frame_{step:05d}_scatter.pgm", env)


def _write_scatter(path: Path, env: ManipulationEnv, size: int = 256) -> None:
    half = env.solver.table_half_extent
    img = np.zeros((size, size))
    pos = env.world.particles.positions
    px = np.clip(((pos[:, 0] + half) / (2 * half) * size).astype(int), 0, size - 1)
    pz = np.clip(((pos[:, 2] + half) / (2 * half) * size).astype(int), 0, size - 1)
    img[px, pz] = 255.0
    tx, tz = env.world.tool.q[0], env.world.tool.q[2]
    ix = int(np.clip((tx + half) / (2 * half) * size, 0, size - 1))
    iz = int(np.clip((tz + half) / (2 * half) * size, 0, size - 1))
    img[ix, iz] = max(img[ix, iz], 160.0)
    write_pgm(GridMap(img, GridSpec(n=size, cell=2 * half / size,
                                    origin=(-half, -half), frame="world")), path)


def cmd_replay(args) -> int:
    payload = json.loads(Path(args.log).read_text())
    if payload.get("format") != "amorph-actions":
        raise ConfigurationError(f"{args.log} is not an action log")
    cfg = RunConfig()
    apply_flat(cfg, payload["config_flat"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    seeds = np.random.SeedSequence(payload["eval_seed"]).spawn(payload["n_rollouts"])
    env = ManipulationEnv(cfg.task, cfg.solver, seed=seeds[payload["rollout_index"]])
    obs = env.reset()
    _write_frames(out, 0, env, obs)
    replayed = []
    for i, action in enumerate(payload["actions"]):
        result = env.step(np.asarray(action, dtype=np.float64))
        logged = payload["rewards"][i]
        if result.reward != logged:
            raise AmorphError(
                f"replay diverged at step {i}: reward {result.reward!r} != logged {logged!r}")
        replayed.append(result.reward)
        _write_frames(out, i + 1, env, result.observation)
    (out / "replay_report.json").write_text(json.dumps(
        {"steps": len(replayed), "rewards_match": True, "frames": len(replayed) + 1},
        sort_keys=True))
    print(f"replay: {len(replayed)} steps reproduced bit-exactly, "
          f"{len(replayed) + 1} frames written to {out}")
    return 0


def cmd_render_obs(args) -> int:
    cfg = _build_config(args)
    out = _prepare_out(cfg)
    env = ManipulationEnv(cfg.task, cfg.solver, seed=cfg.run.seed)
    obs = env.reset()
    spec = _frame_grid_spec(cfg)
    for k, name in enumerate(cfg.task.channels()):
        write_pgm(GridMap(obs.images[k], spec), out / f"obs_{name}.pgm")
    (out / "obs_vectors.json").write_text(json.dumps(
        {"tool_vec": obs.tool_vec.tolist(), "extra_vec": obs.extra_vec.tolist()},
        sort_keys=True))
    print(f"render-obs: wrote {len(cfg.task.channels())} channels to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amorph",
                                     description="Amorphous-material manipulation RL suite")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run PPO training")
    _add_common(p)
    p.add_argument("--task", choices=[k.value for k in TaskKind])
    p.add_argument("--iters", type=int, help="training iterations (train.iterations)")
    p.add_argument("--obs-frame", choices=["tool", "world"], dest="obs_frame")
    p.add_argument("--ablate", action="append", default=[], metavar="TERM",
                   help="disable one reward term (repeatable)")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--task", choices=[k.value for k in TaskKind])
    p.add_argument("--obs-frame", choices=["tool", "world"], dest="obs_frame")
    p.add_argument("--checkpoint")
    p.add_argument("--random-policy", action="store_true", dest="random_policy")
    p.add_argument("--rollouts", type=int, default=49)
    p.add_argument("--stochastic", action="store_true")
    p.add_argument("--save-actions", type=int, default=0, dest="save_actions",
                   metavar="K", help="write action logs for the first K rollouts")
    p.add_argument("--resolution-multiplier", type=int, dest="resolution_multiplier",
                   choices=[1, 2, 4])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="re-simulate an action log and export frames")
    p.add_argument("--log", required=True, help="rollout_*.actions.json from eval")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("render-obs", help="dump one observation stack for debugging")
    _add_common(p)
    p.add_argument("--task", choices=[k.value for k in TaskKind])
    p.add_argument("--obs-frame", choices=["tool", "world"], dest="obs_frame")
    p.set_defaults(func=cmd_render_obs)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except AmorphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
