"""Policy evaluation rollouts and per-task metrics."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from ..sim.types import SolverConfig
from .config import TaskConfig, TaskKind
from .env import ManipulationEnv


class RandomPolicy:
    """Uniform random actions within the task's per-step bounds."""

    def __init__(self, task: TaskConfig, seed=0):
        self.dim = task.action_dim()
        n_pos = 2 if task.kind is TaskKind.GATHERING else 3
        lo = np.full(self.dim, -task.max_action_ang)
        hi = np.full(self.dim, task.max_action_ang)
        lo[:n_pos] = -task.max_action_pos
        hi[:n_pos] = task.max_action_pos
        self.lo, self.hi = lo, hi
        self.rng = np.random.default_rng(seed)

    def action(self, obs, deterministic=False):
        return self.rng.uniform(self.lo, self.hi)


def rollout_metric(env: ManipulationEnv, policy, deterministic=True,
                   record_actions: bool = False) -> dict:
    """Run one episode (env already reset) and extract the task metric record."""
    kind = env.task.kind
    dt = env.solver.dt
    max_dymin = -np.inf
    accumulated_rotation = 0.0
    ret = 0.0
    info = {}
    actions: list[list[float]] = []
    rewards: list[float] = []
    obs = env._observe()
    for _ in range(env.horizon):
        action = np.asarray(policy.action(obs, deterministic=deterministic))
        result = env.step(action)
        obs = result.observation
        ret += result.reward
        info = result.info
        if record_actions:
            actions.append(action.tolist())
            rewards.append(result.reward)
        if kind is TaskKind.FLIPPING:
            max_dymin = max(max_dymin, info["d_ymin"])
            accumulated_rotation += float(info["material_omega"][0]) * dt

    record = {"return": ret}
    if record_actions:
        record["actions"] = actions
        record["rewards"] = rewards
    if kind is TaskKind.GATHERING:
        record["farthest_distance"] = info["farthest_distance"]
    elif kind is TaskKind.SPREADING:
        record["occupied_cells"] = float(info["occupied_cells"])
    else:
        record["max_d_ymin"] = float(max_dymin)
        record["accumulated_rotation"] = accumulated_rotation
    return record


def primary_metric_name(kind: TaskKind) -> str:
    return {TaskKind.GATHERING: "farthest_distance",
            TaskKind.SPREADING: "occupied_cells",
            TaskKind.FLIPPING: "accumulated_rotation"}[kind]


def evaluate_policy(policy, task: TaskConfig, solver: SolverConfig | None = None,
                    n_rollouts: int = 49, seed=0, deterministic: bool = True) -> dict:
    """Deterministic evaluation over seeded resets.

    Returns per-rollout records plus the mean of every numeric field.
    """
    if n_rollouts < 1:
        raise ConfigurationError("n_rollouts must be >= 1")
    seeds = np.random.SeedSequence(seed).spawn(n_rollouts)
    per_rollout = []
    for k in range(n_rollouts):
        env = ManipulationEnv(task, solver, seed=seeds[k])
        env.reset()
        per_rollout.append(rollout_metric(env, policy, deterministic=deterministic))
    mean = {key: float(np.mean([r[key] for r in per_rollout])) for key in per_rollout[0]}
    return {"per_rollout": per_rollout, "mean": mean,
            "metric": primary_metric_name(task.kind)}
