"""Episode lifecycle for the manipulation tasks.

An environment owns one world, converts tool-frame policy actions into world
PD targets, steps the solver, and scores the transition with the task reward.
Episodes run to a fixed horizon; there is no early termination.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import AmorphError, ConfigurationError, InvalidActionError
from ..materials import elastic_spring_network, SpringParams, SpringSet
from ..observe import Observation, ObservationSpec, assemble_observation
from ..sim.spawn import spawn_cluster
from ..sim.solver import advance_world
from ..sim.types import (Material, PanGeometry, ParticleSystem, ScraperGeometry,
                         SolverConfig, ToolState, WorldState)
from .config import TaskConfig, TaskKind
from .rewards import (flipping_reward, gathering_reward, material_angular_velocity,
                      occupied_cells, spreading_reward)

_PLACEMENT_RETRIES = 200


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def curriculum_update(level: int, episode_return: float, threshold: float) -> int:
    """Advance one curriculum level (max 4) when the return beats the threshold."""
    if not 1 <= level <= 4:
        raise ConfigurationError("curriculum level must be in [1, 4]")
    if episode_return > threshold and level < 4:
        return level + 1
    return level


def _dof_mask(kind: TaskKind) -> np.ndarray:
    if kind is TaskKind.GATHERING:
        return np.array([1, 0, 1, 0, 1, 0], dtype=bool)
    if kind is TaskKind.SPREADING:
        return np.array([1, 1, 1, 1, 1, 0], dtype=bool)
    return np.array([1, 1, 1, 1, 0, 0], dtype=bool)  # flipping


class ManipulationEnv:
    """Single-task environment with a step/reset interface."""

    def __init__(self, task: TaskConfig, solver: SolverConfig | None = None, seed=0):
        task.validate()
        self.task = task
        self.solver = solver if solver is not None else SolverConfig()
        self.solver.validate()
        self.rng = np.random.default_rng(seed)
        self.world: WorldState | None = None
        self.steps_taken = 0
        self.curriculum_level = task.curriculum_level
        self._obs_spec = ObservationSpec(
            channels=task.channels(), frame=task.frame, n=task.grid_n,
            cell=task.grid_cell, goal_xz=(task.goal_x, task.goal_z),
            goal_radius=task.gathering.c3)

    @property
    def action_dim(self) -> int:
        return self.task.action_dim()

    @property
    def horizon(self) -> int:
        return self.task.resolved_horizon()

    def reset(self, seed=None) -> Observation:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.steps_taken = 0
        kind = self.task.kind
        if kind is TaskKind.GATHERING:
            self.world = self._reset_gathering()
        elif kind is TaskKind.SPREADING:
            self.world = self._reset_spreading()
        else:
            self.world = self._reset_flipping()
        return self._observe()

    def _spring_params(self) -> SpringParams:
        r = self.task.particle_radius
        s = self.solver
        return SpringParams(d_m=s.spring_merge_factor * r, d_b=s.spring_break_factor * r,
                            r_c=s.spring_compress_ratio, r_s=s.spring_stretch_ratio)

    def _merge_systems(self, systems: list[ParticleSystem]) -> ParticleSystem:
        pos = np.concatenate([s.positions for s in systems], axis=0)
        merged = ParticleSystem.from_positions(pos, systems[0].radius,
                                               Material.GRANULAR)
        merged.material = np.concatenate([s.material for s in systems])
        return merged

    def _reset_gathering(self) -> WorldState:
        t = self.task
        goal = np.array([t.goal_x, t.goal_z])
        n_clusters = self.curriculum_level
        spacing = 2.1 * t.particle_radius
        cluster_reach = spacing * (np.sqrt(max(7, 1.3 * t.resolved_count() ** (2 / 3))) / 2 + 1)

        centers: list[np.ndarray] = []
        lo, hi = -2.7, 2.7
        for _ in range(n_clusters):
            placed = False
            for _ in range(_PLACEMENT_RETRIES):
                c = self.rng.uniform(lo, hi, size=2)
                if np.linalg.norm(c - goal) < t.gathering.c3 + cluster_reach + 0.2:
                    continue
                if any(np.linalg.norm(c - o) < 2 * cluster_reach + 0.3 for o in centers):
                    continue
                centers.append(c)
                placed = True
                break
            if not placed:
                raise ConfigurationError("could not place material clusters")

        systems = [spawn_cluster(c, t.resolved_count(), t.resolved_material(), spacing,
                                 seed=self.rng.integers(2 ** 63), radius=t.particle_radius)
                   for c in centers]
        particles = self._merge_systems(systems)

        springs = None
        if t.resolved_material() is Material.VISCO_PLASTIC:
            springs = SpringSet(self._spring_params())

        tool_q = np.zeros(6)
        tool_q[0], tool_q[2] = self.rng.uniform(-2.5, 2.5, size=2)
        tool_q[4] = self.rng.uniform(-np.pi, np.pi)
        tool = ToolState.at_rest(ScraperGeometry(), q=tool_q, dof_mask=_dof_mask(t.kind))
        return WorldState(particles=particles, springs=springs, tool=tool,
                          rng=np.random.default_rng(self.rng.integers(2 ** 63)))

    def _reset_spreading(self) -> WorldState:
        t = self.task
        count = t.resolved_count()
        particles = spawn_cluster((0.0, 0.0), count, t.resolved_material(),
                                  spacing=2.05 * t.particle_radius,
                                  seed=self.rng.integers(2 ** 63),
                                  radius=t.particle_radius,
                                  layer_capacity=max(7, int(np.ceil(count / 6))))
        springs = None
        if t.resolved_material() is Material.VISCO_PLASTIC:
            springs = SpringSet(self._spring_params())

        tool_q = np.zeros(6)
        angle = self.rng.uniform(-np.pi, np.pi)
        start_radius = 1.2
        tool_q[0] = start_radius * np.cos(angle)
        tool_q[2] = start_radius * np.sin(angle)
        tool_q[4] = self.rng.uniform(-np.pi, np.pi)
        tool = ToolState.at_rest(ScraperGeometry(), q=tool_q, dof_mask=_dof_mask(t.kind))
        return WorldState(particles=particles, springs=springs, tool=tool,
                          rng=np.random.default_rng(self.rng.integers(2 ** 63)))

    def _reset_flipping(self) -> WorldState:
        t = self.task
        pan = PanGeometry()
        tool_q = np.zeros(6)
        tool_q[1] = 1.0
        tool = ToolState.at_rest(pan, q=tool_q, dof_mask=_dof_mask(t.kind))

        count = t.resolved_count()
        disk = spawn_cluster((0.0, 0.0), count, Material.ELASTIC,
                             spacing=2.05 * t.particle_radius,
                             seed=self.rng.integers(2 ** 63),
                             radius=t.particle_radius,
                             layer_capacity=max(7, int(np.ceil(count / 2))))
        disk.positions[:, 1] += tool_q[1]
        disk.prev_positions[:] = disk.positions
        reach = np.abs(disk.positions[:, [0, 2]]).max()
        if reach > pan.radius - pan.rim_thickness - t.particle_radius:
            raise ConfigurationError("material disk does not fit inside the pan")

        springs = elastic_spring_network(
            disk, connect_radius=self.solver.elastic_connect_factor * t.particle_radius)
        return WorldState(particles=disk, springs=springs, tool=tool,
                          rng=np.random.default_rng(self.rng.integers(2 ** 63)))

    def _observe(self) -> Observation:
        extra = None
        if self.task.kind is TaskKind.FLIPPING:
            extra = material_angular_velocity(self.world.particles, self.task.omega_eps)
        return assemble_observation(self.world, self._obs_spec, extra_vec=extra)

    def _world_target(self, action: np.ndarray) -> np.ndarray:
        t = self.task
        q = self.world.tool.q
        rot = self.world.tool.rotation()
        target = q.copy()
        if t.kind is TaskKind.GATHERING:
            delta_local = np.array([action[0], 0.0, action[1]])
            target[:3] = q[:3] + rot @ delta_local
            target[4] = q[4] + action[2]
        elif t.kind is TaskKind.SPREADING:
            target[:3] = q[:3] + rot @ action[:3]
            target[4] = q[4] + action[3]
            target[3] = self._spread_tilt_target(rot)
        else:  # flipping
            target[:3] = q[:3] + rot @ action[:3]
            target[3] = q[3] + action[3]
        return target

    def _spread_tilt_target(self, rot: np.ndarray) -> float:
        # lean the blade about its bottom edge toward the direction of motion
        t = self.task
        v = self.world.tool.qdot[:3].copy()
        v[1] = 0.0
        if np.linalg.norm(v) <= t.spread_tilt_speed:
            return 0.0
        v_local = rot.T @ v
        return t.spread_tilt if v_local[2] >= 0.0 else -t.spread_tilt

    def step(self, action) -> StepResult:
        if self.world is None:
            raise AmorphError("step() before reset()")
        if self.steps_taken >= self.horizon:
            raise AmorphError("episode is done; call reset()")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape[0] != self.action_dim:
            raise InvalidActionError(
                f"expected action of length {self.action_dim}, got {action.shape[0]}")
        if not np.all(np.isfinite(action)):
            raise InvalidActionError("action contains non-finite entries")

        t = self.task
        n_pos = 2 if t.kind is TaskKind.GATHERING else 3
        action = action.copy()
        action[:n_pos] = np.clip(action[:n_pos], -t.max_action_pos, t.max_action_pos)
        action[n_pos:] = np.clip(action[n_pos:], -t.max_action_ang, t.max_action_ang)

        prev = self.world.copy()
        target = self._world_target(action)
        clamped = advance_world(self.world, target, self.solver)
        self.steps_taken += 1

        if t.kind is TaskKind.GATHERING:
            reward = gathering_reward(prev, self.world, t)
        elif t.kind is TaskKind.SPREADING:
            reward = spreading_reward(prev, self.world, t)
        else:
            reward = flipping_reward(prev, self.world, t)

        done = self.steps_taken >= self.horizon
        info = self._info(clamped)
        return StepResult(self._observe(), float(reward), done, info)

    def _info(self, clamped: int) -> dict:
        t = self.task
        pos = self.world.particles.positions
        info = {"boundary_clamped": clamped}
        radial = np.linalg.norm(pos[:, [0, 2]], axis=1)
        info["outlier_count"] = int((radial > t.spreading.c_rad).sum())
        if t.kind is TaskKind.GATHERING:
            goal = np.array([t.goal_x, t.goal_z])
            info["farthest_distance"] = float(
                np.linalg.norm(pos[:, [0, 2]] - goal, axis=1).max())
        elif t.kind is TaskKind.SPREADING:
            info["occupied_cells"] = occupied_cells(self.world, t)
        else:
            info["material_omega"] = material_angular_velocity(
                self.world.particles, t.omega_eps)
            info["d_ymin"] = float(pos[:, 1].min() - self.world.tool.q[1])
        return info
