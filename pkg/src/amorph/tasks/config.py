"""Task definitions: reward constants, episode setup, observation layout."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..errors import ConfigurationError
from ..sim.types import Material


class TaskKind(enum.Enum):
    GATHERING = "gathering"
    SPREADING = "spreading"
    FLIPPING = "flipping"


@dataclass
class GatheringReward:
    c1: float = 10.0
    c2: float = 0.03
    c3: float = 1.0
    c4: float = 4.0
    c5: float = 1.0
    w1: float = 1.0
    w2: float = 5.0
    w3: float = 0.01
    w4: float = 1.0
    d_thr_cap: float = 1.3
    # ablation toggles
    enable_progress: bool = True   # w1 term: farthest-particle progress
    enable_movement: bool = True   # w2 term: total particle movement
    enable_goal_bonus: bool = True  # w4 indicator
    enable_tool: bool = True       # tool-approach branch term


@dataclass
class SpreadingReward:
    w1: float = 0.1
    w2: float = 0.1
    w3: float = 50.0
    w4: float = 0.001
    c_min: float = 0.2
    c_rad: float = 3.2
    k: float = 1.0
    enable_movement: bool = True   # r_m
    enable_cells: bool = True      # r_hc
    enable_height: bool = True     # r_h
    enable_outlier: bool = True    # r_o


@dataclass
class FlippingReward:
    w_h: float = 0.1
    w_av: float = 1.0
    w1: float = 10.0
    w2: float = 0.1
    w3: float = 4.0
    c1: float = 0.1
    c2: float = 0.5
    c_omega_min: float = -1.0
    c_omega_max: float = 1.0
    enable_height: bool = True     # r_h
    enable_angular: bool = True    # r_av


_DEFAULT_COUNTS = {TaskKind.GATHERING: 50, TaskKind.SPREADING: 180, TaskKind.FLIPPING: 42}
_DEFAULT_HORIZONS = {TaskKind.GATHERING: 300, TaskKind.SPREADING: 300, TaskKind.FLIPPING: 150}
_DEFAULT_MATERIALS = {TaskKind.GATHERING: Material.GRANULAR,
                      TaskKind.SPREADING: Material.GRANULAR,
                      TaskKind.FLIPPING: Material.ELASTIC}


@dataclass
class TaskConfig:
    kind: TaskKind = TaskKind.GATHERING
    material: Material | None = None           # None: task default
    particle_count: int | None = None
    particle_radius: float = 0.05
    horizon: int | None = None
    frame: str = "tool"                        # observation frame
    goal_x: float = 0.0
    goal_z: float = 0.0
    grid_n: int = 32
    grid_cell: float = 0.25
    curriculum_enabled: bool = True
    curriculum_level: int = 1
    curriculum_threshold: float | None = None  # None: dynamic (0.7 x recent best)
    max_action_pos: float = 0.5                # per-step position target delta bound (m)
    max_action_ang: float = 0.5                # per-step angle target delta bound (rad)
    spread_tilt: float = 0.2618                # 15 deg forward lean while moving
    spread_tilt_speed: float = 0.05            # m/s threshold to engage the lean
    omega_eps: float = 1e-4                    # centre-of-mass exclusion radius
    gathering: GatheringReward = field(default_factory=GatheringReward)
    spreading: SpreadingReward = field(default_factory=SpreadingReward)
    flipping: FlippingReward = field(default_factory=FlippingReward)

    def resolved_material(self) -> Material:
        return self.material if self.material is not None else _DEFAULT_MATERIALS[self.kind]

    def resolved_count(self) -> int:
        return self.particle_count if self.particle_count is not None else _DEFAULT_COUNTS[self.kind]

    def resolved_horizon(self) -> int:
        return self.horizon if self.horizon is not None else _DEFAULT_HORIZONS[self.kind]

    def action_dim(self) -> int:
        return 3 if self.kind is TaskKind.GATHERING else 4

    def channels(self) -> tuple[str, ...]:
        if self.kind is TaskKind.GATHERING:
            return ("density", "goal")
        if self.kind is TaskKind.SPREADING:
            return ("density", "height")
        return ("height",)

    def validate(self) -> None:
        if self.resolved_horizon() < 1:
            raise ConfigurationError("horizon must be >= 1")
        if self.kind is TaskKind.GATHERING and not (1 <= self.curriculum_level <= 4):
            raise ConfigurationError("gathering curriculum level must be in [1, 4]")
        if self.frame not in ("tool", "world"):
            raise ConfigurationError(f"unknown observation frame {self.frame!r}")
        if self.grid_n < 1 or self.grid_cell <= 0:
            raise ConfigurationError("grid must have n >= 1 and positive cell size")
        if abs(self.goal_x) > 4.0 or abs(self.goal_z) > 4.0:
            raise ConfigurationError("goal must lie on the table")
