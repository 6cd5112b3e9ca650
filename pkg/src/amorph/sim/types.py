"""Core state containers for the particle world: particles, tool, solver settings."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigurationError

TABLE_HALF_EXTENT = 4.0  # table covers [-4, 4]^2 on the ground plane


class Material(enum.IntEnum):
    GRANULAR = 0
    VISCOUS_FLUID = 1
    VISCO_PLASTIC = 2
    ELASTIC = 3


MATERIAL_NAMES = {m.name.lower(): m for m in Material}


def material_from_name(name: str) -> Material:
    try:
        return MATERIAL_NAMES[name.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown material {name!r}") from None


@dataclass
class ParticleSystem:
    """Positions, velocities and per-particle tags for P particles.

    All arrays are float64 and share the same leading dimension. ``radius``
    and masses are uniform across the system in practice, but inv_mass is
    stored per particle so pinned particles (inv_mass=0) are possible.
    """

    positions: np.ndarray       # (P, 3) meters
    prev_positions: np.ndarray  # (P, 3) meters
    velocities: np.ndarray      # (P, 3) m/s
    radius: float               # uniform, meters
    inv_mass: np.ndarray        # (P,) 1/kg
    material: np.ndarray        # (P,) Material values (int)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @staticmethod
    def empty(radius: float = 0.05) -> "ParticleSystem":
        z3 = np.zeros((0, 3), dtype=np.float64)
        return ParticleSystem(z3.copy(), z3.copy(), z3.copy(), radius,
                              np.zeros(0), np.zeros(0, dtype=np.int64))

    @staticmethod
    def from_positions(positions: np.ndarray, radius: float,
                       material: Material, inv_mass: float = 1.0) -> "ParticleSystem":
        pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        p = pos.shape[0]
        return ParticleSystem(
            positions=pos.copy(),
            prev_positions=pos.copy(),
            velocities=np.zeros((p, 3)),
            radius=float(radius),
            inv_mass=np.full(p, float(inv_mass)),
            material=np.full(p, int(material), dtype=np.int64),
        )

    def validate(self) -> None:
        p = self.count
        if not (self.prev_positions.shape == (p, 3) and self.velocities.shape == (p, 3)
                and self.inv_mass.shape == (p,) and self.material.shape == (p,)):
            raise ConfigurationError("particle arrays have inconsistent lengths")
        if self.radius <= 0:
            raise ConfigurationError("particle radius must be positive")
        if p and self.inv_mass.min() < 0:
            raise ConfigurationError("inv_mass must be non-negative")

    def copy(self) -> "ParticleSystem":
        return ParticleSystem(self.positions.copy(), self.prev_positions.copy(),
                              self.velocities.copy(), self.radius,
                              self.inv_mass.copy(), self.material.copy())


class ToolKind(enum.Enum):
    SCRAPER = "scraper"
    PAN = "pan"


@dataclass(frozen=True)
class ScraperGeometry:
    """Thin upright blade. Local origin sits at the centre of the bottom edge,
    width along local x, height along local +y, thickness along local z."""

    width: float = 0.8
    height: float = 0.4
    thickness: float = 0.02

    kind = ToolKind.SCRAPER


@dataclass(frozen=True)
class PanGeometry:
    """Flat pan with a rim. Local origin at the centre of the pan floor's top
    surface; the floor slab extends downwards, the rim ring extends up."""

    radius: float = 0.6
    rim_height: float = 0.1
    rim_thickness: float = 0.05
    base_thickness: float = 0.04

    kind = ToolKind.PAN


ToolGeometry = ScraperGeometry | PanGeometry


@dataclass
class ToolState:
    """Kinematic 6-DOF tool pose and its time derivative.

    q = [x, y, z, phi, psi, theta]: translation plus Euler angles with
    rotation R = Ry(psi) @ Rx(phi) @ Rz(theta) (yaw about the vertical axis,
    then pitch about the yawed local x axis). dof_mask marks DOFs the task is
    allowed to move; masked-out entries never change within an episode.
    """

    q: np.ndarray          # (6,)
    qdot: np.ndarray       # (6,)
    dof_mask: np.ndarray   # (6,) bool
    geometry: ToolGeometry

    @staticmethod
    def at_rest(geometry: ToolGeometry, q=None, dof_mask=None) -> "ToolState":
        qq = np.zeros(6) if q is None else np.asarray(q, dtype=np.float64).copy()
        mask = np.ones(6, dtype=bool) if dof_mask is None else np.asarray(dof_mask, dtype=bool).copy()
        return ToolState(q=qq, qdot=np.zeros(6), dof_mask=mask, geometry=geometry)

    def copy(self) -> "ToolState":
        return ToolState(self.q.copy(), self.qdot.copy(), self.dof_mask.copy(), self.geometry)

    def rotation(self) -> np.ndarray:
        return euler_rotation(self.q[3], self.q[4], self.q[5])

    def transform(self) -> np.ndarray:
        """Homogeneous 4x4 local->world transform."""
        a = np.eye(4)
        a[:3, :3] = self.rotation()
        a[:3, 3] = self.q[:3]
        return a


def euler_rotation(phi: float, psi: float, theta: float) -> np.ndarray:
    cphi, sphi = np.cos(phi), np.sin(phi)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    cth, sth = np.cos(theta), np.sin(theta)
    rx = np.array([[1, 0, 0], [0, cphi, -sphi], [0, sphi, cphi]])
    ry = np.array([[cpsi, 0, spsi], [0, 1, 0], [-spsi, 0, cpsi]])
    rz = np.array([[cth, -sth, 0], [sth, cth, 0], [0, 0, 1]])
    return ry @ rx @ rz


@dataclass
class SolverConfig:
    """Time stepping, PD gains, and per-material constraint parameters."""

    dt: float = 1.0 / 60.0
    substeps: int = 2
    constraint_iterations: int = 4
    kp: float = 400.0
    kd: float = 40.0
    # angular DOFs are damped harder so the angular rate stays inside the
    # (-pi, pi] band the observation encoding assumes; kd*dt must stay < 2
    # for the explicit integrator to remain stable
    kd_angular: float = 100.0
    gravity_y: float = -9.8
    friction_coeff: float = 0.4          # granular / tool / table Coulomb friction
    plastic_friction: float = 0.3
    elastic_friction: float = 0.3
    fluid_friction: float = 0.0
    fluid_cohesion_strength: float = 0.08
    fluid_cohesion_radius_factor: float = 2.5   # x particle radius
    fluid_xsph: float = 0.1
    spring_merge_factor: float = 2.2     # d_m = factor x radius
    spring_break_factor: float = 3.0     # d_b = factor x radius
    spring_compress_ratio: float = 0.85  # r_c
    spring_stretch_ratio: float = 1.15   # r_s
    elastic_connect_factor: float = 3.0
    penetration_tol: float = 1e-3
    table_half_extent: float = TABLE_HALF_EXTENT

    def validate(self) -> None:
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.substeps < 1 or self.constraint_iterations < 1:
            raise ConfigurationError("substeps and constraint_iterations must be >= 1")
        if self.kp <= 0 or self.kd < 0 or self.kd_angular < 0:
            raise ConfigurationError("kp must be > 0 and kd terms >= 0")

    def kd_per_dof(self) -> np.ndarray:
        return np.array([self.kd] * 3 + [self.kd_angular] * 3)

    def friction_for(self, material: int) -> float:
        return {
            int(Material.GRANULAR): self.friction_coeff,
            int(Material.VISCOUS_FLUID): self.fluid_friction,
            int(Material.VISCO_PLASTIC): self.plastic_friction,
            int(Material.ELASTIC): self.elastic_friction,
        }[int(material)]


@dataclass
class WorldState:
    """Complete simulation state: the MDP state advanced by the solver."""

    particles: ParticleSystem
    springs: "SpringSet | None"
    tool: ToolState
    sim_time: float = 0.0
    step_index: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def copy(self) -> "WorldState":
        springs = self.springs.copy() if self.springs is not None else None
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        return WorldState(self.particles.copy(), springs, self.tool.copy(),
                          self.sim_time, self.step_index, rng)
