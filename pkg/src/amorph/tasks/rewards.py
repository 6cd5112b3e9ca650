"""Reward functions for the three manipulation tasks.

All rewards are computed from a (previous, current) world pair. Ground-plane
distances use (x, z); displacement magnitudes use the full 3D positions.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from ..observe import GridSpec, density_and_height
from ..sim.types import WorldState
from .config import TaskConfig


def _xz(positions: np.ndarray) -> np.ndarray:
    return positions[:, [0, 2]]


def gathering_reward(prev: WorldState, cur: WorldState, cfg: TaskConfig) -> float:
    """Two-phase gathering reward.

    Far from the farthest-from-goal particle the tool is paid to approach it;
    within the dynamic threshold the reward switches to particle progress:
    a constant, the drop in the squared-padded distance of the farthest
    particle, total particle movement, and a bonus once everything is within
    the goal disk.
    """
    p = cur.particles.count
    if p == 0:
        raise ConfigurationError("gathering reward undefined for zero particles")
    g = cfg.gathering
    goal = np.array([cfg.goal_x, cfg.goal_z])

    cur_dist = np.linalg.norm(_xz(cur.particles.positions) - goal, axis=1)
    far_idx = int(np.argmax((g.c1 + cur_dist) ** 2))
    d_part_cur = (g.c1 + cur_dist[far_idx]) ** 2
    prev_dist_far = np.linalg.norm(_xz(prev.particles.positions)[far_idx] - goal)
    d_part_prev = (g.c1 + prev_dist_far) ** 2

    tool_xz = cur.tool.q[[0, 2]]
    d_tool = float(np.linalg.norm(tool_xz - _xz(cur.particles.positions)[far_idx]))
    d_thr = min(max(g.c4 / d_part_cur, g.c5), g.d_thr_cap)

    if d_tool < d_thr:
        reward = g.c2
        if g.enable_progress:
            reward += g.w1 * (d_part_prev - d_part_cur)
        if g.enable_movement:
            moved = np.linalg.norm(cur.particles.positions - prev.particles.positions, axis=1)
            reward += g.w2 * float(moved.sum())
        if g.enable_goal_bonus and cur_dist[far_idx] < g.c3:
            reward += g.w4
        return float(reward)
    return float(-g.w3 * d_tool) if g.enable_tool else 0.0


def occupied_cells(world: WorldState, cfg: TaskConfig) -> int:
    """Occupied cell count of the world-frame table height map."""
    spec = GridSpec.world_table(cfg.grid_n)
    pos = world.particles.positions
    _, hmap = density_and_height(_xz(pos), pos[:, 1], spec)
    return int((hmap.values > 0.0).sum())


def spreading_reward(prev: WorldState, cur: WorldState, cfg: TaskConfig) -> float:
    """Weighted sum of movement, occupancy growth, height drop, and outlier terms."""
    p = cur.particles.count
    if p == 0:
        raise ConfigurationError("spreading reward undefined for zero particles")
    s = cfg.spreading

    r_m = 0.0
    if s.enable_movement:
        moved = np.linalg.norm(cur.particles.positions - prev.particles.positions, axis=1)
        above = cur.particles.positions[:, 1] > s.c_min
        r_m = float(np.mean(np.where(above, moved, -s.k * moved)))

    r_hc = 0.0
    if s.enable_cells:
        r_hc = float(occupied_cells(cur, cfg) - occupied_cells(prev, cfg))

    r_h = 0.0
    if s.enable_height:
        r_h = float(prev.particles.positions[:, 1].mean() - cur.particles.positions[:, 1].mean())

    r_o = 0.0
    if s.enable_outlier:
        radial = np.linalg.norm(_xz(cur.particles.positions), axis=1)
        r_o = -float(np.maximum(radial - s.c_rad, 0.0).sum())

    return s.w1 * r_m + s.w2 * r_hc + s.w3 * r_h + s.w4 * r_o


def material_angular_velocity(particles, eps: float = 1e-4) -> np.ndarray:
    """Mean angular velocity of the particle set about its centre of mass.

    Particles closer than eps to the centre are excluded; if none remain the
    result is the zero vector.
    """
    if particles.count == 0:
        raise ConfigurationError("angular velocity undefined for zero particles")
    com = particles.positions.mean(axis=0)
    rel = particles.positions - com
    dist2 = np.einsum("ij,ij->i", rel, rel)
    keep = dist2 >= eps * eps
    if not keep.any():
        return np.zeros(3)
    contrib = np.cross(rel[keep], particles.velocities[keep]) / dist2[keep, None]
    return contrib.mean(axis=0)


def flipping_reward(prev: WorldState, cur: WorldState, cfg: TaskConfig) -> float:
    """Height term plus an angular-velocity bonus once the material is airborne."""
    p = cur.particles.count
    if p == 0:
        raise ConfigurationError("flipping reward undefined for zero particles")
    f = cfg.flipping

    d_ymin = float(cur.particles.positions[:, 1].min() - cur.tool.q[1])
    r_h = (f.c1 + f.w1 * d_ymin) if d_ymin > 0.0 else (f.w2 * d_ymin)
    r_av = 0.0
    if d_ymin > f.c2:
        omega = material_angular_velocity(cur.particles, cfg.omega_eps)
        r_av = f.w3 * float(np.clip(omega[0], f.c_omega_min, f.c_omega_max))

    total = 0.0
    if f.enable_height:
        total += f.w_h * r_h
    if f.enable_angular:
        total += f.w_av * r_av
    return total
