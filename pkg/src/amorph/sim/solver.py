"""Position-based dynamics stepping for the particle world.

Each control step advances the kinematic tool once with the PD rule, then
runs a number of PBD substeps over the particles: predict from velocities and
gravity, project constraints iteratively (pair contacts, springs, fluid
cohesion, then tool collider, then the table plane last so non-penetration
holds exactly at the end of every step), and derive velocities from the
position change. Constraint corrections between particle pairs are scaled
symmetrically by 1 / max(n_i, n_j) so linear momentum is conserved exactly
for equal-mass pairs while over-correction stays bounded.
"""

from __future__ import annotations

import numpy as np

from ..errors import SimulationDivergedError
from ..materials import update_springs
from .hashgrid import SpatialHash, brute_force_pairs
from .tool import collide_tool, tool_pd_step
from .types import Material, ParticleSystem, SolverConfig, WorldState

_HASH_THRESHOLD = 192  # below this a vectorized O(P^2) scan is faster


def _neighbor_pairs(positions: np.ndarray, radius: float, cutoff: float) -> np.ndarray:
    if positions.shape[0] <= _HASH_THRESHOLD:
        return brute_force_pairs(positions, cutoff)
    grid = SpatialHash(cell_size=2.0 * radius)
    grid.build(positions)
    return grid.query_pairs(positions, cutoff)


def step_world(world: WorldState, tool_target: np.ndarray, cfg: SolverConfig) -> WorldState:
    """Advance one control step and return the new state (input untouched)."""
    out = world.copy()
    advance_world(out, tool_target, cfg)
    return out


def advance_world(world: WorldState, tool_target: np.ndarray, cfg: SolverConfig) -> int:
    """In-place control step. Returns the number of boundary-clamped particles."""
    world.tool = tool_pd_step(world.tool, tool_target, cfg)

    parts = world.particles
    dynamic_springs = (world.springs is not None
                       and bool((parts.material == int(Material.VISCO_PLASTIC)).any()))
    if dynamic_springs:
        world.springs = update_springs(parts, world.springs, world.tool)

    clamped = 0
    if parts.count:
        h = cfg.dt / cfg.substeps
        edges, rest = (world.springs.sorted_edges() if world.springs is not None
                       else (np.zeros((0, 2), dtype=np.int64), np.zeros(0)))
        rot = world.tool.rotation()
        for _ in range(cfg.substeps):
            clamped += _substep(parts, world.tool, rot, edges, rest, h, cfg)
        if not np.all(np.isfinite(parts.positions)):
            raise SimulationDivergedError(world.step_index)

    world.sim_time += cfg.dt
    world.step_index += 1
    return clamped


def _substep(parts: ParticleSystem, tool, rot: np.ndarray, edges: np.ndarray,
             rest: np.ndarray, h: float, cfg: SolverConfig) -> int:
    pos = parts.positions
    vel = parts.velocities
    free = parts.inv_mass > 0.0
    radius = parts.radius

    vel[free, 1] += cfg.gravity_y * h
    x_prev = pos.copy()
    pos += np.where(free, 1.0, 0.0)[:, None] * vel * h

    fluid = parts.material == int(Material.VISCOUS_FLUID)
    any_fluid = bool(fluid.any())
    coh_radius = cfg.fluid_cohesion_radius_factor * radius
    cutoff = max(2.0 * radius, coh_radius if any_fluid else 0.0)
    pairs = _neighbor_pairs(pos, radius, cutoff)

    pi = pairs[:, 0]
    pj = pairs[:, 1]
    coh_mask = (fluid[pi] & fluid[pj]) if any_fluid else np.zeros(len(pi), dtype=bool)

    # per-particle constraint degree, for the symmetric pair scaling
    degree = np.bincount(pi, minlength=parts.count) + np.bincount(pj, minlength=parts.count)
    if len(edges):
        degree = degree + np.bincount(edges[:, 0], minlength=parts.count) \
                        + np.bincount(edges[:, 1], minlength=parts.count)
    pair_scale = 1.0 / np.maximum(degree[pi], degree[pj]) if len(pi) else np.zeros(0)
    if len(edges):
        edge_scale = 1.0 / np.maximum(degree[edges[:, 0]], degree[edges[:, 1]])

    w = parts.inv_mass
    pair_wsum = w[pi] + w[pj]
    pair_ok = pair_wsum > 0.0
    safe_wsum = np.where(pair_ok, pair_wsum, 1.0)
    share_i = np.where(pair_ok, w[pi] / safe_wsum, 0.0) * pair_scale
    share_j = np.where(pair_ok, w[pj] / safe_wsum, 0.0) * pair_scale

    fric_lut = np.array([cfg.friction_for(m) for m in range(4)])
    pair_mu = 0.5 * (fric_lut[parts.material[pi]] + fric_lut[parts.material[pj]]) \
        if len(pi) else np.zeros(0)

    for _ in range(cfg.constraint_iterations):
        if len(pi):
            delta = np.zeros_like(pos)
            diff = pos[pi] - pos[pj]
            dist = np.linalg.norm(diff, axis=1)
            safe = np.where(dist > 0.0, dist, 1.0)
            n = diff / safe[:, None]
            n[dist == 0.0] = np.array([1.0, 0.0, 0.0])

            # non-penetration contacts
            pen = np.maximum(2.0 * radius - dist, 0.0)
            corr = pen[:, None] * n
            np.add.at(delta, pi, share_i[:, None] * corr)
            np.add.at(delta, pj, -share_j[:, None] * corr)

            # Coulomb friction on penetrating pairs: clamp relative tangential slip
            touching = pen > 0.0
            if touching.any():
                rel = (pos[pi] - x_prev[pi]) - (pos[pj] - x_prev[pj])
                rel_t = rel - np.einsum("ij,ij->i", rel, n)[:, None] * n
                slip = np.linalg.norm(rel_t, axis=1)
                mu_pen = pair_mu * pen
                scale = np.where((slip > 0.0) & touching,
                                 np.minimum(mu_pen / np.where(slip > 0.0, slip, 1.0), 1.0),
                                 0.0)
                fric = -scale[:, None] * rel_t
                np.add.at(delta, pi, share_i[:, None] * fric)
                np.add.at(delta, pj, -share_j[:, None] * fric)

            # fluid cohesion: weak attraction back toward rest spacing
            if coh_mask.any():
                stretch = np.where(coh_mask & (dist < coh_radius),
                                   np.maximum(dist - 2.0 * radius, 0.0), 0.0)
                coh = (cfg.fluid_cohesion_strength * stretch)[:, None] * n
                np.add.at(delta, pi, -share_i[:, None] * coh)
                np.add.at(delta, pj, share_j[:, None] * coh)
            pos += delta

        if len(edges):
            ei = edges[:, 0]
            ej = edges[:, 1]
            delta = np.zeros_like(pos)
            diff = pos[ei] - pos[ej]
            dist = np.linalg.norm(diff, axis=1)
            safe = np.where(dist > 0.0, dist, 1.0)
            n = diff / safe[:, None]
            err = dist - rest
            wsum = w[ei] + w[ej]
            ok = wsum > 0.0
            sw = np.where(ok, wsum, 1.0)
            corr = (err * edge_scale)[:, None] * n
            np.add.at(delta, ei, -(np.where(ok, w[ei] / sw, 0.0))[:, None] * corr)
            np.add.at(delta, ej, (np.where(ok, w[ej] / sw, 0.0))[:, None] * corr)
            pos += delta

        # kinematic tool collider, then the table plane last
        contacts = collide_tool(parts, tool, rot)
        hit = contacts.depth > 0.0
        if hit.any():
            pos += contacts.corrections
            rel = pos - x_prev
            rel_t = rel - np.einsum("ij,ij->i", rel, contacts.normal)[:, None] * contacts.normal
            slip = np.linalg.norm(rel_t, axis=1)
            mu = fric_lut[parts.material]
            scale = np.where(hit & (slip > 0.0),
                             np.minimum(mu * contacts.depth / np.where(slip > 0.0, slip, 1.0), 1.0),
                             0.0)
            pos -= scale[:, None] * rel_t

        below = pos[:, 1] < radius
        if below.any():
            pen_t = radius - pos[below, 1]
            pos[below, 1] = radius
            rel = pos[below] - x_prev[below]
            rel_t = rel.copy()
            rel_t[:, 1] = 0.0
            slip = np.linalg.norm(rel_t, axis=1)
            mu = fric_lut[parts.material[below]]
            scale = np.where(slip > 0.0, np.minimum(mu * pen_t / np.where(slip > 0.0, slip, 1.0), 1.0), 0.0)
            pos[below] -= scale[:, None] * rel_t

    # table boundary: clamp runaway particles, count them
    ext = cfg.table_half_extent
    out_of_bounds = (np.abs(pos[:, 0]) > ext) | (np.abs(pos[:, 2]) > ext)
    clamped = int(out_of_bounds.sum())
    if clamped:
        pos[:, 0] = np.clip(pos[:, 0], -ext, ext)
        pos[:, 2] = np.clip(pos[:, 2], -ext, ext)

    parts.prev_positions[:] = x_prev
    vel[:] = (pos - x_prev) / h

    if any_fluid and len(pi):
        both = coh_mask & (np.linalg.norm(pos[pi] - pos[pj], axis=1) < coh_radius)
        if both.any():
            fi = pi[both]
            fj = pj[both]
            d = np.linalg.norm(pos[fi] - pos[fj], axis=1)
            kern = np.maximum(1.0 - d / coh_radius, 0.0)
            dv = np.zeros_like(vel)
            flow = (vel[fj] - vel[fi]) * kern[:, None]
            np.add.at(dv, fi, flow)
            np.add.at(dv, fj, -flow)
            vel += cfg.fluid_xsph * dv
    return clamped
