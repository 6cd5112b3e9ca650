"""Shared oracles and scene builders for the test suite."""

import numpy as np
import pytest

from amorph.observe import WINDOW_FACTOR
from amorph.sim.types import (Material, ParticleSystem, ScraperGeometry, SolverConfig,
                              ToolState, WorldState)


def free_tool(q=None):
    """A scraper parked far from the origin so it never touches test particles."""
    qq = np.array([3.5, 0.0, 3.5, 0.0, 0.0, 0.0]) if q is None else np.asarray(q, float)
    return ToolState.at_rest(ScraperGeometry(), q=qq,
                             dof_mask=np.array([1, 0, 1, 0, 1, 0], dtype=bool))


def make_world(positions, velocities=None, radius=0.05, material=Material.GRANULAR,
               tool=None, springs=None):
    ps = ParticleSystem.from_positions(np.asarray(positions, float), radius, material)
    if velocities is not None:
        ps.velocities[:] = np.asarray(velocities, float)
    return WorldState(particles=ps, springs=springs,
                      tool=tool if tool is not None else free_tool())


def no_gravity():
    return SolverConfig(gravity_y=0.0)


def brute_force_density(points_xz, spec):
    """Per-cell direct evaluation of the window kernel, ascending particle index."""
    n, h = spec.n, spec.cell
    out = np.zeros((n, n))
    win = WINDOW_FACTOR * h
    for p in range(points_xz.shape[0]):
        x, z = points_xz[p]
        for i in range(n):
            vx = x - (spec.origin[0] + i * h)
            if not abs(vx) < win:
                continue
            for j in range(n):
                vz = z - (spec.origin[1] + j * h)
                if abs(vz) < win:
                    out[i, j] += np.sqrt((win - abs(vx)) ** 2 + (win - abs(vz)) ** 2)
    return out


def brute_force_height(points_xz, heights, spec):
    n, h = spec.n, spec.cell
    dens = brute_force_density(points_xz, spec)
    num = np.zeros((n, n))
    win = WINDOW_FACTOR * h
    for p in range(points_xz.shape[0]):
        x, z = points_xz[p]
        for i in range(n):
            vx = x - (spec.origin[0] + i * h)
            if not abs(vx) < win:
                continue
            for j in range(n):
                vz = z - (spec.origin[1] + j * h)
                if abs(vz) < win:
                    num[i, j] += heights[p] * np.sqrt((win - abs(vx)) ** 2 + (win - abs(vz)) ** 2)
    out = np.zeros((n, n))
    mask = dens > 0
    out[mask] = num[mask] / dens[mask]
    return out


def rest_length_update_oracle(d, d_rest, r_c, r_s):
    # direct transliteration of the yield rule
    r_t = d / d_rest
    if r_t <= r_c or r_t >= r_s:
        return d
    return d_rest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
