"""Versioned scene snapshots: JSON export/import of the full world state.

Python's repr-based float serialization round-trips every finite double
exactly, so save -> load reproduces the state bit for bit.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import ConfigurationError
from ..materials import SpringParams, SpringSet
from .types import PanGeometry, ParticleSystem, ScraperGeometry, ToolState, WorldState

FORMAT_NAME = "amorph-scene"
FORMAT_VERSION = 1


def _tool_to_dict(tool: ToolState) -> dict:
    geo = tool.geometry
    if isinstance(geo, ScraperGeometry):
        geometry = {"kind": "scraper", "width": geo.width, "height": geo.height,
                    "thickness": geo.thickness}
    elif isinstance(geo, PanGeometry):
        geometry = {"kind": "pan", "radius": geo.radius, "rim_height": geo.rim_height,
                    "rim_thickness": geo.rim_thickness, "base_thickness": geo.base_thickness}
    else:
        raise ConfigurationError(f"unknown tool geometry {geo!r}")
    return {"q": tool.q.tolist(), "qdot": tool.qdot.tolist(),
            "dof_mask": tool.dof_mask.astype(int).tolist(), "geometry": geometry}


def _tool_from_dict(d: dict) -> ToolState:
    g = d["geometry"]
    if g["kind"] == "scraper":
        geo = ScraperGeometry(width=g["width"], height=g["height"], thickness=g["thickness"])
    elif g["kind"] == "pan":
        geo = PanGeometry(radius=g["radius"], rim_height=g["rim_height"],
                          rim_thickness=g["rim_thickness"], base_thickness=g["base_thickness"])
    else:
        raise ConfigurationError(f"unknown tool kind {g['kind']!r}")
    return ToolState(q=np.array(d["q"], dtype=np.float64),
                     qdot=np.array(d["qdot"], dtype=np.float64),
                     dof_mask=np.array(d["dof_mask"], dtype=bool),
                     geometry=geo)


def scene_to_dict(world: WorldState) -> dict:
    p = world.particles
    springs = None
    if world.springs is not None:
        edges, lengths = world.springs.sorted_edges()
        springs = {
            "params": {"d_m": world.springs.params.d_m, "d_b": world.springs.params.d_b,
                       "r_c": world.springs.params.r_c, "r_s": world.springs.params.r_s},
            "edges": [[int(i), int(j), float(l)] for (i, j), l in zip(edges, lengths)],
        }
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "particles": {
            "radius": p.radius,
            "positions": p.positions.tolist(),
            "prev_positions": p.prev_positions.tolist(),
            "velocities": p.velocities.tolist(),
            "inv_mass": p.inv_mass.tolist(),
            "material": p.material.tolist(),
        },
        "springs": springs,
        "tool": _tool_to_dict(world.tool),
        "sim_time": world.sim_time,
        "step_index": world.step_index,
        "rng_state": world.rng.bit_generator.state,
    }


def scene_from_dict(d: dict) -> WorldState:
    if d.get("format") != FORMAT_NAME:
        raise ConfigurationError("not an amorph scene snapshot")
    if d.get("version") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported snapshot version {d.get('version')!r}")
    pd = d["particles"]
    count = len(pd["positions"])
    particles = ParticleSystem(
        positions=np.array(pd["positions"], dtype=np.float64).reshape(count, 3),
        prev_positions=np.array(pd["prev_positions"], dtype=np.float64).reshape(count, 3),
        velocities=np.array(pd["velocities"], dtype=np.float64).reshape(count, 3),
        radius=float(pd["radius"]),
        inv_mass=np.array(pd["inv_mass"], dtype=np.float64),
        material=np.array(pd["material"], dtype=np.int64),
    )
    springs = None
    if d["springs"] is not None:
        sp = d["springs"]
        params = SpringParams(**sp["params"])
        springs = SpringSet(params)
        for i, j, length in sp["edges"]:
            springs.rest[(int(i), int(j))] = float(length)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = d["rng_state"]
    return WorldState(particles=particles, springs=springs, tool=_tool_from_dict(d["tool"]),
                      sim_time=float(d["sim_time"]), step_index=int(d["step_index"]), rng=rng)


def save_scene(world: WorldState, path) -> None:
    with open(path, "w") as f:
        json.dump(scene_to_dict(world), f, indent=1)


def load_scene(path) -> WorldState:
    with open(path) as f:
        return scene_from_dict(json.load(f))
