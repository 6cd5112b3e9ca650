from .types import (Material, PanGeometry, ParticleSystem, ScraperGeometry,
                    SolverConfig, ToolState, WorldState, TABLE_HALF_EXTENT)
from .tool import collide_tool, segment_intersects_tool, tool_pd_step, wrap_angle
from .solver import advance_world, step_world
from .spawn import spawn_cluster
from .snapshot import load_scene, save_scene, scene_from_dict, scene_to_dict

__all__ = [
    "Material", "PanGeometry", "ParticleSystem", "ScraperGeometry", "SolverConfig",
    "ToolState", "WorldState", "TABLE_HALF_EXTENT",
    "collide_tool", "segment_intersects_tool", "tool_pd_step", "wrap_angle",
    "advance_world", "step_world", "spawn_cluster",
    "load_scene", "save_scene", "scene_from_dict", "scene_to_dict",
]
