"""Grid-map observations: density, height, and goal maps plus the tool vector.

Maps follow a fixed kernel: a particle contributes to every cell whose centre
is strictly within 2.5 cell-widths along both ground axes, with weight
sqrt((2.5h - |vx|)^2 + (2.5h - |vz|)^2). Accumulation order is ascending
particle index so results are bit-reproducible and equal to the brute-force
per-cell evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ObservationError
from .sim.types import TABLE_HALF_EXTENT, ToolState, WorldState

WINDOW_FACTOR = 2.5  # window half-width in cells


@dataclass(frozen=True)
class GridSpec:
    n: int = 32
    cell: float = 0.25
    origin: tuple[float, float] = (-3.875, -3.875)  # centre of cell (0, 0)
    frame: str = "world"

    @staticmethod
    def world_table(n: int = 32, half_extent: float = TABLE_HALF_EXTENT) -> "GridSpec":
        cell = 2.0 * half_extent / n
        o = -half_extent + cell / 2.0
        return GridSpec(n=n, cell=cell, origin=(o, o), frame="world")

    @staticmethod
    def tool_window(n: int = 32, cell: float = 0.25) -> "GridSpec":
        o = -(n / 2.0 - 0.5) * cell
        return GridSpec(n=n, cell=cell, origin=(o, o), frame="tool")


@dataclass
class GridMap:
    values: np.ndarray
    spec: GridSpec


def _stamp(points_xz: np.ndarray, values: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Accumulate per-particle values into the grid with the window kernel.

    Entries are added particle-major (ascending index), which np.add.at
    applies sequentially, so per-cell float summation order matches a naive
    per-particle loop exactly.
    """
    n, h = spec.n, spec.cell
    out = np.zeros(n * n)
    p = points_xz.shape[0]
    if p == 0:
        return out.reshape(n, n)
    ox, oz = spec.origin
    x = points_xz[:, 0]
    z = points_xz[:, 1]
    ic = np.floor((x - ox) / h + 0.5).astype(np.int64)
    jc = np.floor((z - oz) / h + 0.5).astype(np.int64)
    d = np.arange(-2, 3)
    ii = ic[:, None] + d[None, :]              # (P, 5)
    jj = jc[:, None] + d[None, :]
    wx = WINDOW_FACTOR * h - np.abs(x[:, None] - (ox + ii * h))
    wz = WINDOW_FACTOR * h - np.abs(z[:, None] - (oz + jj * h))
    okx = (wx > 0.0) & (ii >= 0) & (ii < n)    # (P, 5)
    okz = (wz > 0.0) & (jj >= 0) & (jj < n)
    w = np.sqrt((wx ** 2)[:, :, None] + (wz ** 2)[:, None, :])   # (P, 5, 5)
    valid = okx[:, :, None] & okz[:, None, :]
    flat = (ii[:, :, None] * n + jj[:, None, :]).reshape(p, 25)
    w = (w * values[:, None, None]).reshape(p, 25)
    mask = valid.reshape(p, 25)
    np.add.at(out, flat[mask], w[mask])
    return out.reshape(n, n)


def density_map(points_xz: np.ndarray, spec: GridSpec) -> GridMap:
    pts = np.asarray(points_xz, dtype=np.float64).reshape(-1, 2)
    return GridMap(_stamp(pts, np.ones(pts.shape[0]), spec), spec)


def density_and_height(points_xz: np.ndarray, heights: np.ndarray,
                       spec: GridSpec) -> tuple[GridMap, GridMap]:
    pts = np.asarray(points_xz, dtype=np.float64).reshape(-1, 2)
    heights = np.asarray(heights, dtype=np.float64).reshape(-1)
    dens = _stamp(pts, np.ones(pts.shape[0]), spec)
    num = _stamp(pts, heights, spec)
    occupied = dens > 0.0
    h = np.zeros_like(dens)
    h[occupied] = num[occupied] / dens[occupied]
    return GridMap(dens, spec), GridMap(h, spec)


def height_map(points_xz: np.ndarray, heights: np.ndarray, spec: GridSpec) -> GridMap:
    """Weighted mean height per cell; zero at unoccupied cells."""
    return density_and_height(points_xz, heights, spec)[1]


def goal_map(goal_xz: np.ndarray, radius: float, spec: GridSpec) -> GridMap:
    """Binary disk of the given radius rasterized by the cell-centre distance test."""
    goal = np.asarray(goal_xz, dtype=np.float64).reshape(2)
    if spec.frame == "world":
        half = TABLE_HALF_EXTENT
        if np.abs(goal).max() > half:
            raise ConfigurationError(f"goal {goal} outside table extent {half}")
    idx = np.arange(spec.n)
    cx = spec.origin[0] + idx * spec.cell
    cz = spec.origin[1] + idx * spec.cell
    d2 = (cx[:, None] - goal[0]) ** 2 + (cz[None, :] - goal[1]) ** 2
    return GridMap((d2 <= radius * radius).astype(np.float64), spec)


def to_tool_frame(points: np.ndarray, tool: ToolState) -> np.ndarray:
    """Map world points through the inverse of the tool's rigid transform."""
    if not np.all(np.isfinite(tool.q)):
        raise ConfigurationError("tool pose is not finite")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rot = tool.rotation()
    return (pts - tool.q[:3]) @ rot


def tool_observation(tool: ToolState) -> np.ndarray:
    """Tool state vector restricted to task-active DOFs.

    Layout: [positions, cos(angles), sin(angles), linear velocities,
    cos(angular velocities), sin(angular velocities)].
    """
    tmask = tool.dof_mask[:3]
    rmask = tool.dof_mask[3:]
    pos = tool.q[:3][tmask]
    ang = tool.q[3:][rmask]
    lin = tool.qdot[:3][tmask]
    angv = tool.qdot[3:][rmask]
    return np.concatenate([pos, np.cos(ang), np.sin(ang),
                           lin, np.cos(angv), np.sin(angv)])


@dataclass(frozen=True)
class ObservationSpec:
    """Which channels to build, in which frame, at which resolution."""

    channels: tuple[str, ...]        # of: "density", "height", "goal"
    frame: str = "tool"              # "tool" or "world"
    n: int = 32
    cell: float = 0.25
    goal_xz: tuple[float, float] = (0.0, 0.0)
    goal_radius: float = 1.0


@dataclass
class Observation:
    images: np.ndarray                # (M, N, N)
    tool_vec: np.ndarray              # (V,)
    extra_vec: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.tool_vec, self.extra_vec])


def assemble_observation(world: WorldState, spec: ObservationSpec,
                         extra_vec: np.ndarray | None = None) -> Observation:
    """Build the image stack and tool vector for the policy."""
    parts = world.particles
    if spec.frame == "tool":
        grid = GridSpec.tool_window(spec.n, spec.cell)
        local = to_tool_frame(parts.positions, world.tool) if parts.count else np.zeros((0, 3))
        pts = local[:, [0, 2]]
        heights = local[:, 1]
        goal_local = to_tool_frame(
            np.array([[spec.goal_xz[0], 0.0, spec.goal_xz[1]]]), world.tool)[0]
        goal_xz = goal_local[[0, 2]]
    elif spec.frame == "world":
        grid = GridSpec.world_table(spec.n, TABLE_HALF_EXTENT)
        pts = parts.positions[:, [0, 2]]
        heights = parts.positions[:, 1]
        goal_xz = np.asarray(spec.goal_xz, dtype=np.float64)
    else:
        raise ConfigurationError(f"unknown observation frame {spec.frame!r}")

    dens = hmap = None
    if "height" in spec.channels:
        dens, hmap = density_and_height(pts, heights, grid)
    elif "density" in spec.channels:
        dens = density_map(pts, grid)

    images = np.zeros((len(spec.channels), spec.n, spec.n))
    for k, name in enumerate(spec.channels):
        if name == "density":
            images[k] = dens.values
        elif name == "height":
            images[k] = hmap.values
        elif name == "goal":
            images[k] = goal_map(goal_xz, spec.goal_radius, grid).values
        else:
            raise ConfigurationError(f"unknown observation channel {name!r}")
        if not np.all(np.isfinite(images[k])):
            raise ObservationError(f"non-finite values in channel {k} ({name})")

    obs = Observation(images=images, tool_vec=tool_observation(world.tool),
                      extra_vec=np.zeros(0) if extra_vec is None
                      else np.asarray(extra_vec, dtype=np.float64))
    if not np.all(np.isfinite(obs.tool_vec)) or not np.all(np.isfinite(obs.extra_vec)):
        raise ObservationError("non-finite values in tool/extra vector")
    return obs


def write_pgm(grid: GridMap, path) -> None:
    """8-bit ASCII PGM with min/max recorded in a header comment.

    Pixels are min-max normalized per image; a constant image writes zeros.
    Row r of the image is grid row r (x index), columns are the z index.
    """
    v = grid.values
    lo = float(v.min()) if v.size else 0.0
    hi = float(v.max()) if v.size else 0.0
    if hi > lo:
        img = np.rint((v - lo) / (hi - lo) * 255.0).astype(np.int64)
    else:
        img = np.zeros_like(v, dtype=np.int64)
    lines = [
        "P2",
        f"# amorph grid frame={grid.spec.frame} min={lo!r} max={hi!r}",
        f"{grid.spec.n} {grid.spec.n}",
        "255",
    ]
    for row in img:
        lines.append(" ".join(str(int(x)) for x in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
