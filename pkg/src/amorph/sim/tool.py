"""Kinematic tool: PD control, analytic colliders, segment cut tests.

The tool never receives forces from the material (one-way coupling). Its pose
advances once per control step from a PD acceleration that is explicitly
integrated: q <- q + dt*qdot, qdot <- qdot + dt*qddot.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import InvalidActionError
from .types import PanGeometry, ScraperGeometry, SolverConfig, ToolState


def wrap_angle(x):
    """Map angles (or angular velocities) into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=np.float64), 2.0 * np.pi)


def tool_pd_step(tool: ToolState, target: np.ndarray, cfg: SolverConfig) -> ToolState:
    """Advance the tool one control step toward ``target`` (6-vector).

    Acceleration is kp*(target - q) - kd*qdot on active DOFs; masked DOFs are
    held fixed. Angular velocity components are wrapped into (-pi, pi].
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (6,) or not np.all(np.isfinite(target)):
        raise InvalidActionError(f"tool target must be a finite 6-vector, got {target!r}")
    active = tool.dof_mask
    qdd = cfg.kp * (target - tool.q) - cfg.kd_per_dof() * tool.qdot
    qdd = np.where(active, qdd, 0.0)
    q = tool.q + np.where(active, cfg.dt * tool.qdot, 0.0)
    qdot = tool.qdot + cfg.dt * qdd
    qdot[3:] = wrap_angle(qdot[3:])
    qdot = np.where(active, qdot, tool.qdot)
    return ToolState(q=q, qdot=qdot, dof_mask=tool.dof_mask.copy(), geometry=tool.geometry)


class ToolContacts(NamedTuple):
    corrections: np.ndarray  # (P, 3) world-frame position corrections
    depth: np.ndarray        # (P,) penetration depth (0 where no contact)
    normal: np.ndarray       # (P, 3) world-frame push direction


def _box_sdf_grad(local: np.ndarray, half: np.ndarray, center: np.ndarray):
    """Exact signed distance and gradient of an axis-aligned box."""
    rel = local - center
    sign = np.where(rel >= 0.0, 1.0, -1.0)
    q = np.abs(rel) - half
    qpos = np.maximum(q, 0.0)
    out_dist = np.linalg.norm(qpos, axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    sdf = out_dist + inside

    grad = np.zeros_like(local)
    is_out = out_dist > 0.0
    safe = np.where(is_out, out_dist, 1.0)
    grad_out = (qpos * sign) / safe[:, None]
    # inside: push along the axis of least penetration
    axis = np.argmax(q, axis=1)
    grad_in = np.zeros_like(local)
    rows = np.arange(local.shape[0])
    grad_in[rows, axis] = sign[rows, axis]
    grad = np.where(is_out[:, None], grad_out, grad_in)
    return sdf, grad


def _radial_dirs(local: np.ndarray):
    x = local[:, 0]
    z = local[:, 2]
    rho = np.hypot(x, z)
    safe_rho = np.where(rho > 0.0, rho, 1.0)
    erho = np.stack([x / safe_rho, np.zeros_like(x), z / safe_rho], axis=1)
    erho[rho == 0.0] = np.array([1.0, 0.0, 0.0])  # arbitrary radial direction on axis
    return rho, erho


def _profile_sdf_grad(local: np.ndarray, q1, s1, q2, s2):
    """Combine radial/vertical signed excesses (q1, q2) into a 3D SDF + gradient.

    q1/q2 follow the 2D-box convention (negative inside); s1/s2 are the
    outward direction signs along the radial and vertical axes.
    """
    _, erho = _radial_dirs(local)
    a = np.maximum(q1, 0.0)
    b = np.maximum(q2, 0.0)
    out_dist = np.hypot(a, b)
    inside = np.minimum(np.maximum(q1, q2), 0.0)
    sdf = out_dist + inside

    ey = np.zeros_like(local)
    ey[:, 1] = 1.0
    safe = np.where(out_dist > 0.0, out_dist, 1.0)
    grad_out = (a[:, None] * erho * s1[:, None] + b[:, None] * ey * s2[:, None]) / safe[:, None]
    grad_in = np.where((q1 > q2)[:, None], erho * s1[:, None], ey * s2[:, None])
    grad = np.where((out_dist > 0.0)[:, None], grad_out, grad_in)
    return sdf, grad


def _cylinder_sdf_grad(local: np.ndarray, radius: float, y_lo: float, y_hi: float):
    """Solid capped cylinder around the local y axis."""
    rho, _ = _radial_dirs(local)
    y = local[:, 1]
    y_c = 0.5 * (y_lo + y_hi)
    q1 = rho - radius
    q2 = np.abs(y - y_c) - 0.5 * (y_hi - y_lo)
    s1 = np.ones_like(q1)  # only an outer radial face
    s2 = np.where(y - y_c >= 0.0, 1.0, -1.0)
    return _profile_sdf_grad(local, q1, s1, q2, s2)


def _ring_sdf_grad(local: np.ndarray, rho_c: float, rho_half: float,
                   y_c: float, y_half: float):
    """Annular ring (revolved box); both radial faces are real surfaces."""
    rho, _ = _radial_dirs(local)
    y = local[:, 1]
    q1 = np.abs(rho - rho_c) - rho_half
    q2 = np.abs(y - y_c) - y_half
    s1 = np.where(rho - rho_c >= 0.0, 1.0, -1.0)
    s2 = np.where(y - y_c >= 0.0, 1.0, -1.0)
    return _profile_sdf_grad(local, q1, s1, q2, s2)


def tool_sdf_grad(local: np.ndarray, geometry):
    """Signed distance and outward gradient of the collider, in tool-local frame."""
    if isinstance(geometry, ScraperGeometry):
        half = np.array([geometry.width / 2.0, geometry.height / 2.0, geometry.thickness / 2.0])
        center = np.array([0.0, geometry.height / 2.0, 0.0])
        return _box_sdf_grad(local, half, center)
    if isinstance(geometry, PanGeometry):
        floor_sdf, floor_grad = _cylinder_sdf_grad(
            local, radius=geometry.radius, y_lo=-geometry.base_thickness, y_hi=0.0)
        rim_sdf, rim_grad = _ring_sdf_grad(
            local, rho_c=geometry.radius - geometry.rim_thickness / 2.0,
            rho_half=geometry.rim_thickness / 2.0,
            y_c=geometry.rim_height / 2.0, y_half=geometry.rim_height / 2.0)
        pick_floor = floor_sdf <= rim_sdf
        sdf = np.where(pick_floor, floor_sdf, rim_sdf)
        grad = np.where(pick_floor[:, None], floor_grad, rim_grad)
        return sdf, grad
    raise TypeError(f"unknown tool geometry {geometry!r}")


def tool_bound_radius(geometry) -> float:
    """Radius of a ball around the local origin containing the collider."""
    if isinstance(geometry, ScraperGeometry):
        return float(np.linalg.norm([geometry.width / 2, geometry.height,
                                     geometry.thickness / 2]))
    if isinstance(geometry, PanGeometry):
        return float(np.hypot(geometry.radius,
                              max(geometry.rim_height, geometry.base_thickness)))
    raise TypeError(f"unknown tool geometry {geometry!r}")


def collide_tool(particles, tool: ToolState, rot: np.ndarray | None = None) -> ToolContacts:
    """Project particles out of the tool collider.

    Particles whose centre is closer than one radius to the collider surface
    (or inside it) are pushed to the nearest surface point plus radius, along
    the local SDF gradient. A bounding-sphere prune skips the SDF for
    particles that cannot possibly touch the tool.
    """
    p = particles.count
    if p == 0:
        z = np.zeros((0, 3))
        return ToolContacts(z, np.zeros(0), z.copy())
    if rot is None:
        rot = tool.rotation()
    rel = particles.positions - tool.q[:3]
    bound = tool_bound_radius(tool.geometry) + particles.radius
    near = np.einsum("ij,ij->i", rel, rel) < bound * bound
    corrections = np.zeros((p, 3))
    depth = np.zeros(p)
    normal_world = np.zeros((p, 3))
    if near.any():
        local = rel[near] @ rot
        sdf, grad = tool_sdf_grad(local, tool.geometry)
        d = np.maximum(particles.radius - sdf, 0.0)
        nw = grad @ rot.T
        depth[near] = d
        normal_world[near] = nw
        corrections[near] = d[:, None] * nw
    return ToolContacts(corrections, depth, normal_world)


def _interval_intersect(a, b):
    return max(a[0], b[0]), min(a[1], b[1])


def _linear_band(a: float, d: float, lo: float, hi: float):
    """t-interval where lo <= a + t*d <= hi (possibly empty: start > end)."""
    if d == 0.0:
        return (-np.inf, np.inf) if lo <= a <= hi else (np.inf, -np.inf)
    t0 = (lo - a) / d
    t1 = (hi - a) / d
    return (t0, t1) if t0 <= t1 else (t1, t0)


def _quad_disk(axz: np.ndarray, dxz: np.ndarray, r2: float):
    """t-interval where |axz + t*dxz|^2 <= r2."""
    a2 = float(dxz @ dxz)
    b = 2.0 * float(axz @ dxz)
    c = float(axz @ axz) - r2
    if a2 == 0.0:
        return (-np.inf, np.inf) if c <= 0.0 else (np.inf, -np.inf)
    disc = b * b - 4.0 * a2 * c
    if disc < 0.0:
        return (np.inf, -np.inf)
    s = np.sqrt(disc)
    return ((-b - s) / (2.0 * a2), (-b + s) / (2.0 * a2))


def segment_intersects_tool(p0: np.ndarray, p1: np.ndarray, tool: ToolState) -> bool:
    """True iff the world-space segment p0-p1 passes through the collider volume."""
    rot = tool.rotation()
    a = rot.T @ (np.asarray(p0, dtype=np.float64) - tool.q[:3])
    b = rot.T @ (np.asarray(p1, dtype=np.float64) - tool.q[:3])
    d = b - a
    geom = tool.geometry

    if isinstance(geom, ScraperGeometry):
        t = (0.0, 1.0)
        for axis, lo, hi in ((0, -geom.width / 2, geom.width / 2),
                             (1, 0.0, geom.height),
                             (2, -geom.thickness / 2, geom.thickness / 2)):
            t = _interval_intersect(t, _linear_band(a[axis], d[axis], lo, hi))
            if t[0] > t[1]:
                return False
        return True

    if isinstance(geom, PanGeometry):
        axz = a[[0, 2]]
        dxz = d[[0, 2]]
        # pan floor: rho <= R and y in [-base_thickness, 0]
        t = _interval_intersect((0.0, 1.0), _linear_band(a[1], d[1], -geom.base_thickness, 0.0))
        t = _interval_intersect(t, _quad_disk(axz, dxz, geom.radius ** 2))
        if t[0] <= t[1]:
            return True
        # rim ring: R - rim_thickness <= rho <= R and y in [0, rim_height]
        t = _interval_intersect((0.0, 1.0), _linear_band(a[1], d[1], 0.0, geom.rim_height))
        t = _interval_intersect(t, _quad_disk(axz, dxz, geom.radius ** 2))
        if t[0] > t[1]:
            return False
        inner = _quad_disk(axz, dxz, (geom.radius - geom.rim_thickness) ** 2)
        if inner[0] > inner[1]:
            return True  # never dips inside the inner cylinder
        return t[0] < inner[0] or t[1] > inner[1]

    raise TypeError(f"unknown tool geometry {geom!r}")
