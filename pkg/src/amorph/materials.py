"""Dynamic spring network for visco-plastic behavior, plus its elastic limit.

Springs live between particle pairs. Each update pass deletes springs that
are overstretched past the break distance or whose segment is cut by the
tool, plastically re-seats rest lengths outside the elastic ratio band, and
creates new springs between uncut pairs that drift within merge distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .sim.hashgrid import SpatialHash, brute_force_pairs
from .sim.tool import segment_intersects_tool
from .sim.types import Material, ParticleSystem, ToolState


@dataclass(frozen=True)
class SpringParams:
    d_m: float   # merge distance
    d_b: float   # break distance
    r_c: float   # compression ratio threshold
    r_s: float   # stretch ratio threshold

    def validate(self) -> None:
        if not (0.0 < self.d_m <= self.d_b):
            raise ConfigurationError("require 0 < d_m <= d_b")
        if not (0.0 <= self.r_c < 1.0 < self.r_s):
            raise ConfigurationError("require 0 <= r_c < 1 < r_s")


@dataclass
class SpringSet:
    """Unordered pair edges with rest lengths; keys are (i, j) with i < j."""

    params: SpringParams
    rest: dict[tuple[int, int], float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rest)

    def has(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.rest

    def add(self, i: int, j: int, length: float) -> None:
        if i == j:
            raise ConfigurationError("self-edges are not allowed")
        self.rest[(min(i, j), max(i, j))] = float(length)

    def sorted_edges(self):
        """Edges and rest lengths in canonical (i, j) order."""
        if not self.rest:
            return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
        keys = sorted(self.rest)
        edges = np.array(keys, dtype=np.int64)
        lengths = np.array([self.rest[k] for k in keys])
        return edges, lengths

    def copy(self) -> "SpringSet":
        return SpringSet(self.params, dict(self.rest))


def rest_length_update(d: float, d_rest: float, r_c: float, r_s: float) -> float:
    """New rest length for a spring at particle distance d.

    Outside the elastic band (ratio <= r_c or >= r_s) the spring yields and
    takes the current distance as its new rest length; inside it is unchanged.
    """
    if d_rest <= 0.0:
        raise ConfigurationError("rest length must be positive")
    if d < 0.0:
        raise ConfigurationError("distance must be non-negative")
    ratio = d / d_rest
    if ratio <= r_c or ratio >= r_s:
        return d
    return d_rest


def is_cut_by_tool(p_i: np.ndarray, p_j: np.ndarray, tool: ToolState) -> bool:
    """True iff the segment between two particle centres crosses the tool collider."""
    return segment_intersects_tool(p_i, p_j, tool)


def update_springs(particles: ParticleSystem, springs: SpringSet,
                   tool: ToolState) -> SpringSet:
    """One create/break/yield pass over the spring network.

    Existing springs survive only if their pair is closer than d_b and not cut
    by the tool; survivors get a rest-length update. Any uncut visco-plastic
    pair closer than d_m gains a spring at its current distance.
    """
    prm = springs.params
    pos = particles.positions
    out = SpringSet(prm)

    for (i, j), rest in springs.rest.items():
        d = float(np.linalg.norm(pos[i] - pos[j]))
        if d < prm.d_b and not is_cut_by_tool(pos[i], pos[j], tool):
            out.rest[(i, j)] = rest_length_update(d, rest, prm.r_c, prm.r_s)

    plastic = particles.material == int(Material.VISCO_PLASTIC)
    if plastic.any():
        pairs = _merge_candidates(particles, prm.d_m)
        for i, j in pairs:
            i, j = int(i), int(j)
            if not (plastic[i] and plastic[j]):
                continue
            if (i, j) in out.rest:
                continue
            if is_cut_by_tool(pos[i], pos[j], tool):
                continue
            out.rest[(i, j)] = float(np.linalg.norm(pos[i] - pos[j]))
    return out


def _merge_candidates(particles: ParticleSystem, d_m: float) -> np.ndarray:
    # hash pays off only past a few hundred particles; both paths return the
    # identical sorted pair list
    if particles.count <= 192:
        return brute_force_pairs(particles.positions, d_m)
    grid = SpatialHash(cell_size=2.0 * particles.radius)
    grid.build(particles.positions)
    return grid.query_pairs(particles.positions, d_m)


def elastic_spring_network(particles: ParticleSystem, connect_radius: float) -> SpringSet:
    """Static all-pairs-within-radius network; rest lengths never change.

    Equivalent to running the visco-plastic update with r_c=0, r_s=inf,
    d_b=inf, so the solver simply never calls update_springs on it.
    """
    if connect_radius <= 0:
        raise ConfigurationError("connect_radius must be positive")
    params = SpringParams(d_m=connect_radius, d_b=np.inf, r_c=0.0, r_s=np.inf)
    out = SpringSet(params)
    pairs = brute_force_pairs(particles.positions, connect_radius)
    pos = particles.positions
    for i, j in pairs:
        out.rest[(int(i), int(j))] = float(np.linalg.norm(pos[i] - pos[j]))
    return out
