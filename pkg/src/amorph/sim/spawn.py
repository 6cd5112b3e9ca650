"""Initial particle placement: jitter-packed clusters above the table."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from .types import Material, ParticleSystem, TABLE_HALF_EXTENT


def _lattice_offsets(capacity: int, spacing: float) -> np.ndarray:
    """First `capacity` square-lattice points sorted by distance from origin."""
    side = int(np.ceil(np.sqrt(capacity))) + 2
    ii, jj = np.meshgrid(np.arange(-side, side + 1), np.arange(-side, side + 1),
                         indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    order = np.lexsort((jj, ii, ii * ii + jj * jj))
    pick = order[:capacity]
    return np.stack([ii[pick] * spacing, jj[pick] * spacing], axis=1)


def spawn_cluster(center, count: int, material: Material, spacing: float,
                  seed, radius: float = 0.05, layer_capacity: int | None = None,
                  table_half_extent: float = TABLE_HALF_EXTENT) -> ParticleSystem:
    """Deterministically pack `count` particles in layered disks around `center`.

    Layers stack upward from the table; in-plane positions get a small seeded
    jitter so packings are not degenerate. Raises if the cluster would poke
    past the table boundary.
    """
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    if spacing < 2.0 * radius * 0.9:
        raise ConfigurationError("spacing must be at least 0.9 particle diameters")
    center = np.asarray(center, dtype=np.float64).reshape(2)

    if layer_capacity is None:
        layer_capacity = max(7, int(np.ceil(1.3 * count ** (2.0 / 3.0))))
    rng = np.random.default_rng(seed)
    offsets = _lattice_offsets(min(count, layer_capacity), spacing)

    positions = np.zeros((count, 3))
    for k in range(count):
        layer, slot = divmod(k, layer_capacity)
        jitter = rng.uniform(-0.1 * spacing, 0.1 * spacing, size=2)
        positions[k, 0] = center[0] + offsets[slot, 0] + jitter[0]
        positions[k, 2] = center[1] + offsets[slot, 1] + jitter[1]
        positions[k, 1] = radius + 1e-4 + layer * spacing

    reach = np.max(np.abs(positions[:, [0, 2]]))
    if reach > table_half_extent - radius:
        raise ConfigurationError(
            f"cluster at {center} (reach {reach:.2f} m) overlaps the table boundary")
    return ParticleSystem.from_positions(positions, radius, material)
