"""Uniform spatial hash for neighbor queries on particle sets.

Cells are cubes of a fixed size; a query with cutoff c inspects
ceil(c / cell_size) rings of cells around each occupied cell. Pair lists are
returned sorted by (i, j), so downstream constraint loops are deterministic
regardless of hash iteration order.
"""

from __future__ import annotations

import numpy as np


class SpatialHash:
    def __init__(self, cell_size: float):
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.cell_size = float(cell_size)
        self._cells: dict[tuple, np.ndarray] = {}
        self._count = 0

    def build(self, positions: np.ndarray) -> None:
        self._count = positions.shape[0]
        self._cells = {}
        if self._count == 0:
            return
        coords = np.floor(positions / self.cell_size).astype(np.int64)
        order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
        sorted_coords = coords[order]
        # group boundaries of equal consecutive cell coords
        change = np.any(np.diff(sorted_coords, axis=0) != 0, axis=1)
        starts = np.concatenate(([0], np.flatnonzero(change) + 1, [self._count]))
        for a, b in zip(starts[:-1], starts[1:]):
            key = tuple(sorted_coords[a])
            self._cells[key] = np.sort(order[a:b])

    def query_pairs(self, positions: np.ndarray, cutoff: float) -> np.ndarray:
        """All index pairs (i < j) with ||x_i - x_j|| < cutoff, sorted by (i, j)."""
        if self._count < 2:
            return np.zeros((0, 2), dtype=np.int64)
        rings = int(np.ceil(cutoff / self.cell_size))
        offsets = [(dx, dy, dz)
                   for dx in range(-rings, rings + 1)
                   for dy in range(-rings, rings + 1)
                   for dz in range(-rings, rings + 1)]
        blocks = []
        for key, members in self._cells.items():
            for off in offsets:
                other = self._cells.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]))
                if other is None:
                    continue
                ii = np.repeat(members, other.shape[0])
                jj = np.tile(other, members.shape[0])
                keep = ii < jj
                if keep.any():
                    blocks.append(np.stack([ii[keep], jj[keep]], axis=1))
        if not blocks:
            return np.zeros((0, 2), dtype=np.int64)
        pairs = np.concatenate(blocks, axis=0)
        d = positions[pairs[:, 0]] - positions[pairs[:, 1]]
        close = np.einsum("ij,ij->i", d, d) < cutoff * cutoff
        pairs = pairs[close]
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]


_TRIU_CACHE: dict = {}


def _triu_pairs(p: int):
    cached = _TRIU_CACHE.get(p)
    if cached is None:
        cached = np.triu_indices(p, k=1)
        if len(_TRIU_CACHE) < 64:
            _TRIU_CACHE[p] = cached
    return cached


def brute_force_pairs(positions: np.ndarray, cutoff: float) -> np.ndarray:
    """Reference O(P^2) pair search, same output contract as query_pairs."""
    p = positions.shape[0]
    if p < 2:
        return np.zeros((0, 2), dtype=np.int64)
    ii, jj = _triu_pairs(p)
    d = positions[ii] - positions[jj]
    close = np.einsum("ij,ij->i", d, d) < cutoff * cutoff
    return np.stack([ii[close], jj[close]], axis=1).astype(np.int64)
