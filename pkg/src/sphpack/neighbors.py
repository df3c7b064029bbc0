"""Cell-linked-list neighbor search with a restrictable particle universe.

Cell size equals the kernel support 2h, so any pair within support sits in
adjacent cells.  Query results use the closed ball |x_a - x_b| <= 2h (the
kernel vanishes at exactly 2h, so the convention cannot change any physics
sum) and are sorted by particle id so reductions are order-deterministic.
The index is rebuilt from scratch whenever positions change; queries are
read-only and thread-safe after construction.
"""

from __future__ import annotations

import numpy as np

from . import geometry
from .kernel import KernelSpec
from .particles import ParticleSet

_OFFSETS = [(ox, oy) for ox in (-1, 0, 1) for oy in (-1, 0, 1)]


def _expand_ranges(starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    counts = ends - starts
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.intp)
    base = np.repeat(starts, counts)
    group_start = np.repeat(np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    return base + (np.arange(total) - group_start)


class NeighborIndex:
    """Bucketed particle ids over a uniform grid of cell size 2h."""

    def __init__(self, positions: np.ndarray, universe, spec: KernelSpec):
        self.positions = np.asarray(positions, dtype=float)
        self.universe = np.asarray(universe, dtype=np.intp)
        self.spec = spec
        self.cell = spec.support
        if len(self.universe) == 0:
            self.origin = np.zeros(2)
            self._keys = np.empty(0, dtype=np.int64)
            self._members = np.empty(0, dtype=np.intp)
            self._stride = 1
            return
        pts = self.positions[self.universe]
        self.origin = pts.min(axis=0)
        c = np.floor((pts - self.origin) / self.cell).astype(np.int64)
        self._stride = int(c[:, 1].max()) + 3
        keys = c[:, 0] * self._stride + c[:, 1]
        order = np.lexsort((self.universe, keys))
        self._keys = keys[order]
        self._members = self.universe[order]

    def _cell_coords(self, pts: np.ndarray) -> np.ndarray:
        return np.floor((pts - self.origin) / self.cell).astype(np.int64)

    def query_points(self, pts: np.ndarray, exclude=None):
        """Candidate (query row, member id) pairs from the 3x3 neighborhoods."""
        pts = np.atleast_2d(pts)
        if len(self._keys) == 0:
            return (np.empty(0, dtype=np.intp),) * 2
        c = self._cell_coords(pts)
        rows = []
        members = []
        for ox, oy in _OFFSETS:
            key = (c[:, 0] + ox) * self._stride + (c[:, 1] + oy)
            left = np.searchsorted(self._keys, key, side="left")
            right = np.searchsorted(self._keys, key, side="right")
            counts = right - left
            if not np.any(counts > 0):
                continue
            rows.append(np.repeat(np.arange(len(pts)), counts))
            members.append(self._members[_expand_ranges(left, right)])
        if not rows:
            return (np.empty(0, dtype=np.intp),) * 2
        return np.concatenate(rows), np.concatenate(members)

    def neighbors(self, a=None, point=None):
        """Universe particles within 2h of particle ``a`` or probe ``point``.

        Returns (ids, displacements x_query - x_b, distances), sorted by id;
        id queries exclude the particle itself.
        """
        if (a is None) == (point is None):
            raise ValueError("pass exactly one of particle id or probe point")
        p = self.positions[a] if a is not None else np.asarray(point, dtype=float)
        _, cand = self.query_points(p[None, :])
        if a is not None:
            cand = cand[cand != a]
        if len(cand) == 0:
            return cand, np.empty((0, 2)), np.empty(0)
        disp = p[None, :] - self.positions[cand]
        dist = np.linalg.norm(disp, axis=1)
        keep = dist <= self.cell
        cand, disp, dist = cand[keep], disp[keep], dist[keep]
        order = np.argsort(cand)
        return cand[order], disp[order], dist[order]

    def pairs(self, query_ids):
        """Directed pairs (a, b, x_a - x_b, |x_a - x_b|) for all a in query_ids.

        b ranges over the universe, excludes a itself, closed ball at 2h.
        Rows are sorted by (a, b) so accumulated sums are order-deterministic.
        """
        query_ids = np.asarray(query_ids, dtype=np.intp)
        rows, cand = self.query_points(self.positions[query_ids])
        if len(rows) == 0:
            return (
                np.empty(0, dtype=np.intp),
                np.empty(0, dtype=np.intp),
                np.empty((0, 2)),
                np.empty(0),
            )
        A = query_ids[rows]
        keep = A != cand
        A, B = A[keep], cand[keep]
        disp = self.positions[A] - self.positions[B]
        dist = np.linalg.norm(disp, axis=1)
        close = dist <= self.cell
        A, B, disp, dist = A[close], B[close], disp[close], dist[close]
        order = np.lexsort((B, A))
        return A[order], B[order], disp[order], dist[order]


def select_near_boundary(pset: ParticleSet, b: geometry.BoundarySet, spec: KernelSpec):
    """Masks for the packing phases: packable within 2h, selected within 4h.

    Packable particles (wall distance <= k_a = 2h) are the ones shifted near
    the boundary; selected particles (<= k_a + 2h) complete their kernel
    support.  packable implies selected.
    """
    d = geometry.nearest_distance_many(b, pset.pos)
    k_a = spec.support
    packable = d <= k_a
    selected = d <= k_a + spec.support
    return packable, selected
