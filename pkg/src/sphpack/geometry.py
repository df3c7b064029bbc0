"""2D polygonal boundaries: parsing, validation, refinement, containment, seeding.

A boundary is a set of closed vertex loops.  Outer loops are counterclockwise
(positive signed area), holes are clockwise; with the interior always to the
left of each directed edge, the inward normal of every edge is the +90 degree
rotation of its direction.  Loops are decomposed into straight segments which
may be refined to a target length below the particle spacing.

Boundary sets are immutable after construction and safe to share across
threads; construction itself is single-threaded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .particles import ParticleSet


class BoundaryError(ValueError):
    """Invalid boundary definition (grammar, degeneracy, orientation, intersection)."""


@dataclass(frozen=True)
class Segment:
    """Single boundary segment view: endpoints, inward unit normal, centroid."""

    a: np.ndarray
    b: np.ndarray
    normal: np.ndarray
    length: float
    loop_id: int
    centroid: np.ndarray
    edge_id: int


def signed_area(loop: np.ndarray) -> float:
    """Signed polygon area (counterclockwise positive) via the shoelace formula."""
    x, y = loop[:, 0], loop[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def _edge_normals(pa: np.ndarray, pb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inward normals (+90 degree rotation of the edge direction) and edge lengths."""
    e = pb - pa
    length = np.linalg.norm(e, axis=1)
    if np.any(length <= 0.0):
        raise BoundaryError("zero-length edge in boundary loop")
    t = e / length[:, None]
    normal = np.stack([-t[:, 1], t[:, 0]], axis=1)
    return normal, length


def _segments_properly_intersect(pa, pb, qa, qb) -> np.ndarray:
    """Proper (interior) crossing test for segment arrays, broadcasting pairwise."""

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (
            q[..., 1] - p[..., 1]
        ) * (r[..., 0] - p[..., 0])

    o1 = orient(pa, pb, qa)
    o2 = orient(pa, pb, qb)
    o3 = orient(qa, qb, pa)
    o4 = orient(qa, qb, pb)
    return (o1 * o2 < 0.0) & (o3 * o4 < 0.0)


@dataclass(frozen=True)
class BoundarySet:
    """Oriented polygonal loops decomposed into segments with inward normals.

    ``loops`` drives containment queries; the segment arrays (possibly refined)
    drive nearest-boundary queries and wall integrals.  ``seg_edge`` maps each
    segment back to the original polygon edge it subdivides.
    """

    loops: list = field(repr=False)
    seg_a: np.ndarray = field(repr=False)
    seg_b: np.ndarray = field(repr=False)
    seg_normal: np.ndarray = field(repr=False)
    seg_length: np.ndarray = field(repr=False)
    seg_loop: np.ndarray = field(repr=False)
    seg_edge: np.ndarray = field(repr=False)
    bbox: np.ndarray = field(repr=False)

    @property
    def n_segments(self) -> int:
        return len(self.seg_a)

    @property
    def seg_centroid(self) -> np.ndarray:
        return 0.5 * (self.seg_a + self.seg_b)

    @property
    def total_length(self) -> float:
        return float(np.sum(self.seg_length))

    def segment(self, i: int) -> Segment:
        return Segment(
            a=self.seg_a[i].copy(),
            b=self.seg_b[i].copy(),
            normal=self.seg_normal[i].copy(),
            length=float(self.seg_length[i]),
            loop_id=int(self.seg_loop[i]),
            centroid=0.5 * (self.seg_a[i] + self.seg_b[i]),
            edge_id=int(self.seg_edge[i]),
        )

    @classmethod
    def from_loops(cls, loops, validate: bool = True) -> "BoundarySet":
        loops = [np.ascontiguousarray(lp, dtype=float) for lp in loops]
        if not loops:
            raise BoundaryError("boundary needs at least one loop")
        for lp in loops:
            if lp.ndim != 2 or lp.shape[1] != 2 or len(lp) < 3:
                raise BoundaryError("each loop needs at least 3 two-dimensional vertices")
            if not np.all(np.isfinite(lp)):
                raise BoundaryError("non-finite vertex coordinate")
        pa = np.concatenate([lp for lp in loops])
        pb = np.concatenate([np.roll(lp, -1, axis=0) for lp in loops])
        loop_id = np.concatenate(
            [np.full(len(lp), i, dtype=np.intp) for i, lp in enumerate(loops)]
        )
        normal, length = _edge_normals(pa, pb)
        edge_id = np.arange(len(pa), dtype=np.intp)
        bbox = np.array(
            [pa.min(axis=0), pa.max(axis=0)]
        )
        b = cls(
            loops=loops,
            seg_a=pa,
            seg_b=pb,
            seg_normal=normal,
            seg_length=length,
            seg_loop=loop_id,
            seg_edge=edge_id,
            bbox=bbox,
        )
        if validate:
            b._validate()
        return b

    def _validate(self):
        self._check_self_intersection()
        self._check_orientation()

    def _check_self_intersection(self):
        # O(E^2) pairwise test; acceptable at load time for desk-scale loops.
        n = self.n_segments
        if n < 2:
            return
        pa, pb = self.seg_a, self.seg_b
        i, j = np.triu_indices(n, k=1)
        hit = _segments_properly_intersect(pa[i], pb[i], pa[j], pb[j])
        if np.any(hit):
            k = np.argmax(hit)
            raise BoundaryError(
                f"boundary edges {i[k]} and {j[k]} intersect (self-intersecting loop)"
            )

    def _check_orientation(self):
        # A loop nested inside an odd number of other loops bounds a hole and
        # must be clockwise; even nesting depth (outer) must be counterclockwise.
        for i, lp in enumerate(self.loops):
            probe = 0.5 * (lp[0] + lp[1])
            depth = 0
            for j, other in enumerate(self.loops):
                if i != j and _point_in_loop(other, probe):
                    depth += 1
            area = signed_area(lp)
            if depth % 2 == 0 and area <= 0.0:
                raise BoundaryError(f"outer loop {i} must be counterclockwise")
            if depth % 2 == 1 and area >= 0.0:
                raise BoundaryError(f"hole loop {i} must be clockwise")

    def without_edges(self, edge_ids) -> "BoundarySet":
        """Segment subset excluding the given original edges (for open wall sets).

        The returned object keeps the full loops for containment but drops the
        excluded segments from all wall queries/integrals.
        """
        drop = np.isin(self.seg_edge, np.asarray(edge_ids, dtype=np.intp))
        keep = ~drop
        return BoundarySet(
            loops=self.loops,
            seg_a=self.seg_a[keep],
            seg_b=self.seg_b[keep],
            seg_normal=self.seg_normal[keep],
            seg_length=self.seg_length[keep],
            seg_loop=self.seg_loop[keep],
            seg_edge=self.seg_edge[keep],
            bbox=self.bbox,
        )


def _point_in_loop(loop: np.ndarray, p) -> bool:
    """Even-odd ray cast against a single loop, half-open edge rule."""
    x, y = float(p[0]), float(p[1])
    x1, y1 = loop[:, 0], loop[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    cond = (y1 <= y) != (y2 <= y)
    dy = np.where(cond, y2 - y1, 1.0)
    xint = x1 + (y - y1) * (x2 - x1) / dy
    return bool(np.sum(cond & (x < xint)) % 2)


def parse_boundary(text: str) -> BoundarySet:
    """Parse the plain-text boundary format into a validated BoundarySet.

    Grammar: ``#`` starts a comment line; ``loop <n>`` begins a closed loop of
    n vertices, followed by n lines ``<x1> <x2>`` in meters.  Multiple loops
    allowed; orientation encodes outer (CCW) versus hole (CW).
    """
    lines = []
    for raw in text.splitlines():
        s = raw.strip()
        if s and not s.startswith("#"):
            lines.append(s)
    loops = []
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] != "loop" or len(parts) != 2:
            raise BoundaryError(f"expected 'loop <n>', got {lines[i]!r}")
        try:
            n = int(parts[1])
        except ValueError:
            raise BoundaryError(f"bad vertex count in {lines[i]!r}") from None
        if n < 3:
            raise BoundaryError(f"loop needs at least 3 vertices, got {n}")
        if i + n >= len(lines) + 1 and len(lines) - i - 1 < n:
            raise BoundaryError(f"loop declares {n} vertices but file ends early")
        verts = []
        for k in range(n):
            toks = lines[i + 1 + k].split()
            if len(toks) != 2:
                raise BoundaryError(f"expected '<x1> <x2>', got {lines[i + 1 + k]!r}")
            try:
                verts.append((float(toks[0]), float(toks[1])))
            except ValueError:
                raise BoundaryError(f"bad coordinate in {lines[i + 1 + k]!r}") from None
        loops.append(np.array(verts, dtype=float))
        i += 1 + n
    return BoundarySet.from_loops(loops)


def format_boundary(b: BoundarySet) -> str:
    """Serialize loops back to the boundary file format (17 significant digits)."""
    out = []
    for lp in b.loops:
        out.append(f"loop {len(lp)}")
        for v in lp:
            out.append(f"{v[0]:.17g} {v[1]:.17g}")
    return "\n".join(out) + "\n"


def refine_segments(b: BoundarySet, dx_r: float) -> BoundarySet:
    """Split every segment of length L into floor(L/dx_r) + 1 equal pieces.

    The strict count guarantees every refined length is below dx_r even when L
    is an exact multiple.  Normals are inherited from the parent segment, so
    refinement preserves normal directions exactly and total length to roundoff.
    """
    if not dx_r > 0.0:
        raise ValueError("dx_r must be positive")
    counts = np.floor(b.seg_length / dx_r).astype(np.intp) + 1
    total = int(np.sum(counts))
    pa = np.empty((total, 2))
    pb = np.empty((total, 2))
    normal = np.empty((total, 2))
    length = np.empty(total)
    loop_id = np.empty(total, dtype=np.intp)
    edge_id = np.empty(total, dtype=np.intp)
    pos = 0
    for i in range(b.n_segments):
        k = counts[i]
        t = np.linspace(0.0, 1.0, k + 1)[:, None]
        pts = b.seg_a[i] + t * (b.seg_b[i] - b.seg_a[i])
        pa[pos : pos + k] = pts[:-1]
        pb[pos : pos + k] = pts[1:]
        normal[pos : pos + k] = b.seg_normal[i]
        length[pos : pos + k] = np.linalg.norm(pts[1:] - pts[:-1], axis=1)
        loop_id[pos : pos + k] = b.seg_loop[i]
        edge_id[pos : pos + k] = b.seg_edge[i]
        pos += k
    return BoundarySet(
        loops=b.loops,
        seg_a=pa,
        seg_b=pb,
        seg_normal=normal,
        seg_length=length,
        seg_loop=loop_id,
        seg_edge=edge_id,
        bbox=b.bbox,
    )


def contains(b: BoundarySet, p) -> bool:
    """True iff p is strictly inside the fluid region (even-odd over all loops)."""
    return bool(contains_many(b, np.asarray(p, dtype=float)[None, :])[0])


def contains_many(b: BoundarySet, pts: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Vectorized even-odd ray casting with the half-open (lower endpoint) rule."""
    pts = np.asarray(pts, dtype=float)
    out = np.zeros(len(pts), dtype=bool)
    edges = []
    for lp in b.loops:
        x1, y1 = lp[:, 0], lp[:, 1]
        x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
        edges.append((x1, y1, x2, y2))
    for s in range(0, len(pts), chunk):
        px = pts[s : s + chunk, 0][:, None]
        py = pts[s : s + chunk, 1][:, None]
        crossings = np.zeros(px.shape[0], dtype=np.int64)
        for x1, y1, x2, y2 in edges:
            cond = (y1[None, :] <= py) != (y2[None, :] <= py)
            dy = np.where(cond, (y2 - y1)[None, :], 1.0)
            xint = x1[None, :] + (py - y1[None, :]) * (x2 - x1)[None, :] / dy
            crossings += np.sum(cond & (px < xint), axis=1)
        out[s : s + chunk] = (crossings % 2).astype(bool)
    return out


def winding_contains(b: BoundarySet, p) -> bool:
    """Containment by brute-force angle winding (independent cross-check)."""
    p = np.asarray(p, dtype=float)
    total = 0.0
    for lp in b.loops:
        v1 = lp - p
        v2 = np.roll(lp, -1, axis=0) - p
        ang = np.arctan2(
            v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0],
            v1[:, 0] * v2[:, 0] + v1[:, 1] * v2[:, 1],
        )
        total += np.sum(ang)
    # Winding number; outer CCW contributes +2pi, enclosing holes (CW) -2pi.
    return abs(total) > np.pi


def nearest_boundary(b: BoundarySet, p) -> tuple[int, float, np.ndarray]:
    """Nearest segment to p: (segment id, distance, foot point); ties -> lowest id."""
    p = np.asarray(p, dtype=float)
    e = b.seg_b - b.seg_a
    ee = np.einsum("ij,ij->i", e, e)
    t = np.einsum("ij,ij->i", p[None, :] - b.seg_a, e) / ee
    t = np.clip(t, 0.0, 1.0)
    foot = b.seg_a + t[:, None] * e
    d2 = np.einsum("ij,ij->i", foot - p[None, :], foot - p[None, :])
    i = int(np.argmin(d2))
    return i, float(np.sqrt(d2[i])), foot[i]


def nearest_distance_many(b: BoundarySet, pts: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Minimum point-to-segment distance for many points at once."""
    pts = np.asarray(pts, dtype=float)
    e = b.seg_b - b.seg_a
    ee = np.einsum("ij,ij->i", e, e)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        block = pts[s : s + chunk]
        # (m, nseg) parameter of the foot point, clamped to the segment
        t = (
            np.einsum("mj,nj->mn", block, e)
            - np.einsum("nj,nj->n", b.seg_a, e)[None, :]
        ) / ee[None, :]
        np.clip(t, 0.0, 1.0, out=t)
        fx = b.seg_a[None, :, 0] + t * e[None, :, 0]
        fy = b.seg_a[None, :, 1] + t * e[None, :, 1]
        d2 = (fx - block[:, 0:1]) ** 2 + (fy - block[:, 1:2]) ** 2
        out[s : s + chunk] = np.sqrt(d2.min(axis=1))
    return out


def seed_grid(b: BoundarySet, dx_r: float) -> ParticleSet:
    """One particle per interior Cartesian cell center; volume dx_r^2, flags cleared.

    The grid is anchored at the bounding-box minimum with cell size dx_r; a cell
    contributes a particle iff its center is strictly inside the fluid region.
    Seeds are not filtered by wall distance: near-wall seeds are handled by the
    packing boundary force.
    """
    if not dx_r > 0.0:
        raise ValueError("dx_r must be positive")
    lo, hi = b.bbox[0], b.bbox[1]
    extent = hi - lo
    if np.any(extent <= 0.0):
        raise BoundaryError("boundary bounding box is empty")
    nx = max(int(np.ceil(extent[0] / dx_r - 1e-12)), 1)
    ny = max(int(np.ceil(extent[1] / dx_r - 1e-12)), 1)
    cx = lo[0] + (np.arange(nx) + 0.5) * dx_r
    cy = lo[1] + (np.arange(ny) + 0.5) * dx_r
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    inside = contains_many(b, centers)
    pos = centers[inside]
    if len(pos) == 0:
        raise BoundaryError(
            f"no particles seeded: geometry too small for spacing dx_r={dx_r}"
        )
    return ParticleSet.from_positions(pos, dx_r)
