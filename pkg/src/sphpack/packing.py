"""Concentration-gradient particle packing with boundary-integral wall terms.

Particles seeded on a Cartesian grid are shifted down the gradient of the
discrete concentration field C_a = sum_b V_b W_ab / gamma_a until the
distribution conforms to the boundary and the gradient is small.  A step
boundary force keeps the first particle layer about half a spacing off the
wall, a freeze stage then locks that layer, and the interior is relaxed last.

The driver runs three stages:

- boundary stage (records labelled "2a"): only particles within k_a = 2h of the
  wall are shifted, against a "selected" support band of width k_a + 2h;
  stops when the windowed average of total particle displacement flattens.
- freeze stage: particles whose gamma is below the straight-wall value at
  distance k_b are locked in place.
- interior stage (records labelled "2c"): every unfrozen particle is shifted;
  stops when the windowed average of |grad C| flattens, computed over the
  unfrozen (packable) particles only.

Updates are synchronized: all shifts in an iteration are computed from the
iteration-start snapshot and applied together, so results are independent of
particle visitation order.  All reductions are id-ordered; two runs with
identical inputs produce bitwise-identical iteration records.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .kernel import KernelSpec, grad_w_from_parts, w
from .neighbors import NeighborIndex, select_near_boundary
from .particles import ParticleSet
from .wallgamma import WallEvaluator, WallPairs, gamma_halfplane

log = logging.getLogger(__name__)

# phase labels used in iteration records and metrics output
PHASE_BOUNDARY = "2a"
PHASE_INTERIOR = "2c"


@dataclass
class PackingConfig:
    """Resolution, shift scale, freeze distance, and stopping parameters.

    The shift diffusivity is D = J h^2 and every per-iteration displacement is
    capped at half the particle spacing.  k_b controls the freeze layer and
    must exceed half a spacing (first layer always frozen) while staying well
    below k_a = 2h.
    """

    dx: float
    h: float = None
    J: float = 0.5
    k_b: float = None
    tol: float = 0.01
    window: int = 50
    min_iters: int = 200
    max_iters_boundary: int = 20000
    max_iters_interior: int = 40000

    def __post_init__(self):
        if self.h is None:
            self.h = 2.0 * self.dx
        if self.k_b is None:
            self.k_b = 0.6 * self.dx
        if not self.dx > 0.0:
            raise ValueError("dx must be positive")
        if not self.h > 0.0:
            raise ValueError("h must be positive")
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tol must be in (0, 1)")
        if not self.k_b > 0.5 * self.dx:
            raise ValueError("k_b must exceed half the particle spacing")
        if not self.k_b < self.k_a:
            raise ValueError("k_b must stay below k_a = 2h")
        if self.window < 1 or self.min_iters < 0:
            raise ValueError("window and min_iters must be positive")

    @property
    def D(self) -> float:
        """Shift diffusivity J h^2."""
        return self.J * self.h * self.h

    @property
    def cap(self) -> float:
        """Upper bound on a single displacement: half the particle spacing."""
        return 0.5 * self.dx

    @property
    def k_a(self) -> float:
        """Packable-band width: the kernel support 2h."""
        return 2.0 * self.h


@dataclass
class IterationRecord:
    phase: str
    iteration: int
    tpd_avg: float
    gradc_avg: float
    n_pack: int


@dataclass
class PackResult:
    particles: ParticleSet
    records: list
    boundary: geometry.BoundarySet
    config: PackingConfig
    stop_reasons: dict
    gamma_freeze: float

    def phase_records(self, phase: str) -> list:
        return [r for r in self.records if r.phase == phase]


# ---------------------------------------------------------------------------
# Field evaluation
# ---------------------------------------------------------------------------


def concentration_many(query_ids, idx: NeighborIndex, gamma_q, volume, spec: KernelSpec):
    """C_a = sum_b V_b W_ab / gamma_a for each a in query_ids (self term included)."""
    query_ids = np.asarray(query_ids, dtype=np.intp)
    A, _, _, dist = idx.pairs(query_ids)
    rows = np.searchsorted(query_ids, A)
    total = np.bincount(rows, weights=w(dist, spec), minlength=len(query_ids))
    total = (total + w(0.0, spec)) * volume
    return total / np.asarray(gamma_q, dtype=float)


def corrected_gradient_many(
    query_ids,
    idx: NeighborIndex,
    gamma_q,
    volume,
    spec: KernelSpec,
    wall: WallPairs,
    f_particles,
    f_segments,
):
    """Boundary-corrected gradient of a field sampled at particles and segments.

    grad f_a = (sum_b f_b grad_a W_ab V_b - sum_s f_s grad_gamma_as) / gamma_a,
    with f_s the field value at the segment centroid.  ``wall`` must hold the
    in-support segment pairs of the query particles.
    """
    query_ids = np.asarray(query_ids, dtype=np.intp)
    nq = len(query_ids)
    A, B, disp, dist = idx.pairs(query_ids)
    gw = grad_w_from_parts(disp, dist, spec)
    rows = np.searchsorted(query_ids, A)
    fb = np.asarray(f_particles, dtype=float)[B]
    gx = np.bincount(rows, weights=fb * gw[:, 0], minlength=nq) * volume
    gy = np.bincount(rows, weights=fb * gw[:, 1], minlength=nq) * volume
    if len(wall.a):
        wrows = np.searchsorted(query_ids, wall.a)
        fs = np.asarray(f_segments, dtype=float)[wall.s]
        gx -= np.bincount(wrows, weights=fs * wall.grad[:, 0], minlength=nq)
        gy -= np.bincount(wrows, weights=fs * wall.grad[:, 1], minlength=nq)
    return np.column_stack([gx, gy]) / np.asarray(gamma_q, dtype=float)[:, None]


def concentration_gradient_many(query_ids, idx, gamma_q, volume, spec, wall: WallPairs):
    """grad C_a: the corrected gradient of the unit field (bitwise identical)."""
    ones_p = np.ones(len(idx.positions))
    ones_s = np.ones(int(wall.s.max()) + 1 if len(wall.s) else 1)
    return corrected_gradient_many(
        query_ids, idx, gamma_q, volume, spec, wall, ones_p, ones_s
    )


def concentration(a: int, idx: NeighborIndex, gamma_a: float, volume: float, spec: KernelSpec) -> float:
    """Single-particle C_a; see concentration_many."""
    _, _, dist = idx.neighbors(a=a)
    return float(volume * (np.sum(w(dist, spec)) + w(0.0, spec)) / gamma_a)


def cap_shift(shift: np.ndarray, cap: float) -> np.ndarray:
    """Clamp displacement magnitudes to the cap, preserving direction.

    The rescale is shaved by one part in 1e15 so the strict bound survives
    floating-point rounding of the norm.
    """
    mag = np.linalg.norm(shift, axis=-1)
    over = mag > cap
    if np.any(over):
        shift = shift.copy()
        shift[over] *= (cap / mag[over] * (1.0 - 1e-15))[:, None]
    return shift


def shift_plain(grad_c: np.ndarray, config: PackingConfig) -> np.ndarray:
    """Plain concentration-gradient shift -D grad C, capped at half a spacing."""
    return cap_shift(-config.D * np.atleast_2d(grad_c), config.cap)


def boundary_force_term(x_a, segment, grad_gamma_s, dx: float) -> np.ndarray:
    """Step-force contribution of one segment: half its grad-gamma when the
    particle sits closer than half a spacing (normal projection to the segment
    centroid), zero otherwise."""
    nd = abs(float(np.dot(np.asarray(x_a, float) - segment.centroid, segment.normal)))
    if nd < 0.5 * dx:
        return 0.5 * np.asarray(grad_gamma_s, dtype=float)
    return np.zeros(2)


def shift_forced_many(grad_c, gamma_q, step_sum, config: PackingConfig) -> np.ndarray:
    """Boundary-forced shift: -D (grad C - step_sum / gamma), capped.

    ``step_sum`` is the per-particle sum of step-force contributions
    (0.5 grad_gamma over segments closer than half a spacing).
    """
    raw = -config.D * (grad_c - step_sum / np.asarray(gamma_q, dtype=float)[:, None])
    return cap_shift(raw, config.cap)


def tpd_avg(pset: ParticleSet) -> float:
    """Mean displacement from seed position over the packable particles."""
    ids = np.flatnonzero(pset.packable)
    if len(ids) == 0:
        raise ValueError("no packable particles")
    return float(np.mean(np.linalg.norm(pset.pos[ids] - pset.seed_pos[ids], axis=1)))


def gradc_avg(pset: ParticleSet) -> float:
    """Mean |grad C| over the packable particles (uses the stored field)."""
    ids = np.flatnonzero(pset.packable)
    if len(ids) == 0:
        raise ValueError("no packable particles")
    return float(np.mean(np.linalg.norm(pset.grad_conc[ids], axis=1)))


# ---------------------------------------------------------------------------
# Stopping rule
# ---------------------------------------------------------------------------


class WindowedStop:
    """Stop when consecutive non-overlapping window means change by < tol.

    Checked every ``window`` iterations once at least ``min_iters`` have run;
    a hard iteration budget terminates regardless.
    """

    def __init__(self, tol: float, window: int, min_iters: int, max_iters: int):
        self.tol = tol
        self.window = window
        self.min_iters = min_iters
        self.max_iters = max_iters
        self.values = []

    def update(self, value: float):
        self.values.append(value)
        k = len(self.values)
        if k >= max(self.min_iters, 2 * self.window) and k % self.window == 0:
            m1 = float(np.mean(self.values[k - 2 * self.window : k - self.window]))
            m2 = float(np.mean(self.values[k - self.window : k]))
            if abs(m2 - m1) <= self.tol * max(abs(m1), 1e-300):
                return "tol"
        if k >= self.max_iters:
            return "max_iters"
        return None


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


class Packer:
    """Packing engine bound to one refined boundary and configuration."""

    def __init__(self, boundary: geometry.BoundarySet, config: PackingConfig):
        self.config = config
        self.spec = KernelSpec(config.h)
        self.boundary = geometry.refine_segments(boundary, config.dx)
        self.walls = WallEvaluator(self.boundary, self.spec)
        self.gamma_freeze = gamma_halfplane(config.k_b, self.spec)

    def seed(self) -> ParticleSet:
        return geometry.seed_grid(self.boundary, self.config.dx)

    def start_boundary_phase(self, pset: ParticleSet):
        packable, selected = select_near_boundary(pset, self.boundary, self.spec)
        pset.packable = packable & ~pset.frozen
        pset.selected = selected

    def start_interior_phase(self, pset: ParticleSet):
        pset.packable = ~pset.frozen
        pset.selected = np.ones(pset.n, dtype=bool)

    def freeze_layer(self, pset: ParticleSet):
        """Freeze particles whose gamma falls below the straight-wall value at k_b."""
        near = self.walls.near_wall_mask(pset.pos)
        ids = np.flatnonzero(near)
        gam = np.ones(pset.n)
        if len(ids):
            pairs = self.walls.pair_terms(pset.pos, ids)
            gam[ids] = self.walls.gamma_values(pset.pos, ids, pairs)
        pset.gamma = gam
        pset.frozen = gam < self.gamma_freeze

    def iterate(self, pset: ParticleSet, phase: str, iteration: int) -> IterationRecord:
        """One synchronized packing step; returns the iteration record.

        The recorded |grad C| average is the field the shifts were computed
        from (the iteration-start snapshot); the displacement average reflects
        the positions after the shifts were applied.
        """
        cfg = self.config
        pos0 = pset.pos.copy()
        pack_ids = np.flatnonzero(pset.packable)
        if len(pack_ids) == 0:
            raise ValueError("no packable particles in this phase")
        sel_ids = np.flatnonzero(pset.selected)
        idx = NeighborIndex(pos0, sel_ids, self.spec)
        wall = self.walls.pair_terms(pos0, pack_ids)
        gam = self.walls.gamma_values(pos0, pack_ids, wall)
        gradc = concentration_gradient_many(
            pack_ids, idx, gam, pset.volume, self.spec, wall
        )
        npack = len(pack_ids)
        step_sum = np.zeros((npack, 2))
        if len(wall.a):
            close = wall.nd < 0.5 * cfg.dx
            if np.any(close):
                wrows = np.searchsorted(pack_ids, wall.a[close])
                step_sum[:, 0] = np.bincount(
                    wrows, weights=0.5 * wall.grad[close, 0], minlength=npack
                )
                step_sum[:, 1] = np.bincount(
                    wrows, weights=0.5 * wall.grad[close, 1], minlength=npack
                )
        shift = shift_forced_many(gradc, gam, step_sum, cfg)
        new_pos = pos0.copy()
        new_pos[pack_ids] += shift
        self._guard_containment(pos0, new_pos, pack_ids, shift, wall)
        pset.pos = new_pos
        pset.gamma[pack_ids] = gam
        pset.grad_conc[pack_ids] = gradc
        tpd = float(np.mean(np.linalg.norm(new_pos[pack_ids] - pset.seed_pos[pack_ids], axis=1)))
        gc = float(np.mean(np.linalg.norm(gradc, axis=1)))
        return IterationRecord(phase, iteration, tpd, gc, npack)

    def _guard_containment(self, pos0, new_pos, pack_ids, shift, wall: WallPairs):
        """Halve shifts that would exit the domain (up to 4 times), else revert.

        Only particles with a wall in support can exit: everyone else is at
        least 2h > cap away from the boundary.
        """
        if not len(wall.a):
            return
        guard_ids = np.unique(wall.a)
        rows = np.searchsorted(pack_ids, guard_ids)
        bad = ~geometry.contains_many(self.boundary, new_pos[guard_ids])
        scale = 0.5
        for _ in range(4):
            if not np.any(bad):
                return
            ids = guard_ids[bad]
            new_pos[ids] = pos0[ids] + scale * shift[rows[bad]]
            inside = geometry.contains_many(self.boundary, new_pos[ids])
            nxt = bad.copy()
            nxt[np.flatnonzero(bad)[inside]] = False
            bad = nxt
            scale *= 0.5
        if np.any(bad):
            ids = guard_ids[bad]
            new_pos[ids] = pos0[ids]

    def run_phase(self, pset: ParticleSet, phase: str, stopper: WindowedStop, records: list) -> str:
        i = 0
        while True:
            i += 1
            rec = self.iterate(pset, phase, i)
            records.append(rec)
            metric = rec.tpd_avg if phase == PHASE_BOUNDARY else rec.gradc_avg
            reason = stopper.update(metric)
            if reason is not None:
                return reason

    def run(self) -> PackResult:
        cfg = self.config
        pset = self.seed()
        records = []
        self.start_boundary_phase(pset)
        reason_a = self.run_phase(
            pset,
            PHASE_BOUNDARY,
            WindowedStop(cfg.tol, cfg.window, cfg.min_iters, cfg.max_iters_boundary),
            records,
        )
        self.freeze_layer(pset)
        log.info(
            "boundary phase stopped (%s) after %d iterations; %d particles frozen",
            reason_a,
            len(records),
            int(np.sum(pset.frozen)),
        )
        n_boundary = len(records)
        self.start_interior_phase(pset)
        reason_c = self.run_phase(
            pset,
            PHASE_INTERIOR,
            WindowedStop(cfg.tol, cfg.window, cfg.min_iters, cfg.max_iters_interior),
            records,
        )
        log.info(
            "interior phase stopped (%s) after %d iterations",
            reason_c,
            len(records) - n_boundary,
        )
        self.compute_fields(pset)
        return PackResult(
            particles=pset,
            records=records,
            boundary=self.boundary,
            config=cfg,
            stop_reasons={PHASE_BOUNDARY: reason_a, PHASE_INTERIOR: reason_c},
            gamma_freeze=self.gamma_freeze,
        )

    def compute_fields(self, pset: ParticleSet):
        """Fill gamma, C, and grad C for every particle (diagnostics/output)."""
        all_ids = np.arange(pset.n, dtype=np.intp)
        idx = NeighborIndex(pset.pos, all_ids, self.spec)
        near = np.flatnonzero(self.walls.near_wall_mask(pset.pos))
        wall = self.walls.pair_terms(pset.pos, near)
        gam = np.ones(pset.n)
        if len(near):
            gam[near] = self.walls.gamma_values(pset.pos, near, wall)
        pset.gamma = gam
        pset.conc = concentration_many(all_ids, idx, gam, pset.volume, self.spec)
        pset.grad_conc = concentration_gradient_many(
            all_ids, idx, gam, pset.volume, self.spec, wall
        )


def freeze_layer(pset: ParticleSet, boundary: geometry.BoundarySet, spec: KernelSpec, k_b: float):
    """Standalone freeze pass: gamma below the straight-wall value at k_b.

    Requires a refined boundary; updates pset.gamma and pset.frozen in place.
    """
    evaluator = WallEvaluator(boundary, spec)
    threshold = gamma_halfplane(k_b, spec)
    near = evaluator.near_wall_mask(pset.pos)
    ids = np.flatnonzero(near)
    gam = np.ones(pset.n)
    if len(ids):
        pairs = evaluator.pair_terms(pset.pos, ids)
        gam[ids] = evaluator.gamma_values(pset.pos, ids, pairs)
    pset.gamma = gam
    pset.frozen = gam < threshold
    pset.packable &= ~pset.frozen


def run_packing(boundary: geometry.BoundarySet, config: PackingConfig) -> PackResult:
    """Seed, pack near the boundary, freeze the wall layer, relax the interior."""
    return Packer(boundary, config).run()
