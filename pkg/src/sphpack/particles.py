"""Particle container shared by seeding, packing, and the flow solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ParticleSet:
    """Positions, seed positions, and per-particle packing fields.

    All particles share one resolution: volume = dx**2.  ``seed_pos`` is the
    position at the end of seeding and is the fixed reference for total
    particle displacement.  ``frozen`` positions must not change once set.
    """

    pos: np.ndarray
    seed_pos: np.ndarray
    dx: float
    gamma: np.ndarray
    conc: np.ndarray
    grad_conc: np.ndarray
    packable: np.ndarray
    selected: np.ndarray
    frozen: np.ndarray

    @classmethod
    def from_positions(cls, pos: np.ndarray, dx: float) -> "ParticleSet":
        pos = np.ascontiguousarray(pos, dtype=float)
        n = len(pos)
        return cls(
            pos=pos,
            seed_pos=pos.copy(),
            dx=float(dx),
            gamma=np.ones(n),
            conc=np.zeros(n),
            grad_conc=np.zeros((n, 2)),
            packable=np.zeros(n, dtype=bool),
            selected=np.zeros(n, dtype=bool),
            frozen=np.zeros(n, dtype=bool),
        )

    @property
    def n(self) -> int:
        return len(self.pos)

    @property
    def volume(self) -> float:
        """Per-particle volume (uniform resolution)."""
        return self.dx * self.dx

    def copy(self) -> "ParticleSet":
        return ParticleSet(
            pos=self.pos.copy(),
            seed_pos=self.seed_pos.copy(),
            dx=self.dx,
            gamma=self.gamma.copy(),
            conc=self.conc.copy(),
            grad_conc=self.grad_conc.copy(),
            packable=self.packable.copy(),
            selected=self.selected.copy(),
            frozen=self.frozen.copy(),
        )
