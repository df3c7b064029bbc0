"""2D Wendland C2 (quintic) smoothing kernel.

The kernel family and its support ratio are fixed: W(r) = alpha (1 - q/2)^4 (2q + 1)
with q = r/h on [0, 2] and zero outside, alpha = 7 / (4 pi h^2).  All functions are
pure and safe to call from any thread.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Support radius in units of h.  Fixed for this kernel; not a tunable.
KAPPA = 2.0


@dataclass(frozen=True)
class KernelSpec:
    """Smoothing length and derived kernel constants."""

    h: float

    def __post_init__(self):
        if not (np.isfinite(self.h) and self.h > 0.0):
            raise ValueError(f"smoothing length must be positive and finite, got {self.h}")

    @property
    def kappa(self) -> float:
        return KAPPA

    @property
    def alpha(self) -> float:
        """2D normalization constant; the kernel integrates to 1 over its support disk."""
        return 7.0 / (4.0 * np.pi * self.h * self.h)

    @property
    def support(self) -> float:
        """Radius of the smoothing domain, kappa * h."""
        return KAPPA * self.h


def w(r, spec: KernelSpec):
    """Kernel value W(r).  Accepts scalars or arrays; zero outside the support."""
    q = np.asarray(r, dtype=float) / spec.h
    inside = q <= 2.0
    qc = np.where(inside, q, 2.0)
    val = spec.alpha * (1.0 - 0.5 * qc) ** 4 * (2.0 * qc + 1.0)
    out = np.where(inside, val, 0.0)
    return out if out.ndim else float(out)


def dw_dq(q, spec: KernelSpec):
    """Derivative dW/dq; nonpositive on [0, 2], zero outside."""
    q = np.asarray(q, dtype=float)
    inside = q <= 2.0
    qc = np.where(inside, q, 2.0)
    val = -5.0 * spec.alpha * qc * (1.0 - 0.5 * qc) ** 3
    out = np.where(inside, val, 0.0)
    return out if out.ndim else float(out)


def grad_w(d, spec: KernelSpec):
    """Kernel gradient with respect to the first particle of the pair.

    ``d`` is the displacement x_a - x_b, shape (2,) or (m, 2).  The gradient is
    (dW/dq / h) * d/|d|; the removable singularity at d = 0 is defined as the
    zero vector (radial symmetry).
    """
    d = np.asarray(d, dtype=float)
    single = d.ndim == 1
    dv = d[None, :] if single else d
    r = np.linalg.norm(dv, axis=-1)
    safe = np.where(r > 0.0, r, 1.0)
    mag = np.where(r > 0.0, dw_dq(r / spec.h, spec) / (spec.h * safe), 0.0)
    out = dv * mag[..., None]
    return out[0] if single else out


def grad_w_from_parts(disp: np.ndarray, dist: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """grad_w for precomputed pair displacements/distances (hot path helper)."""
    safe = np.where(dist > 0.0, dist, 1.0)
    mag = np.where(dist > 0.0, dw_dq(dist / spec.h, spec) / (spec.h * safe), 0.0)
    return disp * mag[:, None]
