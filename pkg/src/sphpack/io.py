"""Output emission: particle CSV, legacy VTK, metrics CSV, SVG scatter plots.

All writers are byte-deterministic for identical inputs; numeric fields carry
17 significant digits so doubles round-trip exactly.
"""

from __future__ import annotations

import numpy as np

from . import __version__
from .geometry import BoundarySet
from .particles import ParticleSet

CSV_HEADER = "id,x1,x2,gamma,C,gradC1,gradC2,frozen,packable"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_particles_csv(pset: ParticleSet, path):
    """One row per particle with packing fields; full double precision."""
    lines = [CSV_HEADER]
    for i in range(pset.n):
        lines.append(
            ",".join(
                [
                    str(i),
                    _fmt(pset.pos[i, 0]),
                    _fmt(pset.pos[i, 1]),
                    _fmt(pset.gamma[i]),
                    _fmt(pset.conc[i]),
                    _fmt(pset.grad_conc[i, 0]),
                    _fmt(pset.grad_conc[i, 1]),
                    str(int(pset.frozen[i])),
                    str(int(pset.packable[i])),
                ]
            )
        )
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_particles_csv(path):
    """Parse a particle CSV back into arrays (column name -> array)."""
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = [line.strip().split(",") for line in f if line.strip()]
    cols = {name: [] for name in header}
    for row in rows:
        for name, tok in zip(header, row):
            cols[name].append(tok)
    out = {}
    for name, toks in cols.items():
        if name in ("id", "frozen", "packable"):
            out[name] = np.array([int(t) for t in toks], dtype=np.intp)
        else:
            out[name] = np.array([float(t) for t in toks])
    return out


def write_vtk(pset: ParticleSet, path):
    """Legacy ASCII VTK polydata: points plus gamma and |grad C| point scalars."""
    n = pset.n
    lines = [
        "# vtk DataFile Version 3.0",
        f"sphpack particles ({__version__})",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {n} double",
    ]
    for i in range(n):
        lines.append(f"{_fmt(pset.pos[i, 0])} {_fmt(pset.pos[i, 1])} 0")
    lines.append(f"POINT_DATA {n}")
    lines.append("SCALARS gamma double")
    lines.append("LOOKUP_TABLE default")
    for i in range(n):
        lines.append(_fmt(pset.gamma[i]))
    lines.append("SCALARS gradC_mag double")
    lines.append("LOOKUP_TABLE default")
    gmag = np.linalg.norm(pset.grad_conc, axis=1)
    for i in range(n):
        lines.append(_fmt(gmag[i]))
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def write_metrics_csv(records, path):
    """Per-iteration packing metrics: phase, iter, tpd_avg, gradc_avg, n_pack."""
    lines = ["phase,iter,tpd_avg,gradc_avg,n_pack"]
    for r in records:
        lines.append(
            f"{r.phase},{r.iteration},{_fmt(r.tpd_avg)},{_fmt(r.gradc_avg)},{r.n_pack}"
        )
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


# five-stop linear color map (dark blue -> cyan -> green -> orange -> yellow)
_STOPS = np.array(
    [
        (38, 14, 109),
        (30, 130, 172),
        (53, 183, 121),
        (231, 142, 34),
        (252, 253, 80),
    ],
    dtype=float,
)


def _color(value: np.ndarray) -> list:
    """Map values in [0, 1] through the five-stop linear gradient to #rrggbb."""
    t = np.clip(value, 0.0, 1.0) * (len(_STOPS) - 1)
    lo = np.floor(t).astype(int)
    hi = np.minimum(lo + 1, len(_STOPS) - 1)
    frac = (t - lo)[:, None]
    rgb = _STOPS[lo] * (1.0 - frac) + _STOPS[hi] * frac
    return ["#%02x%02x%02x" % tuple(int(round(c)) for c in row) for row in rgb]


def render_svg_scatter(pset: ParticleSet, boundary: BoundarySet, field: str, path):
    """Standalone SVG scatter colored by log10 of the field, clamped to [-8, 0].

    ``field`` selects |grad C| ("gradc_mag") or gamma ("gamma").  The viewBox is
    the geometry bounding box padded by 5%; particle circles have radius
    0.4 dx in geometry units and each boundary loop is drawn once as a polyline.
    """
    if field == "gradc_mag":
        values = np.linalg.norm(pset.grad_conc, axis=1)
    elif field == "gamma":
        values = pset.gamma.copy()
    else:
        raise ValueError(f"unknown color field {field!r}")
    with np.errstate(divide="ignore"):
        logv = np.log10(np.maximum(values, 0.0))
    logv = np.clip(logv, -8.0, 0.0)
    colors = _color((logv + 8.0) / 8.0)
    lo, hi = boundary.bbox[0], boundary.bbox[1]
    pad = 0.05 * (hi - lo)
    x0, y0 = lo - pad
    wdt, hgt = hi - lo + 2 * pad
    r = 0.4 * pset.dx
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f"<!-- sphpack {__version__} field={field} -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_fmt(x0)} {_fmt(y0)} '
        f'{_fmt(wdt)} {_fmt(hgt)}" width="800" height="{_fmt(800 * hgt / wdt)}">',
        # flip y so the vertical axis points up
        f'<g transform="translate(0 {_fmt(y0 + hgt + y0)}) scale(1 -1)">',
    ]
    for lp in boundary.loops:
        pts = " ".join(f"{_fmt(v[0])},{_fmt(v[1])}" for v in lp)
        lines.append(
            f'<polygon points="{pts}" fill="none" stroke="black" '
            f'stroke-width="{_fmt(0.2 * pset.dx)}"/>'
        )
    for i in range(pset.n):
        lines.append(
            f'<circle cx="{_fmt(pset.pos[i, 0])}" cy="{_fmt(pset.pos[i, 1])}" '
            f'r="{_fmt(r)}" fill="{colors[i]}"/>'
        )
    lines.append("</g>")
    lines.append("</svg>")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
