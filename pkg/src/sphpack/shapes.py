"""Canonical scenario geometries used by the CLI, tests, and validation runs."""

from __future__ import annotations

import numpy as np

from .geometry import BoundarySet

# Tank with a triangular bottom wedge: 2.05 m wide, wedge apex sqrt(2)/8 m
# high with 45 degree slopes, water filled to 0.5 m.
WEDGE_TANK_WIDTH = 2.05
WEDGE_TANK_HEIGHT = np.sqrt(2.0) / 8.0
WEDGE_TANK_WATER = 0.5


def rectangle_loop(width: float, height: float, x0: float = 0.0, y0: float = 0.0) -> np.ndarray:
    """Axis-aligned rectangle, counterclockwise."""
    return np.array(
        [[x0, y0], [x0 + width, y0], [x0 + width, y0 + height], [x0, y0 + height]]
    )


def trapezoid_loop(
    bottom: float = 2.0, top: float = 0.8, height: float = 1.0
) -> np.ndarray:
    """Symmetric trapezoid with slanted sides (the packing test shape)."""
    inset = 0.5 * (bottom - top)
    return np.array(
        [[0.0, 0.0], [bottom, 0.0], [bottom - inset, height], [inset, height]]
    )


def circle_loop(radius: float, n: int = 360, center=(0.0, 0.0)) -> np.ndarray:
    """Regular n-gon approximating a circle, counterclockwise."""
    t = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack(
        [center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)]
    )


def wedge_tank_loop(
    width: float = WEDGE_TANK_WIDTH,
    wedge_height: float = WEDGE_TANK_HEIGHT,
    water_height: float = WEDGE_TANK_WATER,
):
    """Closed fluid region of the wedge tank and the ids of its waterline edges.

    The wedge sits centered on the tank floor with 45 degree slopes.  The top
    edge is the waterline: it participates in packing (so the free surface is
    packed like a wall) and is removed from the wall set for flow runs.
    """
    cx = 0.5 * width
    loop = np.array(
        [
            [0.0, 0.0],
            [cx - wedge_height, 0.0],
            [cx, wedge_height],
            [cx + wedge_height, 0.0],
            [width, 0.0],
            [width, water_height],
            [0.0, water_height],
        ]
    )
    waterline_edges = [5]  # edge from (width, H) to (0, H)
    return loop, waterline_edges


def flat_tank_loop(width: float = WEDGE_TANK_WIDTH, water_height: float = WEDGE_TANK_WATER):
    """Flat-bottom tank variant; same interface as wedge_tank_loop."""
    loop = np.array(
        [[0.0, 0.0], [width, 0.0], [width, water_height], [0.0, water_height]]
    )
    return loop, [2]


def boundary_from_loop(loop: np.ndarray) -> BoundarySet:
    return BoundarySet.from_loops([loop])
