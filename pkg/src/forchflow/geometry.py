"""Rectangular porous domain, cell-centered grid, and boundary bookkeeping.

The solver and all quadrature operate on a uniform cell-centered grid over an
axis-aligned rectangle.  Fields live at cell centers as ``(nx, ny)`` arrays
(x index first); boundary data live at face midpoints of the four sides.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .expressions import FieldExpr

__all__ = ["SIDES", "PorousDomain", "Grid", "BoundaryForcing", "materialize"]

SIDES = ("left", "right", "bottom", "top")

# outward unit normal per side
_NORMALS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
}


@dataclass(frozen=True)
class PorousDomain:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("domain must satisfy x1 > x0 and y1 > y0")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x1, self.y0, self.y1)

    @property
    def max_radius(self) -> float:
        """max |x| over the closed rectangle (used by forcing bounds)."""
        cx = [abs(self.x0), abs(self.x1)]
        cy = [abs(self.y0), abs(self.y1)]
        return float(np.hypot(max(cx), max(cy)))

    def normal(self, side: str) -> np.ndarray:
        return np.array(_NORMALS[side])


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid; fields are (nx, ny) arrays, x index first."""

    domain: PorousDomain
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 cells per direction")

    @cached_property
    def hx(self) -> float:
        return (self.domain.x1 - self.domain.x0) / self.nx

    @cached_property
    def hy(self) -> float:
        return (self.domain.y1 - self.domain.y0) / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @cached_property
    def xc(self) -> np.ndarray:
        return self.domain.x0 + (np.arange(self.nx) + 0.5) * self.hx

    @cached_property
    def yc(self) -> np.ndarray:
        return self.domain.y0 + (np.arange(self.ny) + 0.5) * self.hy

    @cached_property
    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xc, self.yc, indexing="ij")

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.domain, self.nx * factor, self.ny * factor)

    def integrate(self, cells: np.ndarray) -> float:
        """Midpoint-rule integral of a cell field over the domain."""
        return float(np.sum(cells) * self.cell_area)

    def boundary_midpoints(self, side: str) -> tuple[np.ndarray, np.ndarray]:
        """Face-midpoint coordinates along one side (length nx or ny)."""
        if side == "left":
            return np.full(self.ny, self.domain.x0), self.yc
        if side == "right":
            return np.full(self.ny, self.domain.x1), self.yc
        if side == "bottom":
            return self.xc, np.full(self.nx, self.domain.y0)
        if side == "top":
            return self.xc, np.full(self.nx, self.domain.y1)
        raise ValueError(f"unknown side {side!r}")

    def boundary_measure(self, side: str) -> float:
        """Length element of one boundary face on the given side."""
        return self.hy if side in ("left", "right") else self.hx

    def gradient(self, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centered 2nd-order gradient (one-sided at the walls)."""
        gx = np.gradient(cells, self.hx, axis=0, edge_order=2)
        gy = np.gradient(cells, self.hy, axis=1, edge_order=2)
        return gx, gy


def materialize(spec, grid: Grid, t: float = 0.0) -> np.ndarray:
    """Evaluate a field specification on the grid's cell centers.

    ``spec`` may be a number (constant field), an expression string, a
    FieldExpr, or a callable f(x, y) / f(x, y, t).
    """
    X, Y = grid.cell_centers
    if isinstance(spec, (int, float)):
        return np.full((grid.nx, grid.ny), float(spec))
    if isinstance(spec, str):
        spec = FieldExpr.parse(spec)
    if isinstance(spec, FieldExpr):
        out = spec(X, Y, t=t, domain=grid.domain.bounds)
        return np.broadcast_to(np.asarray(out, dtype=np.float64), (grid.nx, grid.ny)).copy()
    if callable(spec):
        try:
            out = spec(X, Y, t)
        except TypeError:
            out = spec(X, Y)
        return np.broadcast_to(np.asarray(out, dtype=np.float64), (grid.nx, grid.ny)).copy()
    raise TypeError(f"cannot materialize field from {type(spec).__name__}")


@dataclass
class BoundaryForcing:
    """Boundary data psi1 (mass flux) and psi2 (volumetric flux coefficient).

    The boundary splits into two labeled parts: psi1 acts on the sides listed
    in ``gamma1_sides``, psi2 on ``gamma2_sides``; each is extended by zero
    off its part.  Sides in neither list are closed (zero total flux).
    The imposed condition on the boundary is

        flux . nu + psi1 + psi2 * u**lambda = 0.
    """

    psi1: object = 0.0
    psi2: object = 0.0
    gamma1_sides: tuple[str, ...] = ()
    gamma2_sides: tuple[str, ...] = ()

    def __post_init__(self):
        for s in tuple(self.gamma1_sides) + tuple(self.gamma2_sides):
            if s not in SIDES:
                raise ValueError(f"unknown side {s!r}")
        overlap = set(self.gamma1_sides) & set(self.gamma2_sides)
        if overlap:
            raise ValueError(f"sides {sorted(overlap)} assigned to both parts")
        if isinstance(self.psi1, str):
            self.psi1 = FieldExpr.parse(self.psi1)
        if isinstance(self.psi2, str):
            self.psi2 = FieldExpr.parse(self.psi2)

    def _eval(self, expr, grid: Grid, side: str, t: float) -> np.ndarray:
        bx, by = grid.boundary_midpoints(side)
        if isinstance(expr, (int, float)):
            return np.full(bx.shape, float(expr))
        out = expr(bx, by, t=t, domain=grid.domain.bounds)
        return np.broadcast_to(np.asarray(out, dtype=np.float64), bx.shape).copy()

    def psi1_on(self, grid: Grid, side: str, t: float) -> np.ndarray:
        if side not in self.gamma1_sides:
            bx, _ = grid.boundary_midpoints(side)
            return np.zeros(bx.shape)
        return self._eval(self.psi1, grid, side, t)

    def psi2_on(self, grid: Grid, side: str, t: float) -> np.ndarray:
        if side not in self.gamma2_sides:
            bx, _ = grid.boundary_midpoints(side)
            return np.zeros(bx.shape)
        return self._eval(self.psi2, grid, side, t)
