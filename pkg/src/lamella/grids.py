"""Structured grids over the unit cylinder and its midsurface.

The film occupies the rectangle omega = (0, Lx) x (0, Ly) times the
transverse interval (-1, 1).  A frame of extra in-plane cell layers
surrounds omega; boundary data lives on the frame nodes (and on the lateral
boundary of omega), never on the top/bottom faces, which stay traction
free.  ``nz == 1`` marks a midsurface (2D) grid carrying a single node
layer.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from lamella.errors import DomainError

log = logging.getLogger("lamella")


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    nz: int = 1
    lx: float = 1.0
    ly: float = 1.0
    frame_width: int = 1

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise DomainError("need at least 2 in-plane cells per direction")
        if self.nz < 1:
            raise DomainError("nz must be at least 1")
        if self.frame_width < 1:
            raise DomainError("frame width must be at least 1")
        if self.lx <= 0 or self.ly <= 0:
            raise DomainError("domain extents must be positive")

    # -- basic geometry ----------------------------------------------------

    @property
    def is_2d(self) -> bool:
        return self.nz == 1

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def hz(self) -> float:
        return 2.0 / self.nz

    @property
    def spacing(self) -> float:
        return min(self.hx, self.hy) if self.is_2d else min(self.hx, self.hy, self.hz)

    @property
    def cells_x(self) -> int:
        return self.nx + 2 * self.frame_width

    @property
    def cells_y(self) -> int:
        return self.ny + 2 * self.frame_width

    @property
    def cells_z(self) -> int:
        return 0 if self.is_2d else self.nz

    @property
    def nodes_x(self) -> int:
        return self.cells_x + 1

    @property
    def nodes_y(self) -> int:
        return self.cells_y + 1

    @property
    def nodes_z(self) -> int:
        return 1 if self.is_2d else self.nz + 1

    @property
    def n_nodes(self) -> int:
        return self.nodes_x * self.nodes_y * self.nodes_z

    @property
    def n_cells(self) -> int:
        return self.cells_x * self.cells_y * max(self.cells_z, 1)

    def node_coords(self) -> np.ndarray:
        """(n_nodes, 3) coordinates; x3 = 0 on a midsurface grid."""
        f = self.frame_width
        x = (np.arange(self.nodes_x) - f) * self.hx
        y = (np.arange(self.nodes_y) - f) * self.hy
        z = np.zeros(1) if self.is_2d else -1.0 + np.arange(self.nodes_z) * self.hz
        Z, Y, X = np.meshgrid(z, y, x, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def node_index(self, ix, iy, iz=0):
        return (iz * self.nodes_y + iy) * self.nodes_x + ix

    # -- cell connectivity ---------------------------------------------------

    def cell_nodes(self) -> np.ndarray:
        """Node indices per cell: (n_cells, 4) bilinear or (n_cells, 8)
        trilinear, corner order x-fastest, then y, then z."""
        cx = np.arange(self.cells_x)
        cy = np.arange(self.cells_y)
        if self.is_2d:
            CY, CX = np.meshgrid(cy, cx, indexing="ij")
            base = self.node_index(CX.ravel(), CY.ravel())
            return np.stack([
                base,
                base + 1,
                base + self.nodes_x,
                base + self.nodes_x + 1,
            ], axis=1)
        cz = np.arange(self.cells_z)
        CZ, CY, CX = np.meshgrid(cz, cy, cx, indexing="ij")
        base = self.node_index(CX.ravel(), CY.ravel(), CZ.ravel())
        dz = self.nodes_x * self.nodes_y
        return np.stack([
            base, base + 1,
            base + self.nodes_x, base + self.nodes_x + 1,
            base + dz, base + dz + 1,
            base + dz + self.nodes_x, base + dz + self.nodes_x + 1,
        ], axis=1)

    def interior_cell_mask(self) -> np.ndarray:
        """Cells whose in-plane footprint lies inside omega."""
        f = self.frame_width
        cx = np.arange(self.cells_x)
        cy = np.arange(self.cells_y)
        mx = (cx >= f) & (cx < f + self.nx)
        my = (cy >= f) & (cy < f + self.ny)
        if self.is_2d:
            MY, MX = np.meshgrid(my, mx, indexing="ij")
            return (MX & MY).ravel()
        mz = np.ones(self.cells_z, dtype=bool)
        MZ, MY, MX = np.meshgrid(mz, my, mx, indexing="ij")
        return (MX & MY & MZ).ravel()

    def cell_centers(self) -> np.ndarray:
        coords = self.node_coords()
        return coords[self.cell_nodes()].mean(axis=1)

    # -- node classification -------------------------------------------------

    def frame_node_mask(self) -> np.ndarray:
        """Nodes strictly outside the closed film footprint."""
        f = self.frame_width
        ix = np.arange(self.nodes_x)
        iy = np.arange(self.nodes_y)
        outx = (ix < f) | (ix > f + self.nx)
        outy = (iy < f) | (iy > f + self.ny)
        plane = outx[None, :] | outy[:, None]
        return np.tile(plane.ravel(), self.nodes_z)

    def dirichlet_node_mask(self, clamp: str = "frame") -> np.ndarray:
        """Nodes carrying the boundary datum.

        ``frame``: the frame plus the whole lateral boundary of omega
        (conforming fields cannot jump across it).  ``x-ends``: only the
        two x-ends drive the film, the long edges stay traction free (the
        strip setup used for the 1D oracle cross-check); the inert y-frame
        nodes stay pinned so every free node has an equation.
        """
        f = self.frame_width
        ix = np.arange(self.nodes_x)
        iy = np.arange(self.nodes_y)
        inx = (ix > f) & (ix < f + self.nx)
        if clamp == "frame":
            iny = (iy > f) & (iy < f + self.ny)
        elif clamp == "x-ends":
            iny = (iy >= f) & (iy <= f + self.ny)
        else:
            raise DomainError(f"unknown clamp mode {clamp!r}")
        interior = inx[None, :] & iny[:, None]
        return np.tile(~interior.ravel(), self.nodes_z)

    def describe(self) -> dict:
        return {
            "nx": self.nx, "ny": self.ny, "nz": self.nz,
            "lx": self.lx, "ly": self.ly,
            "frame_width": self.frame_width,
            "n_nodes": self.n_nodes,
            "n_cells": self.n_cells,
        }


@dataclass
class PhaseParams:
    """Regularization length and residual stiffness of the crack field."""

    ell: float
    eta: float | None = None

    def __post_init__(self):
        if self.ell <= 0.0:
            raise DomainError("regularization length must be positive")
        if self.eta is None:
            self.eta = 1e-6 * self.ell
        if self.eta < 0.0:
            raise DomainError("residual stiffness must be nonnegative")

    def check_resolution(self, grid: Grid):
        if self.ell <= grid.spacing:
            log.warning("phase-field length %.3g under-resolved (spacing %.3g)",
                        self.ell, grid.spacing)


@dataclass
class Field:
    """Nodal values on a grid, 1 or 3 components."""

    grid: Grid
    components: int
    values: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.components not in (1, 3):
            raise DomainError("fields carry 1 or 3 components")
        if self.values is None:
            self.values = np.zeros((self.grid.n_nodes, self.components))
        else:
            self.values = np.asarray(self.values, dtype=float).reshape(
                self.grid.n_nodes, self.components)
            if not np.all(np.isfinite(self.values)):
                raise DomainError("non-finite field values")

    def copy(self) -> "Field":
        return Field(self.grid, self.components, self.values.copy())

    def sup_norm(self) -> float:
        if self.components == 1:
            return float(np.abs(self.values).max())
        return float(np.sqrt((self.values ** 2).sum(axis=1)).max())


def zero_field(grid: Grid, components: int = 3) -> Field:
    return Field(grid, components)


def constant_field(grid: Grid, value) -> Field:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    vals = np.tile(value, (grid.n_nodes, 1))
    return Field(grid, value.size, vals)


def field_from_function(grid: Grid, fn, components: int = 3) -> Field:
    """Sample ``fn(x)`` (vectorized over (n, 3) coordinates) at the nodes."""
    coords = grid.node_coords()
    vals = np.asarray(fn(coords), dtype=float).reshape(grid.n_nodes, components)
    return Field(grid, components, vals)


# ---------------------------------------------------------------------------
# Persistence: flat CSV plus a JSON sidecar with the grid metadata
# ---------------------------------------------------------------------------

def save_field(f: Field, csv_path, sidecar_path=None):
    coords = f.grid.node_coords()
    cols = ["node_index", "x1", "x2", "x3"] + [f"c{k}" for k in range(f.components)]
    with open(csv_path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(f.grid.n_nodes):
            row = [str(i)] + [f"{v:.17g}" for v in coords[i]]
            row += [f"{v:.17g}" for v in f.values[i]]
            fh.write(",".join(row) + "\n")
    if sidecar_path is not None:
        meta = f.grid.describe()
        meta["components"] = f.components
        with open(sidecar_path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_field(csv_path, grid: Grid) -> Field:
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    data = np.atleast_2d(data)
    comps = data.shape[1] - 4
    order = np.argsort(data[:, 0])
    return Field(grid, comps, data[order, 4:4 + comps])
