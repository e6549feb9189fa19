"""Discrete film energies.

The 3D film energy on the unit cylinder uses the scaled gradient
(in-plane derivatives | transverse derivative / eps), so transverse
variations pay a 1/eps penalty and the thin-film limit emerges as eps
drops.  Cracks are carried by a scalar field v in [0, 1] (1 = sound),
degrading the bulk density by (v^2 + eta) and paying the regularized
surface term

    ell |grad~ v|^2 + (1 - v)^2 / (4 ell),

whose sharp-interface limit has unit toughness for a vertical crack and
1/eps for a horizontal one, matching the anisotropic surface measure of
the scaled sharp energy.

Gradients are per-cell (multilinear shape functions evaluated at the cell
midpoint); integrals use midpoint quadrature with a fixed cell order, so
energy sums are bit-stable.
"""

from __future__ import annotations

import numpy as np

from lamella.densities import DensityModel, eval_w
from lamella.errors import DomainError
from lamella.grids import Field, Grid, PhaseParams

V_BOUND_SLACK = 1e-12


# ---------------------------------------------------------------------------
# Per-cell gradient stencils
# ---------------------------------------------------------------------------

def gradient_stencil(grid: Grid, eps: float | None = None) -> np.ndarray:
    """Midpoint-gradient matrix D: (dim, corners).

    ``D @ values_at_corners`` gives the gradient of a scalar multilinear
    shape at the cell center.  For 3D grids the transverse row carries the
    1/eps scaling when ``eps`` is given.
    """
    if grid.is_2d:
        dx, dy = 1.0 / (2 * grid.hx), 1.0 / (2 * grid.hy)
        return np.array([
            [-dx, dx, -dx, dx],
            [-dy, -dy, dy, dy],
        ])
    dx, dy, dz = 1.0 / (4 * grid.hx), 1.0 / (4 * grid.hy), 1.0 / (4 * grid.hz)
    D = np.array([
        [-dx, dx, -dx, dx, -dx, dx, -dx, dx],
        [-dy, -dy, dy, dy, -dy, -dy, dy, dy],
        [-dz, -dz, -dz, -dz, dz, dz, dz, dz],
    ])
    if eps is not None:
        if eps <= 0.0:
            raise DomainError("thickness eps must be positive")
        D = D.copy()
        D[2] /= eps
    return D


def _shape_gradient_rows(grid: Grid, point) -> np.ndarray:
    """Rows of multilinear shape gradients at a reference point in [0,1]^dim.

    Returns (dim, corners); row d lists d/dx_d of each corner shape.
    """
    if grid.is_2d:
        xi, et = point
        gx = np.array([-(1 - et), (1 - et), -et, et]) / grid.hx
        gy = np.array([-(1 - xi), -xi, (1 - xi), xi]) / grid.hy
        return np.stack([gx, gy])
    xi, et, ze = point
    f = [(1 - xi), xi]
    g = [(1 - et), et]
    h = [(1 - ze), ze]
    gx = np.array([(-1) ** (1 - a) * g[b] * h[c]
                   for c in (0, 1) for b in (0, 1) for a in (0, 1)]) / grid.hx
    gy = np.array([f[a] * (-1) ** (1 - b) * h[c]
                   for c in (0, 1) for b in (0, 1) for a in (0, 1)]) / grid.hy
    gz = np.array([f[a] * g[b] * (-1) ** (1 - c)
                   for c in (0, 1) for b in (0, 1) for a in (0, 1)]) / grid.hz
    return np.stack([gx, gy, gz])


def element_stiffness(grid: Grid):
    """Exact per-axis element stiffness of the multilinear interpolant.

    ``S[d]`` integrates (d/dx_d u)(d/dx_d w) over one cell (measure
    included); 2-point Gauss per axis is exact for these integrands.
    Unlike the midpoint rule, these see the cell parity modes, which keeps
    the crack-field system nonsingular.
    """
    gp = 0.5 + np.array([-1.0, 1.0]) / (2 * np.sqrt(3.0))
    dim = 2 if grid.is_2d else 3
    vol = grid.hx * grid.hy if grid.is_2d else grid.hx * grid.hy * grid.hz
    pts = [(a, b) for a in gp for b in gp] if dim == 2 else \
        [(a, b, c) for a in gp for b in gp for c in gp]
    w = vol / len(pts)
    S = [np.zeros((2 ** dim, 2 ** dim)) for _ in range(dim)]
    for pt in pts:
        rows = _shape_gradient_rows(grid, pt)
        for d in range(dim):
            S[d] += w * np.outer(rows[d], rows[d])
    return S


def scaled_stiffness(grid: Grid, eps: float | None) -> np.ndarray:
    """Element stiffness of the scaled gradient: transverse part / eps^2."""
    S = element_stiffness(grid)
    if grid.is_2d:
        return S[0] + S[1]
    if eps is None or eps <= 0.0:
        raise DomainError("thickness eps must be positive")
    return S[0] + S[1] + S[2] / (eps * eps)


def cell_values(field: Field) -> np.ndarray:
    """Field values gathered per cell: (n_cells, corners, components)."""
    return field.values[field.grid.cell_nodes()]


def cell_gradients(field: Field, D: np.ndarray) -> np.ndarray:
    """Per-cell gradients: (n_cells, components, dim)."""
    vals = cell_values(field)                       # (cells, corners, comps)
    return np.einsum("dk,nkc->ncd", D, vals)


def scaled_gradient(u: Field, eps: float) -> np.ndarray:
    """Per-cell scaled deformation gradient (n_cells, 3, 3) on a 3D grid."""
    if u.grid.is_2d:
        raise DomainError("scaled gradient needs a 3D grid")
    if u.components != 3:
        raise DomainError("scaled gradient needs a 3-component field")
    if eps <= 0.0:
        raise DomainError("thickness eps must be positive")
    D = gradient_stencil(u.grid, eps)
    return cell_gradients(u, D)


def planar_gradient(u: Field) -> np.ndarray:
    """Per-cell in-plane gradient (n_cells, comps, 2) on a midsurface grid."""
    if not u.grid.is_2d:
        raise DomainError("planar gradient needs a midsurface grid")
    D = gradient_stencil(u.grid)
    return cell_gradients(u, D)


def _check_phase_bounds(v: Field):
    if v.components != 1:
        raise DomainError("phase field must be scalar")
    lo, hi = float(v.values.min()), float(v.values.max())
    if lo < -V_BOUND_SLACK or hi > 1.0 + V_BOUND_SLACK:
        raise DomainError(f"phase field out of [0, 1]: range [{lo}, {hi}]")


def _cell_volume(grid: Grid) -> float:
    return grid.hx * grid.hy if grid.is_2d else grid.hx * grid.hy * grid.hz


def _interior(grid: Grid) -> np.ndarray:
    return grid.interior_cell_mask()


def bulk_energy(u: Field, v: Field, eps: float, model: DensityModel,
                pp: PhaseParams) -> float:
    """Degraded bulk energy over the film: sum of (v^2 + eta) W per cell.

    On a 3D grid the density sees the scaled gradient; on a midsurface grid
    ``model`` must be a relaxed membrane density handle and the caller owns
    the thickness factor 2 (see ``evolution``).
    """
    if u.grid is not v.grid and u.grid != v.grid:
        raise DomainError("deformation and phase field must share the grid")
    _check_phase_bounds(v)
    mask = _interior(u.grid)
    vbar = cell_values(v)[..., 0].mean(axis=1)[mask]
    if u.grid.is_2d:
        G = planar_gradient(u)[mask]
        w = np.asarray(model.value(G))
    else:
        G = scaled_gradient(u, eps)[mask]
        w = np.asarray(eval_w(model, G))
    return float(_cell_volume(u.grid) * np.sum((vbar ** 2 + pp.eta) * w))


def surface_energy(v: Field, eps: float, pp: PhaseParams) -> float:
    """Regularized crack surface energy over the film.

    3D grids weight the transverse derivative of v by 1/eps, mirroring the
    anisotropy of the scaled sharp measure; midsurface grids have no
    transverse term and the caller owns the thickness factor 2.  The
    gradient term integrates the multilinear interpolant exactly; the well
    term uses the midpoint rule.
    """
    parts = surface_energy_parts(v, eps, pp)
    return parts["total"]


def surface_energy_parts(v: Field, eps: float, pp: PhaseParams) -> dict:
    """Split of the surface energy: in-plane / transverse gradient parts and
    the potential well term.  Used by the sweep diagnostics."""
    _check_phase_bounds(v)
    grid = v.grid
    mask = _interior(grid)
    vals = cell_values(v)[mask, :, 0]
    vbar = vals.mean(axis=1)
    S = element_stiffness(grid)
    inplane = pp.ell * float(
        np.einsum("nk,kl,nl->", vals, S[0] + S[1], vals))
    transverse = 0.0
    if not grid.is_2d:
        if eps <= 0.0:
            raise DomainError("thickness eps must be positive")
        transverse = pp.ell / (eps * eps) * float(
            np.einsum("nk,kl,nl->", vals, S[2], vals))
    vol = _cell_volume(grid)
    well = vol * float(np.sum((1.0 - vbar) ** 2 / (4.0 * pp.ell)))
    return {"inplane": inplane, "transverse": transverse, "well": well,
            "total": inplane + transverse + well}


def sharp_surface_energy(facets, eps: float) -> float:
    """Scaled sharp surface measure of a faceted crack.

    ``facets`` is a list of (area, unit normal); each facet contributes
    area * |(n1, n2, n3/eps)|.
    """
    if eps <= 0.0:
        raise DomainError("thickness eps must be positive")
    total = 0.0
    for area, normal in facets:
        normal = np.asarray(normal, dtype=float)
        if area < 0.0:
            raise DomainError("facet areas must be nonnegative")
        if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
            raise DomainError("facet normals must be unit length")
        weighted = np.array([normal[0], normal[1], normal[2] / eps])
        total += area * float(np.linalg.norm(weighted))
    return total


# ---------------------------------------------------------------------------
# Truncation
# ---------------------------------------------------------------------------

def _truncation_profile(r: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Radial scale factor s(r)/r of the truncation map.

    s is C^1: identity below lo, a parabolic shoulder (slope 1 -> 0 over
    width w), then a cubic fall to zero at hi.  All slopes stay in [-1, 1],
    so the map is 1-Lipschitz; a single Hermite cubic would overshoot
    slope -1.16 on the way down.
    """
    w = 0.1 * lo
    peak = lo + 0.5 * w
    fall = hi - (lo + w)
    s = np.where(r < lo, r, 0.0)
    shoulder = (r >= lo) & (r < lo + w)
    rs = r[shoulder] - lo
    s[shoulder] = lo + rs - rs * rs / (2.0 * w)
    falling = (r >= lo + w) & (r < hi)
    t = (r[falling] - (lo + w)) / fall
    s[falling] = peak * (1.0 - 3.0 * t * t + 2.0 * t ** 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(r > 0.0, s / np.maximum(r, 1e-300), 1.0)
    return factor


def truncate_values(values: np.ndarray, level: int) -> np.ndarray:
    """Apply the radial truncation map at threshold index ``level``."""
    if level < 0:
        raise DomainError("truncation level must be nonnegative")
    lo = float(np.exp(level))
    hi = float(np.exp(level + 1))
    vals = np.asarray(values, dtype=float)
    r = np.sqrt((vals * vals).sum(axis=-1))
    return vals * _truncation_profile(r, lo, hi)[..., None]


def truncate_field(u: Field, level: int) -> Field:
    """Truncate a field radially: identity below e^level, zero above
    e^(level+1), 1-Lipschitz in between."""
    return Field(u.grid, u.components, truncate_values(u.values, level))
