"""Discrete-time quasistatic evolution under boundary loading.

Each time step minimizes the film energy over the deformation u (Dirichlet
data on the frame and lateral boundary) and the crack field v (pointwise
box constraint 0 <= v <= v_previous: cracks only grow) by alternate
minimization:

* u-step: exact sparse solve for the quadratic density kinds (the bulk is
  then a decoupled anisotropic Laplacian per component); damped Newton with
  an SPD surrogate Hessian otherwise.
* v-step: the energy is quadratic in v, so the box-constrained problem is
  solved exactly by a projected-Newton active-set iteration.

The energy is non-increasing across inner iterations (asserted), the
returned v never exceeds its predecessor, and the trace records per-step
energies, the incremental boundary work (trapezoidal stress pairing, second
order in the step), and the running balance residual
total(t) - total(0) - work(t).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from lamella import energies
from lamella.densities import DensityModel, eval_w, grad_w
from lamella.errors import DomainError, InvariantViolation, NumericalError
from lamella.grids import Field, Grid, PhaseParams
from lamella.relaxation import MembraneDensity

log = logging.getLogger("lamella")

DEFAULT_ALT_TOL = 1e-8
DEFAULT_MAX_SWEEPS = 200
STABILITY_TOL = 1e-6


# ---------------------------------------------------------------------------
# Boundary programs
# ---------------------------------------------------------------------------

@dataclass
class BoundaryProgram:
    """Time-parameterized boundary deformation.

    The datum is the affine map ``load(t) * (matrix @ x_inplane + offset)``
    extended over the whole grid; on 3D grids an optional transverse strain
    profile adds ``load(t) * eps * (x3 + 1) * transverse`` so that the
    scaled datum gradient carries the fixed third column ``transverse``
    for every thickness.
    """

    matrix: np.ndarray
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    transverse: np.ndarray | None = None
    t_final: float = 1.0
    n_steps: int = 16
    clamp: str = "frame"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float).reshape(3, 2)
        self.offset = np.asarray(self.offset, dtype=float).reshape(3)
        if self.transverse is not None:
            self.transverse = np.asarray(self.transverse, dtype=float).reshape(3)
        if self.n_steps < 1:
            raise DomainError("need at least one time step")
        if self.t_final <= 0.0:
            raise DomainError("final time must be positive")

    def load(self, t: float) -> float:
        return t

    def time_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_steps + 1)

    def datum(self, t: float, grid: Grid, eps: float) -> Field:
        coords = grid.node_coords()
        s = self.load(t)
        vals = s * (coords[:, :2] @ self.matrix.T + self.offset)
        if self.transverse is not None and not grid.is_2d:
            vals = vals + s * eps * (coords[:, 2:3] + 1.0) * self.transverse
        return Field(grid, 3, vals)


# ---------------------------------------------------------------------------
# States and traces
# ---------------------------------------------------------------------------

@dataclass
class EvolutionState:
    u: Field
    v: Field
    eps: float                  # 0 marks the membrane (2D limit) model
    t: float
    density: DensityModel | MembraneDensity

    @property
    def is_membrane(self) -> bool:
        return self.u.grid.is_2d


@dataclass
class EvolutionTrace:
    t: np.ndarray
    bulk: np.ndarray
    surface: np.ndarray
    total: np.ndarray
    work_inc: np.ndarray
    work_cum: np.ndarray
    residual: np.ndarray
    alt_iters: np.ndarray
    sup_u: np.ndarray
    eps: float = 0.0
    v_checkpoints: list = field(default_factory=list, repr=False)

    COLUMNS = ("t", "bulk", "surface", "total", "work_inc", "work_cum",
               "residual", "alt_iters", "sup_u")

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for k in range(len(self.t)):
                row = [self.t[k], self.bulk[k], self.surface[k], self.total[k],
                       self.work_inc[k], self.work_cum[k], self.residual[k],
                       self.alt_iters[k], self.sup_u[k]]
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")

    @classmethod
    def from_csv(cls, path, eps: float = 0.0) -> "EvolutionTrace":
        data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        cols = {name: data[:, k] for k, name in enumerate(cls.COLUMNS)}
        return cls(eps=eps, **cols)


@dataclass
class SolverParams:
    alt_tol: float = DEFAULT_ALT_TOL
    max_sweeps: int = DEFAULT_MAX_SWEEPS
    newton_tol: float = 1e-10
    newton_max_iter: int = 60
    qp_max_iter: int = 100
    crack_seeds: tuple = ()      # (axis, position) plane dips tried per step


# ---------------------------------------------------------------------------
# Assembly helpers
# ---------------------------------------------------------------------------

class _Workspace:
    """Cached connectivity and stencils for one (grid, eps) pair."""

    def __init__(self, grid: Grid, eps: float, clamp: str = "frame"):
        self.grid = grid
        self.eps = eps
        self.clamp = clamp
        self.cells = grid.cell_nodes()
        self.mask = grid.interior_cell_mask()
        self.icells = self.cells[self.mask]
        self.vol = grid.hx * grid.hy if grid.is_2d else grid.hx * grid.hy * grid.hz
        self.D = energies.gradient_stencil(grid, None if grid.is_2d else eps)
        self.DtD = self.D.T @ self.D
        # exact interpolant stiffness for the crack field (no parity
        # zero-energy modes, unlike the midpoint stencil), per unit coef
        self.S_over_vol = energies.scaled_stiffness(
            grid, None if grid.is_2d else eps) / self.vol
        k = self.icells.shape[1]
        self.mvec = np.full(k, 1.0 / k)
        self.mmT = np.outer(self.mvec, self.mvec)
        self.rows = np.repeat(self.icells, k, axis=1).ravel()
        self.cols = np.tile(self.icells, (1, k)).ravel()
        self.dirichlet = grid.dirichlet_node_mask(clamp)
        self.free = ~self.dirichlet
        self.n = grid.n_nodes
        self.factor = 2.0 if grid.is_2d else 1.0  # thickness of the film

    def scalar_matrix(self, coefs: np.ndarray, base: np.ndarray) -> sparse.csr_matrix:
        """sum_c coefs[c] * vol * base scattered over interior cells."""
        blocks = coefs[:, None, None] * (self.vol * base)[None, :, :]
        return sparse.coo_matrix(
            (blocks.ravel(), (self.rows, self.cols)),
            shape=(self.n, self.n)).tocsr()

    def cell_grads(self, values: np.ndarray) -> np.ndarray:
        """(interior cells, comps, dim) gradients of nodal values."""
        return np.einsum("dk,nkc->ncd", self.D, values[self.icells])

    def cell_means(self, values: np.ndarray) -> np.ndarray:
        return values[self.icells, 0].mean(axis=1)

    def scatter_forces(self, per_cell: np.ndarray) -> np.ndarray:
        """Accumulate per-cell (comps, corners) contributions to nodes."""
        out = np.zeros((self.n, per_cell.shape[1]))
        np.add.at(out, self.icells.ravel(),
                  per_cell.transpose(0, 2, 1).reshape(-1, per_cell.shape[1]))
        return out


def _density_values(ws: _Workspace, density, u_vals: np.ndarray,
                    need_grad: bool = True):
    """(G, W, dW) per interior cell for either model flavor.

    The gradient is skipped when not needed: for table-backed membrane
    densities it costs 12 interpolations per cell.
    """
    G = ws.cell_grads(u_vals)
    if ws.grid.is_2d:
        w = np.asarray(density.value(G))
        dw = np.asarray(density.gradient(G)) if need_grad else None
    else:
        w = np.asarray(eval_w(density, G))
        dw = np.asarray(grad_w(density, G)) if need_grad else None
    return G, w, dw


def _bulk_from_cells(ws: _Workspace, w: np.ndarray, vbar: np.ndarray,
                     eta: float) -> float:
    return float(ws.vol * np.sum((vbar ** 2 + eta) * w))


def _surface_from_values(ws: _Workspace, v_vals: np.ndarray, ell: float) -> float:
    vals = v_vals[ws.icells, 0]
    vbar = vals.mean(axis=1)
    grad_part = ell * ws.vol * float(
        np.einsum("nk,kl,nl->", vals, ws.S_over_vol, vals))
    well = ws.vol * float(np.sum((1.0 - vbar) ** 2 / (4.0 * ell)))
    return grad_part + well


# ---------------------------------------------------------------------------
# u-step
# ---------------------------------------------------------------------------

def _u_step_quadratic(ws: _Workspace, density, u_vals, v_vals, eta):
    """Exact solve: the degraded quadratic bulk decouples per component."""
    vbar = ws.cell_means(v_vals)
    coefs = 2.0 * (vbar ** 2 + eta)
    K = ws.scalar_matrix(coefs, ws.DtD)
    if ws.grid.is_2d:
        shift_rows = density.shift_planar
    else:
        shift_rows = density.shift
    # rhs from the shift: 2 w_c vol D^T M_i per component
    rhs = np.zeros((ws.n, 3))
    if np.any(shift_rows):
        DtM = ws.D.T @ shift_rows.T        # (corners, comps)
        per_cell = coefs[:, None, None] * (ws.vol * DtM)[None]
        np.add.at(rhs, ws.icells.ravel(), per_cell.reshape(-1, 3))
    free = ws.free
    Kff = K[free][:, free].tocsc()
    Kfd = K[free][:, ~free]
    lu = splu(Kff)
    out = u_vals.copy()
    rhs_f = rhs[free] - Kfd @ u_vals[~free]
    for i in range(3):
        out[free, i] = lu.solve(rhs_f[:, i])
    return out


def _u_step_newton(ws: _Workspace, density, u_vals, v_vals, eta, params):
    """Damped Newton with an SPD surrogate Hessian (isotropic curvature)."""
    vbar = ws.cell_means(v_vals)
    wts = vbar ** 2 + eta
    u = u_vals.copy()
    free = ws.free

    def energy_and_force(uv):
        G, w, dw = _density_values(ws, density, uv)
        e = _bulk_from_cells(ws, w, vbar, eta)
        per_cell = (ws.vol * wts)[:, None, None] * np.einsum("nid,dk->nik", dw, ws.D)
        f = ws.scatter_forces(per_cell)
        return e, f, G

    e, f, G = energy_and_force(u)
    scale = max(1.0, float(np.abs(f[free]).max(initial=0.0)))
    for _ in range(params.newton_max_iter):
        gnorm = float(np.abs(f[free]).max(initial=0.0))
        if gnorm <= params.newton_tol * scale:
            break
        curv = _surrogate_curvature(ws, density, G)
        K = ws.scalar_matrix(wts * curv, ws.DtD)
        lu = splu(K[free][:, free].tocsc())
        step = np.zeros_like(u)
        for i in range(3):
            step[free, i] = lu.solve(-f[free, i])
        t = 1.0
        slope = float(np.sum(f[free] * step[free]))
        while t > 1e-14:
            trial = u + t * step
            et, ft, Gt = energy_and_force(trial)
            if et <= e + 1e-4 * t * slope:
                u, e, f, G = trial, et, ft, Gt
                break
            t *= 0.5
        else:
            raise NumericalError("deformation Newton line search stalled",
                                 best=u, log={"gnorm": gnorm})
    return u


def _surrogate_curvature(ws, density, G):
    if ws.grid.is_2d:
        return np.full(G.shape[0], 2.0)
    if density.kind == "double-well":
        return np.full(G.shape[0], 2.0)
    if density.kind == "p-power":
        p = density.p
        nrm2 = np.einsum("nij,nij->n", G, G)
        return np.maximum(p * (p - 1.0) * nrm2 ** ((p - 2.0) / 2.0), 1e-3)
    return np.full(G.shape[0], 2.0)


def _u_step(ws, density, u_vals, v_vals, eta, params):
    quad = density.is_quadratic if isinstance(density, (DensityModel, MembraneDensity)) else False
    if quad:
        return _u_step_quadratic(ws, density, u_vals, v_vals, eta)
    return _u_step_newton(ws, density, u_vals, v_vals, eta, params)


# ---------------------------------------------------------------------------
# v-step: exact box-constrained quadratic solve
# ---------------------------------------------------------------------------

def solve_box_qp(A: sparse.csr_matrix, b: np.ndarray, lo: np.ndarray,
                 hi: np.ndarray, x0: np.ndarray, active: np.ndarray,
                 max_iter: int = 100, tol: float = 1e-12) -> np.ndarray:
    """min 1/2 x^T A x - b^T x over lo <= x <= hi, on ``active`` indices.

    Projected Newton with exact solves on the free set; the projected
    line search keeps the objective non-increasing, so the returned point
    never exceeds the start energy even on early termination.
    """
    x = np.clip(x0, lo, hi)
    if not np.any(active):
        return x

    def q(xv):
        return 0.5 * float(xv @ (A @ xv)) - float(b @ xv)

    fx = q(x)
    scale = max(1.0, float(np.abs(b).max()))
    slack = 1e-14 * scale
    for _ in range(max_iter):
        g = A @ x - b
        at_lo = (x <= lo + slack) & (g > 0)
        at_hi = (x >= hi - slack) & (g < 0)
        free = active & ~(at_lo | at_hi)
        fidx = np.flatnonzero(free)
        if fidx.size == 0 or float(np.abs(g[fidx]).max()) <= tol * scale:
            return x
        xt = x.copy()
        xt[active & at_lo] = lo[active & at_lo]
        xt[active & at_hi] = hi[active & at_hi]
        Aff = A[fidx][:, fidx].tocsc()
        rhs = b[fidx] - (A[fidx] @ xt - Aff @ xt[fidx])
        try:
            xt[fidx] = splu(Aff).solve(rhs)
        except RuntimeError:
            xt[fidx] = x[fidx] - g[fidx]  # gradient fallback
        direction = np.clip(xt, lo, hi) - x
        t = 1.0
        moved = False
        while t > 1e-16:
            trial = np.clip(x + t * direction, lo, hi)
            ft = q(trial)
            if ft <= fx + 1e-15 * max(1.0, abs(fx)):
                x, fx, moved = trial, ft, True
                break
            t *= 0.5
        if not moved:
            return x  # stalled at the current (feasible) point
    raise NumericalError("crack-field QP did not reach KKT tolerance", best=x)


def _v_step(ws: _Workspace, density, u_vals, v_vals, prev_v, pp):
    """Exact minimizer of the (quadratic) energy in v given u."""
    G = ws.cell_grads(u_vals)
    if ws.grid.is_2d:
        w = np.maximum(np.asarray(density.value(G)), 0.0)
    else:
        w = np.maximum(np.asarray(eval_w(density, G)), 0.0)
    A = ws.scalar_matrix(2.0 * w, ws.mmT) \
        + ws.scalar_matrix(np.full(w.shape, 2.0 * pp.ell), ws.S_over_vol) \
        + ws.scalar_matrix(np.full(w.shape, 1.0 / (2.0 * pp.ell)), ws.mmT)
    b = np.zeros(ws.n)
    per_cell = np.tile(ws.vol / (2.0 * pp.ell) * ws.mvec, (ws.icells.shape[0], 1))
    np.add.at(b, ws.icells.ravel(), per_cell.ravel())

    active = np.zeros(ws.n, dtype=bool)
    active[np.unique(ws.icells)] = True
    lo = np.zeros(ws.n)
    hi = prev_v.copy()
    x0 = np.minimum(v_vals[:, 0], prev_v)
    x = solve_box_qp(A, b, lo, hi, x0, active)
    out = v_vals.copy()
    out[:, 0] = np.minimum(x, prev_v)  # exact irreversibility
    return out


# ---------------------------------------------------------------------------
# One quasistatic step
# ---------------------------------------------------------------------------

def _state_energies(ws: _Workspace, density, u_vals, v_vals, pp):
    _, w, _ = _density_values(ws, density, u_vals, need_grad=False)
    vbar = ws.cell_means(v_vals)
    bulk = ws.factor * _bulk_from_cells(ws, w, vbar, pp.eta)
    surf = ws.factor * _surface_from_values(ws, v_vals, pp.ell)
    return bulk, surf


def minimize_at_step(state: EvolutionState, g_t: Field, prev_v: Field,
                     pp: PhaseParams, params: SolverParams | None = None,
                     ws: _Workspace | None = None):
    """Alternate minimization at one time; returns (state, sweeps used).

    The datum is imposed exactly on the Dirichlet nodes, v is bounded above
    by ``prev_v`` pointwise, and the inner energy is checked monotone.
    """
    params = params or SolverParams()
    if ws is None:
        ws = _Workspace(state.u.grid, state.eps)
    pv = prev_v.values[:, 0]
    if pv.min() < -energies.V_BOUND_SLACK or pv.max() > 1.0 + energies.V_BOUND_SLACK:
        raise DomainError("previous crack field out of [0, 1]")

    u = state.u.values.copy()
    u[ws.dirichlet] = g_t.values[ws.dirichlet]
    v = np.minimum(state.v.values.copy(), pv[:, None])

    def total(uv, vv):
        b, s = _state_energies(ws, state.density, uv, vv, pp)
        return b + s

    e_prev = total(u, v)
    sweeps = 0
    for sweep in range(params.max_sweeps):
        sweeps = sweep + 1
        u = _u_step(ws, state.density, u, v, pp.eta, params)
        v = _v_step(ws, state.density, u, v, pv, pp)
        e_now = total(u, v)
        if e_now > e_prev + 1e-12 * max(1.0, abs(e_prev)):
            raise InvariantViolation(
                f"alternate minimization energy rose: {e_prev} -> {e_now}")
        if e_prev - e_now < params.alt_tol * max(abs(e_now), 1e-12):
            e_prev = e_now
            break
        e_prev = e_now
    # leave with the deformation in exact equilibrium for the final v
    u = _u_step(ws, state.density, u, v, pp.eta, params)

    new = EvolutionState(
        u=Field(state.u.grid, 3, u),
        v=Field(state.u.grid, 1, v),
        eps=state.eps, t=state.t, density=state.density)
    return new, sweeps


# ---------------------------------------------------------------------------
# Work pairing
# ---------------------------------------------------------------------------

def work_rate(state: EvolutionState, gdot: Field, pp: PhaseParams,
              ws: _Workspace | None = None) -> float:
    """Degraded stress paired with the datum rate.

    3D: integral of (v^2+eta) dW(scaled grad u) : (scaled grad gdot);
    membrane: twice the in-plane pairing with the relaxed density gradient.
    """
    if ws is None:
        ws = _Workspace(state.u.grid, state.eps)
    _, _, dw = _density_values(ws, state.density, state.u.values)
    Gdot = ws.cell_grads(gdot.values)
    vbar = ws.cell_means(state.v.values)
    pair = np.einsum("nij,nij->n", dw, Gdot)
    return ws.factor * float(ws.vol * np.sum((vbar ** 2 + pp.eta) * pair))


# ---------------------------------------------------------------------------
# Crack seeds (multi-start against the symmetric homogeneous branch)
# ---------------------------------------------------------------------------

def plane_seed(grid: Grid, axis: str, position: float) -> np.ndarray:
    """A v-field notched to zero across a vertical plane.

    The notch spans two node layers so at least one full cell layer is
    degraded; a single-node notch cannot unload the deformation (the cell
    mean of v stays well above zero) and would heal immediately.
    """
    coords = grid.node_coords()
    k = {"x1": 0, "x2": 1}.get(axis)
    if k is None:
        raise DomainError("seed axis must be x1 or x2 (cracks are vertical)")
    h = grid.hx if k == 0 else grid.hy
    # snap to the nearest cell center: exactly two node layers get zeroed,
    # degrading one full cell layer (the thinnest notch the deformation can
    # actually jump across)
    center = (np.floor(position / h) + 0.5) * h
    vals = np.ones((grid.n_nodes, 1))
    vals[np.abs(coords[:, k] - center) <= 0.55 * h, 0] = 0.0
    return vals


# ---------------------------------------------------------------------------
# Full evolution
# ---------------------------------------------------------------------------

def run_evolution(program: BoundaryProgram, grid: Grid, density,
                  pp: PhaseParams, eps: float,
                  params: SolverParams | None = None,
                  keep_checkpoints: bool = True) -> EvolutionTrace:
    """Sequential quasistatic evolution over the program's time grid."""
    params = params or SolverParams()
    pp.check_resolution(grid)
    if grid.is_2d and not isinstance(density, MembraneDensity):
        raise DomainError("midsurface runs need a relaxed membrane density")
    if not grid.is_2d and eps <= 0.0:
        raise DomainError("3D runs need a positive thickness")

    ws = _Workspace(grid, eps, program.clamp)
    times = program.time_grid()
    K = len(times)

    state = EvolutionState(
        u=Field(grid, 3), v=Field(grid, 1, np.ones((grid.n_nodes, 1))),
        eps=eps, t=times[0], density=density)

    seeds = [plane_seed(grid, ax, pos) for ax, pos in params.crack_seeds]

    cols = {name: np.zeros(K) for name in EvolutionTrace.COLUMNS}
    checkpoints = []
    prev_state = None
    prev_datum = None

    for k, t in enumerate(times):
        g_t = program.datum(t, grid, eps)
        prev_v = state.v if k == 0 else prev_state.v
        state.t = t
        best, sweeps = minimize_at_step(state, g_t, prev_v, pp, params, ws)
        best_e = sum(_state_energies(ws, density, best.u.values, best.v.values, pp))
        for seed in seeds:
            trial = EvolutionState(
                u=best.u, v=Field(grid, 1, np.minimum(seed, prev_v.values)),
                eps=eps, t=t, density=density)
            cand, csweeps = minimize_at_step(trial, g_t, prev_v, pp, params, ws)
            cand_e = sum(_state_energies(ws, density, cand.u.values,
                                         cand.v.values, pp))
            if cand_e < best_e - 1e-12 * max(1.0, abs(best_e)):
                best, best_e, sweeps = cand, cand_e, csweeps
        state = best

        bulk, surf = _state_energies(ws, density, state.u.values, state.v.values, pp)
        cols["t"][k] = t
        cols["bulk"][k] = bulk
        cols["surface"][k] = surf
        cols["total"][k] = bulk + surf
        cols["alt_iters"][k] = sweeps
        cols["sup_u"][k] = state.u.sup_norm()
        if k > 0:
            dg = Field(grid, 3, g_t.values - prev_datum.values)
            w_inc = 0.5 * (work_rate(prev_state, dg, pp, ws)
                           + work_rate(state, dg, pp, ws))
            cols["work_inc"][k] = w_inc
            cols["work_cum"][k] = cols["work_cum"][k - 1] + w_inc
        cols["residual"][k] = cols["total"][k] - cols["total"][0] - cols["work_cum"][k]
        if keep_checkpoints:
            checkpoints.append(state.v.values[:, 0].copy())
        prev_state = state
        prev_datum = g_t
        log.info("t=%.4f total=%.6g sweeps=%d sup|u|=%.3g",
                 t, cols["total"][k], sweeps, cols["sup_u"][k])

    if np.any(cols["sup_u"] > 10.0 * (1.0 + cols["sup_u"][0])):
        log.warning("deformation sup-norm grew by more than 10x over the run")

    return EvolutionTrace(eps=eps, v_checkpoints=checkpoints, **cols)


def static_scan(program: BoundaryProgram, grid: Grid, density,
                pp: PhaseParams, params: SolverParams | None = None):
    """Independent per-load minimizations (no damage history).

    At every time-grid point the energy is minimized from a sound film
    (crack field 1) and from each configured crack seed, keeping the best.
    This is the per-load Griffith response the 1D jump oracle computes:
    that oracle carries no history either, so oracle comparisons use this
    scan rather than a chained evolution, whose irreversibly accumulated
    bulk damage has no sharp-model counterpart.

    Returns (times, total energies, surface energies).
    """
    params = params or SolverParams()
    ws = _Workspace(grid, eps=0.0 if grid.is_2d else 1.0, clamp=program.clamp)
    times = program.time_grid()
    sound = Field(grid, 1, np.ones((grid.n_nodes, 1)))
    seeds = [plane_seed(grid, ax, pos) for ax, pos in params.crack_seeds]
    totals = np.zeros(len(times))
    surfaces = np.zeros(len(times))
    for k, t in enumerate(times):
        g_t = program.datum(t, grid, 0.0 if grid.is_2d else ws.eps)
        best = None
        for v0 in [sound.values] + seeds:
            st = EvolutionState(u=g_t, v=Field(grid, 1, v0.copy()),
                                eps=ws.eps, t=t, density=density)
            cand, _ = minimize_at_step(st, g_t, sound, pp, params, ws)
            b, s = _state_energies(ws, density, cand.u.values, cand.v.values, pp)
            if best is None or b + s < best[0]:
                best = (b + s, s)
        totals[k], surfaces[k] = best
    return times, totals, surfaces


# ---------------------------------------------------------------------------
# Stability probing
# ---------------------------------------------------------------------------

@dataclass
class StabilityReport:
    gaps: np.ndarray
    min_gap: float
    worst: str
    passed: bool


def stability_check(state: EvolutionState, g_t: Field, pp: PhaseParams,
                    n_competitors: int = 20, seed: int = 0,
                    tol: float = STABILITY_TOL) -> StabilityReport:
    """Energy gaps of random admissible competitors against the state.

    Half the competitors add smooth interior bumps to the deformation, half
    enlarge the crack (v' <= v) with an exact re-solve of u.  A negative
    gap beyond tolerance means the state was not a local minimum.
    """
    ws = _Workspace(state.u.grid, state.eps)
    rng = np.random.default_rng(seed)
    coords = state.u.grid.node_coords()
    base = sum(_state_energies(ws, state.density, state.u.values,
                               state.v.values, pp))
    scale = max(1.0, abs(base))
    gaps = np.zeros(n_competitors)
    worst = ("", np.inf)
    params = SolverParams()
    for j in range(n_competitors):
        if j % 2 == 0:
            amp = 0.05 * rng.uniform(0.2, 1.0) * (1.0 + state.u.sup_norm())
            kx = rng.integers(1, 4)
            ky = rng.integers(1, 4)
            bump = (np.sin(np.pi * kx * np.clip(coords[:, 0] / state.u.grid.lx, 0, 1))
                    * np.sin(np.pi * ky * np.clip(coords[:, 1] / state.u.grid.ly, 0, 1)))
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            u_vals = state.u.values + amp * bump[:, None] * direction
            u_vals[ws.dirichlet] = state.u.values[ws.dirichlet]
            e = sum(_state_energies(ws, state.density, u_vals, state.v.values, pp))
            label = f"bump(amp={amp:.3g},k=({kx},{ky}))"
        else:
            center = rng.uniform([0.2 * state.u.grid.lx, 0.2 * state.u.grid.ly],
                                 [0.8 * state.u.grid.lx, 0.8 * state.u.grid.ly])
            radius = rng.uniform(2, 5) * state.u.grid.spacing
            d2 = ((coords[:, 0] - center[0]) ** 2
                  + (coords[:, 1] - center[1]) ** 2)
            dip = np.exp(-d2 / (2 * radius ** 2))
            v_vals = np.minimum(state.v.values[:, 0], 1.0 - 0.9 * dip)
            v_vals = np.maximum(v_vals, 0.0)
            frame = state.u.grid.frame_node_mask()
            v_vals[frame] = state.v.values[frame, 0]
            u_vals = state.u.values.copy()
            u_vals[ws.dirichlet] = g_t.values[ws.dirichlet]
            u_vals = _u_step(ws, state.density, u_vals, v_vals[:, None],
                             pp.eta, params)
            e = sum(_state_energies(ws, state.density, u_vals,
                                    v_vals[:, None], pp))
            label = f"crack(center={center.round(3)},r={radius:.3g})"
        gaps[j] = e - base
        if gaps[j] < worst[1]:
            worst = (label, gaps[j])
    min_gap = float(gaps.min())
    return StabilityReport(gaps=gaps, min_gap=min_gap, worst=worst[0],
                           passed=bool(min_gap >= -tol * scale))
