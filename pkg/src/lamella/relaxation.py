"""Relaxed membrane densities.

The in-plane density obtained from a 3D stored energy W is computed in two
stages.  First the transverse relaxation minimizes W over the third gradient
column,

    W0(xibar) = inf_z W( (xibar | z) ),

then the membrane density is the quasiconvex envelope of W0, which is not
exactly computable in general.  Two estimators bracket it from above:

* ``lamination_bound`` — finite-depth rank-one lamination over a direction/
  amplitude grid with local polish; cheap, used by the membrane solver.
* ``cell_problem_bound`` — minimization of the periodic-cell functional over
  piecewise-bilinear fields vanishing on the cell boundary; the validation
  estimator.

Both never exceed W0 and are monotone in their resolution parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from lamella import densities
from lamella.densities import DensityModel
from lamella.errors import ConfigError, DomainError, NumericalError


def _as_planar(xibar) -> np.ndarray:
    xibar = np.asarray(xibar, dtype=float)
    if xibar.shape[-2:] != (3, 2):
        raise DomainError(f"expected trailing 3x2 matrix shape, got {xibar.shape}")
    if not np.all(np.isfinite(xibar)):
        raise DomainError("non-finite matrix entries")
    return xibar


def _with_column(xibar, z) -> np.ndarray:
    """Assemble (xibar | z) full matrices, broadcasting over batches."""
    xibar = np.asarray(xibar, dtype=float)
    z = np.asarray(z, dtype=float)
    return np.concatenate([xibar, z[..., None]], axis=-1)


@dataclass
class EnvelopeEstimate:
    """An upper estimate of the membrane density at one in-plane gradient."""

    value: float
    method: str                     # closed-form | lamination | cell-problem
    resolution: int = 0             # lamination depth or cell mesh size
    argmin_z: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Transverse relaxation
# ---------------------------------------------------------------------------

def closed_form_w0(model: DensityModel):
    """Vectorized (value, argmin_z, in-plane gradient) closed forms.

    Available for every built-in kind; ``relax_transverse`` exercises the
    Newton path for the non-quadratic kinds and is tested against this.
    """
    if model.kind == "quadratic-isotropic":
        def value(xb):
            xb = _as_planar(xb)
            return np.einsum("...ij,...ij->...", xb, xb)

        def argmin_z(xb):
            xb = _as_planar(xb)
            return np.zeros(xb.shape[:-2] + (3,))

        def grad(xb):
            return 2.0 * _as_planar(xb)

    elif model.kind == "quadratic-shifted":
        mb = model.shift[:, :2]
        m3 = model.shift[:, 2]

        def value(xb):
            d = _as_planar(xb) - mb
            return np.einsum("...ij,...ij->...", d, d)

        def argmin_z(xb):
            xb = _as_planar(xb)
            return np.broadcast_to(m3, xb.shape[:-2] + (3,)).copy()

        def grad(xb):
            return 2.0 * (_as_planar(xb) - mb)

    elif model.kind == "double-well":
        ab = model.well[:, :2]
        a3 = model.well[:, 2]

        def _sign(xb):
            inner = np.einsum("...ij,ij->...", _as_planar(xb), ab)
            return np.where(inner >= 0.0, 1.0, -1.0)

        def value(xb):
            s = _sign(xb)
            d = _as_planar(xb) - s[..., None, None] * ab
            return np.einsum("...ij,...ij->...", d, d)

        def argmin_z(xb):
            s = _sign(xb)
            return s[..., None] * a3

        def grad(xb):
            s = _sign(xb)
            return 2.0 * (_as_planar(xb) - s[..., None, None] * ab)

    else:  # p-power
        p = model.p

        def value(xb):
            xb = _as_planar(xb)
            nrm2 = np.einsum("...ij,...ij->...", xb, xb)
            return nrm2 ** (p / 2.0)

        def argmin_z(xb):
            xb = _as_planar(xb)
            return np.zeros(xb.shape[:-2] + (3,))

        def grad(xb):
            xb = _as_planar(xb)
            nrm2 = np.einsum("...ij,...ij->...", xb, xb)
            with np.errstate(divide="ignore", invalid="ignore"):
                coef = np.where(nrm2 > 0.0, p * nrm2 ** ((p - 2.0) / 2.0), 0.0)
            return coef[..., None, None] * xb

    return value, argmin_z, grad


def relax_transverse(model: DensityModel, xibar, *, grid_radius: float | None = None,
                     tol: float = 1e-10, max_iter: int = 80) -> EnvelopeEstimate:
    """Minimize W over the third gradient column at fixed in-plane part.

    Closed form for the quadratic kinds; damped Newton from a 3x3x3
    multistart grid otherwise (coercivity guarantees a minimizer).
    """
    xibar = _as_planar(xibar)
    if xibar.ndim != 2:
        raise DomainError("relax_transverse takes a single 3x2 matrix")

    if model.kind == "quadratic-isotropic":
        return EnvelopeEstimate(float(np.sum(xibar * xibar)), "closed-form",
                                argmin_z=np.zeros(3))
    if model.kind == "quadratic-shifted":
        d = xibar - model.shift[:, :2]
        return EnvelopeEstimate(float(np.sum(d * d)), "closed-form",
                                argmin_z=model.shift[:, 2].copy())

    r = grid_radius if grid_radius is not None else 1.0 + float(np.abs(xibar).max())
    if model.kind == "double-well":
        r = max(r, 1.0 + float(np.abs(model.well[:, 2]).max()))
    starts = np.array(np.meshgrid(*[[-r, 0.0, r]] * 3, indexing="ij"),
                      dtype=float).reshape(3, -1).T

    def f(z):
        return densities.eval_w(model, _with_column(xibar, z))

    def g(z):
        return densities.grad_w(model, _with_column(xibar, z))[:, 2]

    best_z, best_f = None, np.inf
    converged = False
    for z0 in starts:
        z = z0.copy()
        for _ in range(max_iter):
            gz = g(z)
            gn = float(np.linalg.norm(gz))
            if gn <= tol:
                break
            step = _transverse_newton_step(model, xibar, z, gz)
            fz = f(z)
            t = 1.0
            while t > 1e-14:
                zt = z - t * step
                if f(zt) <= fz - 1e-4 * t * float(step @ gz):
                    break
                t *= 0.5
            z = z - t * step
        fz = f(z)
        if fz < best_f:
            best_f, best_z = fz, z.copy()
        if float(np.linalg.norm(g(z))) <= tol:
            converged = True
    if not converged:
        raise NumericalError("transverse relaxation Newton did not converge",
                             best=EnvelopeEstimate(float(best_f), "closed-form",
                                                   argmin_z=best_z))
    return EnvelopeEstimate(float(best_f), "closed-form", argmin_z=best_z)


def _transverse_newton_step(model, xibar, z, gz):
    """Newton step on z from the analytic column Hessian of each kind."""
    if model.kind == "double-well":
        hess = 2.0 * np.eye(3)  # branch-wise quadratic
    else:  # p-power
        p = model.p
        full = _with_column(xibar, z)
        nrm2 = float(np.sum(full * full))
        if nrm2 <= 0.0:
            hess = 2.0 * np.eye(3)
        else:
            hess = (p * nrm2 ** ((p - 2.0) / 2.0) * np.eye(3)
                    + p * (p - 2.0) * nrm2 ** ((p - 4.0) / 2.0) * np.outer(z, z))
            hess += 1e-12 * np.eye(3)
    try:
        return np.linalg.solve(hess, gz)
    except np.linalg.LinAlgError:
        return gz


# ---------------------------------------------------------------------------
# Rank-one lamination
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LaminationGrid:
    """Search grid for rank-one splits; recorded in run configs."""

    n_inplane: int = 32             # unit in-plane directions over [0, pi)
    amplitudes: tuple = tuple(np.geomspace(1e-3, 1e1, 25))
    lambdas: tuple = tuple(np.linspace(0.0, 1.0, 17))
    depth_cap: int = 3
    polish: bool = True

    def inplane_dirs(self) -> np.ndarray:
        th = np.pi * np.arange(self.n_inplane) / self.n_inplane
        return np.stack([np.cos(th), np.sin(th)], axis=1)

    def vector_dirs(self) -> np.ndarray:
        # canonical axes first (exact for axis-aligned wells), then diagonals
        axes = np.eye(3)
        diag = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=float)
        diag /= np.linalg.norm(diag, axis=1, keepdims=True)
        return np.vstack([axes, diag])


def _laminate_value(w0, xibar, direction, lam, amp):
    """Energy of the rank-one split at (lambda, amplitude) along direction."""
    lam = min(max(lam, 0.0), 1.0)
    plus = xibar + (1.0 - lam) * amp * direction
    minus = xibar - lam * amp * direction
    return lam * float(w0(plus)) + (1.0 - lam) * float(w0(minus))


def lamination_bound(w0, xibar, depth: int, grid: LaminationGrid | None = None) -> EnvelopeEstimate:
    """Depth-k rank-one lamination upper bound for the membrane density.

    ``w0`` is a callable on (batches of) 3x2 matrices.  Depth 0 returns
    W0 itself; each level takes the best split of the previous level over
    the configured grid, then polishes (lambda, amplitude) locally.  The
    trivial split is always in the grid, so values never increase with
    depth.
    """
    if grid is None:
        grid = LaminationGrid()
    if depth < 0 or depth > grid.depth_cap:
        raise ConfigError(f"lamination depth must lie in [0, {grid.depth_cap}]")
    xibar = _as_planar(xibar)

    value = _laminate_recursive(w0, xibar, depth, grid, polish=grid.polish)
    return EnvelopeEstimate(value, "lamination", resolution=depth)


def _laminate_recursive(w0, xibar, depth, grid, polish):
    if depth == 0:
        return float(w0(xibar))

    def level(xb):
        return _laminate_recursive(w0, xb, depth - 1, grid, polish=False)

    dirs = np.einsum("ai,nj->anij", grid.vector_dirs(), grid.inplane_dirs())
    dirs = dirs.reshape(-1, 3, 2)
    lams = np.asarray(grid.lambdas)
    amps = np.asarray(grid.amplitudes)

    best = level(xibar)  # the trivial split
    best_param = None
    for d in dirs:
        # endpoint matrices for the whole (lambda, amp) product at once
        for lam in lams:
            if lam in (0.0, 1.0):
                continue
            plus = xibar + (1.0 - lam) * amps[:, None, None] * d
            minus = xibar - lam * amps[:, None, None] * d
            if depth == 1:
                vp = np.asarray(w0(plus), dtype=float)
                vm = np.asarray(w0(minus), dtype=float)
            else:
                vp = np.array([level(m) for m in plus])
                vm = np.array([level(m) for m in minus])
            vals = lam * vp + (1.0 - lam) * vm
            k = int(np.argmin(vals))
            if vals[k] < best:
                best = float(vals[k])
                best_param = (d, float(lam), float(amps[k]))

    if polish and best_param is not None:
        d, lam0, amp0 = best_param

        def objective(x):
            return _laminate_value(level if depth > 1 else w0, xibar, d, x[0],
                                   np.exp(x[1]))

        res = optimize.minimize(objective, np.array([lam0, np.log(amp0)]),
                                method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 1e-14,
                                         "maxiter": 400})
        if res.fun < best:
            best = float(res.fun)
    return best


# ---------------------------------------------------------------------------
# Cell-problem estimator
# ---------------------------------------------------------------------------

def cell_problem_bound(w0, xibar, mesh_n: int, w0_grad=None, *,
                       laminate_seed: LaminationGrid | None = None,
                       max_iter: int = 500) -> EnvelopeEstimate:
    """Upper bound from the zero-boundary cell functional on an n x n grid.

    Minimizes the mean of W0(xibar + grad phi) over piecewise-bilinear phi
    vanishing on the boundary of the unit square, by L-BFGS from a zero
    start plus seeded laminate starts.
    """
    if mesh_n < 2:
        raise DomainError("cell mesh must have at least 2 cells per side")
    xibar = _as_planar(xibar)
    n = mesh_n
    h = 1.0 / n

    # interior node coordinates and cell-midpoint gradient operator
    def gradients(phi_nodes):
        # phi_nodes: (n+1, n+1, 3) -> per-cell (n, n, 3, 2)
        px = (phi_nodes[1:, :-1] + phi_nodes[1:, 1:]
              - phi_nodes[:-1, :-1] - phi_nodes[:-1, 1:]) / (2 * h)
        py = (phi_nodes[:-1, 1:] + phi_nodes[1:, 1:]
              - phi_nodes[:-1, :-1] - phi_nodes[1:, :-1]) / (2 * h)
        return np.stack([px, py], axis=-1)

    area = h * h

    def unpack(x):
        phi = np.zeros((n + 1, n + 1, 3))
        phi[1:-1, 1:-1] = x.reshape(n - 1, n - 1, 3)
        return phi

    def objective(x):
        phi = unpack(x)
        g = gradients(phi)
        vals = np.asarray(w0(xibar + g), dtype=float)
        return float(vals.sum() * area)

    use_grad = w0_grad is not None

    def objective_grad(x):
        phi = unpack(x)
        g = gradients(phi)
        dW = np.asarray(w0_grad(xibar + g), dtype=float)  # (n, n, 3, 2)
        # adjoint of the midpoint-gradient stencil
        out = np.zeros((n + 1, n + 1, 3))
        cx = dW[..., 0] * (area / (2 * h))
        cy = dW[..., 1] * (area / (2 * h))
        out[1:, :-1] += cx
        out[1:, 1:] += cx
        out[:-1, :-1] -= cx
        out[:-1, 1:] -= cx
        out[:-1, 1:] += cy
        out[1:, 1:] += cy
        out[:-1, :-1] -= cy
        out[1:, :-1] -= cy
        return out[1:-1, 1:-1].ravel()

    starts = [np.zeros((n - 1) * (n - 1) * 3)]
    starts.extend(_laminate_starts(w0, xibar, n, laminate_seed))

    best = float(np.asarray(w0(xibar)))
    log = []
    for x0 in starts:
        res = optimize.minimize(
            objective, x0,
            jac=objective_grad if use_grad else None,
            method="L-BFGS-B",
            options={"maxiter": max_iter, "ftol": 1e-14, "gtol": 1e-12},
        )
        log.append((float(res.fun), res.nit))
        if not np.isfinite(res.fun):
            raise NumericalError("cell-problem descent diverged", best=best, log=log)
        best = min(best, float(res.fun))
    return EnvelopeEstimate(best, "cell-problem", resolution=mesh_n)


def _laminate_starts(w0, xibar, n, grid):
    """Sawtooth fields aligned with the best depth-1 split, amplitude capped
    by the distance to the cell boundary so the zero trace is kept."""
    if grid is None:
        grid = LaminationGrid(n_inplane=16,
                              amplitudes=tuple(np.geomspace(1e-2, 1e1, 12)),
                              lambdas=tuple(np.linspace(0.0, 1.0, 9)),
                              polish=True)
    best = (np.inf, None)
    dirs = np.einsum("ai,nj->anij", grid.vector_dirs(), grid.inplane_dirs())
    for d in dirs.reshape(-1, 3, 2):
        for lam in grid.lambdas:
            if lam in (0.0, 1.0):
                continue
            for amp in grid.amplitudes:
                v = _laminate_value(w0, xibar, d, lam, amp)
                if v < best[0]:
                    best = (v, (d, lam, amp))
    if best[1] is None:
        return []
    d, lam, amp = best[1]
    # recover the rank-one factors d = avec (x) nvec
    nvec = None
    for row in range(3):
        if np.linalg.norm(d[row]) > 1e-12:
            nvec = d[row] / np.linalg.norm(d[row])
            break
    if nvec is None:
        return []
    avec = d @ nvec

    xs = (np.arange(n + 1)) / n
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    s = X * nvec[0] + Y * nvec[1]
    dist = np.minimum.reduce([X, 1.0 - X, Y, 1.0 - Y])
    starts = []
    for periods in (2, 4, 8):
        if n < 2 * periods:
            continue
        # sawtooth with slopes (1-lam) amp and -lam amp in the n direction
        t = (s * periods) % 1.0
        prof = np.where(t < lam, (1.0 - lam) * t, lam * (1.0 - t)) * (amp / periods)
        prof = np.minimum(prof, dist * amp)  # taper toward the boundary
        phi = prof[..., None] * avec
        starts.append(phi[1:-1, 1:-1].reshape(-1))
    return starts


# ---------------------------------------------------------------------------
# Envelope gradient and tabulation
# ---------------------------------------------------------------------------

GRAD_STEP_FLOOR = 1e-7


def envelope_gradient(estimator, xibar, h: float = 1e-4) -> np.ndarray:
    """Entrywise central differences of an envelope estimator.

    ``estimator`` maps a 3x2 matrix to a float (e.g. a lamination bound at
    fixed depth).  Second-order accurate in h.
    """
    if h < GRAD_STEP_FLOOR:
        raise ConfigError(f"difference step below floor {GRAD_STEP_FLOOR}")
    xibar = _as_planar(xibar)
    grad = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            e = np.zeros((3, 2))
            e[i, j] = h
            grad[i, j] = (estimator(xibar + e) - estimator(xibar - e)) / (2 * h)
    return grad


class EnvelopeTable:
    """Membrane density tabulated on a tensor grid of in-plane gradients.

    Multilinear interpolation inside the grid box; outside it falls back to
    W0 (a safe upper bound: p-growth keeps relaxation inactive far out).
    """

    def __init__(self, axes, values, w0, method="lamination", resolution=1):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        if len(self.axes) != 6:
            raise DomainError("need one axis per in-plane gradient entry")
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != tuple(len(a) for a in self.axes):
            raise DomainError("value grid does not match axes")
        self.w0 = w0
        self.method = method
        self.resolution = resolution

    def value(self, xibar) -> np.ndarray | float:
        xb = _as_planar(xibar)
        scalar = xb.ndim == 2
        flat = xb.reshape(-1, 6)
        out = np.empty(flat.shape[0])
        inside = np.ones(flat.shape[0], dtype=bool)
        for k, ax in enumerate(self.axes):
            inside &= (flat[:, k] >= ax[0]) & (flat[:, k] <= ax[-1])
        if np.any(inside):
            out[inside] = self._interp(flat[inside])
        if np.any(~inside):
            out[~inside] = np.asarray(self.w0(flat[~inside].reshape(-1, 3, 2)))
        return float(out[0]) if scalar else out.reshape(xb.shape[:-2])

    def gradient(self, xibar, h: float = 1e-5) -> np.ndarray:
        xb = _as_planar(xibar)
        single = xb.ndim == 2
        batch = xb.reshape(-1, 3, 2)
        grad = np.zeros_like(batch)
        for i in range(3):
            for j in range(2):
                e = np.zeros((3, 2))
                e[i, j] = h
                grad[:, i, j] = (self.value(batch + e) - self.value(batch - e)) / (2 * h)
        return grad[0] if single else grad.reshape(xb.shape)

    def _interp(self, pts):
        # iterative binary reduction over the 2^6 surrounding corners
        idx = []
        frac = []
        for k, ax in enumerate(self.axes):
            i = np.clip(np.searchsorted(ax, pts[:, k], side="right") - 1,
                        0, len(ax) - 2)
            t = (pts[:, k] - ax[i]) / (ax[i + 1] - ax[i])
            idx.append(i)
            frac.append(np.clip(t, 0.0, 1.0))
        vals = None
        for corner in range(64):
            w = np.ones(pts.shape[0])
            ii = []
            for k in range(6):
                bit = (corner >> k) & 1
                w = w * (frac[k] if bit else (1.0 - frac[k]))
                ii.append(idx[k] + bit)
            contrib = self.values[tuple(ii)] * w
            vals = contrib if vals is None else vals + contrib
        return vals

    def to_rows(self):
        """Rows for the CSV interface: entries, value, method, resolution."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        flat = [m.ravel() for m in mesh]
        vals = self.values.ravel()
        for k in range(vals.size):
            yield [flat[j][k] for j in range(6)] + [vals[k], self.method,
                                                    self.resolution]


def build_envelope_table(w0, axes, depth: int = 1,
                         grid: LaminationGrid | None = None,
                         method: str = "lamination",
                         mesh_n: int = 8, w0_grad=None) -> EnvelopeTable:
    """Tabulate an envelope estimator over a tensor grid of gradients."""
    axes = [np.asarray(a, dtype=float) for a in axes]
    shape = tuple(len(a) for a in axes)
    values = np.empty(shape)
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=1)
    out = np.empty(flat.shape[0])
    for k in range(flat.shape[0]):
        xb = flat[k].reshape(3, 2)
        if method == "lamination":
            out[k] = lamination_bound(w0, xb, depth, grid).value
        elif method == "cell-problem":
            out[k] = cell_problem_bound(w0, xb, mesh_n, w0_grad).value
        else:
            raise ConfigError(f"unknown envelope method {method!r}")
    values[...] = out.reshape(shape)
    resolution = depth if method == "lamination" else mesh_n
    return EnvelopeTable(axes, values, w0, method=method, resolution=resolution)


# ---------------------------------------------------------------------------
# Membrane density handle used by the 2D solver
# ---------------------------------------------------------------------------

class MembraneDensity:
    """Value/gradient pair for the relaxed in-plane density.

    Quadratic kinds admit the exact closed form (their transverse
    relaxation is already convex, hence quasiconvex); other kinds go
    through a tabulated envelope.
    """

    def __init__(self, model: DensityModel, table: EnvelopeTable | None = None):
        self.model = model
        self.table = table
        if model.is_quadratic:
            self._value, _, self._grad = closed_form_w0(model)
            self.is_quadratic = True
            self.shift_planar = model.shift[:, :2]
        elif table is not None:
            self._value = table.value
            self._grad = table.gradient
            self.is_quadratic = False
            self.shift_planar = None
        else:
            raise ConfigError(
                "non-quadratic kinds need an envelope table for the membrane solver")

    def value(self, xibar):
        return self._value(xibar)

    def gradient(self, xibar):
        return self._grad(xibar)
