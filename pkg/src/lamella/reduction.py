"""Thickness-sweep harness.

Runs the 3D film evolution at a decreasing list of thicknesses against the
2D membrane evolution on matched boundary programs and reports how the
energies approach the limit: per-time bulk/surface/total gaps, weak stress
pairings against fixed test fields, and the transverse invariance of the
final crack field (limit cracks should not depend on the through-thickness
coordinate).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from lamella import energies
from lamella.errors import ConfigError, DomainError
from lamella.evolution import (BoundaryProgram, EvolutionState, EvolutionTrace,
                               SolverParams, _density_values, _u_step,
                               _Workspace, run_evolution)
from lamella.grids import Field, Grid, PhaseParams
from lamella.relaxation import MembraneDensity

log = logging.getLogger("lamella")


@dataclass
class SweepReport:
    eps_list: list
    traces: dict                        # eps -> EvolutionTrace
    limit_trace: EvolutionTrace
    metrics: dict                       # eps -> per-time metric arrays
    terminal: dict                      # summary scalars per eps
    partial: bool = False
    failures: dict = field(default_factory=dict)


def x3_invariance(v: Field) -> float:
    """Max over in-plane nodes of the spread of v along its x3 column.

    Zero iff the crack field is exactly invariant through the thickness.
    """
    grid = v.grid
    if grid.is_2d:
        raise DomainError("transverse invariance needs a 3D grid")
    vals = v.values[:, 0].reshape(grid.nodes_z, grid.nodes_y * grid.nodes_x)
    return float((vals.max(axis=0) - vals.min(axis=0)).max())


def select_min_energy_slab(u: Field, v: Field, eps: float, model,
                           pp: PhaseParams, n_slabs: int):
    """Split the cylinder into transverse slabs; return the cheapest one.

    The slab energy is the film energy (degraded bulk plus regularized
    surface) restricted to the slab's cells; ties take the lowest index.
    """
    grid = u.grid
    if grid.is_2d:
        raise DomainError("slab selection needs a 3D grid")
    if n_slabs < 1 or grid.nz % n_slabs != 0:
        raise ConfigError(f"{n_slabs} slabs do not divide {grid.nz} cells")
    per = grid.nz // n_slabs
    ws = _Workspace(grid, eps)
    _, w, _ = _density_values(ws, model, u.values, need_grad=False)
    vbar = ws.cell_means(v.values)
    vals = v.values[ws.icells, 0]
    grad_dens = pp.ell * np.einsum("nk,kl,nl->n", vals, ws.S_over_vol, vals)
    dens = (vbar ** 2 + pp.eta) * w + grad_dens \
        + (1.0 - vbar) ** 2 / (4.0 * pp.ell)
    # interior cells are ordered z-major: (cz, cy, cx)
    per_z = dens.reshape(grid.cells_z, -1).sum(axis=1) * ws.vol
    slab = per_z.reshape(n_slabs, per).sum(axis=1)
    best = int(np.argmin(slab))  # argmin takes the first (lowest) index
    return best, float(slab[best])


def stress_pairing(state: EvolutionState, psi) -> float:
    """Weak pairing of the (undegraded) stress with a test field.

    3D: integral of dW(scaled grad u) : psi.  Membrane: twice the in-plane
    pairing with the relaxed density gradient, the third stress column
    being identically zero in the limit.
    """
    ws = _Workspace(state.u.grid, state.eps)
    _, _, dw = _density_values(ws, state.density, state.u.values)
    psi = np.asarray(psi, dtype=float)
    if state.u.grid.is_2d:
        if psi.shape[-2:] != (3, 3):
            raise DomainError("test fields are 3x3 matrices")
        pair = np.einsum("nij,...ij->n", dw, psi[..., :2]
                         if psi.ndim == 2 else psi[..., :, :2])
        return 2.0 * float(ws.vol * pair.sum())
    if psi.ndim == 2:
        pair = np.einsum("nij,ij->n", dw, psi)
    else:
        if psi.shape[0] != dw.shape[0]:
            raise DomainError("per-cell test field must match interior cells")
        pair = np.einsum("nij,nij->n", dw, psi)
    return float(ws.vol * pair.sum())


def crack_monotonicity_audit(traces) -> list:
    """Pointwise monotonicity of the crack field across checkpoints.

    Returns the violations (must be empty): tuples of
    (eps, step, node count, worst increase).
    """
    violations = []
    items = traces.items() if isinstance(traces, dict) else [(tr.eps, tr) for tr in traces]
    for eps, trace in items:
        cps = trace.v_checkpoints
        for k in range(1, len(cps)):
            diff = cps[k] - cps[k - 1]
            bad = diff > 1e-14
            if np.any(bad):
                violations.append((eps, k, int(bad.sum()), float(diff.max())))
    return violations


def horizontal_surface_fraction(v: Field, eps: float, pp: PhaseParams) -> float:
    """Share of the gradient surface term carried by transverse variation."""
    parts = energies.surface_energy_parts(v, eps, pp)
    grad_total = parts["inplane"] + parts["transverse"]
    if grad_total <= 0.0:
        return 0.0
    return parts["transverse"] / grad_total


# ---------------------------------------------------------------------------
# The sweep itself
# ---------------------------------------------------------------------------

@dataclass
class SweepConfig:
    eps_list: list
    grid3d: Grid
    grid2d: Grid
    program: BoundaryProgram
    pp: PhaseParams
    model: object                       # DensityModel for the film runs
    membrane: MembraneDensity
    params: SolverParams = field(default_factory=SolverParams)
    n_test_fields: int = 5
    test_seed: int = 0

    def __post_init__(self):
        eps = list(self.eps_list)
        if len(eps) < 2:
            raise ConfigError("a sweep needs at least 2 thickness values")
        if any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_list must be positive and strictly decreasing")


def run_sweep(cfg: SweepConfig) -> SweepReport:
    """3D evolutions over the thickness list against the membrane limit.

    A failed member marks the report partial instead of failing the sweep.
    Gap metrics are computed per time step:
    |bulk_eps - bulk_limit|, |surface_eps - surface_limit|, total gap, and
    the transverse invariance of the final crack field.
    """
    limit_trace = run_evolution(cfg.program, cfg.grid2d, cfg.membrane, cfg.pp,
                                0.0, cfg.params)
    rng = np.random.default_rng(cfg.test_seed)
    test_fields = rng.standard_normal((cfg.n_test_fields, 3, 3))

    traces, metrics, terminal, failures = {}, {}, {}, {}
    final_states = {}
    for eps in cfg.eps_list:
        try:
            tr = run_evolution(cfg.program, cfg.grid3d, cfg.model, cfg.pp,
                               eps, cfg.params)
        except Exception as exc:  # a failed member leaves a partial report
            log.warning("sweep member eps=%g failed: %s", eps, exc)
            failures[eps] = str(exc)
            continue
        traces[eps] = tr
        bulk_gap = np.abs(tr.bulk - limit_trace.bulk)
        surf_gap = np.abs(tr.surface - limit_trace.surface)
        total_gap = np.abs(tr.total - limit_trace.total)
        v_final = Field(cfg.grid3d, 1, tr.v_checkpoints[-1][:, None])
        u_final = _final_state(cfg, eps, tr)
        final_states[eps] = u_final
        x3 = x3_invariance(v_final)
        metrics[eps] = {
            "bulk_gap": bulk_gap,
            "surface_gap": surf_gap,
            "total_gap": total_gap,
            "x3_invariance": x3,
        }
        pairings = [stress_pairing(u_final, psi) for psi in test_fields]
        terminal[eps] = {
            "bulk_gap": float(bulk_gap[-1]),
            "surface_gap": float(surf_gap[-1]),
            "total_gap": float(total_gap[-1]),
            "x3_invariance": x3,
            "horizontal_fraction": horizontal_surface_fraction(
                v_final, eps, cfg.pp),
            "stress_pairings": pairings,
        }

    limit_state = _limit_state(cfg, limit_trace)
    limit_pairings = [stress_pairing(limit_state, psi) for psi in test_fields]
    terminal["limit"] = {
        "bulk": float(limit_trace.bulk[-1]),
        "surface": float(limit_trace.surface[-1]),
        "total": float(limit_trace.total[-1]),
        "stress_pairings": limit_pairings,
    }
    for eps in traces:
        gaps = [abs(a - b) for a, b in
                zip(terminal[eps]["stress_pairings"], limit_pairings)]
        terminal[eps]["pairing_gaps"] = gaps

    return SweepReport(eps_list=list(cfg.eps_list), traces=traces,
                       limit_trace=limit_trace, metrics=metrics,
                       terminal=terminal, partial=bool(failures),
                       failures=failures)


def _final_state(cfg: SweepConfig, eps: float, tr: EvolutionTrace) -> EvolutionState:
    """Rebuild the terminal 3D state from the trace checkpoints."""
    g_T = cfg.program.datum(cfg.program.t_final, cfg.grid3d, eps)
    state = EvolutionState(
        u=g_T, v=Field(cfg.grid3d, 1, tr.v_checkpoints[-1][:, None]),
        eps=eps, t=cfg.program.t_final, density=cfg.model)
    ws = _Workspace(cfg.grid3d, eps)
    u_vals = _u_step(ws, cfg.model, state.u.values.copy(),
                     state.v.values, cfg.pp.eta, cfg.params)
    state.u = Field(cfg.grid3d, 3, u_vals)
    return state


def _limit_state(cfg: SweepConfig, tr: EvolutionTrace) -> EvolutionState:
    g_T = cfg.program.datum(cfg.program.t_final, cfg.grid2d, 0.0)
    state = EvolutionState(
        u=g_T, v=Field(cfg.grid2d, 1, tr.v_checkpoints[-1][:, None]),
        eps=0.0, t=cfg.program.t_final, density=cfg.membrane)
    ws = _Workspace(cfg.grid2d, 0.0)
    u_vals = _u_step(ws, cfg.membrane, state.u.values.copy(),
                     state.v.values, cfg.pp.eta, cfg.params)
    state.u = Field(cfg.grid2d, 3, u_vals)
    return state


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_sweep(report: SweepReport, out_dir):
    """Directory layout: per-eps trace CSVs, metrics.csv, summary.json."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    report.limit_trace.to_csv(os.path.join(out_dir, "trace_limit.csv"))
    for eps, tr in report.traces.items():
        tr.to_csv(os.path.join(out_dir, f"trace_eps_{eps:g}.csv"))
    with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
        fh.write("t,eps,bulk_gap,surface_gap,total_gap,x3_inv\n")
        for eps in report.eps_list:
            if eps not in report.metrics:
                continue
            m = report.metrics[eps]
            times = report.traces[eps].t
            for k in range(len(times)):
                fh.write(",".join(f"{x:.17g}" for x in (
                    times[k], eps, m["bulk_gap"][k], m["surface_gap"][k],
                    m["total_gap"][k], m["x3_invariance"])) + "\n")
    summary = {
        "eps_list": report.eps_list,
        "partial": report.partial,
        "failures": {f"{k:g}": v for k, v in report.failures.items()},
        "terminal": {str(k): v for k, v in report.terminal.items()},
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
