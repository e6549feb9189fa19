"""Experiment configuration: JSON in, validated dataclass out.

Validation collects every error before failing, rejects unknown keys at
each level, and fills defaults; the fully-resolved mapping is echoed next
to the outputs so a run can be reproduced from its own directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from lamella import densities
from lamella.errors import ConfigError
from lamella.evolution import BoundaryProgram, SolverParams
from lamella.grids import Grid, PhaseParams

SCENARIOS = ("relax", "run2d", "run3d", "sweep", "oracle1d", "stability")

_DEFAULTS = {
    "scenario": None,
    "model": {"kind": "quadratic-isotropic", "parameters": {}},
    "grid": {"nx": 32, "ny": 32, "nz": 8, "lx": 1.0, "ly": 1.0, "frame_width": 1},
    "phase": {"ell": 0.0625, "eta": None},
    "program": {
        "matrix": [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
        "offset": [0.0, 0.0, 0.0],
        "transverse": None,
        "t_final": 1.0,
        "n_steps": 16,
        "clamp": "frame",
    },
    "eps": 0.1,
    "eps_list": [0.2, 0.1, 0.05],
    "seeds": {"rng": 0, "crack_planes": []},
    "solver": {"alt_tol": 1e-8, "max_sweeps": 200},
    "envelope": {
        "source": "auto",            # auto | closed-form | table
        "axes": None,                # per-entry [min, max, count] or explicit lists
        "depth": 1,
        "method": "lamination",
        "mesh_n": 8,
    },
    "oracle": {"n": 129, "length": 1.0, "toughness": 1.0,
               "delta_max": 1.5, "delta_steps": 30, "max_jumps": 3},
    "stability": {"n_competitors": 20, "tol": 1e-6},
    "checks": {},                    # name -> tolerance, scenario-specific
}


@dataclass
class ExperimentConfig:
    scenario: str
    model_spec: dict
    grid: Grid
    phase: PhaseParams
    program: BoundaryProgram
    eps: float
    eps_list: list
    rng_seed: int
    solver: SolverParams
    envelope: dict
    oracle: dict
    stability: dict
    checks: dict
    resolved: dict = field(repr=False, default_factory=dict)

    def density_model(self) -> densities.DensityModel:
        return densities.from_spec(self.model_spec)


def _merge_defaults(raw: dict, defaults: dict, path: str, errors: list) -> dict:
    out = {}
    for key, default in defaults.items():
        if key in raw:
            value = raw[key]
            if isinstance(default, dict) and default and isinstance(value, dict):
                value = _merge_defaults(value, default, f"{path}{key}.", errors)
            out[key] = value
        else:
            out[key] = json.loads(json.dumps(default))  # deep copy
    for key in raw:
        if key not in defaults:
            errors.append(f"unknown key {path}{key}")
    return out


def _require(cond: bool, msg: str, errors: list):
    if not cond:
        errors.append(msg)


def validate(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping; raises ConfigError listing every problem."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["configuration must be a JSON object"])
    cfg = _merge_defaults(raw, _DEFAULTS, "", errors)

    scenario = cfg["scenario"]
    _require(scenario in SCENARIOS,
             f"scenario must be one of {SCENARIOS}, got {scenario!r}", errors)

    m = cfg["model"]
    _require(m.get("kind") in densities.KINDS,
             f"model.kind must be one of {densities.KINDS}", errors)

    g = cfg["grid"]
    for key in ("nx", "ny", "nz", "frame_width"):
        _require(isinstance(g.get(key), int) and g[key] >= 1,
                 f"grid.{key} must be a positive integer", errors)
    for key in ("lx", "ly"):
        _require(isinstance(g.get(key), (int, float)) and g[key] > 0,
                 f"grid.{key} must be positive", errors)

    ph = cfg["phase"]
    _require(isinstance(ph.get("ell"), (int, float)) and ph["ell"] > 0,
             "phase.ell must be positive", errors)
    if ph.get("eta") is not None:
        _require(ph["eta"] >= 0, "phase.eta must be nonnegative", errors)

    pr = cfg["program"]
    mat = np.asarray(pr.get("matrix", []), dtype=float)
    _require(mat.shape == (3, 2), "program.matrix must be 3x2", errors)
    _require(pr.get("clamp") in ("frame", "x-ends"),
             "program.clamp must be 'frame' or 'x-ends'", errors)
    _require(pr.get("n_steps", 0) >= 1, "program.n_steps must be >= 1", errors)
    _require(pr.get("t_final", 0) > 0, "program.t_final must be positive", errors)

    _require(isinstance(cfg["eps"], (int, float)) and cfg["eps"] > 0,
             "eps must be positive", errors)
    eps_list = cfg["eps_list"]
    ok_list = (isinstance(eps_list, list) and len(eps_list) >= 2
               and all(isinstance(e, (int, float)) and e > 0 for e in eps_list)
               and all(a > b for a, b in zip(eps_list, eps_list[1:])))
    if scenario == "sweep":
        _require(ok_list, "eps_list must be >= 2 positive strictly decreasing"
                 " values", errors)

    seeds = cfg["seeds"]
    _require(isinstance(seeds.get("rng"), int), "seeds.rng must be an integer",
             errors)
    planes = seeds.get("crack_planes", [])
    for k, plane in enumerate(planes):
        ok = (isinstance(plane, dict) and plane.get("axis") in ("x1", "x2")
              and isinstance(plane.get("position"), (int, float)))
        _require(ok, f"seeds.crack_planes[{k}] needs axis in (x1, x2) and a"
                 " numeric position", errors)

    so = cfg["solver"]
    _require(so.get("alt_tol", 0) > 0, "solver.alt_tol must be positive", errors)
    _require(so.get("max_sweeps", 0) >= 1, "solver.max_sweeps must be >= 1", errors)

    env = cfg["envelope"]
    _require(env.get("source") in ("auto", "closed-form", "table"),
             "envelope.source must be auto, closed-form or table", errors)
    _require(env.get("method") in ("lamination", "cell-problem"),
             "envelope.method must be lamination or cell-problem", errors)

    orc = cfg["oracle"]
    _require(orc.get("n", 0) >= 2, "oracle.n must be >= 2", errors)
    _require(orc.get("toughness", 0) > 0, "oracle.toughness must be positive",
             errors)

    if errors:
        raise ConfigError(errors)

    grid = Grid(nx=g["nx"], ny=g["ny"], nz=g["nz"], lx=float(g["lx"]),
                ly=float(g["ly"]), frame_width=g["frame_width"])
    phase = PhaseParams(ell=float(ph["ell"]),
                        eta=None if ph["eta"] is None else float(ph["eta"]))
    program = BoundaryProgram(
        matrix=mat,
        offset=np.asarray(pr["offset"], dtype=float),
        transverse=None if pr["transverse"] is None
        else np.asarray(pr["transverse"], dtype=float),
        t_final=float(pr["t_final"]),
        n_steps=int(pr["n_steps"]),
        clamp=pr["clamp"],
    )
    solver = SolverParams(
        alt_tol=float(so["alt_tol"]),
        max_sweeps=int(so["max_sweeps"]),
        crack_seeds=tuple((p["axis"], float(p["position"])) for p in planes),
    )
    return ExperimentConfig(
        scenario=scenario,
        model_spec=m,
        grid=grid,
        phase=phase,
        program=program,
        eps=float(cfg["eps"]),
        eps_list=[float(e) for e in eps_list],
        rng_seed=int(seeds["rng"]),
        solver=solver,
        envelope=env,
        oracle=orc,
        stability=cfg["stability"],
        checks=cfg["checks"],
        resolved=cfg,
    )


def parse_config(path) -> ExperimentConfig:
    """Load and validate a JSON config file."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"malformed JSON: {exc}"]) from exc
    return validate(raw)


def echo_resolved(cfg: ExperimentConfig, path):
    with open(path, "w") as fh:
        json.dump(cfg.resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
