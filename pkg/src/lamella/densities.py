"""Stored-energy densities on 3x3 matrices.

Four density kinds are supported, all with p-growth, p-coercivity and an
analytic derivative:

* ``quadratic-isotropic``  W(xi) = |xi|^2          (Frobenius norm)
* ``quadratic-shifted``    W(xi) = |xi - M|^2       for a fixed 3x3 shift M
* ``double-well``          W(xi) = min(|xi - A|^2, |xi + A|^2)
* ``p-power``              W(xi) = |xi|^p

Each model records growth constants (p, beta, beta_grad) with

    (1/beta)|xi|^p - beta <= W(xi) <= beta (1 + |xi|^p)
    |dW(xi)| <= beta_grad (1 + |xi|^(p-1))

which hold exactly for the recorded defaults; ``growth_audit`` samples them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lamella.errors import DomainError

KINDS = ("quadratic-isotropic", "quadratic-shifted", "double-well", "p-power")

# Kinds whose transverse relaxation has a closed form used by the solvers.
QUADRATIC_KINDS = ("quadratic-isotropic", "quadratic-shifted")


def _as_matrix(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-2:] != (3, 3):
        raise DomainError(f"expected trailing 3x3 matrix shape, got {xi.shape}")
    if not np.all(np.isfinite(xi)):
        raise DomainError("non-finite matrix entries")
    return xi


@dataclass(frozen=True)
class DensityModel:
    """A stored-energy density with recorded growth constants.

    ``parameters`` holds the kind-specific data: ``shift`` (3x3) for
    quadratic-shifted, ``well`` (3x3) for double-well, ``p`` for p-power.
    """

    name: str
    kind: str
    p: float = 2.0
    beta: float = 1.0
    beta_grad: float = 2.0
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown density kind {self.kind!r}")
        if self.p <= 1.0:
            raise DomainError("growth exponent must exceed 1")
        if self.beta <= 0.0:
            raise DomainError("growth constant beta must be positive")
        if self.kind == "quadratic-shifted":
            self._matrix_param("shift")
        if self.kind == "double-well":
            self._matrix_param("well")

    def _matrix_param(self, key: str) -> np.ndarray:
        m = np.asarray(self.parameters.get(key), dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise DomainError(f"{self.kind} needs a finite 3x3 {key!r} parameter")
        return m

    @property
    def is_quadratic(self) -> bool:
        return self.kind in QUADRATIC_KINDS

    @property
    def shift(self) -> np.ndarray:
        if self.kind == "quadratic-shifted":
            return self._matrix_param("shift")
        return np.zeros((3, 3))

    @property
    def well(self) -> np.ndarray:
        return self._matrix_param("well")


def quadratic_isotropic(name: str = "quadratic-isotropic") -> DensityModel:
    return DensityModel(name=name, kind="quadratic-isotropic", p=2.0, beta=1.0, beta_grad=2.0)


def quadratic_shifted(shift, name: str = "quadratic-shifted") -> DensityModel:
    shift = np.asarray(shift, dtype=float)
    m = float(np.linalg.norm(shift))
    return DensityModel(
        name=name,
        kind="quadratic-shifted",
        p=2.0,
        beta=max(2.0, 2.0 * m * m, m * m + 1.0),
        beta_grad=2.0 * (1.0 + m),
        parameters={"shift": shift},
    )


def double_well(well, name: str = "double-well") -> DensityModel:
    well = np.asarray(well, dtype=float)
    m = float(np.linalg.norm(well))
    return DensityModel(
        name=name,
        kind="double-well",
        p=2.0,
        beta=max(2.0, 2.0 * m * m, m * m + 1.0),
        beta_grad=2.0 * (1.0 + m),
        parameters={"well": well},
    )


def p_power(p: float, name: str = "p-power") -> DensityModel:
    return DensityModel(name=name, kind="p-power", p=float(p), beta=1.0,
                        beta_grad=float(p), parameters={"p": float(p)})


def from_spec(spec: dict) -> DensityModel:
    """Build a model from a config mapping ``{kind, parameters...}``."""
    kind = spec.get("kind")
    params = spec.get("parameters", {})
    name = spec.get("name", kind or "density")
    if kind == "quadratic-isotropic":
        return quadratic_isotropic(name)
    if kind == "quadratic-shifted":
        return quadratic_shifted(params["shift"], name)
    if kind == "double-well":
        return double_well(params["well"], name)
    if kind == "p-power":
        return p_power(params.get("p", 4.0), name)
    raise DomainError(f"unknown density kind {kind!r}")


def _branch_sign(xi: np.ndarray, well: np.ndarray) -> np.ndarray:
    """+1 for the well at +A, -1 for the well at -A; ties take +A."""
    # distance^2 difference reduces to -4 <xi, A>
    inner = np.einsum("...ij,ij->...", xi, well)
    return np.where(inner >= 0.0, 1.0, -1.0)


def eval_w(model: DensityModel, xi) -> np.ndarray | float:
    """Evaluate W(xi).  Accepts a single 3x3 matrix or a batch (..., 3, 3)."""
    xi = _as_matrix(xi)
    scalar = xi.ndim == 2
    if model.kind == "quadratic-isotropic":
        out = np.einsum("...ij,...ij->...", xi, xi)
    elif model.kind == "quadratic-shifted":
        d = xi - model.shift
        out = np.einsum("...ij,...ij->...", d, d)
    elif model.kind == "double-well":
        a = model.well
        s = _branch_sign(xi, a)
        d = xi - s[..., None, None] * a
        out = np.einsum("...ij,...ij->...", d, d)
    else:  # p-power
        nrm = np.sqrt(np.einsum("...ij,...ij->...", xi, xi))
        out = nrm ** model.p
    return float(out) if scalar else out


def grad_w(model: DensityModel, xi) -> np.ndarray:
    """Analytic derivative dW(xi), same batch conventions as ``eval_w``."""
    xi = _as_matrix(xi)
    if model.kind == "quadratic-isotropic":
        return 2.0 * xi
    if model.kind == "quadratic-shifted":
        return 2.0 * (xi - model.shift)
    if model.kind == "double-well":
        a = model.well
        s = _branch_sign(xi, a)
        return 2.0 * (xi - s[..., None, None] * a)
    # p-power: p |xi|^(p-2) xi, with gradient 0 at xi = 0 for p > 2
    p = model.p
    nrm2 = np.einsum("...ij,...ij->...", xi, xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(nrm2 > 0.0, p * nrm2 ** ((p - 2.0) / 2.0), 0.0)
    return coef[..., None, None] * xi


def growth_audit(model: DensityModel, n_samples: int = 100, radius: float = 5.0,
                 seed: int = 0) -> dict:
    """Sample the p-growth bounds on W and dW.

    Returns the worst signed slack of each inequality (negative = violation)
    and the max relative error of dW against central finite differences.
    """
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-radius, radius, size=(n_samples, 3, 3))
    w = eval_w(model, xi)
    nrm = np.sqrt(np.einsum("nij,nij->n", xi, xi))
    lower = w - ((1.0 / model.beta) * nrm ** model.p - model.beta)
    upper = model.beta * (1.0 + nrm ** model.p) - w
    g = grad_w(model, xi)
    gn = np.sqrt(np.einsum("nij,nij->n", g, g))
    gbound = model.beta_grad * (1.0 + nrm ** (model.p - 1.0)) - gn

    h = 1e-6 * max(1.0, radius)
    fd = np.zeros_like(xi)
    for i in range(3):
        for j in range(3):
            e = np.zeros((3, 3))
            e[i, j] = h
            fd[:, i, j] = (eval_w(model, xi + e) - eval_w(model, xi - e)) / (2 * h)
    denom = np.maximum(gn, 1.0)
    fd_rel = np.max(np.sqrt(np.einsum("nij,nij->n", g - fd, g - fd)) / denom)

    return {
        "lower_slack": float(lower.min()),
        "upper_slack": float(upper.min()),
        "grad_slack": float(gbound.min()),
        "grad_fd_rel_err": float(fd_rel),
    }
