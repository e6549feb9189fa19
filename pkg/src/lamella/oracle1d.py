"""Exact small-instance oracles.

* ``dp_minimize_1d`` — global minimum of a 1D bar energy over piecewise
  affine displacements with jumps restricted to cell interfaces, by dynamic
  programming over jump placements.  Ground truth for the phase-field strip.
* ``convex_envelope_1d`` — lower convex envelope of sampled data by the
  monotone-chain hull.  Ground truth for lamination along rank-one segments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable

import numpy as np

from lamella.errors import DomainError


def _square(s: float) -> float:
    return s * s


@dataclass
class Dp1dProblem:
    """Bar of given length with Dirichlet ends and per-jump toughness."""

    n: int                      # node count (n - 1 cells)
    length: float = 1.0
    toughness: float = 1.0
    left: float = 0.0
    right: float = 0.0
    elastic: Callable[[float], float] = field(default=_square)

    def __post_init__(self):
        if self.n < 2:
            raise DomainError("need at least 2 nodes")
        if self.toughness <= 0.0:
            raise DomainError("toughness must be positive")


def min_slope(elastic: Callable[[float], float]) -> float:
    """argmin_s elastic(s) by coarse scan plus golden-section refinement."""
    grid = np.linspace(-8.0, 8.0, 161)
    vals = [elastic(float(s)) for s in grid]
    k = int(np.argmin(vals))
    a = grid[max(0, k - 1)]
    b = grid[min(len(grid) - 1, k + 1)]
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = elastic(c), elastic(d)
    for _ in range(200):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = elastic(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = elastic(d)
    s = (a + b) / 2.0
    return 0.0 if elastic(0.0) <= elastic(s) else float(s)


def _segment_cost(p: Dp1dProblem, x0: float, x1: float, pinned_both: bool,
                  s_free: float) -> float:
    """Optimal elastic energy of the segment [x0, x1].

    Segments not pinned at both Dirichlet ends translate freely, so they
    take the energy-minimal slope.
    """
    if pinned_both:
        strain = (p.right - p.left) / p.length
        return p.elastic(strain) * (x1 - x0)
    return p.elastic(s_free) * (x1 - x0)


def dp_minimize_1d(p: Dp1dProblem, max_jumps: int):
    """Exact minimum over piecewise-affine fields with <= max_jumps jumps.

    Jumps sit at interior cell interfaces (nodes 1 .. n-2).  For each jump
    count the optimal placement is found by a forward DP over interfaces;
    ties prefer fewer jumps, then the lexicographically lowest placement.

    Returns ``(energy, jump_interfaces, node_values)``.
    """
    if max_jumps > p.n - 1:
        raise DomainError("max_jumps exceeds interface count")
    xs = np.linspace(0.0, p.length, p.n)
    interfaces = list(range(1, p.n - 1))
    s_free = min_slope(p.elastic)

    best_energy = _segment_cost(p, 0.0, p.length, True, s_free)
    best_jumps: list[int] = []

    k_cap = min(max_jumps, len(interfaces))
    if k_cap >= 1:
        # cost[i] = optimal cost of [0, xs[i]] ending with a jump at i
        cost = {i: _segment_cost(p, 0.0, xs[i], False, s_free) for i in interfaces}
        back = {i: None for i in interfaces}
        for k in range(1, k_cap + 1):
            for i in interfaces:
                total = (cost[i]
                         + _segment_cost(p, xs[i], p.length, False, s_free)
                         + k * p.toughness)
                if total < best_energy:
                    best_energy = total
                    jumps = [i]
                    j = back[i]
                    while j is not None:
                        jumps.append(j)
                        j = back[j]
                    best_jumps = jumps[::-1]
            if k == k_cap:
                break
            new_cost, new_back = {}, {}
            for i in interfaces:
                cands = [(cost[j] + _segment_cost(p, xs[j], xs[i], False, s_free), j)
                         for j in interfaces if j < i]
                if not cands:
                    continue
                c, j = min(cands, key=lambda t: t[0])
                new_cost[i], new_back[i] = c, j
            interfaces = [i for i in interfaces if i in new_cost]
            cost, back = new_cost, new_back

    values = _rebuild_field(p, xs, best_jumps, s_free)
    return float(best_energy), best_jumps, values


def _rebuild_field(p: Dp1dProblem, xs: np.ndarray, jumps: list[int],
                   s_free: float) -> np.ndarray:
    if not jumps:
        return p.left + (p.right - p.left) * xs / p.length
    k = len(jumps)
    gap = (p.right - p.left - s_free * p.length) / k
    values = np.empty(p.n)
    seg = 0
    for i in range(p.n):
        while seg < k and i >= jumps[seg]:
            seg += 1
        values[i] = p.left + seg * gap + s_free * xs[i]
    return values


def brute_force_1d(p: Dp1dProblem, max_jumps: int):
    """Enumerate every interface subset of size <= max_jumps. Test oracle."""
    xs = np.linspace(0.0, p.length, p.n)
    s_free = min_slope(p.elastic)
    best = (_segment_cost(p, 0.0, p.length, True, s_free), [])
    n_int = p.n - 2
    for k in range(1, min(max_jumps, n_int) + 1):
        for subset in combinations(range(1, n_int + 1), k):
            cuts = [0.0] + [xs[i] for i in subset] + [p.length]
            # accumulate left to right, toughness last: the same float
            # operation order as the DP, so equality is exact
            e = 0.0
            for x0, x1 in zip(cuts[:-1], cuts[1:]):
                e += _segment_cost(p, x0, x1, False, s_free)
            e += k * p.toughness
            if e < best[0]:
                best = (e, list(subset))
    return float(best[0]), best[1]


def convex_envelope_1d(samples) -> np.ndarray:
    """Lower convex envelope of ``samples = [(x, f(x)), ...]``.

    x must be strictly increasing.  Returns envelope values at the sample
    abscissae (monotone-chain lower hull, interpolated between hull nodes).
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise DomainError("need a list of at least 2 (x, f) pairs")
    x, f = pts[:, 0], pts[:, 1]
    if np.any(np.diff(x) <= 0.0):
        raise DomainError("abscissae must be strictly increasing")

    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            # keep the turn convex: slope(i0,i1) <= slope(i0,i)
            lhs = (f[i1] - f[i0]) * (x[i] - x[i0])
            rhs = (f[i] - f[i0]) * (x[i1] - x[i0])
            if lhs >= rhs:
                hull.pop()
            else:
                break
        hull.append(i)

    env = np.empty_like(f)
    for a, b in zip(hull[:-1], hull[1:]):
        t = (x[a:b + 1] - x[a]) / (x[b] - x[a])
        env[a:b + 1] = f[a] + t * (f[b] - f[a])
    env[hull[-1]] = f[hull[-1]]
    return env
