"""Discrete obstacle problem for the divisible-sandpile odometer, and harmonic solves.

The odometer ``u`` of initial mass ``sigma`` is the unique solution of the
complementarity system

    u >= 0,   1 - sigma - Lap u >= 0,   u * (1 - sigma - Lap u) = 0,

with ``Lap u(x) = mean of u over neighbours - u(x)``. Nothing here forms a
Green's function; both methods work directly on this system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _lattice
from .grid_core import (
    BoundedBox,
    ChipfireError,
    DomainSet,
    ScalarField,
    ball_domain,
)


class BoxTooSmallError(ChipfireError):
    """The solution does not vanish on the collar of the box."""


class ConvergenceError(ChipfireError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


class SingularSystemError(ChipfireError):
    """Some vertex cannot reach the absorbing set."""


@dataclass(frozen=True)
class ObstacleSolution:
    odometer: ScalarField
    domain: DomainSet
    residual: float
    iterations: int


@numba.njit(cache=True)
def _pgs_sweep(u, sigma, interior, color, offs):
    k = offs.size
    share = 1.0 / k
    change = 0.0
    for c in range(2):
        for i in range(u.size):
            if color[i] != c or not interior[i]:
                continue
            avg = 0.0
            for j in range(k):
                avg += u[i + offs[j]]
            new = avg * share + sigma[i] - 1.0
            if new < 0.0:
                new = 0.0
            diff = abs(new - u[i])
            if diff > change:
                change = diff
            u[i] = new
    return change


def _laplacian(u: np.ndarray) -> np.ndarray:
    d = u.ndim
    lap = -u.copy()
    for axis in range(d):
        lap += (np.roll(u, 1, axis) + np.roll(u, -1, axis)) / (2 * d)
    return lap


def complementarity_residual(u: np.ndarray, sigma: np.ndarray) -> float:
    """``max |min(u, 1 - sigma - Lap u)|`` over interior sites."""
    slack = 1.0 - sigma - _laplacian(u)
    inner = tuple(slice(1, -1) for _ in range(u.ndim))
    return float(np.abs(np.minimum(u, slack))[inner].max(initial=0.0))


def default_box(sigma: ScalarField) -> BoundedBox:
    supp = sigma.support_box() or sigma.box
    d = sigma.dim
    total = float(np.clip(sigma.values, 0, None).sum())
    vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    return supp.pad(int(math.ceil((max(total, 1.0) / vol) ** (1.0 / d))) + 4)


def solve_obstacle(sigma: ScalarField, box: BoundedBox | None = None, tol: float = 1e-10,
                   method: str = "pgs", max_iter: int | None = None,
                   guess: np.ndarray | None = None) -> ObstacleSolution:
    """Odometer of ``sigma`` with zero boundary values on ``box``.

    ``method="pgs"`` is red-black projected Gauss-Seidel, converged once the
    sup-norm update stays below ``tol * (1 + total mass)`` for three sweeps.
    ``method="active_set"`` is a primal-dual active-set iteration with a
    sparse solve per step; ``guess`` optionally seeds its active set.
    """
    if np.any(sigma.values < 0):
        raise ValueError("density must be nonnegative")
    box = box or default_box(sigma)
    s = sigma.on_box(box, np.float64)
    total = float(s.sum())
    if method == "pgs":
        u, it = _solve_pgs(s, tol * (1.0 + total), max_iter or 5_000_000)
    elif method == "active_set":
        u, it = _solve_active_set(s, guess, max_iter or 500)
    else:
        raise ValueError(f"unknown method {method!r}")
    collar = _lattice.edge_mask(box.shape, width=2)
    if np.any(u[collar] > 0):
        raise BoxTooSmallError(f"odometer reaches the collar of {box}")
    res = complementarity_residual(u, s)
    return ObstacleSolution(ScalarField(box, u), DomainSet(box, u > tol), res, it)


def _solve_pgs(s: np.ndarray, stop: float, max_iter: int) -> tuple[np.ndarray, int]:
    u = np.zeros(s.shape)
    interior = ~_lattice.edge_mask(s.shape)
    color = _lattice.parity(s.shape).ravel()
    offs = _lattice.flat_offsets(s.shape)
    calm = 0
    it = 0
    uf, sf, inf = u.ravel(), s.ravel(), interior.ravel()
    while it < max_iter:
        change = _pgs_sweep(uf, sf, inf, color, offs)
        it += 1
        calm = calm + 1 if change < stop else 0
        if calm >= 3:
            return u, it
    raise ConvergenceError("projected Gauss-Seidel did not converge", change)


def _solve_active_set(s: np.ndarray, guess: np.ndarray | None, max_iter: int) -> tuple[np.ndarray, int]:
    interior = ~_lattice.edge_mask(s.shape)
    active = (s >= 1.0) if guess is None else guess.copy()
    active &= interior
    u = np.zeros(s.shape)
    for it in range(1, max_iter + 1):
        A, idx = _lattice.laplacian_on(active)
        u = np.zeros(s.shape)
        if len(idx):
            rhs = s.ravel()[idx] - 1.0
            u.ravel()[idx] = _lattice.solve_spd(A, rhs)
        slack = 1.0 - s - _laplacian(u)
        new = ((u > 0) & active) | ((slack < 0) & ~active)
        new &= interior
        if np.array_equal(new, active):
            return u, it
        active = new
    raise ConvergenceError("active-set iteration did not settle", complementarity_residual(u, s))


def harmonic_solve(domain: DomainSet, boundary: ScalarField | callable) -> ScalarField:
    """Discrete harmonic extension into ``domain`` of the given boundary values.

    ``boundary`` supplies values on the outer lattice boundary of ``domain``,
    either as a field or as a callable taking an integer coordinate array of
    shape ``(k, d)``.
    """
    if domain.count == 0:
        raise ValueError("empty domain")
    box = domain.box.pad(1)
    mask = domain.on_box(box)
    lo = np.array(box.lo)
    outer = np.zeros(box.shape, bool)
    for axis in range(box.dim):
        outer |= np.roll(mask, 1, axis) | np.roll(mask, -1, axis)
    outer &= ~mask
    opts = np.argwhere(outer)
    if callable(boundary):
        bvals = np.asarray(boundary(opts + lo), dtype=float)
    else:
        bvals = np.array([boundary[tuple(p)] for p in opts + lo], dtype=float)
    g = np.zeros(box.shape)
    g[tuple(opts.T)] = bvals
    A, idx = _lattice.laplacian_on(mask)
    d = box.dim
    rhs = np.zeros(box.shape)
    for axis in range(d):
        rhs += (np.roll(g, 1, axis) + np.roll(g, -1, axis)) / (2 * d)
    sol = spla.splu(A.tocsc()).solve(rhs.ravel()[idx])
    out = g.copy()
    out.ravel()[idx] = sol
    return ScalarField(box, out)


def harmonic_measure(adjacency: Mapping[Hashable, Sequence[Hashable]], absorbing: Iterable,
                     targets: Iterable) -> dict:
    """Probability that simple random walk from each vertex first hits ``absorbing`` in ``targets``.

    ``adjacency`` lists neighbours per vertex (repeats encode multi-edges).
    """
    Z = set(absorbing)
    Y = set(targets)
    if not Y <= Z:
        raise ValueError("targets must lie in the absorbing set")
    free = [v for v in adjacency if v not in Z]
    pos = {v: i for i, v in enumerate(free)}
    n = len(free)
    rows, cols, vals = [], [], []
    b = np.zeros(n)
    for v in free:
        nbrs = adjacency[v]
        if not nbrs:
            raise SingularSystemError(f"vertex {v!r} has no neighbours")
        i = pos[v]
        rows.append(i)
        cols.append(i)
        vals.append(1.0)
        for w in nbrs:
            if w in pos:
                rows.append(i)
                cols.append(pos[w])
                vals.append(-1.0 / len(nbrs))
            elif w in Y:
                b[i] += 1.0 / len(nbrs)
    H = {v: (1.0 if v in Y else 0.0) for v in Z}
    if n:
        A = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
        with np.errstate(all="raise"):
            try:
                lu = spla.splu(A)
                x = lu.solve(b)
            except (RuntimeError, FloatingPointError) as exc:
                raise SingularSystemError("absorbing set unreachable from some vertex") from exc
        if not np.all(np.isfinite(x)) or np.abs(A @ x - b).max() > 1e-8:
            raise SingularSystemError("absorbing set unreachable from some vertex")
        for v in free:
            H[v] = float(x[pos[v]])
    return H


def relax_ball_check(m_factor: float, r: float, d: int = 2, shell: float = 2.0) -> bool:
    """Mass ``m_factor`` spread uniformly on a ball relaxes to a larger concentric ball."""
    if m_factor <= 1:
        raise ValueError("m_factor must exceed 1")
    B = ball_domain(r, d)
    sigma = ScalarField(B.box, B.mask.astype(float) * m_factor)
    sol = solve_obstacle(sigma, tol=1e-9, method="active_set")
    dom = sol.domain.union(B)
    R = m_factor ** (1.0 / d) * r
    inner = ball_domain(max(R - shell, 0.0), d)
    outer = ball_domain(R + shell, d)
    return inner.issubset(dom) and dom.issubset(outer)
