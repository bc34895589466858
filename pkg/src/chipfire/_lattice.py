"""Flat-array helpers shared by the numba kernels and the sparse solvers."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# above this many unknowns an algebraic multigrid solve replaces the direct one
DIRECT_SOLVE_LIMIT = 250_000


def flat_offsets(shape: tuple[int, ...]) -> np.ndarray:
    """Flat index steps for the 2d canonical directions of a C-ordered array."""
    d = len(shape)
    strides = [int(np.prod(shape[i + 1:])) for i in range(d)]
    out = np.empty(2 * d, dtype=np.int64)
    for i, s in enumerate(strides):
        out[2 * i] = s
        out[2 * i + 1] = -s
    return out


def edge_mask(shape: tuple[int, ...], width: int = 1) -> np.ndarray:
    """Cells within ``width`` of the array border."""
    m = np.zeros(shape, dtype=bool)
    for axis in range(len(shape)):
        idx = [slice(None)] * len(shape)
        idx[axis] = slice(0, width)
        m[tuple(idx)] = True
        idx[axis] = slice(shape[axis] - width, shape[axis])
        m[tuple(idx)] = True
    return m


def parity(shape: tuple[int, ...]) -> np.ndarray:
    """Checkerboard colour (coordinate-sum parity) of every cell."""
    grids = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij", sparse=True)
    tot = np.zeros(shape, dtype=np.int64)
    for g in grids:
        tot = tot + g
    return (tot % 2).astype(np.uint8)


def laplacian_on(mask: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    """Minus the normalized graph Laplacian restricted to ``mask`` (zero outside).

    Returns ``(A, idx)`` where ``A = I - P`` is symmetric positive definite and
    ``idx`` are the flat indices of the unknowns in order.
    """
    d = mask.ndim
    flat = mask.ravel()
    idx = np.flatnonzero(flat)
    n = len(idx)
    pos = np.full(flat.size, -1, dtype=np.int64)
    pos[idx] = np.arange(n)
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.ones(n)]
    coords = np.unravel_index(idx, mask.shape)
    for axis in range(d):
        for s in (1, -1):
            c = list(coords)
            c[axis] = c[axis] + s
            ok = (c[axis] >= 0) & (c[axis] < mask.shape[axis])
            nb = np.full(n, -1, dtype=np.int64)
            nb[ok] = pos[np.ravel_multi_index(tuple(x[ok] for x in c), mask.shape)]
            keep = nb >= 0
            rows.append(np.arange(n)[keep])
            cols.append(nb[keep])
            vals.append(np.full(int(keep.sum()), -1.0 / (2 * d)))
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return A, idx


def solve_spd(A: sp.csr_matrix, b: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Solve the SPD system, directly when small and by AMG-preconditioned CG otherwise."""
    if A.shape[0] == 0:
        return np.zeros(0)
    if A.shape[0] <= DIRECT_SOLVE_LIMIT:
        return spla.splu(A.tocsc()).solve(b)
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric")
    return ml.solve(b, tol=rtol, accel="cg", maxiter=200)
