"""Internal diffusion-limited aggregation with counter-based randomness.

Particle ``j`` of a run with seed ``s`` draws its steps from a Philox stream
keyed by ``(s, j)``; step ``t`` uses the ``t``-th ``b``-bit chunk of that
stream (``b = ceil(log2(2d))``, chunks ``>= 2d`` are skipped). Trajectories
therefore depend only on ``(seed, particle, step)``, not on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import _lattice
from .grid_core import (
    BoundedBox,
    BoxOverflowError,
    ChipfireError,
    DomainSet,
    ScalarField,
    embed,
    max_cells_from_env,
)

DEFAULT_MAX_STEPS = 100_000_000


class WalkLimitError(ChipfireError):
    """A walk exceeded the configured step budget."""


@dataclass(frozen=True)
class WalkRng:
    """Factory of per-particle Philox streams."""

    seed: int

    def stream(self, particle: int) -> np.random.Philox:
        return np.random.Philox(key=np.array([self.seed % 2**64, particle], dtype=np.uint64))


@dataclass(frozen=True)
class IdlaResult:
    occupied: DomainSet
    settle_order: list


@numba.njit(cache=True)
def _walk(occ, offs, edge, pos, words, chunk, bits, steps, max_steps):
    """Walk from ``pos`` using chunks ``chunk, chunk+1, ...`` of ``words``.

    Returns ``(pos, chunk, steps, status)`` with status 0 settled, 1 out of
    random words, 2 standing on the box edge, 3 step budget exhausted.
    """
    k = offs.size
    per_word = 64 // bits
    mask = (np.uint64(1) << np.uint64(bits)) - np.uint64(1)
    total = words.size * per_word
    while occ[pos]:
        if edge[pos]:
            return pos, chunk, steps, 2
        if steps >= max_steps:
            return pos, chunk, steps, 3
        while True:
            if chunk >= total:
                return pos, chunk, steps, 1
            w = words[chunk // per_word]
            c = (w >> np.uint64((chunk % per_word) * bits)) & mask
            chunk += 1
            if c < k:
                break
        pos += offs[c]
        steps += 1
    occ[pos] = 1
    return pos, chunk, steps, 0


class _Cluster:
    def __init__(self, box: BoundedBox, occ: np.ndarray, max_cells: int):
        self.box = box
        self.occ = np.ascontiguousarray(occ, dtype=np.uint8)
        self.max_cells = max_cells
        self._refresh()

    def _refresh(self):
        if self.box.size > self.max_cells:
            raise BoxOverflowError(f"box of {self.box.size} cells exceeds limit {self.max_cells}")
        self.offs = _lattice.flat_offsets(self.box.shape)
        self.edge = _lattice.edge_mask(self.box.shape).ravel()

    def grow(self):
        new = self.box.pad(max(self.box.shape) // 2 + 2)
        self.occ = embed(self.occ, self.box, new, 0)
        self.box = new
        self._refresh()

    def flat(self, p) -> int:
        return int(np.ravel_multi_index(self.box.offset(p), self.box.shape))

    def coords(self, i: int) -> tuple[int, ...]:
        return tuple(int(a + b) for a, b in zip(np.unravel_index(i, self.box.shape), self.box.lo))

    def release(self, start, rng: np.random.Philox, max_steps: int) -> tuple[int, ...]:
        d = self.box.dim
        bits = max(1, math.ceil(math.log2(2 * d)))
        words = rng.random_raw(64)
        chunk = 0
        steps = 0
        p = tuple(start)
        while True:
            if not self.box.contains(p, margin=1):
                self.grow()
                continue
            pos, chunk, steps, status = _walk(self.occ.ravel(), self.offs, self.edge, self.flat(p),
                                              words, chunk, bits, steps, max_steps)
            p = self.coords(pos)
            if status == 0:
                return p
            if status == 1:
                words = np.concatenate([words, rng.random_raw(max(64, len(words)))])
            elif status == 2:
                self.grow()
            else:
                raise WalkLimitError(f"walk from {start} exceeded {max_steps} steps")


def _start_list(sources: ScalarField) -> list[tuple[int, ...]]:
    pts = np.argwhere(sources.values > 0)
    lo = np.array(sources.box.lo)
    out = []
    for p in pts:
        out.extend([tuple(int(x) for x in p + lo)] * int(sources.values[tuple(p)]))
    return out


def _run(starts, occupied: DomainSet | None, d: int, seed: int, max_steps: int,
         max_cells: int | None) -> IdlaResult:
    n = len(starts) + (occupied.count if occupied is not None else 0)
    vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    pad = int(math.ceil(1.2 * (max(n, 1) / vol) ** (1.0 / d))) + 4
    arr = np.array(starts, dtype=np.int64).reshape(-1, d) if starts else np.zeros((1, d), np.int64)
    box = BoundedBox.bounding(arr).pad(pad)
    if occupied is not None:
        box = box.union(occupied.box.pad(pad))
    occ = occupied.on_box(box).astype(np.uint8) if occupied is not None else np.zeros(box.shape, np.uint8)
    cl = _Cluster(box, occ, max_cells or max_cells_from_env())
    rng = WalkRng(seed)
    order = []
    for j, s in enumerate(starts):
        order.append((j, cl.release(s, rng.stream(j), max_steps)))
    return IdlaResult(DomainSet(cl.box, cl.occ.astype(bool)), order)


def idla_aggregate(sources: ScalarField, seed: int, max_steps: int = DEFAULT_MAX_STEPS,
                   max_cells: int | None = None) -> IdlaResult:
    """Release the particles of ``sources`` in lexicographic site order, one at a time."""
    starts = _start_list(sources)
    if not starts:
        raise ValueError("no particles")
    return _run(starts, None, sources.dim, seed, max_steps, max_cells)


def idla_point(n: int, d: int = 2, seed: int = 0, **kw) -> IdlaResult:
    src = ScalarField(BoundedBox((0,) * d, (0,) * d), np.full((1,) * d, n, np.int64))
    return idla_aggregate(src, seed, **kw)


def df_smash(A: DomainSet, B: DomainSet, seed: int, reverse: bool = False,
             max_steps: int = DEFAULT_MAX_STEPS) -> DomainSet:
    """Random-walk smash sum: one walker per point of ``A & B`` leaves ``A | B``.

    Walkers start from the overlap points in lexicographic order, or the
    reverse with ``reverse=True``.
    """
    if A.dim != B.dim:
        raise ValueError("dimension mismatch")
    union = A.union(B)
    starts = [tuple(int(x) for x in p) for p in A.intersection(B).points()]
    if reverse:
        starts = starts[::-1]
    if not starts:
        return union
    return _run(starts, union, A.dim, seed, max_steps, None).occupied
