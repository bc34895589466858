"""Classical abelian sandpile on Z^d with a hole of depth H at every site.

A site stores ``v = grains - H``: it starts at ``-H`` and fires (sending one
grain to each neighbour) while ``v >= 2d``.
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
    DomainSet,
    ScalarField,
    embed,
    max_cells_from_env,
)


@dataclass(frozen=True)
class ChipState:
    """Final chips (net of holes), firing counts and visited set.

    ``chips.default`` is ``-H``: untouched sites still hold an empty hole.
    """

    chips: ScalarField
    firings: ScalarField
    visited: DomainSet
    hole: int
    initial: ScalarField

    @property
    def dim(self) -> int:
        return self.chips.dim


@numba.njit(cache=True)
def _topple_all(v, fires, offs, edge, thresh, order):
    """Fire every unstable site ``floor(v / thresh)`` times, FIFO.

    ``order`` optionally permutes the initial scan (for abelianness checks).
    """
    k = offs.size
    n = v.size
    queue = np.empty(n, np.int64)
    inq = np.zeros(n, np.uint8)
    head = 0
    tail = 0
    size = 0
    for t in range(n):
        i = order[t] if order.size == n else t
        if v[i] >= thresh:
            queue[tail] = i
            tail += 1
            size += 1
            inq[i] = 1
    if tail == n:
        tail = 0
    while size > 0:
        x = queue[head]
        head += 1
        if head == n:
            head = 0
        size -= 1
        inq[x] = 0
        m = v[x] // thresh
        if m <= 0:
            continue
        if edge[x]:
            return True
        v[x] -= m * thresh
        fires[x] += m
        for j in range(k):
            y = x + offs[j]
            v[y] += m
            if v[y] >= thresh and inq[y] == 0:
                inq[y] = 1
                queue[tail] = y
                tail += 1
                if tail == n:
                    tail = 0
                size += 1
    return False


def _stabilize_field(v0: np.ndarray, box: BoundedBox, hole: int, max_cells: int,
                     order_seed: int | None = None):
    d = box.dim
    v = np.ascontiguousarray(v0, dtype=np.int64)
    f = np.zeros(box.shape, np.int64)
    while True:
        if box.size > max_cells:
            raise BoxOverflowError(f"box of {box.size} cells exceeds limit {max_cells}")
        offs = _lattice.flat_offsets(box.shape)
        edge = _lattice.edge_mask(box.shape).ravel()
        if order_seed is None:
            order = np.empty(0, np.int64)
        else:
            order = np.random.default_rng(order_seed).permutation(v.size).astype(np.int64)
        hit = _topple_all(v.ravel(), f.ravel(), offs, edge, 2 * d, order)
        if not hit:
            return v, f, box
        new = box.pad(max(box.shape) // 2 + 2)
        v = embed(v, box, new, -hole)
        f = embed(f, box, new, 0)
        box = new


def stabilize_chips(n: int, H: int = 0, d: int = 2, max_cells: int | None = None) -> ChipState:
    """Put ``n`` grains at the origin over holes of depth ``H`` and stabilize."""
    if H < 2 - 2 * d:
        raise ValueError(f"hole depth {H} below the minimum {2 - 2 * d} for d={d}")
    if n < 1:
        raise ValueError("need at least one grain")
    vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    r = (n / (vol * max(d - 1 + H, 1))) ** (1.0 / d)
    box = BoundedBox.centered(int(math.ceil(r)) + 4, d)
    initial = ScalarField(BoundedBox((0,) * d, (0,) * d), np.full((1,) * d, n - H, np.int64), -H)
    return stabilize_field(initial, H, max_cells=max_cells, box=box)


def stabilize_field(initial: ScalarField, H: int = 0, max_cells: int | None = None,
                    box: BoundedBox | None = None, order_seed: int | None = None) -> ChipState:
    """Stabilize an arbitrary net-chip field whose default is ``-H``.

    ``order_seed`` shuffles the initial scan order; the result must not
    depend on it.
    """
    if initial.default != -H:
        raise ValueError("field default must equal -H")
    d = initial.dim
    box = (box or initial.box.pad(2)).union(initial.box.pad(2))
    v0 = initial.on_box(box, np.int64)
    v, f, box = _stabilize_field(v0, box, H, max_cells or max_cells_from_env(), order_seed)
    if H >= 0:
        # a site was visited iff it ever held an unabsorbed grain
        start = initial.on_box(box, np.int64)
        received = v - start + 2 * d * f
        visited = (start + received >= 1) | (start >= 1)
    else:
        visited = f > 0
    origin = (0,) * d
    if box.contains(origin) and initial[origin] != -H:
        visited[box.offset(origin)] = True
    return ChipState(ScalarField(box, v, -H), ScalarField(box, f), DomainSet(box, visited), H, initial)


def fire_count_identity_check(state: ChipState) -> int:
    """Max violation of ``final = initial + neighbour firings - 2d * firings``."""
    box = state.chips.box.union(state.firings.box).pad(1)
    v = state.chips.on_box(box, np.int64)
    f = state.firings.on_box(box, np.int64)
    v0 = state.initial.on_box(box, np.int64)
    d = box.dim
    pred = v0 - 2 * d * f
    for axis in range(d):
        pred = pred + np.roll(f, 1, axis) + np.roll(f, -1, axis)
    return int(np.abs(pred - v).max())


def cube_check(n: int, d: int = 2, H: int = -2) -> bool:
    """Is the visited set an L-infinity ball around the origin?"""
    state = stabilize_chips(n, H, d)
    pts = state.visited.points()
    k = int(np.abs(pts).max())
    return state.visited.count == (2 * k + 1) ** d


def internal_edges(lo, hi) -> int:
    """Number of lattice edges with both ends inside the box ``[lo, hi]``."""
    sides = [b - a + 1 for a, b in zip(lo, hi)]
    total = 0
    for i in range(len(sides)):
        total += (sides[i] - 1) * math.prod(s for j, s in enumerate(sides) if j != i)
    return total


def internal_edges_check(state: ChipState, lo, hi) -> tuple[int, int]:
    """Grains left in a fully toppled box versus its internal edge count.

    Raises ``ValueError`` when some site of the box never fired.
    """
    q = BoundedBox(tuple(lo), tuple(hi))
    box = state.firings.box
    if box.union(q) != box:
        raise ValueError("box leaves the recorded region")
    sl = q.slices_in(box)
    if np.any(state.firings.values[sl] == 0):
        raise ValueError("box is not fully toppled")
    grains = int(state.chips.values[sl].sum()) + state.hole * q.size
    return grains, internal_edges(q.lo, q.hi)
