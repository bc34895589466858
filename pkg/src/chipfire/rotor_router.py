"""Rotor-router walks, aggregation and rotor smash sums on Z^d.

A rotor is rotated first and the particle then steps in its new direction.
Aggregation from a chip field is computed in one of three exact ways:

``walk``
    particles one at a time, each stopping at the first empty site;
``bulk``
    any site holding ``k >= 2`` chips fires ``k - 1`` of them at once, which
    by the abelian property ends in the same state as single walks;
``predict``
    fire a lower estimate of the odometer in one order-free batch, finish
    with ``bulk`` and check a certificate that pins the result to the true
    one. A failed check retries with a smaller estimate; the last resort is
    plain ``bulk``.

The certificate: all final counts are 0 or 1, every site that fired holds
exactly 1, and the final rotors of fired sites contain no directed cycle.
Any firing vector with these three properties equals the true odometer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Hashable, Mapping, Sequence

import numba
import numpy as np

from . import _lattice
from .grid_core import (
    BoundedBox,
    BoxOverflowError,
    ChipfireError,
    DomainSet,
    ScalarField,
    direction_vectors,
    embed,
    max_cells_from_env,
)


class BoundViolation(ChipfireError):
    """The rotor/random-walk discrepancy exceeded its proven bound."""


def compass_ordering() -> np.ndarray:
    """Clockwise north, east, south, west for ``d = 2``."""
    return np.array([(0, 1), (1, 0), (0, -1), (-1, 0)], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class RotorConfig:
    """Rotor directions as indices into ``ordering``; sites off the box hold ``direction.default``."""

    direction: ScalarField
    ordering: np.ndarray

    def __post_init__(self):
        order = np.array(self.ordering, dtype=np.int64)
        order.setflags(write=False)
        object.__setattr__(self, "ordering", order)
        k = len(order)
        if np.any(self.direction.values >= k) or not 0 <= self.direction.default < k:
            raise ValueError("rotor index out of range")

    @classmethod
    def uniform(cls, d: int = 2, index: int = 0, ordering: np.ndarray | None = None) -> "RotorConfig":
        order = direction_vectors(d) if ordering is None else np.asarray(ordering)
        box = BoundedBox((0,) * d, (0,) * d)
        return cls(ScalarField(box, np.full((1,) * d, index, np.uint8), index), order)

    @property
    def dim(self) -> int:
        return self.direction.dim

    def __getitem__(self, p) -> int:
        return int(self.direction[p])

    def on_box(self, box: BoundedBox) -> np.ndarray:
        return self.direction.on_box(box, np.uint8)

    def to_json(self) -> str:
        obj = self.direction.to_dict()
        obj["ordering"] = self.ordering.tolist()
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "RotorConfig":
        obj = json.loads(text)
        lo = tuple(obj["lo"])
        shape = tuple(obj["shape"])
        box = BoundedBox(lo, tuple(a + s - 1 for a, s in zip(lo, shape)))
        vals = np.array(obj["values"], dtype=np.uint8).reshape(shape)
        return cls(ScalarField(box, vals, obj["default"]), np.array(obj["ordering"]))


@dataclass(frozen=True)
class RotorAggregate:
    occupied: DomainSet
    rotors: RotorConfig
    exits: ScalarField


def rotor_step(rotors: RotorConfig, p: Sequence[int]) -> tuple[RotorConfig, tuple[int, ...]]:
    """Rotate the rotor at ``p`` then step along it; returns the new config and position."""
    p = tuple(int(x) for x in p)
    box = rotors.direction.box
    if not box.contains(p):
        box = box.union(BoundedBox(p, p))
    vals = rotors.on_box(box)
    off = box.offset(p)
    k = len(rotors.ordering)
    vals[off] = (int(vals[off]) + 1) % k
    q = tuple(int(a + b) for a, b in zip(p, rotors.ordering[vals[off]]))
    new = replace(rotors, direction=ScalarField(box, vals, rotors.direction.default))
    return new, q


# ---------------------------------------------------------------- kernels


@numba.njit(cache=True)
def _walk(cnt, rot, exits, offs, edge, starts, first):
    """Walk particles ``starts[first:]`` one at a time.

    Returns ``(next particle, position)``; position ``-1`` means all done,
    otherwise the particle sits on an edge cell and the box must grow.
    """
    k = offs.size
    for t in range(first, starts.size):
        pos = starts[t]
        while cnt[pos] >= 1:
            if edge[pos]:
                return t, pos
            r = rot[pos] + 1
            if r == k:
                r = 0
            rot[pos] = r
            exits[pos] += 1
            pos += offs[r]
        cnt[pos] = 1
    return starts.size, -1


@numba.njit(cache=True)
def _fire_all(cnt, rot, exits, offs, edge):
    """Stabilize ``cnt`` to at most one chip per site by legal bulk firings.

    Returns ``(firings, hit_edge)``. Work is proportional to the number of
    firing events, not the number of chip steps.
    """
    k = offs.size
    n = cnt.size
    queue = np.empty(n, np.int64)
    inq = np.zeros(n, np.uint8)
    head = 0
    tail = 0
    size = 0
    for i in range(n):
        if cnt[i] >= 2:
            queue[tail] = i
            tail += 1
            size += 1
            inq[i] = 1
    if tail == n:
        tail = 0
    fires = 0
    while size > 0:
        x = queue[head]
        head += 1
        if head == n:
            head = 0
        size -= 1
        inq[x] = 0
        m = cnt[x] - 1
        if m <= 0:
            continue
        if edge[x]:
            return fires, True
        fires += 1
        cnt[x] = 1
        exits[x] += m
        r = rot[x]
        q = m // k
        rem = m - q * k
        for j in range(k):
            a = q
            if (j - r - 1) % k < rem:
                a += 1
            if a > 0:
                y = x + offs[j]
                cnt[y] += a
                if cnt[y] >= 2 and inq[y] == 0:
                    inq[y] = 1
                    queue[tail] = y
                    tail += 1
                    if tail == n:
                        tail = 0
                    size += 1
        rot[x] = (r + m) % k
    return fires, False


@numba.njit(cache=True)
def _has_cycle(fired, rot, offs):
    """Does the rotor graph restricted to fired sites contain a directed cycle?"""
    n = fired.size
    state = np.zeros(n, np.int64)  # 0 new, >0 path id of current trace, -1 done
    path = np.empty(n, np.int64)
    tag = 0
    for s in range(n):
        if not fired[s] or state[s] != 0:
            continue
        tag += 1
        length = 0
        x = s
        while True:
            if x < 0 or x >= n or not fired[x] or state[x] == -1:
                break
            if state[x] == tag:
                return True
            state[x] = tag
            path[length] = x
            length += 1
            x = x + offs[rot[x]]
        for i in range(length):
            state[path[i]] = -1
    return False


# ---------------------------------------------------------------- engine


class _Lattice:
    """Mutable working arrays on a growable box."""

    def __init__(self, box: BoundedBox, cnt: np.ndarray, rotors: RotorConfig, max_cells: int):
        self.box = box
        self.cnt = np.ascontiguousarray(cnt, dtype=np.int64)
        self.rot = np.ascontiguousarray(rotors.on_box(box), dtype=np.int64)
        self.exits = np.zeros(box.shape, dtype=np.int64)
        self.rotors = rotors
        self.max_cells = max_cells
        self._refresh()

    def _refresh(self):
        if self.box.size > self.max_cells:
            raise BoxOverflowError(f"box of {self.box.size} cells exceeds limit {self.max_cells}")
        strides = np.array([int(np.prod(self.box.shape[i + 1:])) for i in range(self.box.dim)])
        self.offs = (self.rotors.ordering @ strides).astype(np.int64)
        self.edge = _lattice.edge_mask(self.box.shape).ravel()

    def grow(self):
        pad = max(self.box.shape) // 2 + 2
        new = self.box.pad(pad)
        self.cnt = embed(self.cnt, self.box, new, 0)
        self.rot = embed(self.rot, self.box, new, self.rotors.direction.default)
        self.exits = embed(self.exits, self.box, new, 0)
        self.box = new
        self._refresh()

    def flat(self, p) -> int:
        return int(np.ravel_multi_index(self.box.offset(p), self.box.shape))

    def coords(self, i: int) -> tuple[int, ...]:
        return tuple(int(a + b) for a, b in zip(np.unravel_index(i, self.box.shape), self.box.lo))

    def fire_all(self) -> int:
        total = 0
        while True:
            f, hit = _fire_all(self.cnt.ravel(), self.rot.ravel(), self.exits.ravel(),
                               self.offs, self.edge)
            total += f
            if not hit:
                return total
            self.grow()

    def result(self) -> RotorAggregate:
        rot = RotorConfig(ScalarField(self.box, self.rot.astype(np.uint8),
                                      self.rotors.direction.default), self.rotors.ordering)
        return RotorAggregate(DomainSet(self.box, self.cnt == 1), rot,
                              ScalarField(self.box, self.exits))


def _sources_box(sources: ScalarField, rotors: RotorConfig, pad: int) -> BoundedBox:
    supp = sources.support_box() or sources.box
    return supp.pad(pad).union(rotors.direction.box.pad(1))


def _walk_sequential(eng: _Lattice, sources: ScalarField, occupied: np.ndarray | None = None):
    """Release particles site by site in lexicographic order of their source."""
    if occupied is not None:
        eng.cnt[...] = occupied
    starts = []
    pts = np.argwhere(sources.values > 0)
    lo = np.array(sources.box.lo)
    coords = [tuple(int(x) for x in p + lo) for p in pts]
    counts = [int(sources.values[tuple(p)]) for p in pts]
    for c, k in zip(coords, counts):
        starts.extend([c] * k)
    t = 0
    pending = None
    while True:
        flat = np.array([eng.flat(p) for p in starts], dtype=np.int64)
        if pending is not None:
            flat[t] = eng.flat(pending)
        t, pos = _walk(eng.cnt.ravel(), eng.rot.ravel(), eng.exits.ravel(), eng.offs,
                       eng.edge, flat, t)
        if pos < 0:
            return
        pending = eng.coords(pos)
        eng.grow()


def _predictor(sources: ScalarField, box: BoundedBox) -> np.ndarray:
    """Approximate odometer on ``box`` from the divisible model."""
    total = float(sources.values.sum())
    supp = sources.support_box()
    point = supp is not None and supp.size == 1
    if total <= 300_000 or not point:
        from .divisible_sandpile import stabilize

        state, _ = stabilize(ScalarField(sources.box, sources.values.astype(np.float64)))
        return state.odometer.on_box(box, np.float64)
    # a single solve on the ball of the right volume around the point source
    d = box.dim
    vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    r = (total / vol) ** (1.0 / d)
    center = np.array(supp.lo)
    n2 = np.zeros(box.shape)
    for axis, c in enumerate(box.coordinates()):
        n2 = n2 + (c - center[axis]).astype(float) ** 2
    S = n2 < r * r
    S &= ~_lattice.edge_mask(box.shape)
    A, idx = _lattice.laplacian_on(S)
    rhs = sources.on_box(box, np.float64).ravel()[idx] - 1.0
    u = np.zeros(box.shape)
    u.ravel()[idx] = _lattice.solve_spd(A, rhs, rtol=1e-8)
    return np.maximum(u, 0.0)


def _fire_batch(cnt, rot, exits, offs, fire):
    """Fire ``fire[x]`` chips from every site at once (order-free)."""
    k = len(offs)
    n = cnt.size
    q, rem = np.divmod(fire, k)
    for j in range(k):
        a = q + (((j - rot - 1) % k) < rem)
        a = np.where(fire > 0, a, 0)
        shifted = np.zeros(n, dtype=np.int64)
        o = offs[j]
        if o >= 0:
            shifted[o:] = a[: n - o]
        else:
            shifted[: n + o] = a[-o:]
        cnt += shifted
    cnt -= fire
    exits += fire
    rot[...] = (rot + fire) % k


def certify(cnt: np.ndarray, exits: np.ndarray, rot: np.ndarray, offs: np.ndarray) -> bool:
    """Check the three-part exactness certificate on flat arrays."""
    if cnt.min() < 0 or cnt.max() > 1:
        return False
    fired = exits > 0
    if np.any(cnt[fired] != 1):
        return False
    return not _has_cycle(fired, rot, offs)


def _run_predicted(eng: _Lattice, sources: ScalarField, margin0: float) -> tuple[int, float]:
    """Predict, batch-fire, finish and certify; returns (attempts, final margin)."""
    margin = margin0
    attempts = 0
    guess = None
    while True:
        attempts += 1
        if guess is None or guess.shape != eng.box.shape:
            guess = _predictor(sources, eng.box)
        eng.cnt[...] = sources.on_box(eng.box, np.int64)
        eng.rot[...] = eng.rotors.on_box(eng.box)
        eng.exits[...] = 0
        if math.isfinite(margin):
            fire = np.floor(guess - margin).astype(np.int64)
            np.maximum(fire, 0, out=fire)
            fire[eng.edge.reshape(eng.box.shape)] = 0
            _fire_batch(eng.cnt.ravel(), eng.rot.ravel(), eng.exits.ravel(), eng.offs,
                        fire.ravel())
        eng.fire_all()
        if not math.isfinite(margin):
            return attempts, margin
        if certify(eng.cnt.ravel(), eng.exits.ravel(), eng.rot.ravel(), eng.offs):
            return attempts, margin
        margin = margin * 2 if margin < 1024 else math.inf


def stabilize_rotors(sources: ScalarField, initial: RotorConfig | None = None,
                     method: str = "auto", occupied: DomainSet | None = None,
                     max_cells: int | None = None) -> RotorAggregate:
    """Rotor aggregation from the chip field ``sources``.

    ``occupied`` marks sites that already hold one settled particle before
    the sources are added (used by smash sums).
    """
    d = sources.dim
    rotors = initial or RotorConfig.uniform(d)
    if rotors.dim != d:
        raise ValueError("rotor dimension mismatch")
    if np.any(sources.values < 0):
        raise ValueError("chip counts must be nonnegative")
    total = int(sources.values.sum()) + (occupied.count if occupied is not None else 0)
    vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    pad = int(math.ceil(1.25 * (max(total, 1) / vol) ** (1.0 / d))) + 6
    box = _sources_box(sources, rotors, pad)
    if occupied is not None:
        box = box.union(occupied.box.pad(pad))
    eng = _Lattice(box, np.zeros(box.shape, np.int64), rotors, max_cells or max_cells_from_env())
    occ = occupied.on_box(box).astype(np.int64) if occupied is not None else None
    if method == "auto":
        method = "predict" if total >= 50_000 else "bulk"
    if method == "walk":
        _walk_sequential(eng, sources, occ)
    elif method in ("bulk", "predict"):
        eng.cnt[...] = sources.on_box(box, np.int64)
        if occ is not None:
            eng.cnt += occ
        if method == "bulk":
            eng.fire_all()
        else:
            if occ is not None:
                raise ValueError("the predict method takes a plain chip field")
            margin0 = max(16.0, 2.0 * total ** 0.25)
            _run_predicted(eng, sources, margin0)
    else:
        raise ValueError(f"unknown method {method!r}")
    return eng.result()


def point_chips(n: int, d: int = 2) -> ScalarField:
    return ScalarField(BoundedBox((0,) * d, (0,) * d), np.full((1,) * d, int(n), np.int64))


def aggregate(n: int, initial: RotorConfig | None = None, d: int | None = None,
              method: str = "auto") -> RotorAggregate:
    """Rotor-router aggregate of ``n`` particles started at the origin."""
    if n < 1:
        raise ValueError("need at least one particle")
    if d is None:
        d = initial.dim if initial is not None else 2
    return stabilize_rotors(point_chips(n, d), initial, method)


def rotor_smash_full(A: DomainSet, B: DomainSet, initial: RotorConfig | None = None,
                     method: str = "bulk") -> RotorAggregate:
    """Smash sum keeping the final rotors and emission counts."""
    if A.dim != B.dim:
        raise ValueError("dimension mismatch")
    d = A.dim
    if A.count == 0 and B.count == 0:
        rot = initial or RotorConfig.uniform(d)
        empty = DomainSet.empty(d)
        return RotorAggregate(empty, rot, ScalarField(empty.box, np.zeros(empty.box.shape, np.int64)))
    box = A.box.union(B.box)
    both = A.on_box(box) & B.on_box(box)
    union = DomainSet(box, A.on_box(box) | B.on_box(box))
    extra = ScalarField(box, both.astype(np.int64))
    if method == "walk":
        return stabilize_rotors(extra, initial, "walk", occupied=union)
    chips = ScalarField(box, A.on_box(box).astype(np.int64) + B.on_box(box).astype(np.int64))
    return stabilize_rotors(chips, initial, "bulk")


def rotor_smash(A: DomainSet, B: DomainSet, initial: RotorConfig | None = None) -> DomainSet:
    """``A`` smash ``B`` under rotor walks; cardinality ``#A + #B``."""
    return rotor_smash_full(A, B, initial).occupied


# ---------------------------------------------------------------- general graphs


@dataclass(frozen=True)
class HarnessCheck:
    rotor_hits: int
    expected_hits: float
    bound: float

    @property
    def discrepancy(self) -> float:
        return abs(self.rotor_hits - self.expected_hits)


def graph_rotor_walks(adjacency: Mapping[Hashable, Sequence[Hashable]], sources: Sequence[Hashable],
                      absorbing, rotors: Mapping[Hashable, int] | None = None,
                      max_steps: int = 10_000_000) -> tuple[list, dict]:
    """Run one rotor walk per source until it hits ``absorbing``; returns endpoints and rotors."""
    Z = set(absorbing)
    rot = {v: 0 for v in adjacency}
    if rotors:
        rot.update(rotors)
    ends = []
    steps = 0
    for s in sources:
        v = s
        while v not in Z:
            nbrs = adjacency[v]
            rot[v] = (rot[v] + 1) % len(nbrs)
            v = nbrs[rot[v]]
            steps += 1
            if steps > max_steps:
                raise ChipfireError("rotor walks did not reach the absorbing set")
        ends.append(v)
    return ends, rot


def harnessed_walk_bound_check(adjacency: Mapping[Hashable, Sequence[Hashable]],
                               sources: Sequence[Hashable], absorbing, targets,
                               rotors: Mapping[Hashable, int] | None = None) -> HarnessCheck:
    """Compare rotor hits of ``targets`` with the random-walk expectation.

    ``adjacency[v]`` is the cyclic rotor order of the neighbours of ``v``.
    The discrepancy is bounded by the sum over ordered adjacent pairs of
    ``|H(u) - H(v)|``, with ``H`` the harmonic measure of ``targets``.
    """
    from .obstacle_solver import harmonic_measure

    Y = set(targets)
    H = harmonic_measure(adjacency, absorbing, Y)
    ends, _ = graph_rotor_walks(adjacency, sources, absorbing, rotors)
    hits = sum(1 for v in ends if v in Y)
    expected = float(sum(H[s] for s in sources))
    bound = float(sum(abs(H[u] - H[v]) for u in adjacency for v in adjacency[u]))
    check = HarnessCheck(hits, expected, bound)
    if check.discrepancy > bound + 1e-9:
        raise BoundViolation(f"discrepancy {check.discrepancy} exceeds bound {bound}")
    return check
