"""Lattice plumbing shared by every model: boxes, fields, domain sets.

All arrays are dense and indexed by offset coordinates ``p - box.lo``.
Directions follow the fixed order ``+e1, -e1, +e2, -e2, ...``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ChipfireError(Exception):
    """Base class for all package errors."""


class OutOfBoxError(ChipfireError):
    """A point (or its neighbours) falls outside the recorded box."""


class BoxOverflowError(ChipfireError):
    """A model needed more cells than the configured maximum."""


def max_cells_from_env(default: int = 400_000_000) -> int:
    import os

    raw = os.environ.get("CHIPFIRE_MAX_CELLS")
    return int(raw) if raw else default


def direction_vectors(d: int) -> np.ndarray:
    """Unit steps in the canonical order, shape ``(2d, d)``."""
    out = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        out[2 * i, i] = 1
        out[2 * i + 1, i] = -1
    return out


@dataclass(frozen=True)
class BoundedBox:
    """Axis-aligned box with inclusive integer bounds."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ValueError("box bounds must be nonempty and of equal length")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"empty box {self.lo}..{self.hi}")
        object.__setattr__(self, "lo", tuple(int(a) for a in self.lo))
        object.__setattr__(self, "hi", tuple(int(b) for b in self.hi))

    @classmethod
    def centered(cls, radius: int, d: int) -> "BoundedBox":
        return cls((-radius,) * d, (radius,) * d)

    @classmethod
    def bounding(cls, points: np.ndarray) -> "BoundedBox":
        pts = np.asarray(points, dtype=np.int64)
        return cls(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def contains(self, p: Sequence[int], margin: int = 0) -> bool:
        return all(a + margin <= x <= b - margin for a, x, b in zip(self.lo, p, self.hi))

    def offset(self, p: Sequence[int]) -> tuple[int, ...]:
        return tuple(int(x) - a for x, a in zip(p, self.lo))

    def pad(self, k: int) -> "BoundedBox":
        return BoundedBox(tuple(a - k for a in self.lo), tuple(b + k for b in self.hi))

    def union(self, other: "BoundedBox") -> "BoundedBox":
        return BoundedBox(
            tuple(min(a, b) for a, b in zip(self.lo, other.lo)),
            tuple(max(a, b) for a, b in zip(self.hi, other.hi)),
        )

    def slices_in(self, outer: "BoundedBox") -> tuple[slice, ...]:
        """Slices locating this box inside a containing box."""
        return tuple(slice(a - o, b - o + 1) for a, b, o in zip(self.lo, self.hi, outer.lo))

    def coordinates(self) -> list[np.ndarray]:
        """Open meshgrid of lattice coordinates, one broadcastable array per axis."""
        axes = [np.arange(a, b + 1) for a, b in zip(self.lo, self.hi)]
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    def norm2(self) -> np.ndarray:
        """Squared Euclidean norm of every lattice point of the box."""
        out = np.zeros(self.shape, dtype=np.int64)
        for c in self.coordinates():
            out = out + c.astype(np.int64) ** 2
        return out


def embed(values: np.ndarray, box: BoundedBox, outer: BoundedBox, fill=0) -> np.ndarray:
    """Copy ``values`` (laid out on ``box``) into a fresh array on ``outer``."""
    out = np.full(outer.shape, fill, dtype=values.dtype)
    if outer.union(box) != outer:
        # crop: only the overlap is kept
        lo = tuple(max(a, b) for a, b in zip(box.lo, outer.lo))
        hi = tuple(min(a, b) for a, b in zip(box.hi, outer.hi))
        if any(a > b for a, b in zip(lo, hi)):
            return out
        inner = BoundedBox(lo, hi)
        out[inner.slices_in(outer)] = values[inner.slices_in(box)]
        return out
    out[box.slices_in(outer)] = values
    return out


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Dense values over a box plus a default for everything outside it."""

    box: BoundedBox
    values: np.ndarray
    default: float | int = 0

    def __post_init__(self):
        vals = np.array(self.values, copy=True, order="C")
        if vals.shape != self.box.shape:
            raise ValueError(f"values shape {vals.shape} does not match box {self.box.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_points(cls, points: dict, d: int | None = None, dtype=np.float64,
                    default=0) -> "ScalarField":
        if not points:
            dd = d or 1
            return cls(BoundedBox((0,) * dd, (0,) * dd), np.full((1,) * dd, default, dtype), default)
        keys = np.array(list(points.keys()), dtype=np.int64).reshape(len(points), -1)
        box = BoundedBox.bounding(keys)
        vals = np.full(box.shape, default, dtype=dtype)
        for p, v in points.items():
            vals[box.offset(p)] = v
        return cls(box, vals, default)

    @property
    def dim(self) -> int:
        return self.box.dim

    def __getitem__(self, p: Sequence[int]):
        if self.box.contains(p):
            return self.values[self.box.offset(p)].item()
        return self.default

    def total(self) -> float:
        return self.values.sum().item()

    def on_box(self, outer: BoundedBox, dtype=None) -> np.ndarray:
        vals = self.values if dtype is None else self.values.astype(dtype)
        return embed(vals, self.box, outer, fill=self.default)

    def support_box(self) -> BoundedBox | None:
        nz = np.argwhere(self.values != self.default)
        if len(nz) == 0:
            return None
        lo = np.array(self.box.lo)
        return BoundedBox(tuple(nz.min(axis=0) + lo), tuple(nz.max(axis=0) + lo))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "lo": list(self.box.lo),
            "shape": list(self.box.shape),
            "default": self.default,
            "values": self.values.ravel().tolist(),
        }


@dataclass(frozen=True, eq=False)
class DomainSet:
    """Finite set of lattice points stored as a bitmap over a box."""

    box: BoundedBox
    mask: np.ndarray
    count: int = field(init=False)

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool, copy=True)
        if m.shape != self.box.shape:
            raise ValueError("mask shape does not match box")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "count", int(m.sum()))

    @classmethod
    def empty(cls, d: int) -> "DomainSet":
        return cls(BoundedBox((0,) * d, (0,) * d), np.zeros((1,) * d, bool))

    @classmethod
    def from_points(cls, points: Iterable[Sequence[int]], d: int | None = None) -> "DomainSet":
        pts = [tuple(int(x) for x in p) for p in points]
        if not pts:
            if d is None:
                raise ValueError("dimension required for an empty point list")
            return cls.empty(d)
        arr = np.array(pts, dtype=np.int64)
        box = BoundedBox.bounding(arr)
        mask = np.zeros(box.shape, bool)
        mask[tuple((arr - np.array(box.lo)).T)] = True
        return cls(box, mask)

    @classmethod
    def from_json(cls, text: str) -> "DomainSet":
        obj = json.loads(text)
        return cls.from_points(obj["points"], d=obj["dim"])

    @property
    def dim(self) -> int:
        return self.box.dim

    def __len__(self) -> int:
        return self.count

    def __contains__(self, p: Sequence[int]) -> bool:
        return self.box.contains(p) and bool(self.mask[self.box.offset(p)])

    def contains(self, p: Sequence[int]) -> bool:
        return p in self

    def points(self) -> np.ndarray:
        """Member coordinates, sorted lexicographically, shape ``(count, d)``."""
        # argwhere on a C-ordered array already yields lexicographic order
        return np.argwhere(self.mask) + np.array(self.box.lo, dtype=np.int64)

    def point_set(self) -> set[tuple[int, ...]]:
        return {tuple(int(x) for x in p) for p in self.points()}

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "points": self.points().tolist()},
                          separators=(",", ":"))

    def on_box(self, outer: BoundedBox) -> np.ndarray:
        return embed(self.mask, self.box, outer, fill=False)

    def _pair(self, other: "DomainSet"):
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        box = self.box.union(other.box)
        return box, self.on_box(box), other.on_box(box)

    def union(self, other: "DomainSet") -> "DomainSet":
        box, a, b = self._pair(other)
        return DomainSet(box, a | b)

    def intersection(self, other: "DomainSet") -> "DomainSet":
        box, a, b = self._pair(other)
        return DomainSet(box, a & b)

    def difference(self, other: "DomainSet") -> "DomainSet":
        box, a, b = self._pair(other)
        return DomainSet(box, a & ~b)

    def symmetric_difference_count(self, other: "DomainSet") -> int:
        _, a, b = self._pair(other)
        return int((a ^ b).sum())

    def issubset(self, other: "DomainSet") -> bool:
        _, a, b = self._pair(other)
        return not bool((a & ~b).any())

    def __eq__(self, other) -> bool:
        if not isinstance(other, DomainSet):
            return NotImplemented
        return self.dim == other.dim and self.symmetric_difference_count(other) == 0

    __hash__ = None

    def boundary_cells(self) -> "DomainSet":
        """Members with at least one lattice neighbour outside the set."""
        box = self.box.pad(1)
        m = self.on_box(box)
        outside_nb = np.zeros_like(m)
        for axis in range(self.dim):
            outside_nb |= ~np.roll(m, 1, axis) | ~np.roll(m, -1, axis)
        return DomainSet(box, m & outside_nb)

    def translate(self, shift: Sequence[int]) -> "DomainSet":
        return DomainSet(
            BoundedBox(tuple(a + s for a, s in zip(self.box.lo, shift)),
                       tuple(b + s for b, s in zip(self.box.hi, shift))),
            self.mask,
        )


@dataclass(frozen=True)
class ShapeMetrics:
    inradius: float
    outradius: float | None
    volume: int
    centroid: tuple[float, ...] | None


def neighbors(p: Sequence[int], box: BoundedBox | None = None) -> list[tuple[int, ...]]:
    """The 2d lattice neighbours of ``p`` in canonical direction order.

    When ``box`` is given, ``p`` must sit at least one cell inside it.
    """
    p = tuple(int(x) for x in p)
    if box is not None and not box.contains(p, margin=1):
        raise OutOfBoxError(f"{p} is not inside {box} with a one-cell margin")
    out = []
    for i in range(len(p)):
        for s in (1, -1):
            q = list(p)
            q[i] += s
            out.append(tuple(q))
    return out


def ball_domain(r: float, d: int) -> DomainSet:
    """Lattice points with Euclidean norm strictly less than ``r``."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    k = max(int(math.ceil(r)), 0)
    box = BoundedBox.centered(k, d)
    return DomainSet(box, box.norm2() < r * r)


def shape_metrics(D: DomainSet) -> ShapeMetrics:
    if D.count == 0:
        return ShapeMetrics(0.0, None, 0, None)
    box = D.box.pad(1)
    n2 = box.norm2()
    m = D.on_box(box)
    inr = math.sqrt(n2[~m].min())
    outr = math.sqrt(n2[m].max())
    cen = tuple(float(x) for x in D.points().mean(axis=0))
    return ShapeMetrics(inr, outr, D.count, cen)


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float
    weight: float = 1.0


@dataclass(frozen=True)
class Cuboid:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    weight: float = 1.0


def _shape_bounds(s) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(s, Ball):
        c = np.asarray(s.center, float)
        return c - s.radius, c + s.radius
    if isinstance(s, Cuboid):
        return np.asarray(s.lo, float), np.asarray(s.hi, float)
    raise TypeError(f"unsupported density piece {s!r}")


def _ball_cell_fraction(ball: Ball, box: BoundedBox, delta: float, sub: int) -> np.ndarray:
    d = box.dim
    c = np.asarray(ball.center, float)
    R = ball.radius
    coords = box.coordinates()
    near2 = np.zeros(box.shape)
    far2 = np.zeros(box.shape)
    for i, x in enumerate(coords):
        t = x * delta - c[i]
        gap = np.maximum(np.abs(t) - delta / 2, 0.0)
        near2 = near2 + gap ** 2
        far2 = far2 + (np.abs(t) + delta / 2) ** 2
    frac = np.where(far2 <= R * R, 1.0, 0.0)
    cut = (near2 < R * R) & (far2 > R * R)
    idx = np.argwhere(cut)
    if len(idx):
        offs = (np.arange(sub) + 0.5) / sub - 0.5
        grid = np.stack(np.meshgrid(*([offs] * d), indexing="ij"), -1).reshape(-1, d) * delta
        centers = (idx + np.array(box.lo)) * delta - c
        inside = np.zeros(len(idx))
        for chunk in range(0, len(idx), 4096):
            pc = centers[chunk:chunk + 4096, None, :] + grid[None, :, :]
            inside[chunk:chunk + 4096] = ((pc ** 2).sum(-1) < R * R).mean(-1)
        frac[tuple(idx.T)] = inside
    return frac


def _cuboid_cell_fraction(cub: Cuboid, box: BoundedBox, delta: float) -> np.ndarray:
    frac = np.ones(box.shape)
    for i, x in enumerate(box.coordinates()):
        a = np.maximum(x * delta - delta / 2, cub.lo[i])
        b = np.minimum(x * delta + delta / 2, cub.hi[i])
        frac = frac * (np.maximum(b - a, 0.0) / delta)
    return frac


def discretize_density(pieces: Sequence, delta: float, d: int | None = None,
                       subsamples: int | None = None) -> ScalarField:
    """Rounded cell averages of a piecewise-constant density on ``delta * Z^d``.

    ``pieces`` is a sequence of :class:`Ball` / :class:`Cuboid` whose weights
    add. The field is indexed by integer lattice coordinates ``k`` standing for
    the physical point ``k * delta``. Rounding ties go to the even integer.
    """
    if delta <= 0:
        raise ValueError("spacing must be positive")
    pieces = list(pieces)
    if d is None:
        if not pieces:
            raise ValueError("dimension required for an empty density")
        d = len(_shape_bounds(pieces[0])[0])
    live = [p for p in pieces if p.weight != 0]
    if not live:
        return ScalarField(BoundedBox((0,) * d, (0,) * d), np.zeros((1,) * d, np.int64))
    lo = np.full(d, np.inf)
    hi = np.full(d, -np.inf)
    for p in live:
        a, b = _shape_bounds(p)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))) or len(a) != d:
            raise ValueError(f"density piece {p!r} is unbounded or has wrong dimension")
        lo = np.minimum(lo, a)
        hi = np.maximum(hi, b)
    box = BoundedBox(tuple(np.floor(lo / delta - 0.5).astype(int)),
                     tuple(np.ceil(hi / delta + 0.5).astype(int)))
    sub = subsamples or (32 if d <= 2 else 12)
    acc = np.zeros(box.shape)
    for p in live:
        if isinstance(p, Ball):
            acc += p.weight * _ball_cell_fraction(p, box, delta, sub)
        else:
            acc += p.weight * _cuboid_cell_fraction(p, box, delta)
    return ScalarField(box, np.rint(acc).astype(np.int64))
