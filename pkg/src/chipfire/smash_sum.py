"""Smash sums across models: additivity, associativity, quadrature and scaling.

Points of a domain built at spacing ``delta`` are integer indices ``k``
standing for the physical position ``k * delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .divisible_sandpile import stabilize
from .grid_core import Ball, DomainSet, ScalarField, discretize_density
from .internal_dla import df_smash, idla_aggregate
from .rotor_router import RotorConfig, rotor_smash_full, stabilize_rotors

MODELS = ("divisible", "rotor", "idla")


@dataclass(frozen=True)
class MultiSourceSpec:
    centers: tuple[tuple[float, ...], ...]
    volumes: tuple[float, ...]
    delta: float

    def __post_init__(self):
        if len(self.centers) != len(self.volumes) or not self.centers:
            raise ValueError("need equally many centers and volumes")
        if self.delta <= 0 or any(v <= 0 for v in self.volumes):
            raise ValueError("spacing and volumes must be positive")
        object.__setattr__(self, "centers", tuple(tuple(map(float, c)) for c in self.centers))
        object.__setattr__(self, "volumes", tuple(map(float, self.volumes)))

    @property
    def dim(self) -> int:
        return len(self.centers[0])

    def chip_field(self) -> ScalarField:
        """``floor(delta^-d lambda_i)`` particles at the lattice point nearest each center."""
        d = self.dim
        pts = {}
        for c, lam in zip(self.centers, self.volumes):
            k = tuple(int(x) for x in np.rint(np.array(c) / self.delta))
            pts[k] = pts.get(k, 0) + int(math.floor(lam / self.delta ** d))
        if len(pts) != len(self.centers):
            raise ValueError("centers collide on the lattice")
        return ScalarField.from_points(pts, d=d, dtype=np.int64)


@dataclass
class ConvergenceReport:
    deltas: list[float]
    domains: list[DomainSet]
    margins: list[float] = field(default_factory=list)


def divisible_domain(sigma: ScalarField) -> DomainSet:
    _, report = stabilize(ScalarField(sigma.box, sigma.values.astype(np.float64)))
    return report.domain


def divisible_smash(*sets: DomainSet) -> DomainSet:
    """Divisible-sandpile smash sum of any number of sets."""
    box = sets[0].box
    for s in sets[1:]:
        box = box.union(s.box)
    sigma = sum(s.on_box(box).astype(np.float64) for s in sets)
    return divisible_domain(ScalarField(box, sigma))


def multi_source_domain(spec: MultiSourceSpec, model: str = "divisible", seed: int = 0) -> DomainSet:
    chips = spec.chip_field()
    if model == "divisible":
        return divisible_domain(chips)
    if model == "rotor":
        return stabilize_rotors(chips).occupied
    if model == "idla":
        return idla_aggregate(chips, seed).occupied
    raise ValueError(f"unknown model {model!r}")


# ---------------------------------------------------------------- quadrature

HARMONIC_IDS = ("1", "x1", "x2", "x3", "x1x2", "x1x3", "x2x3", "x1^2-x2^2")


def _harmonic(h: str):
    if h == "1":
        return lambda X: np.ones(len(X))
    if h in ("x1", "x2", "x3"):
        i = int(h[1]) - 1
        return lambda X: X[:, i]
    if len(h) == 4 and h[0] == "x" and h[2] == "x" and h[1] != h[3]:
        i, j = int(h[1]) - 1, int(h[3]) - 1
        return lambda X: X[:, i] * X[:, j]
    if h == "x1^2-x2^2":
        return lambda X: X[:, 0] ** 2 - X[:, 1] ** 2
    raise ValueError(f"{h!r} is not one of the supported harmonic polynomials")


def quadrature_residual(domain: DomainSet, spec: MultiSourceSpec, h: str) -> float:
    """``|delta^d sum_{x in D} h(x) - sum_i lambda_i h(x_i)|``."""
    f = _harmonic(h)
    d = spec.dim
    X = domain.points().astype(float) * spec.delta
    need = 0 if h == "1" else max(int(c) for c in h.replace("^2", "") if c.isdigit())
    if need > d:
        raise ValueError("polynomial uses a coordinate beyond the dimension")
    lattice = spec.delta ** d * float(f(X).sum())
    sources = float(np.dot(spec.volumes, f(np.array(spec.centers))))
    return abs(lattice - sources)


# ---------------------------------------------------------------- two-disk quartic


def quartic(x1, x2, r: float):
    s = x1 ** 2 + x2 ** 2
    return s ** 2 - 2 * r * r * s - 2 * (x1 ** 2 - x2 ** 2)


def quartic_gradient(x1, x2, r: float):
    s = x1 ** 2 + x2 ** 2
    return 4 * x1 * s - 4 * r * r * x1 - 4 * x1, 4 * x2 * s - 4 * r * r * x2 + 4 * x2


def two_disk_domain(r: float, delta: float, center: float = 1.0) -> DomainSet:
    """Divisible smash sum of disks of radius ``r`` centered at ``(+-center, 0)``."""
    sigma = discretize_density([Ball((center, 0.0), r), Ball((-center, 0.0), r)], delta)
    return divisible_domain(sigma)


@dataclass(frozen=True)
class QuarticStats:
    max: float
    median: float
    cells: int
    axis_point: float | None


def quartic_residual(domain: DomainSet, r: float, delta: float) -> QuarticStats:
    """Residual of the quartic at boundary-cell centers, normalized by ``|grad P|``."""
    cells = domain.boundary_cells().points()
    if len(cells) == 0:
        raise ValueError("domain has no boundary cells")
    X = cells.astype(float) * delta
    P = quartic(X[:, 0], X[:, 1], r)
    g1, g2 = quartic_gradient(X[:, 0], X[:, 1], r)
    grad = np.hypot(g1, g2)
    ok = grad > 0
    norm = np.abs(P[ok]) / grad[ok]
    on_axis = domain.points()
    on_axis = on_axis[on_axis[:, 1] == 0]
    axis_point = float(on_axis[:, 0].max() * delta) if len(on_axis) else None
    return QuarticStats(float(norm.max()), float(np.median(norm)), int(ok.sum()), axis_point)


# ---------------------------------------------------------------- associativity


def associativity_check(A: DomainSet, B: DomainSet, C: DomainSet, model: str = "divisible",
                        initial: RotorConfig | None = None) -> bool:
    """Compare ``(A+B)+C``, ``A+(B+C)`` and, for the divisible model, ``A+B+C`` at once.

    Divisible results may differ only by cells on the boundary of the
    three-way sum; rotor results must have identical cardinality.
    """
    if model == "divisible":
        left = divisible_smash(divisible_smash(A, B), C)
        right = divisible_smash(A, divisible_smash(B, C))
        joint = divisible_smash(A, B, C)
        slack = joint.boundary_cells().count
        return (left.symmetric_difference_count(joint) <= slack
                and right.symmetric_difference_count(joint) <= slack
                and left.symmetric_difference_count(right) <= slack)
    if model == "rotor":
        ab = rotor_smash_full(A, B, initial)
        left = rotor_smash_full(ab.occupied, C, ab.rotors)
        bc = rotor_smash_full(B, C, initial)
        right = rotor_smash_full(A, bc.occupied, bc.rotors)
        want = A.count + B.count + C.count
        return left.occupied.count == right.occupied.count == want
    if model == "idla":
        left = df_smash(df_smash(A, B, 0), C, 1)
        right = df_smash(A, df_smash(B, C, 2), 3)
        return left.count == right.count == A.count + B.count + C.count
    raise ValueError(f"unknown model {model!r}")


def volume_defect(result: DomainSet, *parts: DomainSet) -> tuple[int, int]:
    """``|#result - sum #parts|`` and the boundary-cell count of ``result``."""
    return abs(result.count - sum(p.count for p in parts)), result.boundary_cells().count


# ---------------------------------------------------------------- resolution sweep


def _depth(mask: np.ndarray) -> np.ndarray:
    """Lattice distance from each member cell to the nearest non-member."""
    padded = np.pad(mask, 1)
    dist = ndimage.distance_transform_edt(padded)
    return dist[tuple(slice(1, -1) for _ in range(mask.ndim))]


def _uncovered_depth(inner: DomainSet, outer: DomainSet, ratio: float) -> float:
    """Deepest (in ``inner`` units) member of ``inner`` whose image misses ``outer``.

    ``ratio`` is ``delta_inner / delta_outer``; images are nearest lattice points.
    """
    pts = inner.points()
    if len(pts) == 0:
        return 0.0
    img = np.floor(pts * ratio + 0.5).astype(np.int64)
    lo = np.array(outer.box.lo)
    hi = np.array(outer.box.hi)
    inside = np.all((img >= lo) & (img <= hi), axis=1)
    hit = np.zeros(len(pts), bool)
    hit[inside] = outer.mask[tuple((img[inside] - lo).T)]
    if hit.all():
        return 0.0
    depth = _depth(inner.mask)[tuple((pts - np.array(inner.box.lo)).T)]
    return float(depth[~hit].max())


def resolution_convergence(pieces: Sequence, deltas: Sequence[float]) -> ConvergenceReport:
    """Divisible domains of a density at several spacings and their mutual margins.

    For each consecutive pair the margin is the smallest ``eps`` (physical
    units) such that the ``eps``-interior of either domain is covered by the
    other after rescaling.
    """
    deltas = sorted(deltas, reverse=True)
    if len(deltas) < 2:
        raise ValueError("need at least two resolutions")
    doms = [divisible_domain(discretize_density(pieces, dl)) for dl in deltas]
    report = ConvergenceReport(list(deltas), doms)
    for (dc, Dc), (df, Df) in zip(zip(deltas, doms), zip(deltas[1:], doms[1:])):
        fine_in = _uncovered_depth(Df, Dc, df / dc) * df
        coarse_in = _uncovered_depth(Dc, Df, dc / df) * dc
        report.margins.append(max(fine_in, coarse_in))
    return report
