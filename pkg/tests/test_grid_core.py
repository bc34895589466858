import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chipfire.grid_core import (
    Ball,
    BoundedBox,
    Cuboid,
    DomainSet,
    OutOfBoxError,
    ScalarField,
    ball_domain,
    discretize_density,
    neighbors,
    shape_metrics,
)


def test_neighbors_canonical_order():
    assert neighbors((0, 0)) == [(1, 0), (-1, 0), (0, 1), (0, -1)]


def test_neighbors_3d():
    nb = neighbors((1, 2, 3))
    assert len(nb) == 6
    for q in nb:
        diff = np.abs(np.subtract(q, (1, 2, 3)))
        assert diff.sum() == 1


def test_neighbors_box_edge_rejected():
    box = BoundedBox((0, 0), (4, 4))
    with pytest.raises(OutOfBoxError):
        neighbors((0, 2), box)
    assert len(neighbors((2, 2), box)) == 4


@given(st.lists(st.integers(-50, 50), min_size=1, max_size=4))
def test_neighbors_involutive(p):
    for q in neighbors(p):
        assert tuple(p) in neighbors(q)


def test_ball_domain_examples():
    assert ball_domain(1, 2).point_set() == {(0, 0)}
    assert ball_domain(1.5, 2).count == 9
    assert ball_domain(0, 3).count == 0


def brute_ball(r, d):
    k = int(math.ceil(r))
    rng = range(-k, k + 1)
    import itertools

    return {p for p in itertools.product(rng, repeat=d) if sum(x * x for x in p) < r * r}


@pytest.mark.parametrize("r,d", [(2.3, 2), (3.0, 2), (2.5, 3), (4.1, 1)])
def test_ball_domain_matches_enumeration(r, d):
    assert ball_domain(r, d).point_set() == brute_ball(r, d)


@settings(max_examples=30)
@given(st.floats(0, 6), st.floats(0, 3))
def test_ball_domain_monotone(r, extra):
    assert ball_domain(r, 2).issubset(ball_domain(r + extra, 2))


def test_shape_metrics_examples():
    sm = shape_metrics(ball_domain(1.5, 2))
    assert sm.volume == 9
    assert sm.outradius == pytest.approx(math.sqrt(2))
    one = shape_metrics(DomainSet.from_points([(0, 0)]))
    assert one.inradius == 1 and one.outradius == 0
    assert shape_metrics(DomainSet.empty(2)).volume == 0


@pytest.mark.parametrize("r", [3.3, 7.0, 10.5])
def test_shape_metrics_sandwich(r):
    D = ball_domain(r, 2).union(DomainSet.from_points([(int(r) + 2, 0)]))
    sm = shape_metrics(D)
    assert ball_domain(sm.inradius - 1e-9, 2).issubset(D)
    assert D.issubset(ball_domain(sm.outradius + 1e-9, 2))


def test_discretize_unit_disk():
    f = discretize_density([Ball((0.0, 0.0), 1.0)], 1.0)
    assert f[(0, 0)] == 1
    assert f[(3, 0)] == 0
    # the cell around (1, 0) is about 0.4 covered, rounding to 0
    assert f[(1, 0)] == 0


def test_discretize_zero_and_cell():
    z = discretize_density([Ball((0.0, 0.0), 1.0, weight=0.0)], 0.5)
    assert z.total() == 0
    f = discretize_density([Cuboid((-0.5, -0.5), (0.5, 0.5))], 1.0)
    assert f[(0, 0)] == 1
    assert f.total() == 1


def test_discretize_rejects_unbounded():
    with pytest.raises(ValueError):
        discretize_density([Cuboid((-np.inf, 0.0), (0.0, 1.0))], 0.5)


@pytest.mark.parametrize("delta", [0.25, 0.1])
def test_discretize_mass_error_bounded_by_boundary(delta):
    f = discretize_density([Ball((0.1, -0.2), 1.7)], delta)
    mass = f.total() * delta ** 2
    exact = math.pi * 1.7 ** 2
    cells = DomainSet(f.box, f.values > 0).boundary_cells().count
    assert abs(mass - exact) <= (cells + 8) * delta ** 2


def test_domain_json_roundtrip():
    D = ball_domain(3.2, 2)
    assert DomainSet.from_json(D.to_json()) == D


def test_scalar_field_read_only():
    f = ScalarField(BoundedBox((0,), (2,)), np.arange(3))
    with pytest.raises(ValueError):
        f.values[0] = 7
    assert f[(5,)] == 0
