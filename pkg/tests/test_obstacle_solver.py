import itertools

import numpy as np
import pytest

from chipfire.divisible_sandpile import point_mass, stabilize
from chipfire.grid_core import BoundedBox, DomainSet, ScalarField
from chipfire.obstacle_solver import (
    BoxTooSmallError,
    SingularSystemError,
    harmonic_measure,
    harmonic_solve,
    relax_ball_check,
    solve_obstacle,
)


def test_no_excess_zero_odometer():
    sigma = ScalarField(BoundedBox((-1, -1), (1, 1)), np.full((3, 3), 0.7))
    sol = solve_obstacle(sigma, box=BoundedBox((-6, -6), (6, 6)))
    assert np.all(sol.odometer.values == 0)


def test_point_five():
    sol = solve_obstacle(point_mass(5, 2))
    u = sol.odometer
    assert u[(0, 0)] == pytest.approx(4, abs=1e-8)
    assert np.count_nonzero(u.values > 1e-8) == 1


@pytest.mark.parametrize("method", ["pgs", "active_set"])
def test_agrees_with_divisible_400(method):
    sol = solve_obstacle(point_mass(400, 2), method=method)
    state, _ = stabilize(point_mass(400, 2), tol=1e-10)
    u = state.odometer.on_box(sol.odometer.box)
    assert np.abs(u - sol.odometer.values).max() <= 1e-6 * 400


def test_box_too_small():
    with pytest.raises(BoxTooSmallError):
        solve_obstacle(point_mass(400, 2), box=BoundedBox((-5, -5), (5, 5)))


def test_harmonic_constant_and_linear():
    D = DomainSet.from_points(list(itertools.product(range(-3, 4), range(-2, 3))))
    const = harmonic_solve(D, lambda X: np.full(len(X), 2.5))
    assert np.allclose([const[tuple(p)] for p in D.points()], 2.5)
    lin = harmonic_solve(D, lambda X: X[:, 0].astype(float))
    for p in D.points():
        assert lin[tuple(p)] == pytest.approx(p[0])


def test_harmonic_3x3_dense_oracle():
    rng = np.random.default_rng(11)
    vals = {}

    def bnd(X):
        return np.array([vals.setdefault(tuple(x), rng.normal()) for x in X])

    D = DomainSet.from_points(list(itertools.product(range(3), range(3))))
    sol = harmonic_solve(D, bnd)
    # dense oracle: 9x9 system 4u(x) - sum u(y) = sum boundary(y)
    idx = {p: i for i, p in enumerate(itertools.product(range(3), range(3)))}
    A = np.zeros((9, 9))
    b = np.zeros(9)
    for p, i in idx.items():
        A[i, i] = 4
        for q in [(p[0] + 1, p[1]), (p[0] - 1, p[1]), (p[0], p[1] + 1), (p[0], p[1] - 1)]:
            if q in idx:
                A[i, idx[q]] -= 1
            else:
                b[i] += vals[q]
    x = np.linalg.solve(A, b)
    for p, i in idx.items():
        assert sol[p] == pytest.approx(x[i])


def test_harmonic_empty_domain():
    with pytest.raises(ValueError):
        harmonic_solve(DomainSet.empty(2), lambda X: np.zeros(len(X)))


def test_harmonic_measure_path():
    adj = {0: [1], 1: [0, 2], 2: [1, 3], 3: [2]}
    H = harmonic_measure(adj, absorbing=[0, 3], targets=[3])
    assert H[1] == pytest.approx(1 / 3) and H[2] == pytest.approx(2 / 3)


def test_harmonic_measure_disconnected():
    adj = {0: [1], 1: [0], 2: [3], 3: [2]}
    with pytest.raises(SingularSystemError):
        harmonic_measure(adj, absorbing=[0], targets=[0])


def test_relax_ball_checks():
    assert relax_ball_check(2, 10, 2)
    assert relax_ball_check(1.01, 8, 2)


@pytest.mark.slow
def test_relax_ball_3d():
    assert relax_ball_check(8, 6, 3)
