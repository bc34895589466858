import math

import numpy as np
import pytest

from chipfire.grid_core import BoundedBox, DomainSet, ScalarField, direction_vectors, shape_metrics
from chipfire.rotor_router import (
    RotorConfig,
    aggregate,
    graph_rotor_walks,
    harnessed_walk_bound_check,
    compass_ordering,
    rotor_smash,
    rotor_step,
    stabilize_rotors,
)


def naive_aggregate(n, d=2, ordering=None, start=0, rotors=None):
    """One particle at a time with a dict of rotors; rotate, then step."""
    order = [tuple(v) for v in (direction_vectors(d) if ordering is None else ordering)]
    rot = dict(rotors or {})
    occ = set()
    for _ in range(n):
        p = (0,) * d
        while p in occ:
            rot[p] = (rot.get(p, start) + 1) % len(order)
            p = tuple(a + b for a, b in zip(p, order[rot[p]]))
        occ.add(p)
    return occ, rot


def test_rotor_step_wraps():
    r = RotorConfig.uniform(2, 3)
    r2, q = rotor_step(r, (0, 0))
    assert r2[(0, 0)] == 0
    assert q == (1, 0)
    assert r[(0, 0)] == 3


def test_compass_a3():
    cfg = RotorConfig.uniform(2, 0, compass_ordering())
    assert aggregate(1, cfg).occupied.point_set() == {(0, 0)}
    assert aggregate(3, cfg).occupied.point_set() == {(0, 0), (1, 0), (0, -1)}


@pytest.mark.parametrize("method", ["walk", "bulk", "predict"])
@pytest.mark.parametrize("n,d,start", [(200, 2, 0), (357, 2, 2), (150, 3, 1)])
def test_methods_match_naive(method, n, d, start):
    occ, rot = naive_aggregate(n, d, start=start)
    agg = aggregate(n, RotorConfig.uniform(d, start), method=method)
    assert agg.occupied.point_set() == occ
    for p, k in rot.items():
        assert agg.rotors[p] == k


def test_random_initial_rotors():
    rng = np.random.default_rng(3)
    box = BoundedBox((-8, -8), (8, 8))
    vals = rng.integers(0, 4, box.shape).astype(np.uint8)
    cfg = RotorConfig(ScalarField(box, vals), direction_vectors(2))
    init = {tuple(int(a) for a in p + np.array(box.lo)): int(vals[tuple(p)]) for p in np.argwhere(vals >= 0)}
    occ, _ = naive_aggregate(150, rotors=init)
    for method in ("walk", "bulk"):
        assert aggregate(150, cfg, method=method).occupied.point_set() == occ


def test_deterministic():
    a = aggregate(5000)
    b = aggregate(5000)
    assert a.occupied == b.occupied
    assert np.array_equal(a.rotors.on_box(a.occupied.box), b.rotors.on_box(a.occupied.box))


def test_full_rotation_neutrality():
    # 2d particles from an occupied site with empty neighbours never return
    occ = DomainSet.from_points([(0, 0)])
    chips = ScalarField.from_points({(0, 0): 4}, d=2, dtype=np.int64)
    res = stabilize_rotors(chips, occupied=occ, method="walk")
    assert res.rotors[(0, 0)] == 0


def test_json_roundtrip():
    agg = aggregate(100)
    back = RotorConfig.from_json(agg.rotors.to_json())
    box = agg.occupied.box
    assert np.array_equal(back.on_box(box), agg.rotors.on_box(box))


def test_ball_sandwich_1e4():
    n = 10_000
    sm = shape_metrics(aggregate(n).occupied)
    r = math.sqrt(n / math.pi)
    assert r - sm.inradius <= math.log(r)
    assert sm.outradius - r <= math.sqrt(r) * math.log(r)


def _square(x0, y0, s):
    return DomainSet.from_points([(x, y) for x in range(x0, x0 + s) for y in range(y0, y0 + s)])


def test_smash_trivial_cases():
    A = _square(0, 0, 4)
    assert rotor_smash(A, DomainSet.empty(2)) == A
    B = _square(30, 30, 3)
    assert rotor_smash(A, B) == A.union(B)


def test_smash_squares_cardinality_and_shape():
    from chipfire.smash_sum import divisible_smash

    A, B = _square(0, 0, 50), _square(25, 25, 50)
    R = rotor_smash(A, B)
    assert R.count == A.count + B.count
    D = divisible_smash(A, B)
    assert R.symmetric_difference_count(D) <= 0.05 * R.count


def test_graph_walks_single_edge():
    adj = {"s": ["z"], "z": ["s"]}
    chk = harnessed_walk_bound_check(adj, ["s"], ["z"], ["z"])
    assert chk.rotor_hits == 1 and chk.expected_hits == 1 and chk.bound >= 0


def holroyd_propp_bound(adj, Z, Y):
    """Independent harmonic measure by dense solve, then the edge-gradient sum."""
    free = [v for v in adj if v not in Z]
    idx = {v: i for i, v in enumerate(free)}
    A = np.eye(len(free))
    b = np.zeros(len(free))
    for v in free:
        for w in adj[v]:
            if w in idx:
                A[idx[v], idx[w]] -= 1 / len(adj[v])
            elif w in Y:
                b[idx[v]] += 1 / len(adj[v])
    x = np.linalg.solve(A, b)
    H = {v: float(v in Y) for v in Z}
    H.update({v: x[idx[v]] for v in free})
    return H, sum(abs(H[u] - H[v]) for u in adj for v in adj[u])


def test_path_length_three():
    adj = {0: [1], 1: [0, 2], 2: [1, 3], 3: [2]}
    chk = harnessed_walk_bound_check(adj, [1, 1, 1, 1], [0, 3], [3])
    H, bound = holroyd_propp_bound(adj, {0, 3}, {3})
    assert chk.expected_hits == pytest.approx(4 * H[1])
    assert chk.bound == pytest.approx(bound)
    assert chk.discrepancy <= bound


def test_grid_patch():
    adj = {}
    for x in range(5):
        for y in range(5):
            adj[(x, y)] = [(x + a, y + b) for a, b in ((1, 0), (-1, 0), (0, 1), (0, -1))
                           if 0 <= x + a < 5 and 0 <= y + b < 5]
    Z = {p for p in adj if p[0] in (0, 4)}
    Y = {p for p in Z if p[0] == 4}
    rng = np.random.default_rng(2)
    rot = {p: int(rng.integers(len(adj[p]))) for p in adj}
    chk = harnessed_walk_bound_check(adj, [(2, 2)] * 20, Z, Y, rot)
    _, bound = holroyd_propp_bound(adj, Z, Y)
    assert chk.bound == pytest.approx(bound)
    assert chk.discrepancy <= bound


def test_graph_walks_rotate_first():
    adj = {0: [1, 2], 1: [0], 2: [0]}
    ends, rot = graph_rotor_walks(adj, [0, 0, 0], [1, 2])
    assert ends == [2, 1, 2]
    assert rot[0] == 1
