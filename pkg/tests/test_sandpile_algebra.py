import itertools
import math
import random
from fractions import Fraction

import numpy as np
import pytest

from chipfire.sandpile_algebra import (
    DisconnectedGraphError,
    NotRecurrentError,
    SingularMatrixError,
    SinkedGraph,
    add,
    ball_graph,
    group_order_of_root,
    identity_element,
    invariant_factors_from_diagonal,
    is_recurrent_burning,
    is_recurrent_critical,
    is_stable,
    level_profile,
    recurrent_rotor_states,
    reduced_laplacian,
    regular_tree,
    rotor_group_action,
    rotor_orbit,
    rotor_root_order,
    sandpile_group,
    smith_normal_form,
    stabilize_graph,
    sylow_rank_check,
    sylow_rank_formula,
    t_p,
    tree_count,
    tree_count_closed_form,
    tree_group_closed_form,
)

# multiples k*r^ for k = 1..15 on the ternary tree of height 4, levels listed from the root
ROOT_MULTIPLES_T4 = [
    (2, 0, 2), (0, 1, 2), (1, 1, 2), (2, 1, 2), (0, 2, 2), (1, 2, 2), (2, 2, 2), (2, 2, 0),
    (2, 0, 1), (0, 1, 1), (1, 1, 1), (2, 1, 1), (0, 2, 1), (1, 2, 1), (2, 2, 1),
]


# ---------------------------------------------------------------- oracles


def exact_det(M):
    A = [[Fraction(x) for x in row] for row in M]
    n = len(A)
    det = Fraction(1)
    for i in range(n):
        p = next((r for r in range(i, n) if A[r][i] != 0), None)
        if p is None:
            return 0
        if p != i:
            A[i], A[p] = A[p], A[i]
            det = -det
        det *= A[i][i]
        for r in range(i + 1, n):
            f = A[r][i] / A[i][i]
            A[r] = [a - f * b for a, b in zip(A[r], A[i])]
    return int(det)


def determinantal_factors(M):
    """Invariant factors from gcds of k x k minors: d_k = D_k / D_{k-1}."""
    n = len(M)
    D = [1]
    for k in range(1, n + 1):
        g = 0
        for rows in itertools.combinations(range(n), k):
            for cols in itertools.combinations(range(n), k):
                g = math.gcd(g, exact_det([[M[r][c] for c in cols] for r in rows]))
        D.append(g)
    return tuple(f for f in (D[k] // D[k - 1] for k in range(1, n + 1)) if f != 1)


def scramble(diag, rng, steps=30):
    n = len(diag)
    M = [[diag[i] if i == j else 0 for j in range(n)] for i in range(n)]
    for _ in range(steps):
        i, j = rng.sample(range(n), 2)
        c = rng.randint(-3, 3)
        if rng.random() < 0.5:
            M[i] = [a + c * b for a, b in zip(M[i], M[j])]
        else:
            for row in M:
                row[i] += c * row[j]
    return M


def single_vertex(k):
    return SinkedGraph.from_edges(2, 1, [(0, 1)] * k)


# ---------------------------------------------------------------- Laplacian and SNF


def test_reduced_laplacian_examples():
    assert reduced_laplacian(single_vertex(4)) == [[4]]
    assert reduced_laplacian(regular_tree(2, 3)[0]) == [[3]]
    path = SinkedGraph.from_edges(3, 2, [(0, 1), (1, 2), (0, 2)])
    assert reduced_laplacian(path) == [[2, -1], [-1, 2]]


def test_disconnected_rejected():
    with pytest.raises(DisconnectedGraphError):
        SinkedGraph.from_edges(3, 2, [(0, 1)])


def test_snf_examples():
    assert smith_normal_form([[3]]).factors == (3,)
    T3 = sandpile_group(regular_tree(3, 3)[0])
    assert T3.factors == (21,)
    assert T3.elementary_divisors() == [3, 7]
    assert T3.order == 21


def test_snf_scrambled():
    M = scramble([2, 4], random.Random(0))
    assert smith_normal_form(M).factors == (2, 4)
    M = scramble([2, 4, 1, 6], random.Random(1))
    assert smith_normal_form(M).factors == determinantal_factors(M) == (2, 2, 12)


@pytest.mark.parametrize("seed", range(8))
def test_snf_random_against_minors(seed):
    rng = random.Random(seed)
    n = rng.randint(2, 4)
    while True:
        M = [[rng.randint(-6, 6) for _ in range(n)] for _ in range(n)]
        if exact_det(M):
            break
    assert smith_normal_form(M).factors == determinantal_factors(M)


def test_snf_singular():
    with pytest.raises(SingularMatrixError):
        smith_normal_form([[1, 2], [2, 4]])


def test_invariant_factors_from_diagonal():
    assert invariant_factors_from_diagonal([4, 6]) == (2, 12)
    assert invariant_factors_from_diagonal([1, 3, 7]) == (21,)


def test_z40_example():
    G = SinkedGraph.from_edges(4, 3, [(0, 1), (0, 2), (0, 3)] + [(1, 3)] * 3 + [(2, 3)] * 3)
    assert sandpile_group(G).factors == (40,)


# ---------------------------------------------------------------- tree counts


def test_tree_counts():
    assert [tree_count(n, 3) for n in (2, 3, 4)] == [3, 21, 945]
    assert tree_count(4, 3) == 15 * 3 ** 2 * 7
    for n in range(1, 7):
        for d in (3, 4, 5):
            assert tree_count(n, d) == tree_count_closed_form(n, d)


@pytest.mark.parametrize("n,d", [(3, 3), (4, 3), (5, 3), (3, 4), (4, 4), (3, 5)])
def test_tree_count_matches_determinant(n, d):
    G, _ = regular_tree(n, d)
    assert exact_det(reduced_laplacian(G)) == tree_count(n, d)
    assert sandpile_group(G) == tree_group_closed_form(n, d)


# ---------------------------------------------------------------- chip dynamics


def test_stabilize_basics():
    G, _ = regular_tree(3, 3)
    c = [2, 1, 0]
    assert stabilize_graph(G, c) == c
    out, fires = stabilize_graph(G, [3, 0, 0], return_firings=True)
    assert fires == [1, 0, 0] and out == [0, 1, 1]


def test_stabilize_order_independent():
    G, _ = regular_tree(5, 3)
    rng = random.Random(3)
    for _ in range(10):
        c = [rng.randint(0, 9) for _ in G.vertices]
        ref = stabilize_graph(G, c)
        assert stabilize_graph(G, c, order_seed=rng.randrange(10**6)) == ref
        assert is_stable(G, ref)


def test_burning_examples():
    G, _ = regular_tree(3, 3)
    assert is_recurrent_burning(G, [2, 2, 2])
    assert not is_recurrent_burning(G, [0, 0, 0])
    assert not is_recurrent_critical(G, [0, 0, 0])
    with pytest.raises(ValueError):
        is_recurrent_burning(G, [3, 0, 0])


def test_burning_matches_critical_T3():
    G, _ = regular_tree(3, 3)
    count = 0
    for c in itertools.product(range(3), repeat=3):
        b = is_recurrent_burning(G, c)
        assert b == is_recurrent_critical(G, c)
        count += b
    assert count == 21


def test_critical_rejects_non_tree():
    G = SinkedGraph.from_edges(4, 3, [(0, 1), (1, 2), (2, 0), (0, 3)])
    with pytest.raises(ValueError):
        is_recurrent_critical(G, [0, 0, 0])


@pytest.mark.parametrize("k", [1, 2, 5])
def test_identity_single_vertex(k):
    G = single_vertex(k)
    idem = [x for x in range(k) if add(G, [x], [x]) == [x]]
    assert idem == [0]
    assert identity_element(G) == [0]


def test_identity_T3():
    G, _ = regular_tree(4, 3)
    e = identity_element(G)
    assert is_recurrent_burning(G, e)
    assert add(G, e, e) == e
    rng = random.Random(9)
    recs = []
    while len(recs) < 10:
        c = [rng.randrange(int(x)) for x in G.degree]
        if is_recurrent_burning(G, c):
            recs.append(c)
    for c in recs:
        assert add(G, c, e) == c


def test_identity_symmetric():
    G, words = regular_tree(4, 3)
    e = dict(zip(words, identity_element(G)))
    swap = {w: (tuple(3 - x if i == 0 else x for i, x in enumerate(w))) for w in words}
    assert all(e[w] == e[swap[w]] for w in words)


def test_root_order():
    assert group_order_of_root(2, 3) == 3
    assert group_order_of_root(3, 4) == 13
    k, mults = group_order_of_root(4, 3, return_multiples=True)
    assert k == 15
    assert [level_profile(4, 3, m) for m in mults] == ROOT_MULTIPLES_T4


# ---------------------------------------------------------------- rotor group


def test_rotor_trivial_graph():
    G = single_vertex(1)
    assert rotor_group_action(G, [0], 0) == [0]


def test_rotor_cyclic_state_rejected():
    G = SinkedGraph.from_edges(3, 2, [(0, 1), (1, 2), (0, 2)])
    # vertex 0 cycle [1, 2], vertex 1 cycle [0, 2]; pointing at each other is a cycle
    with pytest.raises(NotRecurrentError):
        rotor_group_action(G, [0, 0], 0)


def test_rotor_root_order_T3():
    assert rotor_root_order(3, 3) == 7


def test_rotor_commute():
    G, _ = regular_tree(3, 3)
    states = recurrent_rotor_states(G)
    rng = random.Random(4)
    for s in rng.sample(states, 10):
        for x, y in itertools.combinations(G.vertices, 2):
            a = rotor_group_action(G, rotor_group_action(G, s, x), y)
            b = rotor_group_action(G, rotor_group_action(G, s, y), x)
            assert a == b


@pytest.mark.parametrize("G", [
    regular_tree(3, 3)[0],
    SinkedGraph.from_edges(4, 3, [(0, 1), (1, 2), (0, 2), (0, 3), (2, 3)]),
    SinkedGraph.from_edges(3, 2, [(0, 1), (0, 1), (1, 2), (0, 2)]),
])
def test_rotor_transitive_and_counts(G):
    states = recurrent_rotor_states(G)
    assert len(states) == sandpile_group(G).order
    assert rotor_orbit(G, states[0]) == set(states)


# ---------------------------------------------------------------- Sylow ranks


def test_t_p():
    assert t_p(7, 3) == 3
    assert t_p(5, 3) == 4
    assert t_p(3, 5) == 3
    with pytest.raises(ValueError):
        t_p(3, 4)


@pytest.mark.parametrize("n,d,p", [(2, 3, 7), (1, 3, 5), (2, 3, 5), (2, 4, 13), (3, 3, 7)])
def test_sylow_examples(n, d, p):
    got, want = sylow_rank_check(n, d, p)
    assert got == want


def test_sylow_plus_branch_used():
    # n + 1 divisible by t_7 = 3 for d = 3, n = 2
    assert sylow_rank_formula(2, 3, 7) == 3 * 1 * 0 + 2


def test_sylow_errors():
    with pytest.raises(ValueError):
        sylow_rank_check(2, 3, 2)
    with pytest.raises(ValueError):
        sylow_rank_check(2, 3, 9)


def test_ball_graph_shape():
    G = ball_graph(2, 3)
    assert G.size == 11
    assert int(G.sink_edges.sum()) == 6 * 2


def test_json_roundtrip():
    G, _ = regular_tree(4, 3)
    back = SinkedGraph.from_json(G.to_json())
    assert np.array_equal(back.adj, G.adj) and back.sink == G.sink
