"""Sandpile groups of sinked multigraphs, with regular trees as the worked case.

A :class:`SinkedGraph` carries an integer adjacency matrix over all vertices,
the sink included. Chip configurations are integer vectors over the non-sink
vertices in increasing vertex order.
"""

from __future__ import annotations

import json
import math
import random
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid_core import ChipfireError


class DisconnectedGraphError(ChipfireError):
    """Some vertex cannot reach the sink."""


class SingularMatrixError(ChipfireError):
    """Smith normal form requested for a singular matrix."""


class NotRecurrentError(ChipfireError):
    """A rotor state contains a cycle, so it is not an oriented spanning tree."""


@dataclass(frozen=True)
class SinkedGraph:
    """Multigraph with a distinguished sink; ``adj[u, v]`` counts edges ``u -> v``."""

    adj: np.ndarray
    sink: int

    def __post_init__(self):
        a = np.array(self.adj, dtype=np.int64, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be square")
        if np.any(a < 0) or np.any(np.diag(a) != 0):
            raise ValueError("edge counts must be nonnegative without self-loops")
        if not 0 <= self.sink < a.shape[0]:
            raise ValueError("sink out of range")
        a.flags.writeable = False
        object.__setattr__(self, "adj", a)
        self._check_reaches_sink()

    def _check_reaches_sink(self):
        seen = {self.sink}
        todo = [self.sink]
        while todo:
            v = todo.pop()
            for u in np.nonzero(self.adj[:, v])[0]:
                if int(u) not in seen:
                    seen.add(int(u))
                    todo.append(int(u))
        if len(seen) != self.adj.shape[0]:
            raise DisconnectedGraphError("some vertex cannot reach the sink")

    @property
    def size(self) -> int:
        return self.adj.shape[0]

    @property
    def vertices(self) -> list[int]:
        """Non-sink vertices in configuration order."""
        return [v for v in range(self.size) if v != self.sink]

    @property
    def degree(self) -> np.ndarray:
        """Out-degree of each non-sink vertex."""
        return self.adj[self.vertices].sum(axis=1)

    @property
    def sink_edges(self) -> np.ndarray:
        return self.adj[self.vertices, self.sink]

    @property
    def symmetric(self) -> bool:
        return bool(np.array_equal(self.adj, self.adj.T))

    @classmethod
    def from_edges(cls, n: int, sink: int, edges: Sequence[tuple[int, int]], directed: bool = False):
        a = np.zeros((n, n), np.int64)
        for u, v in edges:
            a[u, v] += 1
            if not directed:
                a[v, u] += 1
        return cls(a, sink)

    @classmethod
    def from_json(cls, text: str) -> "SinkedGraph":
        obj = json.loads(text)
        return cls.from_edges(obj["vertices"], obj["sink"], [tuple(e) for e in obj["edges"]],
                              obj.get("directed", False))

    def to_json(self) -> str:
        edges = []
        directed = not self.symmetric
        for u in range(self.size):
            for v in range(self.size):
                if directed or u < v:
                    edges.extend([[u, v]] * int(self.adj[u, v]))
        return json.dumps({"vertices": self.size, "sink": self.sink, "edges": edges,
                           "directed": directed}, separators=(",", ":"))


def reduced_laplacian(G: SinkedGraph) -> list[list[int]]:
    """``deg`` on the diagonal minus edge counts, sink row and column removed."""
    vs = G.vertices
    deg = G.degree
    return [[int(deg[i]) if u == v else -int(G.adj[u, v]) for v in vs] for i, u in enumerate(vs)]


# ---------------------------------------------------------------- Smith normal form


@dataclass(frozen=True)
class GroupDecomposition:
    """Invariant factors ``d_1 | d_2 | ...`` (ones dropped)."""

    factors: tuple[int, ...]

    @property
    def order(self) -> int:
        return math.prod(self.factors)

    def elementary_divisors(self) -> list[int]:
        out = []
        for f in self.factors:
            for p, e in _factorize(f).items():
                out.append(p ** e)
        return sorted(out)

    def p_rank(self, p: int) -> int:
        return sum(1 for f in self.factors if f % p == 0)


def _factorize(n: int) -> dict[int, int]:
    out: dict[int, int] = {}
    q = 2
    while q * q <= n:
        while n % q == 0:
            out[q] = out.get(q, 0) + 1
            n //= q
        q += 1 if q == 2 else 2
    if n > 1:
        out[n] = out.get(n, 0) + 1
    return out


def invariant_factors_from_diagonal(diag: Sequence[int]) -> tuple[int, ...]:
    """Turn any diagonal presentation into the divisibility chain."""
    a = [abs(int(x)) for x in diag]
    for i in range(len(a)):
        for j in range(i + 1, len(a)):
            g = math.gcd(a[i], a[j])
            if g == 0:
                continue
            a[i], a[j] = g, a[i] // g * a[j]
    return tuple(x for x in a if x != 1)


def _determinant(M: list[list[int]]) -> int:
    """Exact determinant by fraction-free (Bareiss) elimination."""
    A = [row[:] for row in M]
    n = len(A)
    sign = 1
    prev = 1
    for k in range(n - 1):
        if A[k][k] == 0:
            for i in range(k + 1, n):
                if A[i][k] != 0:
                    A[k], A[i] = A[i], A[k]
                    sign = -sign
                    break
            else:
                return 0
        akk = A[k][k]
        for i in range(k + 1, n):
            aik = A[i][k]
            row_i, row_k = A[i], A[k]
            for j in range(k + 1, n):
                row_i[j] = (row_i[j] * akk - aik * row_k[j]) // prev
        prev = akk
    return sign * A[n - 1][n - 1] if n else 1


def smith_normal_form(M: Sequence[Sequence[int]]) -> GroupDecomposition:
    """Invariant factors of a nonsingular square integer matrix.

    The cokernel is unchanged by adding ``D * Z^n`` with ``D = |det M|``, so
    elimination runs modulo ``D`` with exact integers of bounded size.
    """
    rows = [list(map(int, r)) for r in M]
    n = len(rows)
    if any(len(r) != n for r in rows):
        raise ValueError("matrix must be square")
    if n == 0:
        return GroupDecomposition(())
    D = abs(_determinant(rows))
    if D == 0:
        raise SingularMatrixError("matrix is singular")
    A = np.empty((n, n), dtype=object)
    for i, r in enumerate(rows):
        A[i, :] = [x % D for x in r]
    half = D // 2
    centred = np.frompyfunc(lambda x: x - D if x > half else x, 1, 1)

    diag = []
    for k in range(n):
        sub = A[k:, k:]
        while True:
            col = np.nonzero(sub[:, 0] != 0)[0]
            row = np.nonzero(sub[0, :] != 0)[0]
            if len(col) <= 1 and len(row) <= 1 and sub[0, 0] != 0:
                break
            if len(col) == 0 and len(row) == 0:
                nz = np.argwhere(sub != 0)
                if len(nz) == 0:
                    break
                i, j = nz[0]
                sub[[0, i], :] = sub[[i, 0], :]
                sub[:, [0, j]] = sub[:, [j, 0]]
                continue
            # smallest centred entry of the pivot row and column moves to the corner
            cand = [(abs(centred(sub[i, 0])), i, 0) for i in col]
            cand += [(abs(centred(sub[0, j])), 0, j) for j in row]
            _, i, j = min(cand)
            if i:
                sub[[0, i], :] = sub[[i, 0], :]
            if j:
                sub[:, [0, j]] = sub[:, [j, 0]]
            piv = centred(sub[0, 0])
            qc = centred(sub[1:, 0]) // piv
            sub[1:, :] = (sub[1:, :] - np.outer(qc, sub[0, :])) % D
            qr = centred(sub[0, 1:]) // piv
            sub[:, 1:] = (sub[:, 1:] - np.outer(sub[:, 0], qr)) % D
        # a zero pivot mod D stands for D itself; gcd(0, D) = D
        diag.append(math.gcd(int(sub[0, 0]), D))
    return GroupDecomposition(invariant_factors_from_diagonal(diag))


def sandpile_group(G: SinkedGraph) -> GroupDecomposition:
    return smith_normal_form(reduced_laplacian(G))


# ---------------------------------------------------------------- trees


def regular_tree(n: int, d: int) -> tuple[SinkedGraph, list[tuple[int, ...]]]:
    """``T_n``: leaves of the height-``n`` regular tree wired to the sink, root joined to it.

    Vertices are indexed by words of length ``<= n-2`` over ``1..d-1`` in
    breadth-first order; the sink is the last vertex.
    """
    if n < 2 or d < 3:
        raise ValueError("need n >= 2 and d >= 3")
    words: list[tuple[int, ...]] = [()]
    for k in range(1, n - 1):
        words.extend(w for w in _words(k, d - 1))
    idx = {w: i for i, w in enumerate(words)}
    s = len(words)
    a = np.zeros((s + 1, s + 1), np.int64)
    a[0, s] += 1
    a[s, 0] += 1
    for w, i in idx.items():
        for c in range(1, d):
            j = idx.get(w + (c,), s)
            a[i, j] += 1
            a[j, i] += 1
    return SinkedGraph(a, s), words


def ball_graph(n: int, d: int) -> SinkedGraph:
    """``B_n``: the radius-``n`` ball, each leaf with ``d-1`` sink edges, root not wired."""
    if n < 1 or d < 3:
        raise ValueError("need n >= 1 and d >= 3")
    addrs: list[tuple[int, ...]] = [()]
    frontier: list[tuple[int, ...]] = [()]
    for _ in range(n):
        nxt = []
        for w in frontier:
            kids = range(1, d + 1) if not w else range(1, d)
            nxt.extend(w + (c,) for c in kids)
        addrs.extend(nxt)
        frontier = nxt
    idx = {w: i for i, w in enumerate(addrs)}
    s = len(addrs)
    a = np.zeros((s + 1, s + 1), np.int64)
    for w, i in idx.items():
        if w:
            j = idx[w[:-1]]
            a[i, j] += 1
            a[j, i] += 1
        if len(w) == n:
            a[i, s] += d - 1
            a[s, i] += d - 1
    return SinkedGraph(a, s)


def _words(k: int, a: int):
    if k == 0:
        yield ()
        return
    for w in _words(k - 1, a):
        for c in range(1, a + 1):
            yield w + (c,)


def tree_count(n: int, d: int) -> int:
    """Oriented spanning trees of ``T_n`` rooted at the sink, by the recurrence."""
    if n < 1:
        raise ValueError("n must be positive")
    t = [0, 1, d]
    for k in range(3, n + 1):
        t.append(t[k - 1] ** (d - 2) * (d * t[k - 1] - (d - 1) * t[k - 2] ** (d - 1)))
    return t[n]


def q(k: int, a: int) -> int:
    return sum(a ** i for i in range(k))


def tree_count_closed_form(n: int, d: int) -> int:
    a = d - 1
    if n == 1:
        return 1
    out = q(n, a)
    for k in range(1, n - 1):
        out *= q(k + 1, a) ** (a ** (n - 2 - k) * (a - 1))
    return out


def tree_group_closed_form(n: int, d: int) -> GroupDecomposition:
    """Cyclic decomposition of ``SP(T_n)`` as invariant factors."""
    a = d - 1
    cyclic = [q(n, a)]
    for k in range(2, n):
        cyclic.extend([q(k, a)] * (a ** (n - 1 - k) * (a - 1)))
    return GroupDecomposition(invariant_factors_from_diagonal(sorted(cyclic)))


def root_subgroup_order(n: int, d: int) -> int:
    return ((d - 1) ** n - 1) // (d - 2)


# ---------------------------------------------------------------- chip dynamics


def stabilize_graph(G: SinkedGraph, c: Sequence[int], order_seed: int | None = None,
                    return_firings: bool = False):
    """Topple until stable; ``order_seed`` picks a random legal order instead of FIFO."""
    vs = G.vertices
    pos = {v: i for i, v in enumerate(vs)}
    deg = [int(x) for x in G.degree]
    nbrs = [[(pos[u], int(G.adj[v, u])) for u in np.nonzero(G.adj[v])[0] if u != G.sink] for v in vs]
    chips = [int(x) for x in c]
    if len(chips) != len(vs) or min(chips, default=0) < 0:
        raise ValueError("configuration must be nonnegative on the non-sink vertices")
    fires = [0] * len(vs)
    rng = random.Random(order_seed) if order_seed is not None else None
    unstable = [i for i in range(len(vs)) if chips[i] >= deg[i]]
    queue = deque(unstable)
    pending = set(unstable)
    while queue:
        if rng is not None:
            k = rng.randrange(len(queue))
            queue.rotate(-k)
        i = queue.popleft()
        pending.discard(i)
        m = chips[i] // deg[i]
        if m == 0:
            continue
        if rng is not None:
            m = 1
        chips[i] -= m * deg[i]
        fires[i] += m
        for j, w in nbrs[i]:
            chips[j] += m * w
            if chips[j] >= deg[j] and j not in pending:
                pending.add(j)
                queue.append(j)
        if chips[i] >= deg[i] and i not in pending:
            pending.add(i)
            queue.append(i)
    if return_firings:
        return chips, fires
    return chips


def is_stable(G: SinkedGraph, c: Sequence[int]) -> bool:
    return all(0 <= x < d for x, d in zip(c, G.degree))


def is_recurrent_burning(G: SinkedGraph, c: Sequence[int]) -> bool:
    """Adding the sink-edge vector topples every vertex exactly once."""
    if not is_stable(G, c):
        raise ValueError("configuration is not stable")
    beta = G.sink_edges
    after, fires = stabilize_graph(G, [x + int(b) for x, b in zip(c, beta)], return_firings=True)
    return all(f == 1 for f in fires) and list(after) == list(c)


def _rooted_children(G: SinkedGraph, root: int) -> dict[int, list[int]]:
    vs = G.vertices
    inner = G.adj[np.ix_(vs, vs)]
    if not G.symmetric:
        raise ValueError("critical-vertex test needs an undirected tree")
    if np.any(inner > 1) or int(inner.sum()) // 2 != len(vs) - 1:
        raise ValueError("non-sink part is not a simple tree")
    pos = {v: i for i, v in enumerate(vs)}
    children: dict[int, list[int]] = {v: [] for v in vs}
    seen = {root}
    todo = [root]
    while todo:
        v = todo.pop()
        for j in np.nonzero(inner[pos[v]])[0]:
            u = vs[int(j)]
            if u not in seen:
                seen.add(u)
                children[v].append(u)
                todo.append(u)
    if len(seen) != len(vs):
        raise ValueError("non-sink part is not connected")
    return children


def is_recurrent_critical(G: SinkedGraph, c: Sequence[int], root: int | None = None) -> bool:
    """Recurrence via critical vertices of a tree: equality wherever a vertex is critical."""
    if not is_stable(G, c):
        raise ValueError("configuration is not stable")
    vs = G.vertices
    root = vs[0] if root is None else root
    children = _rooted_children(G, root)
    val = dict(zip(vs, (int(x) for x in c)))
    critical: dict[int, bool] = {}
    # post-order: children before parents
    order = []
    todo = [root]
    while todo:
        v = todo.pop()
        order.append(v)
        todo.extend(children[v])
    for v in reversed(order):
        k = sum(critical[u] for u in children[v])
        critical[v] = val[v] <= k
        if critical[v] and val[v] != k:
            return False
    return True


def identity_element(G: SinkedGraph) -> list[int]:
    """Recurrent representative of zero: ``stab(m - stab(m))`` with ``m = 2(deg - 1)``."""
    m = [2 * (int(x) - 1) for x in G.degree]
    sm = stabilize_graph(G, m)
    return stabilize_graph(G, [a - b for a, b in zip(m, sm)])


def add(G: SinkedGraph, u: Sequence[int], v: Sequence[int]) -> list[int]:
    return stabilize_graph(G, [a + b for a, b in zip(u, v)])


def recurrent_representative(G: SinkedGraph, v: Sequence[int], e: Sequence[int] | None = None) -> list[int]:
    e = identity_element(G) if e is None else e
    return add(G, v, e)


def group_order_of_root(n: int, d: int, return_multiples: bool = False):
    """Order of ``r^ = e + delta_root`` in ``SP(T_n)`` by repeated addition."""
    G, _ = regular_tree(n, d)
    e = identity_element(G)
    delta = [0] * len(e)
    delta[0] = 1
    rhat = add(G, e, delta)
    multiples = [rhat]
    u = rhat
    while u != e:
        u = add(G, u, rhat)
        multiples.append(u)
        if len(multiples) > 10 ** 7:
            raise RuntimeError("root order search ran away")
    if return_multiples:
        return len(multiples), multiples
    return len(multiples)


def level_profile(n: int, d: int, c: Sequence[int]) -> tuple[int, ...] | None:
    """Per-level values of a configuration on ``T_n``, or None if not constant on levels."""
    _, words = regular_tree(n, d)
    out: dict[int, int] = {}
    for w, x in zip(words, c):
        if out.setdefault(len(w), x) != x:
            return None
    return tuple(out[k] for k in sorted(out))


# ---------------------------------------------------------------- rotor-router group


def rotor_cycle(G: SinkedGraph, v: int) -> list[int]:
    """Out-neighbours of ``v`` with multiplicity, in increasing vertex order."""
    out = []
    for u in range(G.size):
        out.extend([u] * int(G.adj[v, u]))
    return out


def rotor_targets(G: SinkedGraph, rotors: Sequence[int]) -> dict[int, int]:
    return {v: rotor_cycle(G, v)[r] for v, r in zip(G.vertices, rotors)}


def is_spanning_tree(G: SinkedGraph, rotors: Sequence[int]) -> bool:
    """Do the rotors form an oriented spanning tree rooted at the sink?"""
    tgt = rotor_targets(G, rotors)
    good = {G.sink}
    for v in G.vertices:
        path = []
        x = v
        while x not in good:
            if x in path:
                return False
            path.append(x)
            x = tgt[x]
        good.update(path)
    return True


def rotor_group_action(G: SinkedGraph, rotors: Sequence[int], x: int) -> list[int]:
    """``e_x``: add a chip at ``x`` and route it to the sink, rotating before each step."""
    if not is_spanning_tree(G, rotors):
        raise NotRecurrentError("rotor state has a cycle")
    pos = {v: i for i, v in enumerate(G.vertices)}
    cycles = {v: rotor_cycle(G, v) for v in G.vertices}
    rot = list(rotors)
    v = x
    while v != G.sink:
        i = pos[v]
        rot[i] = (rot[i] + 1) % len(cycles[v])
        v = cycles[v][rot[i]]
    return rot


def recurrent_rotor_states(G: SinkedGraph) -> list[tuple[int, ...]]:
    """All rotor states forming oriented spanning trees (exhaustive)."""
    import itertools

    sizes = [len(rotor_cycle(G, v)) for v in G.vertices]
    return [s for s in itertools.product(*(range(k) for k in sizes)) if is_spanning_tree(G, s)]


def rotor_orbit(G: SinkedGraph, start: Sequence[int]) -> set[tuple[int, ...]]:
    """Orbit of ``start`` under the group generated by all ``e_x``."""
    seen = {tuple(start)}
    todo = [tuple(start)]
    while todo:
        s = todo.pop()
        for x in G.vertices:
            t = tuple(rotor_group_action(G, s, x))
            if t not in seen:
                seen.add(t)
                todo.append(t)
    return seen


def rotor_root_order(n: int, d: int, start: Sequence[int] | None = None) -> int:
    """Order of ``e_root`` acting on recurrent rotor states of ``T_n``."""
    G, _ = regular_tree(n, d)
    if start is None:
        # every rotor at its parent (the root at its sink edge) is a spanning tree
        start = [rotor_cycle(G, v).index(_parent_or_sink(G, v)) for v in G.vertices]
    s = list(start)
    k = 0
    while True:
        s = rotor_group_action(G, s, 0)
        k += 1
        if s == list(start):
            return k


def _parent_or_sink(G: SinkedGraph, v: int) -> int:
    nb = [u for u in range(G.size) if G.adj[v, u]]
    lower = [u for u in nb if u < v and u != G.sink]
    return lower[0] if lower else G.sink


# ---------------------------------------------------------------- Sylow ranks


def _is_prime(p: int) -> bool:
    return p >= 2 and all(p % k for k in range(2, int(math.isqrt(p)) + 1))


def t_p(p: int, d: int) -> int:
    """Least ``k`` with ``p | q_k``."""
    a = d - 1
    if a % p == 0:
        raise ValueError(f"p={p} divides d-1, so no q_k is divisible by it")
    if a % p == 1 % p:
        return p
    k, x = 1, a % p
    while x != 1:
        x = x * a % p
        k += 1
    return k


def sylow_rank_formula(n: int, d: int, p: int) -> int:
    tp = t_p(p, d)
    total = d * (d - 2) * sum((d - 1) ** m for m in range(n) if (n - m) % tp == 0)
    if (n + 1) % tp == 0:
        total += d - 1
    return total


def sylow_rank_check(n: int, d: int, p: int) -> tuple[int, int]:
    """``(rank from SNF of B_n, rank from the formula)`` for the Sylow ``p``-subgroup."""
    if not _is_prime(p):
        raise ValueError(f"{p} is not prime")
    if (d * (d - 1)) % p == 0:
        raise ValueError(f"p={p} divides d(d-1)")
    return sandpile_group(ball_graph(n, d)).p_rank(p), sylow_rank_formula(n, d, p)
