"""Rotor-router walks on regular trees: aggregation balls and escape sequences.

Addresses are tuples. On the full tree ``()`` is the origin and
``(b, c1, ..., ck)`` is reached from the origin through branch ``b`` in
``1..d`` and then children ``c_i`` in ``1..d-1``. Inside a single branch,
words are relative to the branch root, which is ``()``.

Rotor indices are 0-based: at a non-origin vertex index ``i < d-1`` points
to child ``i+1`` and index ``d-1`` points to the parent; at the origin index
``i`` points to branch ``i+1``. A rotor is advanced by one before each move.

Escape on the infinite ternary tree is decided exactly. A vertex that has
never been visited and lies below every configured rotor is *virgin*: its
whole subtree is in the default state. With default index 0 a chip entering
a virgin vertex turns to child 2, finds it virgin as well, and so descends
forever. Such an escape leaves behind a *tail*: an infinite path on which
every rotor points along the path. Tails are stored lazily by their top
vertex and materialized one vertex at a time when later chips reach them.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .grid_core import ChipfireError

Address = tuple


class DepthOverflowError(ChipfireError):
    """A walk left the region the simulation was allowed to explore."""


class InfeasibleWordError(ChipfireError):
    """The word violates one of the window conditions and is not an escape sequence."""


@dataclass
class TreeRotorConfig:
    """Rotor indices on a (full or branch) regular tree.

    ``rotors`` maps explicit addresses to indices, ``default`` applies to all
    other vertices and ``tails`` maps an address ``v`` to a child index ``c``:
    the infinite path ``v, v+(c+1,), v+(c+1, c+1), ...`` has every rotor at
    ``c``.
    """

    d: int
    rotors: dict = field(default_factory=dict)
    default: int = 0
    tails: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 3:
            raise ValueError("trees of degree at least 3 only")
        for a, i in self.rotors.items():
            limit = self.d
            if not 0 <= i < limit:
                raise ValueError(f"rotor index {i} at {a} out of range")
        if not 0 <= self.default < self.d:
            raise ValueError("default rotor index out of range")

    def copy(self) -> "TreeRotorConfig":
        return TreeRotorConfig(self.d, dict(self.rotors), self.default, dict(self.tails))

    def depth(self) -> int:
        keys = list(self.rotors) + list(self.tails)
        return max((len(a) for a in keys), default=0)

    def to_json(self) -> str:
        obj = {
            "d": self.d,
            "default": self.default,
            "rotors": {"".join(map(str, a)) or "-": i for a, i in sorted(self.rotors.items())},
            "tails": {"".join(map(str, a)) or "-": c for a, c in sorted(self.tails.items())},
        }
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "TreeRotorConfig":
        obj = json.loads(text)

        def addr(s):
            return () if s == "-" else tuple(int(ch) for ch in s)

        return cls(obj["d"], {addr(k): v for k, v in obj["rotors"].items()}, obj["default"],
                   {addr(k): v for k, v in obj.get("tails", {}).items()})


# ---------------------------------------------------------------- explicit finite trees


class _FullTree:
    """The ball of radius ``depth`` in the d-regular tree, vertices numbered breadth first."""

    def __init__(self, d: int, depth: int):
        self.d = d
        self.depth = depth
        self.addr: list[Address] = [()]
        self.parent = [-1]
        self.level = [0]
        self.nbrs: list[list[int]] = [[]]
        frontier = [0]
        for lev in range(1, depth + 1):
            nxt = []
            for v in frontier:
                kids = range(1, d + 1) if v == 0 else range(1, d)
                for c in kids:
                    w = len(self.addr)
                    self.addr.append(self.addr[v] + (c,))
                    self.parent.append(v)
                    self.level.append(lev)
                    self.nbrs.append([])
                    self.nbrs[v].append(w)
                    nxt.append(w)
            frontier = nxt
        # rotor order: children then parent (origin: branches)
        for v in range(1, len(self.addr)):
            self.nbrs[v].append(self.parent[v])
        self.index = {a: i for i, a in enumerate(self.addr)}

    def __len__(self) -> int:
        return len(self.addr)


def ball_size(r: int, d: int) -> int:
    """Number of vertices within distance ``r`` of the origin."""
    a = d - 1
    return 1 + d * (a ** r - 1) // (a - 1)


def tree_ball(r: int, d: int) -> set:
    return {a for a in _FullTree(d, r).addr}


def is_acyclic(config: TreeRotorConfig, depth: int | None = None, branch: bool = False) -> bool:
    """No two neighbouring vertices point at each other (within ``depth``).

    With ``branch`` the tree is a single branch whose root's parent is a sink.
    """
    depth = config.depth() + 1 if depth is None else depth
    d = config.d

    def rot(a):
        return config.rotors.get(a, _tail_value(config, a))

    for a in _addresses(d, depth, branch):
        # only a rotor pointing to its parent can close a 2-cycle; the root of a
        # branch and the origin have no parent with a rotor
        if not a or rot(a) != d - 1:
            continue
        # the parent's rotor index for child a[-1] is a[-1] - 1, also at the origin
        if rot(a[:-1]) == a[-1] - 1:
            return False
    return True


def _tail_value(config: TreeRotorConfig, a: Address) -> int:
    for k in range(len(a), -1, -1):
        top = a[:k]
        if top in config.tails:
            c = config.tails[top]
            if all(x == c + 1 for x in a[k:]):
                return c
    return config.default


def _addresses(d: int, depth: int, branch: bool) -> Iterable[Address]:
    yield ()
    if branch:
        for k in range(1, depth + 1):
            yield from itertools.product(range(1, d), repeat=k)
    else:
        for k in range(1, depth + 1):
            for b in range(1, d + 1):
                for rest in itertools.product(range(1, d), repeat=k - 1):
                    yield (b,) + rest


def random_acyclic(d: int, depth: int, rng: random.Random) -> TreeRotorConfig:
    """Uniform random rotors on the ball of radius ``depth``, repaired to be acyclic."""
    tree = _FullTree(d, depth)
    rot = {}
    for v, a in enumerate(tree.addr):
        rot[a] = rng.randrange(d)
    for v, a in enumerate(tree.addr):
        if not a:
            continue
        parent = a[:-1]
        points_back = rot[parent] == (a[0] - 1 if not parent else a[-1] - 1)
        if rot[a] == d - 1 and points_back:
            rot[a] = rng.randrange(d - 1)
    return TreeRotorConfig(d, rot, 0)


def tree_aggregate(n: int, d: int, config: TreeRotorConfig | None = None,
                   max_depth: int | None = None, checkpoints: Sequence[int] = ()) -> set | dict:
    """Rotor aggregation of ``n`` chips at the origin of the d-regular tree.

    Returns the occupied addresses. With ``checkpoints`` returns a dict from
    each requested cluster size to the cluster at that moment instead.
    """
    config = config or TreeRotorConfig(d)
    if n < 1:
        raise ValueError("need at least one chip")
    if max_depth is None:
        max_depth = 1
        while ball_size(max_depth - 1, d) < n:
            max_depth += 1
        max_depth = max(max_depth, config.depth()) + 1
    tree = _FullTree(d, max_depth)
    rot = [config.rotors.get(a, _tail_value(config, a)) for a in tree.addr]
    occ = [False] * len(tree)
    snaps = {}
    wanted = set(checkpoints)
    for chip in range(1, n + 1):
        v = 0
        while occ[v]:
            if tree.level[v] == max_depth:
                raise DepthOverflowError(f"chip {chip} reached depth {max_depth}")
            nb = tree.nbrs[v]
            rot[v] = (rot[v] + 1) % len(nb)
            v = nb[rot[v]]
        occ[v] = True
        if chip in wanted:
            snaps[chip] = {tree.addr[i] for i in range(len(tree)) if occ[i]}
    if checkpoints:
        return snaps
    return {tree.addr[i] for i in range(len(tree)) if occ[i]}


@dataclass
class BallSuiteReport:
    d: int
    r_max: int
    seeds: list
    failures: list

    @property
    def passed(self) -> bool:
        return not self.failures


def tree_ball_theorem_suite(d: int, r_max: int, configs: int = 20, seed: int = 0) -> BallSuiteReport:
    """Check ``A_{b_r} = B_r`` for ``r <= r_max`` on seeded random acyclic configurations."""
    sizes = {ball_size(r, d): r for r in range(r_max + 1)}
    failures = []
    seeds = [seed + k for k in range(configs)]
    for s in seeds:
        cfg = random_acyclic(d, r_max + 1, random.Random(s))
        if not is_acyclic(cfg, r_max + 1):
            raise AssertionError(f"seed {s}: generated configuration is cyclic")
        snaps = tree_aggregate(max(sizes), d, cfg, max_depth=r_max + 2, checkpoints=list(sizes))
        for n, r in sizes.items():
            if snaps[n] != tree_ball(r, d):
                failures.append((s, r))
    return BallSuiteReport(d, r_max, seeds, failures)


# ---------------------------------------------------------------- finite branches


def finite_branch_run(height: int, d: int, config: TreeRotorConfig, chips: int,
                      return_state: bool = False):
    """Chips start at the root of a branch of height ``height``; record ``o`` or ``b``.

    The branch root is at level 1, vertices at level ``height`` form the sink
    ``b`` and the parent of the root is the sink ``o``.
    """
    if height < 2:
        raise ValueError("height must be at least 2")
    rot = {}

    def get(a):
        if a not in rot:
            rot[a] = config.rotors.get(a, _tail_value(config, a))
        return rot[a]

    out = []
    for _ in range(chips):
        a: Address = ()
        while True:
            r = (get(a) + 1) % d
            rot[a] = r
            if r == d - 1:
                if not a:
                    out.append("o")
                    break
                a = a[:-1]
            else:
                a = a + (r + 1,)
                if len(a) + 1 == height:
                    out.append("b")
                    break
    if return_state:
        return out, rot
    return out


def finite_branch_leaf_counts(height: int, d: int, config: TreeRotorConfig, chips: int):
    """Per-leaf arrivals, returns to ``o`` and the final rotor map on a branch."""
    rot = {}

    def get(a):
        if a not in rot:
            rot[a] = config.rotors.get(a, _tail_value(config, a))
        return rot[a]

    leaves: dict = {}
    home = 0
    for _ in range(chips):
        a: Address = ()
        while True:
            r = (get(a) + 1) % d
            rot[a] = r
            if r == d - 1:
                if not a:
                    home += 1
                    break
                a = a[:-1]
            else:
                a = a + (r + 1,)
                if len(a) + 1 == height:
                    leaves[a] = leaves.get(a, 0) + 1
                    break
    return leaves, home, rot


def branch_words(height: int, d: int) -> list[Address]:
    """Addresses of rotor-carrying vertices (levels ``1..height-1``) of a branch."""
    return [a for k in range(height - 1) for a in itertools.product(range(1, d), repeat=k)]


# ---------------------------------------------------------------- infinite ternary tree


class _LazyBranchState:
    """Rotor state of an infinite ternary branch with exact escape detection."""

    def __init__(self, config: TreeRotorConfig, cutoff: int = 10**6):
        if config.d != 3:
            raise ValueError("escape sequences are defined for the ternary tree")
        self.default = config.default
        self.rot: dict = dict(config.rotors)
        self.tails: dict = dict(config.tails)
        self.visited: set = set()
        self.depth_limit = max((len(a) for a in list(self.rot) + list(self.tails)), default=0)
        self.cutoff = cutoff

    def _tail_at(self, a: Address):
        """Rotor value if ``a`` lies on a stored tail, else None."""
        for k in range(len(a), -1, -1):
            top = a[:k]
            if top in self.tails:
                c = self.tails[top]
                return c if all(x == c + 1 for x in a[k:]) else None
        return None

    def _virgin(self, a: Address) -> bool:
        return (a not in self.visited and a not in self.rot and len(a) > self.depth_limit
                and self._tail_at(a) is None)

    def _enter(self, a: Address):
        if a in self.visited:
            return
        self.visited.add(a)
        if a in self.rot:
            return
        if a in self.tails:
            c = self.tails.pop(a)
            self.tails[a + (c + 1,)] = c
            self.rot[a] = c
        else:
            self.rot[a] = self.default

    def send(self, max_steps: int = 10_000_000) -> int:
        """Route one chip from the branch root; 1 if it escapes, 0 if it returns."""
        a: Address = ()
        for _ in range(max_steps):
            if self.default != 1 and self._virgin(a):
                # default rotors send it straight down forever
                self.tails[a] = (self.default + 1) % 3
                return 1
            self._enter(a)
            r = (self.rot[a] + 1) % 3
            self.rot[a] = r
            if r == 2:
                if not a:
                    return 0
                a = a[:-1]
            else:
                a = a + (r + 1,)
                if len(a) > self.cutoff:
                    raise DepthOverflowError(f"chip passed cutoff depth {self.cutoff} undecided")
        raise DepthOverflowError("chip neither escaped nor returned within the step budget")


def escape_sequence(config: TreeRotorConfig, n: int, cutoff: int | None = None) -> str:
    """Escape word of the first ``n`` chips entering an infinite ternary branch.

    Escapes are decided exactly (see the module notes). ``cutoff`` bounds the
    depth any chip may reach before its fate is known; it defaults to the
    configuration depth plus ``n + 2`` and exceeding it raises.
    """
    cutoff = config.depth() + n + 2 if cutoff is None else cutoff
    st = _LazyBranchState(config, cutoff)
    return "".join(str(st.send()) for _ in range(n))


def full_tree_escape_sequence(config: TreeRotorConfig, n: int, cutoff: int | None = None) -> str:
    """Escape word for chips started at the origin of the full ternary tree."""
    if config.d != 3:
        raise ValueError("ternary tree only")
    cutoff = config.depth() + n + 2 if cutoff is None else cutoff
    branches = {}
    for b in (1, 2, 3):
        sub = TreeRotorConfig(
            3,
            {a[1:]: i for a, i in config.rotors.items() if a and a[0] == b},
            config.default,
            {a[1:]: c for a, c in config.tails.items() if a and a[0] == b},
        )
        branches[b] = _LazyBranchState(sub, cutoff)
    r = config.rotors.get((), config.default)
    out = []
    for _ in range(n):
        r = (r + 1) % 3
        out.append(str(branches[r + 1].send()))
    return "".join(out)


def returns_count(word: str, m: int) -> int:
    return word[:m].count("0")


def alternation_config() -> TreeRotorConfig:
    """Rightmost path of branch 3 at direction 2, everything else at direction 1."""
    return TreeRotorConfig(3, {(): 0}, 0, {(3,): 1})


# ---------------------------------------------------------------- words


def check_Pk(word: str, k: int) -> bool:
    """Every window of length ``2^k - 1`` holds at most ``2^(k-1)`` ones."""
    if k < 1:
        raise ValueError("k must be positive")
    w = 2 ** k - 1
    bits = [1 if ch == "1" else 0 for ch in word]
    if len(bits) < w:
        return True
    s = sum(bits[:w])
    best = s
    for i in range(w, len(bits)):
        s += bits[i] - bits[i - w]
        best = max(best, s)
    return best <= 2 ** (k - 1)


def satisfies_all_Pk(word: str) -> bool:
    k = 1
    while 2 ** k - 1 <= len(word):
        if not check_Pk(word, k):
            return False
        k += 1
    return True


def full_tree_feasible(word: str) -> bool:
    return all(satisfies_all_Pk(word[j::3]) for j in range(3))


def _blocks(word: str) -> list[str]:
    out = []
    i = 0
    w = word
    while i < len(w):
        for b in ("0", "10", "110"):
            if w.startswith(b, i):
                out.append(b)
                i += len(b)
                break
        else:
            rest = w[i:]
            if rest in ("1", "11"):
                out.append(rest + "0")
                i = len(w)
            else:
                raise InfeasibleWordError(f"{word!r} has three ones in a row")
    return out


def psi(word: str) -> tuple[str, str]:
    """Split a branch escape word into the words of its two sub-branches."""
    c, dd = [], []
    tens = 0
    for b in _blocks(word):
        if b == "0":
            c.append("0"); dd.append("0")
        elif b == "110":
            c.append("1"); dd.append("1")
        else:
            if tens % 2 == 0:
                c.append("1"); dd.append("0")
            else:
                c.append("0"); dd.append("1")
            tens += 1
    return "".join(c), "".join(dd)


def phi(c: str, d: str) -> str:
    if len(c) != len(d):
        raise ValueError("words must have equal length")
    table = {("0", "0"): "0", ("1", "0"): "10", ("0", "1"): "10", ("1", "1"): "110"}
    return "".join(table[(x, y)] for x, y in zip(c, d))


def strip_trailing_zero(a: str, reference: str) -> str:
    return a[: len(reference)] if a.startswith(reference) else a


def realize_escape_word(word: str) -> TreeRotorConfig:
    """A branch configuration whose first ``len(word)`` chips have escape word ``word``.

    Words ``0^k`` and ``0^k 1`` get every rotor at direction 2 on the first
    ``k`` levels: ``k`` chips return, then one escapes into the default
    region. Other words put the root rotor up and recurse on the two halves
    from ``psi``, which are strictly shorter.
    """
    if any(ch not in "01" for ch in word):
        raise ValueError("binary words only")
    if not satisfies_all_Pk(word):
        raise InfeasibleWordError(f"{word!r} violates a window condition")
    rotors: dict = {}
    _realize(word, (), rotors)
    return TreeRotorConfig(3, rotors, 0)


def _realize(word: str, at: Address, rotors: dict):
    ones = word.count("1")
    if ones == 0 or (ones == 1 and word.endswith("1")):
        # psi does not shorten these; the next chip after the zeros meets a virgin subtree
        for k in range(word.index("1") if ones else len(word)):
            for rest in itertools.product((1, 2), repeat=k):
                rotors[at + rest] = 1
        return
    rotors[at] = 2
    c, d = psi(word)
    _realize(c, at + (1,), rotors)
    _realize(d, at + (2,), rotors)


def realize_full_tree_word(word: str) -> TreeRotorConfig:
    """Configuration on the full ternary tree with escape word ``word`` from the origin."""
    if not full_tree_feasible(word):
        raise InfeasibleWordError(f"{word!r} is not an escape word of the ternary tree")
    rotors = {(): 2}
    for j in range(3):
        sub = realize_escape_word(word[j::3])
        for a, i in sub.rotors.items():
            rotors[(j + 1,) + a] = i
    return TreeRotorConfig(3, rotors, 0)


def random_finite_config(rng: random.Random, depth: int, full: bool = False) -> TreeRotorConfig:
    """Uniform random rotors on the first ``depth`` levels, default beyond."""
    rotors = {}
    if full:
        rotors[()] = rng.randrange(3)
        for k in range(1, depth + 1):
            for b in (1, 2, 3):
                for rest in itertools.product((1, 2), repeat=k - 1):
                    rotors[(b,) + rest] = rng.randrange(3)
    else:
        for k in range(depth):
            for a in itertools.product((1, 2), repeat=k):
                rotors[a] = rng.randrange(3)
    return TreeRotorConfig(3, rotors, 0)
