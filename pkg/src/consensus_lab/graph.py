"""Directed communication topologies and time-varying edge schedules.

Edges are ordered pairs ``(receiver, sender)``: the pair ``(j, i)`` means node
``j`` may receive information from node ``i``. Nodes are numbered ``1..n``
everywhere, including file formats.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

GRAPH_FORMAT_VERSION = "1.0"


class GraphError(ValueError):
    """Invalid topology or schedule."""


@dataclass(frozen=True)
class DirectedGraph:
    n: int
    edges: frozenset[tuple[int, int]]
    _in: tuple[tuple[int, ...], ...] = field(repr=False, compare=False, default=())
    _out: tuple[tuple[int, ...], ...] = field(repr=False, compare=False, default=())

    def in_neighbors(self, j: int) -> tuple[int, ...]:
        """Nodes ``j`` receives from, ascending."""
        return self._in[j - 1]

    def out_neighbors(self, j: int) -> tuple[int, ...]:
        """Nodes ``j`` sends to, ascending."""
        return self._out[j - 1]

    def in_degree(self, j: int) -> int:
        return len(self._in[j - 1])

    def out_degree(self, j: int) -> int:
        return len(self._out[j - 1])

    @property
    def nodes(self) -> range:
        return range(1, self.n + 1)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def is_symmetric(self) -> bool:
        return all((i, j) in self.edges for j, i in self.edges)

    def to_dict(self) -> dict:
        return {
            "format_version": GRAPH_FORMAT_VERSION,
            "n": self.n,
            "edges": [list(e) for e in self.sorted_edges()],
        }


def build_graph(n: int, edges: Iterable[Sequence[int]]) -> DirectedGraph:
    """Validate ``(receiver, sender)`` pairs and index the neighborhoods."""
    if not isinstance(n, int) or n < 2:
        raise GraphError(f"need at least 2 nodes, got n={n!r}")
    seen: set[tuple[int, int]] = set()
    for e in edges:
        if len(e) != 2:
            raise GraphError(f"edge {list(e)!r} is not a (receiver, sender) pair")
        j, i = int(e[0]), int(e[1])
        if not (1 <= j <= n and 1 <= i <= n):
            raise GraphError(f"edge ({j}, {i}) has a node index outside 1..{n}")
        if j == i:
            raise GraphError(f"edge ({j}, {i}) is a self-loop")
        if (j, i) in seen:
            raise GraphError(f"edge ({j}, {i}) is duplicated")
        seen.add((j, i))
    ins: list[list[int]] = [[] for _ in range(n)]
    outs: list[list[int]] = [[] for _ in range(n)]
    for j, i in seen:
        ins[j - 1].append(i)
        outs[i - 1].append(j)
    return DirectedGraph(
        n=n,
        edges=frozenset(seen),
        _in=tuple(tuple(sorted(s)) for s in ins),
        _out=tuple(tuple(sorted(s)) for s in outs),
    )


def _reaches_all(n: int, start: int, succ: Sequence[Sequence[int]]) -> bool:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in succ[u - 1]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == n


def _strongly_connected(n: int, edges: Iterable[tuple[int, int]]) -> bool:
    fwd: list[list[int]] = [[] for _ in range(n)]
    bwd: list[list[int]] = [[] for _ in range(n)]
    for j, i in edges:
        fwd[i - 1].append(j)
        bwd[j - 1].append(i)
    return _reaches_all(n, 1, fwd) and _reaches_all(n, 1, bwd)


def is_strongly_connected(g: DirectedGraph) -> bool:
    """True iff every node reaches every other node along directed edges."""
    return _strongly_connected(g.n, g.edges)


@dataclass(frozen=True)
class EdgeSchedule:
    """Per-round active out-neighbor sets over a fixed base graph.

    ``active[k][j - 1]`` is the set of out-neighbors node ``j`` sends to in
    round ``k``.
    """

    base: DirectedGraph
    active: tuple[tuple[frozenset[int], ...], ...]

    def __post_init__(self):
        g = self.base
        for k, rnd in enumerate(self.active):
            if len(rnd) != g.n:
                raise GraphError(f"round {k}: expected {g.n} active sets, got {len(rnd)}")
            for j, act in enumerate(rnd, start=1):
                extra = set(act) - set(g.out_neighbors(j))
                if extra:
                    raise GraphError(
                        f"round {k}: node {j} activates {sorted(extra)} "
                        f"outside its out-neighborhood {list(g.out_neighbors(j))}"
                    )

    @property
    def horizon(self) -> int:
        return len(self.active)

    def active_out(self, k: int, j: int) -> frozenset[int]:
        return self.active[k][j - 1]

    def round_edges(self, k: int) -> set[tuple[int, int]]:
        """Edge set E[k] as (receiver, sender) pairs."""
        return {(l, j) for j, act in enumerate(self.active[k], start=1) for l in act}

    def is_symmetric_at(self, k: int) -> bool:
        es = self.round_edges(k)
        return all((i, j) in es for j, i in es)

    def to_lists(self) -> list[dict[str, list[int]]]:
        """1-based JSON-friendly form: one ``{sender: [receivers]}`` map per round."""
        return [
            {str(j): sorted(act) for j, act in enumerate(rnd, start=1) if act}
            for rnd in self.active
        ]

    @classmethod
    def from_lists(cls, base: DirectedGraph, rounds: Sequence[Mapping]) -> "EdgeSchedule":
        active = []
        for rnd in rounds:
            sets = [frozenset()] * base.n
            for j, recv in rnd.items():
                j = int(j)
                if not 1 <= j <= base.n:
                    raise GraphError(f"schedule names unknown node {j}")
                sets[j - 1] = frozenset(int(l) for l in recv)
            active.append(tuple(sets))
        return cls(base, tuple(active))


def always_on(g: DirectedGraph, horizon: int) -> EdgeSchedule:
    full = tuple(frozenset(g.out_neighbors(j)) for j in g.nodes)
    return EdgeSchedule(g, (full,) * horizon)


def verify_joint_connectivity(s: EdgeSchedule, k_conn: int, horizon: int | None = None) -> bool:
    """Check that every window of ``k_conn`` consecutive rounds has a
    strongly connected union graph."""
    if horizon is None:
        horizon = s.horizon
    if k_conn < 1:
        raise ValueError(f"window length must be >= 1, got {k_conn}")
    if horizon % k_conn:
        raise ValueError(f"horizon {horizon} is not a multiple of the window {k_conn}")
    if horizon > s.horizon:
        raise ValueError(f"horizon {horizon} exceeds schedule length {s.horizon}")
    for start in range(0, horizon, k_conn):
        union: set[tuple[int, int]] = set()
        for k in range(start, start + k_conn):
            union |= s.round_edges(k)
        if not _strongly_connected(s.base.n, union):
            return False
    return True


@dataclass(frozen=True)
class NeighborInfo:
    out_degree: int
    in_neighbors: tuple[int, ...]


@dataclass(frozen=True)
class TwoHopView:
    """What node ``owner`` knows about the topology around its in-neighbors."""

    owner: int
    neighbors: Mapping[int, NeighborInfo]


def two_hop_view(g: DirectedGraph, j: int) -> TwoHopView:
    if not 1 <= j <= g.n:
        raise GraphError(f"node {j} outside 1..{g.n}")
    return TwoHopView(
        owner=j,
        neighbors={i: NeighborInfo(g.out_degree(i), g.in_neighbors(i)) for i in g.in_neighbors(j)},
    )


# -- generators -------------------------------------------------------------

def ring_graph(n: int) -> DirectedGraph:
    """Directed cycle 1 -> 2 -> ... -> n -> 1."""
    return build_graph(n, [(j % n + 1, j) for j in range(1, n + 1)])


def complete_graph(n: int) -> DirectedGraph:
    return build_graph(n, [(j, i) for j in range(1, n + 1) for i in range(1, n + 1) if i != j])


def cycle_with_chords(n: int, p: float, rng: random.Random) -> DirectedGraph:
    """Random Hamiltonian cycle plus each remaining ordered pair with probability ``p``.

    Always strongly connected.
    """
    order = list(range(1, n + 1))
    rng.shuffle(order)
    edges = {(order[(t + 1) % n], order[t]) for t in range(n)}
    for j in range(1, n + 1):
        for i in range(1, n + 1):
            if i != j and (j, i) not in edges and rng.random() < p:
                edges.add((j, i))
    return build_graph(n, sorted(edges))


def erdos_strongly_connected(n: int, p: float, rng: random.Random, max_tries: int = 10_000) -> DirectedGraph:
    """Rejection-sample G(n, p) digraphs until one is strongly connected."""
    pairs = [(j, i) for j in range(1, n + 1) for i in range(1, n + 1) if i != j]
    for _ in range(max_tries):
        edges = [e for e in pairs if rng.random() < p]
        if edges and _strongly_connected(n, edges):
            return build_graph(n, edges)
    raise GraphError(f"no strongly connected G({n}, {p}) sample in {max_tries} tries")


def symmetric_path(n: int) -> DirectedGraph:
    return build_graph(n, [e for j in range(1, n) for e in ((j, j + 1), (j + 1, j))])


# -- file format ------------------------------------------------------------

def graph_from_dict(data: Mapping) -> DirectedGraph:
    version = str(data.get("format_version", GRAPH_FORMAT_VERSION))
    if version.split(".")[0] != GRAPH_FORMAT_VERSION.split(".")[0]:
        raise GraphError(f"unsupported graph format version {version}")
    if "n" not in data or "edges" not in data:
        raise GraphError("graph needs 'n' and 'edges'")
    return build_graph(data["n"], data["edges"])


def load_graph(path: str | Path) -> DirectedGraph:
    return graph_from_dict(json.loads(Path(path).read_text()))


def dump_graph(g: DirectedGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(g.to_dict(), indent=1) + "\n")
