"""Column-stochastic weight matrices for the three averaging schemes."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .graph import DirectedGraph, GraphError

RATIO_CONSENSUS = "ratio_consensus"
PUSH_SUM = "push_sum"
BALANCED = "balanced"
SCHEMES = (RATIO_CONSENSUS, PUSH_SUM, BALANCED)


class SchemeError(ValueError):
    """Activity pattern incompatible with the requested weight scheme."""


@dataclass(frozen=True)
class WeightScheme:
    kind: str = RATIO_CONSENSUS
    eps: float | None = None

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise SchemeError(f"unknown weight scheme {self.kind!r}; expected one of {SCHEMES}")


@dataclass(frozen=True)
class WeightMatrix:
    """Sparse W[k]; ``entries[(l, j)]`` is the weight node ``j`` gives to ``l``."""

    n: int
    entries: Mapping[tuple[int, int], float | Fraction]

    def __getitem__(self, lj: tuple[int, int]):
        return self.entries.get(lj, 0)

    def column(self, j: int) -> dict[int, float | Fraction]:
        return {l: w for (l, jj), w in self.entries.items() if jj == j}

    def columns(self) -> list[dict[int, float | Fraction]]:
        cols: list[dict] = [{} for _ in range(self.n)]
        for (l, j), w in self.entries.items():
            cols[j - 1][l] = w
        return cols

    def dense_rows(self) -> list[list]:
        exact = any(isinstance(w, Fraction) for w in self.entries.values())
        zero = Fraction(0) if exact else 0.0
        rows = [[zero] * self.n for _ in range(self.n)]
        for (l, j), w in self.entries.items():
            rows[l - 1][j - 1] = w
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row in self.dense_rows():
            writer.writerow([repr(float(w)) for w in row])
        return buf.getvalue()


def _unit(d: int, exact: bool):
    return Fraction(1, 1 + d) if exact else 1.0 / (1 + d)


def _uniform_columns(g: DirectedGraph, active: Sequence[frozenset[int]], exact: bool) -> WeightMatrix:
    entries = {}
    for j in g.nodes:
        act = active[j - 1]
        extra = set(act) - set(g.out_neighbors(j))
        if extra:
            raise GraphError(f"node {j} activates {sorted(extra)} outside its out-neighborhood")
        w = _unit(len(act), exact)
        entries[(j, j)] = w
        for l in act:
            entries[(l, j)] = w
    return WeightMatrix(g.n, entries)


def ratio_consensus_weights(g: DirectedGraph, exact: bool = False) -> WeightMatrix:
    """Static weights 1/(1 + out-degree) on every out-edge and the diagonal."""
    return _uniform_columns(g, [frozenset(g.out_neighbors(j)) for j in g.nodes], exact)


def push_sum_weights(g: DirectedGraph, active: Sequence[frozenset[int]], exact: bool = False) -> WeightMatrix:
    """Weights 1/(1 + D_j[k]) over the round's active out-set and the diagonal."""
    return _uniform_columns(g, active, exact)


def balanced_weights(g: DirectedGraph, active: Sequence[frozenset[int]], exact: bool = False) -> WeightMatrix:
    """Doubly stochastic 1/N weights; requires symmetric activity in the round."""
    n = g.n
    for j in g.nodes:
        for l in active[j - 1]:
            if j not in active[l - 1]:
                raise SchemeError(f"balanced weights need symmetric activity: {j}->{l} active but {l}->{j} is not")
    inv_n = Fraction(1, n) if exact else 1.0 / n
    entries = {}
    for j in g.nodes:
        act = active[j - 1]
        d = len(act)
        entries[(j, j)] = Fraction(n - d, n) if exact else 1.0 - d / n
        for l in act:
            entries[(l, j)] = inv_n
    return WeightMatrix(n, entries)


def weights_for_round(scheme: WeightScheme, g: DirectedGraph, active: Sequence[frozenset[int]], exact: bool = False) -> WeightMatrix:
    if scheme.kind == RATIO_CONSENSUS:
        for j in g.nodes:
            if set(active[j - 1]) != set(g.out_neighbors(j)):
                raise SchemeError(f"ratio-consensus weights need every edge active; node {j} is not")
        return ratio_consensus_weights(g, exact)
    if scheme.kind == PUSH_SUM:
        return push_sum_weights(g, active, exact)
    return balanced_weights(g, active, exact)


@dataclass(frozen=True)
class Violation:
    prop: str  # "W1", "W2", "W3" or "column_sum"
    row: int
    col: int
    detail: str


def validate_weight_matrix(
    W: WeightMatrix,
    active: Sequence[frozenset[int]],
    eps: float | None = None,
    tol: float = 1e-12,
) -> list[Violation]:
    """List every support, range, diagonal and column-sum violation.

    Off-diagonal entries must lie in (eps, 1 - eps); the diagonal must exceed
    eps and equal one minus the column's off-diagonal mass. ``eps`` defaults
    to 1/(2n).
    """
    n = W.n
    if eps is None:
        eps = 1.0 / (2 * n)
    out: list[Violation] = []
    cols = W.columns()
    for j in range(1, n + 1):
        col = cols[j - 1]
        allowed = set(active[j - 1]) | {j}
        off_sum = 0
        for l, w in sorted(col.items()):
            if l not in allowed and w != 0:
                out.append(Violation("W1", l, j, f"nonzero weight {float(w)!r} outside N_j+[k] and the diagonal"))
            if l != j:
                off_sum += w
                if not eps < w < 1 - eps:
                    out.append(Violation("W2", l, j, f"weight {float(w)!r} not in ({eps}, {1 - eps})"))
        diag = col.get(j, 0)
        if not diag > eps:
            out.append(Violation("W3", j, j, f"diagonal {float(diag)!r} not above {eps}"))
        if abs(float(diag - (1 - off_sum))) > tol:
            out.append(Violation("W3", j, j, f"diagonal {float(diag)!r} != 1 - {float(off_sum)!r}"))
        total = sum(col.values())
        if abs(float(total) - 1.0) > tol:
            out.append(Violation("column_sum", 0, j, f"column sums to {float(total)!r}"))
    return out
