"""Dense matrix reference for the message-passing engine.

Weight matrices are rebuilt here straight from the scheme formulas rather than
through :mod:`consensus_lab.weights`, and states advance by plain
matrix-block products. Rational inputs stay rational (object arrays).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .faults import ADDITIVE
from .graph import DirectedGraph
from .simulator import Trace, activation_schedule
from .weights import BALANCED

DenseMatrix = np.ndarray


def dense_weights(g: DirectedGraph, active: Sequence[frozenset[int]], scheme: str, exact: bool = False) -> DenseMatrix:
    """W[k] as an n x n array; ``active[j-1]`` is node j's out-set this round."""
    n = g.n
    one = Fraction(1) if exact else 1.0
    W = np.zeros((n, n), dtype=object if exact else float)
    if exact:
        W[:, :] = Fraction(0)
    for j in range(1, n + 1):
        d = len(active[j - 1])
        if scheme == BALANCED:
            off, diag = one / n, one - one * d / n
        else:
            off = diag = one / (1 + d)
        W[j - 1, j - 1] = diag
        for l in active[j - 1]:
            W[l - 1, j - 1] = off
    return W


def dense_step(W: DenseMatrix, X: DenseMatrix) -> DenseMatrix:
    """``W @ X`` with each entry summed over ascending column index."""
    n = W.shape[0]
    if W.shape != (n, n) or X.shape[0] != n:
        raise ValueError(f"cannot multiply {W.shape} by {X.shape}")
    out = np.empty_like(X)
    for r in range(n):
        for c in range(X.shape[1]):
            acc = W[r, 0] * X[0, c]
            for t in range(1, n):
                acc = acc + W[r, t] * X[t, c]
            out[r, c] = acc
    return out


def accumulate_T(Ws: Iterable[DenseMatrix], n: int | None = None, exact: bool = False) -> DenseMatrix:
    """Left product ``W[k-1] ... W[0]``; identity for an empty sequence."""
    T = None
    for W in Ws:
        T = W.copy() if T is None else W @ T
    if T is None:
        if n is None:
            raise ValueError("need n for an empty product")
        T = np.eye(n, dtype=float)
        if exact:
            T = np.array([[Fraction(int(r == c)) for c in range(n)] for r in range(n)], dtype=object)
    return T


def column_spread(T: DenseMatrix) -> float:
    """Largest within-row gap between columns; zero iff all columns coincide."""
    T = np.asarray(T)
    return float(max(max(row) - min(row) for row in T))


def initial_block(values: Sequence, exact: bool = False) -> DenseMatrix:
    if exact:
        return np.array([[Fraction(v), Fraction(1)] for v in values], dtype=object)
    return np.array([[float(Fraction(v)), 1.0] for v in values], dtype=float)


@dataclass
class OracleReport:
    deviations: list[tuple[int, float]]
    tolerance: float

    @property
    def max_deviation(self) -> float:
        return max((d for _, d in self.deviations), default=0.0)

    @property
    def worst_round(self) -> int | None:
        if not self.deviations:
            return None
        return max(self.deviations, key=lambda kd: kd[1])[0]

    @property
    def ok(self) -> bool:
        return self.max_deviation <= self.tolerance

    def exceeding(self) -> list[int]:
        return [k for k, d in self.deviations if d > self.tolerance]


def oracle_run(trace_or_config, rounds: int | None = None):
    """Yield ``(k, X[k], W[k])`` densely for the trace's configuration, faults included."""
    cfg = trace_or_config.config if isinstance(trace_or_config, Trace) else trace_or_config
    g = cfg.graph
    exact = cfg.exact
    rounds = cfg.rounds if rounds is None else rounds
    sched = activation_schedule(g, cfg.activation, cfg.seed, rounds, symmetric=cfg.scheme.kind == BALANCED)
    X = initial_block(cfg.values, exact)
    X0 = X.copy()
    for k in range(rounds + 1):
        W = dense_weights(g, sched.active[k], cfg.scheme.kind, exact) if k < rounds else None
        yield k, X, W
        if W is None:
            break
        X = dense_step(W, X)
        for ev in cfg.faults.at(k):
            if ev.kind == ADDITIVE:
                e = ev.e.exact() if exact else ev.e.to_float()
                X[ev.node - 1, 0] = X[ev.node - 1, 0] + e.y
                X[ev.node - 1, 1] = X[ev.node - 1, 1] + e.z
            else:
                X[ev.node - 1, :] = X0[ev.node - 1, :]


def oracle_compare(trace: Trace, tolerance: float = 1e-12) -> OracleReport:
    """Per-round infinity-norm gap between recorded states and the dense replay."""
    recorded = {rec.k: rec for rec in trace.rounds}
    devs = []
    for k, X, _ in oracle_run(trace):
        rec = recorded.get(k)
        if rec is None:
            continue
        dev = 0.0
        for j, x in enumerate(rec.x):
            dev = max(dev, abs(float(x.y - X[j, 0])), abs(float(x.z - X[j, 1])))
        devs.append((k, dev))
    return OracleReport(devs, tolerance)


def t_snapshots_csv(trace_or_config, every: int = 1) -> str:
    """CSV of T[k] entries (row-major) every ``every`` rounds, with the column spread."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cfg = trace_or_config.config if isinstance(trace_or_config, Trace) else trace_or_config
    n = cfg.graph.n
    writer.writerow(["k", "column_spread"] + [f"t_{r + 1}_{c + 1}" for r in range(n) for c in range(n)])
    T = accumulate_T([], n=n, exact=cfg.exact)
    for k, _, W in oracle_run(cfg):
        if k % every == 0:
            writer.writerow([k, repr(column_spread(T))] + [repr(float(v)) for v in T.flatten()])
        if W is not None:
            T = W @ T
    return buf.getvalue()


def spread_series(trace_or_config) -> list[float]:
    """column_spread(T[k]) for k = 0..rounds."""
    cfg = trace_or_config.config if isinstance(trace_or_config, Trace) else trace_or_config
    T = accumulate_T([], n=cfg.graph.n, exact=cfg.exact)
    out = []
    for _, _, W in oracle_run(cfg):
        out.append(column_spread(T))
        if W is not None:
            T = W @ T
    return out
