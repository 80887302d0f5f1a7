"""Conservation invariants and the periodic two-hop consistency check.

Invariant expressions are evaluated exactly (inputs are converted to
:class:`~fractions.Fraction`) and only the final value is rounded, so every
checker of the same target computes a bitwise identical result.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .graph import DirectedGraph, two_hop_view
from .protocol import GENERAL, ZERO, NodeState, Vec2

DEFAULT_TAU_SCALE = 1e-9


class IncompleteCheckError(LookupError):
    """A two-hop running sum needed by a consistency check is missing."""


def _like(v: Vec2, ref: Vec2) -> Vec2:
    return v if isinstance(ref.y, Fraction) else v.to_float()


def _xsum(vs) -> Vec2:
    total = None
    for v in vs:
        total = v.exact() if total is None else total + v.exact()
    return ZERO if total is None else total


def global_invariant_residual(xs: Sequence[Vec2], x0s: Sequence[Vec2]) -> Vec2:
    """``sum_j x_j[k] - sum_j x_j[0]``, accumulated in node order."""
    if len(xs) != len(x0s):
        raise ValueError("state lists differ in length")
    s, s0 = xs[0], x0s[0]
    for v in xs[1:]:
        s = s + v
    for v in x0s[1:]:
        s0 = s0 + v
    return s - s0


def local_invariant_eta_general(x: Vec2, sigma_sent: Sequence[Vec2], sigma_received: Sequence[Vec2]) -> Vec2:
    """State plus everything sent minus everything received, per out-edge/in-edge sums."""
    eta = x.exact() + _xsum(sigma_sent) - _xsum(sigma_received)
    return _like(eta, x)


def local_invariant_eta_ratio(x: Vec2, sigma: Vec2, out_degree: int, sigma_in: Sequence[Vec2]) -> Vec2:
    eta = x.exact() + sigma.exact().scale(out_degree) - _xsum(sigma_in)
    return _like(eta, x)


def recover_initial(sigma1: Vec2, out_degree: int) -> Vec2:
    """Initial state of a node from its first broadcast running sum."""
    return sigma1.scale(1 + out_degree)


def atc_evaluate(
    checker: int,
    target: int,
    k0: int,
    x_target: Vec2,
    sigma_target: Vec2,
    out_degree: int,
    two_hop: Mapping[int, Vec2],
    target_in_neighbors: Sequence[int],
    x0_target: Vec2,
) -> Vec2:
    """Consistency residual ``c_target[k0]`` as seen by ``checker``."""
    missing = [i for i in target_in_neighbors if i not in two_hop]
    if missing:
        raise IncompleteCheckError(
            f"checker {checker} lacks sigma[{k0}] of node {missing[0]} (in-neighbor of target {target})"
        )
    eta = x_target.exact() + sigma_target.exact().scale(out_degree) - _xsum(two_hop[i] for i in target_in_neighbors)
    return _like(eta - x0_target.exact(), x_target)


def default_tau(x0: Vec2) -> float:
    return DEFAULT_TAU_SCALE * max(1.0, float(x0.norm_inf()))


@dataclass(frozen=True)
class TargetCheck:
    target: int
    c: Vec2
    tau: float
    passed: bool
    checkers: tuple[int, ...]
    agree: bool


@dataclass(frozen=True)
class CheckReport:
    k0: int
    targets: Mapping[int, TargetCheck]
    global_residual: Vec2
    restart_sum: Vec2

    @property
    def all_pass(self) -> bool:
        return all(t.passed for t in self.targets.values())

    @property
    def failed(self) -> list[int]:
        return [i for i, t in sorted(self.targets.items()) if not t.passed]

    def to_dict(self) -> dict:
        return {
            "k0": self.k0,
            "targets": [
                {
                    "target": t.target,
                    "c": list(t.c),
                    "tau": t.tau,
                    "verdict": "pass" if t.passed else "fail",
                    "checkers": list(t.checkers),
                    "agree": t.agree,
                }
                for _, t in sorted(self.targets.items())
            ],
            "global_residual": list(self.global_residual),
            "restart_sum": list(self.restart_sum),
        }


def atc_epoch(
    k0: int,
    x: Mapping[int, Vec2],
    sigma: Mapping[int, Vec2],
    sigma1: Mapping[int, Vec2],
    g: DirectedGraph,
    tau: float | None = None,
    initial: Mapping[int, Vec2] | None = None,
) -> CheckReport:
    """Run every (checker, target) consistency check at epoch ``k0``.

    ``x`` and ``sigma`` are the states and running sums at ``k0``; ``sigma1``
    holds each node's round-0 broadcast, from which checkers recover initial
    states. The two-hop broadcast delivers ``sigma`` of every in-neighbor of
    a checker's in-neighbors.
    """
    targets = {}
    for i in g.nodes:
        results = []
        checkers = g.out_neighbors(i)
        for j in checkers:
            info = two_hop_view(g, j).neighbors[i]
            two_hop = {ii: sigma[ii] for ii in info.in_neighbors}
            x0 = recover_initial(sigma1[i], info.out_degree)
            c = atc_evaluate(j, i, k0, x[i], sigma[i], info.out_degree, two_hop, info.in_neighbors, x0)
            results.append((c, x0))
        c, x0 = results[0]
        agree = all(r[0] == c for r in results)
        t = default_tau(x0) if tau is None else tau
        passed = agree and float(c.norm_inf()) <= t
        targets[i] = TargetCheck(i, c, t, passed, tuple(checkers), agree)
    xs = [x[j] for j in g.nodes]
    if initial is None:
        initial = {j: _like(recover_initial(sigma1[j], g.out_degree(j)), x[j]) for j in g.nodes}
    restart = xs[0]
    for v in xs[1:]:
        restart = restart + v
    residual = global_invariant_residual(xs, [initial[j] for j in g.nodes])
    return CheckReport(k0, targets, residual, restart)


def verify_restart_soundness(xs: Sequence[Vec2], values: Sequence, tol: float | None = None) -> bool:
    """Does the state mass at the check epoch still equal the initial mass?"""
    total = _xsum(xs)
    target = Vec2(sum(Fraction(v) for v in values), Fraction(len(values)))
    if tol is None:
        tol = 1e-9 * (1 + sum(abs(float(v)) for v in values))
    return float((total - target).norm_inf()) <= tol


def local_deviations(states: Sequence[NodeState]) -> dict[int, Vec2]:
    """``eta_j[k] - x_j[0]`` for every node, from an omniscient snapshot.

    General mode uses the per-edge running sums held by senders; running-sum
    mode uses the single per-node sums.
    """
    by_id = {s.id: s for s in states}
    out = {}
    for s in states:
        if s.mode == GENERAL:
            sent = [s.sigma_out[l] for l in sorted(s.sigma_out)]
            received = [by_id[i].sigma_out[s.id] for i in s.in_neighbors]
            eta = local_invariant_eta_general(s.x.exact(), sent, received)
        else:
            eta = local_invariant_eta_ratio(s.x.exact(), s.sigma, s.out_degree, [by_id[i].sigma for i in s.in_neighbors])
        out[s.id] = _like(eta - s.x0.exact(), s.x)
    return out


def snapshot_deviations(
    g: DirectedGraph,
    mode: str,
    xs: Sequence[Vec2],
    sigmas: Sequence[Vec2],
    x0s: Sequence[Vec2],
) -> list[Vec2]:
    """``eta_j[k] - x_j[0]`` per node from a recorded round.

    ``sigmas`` is laid out as in traces: one entry per node in running-sum
    mode, one per edge in ``g.sorted_edges()`` order in general mode.
    """
    out = []
    if mode == GENERAL:
        by_edge = dict(zip(g.sorted_edges(), sigmas))
        for j in g.nodes:
            sent = [by_edge[(l, j)] for l in g.out_neighbors(j)]
            received = [by_edge[(j, i)] for i in g.in_neighbors(j)]
            eta = local_invariant_eta_general(xs[j - 1].exact(), sent, received)
            out.append(_like(eta - x0s[j - 1].exact(), xs[j - 1]))
    else:
        for j in g.nodes:
            eta = local_invariant_eta_ratio(
                xs[j - 1].exact(), sigmas[j - 1], g.out_degree(j), [sigmas[i - 1] for i in g.in_neighbors(j)]
            )
            out.append(_like(eta - x0s[j - 1].exact(), xs[j - 1]))
    return out
