"""Scripted computational faults.

An event scheduled for round ``r`` acts on the state produced by round ``r``'s
update, i.e. on ``x_i[r + 1]``, before that state is emitted. An additive
event at round ``r`` is therefore visible to every consistency check at an
epoch ``k0 > r``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .protocol import ZERO, NodeState, Vec2

ADDITIVE = "additive"
STUBBORN = "stubborn"


class FaultError(ValueError):
    pass


@dataclass(frozen=True)
class FaultEvent:
    kind: str
    node: int
    round: int = 0  # additive: the round; stubborn: first pinned round
    e: Vec2 | None = None
    until: int | None = None  # stubborn: last pinned round, None = forever

    def __post_init__(self):
        if self.kind not in (ADDITIVE, STUBBORN):
            raise FaultError(f"unknown fault kind {self.kind!r}")
        if self.kind == ADDITIVE and self.e is None:
            raise FaultError("additive fault needs an error vector")
        if self.round < 0 or (self.until is not None and self.until < self.round):
            raise FaultError(f"bad fault window [{self.round}, {self.until}]")

    def covers(self, k: int) -> bool:
        if self.kind == ADDITIVE:
            return k == self.round
        return self.round <= k and (self.until is None or k <= self.until)

    def to_dict(self) -> dict:
        if self.kind == ADDITIVE:
            return {"kind": ADDITIVE, "node": self.node, "round": self.round, "e": [_jnum(v) for v in self.e]}
        return {"kind": STUBBORN, "node": self.node, "from": self.round, "to": self.until}


def _jnum(v):
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else int(v)
    return v


def _pnum(v):
    return Fraction(v) if isinstance(v, str) else v


def additive(node: int, round: int, e: Sequence) -> FaultEvent:
    return FaultEvent(ADDITIVE, node, round, Vec2(_pnum(e[0]), _pnum(e[1])))


def stubborn(node: int, start: int = 0, until: int | None = None) -> FaultEvent:
    return FaultEvent(STUBBORN, node, start, None, until)


@dataclass(frozen=True)
class FaultScript:
    events: tuple[FaultEvent, ...] = ()

    def __post_init__(self):
        evs = tuple(sorted(self.events, key=lambda ev: (ev.round, ev.node, ev.kind)))
        seen = set()
        for ev in evs:
            if ev.kind == ADDITIVE:
                if (ev.node, ev.round) in seen:
                    raise FaultError(f"two additive events for node {ev.node} at round {ev.round}")
                seen.add((ev.node, ev.round))
        object.__setattr__(self, "events", evs)

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def at(self, k: int) -> list[FaultEvent]:
        """Events acting at the end of round ``k``; stubborn pins come after additive errors."""
        hits = [ev for ev in self.events if ev.covers(k)]
        return sorted(hits, key=lambda ev: (ev.node, ev.kind != ADDITIVE))

    def validate_nodes(self, n: int) -> None:
        for ev in self.events:
            if not 1 <= ev.node <= n:
                raise FaultError(f"fault targets node {ev.node} outside 1..{n}")

    def to_list(self) -> list[dict]:
        return [ev.to_dict() for ev in self.events]

    @classmethod
    def from_list(cls, items: Iterable[dict]) -> "FaultScript":
        events = []
        for it in items:
            kind = it.get("kind")
            if kind == ADDITIVE:
                e = it["e"]
                events.append(FaultEvent(ADDITIVE, int(it["node"]), int(it["round"]), Vec2(_pnum(e[0]), _pnum(e[1]))))
            elif kind == STUBBORN:
                to = it.get("to")
                events.append(FaultEvent(STUBBORN, int(it["node"]), int(it.get("from", 0)), None, None if to is None else int(to)))
            else:
                raise FaultError(f"unknown fault kind {kind!r}")
        return cls(tuple(events))


def load_faults(path: str | Path) -> FaultScript:
    return FaultScript.from_list(json.loads(Path(path).read_text()))


def apply_fault(state: NodeState, ev: FaultEvent) -> NodeState:
    """Corrupt the state produced by round ``ev.round``'s update (``state.k == round + 1``)."""
    if ev.node != state.id:
        raise FaultError(f"event for node {ev.node} applied to node {state.id}")
    if not ev.covers(state.k - 1):
        raise FaultError(f"event {ev.to_dict()} does not act on node {state.id} at state index {state.k}")
    if ev.kind == ADDITIVE:
        e = ev.e.exact() if state.exact else ev.e.to_float()
        return replace(state, x=state.x + e)
    return replace(state, x=state.x0)


def net_injected_error(script: FaultScript, node: int, up_to: int) -> Vec2:
    """Sum of additive errors on ``node`` scheduled before round ``up_to``."""
    total = ZERO
    for ev in script.events:
        if ev.kind == ADDITIVE and ev.node == node and ev.round < up_to:
            total = total + ev.e
    return total
