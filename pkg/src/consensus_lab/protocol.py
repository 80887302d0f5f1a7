"""Per-node averaging state machine.

Two execution modes share the same update arithmetic:

``general``
    Each active out-neighbor ``l`` receives ``w_lj[k] * x_j[k]``; the sender
    keeps a running sum per out-edge.
``ratio_running_sum``
    Static ratio-consensus weights. Each node keeps a single running sum
    ``sigma_j`` and broadcasts its cumulative value; receivers recover the
    round's mass as the difference of consecutive broadcasts.

Running sums are held exactly even in float mode (as
:class:`~consensus_lab.dyadic.Dyadic`). Every increment is a float payload, so
the difference of two consecutive sums converts back to that payload without
rounding and both modes produce bit-identical states.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence, Union

from .dyadic import Dyadic
from .graph import DirectedGraph

Number = Union[float, Fraction, Dyadic]

GENERAL = "general"
RATIO_RUNNING_SUM = "ratio_running_sum"
MODES = (GENERAL, RATIO_RUNNING_SUM)

Z_FLOOR = 1e-300


class ProtocolError(ValueError):
    """A transition was called with inputs inconsistent with the node's mode or topology."""


class DegenerateStateError(ArithmeticError):
    """The denominator state is too close to zero to form a ratio."""


@dataclass(frozen=True, slots=True)
class Vec2:
    """The pair ``[y, z]`` carried by states, payloads and running sums."""

    y: Number
    z: Number

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.y - other.y, self.z - other.z)

    def __neg__(self) -> "Vec2":
        return Vec2(-self.y, -self.z)

    def __iter__(self):
        yield self.y
        yield self.z

    def scale(self, w: Number) -> "Vec2":
        return Vec2(w * self.y, w * self.z)

    def norm_inf(self) -> Number:
        return max(abs(self.y), abs(self.z))

    def exact(self) -> "Vec2":
        """Same value with no rounding left: floats become Dyadic, ints Fraction."""
        return Vec2(_exact(self.y), _exact(self.z))

    def to_float(self) -> "Vec2":
        return Vec2(float(self.y), float(self.z))


def _exact(v):
    if isinstance(v, float):
        return Dyadic.from_float(v)
    if isinstance(v, int):
        return Fraction(v)
    return v


ZERO = Vec2(Fraction(0), Fraction(0))
DYADIC_ZERO = Vec2(Dyadic(0), Dyadic(0))


def vec_sum(vs: Sequence[Vec2] | Mapping[int, Vec2], start: Vec2 = ZERO) -> Vec2:
    """Sum in ascending key (or list) order."""
    items = [vs[k] for k in sorted(vs)] if isinstance(vs, Mapping) else list(vs)
    total = start
    for v in items:
        total = total + v
    return total


def _lower(v: Vec2, exact: bool) -> Vec2:
    return v if exact else v.to_float()


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    round: int
    payload: Vec2


@dataclass(frozen=True)
class NodeState:
    id: int
    mode: str
    exact: bool
    x: Vec2
    x0: Vec2
    k: int
    out_neighbors: tuple[int, ...]
    in_neighbors: tuple[int, ...]
    # ratio_running_sum: sigma_j[k]; general: unused (ZERO)
    sigma: Vec2 = ZERO
    # general: sigma_lj[k] per out-neighbor l
    sigma_out: Mapping[int, Vec2] = field(default_factory=dict)
    # ratio_running_sum: last cumulative sigma_i received per in-neighbor
    sigma_in: Mapping[int, Vec2] = field(default_factory=dict)

    @property
    def out_degree(self) -> int:
        return len(self.out_neighbors)


def init_node(j: int, value: Number, g: DirectedGraph, mode: str = GENERAL, exact: bool = False) -> NodeState:
    """Node ``j`` starting from ``x_j[0] = [value, 1]`` with all running sums at zero."""
    if mode not in MODES:
        raise ProtocolError(f"unknown mode {mode!r}")
    x0 = Vec2(Fraction(value), Fraction(1)) if exact else Vec2(float(value), 1.0)
    zero = ZERO if exact else DYADIC_ZERO
    return NodeState(
        id=j,
        mode=mode,
        exact=exact,
        x=x0,
        x0=x0,
        k=0,
        out_neighbors=g.out_neighbors(j),
        in_neighbors=g.in_neighbors(j),
        sigma=zero,
        sigma_out={l: zero for l in g.out_neighbors(j)} if mode == GENERAL else {},
        sigma_in={i: zero for i in g.in_neighbors(j)} if mode == RATIO_RUNNING_SUM else {},
    )


def emit(state: NodeState, column: Mapping[int, Number], active: frozenset[int] | set[int]) -> tuple[NodeState, list[Message]]:
    """Send round-``k`` messages and advance the sender-side running sums.

    ``column`` is column ``j`` of W[k] (receiver -> weight, diagonal included).
    """
    j = state.id
    stray = set(active) - set(state.out_neighbors)
    if stray:
        raise ProtocolError(f"node {j}: active set {sorted(stray)} outside out-neighborhood")

    if state.mode == RATIO_RUNNING_SUM:
        w = column.get(j)
        if set(active) != set(state.out_neighbors) or set(column) != set(state.out_neighbors) | {j}:
            raise ProtocolError(f"node {j}: running-sum mode needs every out-edge active")
        expected = Fraction(1, 1 + state.out_degree) if state.exact else 1.0 / (1 + state.out_degree)
        if any(column[l] != expected for l in [*state.out_neighbors, j]):
            raise ProtocolError(f"node {j}: running-sum mode needs the static 1/(1+D_j+) weights")
        sigma = state.sigma + state.x.scale(w).exact()
        msgs = [Message(j, l, state.k, sigma) for l in state.out_neighbors]
        return replace(state, sigma=sigma), msgs

    sigma_out = dict(state.sigma_out)
    msgs = []
    for l in sorted(active):
        payload = state.x.scale(column[l])
        sigma_out[l] = sigma_out[l] + payload.exact()
        msgs.append(Message(j, l, state.k, payload))
    return replace(state, sigma_out=sigma_out), msgs


def apply_update(state: NodeState, inbox: Sequence[Message], self_weight: Number) -> NodeState:
    """Combine the retained self-share with the round's received mass.

    Senders are folded in ascending id order so runs are bit-reproducible.
    """
    j = state.id
    by_sender: dict[int, Message] = {}
    for m in inbox:
        if m.receiver != j:
            raise ProtocolError(f"node {j}: message addressed to {m.receiver}")
        if m.sender not in state.in_neighbors:
            raise ProtocolError(f"node {j}: message from unknown sender {m.sender}")
        if m.sender in by_sender:
            raise ProtocolError(f"node {j}: duplicate message from {m.sender} in round {m.round}")
        by_sender[m.sender] = m

    x = state.x.scale(self_weight)
    if state.mode != RATIO_RUNNING_SUM:
        for i in sorted(by_sender):
            x = x + by_sender[i].payload
        return replace(state, x=x, k=state.k + 1)
    sigma_in = dict(state.sigma_in)
    for i in sorted(by_sender):
        payload = by_sender[i].payload
        x = x + _lower(payload - sigma_in[i], state.exact)
        sigma_in[i] = payload
    return replace(state, x=x, k=state.k + 1, sigma_in=sigma_in)


def ratio(state_or_x: NodeState | Vec2, floor: float = Z_FLOOR) -> float | Fraction:
    """Local estimate ``y / z``."""
    x = state_or_x.x if isinstance(state_or_x, NodeState) else state_or_x
    if abs(x.z) < floor:
        raise DegenerateStateError(f"|z| = {float(abs(x.z))!r} below floor {floor!r}")
    return x.y / x.z
