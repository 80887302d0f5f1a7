"""Synchronous round engine and JSON-lines traces.

Each round ``k`` runs: snapshot of ``x[k]`` (and a consistency-check epoch
when due), all nodes emit, messages are delivered, all nodes update, then
fault events scheduled for round ``k`` corrupt the fresh ``x[k + 1]``.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import checks
from .dyadic import Dyadic
from .faults import FaultScript, apply_fault
from .graph import (
    DirectedGraph,
    EdgeSchedule,
    GraphError,
    always_on,
    graph_from_dict,
    is_strongly_connected,
    verify_joint_connectivity,
)
from .protocol import (
    GENERAL,
    MODES,
    RATIO_RUNNING_SUM,
    Z_FLOOR,
    DegenerateStateError,
    Message,
    NodeState,
    Vec2,
    apply_update,
    emit,
    init_node,
    ratio,
)
from .weights import BALANCED, RATIO_CONSENSUS, WeightScheme, weights_for_round

log = logging.getLogger(__name__)

TRACE_FORMAT_VERSION = "1.0"
RNG_ALGORITHM = "numpy.random.PCG64"
FULL_TRACE_MAX_N = 64
SPARSE_STRIDE = 10

ALWAYS_ON = "always_on"
RANDOM_SUBSET = "random_subset"
EXPLICIT = "explicit"


class ConfigError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


class TraceFormatError(ValueError):
    pass


class TraceVersionError(TraceFormatError):
    """Trace written under an unreadable format major version."""


class TraceCorruptionError(ValueError):
    def __init__(self, message: str, k: int | None = None, node: int | None = None):
        super().__init__(message)
        self.k = k
        self.node = node


@dataclass(frozen=True)
class Activation:
    kind: str = ALWAYS_ON
    p: float | None = None
    rounds: tuple = ()  # explicit: one {sender: [receivers]} map per round

    def __post_init__(self):
        if self.kind not in (ALWAYS_ON, RANDOM_SUBSET, EXPLICIT):
            raise ConfigError(f"unknown activation kind {self.kind!r}")
        if self.kind == RANDOM_SUBSET and (self.p is None or not 0.0 <= self.p <= 1.0):
            raise ConfigError(f"activation probability must lie in [0, 1], got {self.p!r}")
        if self.kind == EXPLICIT and not self.rounds:
            raise ConfigError("explicit activation needs at least one round")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == RANDOM_SUBSET:
            d["p"] = self.p
        if self.kind == EXPLICIT:
            d["rounds"] = [dict(r) for r in self.rounds]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Activation":
        return cls(d.get("kind", ALWAYS_ON), d.get("p"), tuple(d.get("rounds", ())))


def activation_schedule(
    g: DirectedGraph,
    activation: Activation,
    seed: int,
    horizon: int,
    symmetric: bool = False,
) -> EdgeSchedule:
    """Active out-neighbor sets for rounds ``0..horizon-1``.

    ``random_subset`` keeps each out-edge independently with probability
    ``p``, drawing one uniform per edge per round (edges in ascending
    ``(sender, receiver)`` order) from PCG64 seeded with ``seed``. With
    ``symmetric`` set, one draw per unordered pair toggles both directions.
    Explicit schedules shorter than ``horizon`` repeat cyclically.
    """
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if activation.kind == ALWAYS_ON:
        return always_on(g, horizon)
    if activation.kind == EXPLICIT:
        given = EdgeSchedule.from_lists(g, activation.rounds)
        return EdgeSchedule(g, tuple(given.active[k % given.horizon] for k in range(horizon)))

    p = activation.p
    rng = np.random.Generator(np.random.PCG64(seed))
    if symmetric:
        units = sorted({(min(a, b), max(a, b)) for a, b in g.edges if (b, a) in g.edges})
    else:
        units = sorted((i, j) for j, i in g.edges)  # (sender, receiver)
    rounds = []
    for _ in range(horizon):
        keep = rng.random(len(units)) < p
        sets: list[set[int]] = [set() for _ in range(g.n)]
        for (a, b), on in zip(units, keep):
            if on:
                sets[a - 1].add(b)
                if symmetric:
                    sets[b - 1].add(a)
        rounds.append(tuple(frozenset(s) for s in sets))
    return EdgeSchedule(g, tuple(rounds))


def _num(v, exact: bool):
    if exact:
        return Fraction(v)
    return float(Fraction(v)) if isinstance(v, str) else float(v)


@dataclass(frozen=True)
class SimConfig:
    graph: DirectedGraph
    values: tuple
    rounds: int
    scheme: WeightScheme = WeightScheme(RATIO_CONSENSUS)
    mode: str = GENERAL
    seed: int = 0
    activation: Activation = Activation()
    faults: FaultScript = FaultScript()
    k_atc: int = 25
    k_conn: int = 10
    tau: float | None = None
    arithmetic: str = "float"
    z_floor: float = Z_FLOOR

    def __post_init__(self):
        g = self.graph
        if isinstance(self.scheme, str):
            object.__setattr__(self, "scheme", WeightScheme(self.scheme))
        object.__setattr__(self, "values", tuple(self.values))
        if len(self.values) != g.n:
            raise ConfigError(f"{len(self.values)} initial values for {g.n} nodes")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.arithmetic not in ("float", "rational"):
            raise ConfigError(f"arithmetic must be 'float' or 'rational', got {self.arithmetic!r}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.k_atc < 1 or self.k_conn < 1:
            raise ConfigError("k_atc and k_conn must be >= 1")
        if self.mode == RATIO_RUNNING_SUM and (
            self.activation.kind != ALWAYS_ON or self.scheme.kind != RATIO_CONSENSUS
        ):
            raise ConfigError("ratio_running_sum mode needs ratio_consensus weights and always_on activation")
        if self.scheme.kind == RATIO_CONSENSUS and self.activation.kind != ALWAYS_ON:
            raise ConfigError("ratio_consensus weights are static; use push_sum for partial activation")
        if self.arithmetic == "rational" and (g.n > 16 or self.rounds > 1000):
            raise ConfigError("rational arithmetic is limited to n <= 16 and rounds <= 1000")
        self.faults.validate_nodes(g.n)

    @property
    def exact(self) -> bool:
        return self.arithmetic == "rational"

    @property
    def average(self):
        vals = [Fraction(v) for v in self.values]
        avg = sum(vals) / len(vals)
        return avg if self.exact else float(avg)

    def to_dict(self) -> dict:
        return {
            "graph": self.graph.to_dict(),
            "values": [_enc(v) for v in self.values],
            "rounds": self.rounds,
            "scheme": self.scheme.kind,
            "mode": self.mode,
            "seed": self.seed,
            "activation": self.activation.to_dict(),
            "faults": self.faults.to_list(),
            "k_atc": self.k_atc,
            "k_conn": self.k_conn,
            "tau": self.tau,
            "arithmetic": self.arithmetic,
            "z_floor": self.z_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(
            graph=graph_from_dict(d["graph"]),
            values=tuple(d["values"]),
            rounds=int(d["rounds"]),
            scheme=WeightScheme(d.get("scheme", RATIO_CONSENSUS)),
            mode=d.get("mode", GENERAL),
            seed=int(d.get("seed", 0)),
            activation=Activation.from_dict(d.get("activation", {})),
            faults=FaultScript.from_list(d.get("faults", [])),
            k_atc=int(d.get("k_atc", 25)),
            k_conn=int(d.get("k_conn", 10)),
            tau=d.get("tau"),
            arithmetic=d.get("arithmetic", "float"),
            z_floor=float(d.get("z_floor", Z_FLOOR)),
        )


@dataclass
class RoundRecord:
    k: int
    x: list[Vec2]
    sigma: list[Vec2]  # running-sum mode: per node; general: per edge in sorted (receiver, sender) order
    r: list
    global_residual: Vec2
    faults: list[dict] = field(default_factory=list)
    messages: list[Message] | None = None


@dataclass
class Trace:
    config: SimConfig
    rounds: list[RoundRecord]
    reports: list[checks.CheckReport]
    warnings: list[str] = field(default_factory=list)
    final_states: list[NodeState] | None = None

    def record(self, k: int) -> RoundRecord:
        for rec in self.rounds:
            if rec.k == k:
                return rec
        raise KeyError(k)

    @property
    def last(self) -> RoundRecord:
        return self.rounds[-1]

    def max_ratio_error(self, rec: RoundRecord | None = None) -> float:
        rec = rec or self.last
        avg = float(self.config.average)
        return max(float("inf") if r is None else abs(float(r) - avg) for r in rec.r)


def _sigma_snapshot(states: Sequence[NodeState], g: DirectedGraph) -> list[Vec2]:
    if states[0].mode == RATIO_RUNNING_SUM:
        return [s.sigma for s in states]
    return [states[j - 1].sigma_out[l] for l, j in g.sorted_edges()]


def _ratio_or_none(x: Vec2, floor: float):
    try:
        return ratio(x, floor)
    except DegenerateStateError:
        return None


def _records_round(k: int, cfg: SimConfig) -> bool:
    if cfg.graph.n <= FULL_TRACE_MAX_N:
        return True
    return k <= 1 or k % SPARSE_STRIDE == 0 or k % cfg.k_atc == 0 or k == cfg.rounds


def run(
    config: SimConfig,
    map_fn: Callable = map,
    stop_when: Callable[[RoundRecord], bool] | None = None,
) -> Trace:
    """Execute ``config.rounds`` synchronous rounds.

    ``map_fn`` evaluates the per-node emit transitions; any order-preserving
    map (e.g. ``ThreadPoolExecutor.map``) gives the same trace. If
    ``stop_when`` accepts a recorded round ``k``, the run ends there and the
    returned trace's config is shortened to ``k`` rounds, so it replays as is.
    """
    g = config.graph
    if not is_strongly_connected(g):
        raise SimulationError("communication graph is not strongly connected")
    exact = config.exact
    schedule = activation_schedule(
        g, config.activation, config.seed, config.rounds, symmetric=config.scheme.kind == BALANCED
    )
    warnings = _a1_warnings(schedule, config)
    for w in warnings:
        log.warning(w)

    states = [init_node(j, _num(v, exact), g, config.mode, exact) for j, v in zip(g.nodes, config.values)]
    x0s = [s.x0 for s in states]
    sigma1: dict[int, Vec2] = {}
    records: list[RoundRecord] = []
    reports: list[checks.CheckReport] = []
    keep_messages = g.n <= FULL_TRACE_MAX_N
    fault_free = not config.faults.events
    z_warned = False
    static_cols = None
    if config.activation.kind == ALWAYS_ON and config.scheme.kind == RATIO_CONSENSUS:
        static_cols = weights_for_round(config.scheme, g, schedule.active[0], exact).columns()

    for k in range(config.rounds + 1):
        xs = [s.x for s in states]
        if fault_free and not z_warned:
            low = [j for j, x in enumerate(xs, start=1) if x.z <= 0]
            if low and any(xs[j - 1].z < 0 for j in low):
                raise SimulationError(f"round {k}: negative z at node {low[0]} in a fault-free run")
            if low:
                # only reachable by float underflow, e.g. a node starved of mass under an A1 violation
                z_warned = True
                warnings.append(f"round {k}: z underflowed to zero at node {low[0]}")
                log.warning(warnings[-1])
        rec = None
        if _records_round(k, config):
            rec = RoundRecord(
                k=k,
                x=xs,
                sigma=_sigma_snapshot(states, g),
                r=[_ratio_or_none(x, config.z_floor) for x in xs],
                global_residual=checks.global_invariant_residual(xs, x0s),
            )
            records.append(rec)
        if config.mode == RATIO_RUNNING_SUM and k > 0 and k % config.k_atc == 0:
            reports.append(
                checks.atc_epoch(
                    k,
                    {s.id: s.x for s in states},
                    {s.id: s.sigma for s in states},
                    sigma1,
                    g,
                    config.tau,
                    initial={s.id: s.x0 for s in states},
                )
            )
        if k == config.rounds:
            break
        if rec is not None and stop_when is not None and k > 0 and stop_when(rec):
            config = replace(config, rounds=k)
            break

        cols = static_cols or weights_for_round(config.scheme, g, schedule.active[k], exact).columns()
        active = schedule.active[k]
        emitted = list(map_fn(lambda s: emit(s, cols[s.id - 1], active[s.id - 1]), states))
        states = [e[0] for e in emitted]
        inbox: list[list[Message]] = [[] for _ in range(g.n)]
        sent = []
        for _, msgs in emitted:
            for m in msgs:
                inbox[m.receiver - 1].append(m)
                sent.append(m)
        if k == 0 and config.mode == RATIO_RUNNING_SUM:
            sigma1 = {s.id: s.sigma for s in states}
        states = [apply_update(s, inbox[s.id - 1], cols[s.id - 1][s.id]) for s in states]
        applied = []
        for ev in config.faults.at(k):
            states[ev.node - 1] = apply_fault(states[ev.node - 1], ev)
            applied.append(ev.to_dict())
        if rec is not None:
            rec.faults = applied
            rec.messages = sent if keep_messages else None

    return Trace(config, records, reports, warnings, states)


def _a1_warnings(schedule: EdgeSchedule, cfg: SimConfig) -> list[str]:
    if cfg.activation.kind == ALWAYS_ON:
        return []
    usable = (schedule.horizon // cfg.k_conn) * cfg.k_conn
    if usable == 0:
        return [f"horizon {schedule.horizon} shorter than K_conn={cfg.k_conn}; joint connectivity not checked"]
    if not verify_joint_connectivity(schedule, cfg.k_conn, usable):
        return [f"activation schedule violates joint connectivity over K_conn={cfg.k_conn} windows; convergence not guaranteed"]
    return []


# -- serialization ----------------------------------------------------------

def _enc(v):
    if isinstance(v, (Fraction, Dyadic)):
        return str(v)
    if v is None or isinstance(v, str):
        return v
    return float(v)


def _dec(v):
    if isinstance(v, str):
        try:
            return Fraction(v)
        except ValueError as exc:
            raise TraceFormatError(f"bad number {v!r}") from exc
    return v


def _encv(v: Vec2) -> list:
    return [_enc(v.y), _enc(v.z)]


def _decv(a) -> Vec2:
    if not isinstance(a, list) or len(a) != 2:
        raise TraceFormatError(f"expected a [y, z] pair, got {a!r}")
    return Vec2(_dec(a[0]), _dec(a[1]))


def _report_to_json(rep: checks.CheckReport) -> dict:
    d = rep.to_dict()
    for t in d["targets"]:
        t["c"] = [_enc(v) for v in t["c"]]
    d["global_residual"] = [_enc(v) for v in d["global_residual"]]
    d["restart_sum"] = [_enc(v) for v in d["restart_sum"]]
    return d


def _report_from_json(d: dict) -> checks.CheckReport:
    targets = {}
    for t in d["targets"]:
        targets[int(t["target"])] = checks.TargetCheck(
            int(t["target"]),
            _decv(t["c"]),
            float(t["tau"]),
            t["verdict"] == "pass",
            tuple(t["checkers"]),
            bool(t["agree"]),
        )
    return checks.CheckReport(int(d["k0"]), targets, _decv(d["global_residual"]), _decv(d["restart_sum"]))


def header_dict(trace: Trace) -> dict:
    return {
        "record": "header",
        "format_version": TRACE_FORMAT_VERSION,
        "rng": RNG_ALGORITHM,
        "config": trace.config.to_dict(),
        "warnings": list(trace.warnings),
    }


def trace_lines(trace: Trace) -> Iterable[str]:
    yield json.dumps(header_dict(trace))
    reports = {rep.k0: rep for rep in trace.reports}
    for rec in trace.rounds:
        d = {
            "record": "round",
            "k": rec.k,
            "x": [_encv(v) for v in rec.x],
            "sigma": [_encv(v) for v in rec.sigma],
            "r": [_enc(v) for v in rec.r],
            "global_residual": _encv(rec.global_residual),
            "faults": rec.faults,
        }
        if rec.messages is not None:
            d["messages"] = [[m.sender, m.receiver, _encv(m.payload)] for m in rec.messages]
        yield json.dumps(d)
        if rec.k in reports:
            yield json.dumps({"record": "atc", **_report_to_json(reports[rec.k])})


def dumps_trace(trace: Trace) -> str:
    return "".join(line + "\n" for line in trace_lines(trace))


def dump_trace(trace: Trace, path: str | Path) -> None:
    with open(path, "w") as fh:
        for line in trace_lines(trace):
            fh.write(line + "\n")


def _check_version(version) -> None:
    major = str(version).split(".")[0]
    if major != TRACE_FORMAT_VERSION.split(".")[0]:
        raise TraceVersionError(
            f"trace format version {version} is not readable by this release (expects {TRACE_FORMAT_VERSION})"
        )


def parse_trace(text: str) -> Trace:
    """Decode JSON-lines trace text without validating its contents."""
    lines = [ln for ln in io.StringIO(text).read().splitlines() if ln.strip()]
    if not lines:
        raise TraceFormatError("empty trace file")
    try:
        objs = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"malformed trace line: {exc}") from exc
    head = objs[0]
    if head.get("record") != "header":
        raise TraceFormatError("first record is not a header")
    _check_version(head.get("format_version"))
    try:
        config = SimConfig.from_dict(head["config"])
    except (KeyError, TypeError, ValueError, GraphError) as exc:
        raise TraceFormatError(f"bad config in header: {exc}") from exc
    n = config.graph.n
    rounds, reports = [], []
    for obj in objs[1:]:
        kind = obj.get("record")
        try:
            if kind == "round":
                rec = RoundRecord(
                    k=int(obj["k"]),
                    x=[_decv(v) for v in obj["x"]],
                    sigma=[_decv(v) for v in obj["sigma"]],
                    r=[_dec(v) for v in obj["r"]],
                    global_residual=_decv(obj["global_residual"]),
                    faults=list(obj.get("faults", [])),
                    messages=(
                        [Message(int(s), int(r), int(obj["k"]), _decv(p)) for s, r, p in obj["messages"]]
                        if "messages" in obj
                        else None
                    ),
                )
                if len(rec.x) != n or len(rec.r) != n:
                    raise TraceFormatError(f"round {rec.k}: expected {n} node entries")
                rounds.append(rec)
            elif kind == "atc":
                reports.append(_report_from_json(obj))
            else:
                raise TraceFormatError(f"unknown record type {kind!r}")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, TraceFormatError):
                raise
            raise TraceFormatError(f"malformed {kind} record: {exc}") from exc
    return Trace(config, rounds, reports, list(head.get("warnings", [])))


def expected_rounds(cfg: SimConfig) -> list[int]:
    return [k for k in range(cfg.rounds + 1) if _records_round(k, cfg)]


def validate_trace(trace: Trace) -> None:
    """Structural completeness plus recorded residual and ratio consistency."""
    cfg = trace.config
    ks = [rec.k for rec in trace.rounds]
    want = expected_rounds(cfg)
    if ks != want[: len(ks)]:
        raise TraceFormatError(f"round records out of order or missing near k={_first_gap(ks, want)}")
    if len(ks) < len(want):
        raise TraceFormatError(f"trace ends at round {ks[-1] if ks else None}, expected rounds up to {cfg.rounds}")
    x0s = trace.rounds[0].x
    for rec in trace.rounds:
        res = checks.global_invariant_residual(rec.x, x0s)
        if res != rec.global_residual:
            raise TraceCorruptionError(
                f"round {rec.k}: recorded global residual {list(rec.global_residual)} "
                f"does not match the recorded states ({list(res)})",
                k=rec.k,
            )
        for j, (x, r) in enumerate(zip(rec.x, rec.r), start=1):
            if _ratio_or_none(x, cfg.z_floor) != r:
                raise TraceCorruptionError(f"round {rec.k}, node {j}: ratio {r!r} does not match state", k=rec.k, node=j)


def _first_gap(ks, want):
    for a, b in zip(ks, want):
        if a != b:
            return b
    return want[len(ks)] if len(ks) < len(want) else None


def replay(path: str | Path) -> Trace:
    """Load a trace file and verify its recorded residuals."""
    trace = parse_trace(Path(path).read_text())
    validate_trace(trace)
    return trace


def first_divergence(a: Trace, b: Trace) -> tuple[int, int] | None:
    """First (round, node) where two traces' states differ bitwise, else None."""
    for ra, rb in zip(a.rounds, b.rounds):
        for j, (xa, xb) in enumerate(zip(ra.x, rb.x), start=1):
            if xa != xb or type(xa.y) is not type(xb.y):
                return ra.k, j
    if len(a.rounds) != len(b.rounds):
        return min(len(a.rounds), len(b.rounds)), 0
    return None


def recompute_reports(trace: Trace) -> list[checks.CheckReport]:
    """Re-derive every consistency-check report from the recorded rounds alone.

    Checkers see only what the protocol gives them: recorded states and
    running sums at the epoch, plus the round-1 running sums.
    """
    cfg = trace.config
    if cfg.mode != RATIO_RUNNING_SUM:
        return []
    g = cfg.graph
    recs = {rec.k: rec for rec in trace.rounds}
    if 1 not in recs:
        return []
    sigma1 = dict(zip(g.nodes, recs[1].sigma))
    out = []
    for k0 in range(cfg.k_atc, cfg.rounds + 1, cfg.k_atc):
        rec = recs.get(k0)
        if rec is None:
            raise TraceFormatError(f"no round record at check epoch {k0}")
        out.append(
            checks.atc_epoch(
                k0,
                dict(zip(g.nodes, rec.x)),
                dict(zip(g.nodes, rec.sigma)),
                sigma1,
                g,
                cfg.tau,
                initial=dict(zip(g.nodes, recs[0].x)),
            )
        )
    return out


def report_json(rep: checks.CheckReport) -> dict:
    return _report_to_json(rep)
