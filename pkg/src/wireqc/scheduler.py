"""Compile gate programs into validated control timelines.

Instructions run one after another on the bus, separated by a guard gap.
Memory modes are tracked by their rephasing reference: a detuning reversal
at F maps every reference v to 2F - v and toggles a shared parity. A mode can
be handed to a node only while the parity is odd (the memory emits the
time-reversed self-mode ending at v) and v leaves a full self-mode window.
"""

from __future__ import annotations

import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence, Union

from wireqc.errors import AddressingError, ReachabilityError, SchedulingError
from wireqc.events import ControlEvent, ReverseQMDetunings, SetNodeDetuning, SetWaveguideCoupling, sort_events
from wireqc.memory import SELF_MODE_SPAN, selective_retrieval_schedule
from wireqc.model import (
    DISPERSIVE_MARGIN,
    T2_BUDGET_FRACTION,
    QCSpec,
    Topology,
    ensemble_coupling,
)

GUARD_FRACTION = 0.1  # guard gap in units of 1/Gamma
PARALLEL_SEPARATION = 100.0
IDLE_STAGGER = 0.1
# a node counts as using the bus when |offset| < ACTIVE_FRACTION * park detuning
ACTIVE_FRACTION = 0.1
# gate detunings stay below MAX_GATE_FRACTION * park detuning
MAX_GATE_FRACTION = 0.01
LADDER_SLACK = 1.01
ASSUMPTIONS = ("independent per-node detuning control",)


# ---------------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transfer:
    """Move qubit ``qubit`` (k-th mode to rephase) from the memory into ``node``."""

    qubit: int
    node: int
    kind = "Transfer"


@dataclass(frozen=True)
class ISwap:
    a: int
    b: int
    kind = "ISwap"

    @property
    def fraction(self) -> float:
        return 1.0


@dataclass(frozen=True)
class SqrtISwap:
    a: int
    b: int
    kind = "SqrtISwap"

    @property
    def fraction(self) -> float:
        return 0.5


@dataclass(frozen=True)
class SingleQubitExternal:
    """Opaque single-qubit operation; the waveguide is coupled for its duration."""

    node: int
    rotation: str
    duration: float | None = None
    kind = "SingleQubitExternal"


PairGate = Union[ISwap, SqrtISwap]


@dataclass(frozen=True)
class ParallelBlock:
    gates: tuple
    kind = "ParallelBlock"

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        seen: set[int] = set()
        for gate in self.gates:
            if not isinstance(gate, (ISwap, SqrtISwap)):
                raise SchedulingError("parallel blocks hold two-node gates only")
            for n in (gate.a, gate.b):
                if n in seen:
                    raise SchedulingError(f"node {n} appears twice in a parallel block")
                seen.add(n)


Instruction = Union[Transfer, ISwap, SqrtISwap, SingleQubitExternal, ParallelBlock]


@dataclass(frozen=True)
class Program:
    instructions: tuple = ()
    modes: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))

    @property
    def mode_count(self) -> int:
        used = [i.qubit for i in self.instructions if isinstance(i, Transfer)]
        return self.modes if self.modes is not None else max(used, default=0)


@dataclass(frozen=True)
class StorageLayout:
    """Rephasing references of the stored qubits when the program starts.

    ``references[k-1]`` is the absorption onset of qubit k in the storage
    clock; ``start`` is the time storage is complete.
    """

    references: tuple
    start: float

    @classmethod
    def uniform(cls, M: int, spacing: float, start: float | None = None) -> "StorageLayout":
        # qubit 1 rephases first, so it was stored last
        refs = tuple((M - k) * spacing for k in range(1, M + 1))
        if start is None:
            start = (M - 1) * spacing
        return cls(refs, start)

    @classmethod
    def from_onsets(cls, onsets: Sequence[float], start: float) -> "StorageLayout":
        return cls(tuple(sorted(onsets, reverse=True)), start)


def default_layout(spec: QCSpec, M: int) -> StorageLayout:
    Gamma = ensemble_coupling(spec.memory_node())
    window = SELF_MODE_SPAN / Gamma
    spacing = window + 4 / Gamma
    if M == 0:
        return StorageLayout((), 0.0)
    return StorageLayout.uniform(M, spacing, (M - 1) * spacing + window + 2 / Gamma)


# ---------------------------------------------------------------------------
# Timelines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlTimeline:
    events: tuple
    start: float
    end: float
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def duration(self) -> float:
        return self.end - self.start

    def __len__(self) -> int:
        return len(self.events)


def idle_detuning(spec: QCSpec, node_id: int) -> float:
    """Parking offset, staggered per node so parked nodes do not exchange."""
    rank = [n.node_id for n in spec.nodes].index(node_id)
    return spec.node(node_id).park_detuning * (1 + IDLE_STAGGER * rank)


def pair_frequency(spec: QCSpec, a: int, b: int, delta: float) -> float:
    """Exchange frequency 2 G_a G_b / delta of two nodes at common detuning ``delta``."""
    return 2 * spec.node(a).collective_coupling * spec.node(b).collective_coupling / abs(delta)


def guard_gap(spec: QCSpec) -> float:
    return GUARD_FRACTION / ensemble_coupling(spec.memory_node())


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectSameBus:
    bus: int


@dataclass(frozen=True)
class CrossBus:
    path: tuple

    @property
    def length(self) -> int:
        return len(self.path) - 1


@dataclass(frozen=True)
class Unreachable:
    pass


def topology_reachability(topology: Topology, a: int, b: int):
    """Same bus, a path of bus links, or no connection."""
    bus_a = topology.bus_of(a)
    bus_b = topology.bus_of(b)
    if bus_a == bus_b:
        return DirectSameBus(bus_a)
    adj = topology.adjacency()
    prev = {bus_a: None}
    queue = deque([bus_a])
    while queue:
        cur = queue.popleft()
        for nxt in sorted(adj.get(cur, ())):
            if nxt not in prev:
                prev[nxt] = cur
                queue.append(nxt)
    if bus_b not in prev:
        return Unreachable()
    path = [bus_b]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return CrossBus(tuple(reversed(path)))


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------


class _MemoryTrack:
    def __init__(self, layout: StorageLayout):
        self.refs = {k: v for k, v in enumerate(layout.references, start=1)}
        self.odd = False
        self.used: set[int] = set()

    def flip(self, F: float) -> None:
        self.refs = {k: 2 * F - v for k, v in self.refs.items()}
        self.odd = not self.odd


class _Compiler:
    def __init__(self, spec: QCSpec, layout: StorageLayout):
        self.spec = spec
        self.topology = spec.topology
        self.memory = spec.memory_node()
        self.Gamma = ensemble_coupling(self.memory)
        self.window = SELF_MODE_SPAN / self.Gamma
        self.gap = guard_gap(spec)
        self.track = _MemoryTrack(layout)
        self.events: list[ControlEvent] = []
        self.start = layout.start
        self.now = layout.start
        self.max_gate = min(
            MAX_GATE_FRACTION * n.park_detuning for n in spec.processing_nodes
        ) if spec.processing_nodes else math.inf

    def emit(self, time: float, action, origin: str) -> None:
        self.events.append(ControlEvent(time, action, origin))

    def prologue(self) -> None:
        self.emit(self.start, SetWaveguideCoupling(0.0), "prologue")
        for node in self.spec.nodes:
            self.emit(self.start, SetNodeDetuning(node.node_id, idle_detuning(self.spec, node.node_id)), "prologue")
        # instructions must not tie with the parking events
        self.now = self.start + self.gap

    def processing(self, node_id: int) -> None:
        node = self.spec.node(node_id)
        if node.is_memory:
            raise AddressingError(f"node {node_id} is the memory node")

    def same_bus(self, a: int, b: int) -> None:
        reach = topology_reachability(self.topology, a, b)
        if not isinstance(reach, DirectSameBus):
            raise ReachabilityError(f"nodes {a} and {b} do not share a bus: {reach}")

    # -- instructions ------------------------------------------------------

    def transfer(self, ins: Transfer, origin: str) -> None:
        self.processing(ins.node)
        if self.topology.bus_of(ins.node) != self.topology.bus_of(self.memory.node_id):
            raise ReachabilityError(f"node {ins.node} is not on the memory bus")
        track = self.track
        if ins.qubit not in track.refs:
            raise AddressingError(f"qubit {ins.qubit} outside 1..{len(track.refs)}")
        if ins.qubit in track.used:
            raise SchedulingError(f"qubit {ins.qubit} was already transferred")
        qm = self.memory.node_id
        now = self.now
        if track.odd and track.refs[ins.qubit] < now + self.window:
            self.emit(now, ReverseQMDetunings(qm), origin)
            track.flip(now)
        if not track.odd:
            F = max(now, track.refs[ins.qubit] + self.window)
            self.emit(F, ReverseQMDetunings(qm), origin)
            track.flip(F)
        v = track.refs[ins.qubit]
        earlier = [r for k, r in track.refs.items() if k not in track.used and k != ins.qubit and r <= v]
        t_eq = max(now, v - self.window)
        if earlier:
            t_eq = max(t_eq, (max(earlier) + v) / 2)
        events = selective_retrieval_schedule(
            1, [v / 2], self.spec, t_prime=now, target=ins.node, guard=v - t_eq, origin=origin, include_start=False
        )
        for ev in events:
            if isinstance(ev.action, SetNodeDetuning) and ev.action.value != 0.0:
                ev = ControlEvent(ev.time, SetNodeDetuning(ev.action.node_id, idle_detuning(self.spec, ev.action.node_id)), origin)
            self.events.append(ev)
        track.used.add(ins.qubit)
        self.now = v + self.gap

    def gate_detuning(self, a: int, b: int) -> float:
        na, nb = self.spec.node(a), self.spec.node(b)
        if not math.isclose(na.collective_coupling, nb.collective_coupling, rel_tol=1e-12):
            raise SchedulingError(f"nodes {a} and {b} have unequal collective couplings")
        delta = max(abs(na.detuning_profile.delta), abs(nb.detuning_profile.delta))
        if delta < DISPERSIVE_MARGIN * na.collective_coupling:
            raise SchedulingError(f"working detuning of nodes {a}, {b} violates the dispersive margin")
        return delta

    def pair_gates(self, gates: Sequence[PairGate], origins: Sequence[str]) -> None:
        for gate in gates:
            if gate.a == gate.b:
                raise SchedulingError("a gate needs two distinct nodes")
            self.processing(gate.a)
            self.processing(gate.b)
            self.same_bus(gate.a, gate.b)
        deltas = []
        for j, gate in enumerate(gates):
            base = self.gate_detuning(gate.a, gate.b)
            if j == 0:
                delta = base
            else:
                prev_gate = gates[j - 1]
                step = PARALLEL_SEPARATION * max(
                    pair_frequency(self.spec, prev_gate.a, prev_gate.b, deltas[-1]),
                    pair_frequency(self.spec, gate.a, gate.b, deltas[-1]),
                )
                delta = max(base, deltas[-1] + LADDER_SLACK * step)
            if delta > self.max_gate:
                raise SchedulingError("parallel pairs cannot be separated within the dispersive window")
            deltas.append(delta)
        start = self.now
        end = start
        for gate, delta, origin in zip(gates, deltas, origins):
            t_gate = gate.fraction * math.pi / pair_frequency(self.spec, gate.a, gate.b, delta)
            for n in (gate.a, gate.b):
                self.emit(start, SetNodeDetuning(n, delta), origin)
                self.emit(start + t_gate, SetNodeDetuning(n, idle_detuning(self.spec, n)), origin)
            end = max(end, start + t_gate)
        self.now = end + self.gap

    def single(self, ins: SingleQubitExternal, origin: str) -> None:
        self.spec.node(ins.node)
        duration = self.window if ins.duration is None else ins.duration
        if duration <= 0:
            raise SchedulingError("single-qubit placeholder needs a positive duration")
        self.emit(self.now, SetWaveguideCoupling(self.spec.port.gamma1), origin)
        self.emit(self.now + duration, SetWaveguideCoupling(0.0), origin)
        self.now += duration + self.gap


def compile(program: Program, spec: QCSpec, layout: StorageLayout | None = None) -> ControlTimeline:  # noqa: A001
    """Expand ``program`` into a time-sorted control timeline.

    The timeline starts when storage is complete: the waveguide is decoupled
    and every node parked. Raises on unreachable pairs, reused qubits or
    infeasible parallel separations.
    """
    if not program.instructions:
        return ControlTimeline((), 0.0, 0.0, {"assumptions": ASSUMPTIONS})
    layout = layout or default_layout(spec, program.mode_count)
    comp = _Compiler(spec, layout)
    comp.prologue()
    for i, ins in enumerate(program.instructions):
        origin = f"{i}:{ins.kind}"
        if isinstance(ins, Transfer):
            comp.transfer(ins, origin)
        elif isinstance(ins, (ISwap, SqrtISwap)):
            comp.pair_gates([ins], [origin])
        elif isinstance(ins, ParallelBlock):
            comp.pair_gates(list(ins.gates), [f"{origin}/{j}" for j in range(len(ins.gates))])
        elif isinstance(ins, SingleQubitExternal):
            comp.single(ins, origin)
        else:
            raise SchedulingError(f"unknown instruction {ins!r}")
    events = tuple(sort_events(comp.events))
    end = max(comp.now - comp.gap, events[-1].time)
    budget = T2_BUDGET_FRACTION * min(n.t2 for n in spec.nodes)
    if end - layout.start > budget:
        raise SchedulingError(f"program lasts {end - layout.start:.3g} s, T2 budget {budget:.3g} s")
    meta = {
        "assumptions": ASSUMPTIONS,
        "guard_gap": comp.gap,
        "rephase_references": dict(comp.track.refs),
        "reversals": sum(isinstance(e.action, ReverseQMDetunings) for e in events),
    }
    return ControlTimeline(events, layout.start, end, meta)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    time: float | None = None


def _group(origin: str) -> str:
    return origin.split("/")[0]


def validate_timeline(timeline: ControlTimeline, spec: QCSpec) -> list[Violation]:
    """Bus exclusivity, parallel separation, T2 budget and reversal targets."""
    out: list[Violation] = []
    ids = {n.node_id for n in spec.nodes}
    events = list(timeline.events)
    for prev, cur in zip(events, events[1:]):
        if cur.sort_key() < prev.sort_key():
            out.append(Violation("ordering", "events are not sorted", cur.time))
    for ev in events:
        nid = ev.action.node_id
        if ev.time < 0:
            out.append(Violation("negative-time", "event before t = 0", ev.time))
        if nid is not None and nid not in ids:
            out.append(Violation("unknown-node", f"node {nid} is not part of the machine", ev.time))
        elif isinstance(ev.action, ReverseQMDetunings) and not spec.node(nid).is_memory:
            out.append(Violation("reverse-target", f"reversal aimed at processing node {nid}", ev.time))
    budget = T2_BUDGET_FRACTION * min(n.t2 for n in spec.nodes)
    if timeline.duration > budget:
        out.append(Violation("t2-budget", f"duration {timeline.duration:.3g} s exceeds {budget:.3g} s"))

    # active intervals: (node, start, end, offset, origin)
    active = _active_intervals(events, spec, timeline)
    by_bus: dict[int, list] = {}
    for iv in active:
        by_bus.setdefault(spec.topology.bus_of(iv[0]), []).append(iv)
    for ivs in by_bus.values():
        for i, a in enumerate(ivs):
            for b in ivs[i + 1 :]:
                lo, hi = max(a[1], b[1]), min(a[2], b[2])
                if hi <= lo:
                    continue
                if _group(a[4]) != _group(b[4]):
                    out.append(Violation("bus-exclusivity", f"nodes {a[0]} ({a[4]}) and {b[0]} ({b[4]}) overlap", lo))
                elif a[4] != b[4]:
                    wa = _pair_rate(ivs, a, spec)
                    wb = _pair_rate(ivs, b, spec)
                    if abs(a[3] - b[3]) < PARALLEL_SEPARATION * max(wa, wb) * (1 - 1e-12):
                        out.append(Violation("parallel-separation", f"pairs {a[4]} and {b[4]} too close in detuning", lo))
    return out


def _active_intervals(events, spec: QCSpec, timeline: ControlTimeline) -> list[tuple]:
    offsets = {n.node_id: (idle_detuning(spec, n.node_id), timeline.start, "") for n in spec.nodes}
    out = []

    def close(nid, t):
        off, since, origin = offsets[nid]
        if abs(off) < ACTIVE_FRACTION * spec.node(nid).park_detuning and t > since:
            out.append((nid, since, t, off, origin))

    for ev in events:
        if isinstance(ev.action, SetNodeDetuning) and ev.action.node_id in offsets:
            nid = ev.action.node_id
            close(nid, ev.time)
            offsets[nid] = (ev.action.value, ev.time, ev.origin)
    for nid in offsets:
        close(nid, max(timeline.end, offsets[nid][1]))
    return out


def _pair_rate(intervals, iv, spec: QCSpec) -> float:
    partners = [o for o in intervals if o[4] == iv[4] and o[0] != iv[0]]
    if not partners or iv[3] == 0:
        return 0.0
    return pair_frequency(spec, iv[0], partners[0][0], iv[3])


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

TIMELINE_COLUMNS = ("time_s", "action", "node_id", "value")


def fmt(x: float) -> str:
    return "%.17g" % x


def timeline_rows(timeline: ControlTimeline) -> list[tuple[str, str, str, str]]:
    rows = []
    for ev in timeline.events:
        nid = ev.action.node_id
        val = ev.value
        rows.append((fmt(ev.time), ev.action.kind, "" if nid is None else str(nid), "" if val is None else fmt(val)))
    return rows


def timeline_to_csv(timeline: ControlTimeline) -> str:
    buf = io.StringIO()
    buf.write(",".join(TIMELINE_COLUMNS) + "\n")
    for row in timeline_rows(timeline):
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
