"""Parameter records, circuit design formulas and derived rates.

Every rate and frequency is an angular quantity in rad/s; times are seconds.
Conversion from Hz happens only when configs are loaded.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy import constants

from wireqc.errors import (
    AddressingError,
    InfeasibleMatchingError,
    InvalidParameterError,
    ResonantRegimeError,
    WrongProfileError,
)

SPEED_OF_LIGHT = constants.c

# Node detuning must exceed this multiple of the collective coupling g*sqrt(N).
DISPERSIVE_MARGIN = 10.0
# Protocols must fit in this fraction of the shortest T2.
T2_BUDGET_FRACTION = 0.1
# Off-resonant parking detuning, in units of the node's collective coupling.
PARK_FACTOR = 1.0e4


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BusParams:
    """Lumped-element description of the wire-circuit resonator.

    ``loop_diameters`` (D1, D2) are carried as metadata only.
    """

    inductance: float
    capacitance: float
    loss_resistance: float
    permittivity: float = 1.0
    harmonic_index: int = 1
    loop_diameters: tuple[float, float] | None = None

    def __post_init__(self):
        if self.inductance <= 0 or self.capacitance <= 0:
            raise InvalidParameterError("inductance and capacitance must be positive")
        if self.loss_resistance <= 0:
            raise InvalidParameterError("loss resistance must be positive")
        if self.permittivity < 1:
            raise InvalidParameterError("relative permittivity must be >= 1")
        if int(self.harmonic_index) != self.harmonic_index or self.harmonic_index < 1:
            raise InvalidParameterError("harmonic index must be a positive integer")
        if self.loop_diameters is not None:
            d1, d2 = self.loop_diameters
            if not 0 < d2 < d1:
                raise InvalidParameterError("loop diameters must satisfy 0 < D2 < D1")

    @classmethod
    def for_frequency(cls, omega0: float, inductance: float = 1e-6, q: float = 1e3, **kw) -> "BusParams":
        """Circuit with resonance ``omega0`` and quality factor ``q``."""
        capacitance = 1.0 / (omega0**2 * inductance)
        resistance = math.sqrt(inductance / capacitance) / q
        return cls(inductance, capacitance, resistance, **kw)


@dataclass(frozen=True)
class Homogeneous:
    """All atoms of a node share one detuning from the bus frequency."""

    delta: float


@dataclass(frozen=True)
class InhomogeneousComb:
    """Gradient-broadened line of half-width ``width``; ``sign`` flips it."""

    width: float
    sign: int = 1

    def __post_init__(self):
        if self.width <= 0:
            raise InvalidParameterError("inhomogeneous width must be positive")
        if self.sign not in (1, -1):
            raise InvalidParameterError("comb sign must be +1 or -1")


DetuningProfile = Union[Homogeneous, InhomogeneousComb]


class NodeRole(str, enum.Enum):
    MEMORY = "memory"
    PROCESSING = "processing"


@dataclass(frozen=True)
class NodeSpec:
    """One atomic ensemble enclosed by a node loop.

    For processing nodes the homogeneous ``delta`` is the working detuning
    used for gates; for the memory node the comb describes the gradient line.
    """

    node_id: int
    atom_count: int
    center_frequency: float
    detuning_profile: DetuningProfile
    coupling_g: float
    t2: float
    role: NodeRole = NodeRole.PROCESSING

    def __post_init__(self):
        if self.atom_count < 1 or int(self.atom_count) != self.atom_count:
            raise InvalidParameterError("atom_count must be a positive integer")
        if self.coupling_g <= 0:
            raise InvalidParameterError("coupling_g must be positive")
        if self.t2 <= 0:
            raise InvalidParameterError("t2 must be positive")
        if self.center_frequency <= 0:
            raise InvalidParameterError("center_frequency must be positive")
        if self.role is NodeRole.MEMORY and not isinstance(self.detuning_profile, InhomogeneousComb):
            raise WrongProfileError("memory nodes need an inhomogeneous profile")
        if self.role is NodeRole.PROCESSING and not isinstance(self.detuning_profile, Homogeneous):
            raise WrongProfileError("processing nodes need a homogeneous profile")

    @property
    def collective_coupling(self) -> float:
        """g * sqrt(N)."""
        return self.coupling_g * math.sqrt(self.atom_count)

    @property
    def is_memory(self) -> bool:
        return self.role is NodeRole.MEMORY

    @property
    def park_detuning(self) -> float:
        """Detuning used to take the node out of the bus interaction."""
        scale = self.collective_coupling
        if isinstance(self.detuning_profile, InhomogeneousComb):
            scale = max(scale, self.detuning_profile.width)
        return PARK_FACTOR * scale

    def atom_detunings(self) -> np.ndarray:
        """Per-atom detunings from the node center.

        Memory nodes use deterministic Lorentzian quantiles of half-width
        ``width`` so the line-center density is N / (pi * width).
        """
        n = self.atom_count
        prof = self.detuning_profile
        if isinstance(prof, Homogeneous):
            return np.full(n, float(prof.delta))
        q = (np.arange(n) + 0.5) / n
        return prof.sign * prof.width * np.tan(np.pi * (q - 0.5))


@dataclass(frozen=True)
class WaveguidePort:
    """Coupling of the bus to the external waveguide and to free space.

    ``gamma1``/``gamma2`` are cavity amplitude decay rates into the waveguide
    and free space; the waveguide is discretized into ``mode_count`` modes
    spread uniformly over ``bandwidth``.
    """

    gamma1: float
    gamma2: float
    bandwidth: float
    mode_count: int

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise InvalidParameterError("decay rates must be non-negative")
        if self.bandwidth <= 0:
            raise InvalidParameterError("bandwidth must be positive")
        if self.mode_count < 2:
            raise InvalidParameterError("need at least two waveguide modes")

    @property
    def mode_spacing(self) -> float:
        return self.bandwidth / self.mode_count

    @property
    def recurrence_time(self) -> float:
        return 2 * math.pi / self.mode_spacing


@dataclass(frozen=True)
class Topology:
    """Bus membership of nodes plus vertical links between buses."""

    membership: Mapping[int, int]
    links: tuple[tuple[int, int], ...] = ()

    @classmethod
    def single_bus(cls, node_ids: Iterable[int], bus: int = 0) -> "Topology":
        return cls({n: bus for n in node_ids})

    @property
    def buses(self) -> list[int]:
        found = set(self.membership.values())
        for a, b in self.links:
            found.update((a, b))
        return sorted(found)

    def bus_of(self, node_id: int) -> int:
        try:
            return self.membership[node_id]
        except KeyError:
            raise AddressingError(f"unknown node {node_id}") from None

    def nodes_on(self, bus: int) -> list[int]:
        return sorted(n for n, b in self.membership.items() if b == bus)

    def adjacency(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {b: set() for b in self.buses}
        for a, b in self.links:
            adj[a].add(b)
            adj[b].add(a)
        return adj


@dataclass(frozen=True)
class QCSpec:
    """Full machine description."""

    bus: BusParams
    port: WaveguidePort
    nodes: tuple[NodeSpec, ...]
    topology: Topology | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise InvalidParameterError("node ids must be unique")
        if self.topology is None:
            object.__setattr__(self, "topology", Topology.single_bus(ids))
        topo = self.topology
        if set(topo.membership) != set(ids):
            raise InvalidParameterError("topology must list every node exactly once")
        memories = [n for n in self.nodes if n.is_memory]
        if not memories:
            raise InvalidParameterError("spec needs a memory node")
        per_bus = [topo.bus_of(n.node_id) for n in memories]
        if len(set(per_bus)) != len(per_bus):
            raise InvalidParameterError("at most one memory node per bus")

    @property
    def omega0(self) -> float:
        return resonant_frequency(self.bus)

    def node(self, node_id: int) -> NodeSpec:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise AddressingError(f"unknown node {node_id}")

    def memory_node(self, bus: int | None = None) -> NodeSpec:
        for n in self.nodes:
            if n.is_memory and (bus is None or self.topology.bus_of(n.node_id) == bus):
                return n
        raise AddressingError(f"no memory node on bus {bus}")

    @property
    def processing_nodes(self) -> list[NodeSpec]:
        return [n for n in self.nodes if not n.is_memory]

    def replace_port(self, **changes) -> "QCSpec":
        from dataclasses import replace

        return replace(self, port=replace(self.port, **changes))


# ---------------------------------------------------------------------------
# Formulas
# ---------------------------------------------------------------------------


def resonant_frequency(bus: BusParams) -> float:
    """Bus resonance 1/sqrt(LC) in rad/s."""
    if bus.inductance <= 0 or bus.capacitance <= 0:
        raise InvalidParameterError("L and C must be positive")
    return 1.0 / math.sqrt(bus.inductance * bus.capacitance)


def q_factor(bus: BusParams) -> float:
    """Quality factor sqrt(L/C) / r."""
    if bus.loss_resistance <= 0:
        raise InvalidParameterError("loss resistance must be positive")
    return math.sqrt(bus.inductance / bus.capacitance) / bus.loss_resistance


def twt_line_length(bus: BusParams, omega0: float) -> float:
    """Twisted-pair line length n*pi*c / (omega0*sqrt(eps)), i.e. n half-wavelengths."""
    if omega0 <= 0:
        raise InvalidParameterError("omega0 must be positive")
    return bus.harmonic_index * math.pi * SPEED_OF_LIGHT / (omega0 * math.sqrt(bus.permittivity))


def ensemble_coupling(node: NodeSpec) -> float:
    """Cavity absorption rate of a broadened ensemble, N g^2 / width."""
    prof = node.detuning_profile
    if not isinstance(prof, InhomogeneousComb):
        raise WrongProfileError("ensemble coupling needs an inhomogeneous profile")
    return node.atom_count * node.coupling_g**2 / prof.width


def ensemble_rate(atom_count: float, g: float, delta_in: float) -> float:
    """N g^2 / width without building a NodeSpec."""
    if atom_count <= 0 or g <= 0 or delta_in <= 0:
        raise InvalidParameterError("atom count, g and width must be positive")
    return atom_count * g**2 / delta_in


def matched_atom_number(gamma1: float, g: float, delta_in: float) -> int:
    """Atom number that makes the ensemble rate equal ``gamma1``."""
    if gamma1 <= 0 or g <= 0 or delta_in <= 0:
        raise InvalidParameterError("all arguments must be positive")
    exact = gamma1 * delta_in / g**2
    n = int(math.floor(exact + 0.5))
    if n < 1:
        raise InfeasibleMatchingError(f"matching needs {exact:.3g} atoms")
    return n


def coherent_gate_frequency(atom_count: int, g: float, delta: float) -> float:
    """Collective exchange frequency 2 N g^2 / delta between two equal nodes."""
    if delta == 0:
        raise ResonantRegimeError("dispersive exchange undefined at zero detuning")
    if atom_count < 1:
        raise InvalidParameterError("atom count must be >= 1")
    return 2 * atom_count * g**2 / delta


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    node_id: int | None = None


def dispersive_margin_ok(node: NodeSpec, delta: float) -> bool:
    return abs(delta) >= DISPERSIVE_MARGIN * node.collective_coupling


def validate_spec(spec: QCSpec, protocol_duration: float) -> list[Diagnostic]:
    """Physics validity diagnostics; an empty list means the description is usable."""
    out: list[Diagnostic] = []
    t2_min = min(n.t2 for n in spec.nodes)
    if protocol_duration >= T2_BUDGET_FRACTION * t2_min:
        out.append(
            Diagnostic(
                "t2-budget",
                f"duration {protocol_duration:.3g} s exceeds T2/10 = {T2_BUDGET_FRACTION * t2_min:.3g} s",
            )
        )
    for node in spec.processing_nodes:
        delta = node.detuning_profile.delta
        if not dispersive_margin_ok(node, delta):
            out.append(
                Diagnostic(
                    "dispersive-margin",
                    f"|delta| = {abs(delta):.3g} below {DISPERSIVE_MARGIN:g} g sqrt(N) = "
                    f"{DISPERSIVE_MARGIN * node.collective_coupling:.3g}",
                    node.node_id,
                )
            )
    if spec.port.recurrence_time <= protocol_duration:
        out.append(
            Diagnostic(
                "waveguide-recurrence",
                f"recurrence {spec.port.recurrence_time:.3g} s <= duration {protocol_duration:.3g} s",
            )
        )
    return out


def three_node_spec(
    *,
    gamma1: float = 1.0,
    gamma2: float = 0.0,
    qm_atoms: int = 200,
    delta_in: float = 10.0,
    proc_atoms: int = 3,
    proc_g: float | None = None,
    gate_detuning: float | None = None,
    bandwidth: float = 40.0,
    mode_count: int = 800,
    t2: float = 1e6,
    omega0: float = 1e3,
    extra_processing: int = 0,
) -> QCSpec:
    """Three-node circuit (memory node 1, processing nodes 2 and 3) in scaled units.

    The memory ensemble is matched to the waveguide (N g^2 / width = gamma1);
    by default the processing collective coupling equals gamma1.
    """
    g_qm = math.sqrt(gamma1 * delta_in / qm_atoms)
    if proc_g is None:
        proc_g = gamma1 / math.sqrt(proc_atoms)
    if gate_detuning is None:
        gate_detuning = 2 * DISPERSIVE_MARGIN * proc_g * math.sqrt(proc_atoms)
    nodes = [
        NodeSpec(1, qm_atoms, omega0, InhomogeneousComb(delta_in), g_qm, t2, NodeRole.MEMORY),
    ]
    for nid in range(2, 4 + extra_processing):
        nodes.append(NodeSpec(nid, proc_atoms, omega0, Homogeneous(gate_detuning), proc_g, t2))
    return QCSpec(
        BusParams.for_frequency(omega0),
        WaveguidePort(gamma1, gamma2, bandwidth, mode_count),
        tuple(nodes),
    )


def node_ids(nodes: Sequence[NodeSpec]) -> list[int]:
    return [n.node_id for n in nodes]
