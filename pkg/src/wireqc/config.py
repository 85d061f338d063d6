"""YAML configuration and program files.

Every dimensional value is written as ``"<number> <unit>"``; frequencies in
Hz-based units are converted to angular rad/s on load. Unknown keys are
rejected.
"""

from __future__ import annotations

import hashlib
import math
import re
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, model_validator

from wireqc.errors import WireQCError
from wireqc.model import (
    BusParams,
    Homogeneous,
    InhomogeneousComb,
    NodeRole,
    NodeSpec,
    QCSpec,
    Topology,
    WaveguidePort,
)
from wireqc.scheduler import ISwap, ParallelBlock, Program, SingleQubitExternal, SqrtISwap, Transfer

TWO_PI = 2 * math.pi

UNITS: dict[str, dict[str, float]] = {
    "frequency": {
        "rad/s": 1.0,
        "krad/s": 1e3,
        "Mrad/s": 1e6,
        "Grad/s": 1e9,
        "Hz": TWO_PI,
        "kHz": TWO_PI * 1e3,
        "MHz": TWO_PI * 1e6,
        "GHz": TWO_PI * 1e9,
    },
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12},
    "inductance": {"H": 1.0, "mH": 1e-3, "uH": 1e-6, "nH": 1e-9, "pH": 1e-12},
    "capacitance": {"F": 1.0, "uF": 1e-6, "nF": 1e-9, "pF": 1e-12, "fF": 1e-15},
    "resistance": {"ohm": 1.0, "mohm": 1e-3, "kohm": 1e3},
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6},
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/]+)\s*$")


class ConfigError(WireQCError, ValueError):
    """Configuration file cannot be parsed or validated."""


def parse_quantity(value: Any, kind: str) -> float:
    """``"1.2 GHz"`` -> 7.5398e9 (rad/s). Bare numbers are rejected."""
    if isinstance(value, bool) or not isinstance(value, str):
        raise ValueError(f"{kind} value {value!r} needs a unit, e.g. '1 {next(iter(UNITS[kind]))}'")
    m = _QUANTITY.match(value)
    if not m:
        raise ValueError(f"cannot parse {kind} quantity {value!r}")
    number, unit = m.groups()
    table = UNITS[kind]
    if unit not in table:
        raise ValueError(f"unit {unit!r} is not a {kind} unit ({', '.join(table)})")
    return float(number) * table[unit]


def _q(kind: str):
    return Annotated[float, BeforeValidator(lambda v: parse_quantity(v, kind))]


Frequency = _q("frequency")
Time = _q("time")
Inductance = _q("inductance")
Capacitance = _q("capacitance")
Resistance = _q("resistance")
Length = _q("length")


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---------------------------------------------------------------------------
# Machine description
# ---------------------------------------------------------------------------


class BusConfig(Strict):
    inductance: Inductance
    capacitance: Optional[Capacitance] = None
    frequency: Optional[Frequency] = None
    loss_resistance: Resistance
    permittivity: float = 1.0
    harmonic_index: int = 1
    loop_diameters: Optional[tuple[Length, Length]] = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.capacitance is None) == (self.frequency is None):
            raise ValueError("give exactly one of capacitance or frequency")
        return self

    def build(self) -> BusParams:
        c = self.capacitance if self.capacitance is not None else 1 / (self.frequency**2 * self.inductance)
        return BusParams(self.inductance, c, self.loss_resistance, self.permittivity, self.harmonic_index, self.loop_diameters)


class PortConfig(Strict):
    gamma1: Frequency
    gamma2: Frequency = 0.0
    bandwidth: Frequency
    mode_count: int = Field(ge=2)

    def build(self) -> WaveguidePort:
        return WaveguidePort(self.gamma1, self.gamma2, self.bandwidth, self.mode_count)


class CombConfig(Strict):
    width: Frequency
    sign: Literal[1, -1] = 1


class ProfileConfig(Strict):
    homogeneous: Optional[Frequency] = None
    comb: Optional[CombConfig] = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.homogeneous is None) == (self.comb is None):
            raise ValueError("profile needs exactly one of homogeneous or comb")
        return self

    def build(self):
        if self.comb is not None:
            return InhomogeneousComb(self.comb.width, self.comb.sign)
        return Homogeneous(self.homogeneous)


class NodeConfig(Strict):
    id: int
    role: Literal["memory", "processing"] = "processing"
    atoms: int = Field(ge=1)
    center: Union[Literal["bus"], Frequency] = "bus"
    profile: ProfileConfig
    g: Frequency
    t2: Time

    def build(self, omega0: float) -> NodeSpec:
        center = omega0 if self.center == "bus" else self.center
        return NodeSpec(self.id, self.atoms, center, self.profile.build(), self.g, self.t2, NodeRole(self.role))


class TopologyConfig(Strict):
    membership: dict[int, int]
    links: list[tuple[int, int]] = []


class SpecConfig(Strict):
    bus: BusConfig
    port: PortConfig
    nodes: list[NodeConfig] = Field(min_length=1)
    topology: Optional[TopologyConfig] = None

    def build(self) -> QCSpec:
        bus = self.bus.build()
        omega0 = 1 / math.sqrt(bus.inductance * bus.capacitance)
        topo = None
        if self.topology is not None:
            topo = Topology(dict(self.topology.membership), tuple(tuple(l) for l in self.topology.links))
        return QCSpec(bus, self.port.build(), tuple(n.build(omega0) for n in self.nodes), topo)


# ---------------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------------


class TransferConfig(Strict):
    qubit: int = Field(ge=1)
    node: int


class SingleConfig(Strict):
    node: int
    rotation: str
    duration: Optional[Time] = None


class InstructionConfig(Strict):
    transfer: Optional[TransferConfig] = None
    iswap: Optional[tuple[int, int]] = None
    sqrt_iswap: Optional[tuple[int, int]] = None
    single: Optional[SingleConfig] = None
    parallel: Optional[list["InstructionConfig"]] = None

    @model_validator(mode="after")
    def _one_of(self):
        given = [k for k in ("transfer", "iswap", "sqrt_iswap", "single", "parallel") if getattr(self, k) is not None]
        if len(given) != 1:
            raise ValueError(f"each instruction needs exactly one key, got {given or 'none'}")
        return self

    def build(self):
        if self.transfer is not None:
            return Transfer(self.transfer.qubit, self.transfer.node)
        if self.iswap is not None:
            return ISwap(*self.iswap)
        if self.sqrt_iswap is not None:
            return SqrtISwap(*self.sqrt_iswap)
        if self.single is not None:
            return SingleQubitExternal(self.single.node, self.single.rotation, self.single.duration)
        gates = [g.build() for g in self.parallel]
        return ParallelBlock(tuple(gates))


class ProgramConfig(Strict):
    modes: Optional[int] = Field(default=None, ge=1)
    instructions: list[InstructionConfig] = []

    def build(self) -> Program:
        return Program(tuple(i.build() for i in self.instructions), self.modes)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


class Axis(Strict):
    start: float
    stop: float
    num: int = Field(ge=1)
    spacing: Literal["linear", "log"] = "linear"

    def values(self):
        import numpy as np

        if self.spacing == "log":
            return np.geomspace(self.start, self.stop, self.num)
        return np.linspace(self.start, self.stop, self.num)


class EfficiencySurface(Strict):
    width_ratio: Axis = Axis(start=0.01, stop=1.0, num=12, spacing="log")
    gamma_ratio: Axis = Axis(start=0.1, stop=4.0, num=40, spacing="linear")
    gamma2_ratio: float = Field(default=0.0, ge=0)


class MemoryEcho(Strict):
    modes: int = Field(default=1, ge=1)
    shape: Literal["gaussian", "exponential"] = "gaussian"
    width: Time
    spacing: Optional[Time] = None
    detuning: Frequency = 0.0
    step: Time
    t_prime: Optional[Time] = None


class GateScaling(Strict):
    atoms: list[int] = [1, 2, 3, 4, 5]
    g: Frequency
    detuning_factor: float = Field(default=50.0, gt=0)
    fixed_detuning: Optional[Frequency] = None
    measure: bool = True


class TransferExperiment(Strict):
    modes: int = Field(default=1, ge=1)
    spacing: Optional[Time] = None
    step: Time
    plan: list[tuple[int, int]]


class CompileExperiment(Strict):
    program: Union[ProgramConfig, str]


class DesignReport(Strict):
    matching_g: Optional[Frequency] = None


EXPERIMENTS = {
    "efficiency-surface": EfficiencySurface,
    "memory-echo": MemoryEcho,
    "gate-scaling": GateScaling,
    "transfer": TransferExperiment,
    "compile": CompileExperiment,
    "design-report": DesignReport,
}


class ExperimentConfig(Strict):
    experiment: Literal["efficiency-surface", "memory-echo", "gate-scaling", "transfer", "compile", "design-report"]
    spec: SpecConfig
    parameters: dict = {}
    seed: int = 0
    output: Optional[str] = None

    def params(self):
        return EXPERIMENTS[self.experiment].model_validate(self.parameters)


class LoadedConfig:
    """Validated config plus its source bytes and hash."""

    def __init__(self, path: Path, raw: bytes, config: ExperimentConfig):
        self.path = path
        self.raw = raw
        self.config = config
        self.sha256 = hashlib.sha256(raw).hexdigest()
        self.params = config.params()
        self.spec = config.spec.build()


def _read_yaml(path: Path) -> tuple[bytes, Any]:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return raw, data


def load_config(path: str | Path) -> LoadedConfig:
    path = Path(path)
    raw, data = _read_yaml(path)
    try:
        cfg = ExperimentConfig.model_validate(data)
        return LoadedConfig(path, raw, cfg)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except (ValueError, WireQCError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_program(path: str | Path) -> Program:
    path = Path(path)
    _, data = _read_yaml(path)
    return parse_program(data, str(path))


def parse_program(data: Any, where: str = "program") -> Program:
    try:
        return ProgramConfig.model_validate(data).build()
    except ValidationError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except (ValueError, WireQCError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
