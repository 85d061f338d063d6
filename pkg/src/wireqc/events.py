"""Control events: instantaneous switches of bus and node parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union


@dataclass(frozen=True)
class SetNodeDetuning:
    """Shift a node's center to ``value`` rad/s from the bus frequency."""

    node_id: int
    value: float
    kind = "SetNodeDetuning"
    rank = 2


@dataclass(frozen=True)
class ReverseQMDetunings:
    """Flip the sign of every inhomogeneous detuning of a memory node."""

    node_id: int
    kind = "ReverseQMDetunings"
    rank = 1


@dataclass(frozen=True)
class SetWaveguideCoupling:
    """Set the bus-waveguide amplitude coupling rate."""

    value: float
    kind = "SetWaveguideCoupling"
    rank = 0

    @property
    def node_id(self) -> None:
        return None


Action = Union[SetNodeDetuning, ReverseQMDetunings, SetWaveguideCoupling]


@dataclass(frozen=True)
class ControlEvent:
    time: float
    action: Action
    origin: str = ""

    def sort_key(self) -> tuple:
        # Waveguide events carry no node; they sort ahead of node events.
        node = -1 if self.action.node_id is None else self.action.node_id
        return (self.time, node, self.action.rank, self.origin)

    @property
    def value(self) -> float | None:
        return getattr(self.action, "value", None)


def sort_events(events) -> list[ControlEvent]:
    return sorted(events, key=ControlEvent.sort_key)
