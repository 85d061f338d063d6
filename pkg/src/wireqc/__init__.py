"""Simulator and schedule compiler for wire-circuit atomic-ensemble quantum processors."""

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

__version__ = "0.1.0"

__all__ = [
    "BusParams",
    "Homogeneous",
    "InhomogeneousComb",
    "NodeRole",
    "NodeSpec",
    "QCSpec",
    "Topology",
    "WaveguidePort",
    "__version__",
]
