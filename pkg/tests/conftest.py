import math
from dataclasses import replace

import pytest

from wireqc.model import three_node_spec

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def memory_spec(Gamma=1.0, gamma2=0.0, *, atoms=200, delta_in=4.0, bandwidth=20.0, modes=400):
    """Memory-only benchmark circuit with ensemble rate ``Gamma`` (gamma1 = 1)."""
    spec = three_node_spec(gamma1=1.0, gamma2=gamma2, qm_atoms=atoms, delta_in=delta_in, bandwidth=bandwidth, mode_count=modes)
    qm = replace(spec.nodes[0], coupling_g=math.sqrt(Gamma * delta_in / atoms))
    return replace(spec, nodes=(qm,) + spec.nodes[1:])


@pytest.fixture(scope="session")
def matched_spec():
    return memory_spec()
