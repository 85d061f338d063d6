"""Collective two-qubit gates between processing nodes on a shared bus.

The effective dispersive model acts on the collective basis
|00>, |10>, |01>, |11>; the full model keeps the bus photon and every atom
and serves as a brute-force oracle for it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, optimize, signal

from wireqc.dynamics import (
    CAVITY,
    Controls,
    HamiltonianCache,
    Propagator,
    SectorBasis,
    atom,
    build_basis,
    build_hamiltonian,
    run_timeline,
    symmetric_state,
)
from wireqc.errors import (
    AddressingError,
    ContractError,
    InvalidParameterError,
    RegimeError,
    ResonantRegimeError,
    SequencingError,
)
from wireqc.events import ControlEvent, sort_events
from wireqc.memory import (
    SELF_MODE_SPAN,
    StoredMemory,
    Waveform,
    rephasing_markers,
    selective_retrieval_schedule,
    self_mode_waveform,
)
from wireqc.model import (
    DISPERSIVE_MARGIN,
    Diagnostic,
    QCSpec,
    coherent_gate_frequency,
    ensemble_coupling,
    three_node_spec,
)

COLLECTIVE_LABELS = ("00", "10", "01", "11")
LEAKAGE_BOUND_FACTOR = 6.0  # 1.5 x the 4 (g sqrt(N) / delta)^2 estimate
PARALLEL_SEPARATION = 100.0

ISWAP = np.array([[1, 0, 0, 0], [0, 0, 1j, 0], [0, 1j, 0, 0], [0, 0, 0, 1]], dtype=complex)
SQRT_ISWAP = np.array(
    [[1, 0, 0, 0], [0, 1 / math.sqrt(2), 1j / math.sqrt(2), 0], [0, 1j / math.sqrt(2), 1 / math.sqrt(2), 0], [0, 0, 0, 1]],
    dtype=complex,
)
TARGETS = {"iswap": ISWAP, "sqrt_iswap": SQRT_ISWAP}


# ---------------------------------------------------------------------------
# Effective model
# ---------------------------------------------------------------------------


def effective_matrix(N: int, g: float, delta: float) -> np.ndarray:
    """(g^2/delta) [[0,0,0,0],[0,N,N,0],[0,N,N,0],[0,0,0,2N]] in rad/s."""
    if N < 1:
        raise InvalidParameterError("N must be at least 1")
    if delta == 0:
        raise ResonantRegimeError("dispersive model undefined at zero detuning")
    unit = np.array([[0, 0, 0, 0], [0, 1, 1, 0], [0, 1, 1, 0], [0, 0, 0, 2]], dtype=float)
    return (g**2 / delta) * N * unit


def collective_evolution(matrix: np.ndarray, t: float) -> np.ndarray:
    """exp(-i matrix t) for a Hermitian 4x4 generator."""
    evals, evecs = linalg.eigh(matrix)
    return (evecs * np.exp(-1j * evals * t)) @ evecs.conj().T


def swap_probability(U: np.ndarray) -> float:
    """P(|10> -> |01>)."""
    return float(abs(U[2, 1]) ** 2)


def _phase_vector(a: float, b: float) -> np.ndarray:
    # per-qubit Z phases on |q1 q2>: |10> picks up a, |01> picks up b
    return np.exp(1j * np.array([0.0, a, b, a + b]))


def gate_fidelity(actual: np.ndarray, target: str | np.ndarray) -> float:
    """|Tr(target^dag L actual R)|^2 / 16 maximized over global and local Z phases.

    L and R are products of single-qubit Z rotations applied before and after
    the gate; they absorb the excitation-number phases of the dispersive model.
    """
    actual = np.asarray(actual, dtype=complex)
    if actual.shape != (4, 4):
        raise ContractError("expected a 4x4 matrix")
    if np.max(np.abs(actual.conj().T @ actual - np.eye(4))) > 1e-9:
        raise ContractError("actual gate is not unitary")
    tgt = TARGETS[target.lower()] if isinstance(target, str) else np.asarray(target, dtype=complex)
    weights = tgt.conj() * actual

    def overlap(p):
        return abs(_phase_vector(p[0], p[1]) @ weights @ _phase_vector(p[2], p[3]))

    starts = itertools.product(np.linspace(-math.pi, math.pi, 6, endpoint=False), repeat=4)
    best = max(starts, key=overlap)
    res = optimize.minimize(lambda p: -overlap(p), np.array(best), method="BFGS", options={"gtol": 1e-12})
    value = max(overlap(res.x), overlap(best))
    return float(min(value**2 / 16, 1.0))


@dataclass
class GateCalibration:
    """Exact gate times from the effective model plus the 1/omega_c time scales."""

    omega_c: float
    t_iswap: float
    t_sqrt_iswap: float
    delta: float
    leakage_estimate: float
    quoted_inverse: float
    quoted_half_inverse: float
    diagnostics: list = field(default_factory=list)


def gate_times(N: int, g: float, delta: float) -> GateCalibration:
    """omega_c = 2 N g^2/delta, t_iswap = pi/omega_c, t_sqrt_iswap = t_iswap/2."""
    wc = coherent_gate_frequency(N, g, delta)
    diags = []
    if abs(delta) < DISPERSIVE_MARGIN * g * math.sqrt(N):
        diags.append(Diagnostic("dispersive-margin", f"|delta| < {DISPERSIVE_MARGIN:g} g sqrt(N)"))
    t_iswap = math.pi / abs(wc)
    return GateCalibration(
        omega_c=wc,
        t_iswap=t_iswap,
        t_sqrt_iswap=t_iswap / 2,
        delta=delta,
        leakage_estimate=4 * N * g**2 / delta**2,
        quoted_inverse=1 / abs(wc),
        quoted_half_inverse=1 / (2 * abs(wc)),
        diagnostics=diags,
    )


# ---------------------------------------------------------------------------
# Full-model oracle
# ---------------------------------------------------------------------------


def gate_spec(N: int, g: float, delta: float, pairs: int = 1) -> QCSpec:
    """Bus with a (decoupled) memory node and ``2 * pairs`` processing nodes 2, 3, ..."""
    return three_node_spec(proc_atoms=N, proc_g=g, gate_detuning=delta, qm_atoms=4, extra_processing=2 * pairs - 2)


@dataclass
class OscillationTrace:
    times: np.ndarray
    populations: np.ndarray  # (times, nodes) symmetric-state populations
    cavity: np.ndarray
    nodes: tuple


def gate_trace(
    spec: QCSpec,
    nodes: Sequence[int],
    start: int,
    times: np.ndarray,
    controls: Controls | None = None,
) -> OscillationTrace:
    """Single-excitation full-model trace with the bus decoupled from the waveguide."""
    basis = build_basis(spec, 1, nodes=nodes, waveguide=False)
    controls = controls or Controls.initial(spec)
    controls = Controls(controls.offsets, controls.signs, 0.0)
    prop = Propagator(build_hamiltonian(spec, basis, controls), basis)
    psi0 = symmetric_state(basis, start).amplitudes
    amps = prop.observe(psi0, times, np.arange(basis.dimension))
    pops = []
    for nid in nodes:
        idx = basis.indices("atom", nid)
        pops.append(np.abs(amps[:, idx].sum(axis=1)) ** 2 / idx.size)
    cav = np.abs(amps[:, basis.slot_index(CAVITY)]) ** 2
    return OscillationTrace(np.asarray(times), np.array(pops).T, cav, tuple(nodes))


def _refined_peaks(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    idx, _ = signal.find_peaks(y, prominence=0.5)
    out = []
    for i in idx:
        if 0 < i < y.size - 1:
            # vertex of the parabola through three samples
            y0, y1, y2 = y[i - 1], y[i], y[i + 1]
            denom = y0 - 2 * y1 + y2
            shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
            out.append(t[i] + shift * (t[1] - t[0]))
    return np.array(out)


def full_model_oscillation(N: int, g: float, delta: float, *, samples_per_period: int = 2000) -> float:
    """Measured node-to-node exchange frequency from the exact bus + 2N-atom model.

    The excitation starts in node 2's symmetric state; the spacing of the
    first two maxima of node 3's symmetric population is one period.
    """
    if not 1 <= N <= 6:
        raise InvalidParameterError("full model limited to 1 <= N <= 6")
    spec = gate_spec(N, g, delta)
    scale = abs(coherent_gate_frequency(N, g, delta))
    period = 2 * math.pi / scale
    times = np.linspace(0, 2.6 * period, int(2.6 * samples_per_period))
    trace = gate_trace(spec, (2, 3), 2, times)
    peaks = _refined_peaks(times, trace.populations[:, 1])
    if peaks.size < 2:
        raise RegimeError("node population does not oscillate; not in the dispersive regime")
    return 2 * math.pi / (peaks[1] - peaks[0])


def leakage_scan(N: int, g: float, delta: float, *, periods: float = 1.0, samples: int = 4000) -> float:
    """Max population outside the collective basis, starting from |10>."""
    spec = gate_spec(N, g, delta)
    period = 2 * math.pi / abs(coherent_gate_frequency(N, g, delta))
    times = np.linspace(0, periods * period, samples)
    trace = gate_trace(spec, (2, 3), 2, times)
    return float(np.max(1 - trace.populations.sum(axis=1)))


def leakage_bound(N: int, g: float, delta: float) -> float:
    return LEAKAGE_BOUND_FACTOR * N * g**2 / delta**2


def doubly_excited_leakage(N: int, g: float, delta: float, *, periods: float = 1.0, samples: int = 400) -> float:
    """Max population leaving |11> in the two-excitation sector of the full model."""
    spec = gate_spec(N, g, delta)
    basis = build_basis(spec, 2, nodes=(2, 3), waveguide=False)
    controls = Controls(Controls.initial(spec).offsets, {}, 0.0)
    prop = Propagator(build_hamiltonian(spec, basis, controls), basis)
    psi0 = _product_11(basis, N)
    period = 2 * math.pi / abs(coherent_gate_frequency(N, g, delta))
    times = np.linspace(0, periods * period, samples)
    amps = prop.observe(psi0, times, np.arange(basis.dimension))
    overlap = np.abs(amps @ psi0.conj()) ** 2
    return float(np.max(1 - overlap))


def _product_11(basis: SectorBasis, N: int) -> np.ndarray:
    psi = np.zeros(basis.dimension, dtype=complex)
    for i in range(N):
        for j in range(N):
            psi[basis.pair_index(atom(2, i), atom(3, j))] = 1.0 / N
    return psi


def parallel_crosstalk(N: int, g: float, delta_a: float, delta_b: float, *, periods: float = 1.0, samples: int = 4000) -> float:
    """Max population reaching pair (4, 5) when pair (2, 3) starts with |10>."""
    spec = gate_spec(N, g, delta_a, pairs=2)
    controls = Controls.initial(spec).with_offset(4, delta_b).with_offset(5, delta_b)
    period = 2 * math.pi / abs(coherent_gate_frequency(N, g, delta_a))
    times = np.linspace(0, periods * period, samples)
    basis = build_basis(spec, 1, nodes=(2, 3, 4, 5), waveguide=False)
    # total (not just symmetric) population of the second pair
    prop = Propagator(build_hamiltonian(spec, basis, Controls(controls.offsets, controls.signs, 0.0)), basis)
    rows = np.concatenate([basis.indices("atom", 4), basis.indices("atom", 5)])
    amps = prop.observe(symmetric_state(basis, 2).amplitudes, times, rows)
    return float(np.max(np.sum(np.abs(amps) ** 2, axis=1)))


def calibration_rows(N_values: Sequence[int], g: float, delta_for, *, measure: bool = True) -> list[dict]:
    """Rows of N, delta, formula and measured omega_c, t_iswap and leakage bound."""
    rows = []
    for N in N_values:
        delta = float(delta_for(N))
        cal = gate_times(N, g, delta)
        measured = full_model_oscillation(N, g, delta) if measure else float("nan")
        rows.append(
            {
                "N": N,
                "delta_rad_s": delta,
                "omega_c_formula": cal.omega_c,
                "omega_c_measured": measured,
                "t_iswap_s": cal.t_iswap,
                "leakage": cal.leakage_estimate,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Memory to processing-node transfer
# ---------------------------------------------------------------------------


@dataclass
class TransferResult:
    fidelity: float
    self_mode_overlap: float
    target_population: float
    memory_population: float
    rephase_time: float
    final_state: object = None
    trajectory: list = field(default_factory=list)
    cavity_field: Waveform | None = None


def mode_order(onsets: Sequence[float]) -> list[int]:
    """Input-mode indices in rephasing order: the last stored mode rephases first."""
    return sorted(range(len(onsets)), key=lambda m: -onsets[m])


def transfer_schedule(
    spec: QCSpec,
    plan: Sequence[tuple[int, int]],
    markers: Sequence[float],
    t_prime: float,
) -> list[ControlEvent]:
    """Concatenated retrieval schedules for (k, target) steps with ascending k."""
    ks = [k for k, _ in plan]
    if ks != sorted(set(ks)):
        raise SequencingError("modes must be retrieved in rephasing order")
    events: list[ControlEvent] = []
    for i, (k, target) in enumerate(plan):
        events += selective_retrieval_schedule(
            k, markers, spec, t_prime=t_prime, target=target, origin=f"transfer-{k}", include_start=i == 0
        )
    return sort_events(events)


def transfer_sequence(
    spec: QCSpec,
    stored: StoredMemory,
    plan: Sequence[tuple[int, int]],
    *,
    t_prime: float,
    onsets: Sequence[float] | None = None,
    events: Sequence[ControlEvent] | None = None,
    require_resonant: bool = True,
    samples: int = 600,
) -> list[TransferResult]:
    """Retrieve several stored modes, each into its own node, in one timeline.

    ``plan`` lists (k, target) pairs, k counting modes in rephasing order.
    Each step's fidelity is the target's symmetric population at 2 t_k over
    the memory population that mode k alone would have left (by linearity).
    """
    onsets = list(stored.input.mode_markers if onsets is None else onsets)
    markers = rephasing_markers(onsets, t_prime)
    order = mode_order(onsets)
    if events is None:
        events = transfer_schedule(spec, plan, markers, t_prime)
    events = sort_events(events)
    qm = spec.memory_node()
    Gamma = ensemble_coupling(qm)
    pre = run_timeline(spec, stored.state, [], t_prime, controls=stored.controls)
    state, controls = pre.final, pre.controls
    basis = state.basis
    cav_row = basis.slot_index(CAVITY)
    cache = HamiltonianCache(spec, basis, spec.port.gamma2)
    trajectory = [stored.state] + pre.boundary_states[1:]
    results = []
    applied = 0
    for k, target in plan:
        if not 1 <= k <= len(markers):
            raise AddressingError(f"mode index {k} outside 1..{len(markers)}")
        t_k = markers[k - 1]
        rephase = 2 * t_k
        todo = [e for e in events[applied:] if e.time < rephase]
        applied += len(todo)
        window = (SELF_MODE_SPAN + 2) / Gamma
        sample_t = np.linspace(max(state.time, rephase - window), rephase, samples)
        run = run_timeline(
            spec, state, todo, rephase, controls=controls, sample_times=sample_t, observe_rows=[cav_row], cache=cache
        )
        state, controls = run.final, run.controls
        trajectory += run.boundary_states[1:]
        if require_resonant and controls.offsets.get(target, 0.0) != 0.0:
            raise SequencingError(f"node {target} is not resonant with the bus before {rephase}")
        target_pop = state.symmetric_population(target)
        mode_pop = stored.mode_population(order[k - 1])
        node = spec.node(target)
        field_wf = Waveform(sample_t, run.samples[:, 0])
        overlap = 0.0
        if field_wf.energy > 0:
            reference = self_mode_waveform(node.atom_count, node.coupling_g, Gamma, t_k, sample_t)
            f = field_wf.normalized()
            overlap = float(abs(np.vdot(reference.envelope, f.envelope)) * f.step)
        fid = target_pop / mode_pop if mode_pop > 0 else 0.0
        results.append(TransferResult(fid, overlap, target_pop, mode_pop, rephase, state, list(trajectory), field_wf))
    rest = events[applied:]
    if rest:
        tail = run_timeline(spec, state, rest, max(e.time for e in rest), controls=controls, cache=cache)
        results[-1].final_state = tail.final
        results[-1].trajectory = results[-1].trajectory + tail.boundary_states[1:]
    return results


def transfer_qm_to_node(
    spec: QCSpec,
    stored: StoredMemory,
    k: int,
    target: int,
    *,
    t_prime: float,
    onsets: Sequence[float] | None = None,
    events: Sequence[ControlEvent] | None = None,
    require_resonant: bool = True,
    samples: int = 600,
) -> TransferResult:
    """Move the k-th rephasing mode from the memory into ``target``'s symmetric state.

    The bus field over the last self-mode span before 2 t_k is compared with
    :func:`self_mode_waveform` (``self_mode_overlap``).
    """
    (result,) = transfer_sequence(
        spec,
        stored,
        [(k, target)],
        t_prime=t_prime,
        onsets=onsets,
        events=events,
        require_resonant=require_resonant,
        samples=samples,
    )
    return result
