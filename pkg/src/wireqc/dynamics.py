"""Excitation-sector Hamiltonians and exact piecewise-constant propagation.

The total excitation number is conserved by the bus Hamiltonian, so states
live in the one- or two-excitation sector over labeled slots: the bus photon,
individual atoms, and discretized waveguide modes. Everything is written in
the frame rotating at the bus frequency. The atom-bus coupling is taken real
and symmetric (gauge a -> i a), which leaves populations and overlap moduli
unchanged. Free-space loss enters as an anti-Hermitian bus damping term.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from wireqc.errors import (
    AddressingError,
    ConsistencyError,
    InvalidParameterError,
    SequencingError,
    UnsupportedConfigurationError,
)
from wireqc.events import (
    ControlEvent,
    ReverseQMDetunings,
    SetNodeDetuning,
    SetWaveguideCoupling,
    sort_events,
)
from wireqc.model import Homogeneous, NodeSpec, QCSpec

NORM_TOL = 1e-9
TIME_TOL = 1e-12


# ---------------------------------------------------------------------------
# Bases
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Slot:
    """Single-excitation label: ``cavity``, ``atom`` (node, j) or ``mode`` k."""

    kind: str
    node: int = -1
    index: int = -1

    @property
    def bosonic(self) -> bool:
        return self.kind != "atom"


CAVITY = Slot("cavity")


def atom(node: int, j: int) -> Slot:
    return Slot("atom", node, j)


def mode(k: int) -> Slot:
    return Slot("mode", -1, k)


@dataclass(frozen=True)
class SectorBasis:
    """Ordered basis of the one- or two-excitation sector.

    In sector two each element is a pair of slot indices (i <= j); an atom
    never appears twice in a pair.
    """

    sector: int
    slots: tuple[Slot, ...]
    pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.sector not in (1, 2):
            raise InvalidParameterError("sector must be 1 or 2")
        if len(set(self.slots)) != len(self.slots):
            raise InvalidParameterError("slot labels must be unique")
        if self.sector == 2 and not self.pairs:
            n = len(self.slots)
            pairs = tuple(
                (i, j)
                for i in range(n)
                for j in range(i, n)
                if i != j or self.slots[i].bosonic
            )
            object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "_slot_index", {s: i for i, s in enumerate(self.slots)})
        if self.sector == 2:
            object.__setattr__(self, "_pair_index", {p: i for i, p in enumerate(self.pairs)})

    @property
    def dimension(self) -> int:
        return len(self.slots) if self.sector == 1 else len(self.pairs)

    def slot_index(self, slot: Slot) -> int:
        try:
            return self._slot_index[slot]
        except KeyError:
            raise AddressingError(f"slot {slot} not in basis") from None

    def pair_index(self, a: Slot, b: Slot) -> int:
        i, j = sorted((self.slot_index(a), self.slot_index(b)))
        try:
            return self._pair_index[(i, j)]
        except KeyError:
            raise AddressingError(f"pair ({a}, {b}) not in basis") from None

    def indices(self, kind: str, node: int | None = None) -> np.ndarray:
        """Slot indices of one kind (and node, for atoms)."""
        return np.array(
            [i for i, s in enumerate(self.slots) if s.kind == kind and (node is None or s.node == node)],
            dtype=int,
        )

    @property
    def node_ids(self) -> list[int]:
        return sorted({s.node for s in self.slots if s.kind == "atom"})

    @property
    def has_waveguide(self) -> bool:
        return any(s.kind == "mode" for s in self.slots)

    def cavity_occupation(self) -> np.ndarray:
        c = self.slot_index(CAVITY)
        if self.sector == 1:
            occ = np.zeros(self.dimension)
            occ[c] = 1.0
            return occ
        return np.array([(i == c) + (j == c) for i, j in self.pairs], dtype=float)


def build_basis(
    spec: QCSpec,
    sector: int = 1,
    nodes: Iterable[int] | None = None,
    waveguide: bool = True,
) -> SectorBasis:
    """Basis over the bus photon, the atoms of ``nodes`` and (optionally) the waveguide."""
    chosen = [spec.node(n) for n in nodes] if nodes is not None else list(spec.nodes)
    slots: list[Slot] = [CAVITY]
    for node in chosen:
        slots.extend(atom(node.node_id, j) for j in range(node.atom_count))
    if waveguide:
        slots.extend(mode(k) for k in range(spec.port.mode_count))
    return SectorBasis(sector, tuple(slots))


def two_excitation_dimension(n_bosonic: int, n_atoms: int) -> int:
    """Closed-form sector-two size: all pairs of slots minus doubly excited atoms."""
    n = n_bosonic + n_atoms
    return n * (n + 1) // 2 - n_atoms


# ---------------------------------------------------------------------------
# Controls and continuum discretization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Controls:
    """Instantaneous control parameters: node center offsets, memory signs, gamma1."""

    offsets: dict
    signs: dict
    gamma1: float

    @classmethod
    def initial(cls, spec: QCSpec) -> "Controls":
        offsets = {}
        signs = {}
        for n in spec.nodes:
            if isinstance(n.detuning_profile, Homogeneous):
                offsets[n.node_id] = float(n.detuning_profile.delta)
            else:
                offsets[n.node_id] = 0.0
                signs[n.node_id] = 1
        return cls(offsets, signs, spec.port.gamma1)

    def with_offset(self, node_id: int, value: float) -> "Controls":
        return replace(self, offsets={**self.offsets, node_id: float(value)})

    def key(self) -> tuple:
        return (tuple(sorted(self.offsets.items())), tuple(sorted(self.signs.items())), self.gamma1)


@dataclass(frozen=True)
class DiscretizedContinuum:
    """Uniform comb of waveguide modes centered on the bus frequency."""

    mode_frequencies: np.ndarray
    mode_couplings: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.mode_frequencies[1] - self.mode_frequencies[0])


def discretize_waveguide(spec: QCSpec, gamma1: float | None = None) -> DiscretizedContinuum:
    """Mode detunings (k - (K-1)/2) * dw and flat couplings sqrt(gamma1 dw / pi)."""
    port = spec.port
    g1 = port.gamma1 if gamma1 is None else gamma1
    dw = port.mode_spacing
    k = np.arange(port.mode_count)
    freqs = (k - (port.mode_count - 1) / 2.0) * dw
    couplings = np.full(port.mode_count, math.sqrt(g1 * dw / math.pi))
    return DiscretizedContinuum(freqs, couplings)


def node_atom_detunings(node: NodeSpec, controls: Controls) -> np.ndarray:
    offset = controls.offsets.get(node.node_id, 0.0)
    if isinstance(node.detuning_profile, Homogeneous):
        return np.full(node.atom_count, offset)
    sign = controls.signs.get(node.node_id, 1)
    return offset + sign * node.atom_detunings()


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------


def single_particle_matrix(spec: QCSpec, basis: SectorBasis, controls: Controls) -> sp.csr_matrix:
    """Real symmetric one-excitation Hamiltonian over ``basis.slots``."""
    n = len(basis.slots)
    diag = np.zeros(n)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    c = basis.slot_index(CAVITY)
    for nid in basis.node_ids:
        node = spec.node(nid)
        idx = basis.indices("atom", nid)
        diag[idx] = node_atom_detunings(node, controls)
        rows.append(idx)
        cols.append(np.full(idx.size, c))
        vals.append(np.full(idx.size, node.coupling_g))
    midx = basis.indices("mode")
    if midx.size:
        cont = discretize_waveguide(spec, controls.gamma1)
        if midx.size != cont.mode_frequencies.size:
            raise InvalidParameterError("basis mode count differs from the port")
        diag[midx] = cont.mode_frequencies
        if controls.gamma1 > 0:
            rows.append(midx)
            cols.append(np.full(midx.size, c))
            vals.append(cont.mode_couplings)
    if rows:
        r = np.concatenate(rows)
        cc = np.concatenate(cols)
        v = np.concatenate(vals)
        off = sp.coo_matrix((v, (r, cc)), shape=(n, n))
        h = off + off.T + sp.diags(diag)
    else:
        h = sp.diags(diag)
    return sp.csr_matrix(h)


def _two_excitation(h: sp.csr_matrix, basis: SectorBasis) -> sp.csr_matrix:
    """Lift a one-excitation Hamiltonian to the two-excitation sector."""
    h = sp.csc_matrix(h)
    bosonic = [s.bosonic for s in basis.slots]
    hd = h.diagonal()
    rows, cols, vals = [], [], []
    for e, (i, j) in enumerate(basis.pairs):
        rows.append(e)
        cols.append(e)
        vals.append(hd[i] + hd[j])
        movers = [(i, j)] if i == j else [(i, j), (j, i)]
        for p, other in movers:
            start, stop = h.indptr[p], h.indptr[p + 1]
            for l, amp in zip(h.indices[start:stop], h.data[start:stop]):
                if l == p:
                    continue
                if l == other and not bosonic[l]:
                    continue
                factor = 1.0
                if i == j:
                    factor = math.sqrt(2.0)
                elif l == other:
                    factor = math.sqrt(2.0)
                target = basis._pair_index[(min(l, other), max(l, other))]
                rows.append(target)
                cols.append(e)
                vals.append(factor * amp)
    d = basis.dimension
    return sp.csr_matrix(sp.coo_matrix((vals, (rows, cols)), shape=(d, d)))


def build_hamiltonian(spec: QCSpec, basis: SectorBasis, controls: Controls | None = None) -> sp.csr_matrix:
    """Hermitian sector Hamiltonian (rad/s) for the current controls."""
    controls = controls or Controls.initial(spec)
    if basis.sector == 2 and controls.gamma1 > 0:
        raise UnsupportedConfigurationError("two-excitation sector needs the waveguide decoupled (gamma1 = 0)")
    h = single_particle_matrix(spec, basis, controls)
    if basis.sector == 1:
        return h
    return _two_excitation(h, basis)


# ---------------------------------------------------------------------------
# States and propagation
# ---------------------------------------------------------------------------


@dataclass
class SectorState:
    basis: SectorBasis
    amplitudes: np.ndarray
    accumulated_loss: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.basis.dimension,):
            raise InvalidParameterError("amplitude vector does not match the basis")

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def slot_population(self, idx) -> float:
        if self.basis.sector != 1:
            raise UnsupportedConfigurationError("slot populations are defined in sector one")
        a = self.amplitudes[idx]
        return float(np.sum(np.abs(a) ** 2))

    def node_population(self, node_id: int) -> float:
        return self.slot_population(self.basis.indices("atom", node_id))

    def symmetric_population(self, node_id: int) -> float:
        """Population of the node's symmetric single-excitation state."""
        a = self.amplitudes[self.basis.indices("atom", node_id)]
        return float(abs(a.sum()) ** 2 / a.size)

    def cavity_amplitude(self) -> complex:
        return complex(self.amplitudes[self.basis.slot_index(CAVITY)])

    def mode_amplitudes(self) -> np.ndarray:
        return self.amplitudes[self.basis.indices("mode")]

    def copy(self) -> "SectorState":
        return SectorState(self.basis, self.amplitudes.copy(), self.accumulated_loss, self.time)


def basis_state(basis: SectorBasis, *slots: Slot, time: float = 0.0) -> SectorState:
    """Normalized state with one excitation per listed slot."""
    amp = np.zeros(basis.dimension, dtype=complex)
    if basis.sector == 1:
        (s,) = slots
        amp[basis.slot_index(s)] = 1.0
    else:
        a, b = slots
        amp[basis.pair_index(a, b)] = 1.0
    return SectorState(basis, amp, 0.0, time)


def symmetric_state(basis: SectorBasis, node_id: int, time: float = 0.0) -> SectorState:
    idx = basis.indices("atom", node_id)
    amp = np.zeros(basis.dimension, dtype=complex)
    amp[idx] = 1.0 / math.sqrt(idx.size)
    return SectorState(basis, amp, 0.0, time)


class Propagator:
    """exp(-i (H - i gamma2 n_cav) t) for one constant segment.

    Hermitian segments are diagonalized once (exactly unitary to rounding);
    lossy segments use dense matrix exponentials.
    """

    def __init__(self, h, basis: SectorBasis, gamma2: float = 0.0):
        dense = h.toarray() if sp.issparse(h) else np.asarray(h)
        self.gamma2 = float(gamma2)
        self.hermitian = self.gamma2 == 0.0
        if self.hermitian:
            if np.iscomplexobj(dense) and np.any(dense.imag):
                self.evals, self.evecs = scipy.linalg.eigh(dense)
            else:
                self.evals, self.evecs = scipy.linalg.eigh(dense.real)
            self.generator = None
        else:
            self.generator = -1j * (dense - 1j * self.gamma2 * np.diag(basis.cavity_occupation()))
        self._step_cache: dict[float, np.ndarray] = {}

    def apply(self, psi: np.ndarray, t: float) -> np.ndarray:
        if t == 0:
            return psi.copy()
        if self.hermitian:
            c = self.evecs.conj().T @ psi
            return self.evecs @ (np.exp(-1j * self.evals * t) * c)
        return self.step_matrix(t) @ psi

    def step_matrix(self, t: float) -> np.ndarray:
        if self.hermitian:
            return (self.evecs * np.exp(-1j * self.evals * t)) @ self.evecs.conj().T
        m = self._step_cache.get(t)
        if m is None:
            m = scipy.linalg.expm(self.generator * t)
            self._step_cache[t] = m
        return m

    def observe(self, psi: np.ndarray, times: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """Amplitudes of the ``rows`` components at ``times`` measured from now.

        Returns an array of shape (len(times), len(rows)).
        """
        times = np.asarray(times, dtype=float)
        if self.hermitian:
            c = self.evecs.conj().T @ psi
            phases = np.exp(-1j * np.outer(times, self.evals))
            return (phases * c) @ self.evecs[rows].T
        out = np.empty((times.size, len(rows)), dtype=complex)
        if times.size == 0:
            return out
        dts = np.diff(times)
        uniform = times.size > 1 and np.allclose(dts, dts[0], rtol=1e-9, atol=0)
        cur = self.apply(psi, times[0])
        out[0] = cur[rows]
        if uniform:
            step = self.step_matrix(float(dts[0]))
            for n in range(1, times.size):
                cur = step @ cur
                out[n] = cur[rows]
        else:
            for n in range(1, times.size):
                cur = self.apply(psi, times[n])
                out[n] = cur[rows]
        return out


def _settle(state: SectorState, new_amp: np.ndarray, duration: float, lossy: bool) -> SectorState:
    new_norm = float(np.vdot(new_amp, new_amp).real)
    deficit = state.norm2 - new_norm
    if deficit < -NORM_TOL or (not lossy and abs(deficit) > NORM_TOL):
        raise ConsistencyError(f"norm bookkeeping violated by {deficit:.3e}")
    # unitary steps lose nothing; rounding must not make the loss decrease
    loss = state.accumulated_loss + max(deficit, 0.0) if lossy else state.accumulated_loss
    return SectorState(state.basis, new_amp, loss, state.time + duration)


def propagate(state: SectorState, h, duration: float, gamma2: float = 0.0, propagator: Propagator | None = None) -> SectorState:
    """Evolve ``state`` for ``duration`` under constant ``h`` plus bus loss ``gamma2``.

    Probability removed by the loss is added to ``accumulated_loss`` so that
    norm + loss stays equal to one.
    """
    if duration < 0:
        raise InvalidParameterError("duration must be non-negative")
    if duration == 0:
        return state.copy()
    prop = propagator or Propagator(h, state.basis, gamma2)
    return _settle(state, prop.apply(state.amplitudes, duration), duration, not prop.hermitian)


# ---------------------------------------------------------------------------
# Control events and timelines
# ---------------------------------------------------------------------------


def apply_control_event(spec: QCSpec, controls: Controls, state: SectorState, event: ControlEvent) -> tuple[Controls, SectorState]:
    """Switch one control parameter; amplitudes are untouched."""
    if event.time < state.time - TIME_TOL * max(1.0, abs(state.time)):
        raise SequencingError(f"event at {event.time} precedes state time {state.time}")
    action = event.action
    if isinstance(action, SetWaveguideCoupling):
        if action.value < 0:
            raise InvalidParameterError("waveguide coupling must be non-negative")
        return replace(controls, gamma1=float(action.value)), state
    node = spec.node(action.node_id)
    if isinstance(action, ReverseQMDetunings):
        if not node.is_memory:
            raise AddressingError(f"node {node.node_id} is not a memory node")
        signs = {**controls.signs, node.node_id: -controls.signs.get(node.node_id, 1)}
        return replace(controls, signs=signs), state
    if isinstance(action, SetNodeDetuning):
        return controls.with_offset(node.node_id, action.value), state
    raise InvalidParameterError(f"unknown action {action!r}")


@dataclass
class TimelineRun:
    """Result of :func:`run_timeline`."""

    final: SectorState
    controls: Controls
    boundary_states: list
    sample_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    samples: np.ndarray = field(default_factory=lambda: np.empty((0, 0), dtype=complex))


class HamiltonianCache:
    """Memoizes propagators per control setting."""

    def __init__(self, spec: QCSpec, basis: SectorBasis, gamma2: float):
        self.spec = spec
        self.basis = basis
        self.gamma2 = gamma2
        self._cache: dict = {}

    def get(self, controls: Controls) -> Propagator:
        key = controls.key()
        prop = self._cache.get(key)
        if prop is None:
            h = build_hamiltonian(self.spec, self.basis, controls)
            prop = Propagator(h, self.basis, self.gamma2)
            self._cache[key] = prop
        return prop


def run_timeline(
    spec: QCSpec,
    state: SectorState,
    events: Sequence[ControlEvent],
    until: float,
    controls: Controls | None = None,
    gamma2: float | None = None,
    sample_times: Sequence[float] | None = None,
    observe_rows: Sequence[int] | None = None,
    cache: HamiltonianCache | None = None,
) -> TimelineRun:
    """Propagate through a list of control events up to time ``until``.

    Optionally records the ``observe_rows`` amplitudes at ``sample_times``.
    """
    controls = controls or Controls.initial(spec)
    gamma2 = spec.port.gamma2 if gamma2 is None else gamma2
    cache = cache or HamiltonianCache(spec, state.basis, gamma2)
    events = [e for e in sort_events(events)]
    if until < state.time:
        raise SequencingError("cannot run backwards in time")
    samples_t = np.sort(np.asarray(sample_times if sample_times is not None else [], dtype=float))
    rows = np.asarray(observe_rows if observe_rows is not None else [], dtype=int)
    samples = np.zeros((samples_t.size, rows.size), dtype=complex)
    boundaries = [state]
    cur = state
    pending = [e for e in events if e.time <= until]

    def segment(to: float, last: bool):
        nonlocal cur
        prop = cache.get(controls)
        if samples_t.size and rows.size:
            upper = samples_t <= to if last else samples_t < to
            mask = (samples_t >= cur.time) & upper
            if np.any(mask):
                samples[mask] = prop.observe(cur.amplitudes, samples_t[mask] - cur.time, rows)
        cur = propagate(cur, None, to - cur.time, gamma2, propagator=prop)

    for ev in pending:
        if ev.time > cur.time:
            segment(ev.time, last=False)
            boundaries.append(cur)
        controls, cur = apply_control_event(spec, controls, cur, ev)
    segment(until, last=True)
    if boundaries[-1] is not cur:
        boundaries.append(cur)
    return TimelineRun(cur, controls, boundaries, samples_t, samples)


# ---------------------------------------------------------------------------
# Bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConservationReport:
    max_deviation: float
    loss_monotone: bool
    samples: int

    @property
    def ok(self) -> bool:
        return self.max_deviation < NORM_TOL and self.loss_monotone


def norm_accounting(trajectory: Sequence[SectorState]) -> ConservationReport:
    """Max |norm + loss - 1| and whether the accumulated loss never decreases."""
    if not trajectory:
        raise InvalidParameterError("trajectory must be non-empty")
    dev = max(abs(s.norm2 + s.accumulated_loss - 1.0) for s in trajectory)
    losses = [s.accumulated_loss for s in trajectory]
    monotone = all(b >= a - 1e-15 for a, b in zip(losses, losses[1:]))
    return ConservationReport(float(dev), monotone, len(trajectory))


def calibrate_continuum(spec: QCSpec, gamma2: float | None = None, duration: float | None = None) -> float:
    """Measured half-width of the bare bus line emitted into the waveguide.

    A photon starts in the bus with no atoms present; the emitted spectrum is
    fitted with a Lorentzian. The result should equal gamma1 + gamma2.
    """
    from scipy.optimize import OptimizeWarning, curve_fit

    gamma2 = spec.port.gamma2 if gamma2 is None else gamma2
    basis = build_basis(spec, 1, nodes=[], waveguide=True)
    total = spec.port.gamma1 + gamma2
    if duration is None:
        duration = min(20.0 / total, 0.5 * spec.port.recurrence_time)
    state = basis_state(basis, CAVITY)
    h = build_hamiltonian(spec, basis, Controls({}, {}, spec.port.gamma1))
    out = propagate(state, h, duration, gamma2)
    freqs = discretize_waveguide(spec).mode_frequencies
    power = np.abs(out.mode_amplitudes()) ** 2 / spec.port.mode_spacing

    def lorentz(w, amp, hw, w0):
        return amp * hw**2 / ((w - w0) ** 2 + hw**2)

    p0 = (power.max(), total, 0.0)
    with warnings.catch_warnings():
        # only the optimum is used, so an unestimable covariance is harmless
        warnings.simplefilter("ignore", OptimizeWarning)
        popt, _ = curve_fit(lorentz, freqs, power, p0=p0)
    return float(abs(popt[1]))
