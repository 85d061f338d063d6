"""Multimode photon-echo memory on the bus.

Closed-form storage efficiency, its spectral average for a Lorentzian input,
waveform construction, and full single-excitation simulations of storage,
detuning-reversal echo and selective retrieval scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

from wireqc.dynamics import (
    Controls,
    HamiltonianCache,
    SectorState,
    build_basis,
    discretize_waveguide,
    run_timeline,
)
from wireqc.errors import (
    AddressingError,
    BandwidthError,
    InvalidParameterError,
    OverdampedRegimeError,
    SequencingError,
    TemporalCrowdingError,
)
from wireqc.events import ControlEvent, ReverseQMDetunings, SetNodeDetuning, SetWaveguideCoupling, sort_events
from wireqc.model import Diagnostic, QCSpec, T2_BUDGET_FRACTION, ensemble_coupling

CROWDING_LIMIT = 1e-6
# Self-mode duration in units of 1/Gamma; used as the equalization guard.
SELF_MODE_SPAN = 10.0


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def storage_efficiency(Gamma: float, gamma1: float, gamma2: float) -> float:
    """Fraction of a narrowband input stored in the ensemble.

    [g1/(g1+g2)] * [4 G/(g1+g2)] / [1 + G/(g1+g2)]^2
    """
    if gamma1 < 0 or gamma2 < 0 or Gamma < 0:
        raise InvalidParameterError("rates must be non-negative")
    total = gamma1 + gamma2
    if total == 0:
        raise InvalidParameterError("gamma1 + gamma2 must be positive")
    x = Gamma / total
    return (gamma1 / total) * 4 * x / (1 + x) ** 2


def absorption_spectrum(delta, Gamma: float, gamma1: float, gamma2: float, delta_in: float):
    """Absorbed fraction of a monochromatic input detuned by ``delta`` from the bus.

    The ensemble has a Lorentzian inhomogeneous line of half-width ``delta_in``
    whose line-center absorption rate is ``Gamma``; at ``delta = 0`` this is
    :func:`storage_efficiency`.
    """
    delta = np.asarray(delta, dtype=float)
    chi_atoms = Gamma * delta_in / (delta_in - 1j * delta)
    denom = gamma1 + gamma2 - 1j * delta + chi_atoms
    return 4 * gamma1 * chi_atoms.real / np.abs(denom) ** 2


def spectral_efficiency(
    delta_omega: float,
    Gamma: float,
    gamma1: float,
    gamma2: float,
    delta_in: float,
    bandwidth: float | None = None,
) -> float:
    """Stored fraction of a Lorentzian-spectrum input of half-width ``delta_omega``."""
    if delta_omega <= 0:
        raise InvalidParameterError("delta_omega must be positive")
    if bandwidth is not None and delta_omega >= bandwidth:
        raise BandwidthError(f"signal width {delta_omega:g} exceeds bandwidth {bandwidth:g}")
    if gamma1 + gamma2 <= 0:
        raise InvalidParameterError("gamma1 + gamma2 must be positive")

    # Substituting delta = dw tan(u) turns the Lorentzian weight into du / pi.
    def integrand(u):
        return float(absorption_spectrum(delta_omega * math.tan(u), Gamma, gamma1, gamma2, delta_in)) / math.pi

    value, _ = integrate.quad(integrand, -math.pi / 2, math.pi / 2, limit=400, epsabs=1e-12, epsrel=1e-10)
    return value


# ---------------------------------------------------------------------------
# Waveforms
# ---------------------------------------------------------------------------


@dataclass
class Waveform:
    """Complex envelope on a uniform grid, in the frame rotating at ``carrier``.

    ``domain`` is ``"time"`` (grid in seconds) or ``"frequency"`` (grid in
    rad/s detuning from the carrier). Normalized envelopes satisfy
    sum |E|^2 * step = 1.
    """

    grid: np.ndarray
    envelope: np.ndarray
    carrier: float = 0.0
    mode_markers: tuple = ()
    domain: str = "time"
    # per-mode envelopes summing to ``envelope`` (multimode inputs only)
    components: tuple = ()

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.envelope = np.asarray(self.envelope, dtype=complex)
        if self.grid.shape != self.envelope.shape or self.grid.size < 2:
            raise InvalidParameterError("grid and envelope must be equal-length 1-D arrays")

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.envelope) ** 2) * self.step)

    def normalized(self) -> "Waveform":
        e = self.energy
        if e == 0:
            raise InvalidParameterError("cannot normalize an empty waveform")
        scale = 1 / math.sqrt(e)
        parts = tuple(c * scale for c in self.components)
        return Waveform(self.grid, self.envelope * scale, self.carrier, self.mode_markers, self.domain, parts)

    def component(self, m: int) -> "Waveform":
        """Mode ``m`` (0-based) alone, keeping its share of the normalization."""
        return Waveform(self.grid, self.components[m], self.carrier, (self.mode_markers[m],), self.domain)

    def centroid(self) -> float:
        w = np.abs(self.envelope) ** 2
        return float(np.sum(self.grid * w) / np.sum(w))

    def peak(self) -> float:
        return float(self.grid[np.argmax(np.abs(self.envelope))])

    def rms_width(self) -> float:
        w = np.abs(self.envelope) ** 2
        c = np.sum(self.grid * w) / np.sum(w)
        return float(math.sqrt(np.sum((self.grid - c) ** 2 * w) / np.sum(w)))

    def to_frequency(self) -> "Waveform":
        """Unitary discrete transform E(w) = (1/sqrt(2 pi)) sum E(t) e^{i w t} dt."""
        if self.domain != "time":
            raise InvalidParameterError("already in the frequency domain")
        n = self.grid.size
        dt = self.step
        omega = 2 * np.pi * np.fft.fftshift(np.fft.fftfreq(n, d=dt))
        # exp(+i w t) convention -> inverse FFT kernel, scaled to a unitary pair
        spec = np.fft.fftshift(np.fft.ifft(self.envelope)) * n * dt / math.sqrt(2 * math.pi)
        spec = spec * np.exp(1j * omega * self.grid[0])
        return Waveform(omega, spec, self.carrier, self.mode_markers, "frequency")

    def to_time(self, t0: float) -> "Waveform":
        """Inverse of :meth:`to_frequency`; ``t0`` is the first time sample."""
        if self.domain != "frequency":
            raise InvalidParameterError("already in the time domain")
        n = self.grid.size
        dw = self.step
        dt = 2 * np.pi / (n * dw)
        spec = self.envelope * np.exp(-1j * self.grid * t0)
        env = np.fft.fft(np.fft.ifftshift(spec)) * math.sqrt(2 * math.pi) / (n * dt)
        times = t0 + dt * np.arange(n)
        return Waveform(times, env, self.carrier, self.mode_markers, "time")


@dataclass(frozen=True)
class SelfModeParams:
    """Target node and bus rates that define a self-mode."""

    atom_count: int
    g: float
    Gamma: float
    gamma1: float | None = None

    @property
    def frequency(self) -> float:
        s2 = self.atom_count * self.g**2 - (self.Gamma / 2) ** 2
        if s2 <= 0:
            raise OverdampedRegimeError("N g^2 <= (Gamma/2)^2: self-mode is overdamped")
        return math.sqrt(s2)


def time_grid(start: float, stop: float, step: float) -> np.ndarray:
    n = int(round((stop - start) / step)) + 1
    return start + step * np.arange(n)


def _gaussian(t, width):
    return np.exp(-(t**2) / (4 * width**2))


def _exponential(t, width):
    return np.where(t >= 0, np.exp(-np.clip(t, 0, None) / (2 * width)), 0.0)


def _self_mode_drive(t, p: SelfModeParams):
    """Waveguide drive that makes the bus field follow the decaying self-mode."""
    s = p.frequency
    gamma1 = p.Gamma if p.gamma1 is None else p.gamma1
    tau = np.clip(t, 0, None)
    env = np.exp(-p.Gamma * tau / 2) * (np.cos(s * tau) + (p.Gamma / 2 + gamma1) / s * np.sin(s * tau))
    return np.where(t >= 0, env, 0.0)


def make_input_waveform(
    M: int,
    mode_shape: str,
    spacing: float,
    width: float,
    grid: np.ndarray,
    *,
    first: float = 0.0,
    amplitudes: Sequence[complex] | None = None,
    detuning: float = 0.0,
    self_mode: SelfModeParams | None = None,
    carrier: float = 0.0,
) -> Waveform:
    """Normalized train of ``M`` temporal modes starting at ``first``.

    ``width`` is the rms duration of |E|^2 for Gaussian modes and the
    intensity decay time for exponential (Lorentzian-spectrum) modes. Self
    modes ignore ``width``. Markers are mode centers (Gaussian) or onsets.
    """
    if M < 1:
        raise InvalidParameterError("need at least one mode")
    shape = mode_shape.lower()
    grid = np.asarray(grid, dtype=float)
    markers = tuple(first + m * spacing for m in range(M))
    if amplitudes is None:
        amplitudes = [1 / math.sqrt(M)] * M
    if len(amplitudes) != M:
        raise InvalidParameterError("one amplitude per mode")
    dt = grid[1] - grid[0]
    modes = []
    for tm in markers:
        if shape == "gaussian":
            e = _gaussian(grid - tm, width)
        elif shape == "exponential":
            e = _exponential(grid - tm, width)
        elif shape in ("selfmode", "self_mode", "self-mode"):
            if self_mode is None:
                raise InvalidParameterError("self-mode shape needs SelfModeParams")
            e = _self_mode_drive(grid - tm, self_mode)
        else:
            raise InvalidParameterError(f"unknown mode shape {mode_shape!r}")
        e = e.astype(complex)
        norm = math.sqrt(np.sum(np.abs(e) ** 2) * dt)
        if norm == 0:
            raise TemporalCrowdingError(f"mode at {tm} falls outside the grid")
        modes.append(e / norm)
    for m, e in enumerate(modes):
        # mass cut by the grid edges counts against crowding as well
        if shape == "gaussian":
            full = math.sqrt(2 * math.pi) * width
            raw = _gaussian(grid - markers[m], width)
            if 1 - np.sum(raw**2) * dt / full > CROWDING_LIMIT:
                raise TemporalCrowdingError(f"mode {m + 1} is truncated by the grid")
    for m in range(M - 1):
        ov = abs(np.vdot(modes[m], modes[m + 1]) * dt) ** 2
        if ov > CROWDING_LIMIT:
            raise TemporalCrowdingError(f"modes {m + 1} and {m + 2} overlap {ov:.2e}")
    carrier_phase = np.exp(-1j * detuning * grid)
    parts = tuple(a * e * carrier_phase for a, e in zip(amplitudes, modes))
    return Waveform(grid, sum(parts), carrier, markers, components=parts).normalized()


def self_mode_waveform(N: int, g: float, Gamma: float, t_k: float, grid: np.ndarray) -> Waveform:
    """Rephased self-mode exp(-Gamma |t - 2 t_k| / 2) sin(S (t - 2 t_k)) / S, zero from 2 t_k on.

    S = sqrt(N g^2 - (Gamma/2)^2); the amplitude is fixed by normalization.
    """
    s = SelfModeParams(N, g, Gamma).frequency
    grid = np.asarray(grid, dtype=float)
    tau = grid - 2 * t_k
    env = np.where(tau < 0, np.exp(-Gamma * np.abs(tau) / 2) * np.sin(s * tau) / s, 0.0)
    return Waveform(grid, env.astype(complex), mode_markers=(t_k,)).normalized()


def waveform_to_modes(wf: Waveform, freqs: np.ndarray, t_ref: float) -> np.ndarray:
    """Waveguide mode amplitudes at time ``t_ref`` for a packet with envelope ``wf``.

    The packet reaches the bus with envelope wf(t); mode k holds
    sqrt(dw / 2 pi) * sum_t wf(t) exp(i w_k (t - t_ref)) dt.
    """
    dw = freqs[1] - freqs[0]
    phase = np.exp(1j * np.outer(freqs, wf.grid - t_ref))
    return math.sqrt(dw / (2 * math.pi)) * (phase @ wf.envelope) * wf.step


def modes_to_waveform(amps: np.ndarray, freqs: np.ndarray, t_ref: float, times: np.ndarray, carrier: float = 0.0) -> Waveform:
    """Envelope at the bus port of the packet held by the waveguide at ``t_ref``."""
    dw = freqs[1] - freqs[0]
    phase = np.exp(-1j * np.outer(times - t_ref, freqs))
    return Waveform(times, math.sqrt(dw / (2 * math.pi)) * (phase @ amps), carrier)


# ---------------------------------------------------------------------------
# Simulations
# ---------------------------------------------------------------------------


@dataclass
class MemoryResult:
    stored_fraction: float
    echo_efficiency: float = float("nan")
    echo_fidelity: float = float("nan")
    input_centroid: float = float("nan")
    output_centroid: float = float("nan")
    echo_peak_time: float = float("nan")
    expected_peak_time: float = float("nan")
    output: Waveform | None = None
    diagnostics: list = field(default_factory=list)

    @property
    def peak_within(self) -> float:
        return abs(self.echo_peak_time - self.expected_peak_time)


@dataclass
class StoredMemory:
    """State right after the input has been absorbed, plus what produced it."""

    spec: QCSpec
    state: SectorState
    controls: Controls
    input: Waveform
    input_modes: np.ndarray
    start_time: float
    trajectory: list
    diagnostics: list
    nodes: tuple = ()

    @property
    def memory_id(self) -> int:
        return self.spec.memory_node().node_id

    def mode_population(self, m: int) -> float:
        """Memory population due to input mode ``m`` (0-based) alone, by linearity."""
        if len(self.input.components) <= 1:
            return self.state.node_population(self.memory_id)
        part = self.input.component(m)
        single, _ = simulate_storage(self.spec, part, until=self.state.time, nodes=self.nodes)
        # storage renormalizes its input; restore the component's share
        freqs = discretize_waveguide(self.spec).mode_frequencies
        share = np.linalg.norm(waveform_to_modes(part, freqs, self.start_time)) ** 2
        total = np.linalg.norm(waveform_to_modes(self.input, freqs, self.start_time)) ** 2
        return single.state.node_population(self.memory_id) * share / total


def _input_diagnostics(spec: QCSpec, wf: Waveform, duration: float) -> list[Diagnostic]:
    out = []
    qm = spec.memory_node()
    if not math.isclose(qm.center_frequency, spec.omega0, rel_tol=1e-9):
        out.append(Diagnostic("qm-detuned", "memory node center differs from the bus frequency", qm.node_id))
    t2 = min(n.t2 for n in spec.nodes)
    if duration >= T2_BUDGET_FRACTION * t2:
        out.append(Diagnostic("t2-budget", f"input lasts {duration:.3g} s, T2/10 = {T2_BUDGET_FRACTION * t2:.3g} s"))
    spec_wf = wf.to_frequency()
    dw = spec_wf.rms_width()
    width = qm.detuning_profile.width
    if dw > 0.2 * width:
        out.append(Diagnostic("not-narrowband", f"signal width {dw:.3g} is not small against the line width {width:.3g}"))
    if dw > 0.2 * spec.port.bandwidth:
        out.append(Diagnostic("bandwidth", f"signal width {dw:.3g} is not small against the waveguide band"))
    return out


def comb_revival_time(node) -> float:
    """Spontaneous rephasing time 2 pi / (central comb spacing) = 2 N / width."""
    return 2 * node.atom_count / node.detuning_profile.width


def settle_time(spec: QCSpec) -> float:
    qm = spec.memory_node()
    Gamma = ensemble_coupling(qm)
    rate = spec.port.gamma1 + spec.port.gamma2 + Gamma
    return 10.0 / rate + 10.0 / qm.detuning_profile.width


def simulate_storage(
    spec: QCSpec,
    wf: Waveform,
    *,
    until: float | None = None,
    nodes: Sequence[int] | None = None,
    samples: int = 0,
) -> tuple[StoredMemory, MemoryResult]:
    """Launch ``wf`` down the waveguide and evolve until it has entered the bus.

    Processing nodes listed in ``nodes`` take part parked far off resonance.
    Validity problems are reported as diagnostics; the run still happens.
    """
    qm = spec.memory_node()
    nodes = [qm.node_id] if nodes is None else list(nodes)
    basis = build_basis(spec, 1, nodes=nodes, waveguide=True)
    controls = Controls.initial(spec)
    for nid in nodes:
        node = spec.node(nid)
        if not node.is_memory:
            controls = controls.with_offset(nid, node.park_detuning)
    freqs = discretize_waveguide(spec).mode_frequencies
    t_start = float(wf.grid[0])
    c_in = waveform_to_modes(wf, freqs, t_start)
    amp = np.zeros(basis.dimension, dtype=complex)
    amp[basis.indices("mode")] = c_in
    # the truncated spectrum is renormalized so the sector state is a unit vector
    amp /= np.linalg.norm(amp)
    state = SectorState(basis, amp, 0.0, t_start)
    if until is None:
        until = float(wf.grid[-1]) + settle_time(spec)
    diags = _input_diagnostics(spec, wf, until - t_start)
    if spec.port.recurrence_time <= until - t_start:
        diags.append(Diagnostic("waveguide-recurrence", "storage outlasts the waveguide recurrence time"))
    if comb_revival_time(qm) <= until - t_start:
        diags.append(Diagnostic("comb-revival", "storage outlasts the revival time of the discrete comb", qm.node_id))
    sample_times = np.linspace(t_start, until, samples) if samples else None
    run = run_timeline(spec, state, [], until, controls=controls, sample_times=sample_times)
    final = run.final
    stored = final.node_population(qm.node_id)
    memory = StoredMemory(spec, final, run.controls, wf, amp[basis.indices("mode")], t_start, run.boundary_states, diags, tuple(nodes))
    return memory, MemoryResult(stored_fraction=stored, diagnostics=list(diags))


def mirror_modes(amps: np.ndarray) -> np.ndarray:
    """Reflect mode amplitudes about the bus frequency."""
    return amps[::-1].copy()


def simulate_echo(
    stored: StoredMemory,
    spec: QCSpec,
    t_prime: float,
    *,
    until: float | None = None,
    output_step: float | None = None,
) -> MemoryResult:
    """Reverse the memory detunings at ``t_prime`` and collect the echo.

    The echo is what the waveguide holds at the end minus the freely
    propagated light that was reflected during storage.
    """
    state = stored.state
    if t_prime < state.time:
        raise SequencingError(f"reversal at {t_prime} precedes storage completion at {state.time}")
    qm = spec.memory_node()
    freqs = discretize_waveguide(spec).mode_frequencies
    wf = stored.input
    if until is None:
        until = 2 * t_prime - stored.start_time + settle_time(spec)
    events = [
        ControlEvent(t_prime, SetWaveguideCoupling(spec.port.gamma1), "restore"),
        ControlEvent(t_prime, ReverseQMDetunings(qm.node_id), "reverse"),
    ]
    pre = run_timeline(spec, state, [], t_prime, controls=stored.controls)
    reflected = pre.final.mode_amplitudes().copy()
    run = run_timeline(spec, pre.final, events, until, controls=pre.controls)
    final = run.final
    free = reflected * np.exp(-1j * freqs * (until - t_prime))
    echo = final.mode_amplitudes() - free
    c_in = stored.input_modes
    p_in = float(np.sum(np.abs(c_in) ** 2))
    eff = float(np.sum(np.abs(echo) ** 2)) / p_in
    # exact reversal returns the mirrored input at 2 t' - t_start
    t_exact = 2 * t_prime - stored.start_time
    expected = mirror_modes(c_in) * np.exp(-1j * freqs * (until - t_exact))
    denom = np.linalg.norm(expected) * np.linalg.norm(echo)
    fid = float(abs(np.vdot(expected, echo)) / denom) if denom > 0 else 0.0
    w_in = np.abs(c_in) ** 2
    w_out = np.abs(echo) ** 2
    in_c = float(np.sum(freqs * w_in) / np.sum(w_in))
    out_c = float(np.sum(freqs * w_out) / np.sum(w_out)) if np.sum(w_out) > 0 else float("nan")
    step = output_step or wf.step
    t_out = time_grid(t_exact - (wf.grid[-1] - wf.grid[0]), until, step)
    out_wf = modes_to_waveform(echo, freqs, until, t_out, wf.carrier)
    in_peak = wf.peak()
    trajectory = stored.trajectory + pre.boundary_states[1:] + run.boundary_states[1:]
    result = MemoryResult(
        stored_fraction=pre.final.node_population(qm.node_id),
        echo_efficiency=eff,
        echo_fidelity=fid,
        input_centroid=spec.omega0 + in_c,
        output_centroid=spec.omega0 + out_c,
        echo_peak_time=out_wf.peak(),
        expected_peak_time=2 * t_prime - in_peak,
        output=out_wf,
        diagnostics=list(stored.diagnostics),
    )
    result.trajectory = trajectory
    if spec.port.recurrence_time <= until - stored.start_time:
        result.diagnostics.append(Diagnostic("waveguide-recurrence", "echo run outlasts the waveguide recurrence time"))
    if comb_revival_time(qm) <= until - stored.start_time:
        result.diagnostics.append(Diagnostic("comb-revival", "echo run outlasts the revival time of the discrete comb", qm.node_id))
    return result


# ---------------------------------------------------------------------------
# Selective retrieval
# ---------------------------------------------------------------------------


def rephasing_markers(onsets: Sequence[float], t_prime: float) -> list[float]:
    """Half rephasing times t_m (mode m rephases at 2 t_m) after a reversal at ``t_prime``.

    ``onsets`` are the modes' reference times in the storage clock. Returned
    in rephasing order, which is the reverse of storage order.
    """
    return sorted((2 * t_prime - t) / 2 for t in onsets)


def selective_retrieval_schedule(
    k: int,
    mode_markers: Sequence[float],
    spec: QCSpec,
    *,
    t_prime: float,
    target: int,
    guard: float | None = None,
    origin: str = "transfer",
    include_start: bool = True,
) -> list[ControlEvent]:
    """Events that move the k-th rephasing mode from the memory into ``target``.

    ``mode_markers`` are half rephasing times (mode m rephases at 2 t_m),
    ascending. The memory and target are brought to the bus frequency at
    t_k + t_{k-1}, or one self-mode span before 2 t_1 for k = 1, and parked
    again at 2 t_k. ``include_start=False`` drops the reversal events at
    ``t_prime`` so schedules for several modes can be concatenated.
    """
    markers = list(mode_markers)
    if any(b < a for a, b in zip(markers, markers[1:])):
        raise AddressingError("mode markers must be sorted ascending")
    if not 1 <= k <= len(markers):
        raise AddressingError(f"mode index {k} outside 1..{len(markers)}")
    qm = spec.memory_node()
    node = spec.node(target)
    if node.is_memory:
        raise AddressingError("target must be a processing node")
    Gamma = ensemble_coupling(qm)
    guard = SELF_MODE_SPAN / Gamma if guard is None else guard
    t_k = markers[k - 1]
    if 2 * t_k <= t_prime:
        raise SequencingError(f"mode {k} rephases at {2 * t_k} before the reversal at {t_prime}")
    if k == 1:
        t_eq = max(t_prime, 2 * t_k - guard)
    else:
        t_eq = max(t_prime, t_k + markers[k - 2])
    start = [
        ControlEvent(t_prime, SetWaveguideCoupling(0.0), origin),
        ControlEvent(t_prime, SetNodeDetuning(qm.node_id, qm.park_detuning), origin),
        ControlEvent(t_prime, ReverseQMDetunings(qm.node_id), origin),
    ]
    return sort_events(
        (start if include_start else [])
        + [
            ControlEvent(t_eq, SetNodeDetuning(qm.node_id, 0.0), origin),
            ControlEvent(t_eq, SetNodeDetuning(target, 0.0), origin),
            ControlEvent(2 * t_k, SetNodeDetuning(target, node.park_detuning), origin),
            ControlEvent(2 * t_k, SetNodeDetuning(qm.node_id, qm.park_detuning), origin),
        ]
    )
