"""Acceptance suite: one printed PASS/FAIL line per criterion.

Each test records its line before asserting, so a failure still reports
the measured numbers. The lines are repeated in the terminal summary.
"""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import ACCEPTANCE_LINES, memory_spec
from wireqc.dynamics import run_timeline, norm_accounting
from wireqc.gates import (
    collective_evolution,
    effective_matrix,
    full_model_oscillation,
    gate_fidelity,
    gate_times,
    transfer_qm_to_node,
)
from wireqc.memory import (
    SelfModeParams,
    make_input_waveform,
    simulate_echo,
    simulate_storage,
    spectral_efficiency,
    storage_efficiency,
    time_grid,
)
from wireqc.model import (
    BusParams,
    coherent_gate_frequency,
    ensemble_rate,
    three_node_spec,
    matched_atom_number,
    q_factor,
    resonant_frequency,
    twt_line_length,
)
from wireqc.scheduler import (
    ISwap,
    ParallelBlock,
    Program,
    SingleQubitExternal,
    SqrtISwap,
    StorageLayout,
    Transfer,
    compile as compile_program,
    validate_timeline,
)

# trajectories of every dynamical acceptance run, checked by criterion 9
TRAJECTORIES: dict[str, list] = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_01_storage_peak():
    exact = storage_efficiency(1.0, 1.0, 0.0)
    ratios = np.linspace(0.1, 10.0, 991)
    q = np.array([storage_efficiency(r, 1.0, 0.0) for r in ratios])
    best = ratios[np.argmax(q)]
    ok = exact == 1.0 and math.isclose(best, 1.0, abs_tol=1e-12) and q.max() == 1.0
    report(1, ok, f"Q(Gamma=gamma1)={exact!r}, scan max {q.max():.12f} at Gamma/gamma1={best:.4f}")


def test_criterion_02_lorentzian_claim():
    widths = np.linspace(0.005, 0.2, 40, endpoint=False)
    q = np.array([spectral_efficiency(w, 1.0, 1.0, 0.0, 1.0) for w in widths])
    report(2, bool(np.all(q > 0.9)), f"min Q_eff over dw/D_in < 0.2 is {q.min():.4f} (at {widths[np.argmin(q)]:.3f})")


def test_criterion_03_dynamics_vs_formula():
    gammas = [0.25, 0.5, 1.0, 2.0, 4.0]
    losses = [0.0, 0.25, 0.5, 0.75, 1.0]
    grid = time_grid(-15, 15, 0.05)
    # rms width 2.5 gives a spectral rms width 0.2 = 0.05 * D_in
    wf = make_input_waveform(1, "gaussian", 1.0, 2.5, grid)
    worst = 0.0
    for G in gammas:
        for g2 in losses:
            spec = memory_spec(G, g2)
            stored, res = simulate_storage(spec, wf)
            TRAJECTORIES[f"storage G={G} g2={g2}"] = stored.trajectory
            worst = max(worst, abs(res.stored_fraction - storage_efficiency(G, 1.0, g2)))
    report(3, worst <= 0.03, f"max |simulated - formula| = {worst:.4f} over 5x5 grid (tol 0.03)")


@pytest.fixture(scope="module")
def echo_runs(matched_spec):
    grid = time_grid(-15, 15, 0.05)
    out = {}
    for det in (0.0, 0.3):
        wf = make_input_waveform(1, "gaussian", 1.0, 2.5, grid, detuning=det, carrier=matched_spec.omega0)
        stored, _ = simulate_storage(matched_spec, wf)
        out[det] = simulate_echo(stored, matched_spec, 30.0)
        TRAJECTORIES[f"echo det={det}"] = out[det].trajectory
    return out


def test_criterion_04_echo(echo_runs, matched_spec):
    base, shifted = echo_runs[0.0], echo_runs[0.3]
    spacing = matched_spec.port.mode_spacing
    w0 = matched_spec.omega0
    centroid_err = max(abs(r.output_centroid - (2 * w0 - r.input_centroid)) for r in (base, shifted))
    ok = base.echo_efficiency >= 0.98 and base.peak_within <= 2.5 and centroid_err <= spacing
    report(
        4,
        ok,
        f"efficiency {base.echo_efficiency:.4f}, peak {base.echo_peak_time:.3f} vs 2t'={base.expected_peak_time:.1f}, "
        f"centroid error {centroid_err:.4f} (grid {spacing:.3f}; input offset {shifted.input_centroid - w0:+.3f} "
        f"-> output {shifted.output_centroid - w0:+.3f})",
    )


def test_criterion_05_gate_acceleration():
    g = 1.0
    errs = []
    for N in range(1, 6):
        delta = 50 * g * math.sqrt(N)
        errs.append(abs(full_model_oscillation(N, g, delta) / coherent_gate_frequency(N, g, delta) - 1))
    delta = 50 * g * math.sqrt(5)
    Ns = np.arange(1, 6)
    measured = [full_model_oscillation(int(N), g, delta) for N in Ns]
    slope = np.polyfit(Ns, measured, 1)[0]
    slope_err = abs(slope / (2 * g**2 / delta) - 1)
    ok = max(errs) <= 0.05 and slope_err <= 0.05
    report(5, ok, f"max omega_c error {max(errs):.2e}, slope error {slope_err:.2e} (tol 5%)")


def test_criterion_06_effective_matrix():
    g, delta = 2.0, 4.0  # g^2/delta = 1 keeps every entry an exact integer
    literal = lambda N: np.array([[0, 0, 0, 0], [0, N, N, 0], [0, N, N, 0], [0, 0, 0, 2 * N]], dtype=float)
    ok = all(
        np.array_equal(effective_matrix(N, g, delta), literal(N))
        and np.array_equal(effective_matrix(N, g, delta), N * effective_matrix(1, g, delta))
        for N in (1, 7, 100)
    )
    report(6, ok, "exact match for N in {1, 7, 100}")


def test_criterion_07_gate_unitaries():
    N, g, delta = 3, 1.0, 50.0
    H = effective_matrix(N, g, delta)
    wc = coherent_gate_frequency(N, g, delta)
    f_iswap = gate_fidelity(collective_evolution(H, math.pi / wc), "iswap")
    f_sqrt = gate_fidelity(collective_evolution(H, math.pi / (2 * wc)), "sqrt_iswap")
    # N g^2 chosen so that omega_c = 3.768e6 rad/s
    cal = gate_times(1, math.sqrt(3.768e6 / 2), 1.0)
    ok = (
        f_iswap >= 1 - 1e-9
        and f_sqrt >= 1 - 1e-9
        and math.isclose(cal.omega_c, 3.768e6, rel_tol=1e-12)
        and math.isclose(cal.quoted_inverse, 2.654e-7, rel_tol=1e-3)
        and math.isclose(cal.quoted_half_inverse, 1.325e-7, rel_tol=2e-3)
    )
    report(
        7,
        ok,
        f"F(iSWAP)=1-{1 - f_iswap:.1e}, F(sqrt iSWAP)=1-{1 - f_sqrt:.1e}, "
        f"1/omega_c={cal.quoted_inverse:.4e} s, 1/(2 omega_c)={cal.quoted_half_inverse:.4e} s",
    )


@pytest.fixture(scope="module")
def transfer_setup():
    spec = three_node_spec(qm_atoms=400)
    node = spec.node(2)
    shape = SelfModeParams(node.atom_count, node.coupling_g, 1.0, 1.0)
    grid = time_grid(-2, 28, 0.02)
    return spec, shape, grid


def test_criterion_08_transfer(transfer_setup):
    spec, shape, grid = transfer_setup
    wf = make_input_waveform(2, "selfmode", 14.0, 0.0, grid, self_mode=shape)
    stored, _ = simulate_storage(spec, wf, nodes=[1, 2, 3], until=30.0)
    results = [transfer_qm_to_node(spec, stored, k, tgt, t_prime=30.0) for k, tgt in ((1, 2), (2, 3))]
    for k, r in enumerate(results, start=1):
        TRAJECTORIES[f"transfer k={k}"] = r.trajectory
    ok = all(r.fidelity >= 0.95 and r.self_mode_overlap >= 0.90 for r in results)
    detail = ", ".join(f"k={k}: F={r.fidelity:.4f} overlap={r.self_mode_overlap:.4f}" for k, r in enumerate(results, 1))
    report(8, ok, detail)


# --- criterion 10 ----------------------------------------------------------

SCHED_SPEC = three_node_spec(extra_processing=2)
PROC = [2, 3, 4, 5]


@st.composite
def programs(draw):
    modes = draw(st.integers(1, 4))
    qubits = draw(st.permutations(range(1, modes + 1)))
    n_transfer = draw(st.integers(0, modes))
    pool = [Transfer(q, draw(st.sampled_from(PROC))) for q in qubits[:n_transfer]]
    pair = st.lists(st.sampled_from(PROC), min_size=2, max_size=2, unique=True)
    gate = st.builds(lambda ab, sq: (SqrtISwap if sq else ISwap)(*ab), pair, st.booleans())
    for _ in range(draw(st.integers(0, 4))):
        kind = draw(st.sampled_from(["gate", "single", "parallel"]))
        if kind == "gate":
            pool.append(draw(gate))
        elif kind == "single":
            pool.append(SingleQubitExternal(draw(st.sampled_from(PROC)), "x90", draw(st.none() | st.floats(0.1, 5.0))))
        else:
            a, b, c, d = draw(st.permutations(PROC))
            pool.append(ParallelBlock((ISwap(a, b), draw(st.sampled_from([ISwap, SqrtISwap]))(c, d))))
    order = draw(st.permutations(range(len(pool))))
    return Program(tuple(pool[i] for i in order), modes)


VIOLATIONS: list = []
COMPILED: list = []


@settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True)
@given(programs())
def test_criterion_10a_random_programs(program):
    timeline = compile_program(program, SCHED_SPEC)
    COMPILED.append(len(timeline))
    VIOLATIONS.extend(validate_timeline(timeline, SCHED_SPEC))
    assert not VIOLATIONS, VIOLATIONS[:3]


def _symmetric_amplitude(state, nid):
    idx = state.basis.indices("atom", nid)
    return state.amplitudes[idx].sum() / math.sqrt(idx.size)


@pytest.mark.parametrize("amplitudes", [(0.0, 1.0), (1 / math.sqrt(2), 1 / math.sqrt(2))], ids=["one-qubit", "two-qubit"])
def test_criterion_10b_timeline_dynamics(transfer_setup, amplitudes):
    spec, shape, grid = transfer_setup
    wf = make_input_waveform(2, "selfmode", 14.0, 0.0, grid, self_mode=shape, amplitudes=amplitudes)
    stored, _ = simulate_storage(spec, wf, nodes=[1, 2, 3], until=30.0)
    layout = StorageLayout.from_onsets(wf.mode_markers, stored.state.time)
    timeline = compile_program(Program((Transfer(1, 2), Transfer(2, 3), SqrtISwap(2, 3))), spec, layout)
    assert validate_timeline(timeline, spec) == []
    gate_events = [e for e in timeline.events if e.origin.startswith("2:")]
    t_on, t_off = gate_events[0].time, gate_events[-1].time
    before = run_timeline(spec, stored.state, [e for e in timeline.events if e.time < t_on], t_on, controls=stored.controls)
    after = run_timeline(spec, before.final, [e for e in timeline.events if e.time >= t_on], timeline.end, controls=before.controls)
    TRAJECTORIES[f"timeline {amplitudes}"] = stored.trajectory + before.boundary_states[1:] + after.boundary_states[1:]

    c = np.array([0, _symmetric_amplitude(before.final, 2), _symmetric_amplitude(before.final, 3), 0])
    delta = gate_events[0].action.value
    H = effective_matrix(spec.node(2).atom_count, spec.node(2).coupling_g, delta)
    predicted = np.abs(collective_evolution(H, t_off - t_on) @ c) ** 2
    measured = np.array([after.final.symmetric_population(2), after.final.symmetric_population(3)])
    err = float(np.max(np.abs(measured - predicted[1:3])))
    assert err <= 0.05
    pytest.criterion10_errors = getattr(pytest, "criterion10_errors", []) + [(amplitudes, measured, predicted[1:3], err)]


def test_criterion_10_summary():
    errs = getattr(pytest, "criterion10_errors", [])
    ok = len(COMPILED) >= 1000 and not VIOLATIONS and len(errs) == 2 and all(e[3] <= 0.05 for e in errs)
    parts = [f"nodes 2,3 {np.round(m, 4).tolist()} vs collective {np.round(p, 4).tolist()}" for _, m, p, _ in errs]
    report(10, ok, f"{len(COMPILED)} random programs, {len(VIOLATIONS)} violations; " + "; ".join(parts))


def test_criterion_09_conservation():
    worst = {name: norm_accounting(traj) for name, traj in TRAJECTORIES.items()}
    dev = max((r.max_deviation for r in worst.values()), default=math.inf)
    ok = len(worst) >= 30 and all(r.ok for r in worst.values())
    report(9, ok, f"{len(worst)} runs, max |norm + loss - 1| = {dev:.1e}, loss monotone: {all(r.loss_monotone for r in worst.values())}")


def test_criterion_11_design_formulas():
    omega0 = 2 * math.pi * 1.2e9
    L = 1e-6
    C = 1 / (omega0**2 * L)
    bus = BusParams(L, C, 0.0754)
    w0 = resonant_frequency(bus)
    length = twt_line_length(bus, w0)
    ok_w0 = math.isclose(w0, 1 / math.sqrt(L * C), rel_tol=1e-15)
    ok_q = math.isclose(q_factor(bus), math.sqrt(L / C) / 0.0754, rel_tol=1e-15)
    # a half wavelength of 250 mm, quoted with c rounded to 3e8 m/s
    ok_l = math.isclose(length, 0.125, rel_tol=1e-3)
    gamma1, g, delta_in = 3.768e7, 32295.0, 2.768e7
    N = matched_atom_number(gamma1, g, delta_in)
    rate = ensemble_rate(N, g, delta_in)
    wc = coherent_gate_frequency(N, g, 20 * delta_in)
    ok_chain = math.isclose(rate, gamma1, rel_tol=1e-5) and math.isclose(wc, gamma1 / 10, rel_tol=1e-5)
    report(
        11,
        ok_w0 and ok_q and ok_l and ok_chain,
        f"omega0={w0:.6e} rad/s, l={length * 1e3:.2f} mm, N={N}, Gamma={rate:.5e}, omega_c={wc:.5e}",
    )

