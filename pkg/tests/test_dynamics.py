import itertools
import math
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wireqc.dynamics import (
    CAVITY,
    Controls,
    Propagator,
    SectorState,
    apply_control_event,
    atom,
    basis_state,
    build_basis,
    build_hamiltonian,
    calibrate_continuum,
    discretize_waveguide,
    norm_accounting,
    propagate,
    run_timeline,
    symmetric_state,
    two_excitation_dimension,
)
from wireqc.errors import (
    AddressingError,
    SequencingError,
    UnsupportedConfigurationError,
)
from wireqc.events import ControlEvent, ReverseQMDetunings, SetNodeDetuning, SetWaveguideCoupling
from wireqc.model import three_node_spec


def closed(spec):
    return Controls(Controls.initial(spec).offsets, Controls.initial(spec).signs, 0.0)


def dense(spec, basis, controls=None):
    return build_hamiltonian(spec, basis, controls).toarray()


class TestHamiltonian:
    def test_jaynes_cummings_limit(self):
        spec = three_node_spec(proc_atoms=1, proc_g=0.3, gate_detuning=2.0)
        basis = build_basis(spec, 1, nodes=[2], waveguide=False)
        assert np.array_equal(dense(spec, basis), np.array([[0.0, 0.3], [0.3, 2.0]]))

    def test_identical_coupling_row(self):
        spec = three_node_spec(proc_atoms=5, proc_g=0.7)
        basis = build_basis(spec, 1, nodes=[2], waveguide=False)
        h = dense(spec, basis)
        c = basis.slot_index(CAVITY)
        assert np.array_equal(h[c, basis.indices("atom", 2)], np.full(5, 0.7))

    @given(st.integers(1, 6), st.floats(0.1, 3.0), st.floats(-50, 50), st.integers(2, 40))
    @settings(max_examples=30, deadline=None)
    def test_hermitian(self, N, g, delta, K):
        spec = three_node_spec(proc_atoms=N, proc_g=g, gate_detuning=delta, qm_atoms=7, mode_count=K)
        h = build_hamiltonian(spec, build_basis(spec, 1))
        assert (h - h.conj().T).count_nonzero() == 0

    def test_waveguide_diagonal_and_coupling(self):
        spec = three_node_spec(bandwidth=10.0, mode_count=50)
        basis = build_basis(spec, 1, nodes=[])
        h = dense(spec, basis)
        cont = discretize_waveguide(spec)
        midx = basis.indices("mode")
        assert np.allclose(np.diag(h)[midx], cont.mode_frequencies)
        assert np.allclose(h[0, midx], math.sqrt(spec.port.gamma1 * 0.2 / math.pi))
        assert cont.mode_frequencies.mean() == pytest.approx(0.0, abs=1e-12)

    def test_two_excitation_needs_closed_port(self):
        spec = three_node_spec()
        basis = build_basis(spec, 2, nodes=[2], waveguide=False)
        with pytest.raises(UnsupportedConfigurationError):
            build_hamiltonian(spec, basis)

    @pytest.mark.parametrize("n_atoms, n_modes", [(1, 0), (3, 0), (2, 4), (6, 10)])
    def test_two_excitation_dimension(self, n_atoms, n_modes):
        spec = three_node_spec(proc_atoms=n_atoms, mode_count=max(n_modes, 2))
        basis = build_basis(spec, 2, nodes=[2], waveguide=n_modes > 0)
        bosonic = 1 + (n_modes if n_modes else 0)
        assert basis.dimension == two_excitation_dimension(bosonic, n_atoms)
        # brute force: pairs with repetition, excluding a doubly excited atom
        slots = list(range(bosonic + n_atoms))
        count = sum(1 for i, j in itertools.combinations_with_replacement(slots, 2) if not (i == j and i >= bosonic))
        assert basis.dimension == count

    def test_two_excitation_matches_tensor_product(self):
        """Spectrum of the lifted matrix equals the projected Fock-space Hamiltonian."""
        spec = three_node_spec(proc_atoms=2, proc_g=0.4, gate_detuning=1.3)
        controls = closed(spec).with_offset(3, -0.7)
        basis = build_basis(spec, 2, nodes=[2, 3], waveguide=False)
        lifted = np.linalg.eigvalsh(dense(spec, basis, controls))

        # cavity truncated at two photons, four two-level atoms
        a = np.diag([1.0, math.sqrt(2)], 1)
        sm = np.array([[0.0, 1.0], [0.0, 0.0]])
        dims = [3, 2, 2, 2, 2]

        def embed(op, site):
            return reduce(np.kron, [op if k == site else np.eye(d) for k, d in enumerate(dims)])

        detunings = [1.3, 1.3, -0.7, -0.7]
        H = sum(embed(a.T, 0) @ embed(sm, s + 1) * 0.4 + embed(sm.T, s + 1) @ embed(a, 0) * 0.4 for s in range(4))
        H = H + sum(d * embed(sm.T @ sm, s + 1) for s, d in enumerate(detunings))
        number = embed(a.T @ a, 0) + sum(embed(sm.T @ sm, s + 1) for s in range(4))
        keep = np.isclose(np.diag(number), 2)
        oracle = np.linalg.eigvalsh(H[np.ix_(keep, keep)])
        assert lifted.size == oracle.size
        assert np.allclose(lifted, oracle, atol=1e-12)


class TestPropagation:
    @pytest.fixture
    def setup(self):
        spec = three_node_spec(mode_count=60, bandwidth=12.0, qm_atoms=20, delta_in=2.0, gamma1=0.3)
        basis = build_basis(spec, 1, nodes=[1, 2])
        h = build_hamiltonian(spec, basis)
        rng = np.random.default_rng(3)
        psi = rng.normal(size=basis.dimension) + 1j * rng.normal(size=basis.dimension)
        return spec, basis, h, SectorState(basis, psi / np.linalg.norm(psi))

    def test_zero_duration(self, setup):
        _, _, h, state = setup
        out = propagate(state, h, 0.0)
        assert np.array_equal(out.amplitudes, state.amplitudes) and out.time == state.time

    def test_unitary(self, setup):
        _, _, h, state = setup
        out = propagate(state, h, 7.3)
        assert out.norm2 == pytest.approx(1.0, abs=1e-12)
        assert out.accumulated_loss == 0.0 and out.time == pytest.approx(7.3)

    @pytest.mark.parametrize("gamma2", [0.0, 0.4])
    def test_composition(self, setup, gamma2):
        _, _, h, state = setup
        whole = propagate(state, h, 3.5, gamma2)
        split = propagate(propagate(state, h, 1.2, gamma2), h, 2.3, gamma2)
        assert np.allclose(whole.amplitudes, split.amplitudes, atol=1e-10)
        assert whole.accumulated_loss == pytest.approx(split.accumulated_loss, abs=1e-10)

    def test_loss_bookkeeping(self, setup):
        _, _, h, state = setup
        traj = [state]
        for _ in range(6):
            traj.append(propagate(traj[-1], h, 0.8, gamma2=0.5))
        rep = norm_accounting(traj)
        assert rep.ok and rep.max_deviation < 1e-12
        assert traj[-1].accumulated_loss > 0.01

    def test_bare_cavity_decay_rate(self):
        """Cavity amplitude decays as exp(-gamma1 t) into a wide continuum."""
        spec = three_node_spec(gamma1=1.0, bandwidth=200.0, mode_count=2000)
        basis = build_basis(spec, 1, nodes=[])
        prop = Propagator(build_hamiltonian(spec, basis), basis)
        t = np.linspace(0.5, 4.0, 30)
        amp = prop.observe(basis_state(basis, CAVITY).amplitudes, t, [0])[:, 0]
        rate = -np.polyfit(t, np.log(np.abs(amp)), 1)[0]
        assert rate == pytest.approx(1.0, rel=0.02)

    @pytest.mark.parametrize("gamma1, gamma2, modes", [(1.0, 0.0, 1000), (0.5, 0.5, 500), (1.0, 0.5, 600)])
    def test_calibrated_linewidth(self, gamma1, gamma2, modes):
        spec = three_node_spec(gamma1=gamma1, gamma2=gamma2, bandwidth=100.0, mode_count=modes)
        assert calibrate_continuum(spec) == pytest.approx(gamma1 + gamma2, rel=0.02)


class TestControlEvents:
    def test_reverse_flips_memory(self):
        spec = three_node_spec(qm_atoms=10)
        basis = build_basis(spec, 1, nodes=[1], waveguide=False)
        c0 = Controls.initial(spec)
        state = symmetric_state(basis, 1)
        c1, s1 = apply_control_event(spec, c0, state, ControlEvent(0.0, ReverseQMDetunings(1)))
        idx = basis.indices("atom", 1)
        assert np.allclose(np.diag(dense(spec, basis, c1))[idx], -np.diag(dense(spec, basis, c0))[idx])
        assert s1 is state

    def test_reverse_rejects_processing_node(self):
        spec = three_node_spec()
        state = symmetric_state(build_basis(spec, 1, nodes=[2], waveguide=False), 2)
        with pytest.raises(AddressingError):
            apply_control_event(spec, Controls.initial(spec), state, ControlEvent(0.0, ReverseQMDetunings(2)))

    def test_unknown_node(self):
        spec = three_node_spec()
        state = symmetric_state(build_basis(spec, 1, nodes=[2], waveguide=False), 2)
        with pytest.raises(AddressingError):
            apply_control_event(spec, Controls.initial(spec), state, ControlEvent(0.0, SetNodeDetuning(9, 1.0)))

    def test_detuning_shift(self):
        spec = three_node_spec(proc_atoms=2)
        basis = build_basis(spec, 1, nodes=[2], waveguide=False)
        state = symmetric_state(basis, 2)
        c1, _ = apply_control_event(spec, Controls.initial(spec), state, ControlEvent(0.0, SetNodeDetuning(2, 3.5)))
        assert np.allclose(np.diag(dense(spec, basis, c1))[basis.indices("atom", 2)], 3.5)

    def test_waveguide_off(self):
        spec = three_node_spec(mode_count=20)
        basis = build_basis(spec, 1, nodes=[])
        c1, _ = apply_control_event(spec, Controls.initial(spec), basis_state(basis, CAVITY), ControlEvent(0.0, SetWaveguideCoupling(0.0)))
        assert c1.gamma1 == 0.0
        assert not np.any(dense(spec, basis, c1)[0, basis.indices("mode")])

    def test_event_in_the_past(self):
        spec = three_node_spec()
        state = symmetric_state(build_basis(spec, 1, nodes=[2], waveguide=False), 2, time=5.0)
        with pytest.raises(SequencingError):
            apply_control_event(spec, Controls.initial(spec), state, ControlEvent(1.0, SetNodeDetuning(2, 0.0)))


SMALL = three_node_spec(qm_atoms=8, delta_in=2.0, proc_atoms=2, mode_count=30, bandwidth=6.0)
event = st.builds(
    lambda t, kind, node, value: ControlEvent(
        t,
        {"det": SetNodeDetuning(node, value), "rev": ReverseQMDetunings(1), "wg": SetWaveguideCoupling(abs(value) / 10)}[kind],
    ),
    st.floats(0, 20),
    st.sampled_from(["det", "rev", "wg"]),
    st.sampled_from([1, 2, 3]),
    st.floats(-10, 10),
)


@given(st.lists(event, max_size=8))
@settings(max_examples=40, deadline=None)
def test_sector_conserved_under_any_events(events):
    basis = build_basis(SMALL, 1)
    state = symmetric_state(basis, 2)
    run = run_timeline(SMALL, state, events, 25.0)
    rep = norm_accounting(run.boundary_states)
    assert rep.max_deviation < 1e-12 and run.final.accumulated_loss == 0.0


def test_run_timeline_samples_match_boundaries():
    basis = build_basis(SMALL, 1)
    state = symmetric_state(basis, 2)
    events = [ControlEvent(3.0, SetNodeDetuning(2, 0.0)), ControlEvent(6.0, SetNodeDetuning(2, 20.0))]
    run = run_timeline(SMALL, state, events, 9.0, sample_times=[3.0, 6.0, 9.0], observe_rows=np.arange(basis.dimension))
    assert [s.time for s in run.boundary_states] == [0.0, 3.0, 6.0, 9.0]
    assert np.allclose(run.samples[1], run.boundary_states[2].amplitudes, atol=1e-12)
    assert np.allclose(run.samples[2], run.final.amplitudes, atol=1e-12)


def test_sequencing_backwards():
    state = symmetric_state(build_basis(SMALL, 1), 2, time=4.0)
    with pytest.raises(SequencingError):
        run_timeline(SMALL, state, [], 1.0)


def test_pair_index_symmetric():
    spec = three_node_spec(proc_atoms=2)
    basis = build_basis(spec, 2, nodes=[2], waveguide=False)
    assert basis.pair_index(atom(2, 0), CAVITY) == basis.pair_index(CAVITY, atom(2, 0))
    with pytest.raises(Exception):
        basis.pair_index(atom(2, 1), atom(2, 1))
