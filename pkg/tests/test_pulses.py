import numpy as np
import pytest

from conftest import random_hermitian
from spinexpand import Site, Species, SpinSystem
from spinexpand.coherence import decompose, project_order, sigma_pairs, z_rotation
from spinexpand.hamiltonian import build_hamiltonian, thermal_deviation, total_spin
from spinexpand.pulses import (
    Delay,
    GaussianEnvelope,
    GradientCrusher,
    HardPulse,
    MqBlock,
    NonConvergenceError,
    PhaseCycle,
    PulseProgram,
    PulseProgramError,
    ShapedPulse,
    apply_event,
    cycle_weights,
    dq_hamiltonian,
    eight_pulse_cycle,
    free_propagator,
    gradient_crusher,
    hard_pulse_operator,
    mq_block,
    mq_block_propagator,
    phase_cycle_filter,
    run_program,
    shaped_pulse,
)
from spinexpand.spin_core import DensityMatrix, propagator

U_UP, D_UP, U_DN, D_DN = 0, 63, 64, 127


def _pure(index, dim=128):
    rho = np.zeros((dim, dim), dtype=complex)
    rho[index, index] = 1
    return DensityMatrix(rho)


def _one_spin(offset_hz=0.0):
    return SpinSystem((Site(Species.H1, offset_hz),), np.zeros((1, 1)), np.zeros((1, 1)))


def _proton_order(benzene):
    # 13C saturated, proton Zeeman order: the input of the MQ block
    return DensityMatrix(total_spin(benzene, "H1", "z"), "deviation")


def test_empty_program_returns_input(benzene):
    rho = _pure(5)
    assert run_program(rho, PulseProgram(()), benzene) is rho


def test_proton_pi_pulse_flips_all_protons(benzene):
    out = run_program(_pure(U_UP), PulseProgram((HardPulse("H1", np.pi),)), benzene)
    assert out.data[D_UP, D_UP].real == pytest.approx(1.0)


def test_carbon_pi_pulse(benzene):
    out = apply_event(_pure(U_UP), benzene, HardPulse("C13", np.pi))
    assert out.data[U_DN, U_DN].real == pytest.approx(1.0)


def test_hard_pulse_identities(benzene):
    np.testing.assert_allclose(hard_pulse_operator(benzene, "H1", 0.0), np.eye(128))
    half = hard_pulse_operator(benzene, "H1", np.pi / 2)
    assert np.linalg.norm(half @ half - hard_pulse_operator(benzene, "H1", np.pi)) < 1e-12
    with pytest.raises(PulseProgramError):
        hard_pulse_operator(benzene, "N15", np.pi)


def test_hard_pulse_matches_exponential_of_total_spin(benzene):
    phase = 0.7
    gen = total_spin(benzene, "C13", "x") * np.cos(phase) + total_spin(benzene, "C13", "y") * np.sin(phase)
    np.testing.assert_allclose(hard_pulse_operator(benzene, "C13", 1.1, phase), propagator(gen, 1.1), atol=1e-12)


def test_event_validation():
    with pytest.raises(PulseProgramError):
        HardPulse("H1", 7.0)
    with pytest.raises(PulseProgramError):
        Delay(-1.0)
    with pytest.raises(PulseProgramError):
        Delay(1.0, "other")
    with pytest.raises(PulseProgramError):
        ShapedPulse("H1", GaussianEnvelope(1.0, 1e-3), n_slices=8)
    with pytest.raises(PulseProgramError):
        MqBlock(mode="fast")


def test_run_program_dimension_mismatch(benzene):
    with pytest.raises(PulseProgramError):
        run_program(_pure(0, 4), PulseProgram(()), benzene)


def test_crusher_examples(benzene, rng):
    diag = DensityMatrix(thermal_deviation(benzene), "deviation")
    np.testing.assert_array_equal(gradient_crusher(diag, benzene, "all").data, diag.data)
    ix = DensityMatrix(total_spin(benzene, "C13", "x"), "deviation")
    assert np.count_nonzero(gradient_crusher(ix, benzene, "C13").data) == 0
    six = np.zeros((128, 128), dtype=complex)
    six[U_UP, D_UP] = six[D_UP, U_UP] = 1
    six = DensityMatrix(six, "deviation")
    np.testing.assert_array_equal(gradient_crusher(six, benzene, "C13").data, six.data)


def test_crusher_keeps_trace_and_hermiticity(benzene, rng):
    a = random_hermitian(rng, 128, traceless=True)
    rho = DensityMatrix(a, "deviation")
    for ch in ("H1", "C13", "all"):
        out = apply_event(rho, benzene, GradientCrusher(ch))
        assert abs(np.trace(out.data)) < 1e-10
        assert np.linalg.norm(out.data - out.data.conj().T) < 1e-10


def test_crusher_all_removes_heteronuclear_zero_quantum(benzene):
    # |up, d> <down, u> has total order 0 but carbon and proton orders +-1, -+6
    rho = np.zeros((128, 128), dtype=complex)
    rho[0b0111111, 0b1000000 | 0] = 1
    rho = rho + rho.conj().T
    out = gradient_crusher(DensityMatrix(rho, "deviation"), benzene, "all")
    assert np.count_nonzero(out.data) == 0


def test_delay_hamiltonians(benzene):
    rho = DensityMatrix(total_spin(benzene, "H1", "x"), "deviation")
    t = 1e-3
    full = apply_event(rho, benzene, Delay(t))
    u = propagator(build_hamiltonian(benzene), t)
    np.testing.assert_allclose(full.data, u @ rho.data @ u.conj().T, atol=1e-10)
    dec = apply_event(rho, benzene, Delay(t, "decoupled_heteronuclear"))
    assert np.linalg.norm(dec.data - full.data) > 1e-3


def test_every_event_preserves_trace_and_hermiticity(benzene, rng):
    rho = DensityMatrix(random_hermitian(rng, 128, traceless=True), "deviation")
    events = [HardPulse("H1", 1.0, 0.4), Delay(2e-4), GradientCrusher("H1"), MqBlock(2, 0.3, "ideal"),
              MqBlock(1, 0.3, "pulse_level")]
    for ev in events:
        out = apply_event(rho, benzene, ev)
        assert abs(np.trace(out.data)) < 1e-10
        assert np.linalg.norm(out.data - out.data.conj().T) < 1e-10


# ---------------------------------------------------------------- shaped pulses


def test_zero_amplitude_shaped_pulse_is_free_evolution():
    sys = _one_spin(30.0)
    rho = DensityMatrix(np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex))
    env = GaussianEnvelope(0.0, 2e-3)
    out = shaped_pulse(rho, sys, ShapedPulse("H1", env, 0.0))
    u = free_propagator(sys, 2e-3)
    np.testing.assert_allclose(out.data, u @ rho.data @ u.conj().T, atol=1e-8)


def test_on_resonance_gaussian_pi_pulse_inverts():
    sys = _one_spin(120.0)
    env = GaussianEnvelope.for_flip(np.pi, 5e-3)
    out = shaped_pulse(_pure(0, 2), sys, ShapedPulse("H1", env, 120.0))
    assert out.data[1, 1].real >= 0.99


def test_far_off_resonance_gaussian_does_nothing():
    sys = _one_spin(0.0)
    env = GaussianEnvelope.for_flip(np.pi, 20e-3)
    rho = _pure(0, 2)
    out = shaped_pulse(rho, sys, ShapedPulse("H1", env, 2000.0))
    assert np.linalg.norm(out.data - rho.data) < 1e-3


def test_shaped_pulse_matches_rabi_formula():
    # constant-phase drive on resonance: nutation by the envelope area
    sys = _one_spin(0.0)
    env = GaussianEnvelope.for_flip(np.pi / 3, 4e-3)
    out = shaped_pulse(_pure(0, 2), sys, ShapedPulse("H1", env, 0.0))
    assert out.data[1, 1].real == pytest.approx(np.sin(np.pi / 6) ** 2, abs=1e-6)


def test_envelope_area():
    env = GaussianEnvelope.for_flip(np.pi / 2, 1e-2)
    t = np.linspace(0, 1e-2, 200001)
    assert np.trapezoid(env.amplitude(t), t) == pytest.approx(np.pi / 2, rel=1e-8)


def test_shaped_pulse_reports_nonconvergence():
    sys = _one_spin(300.0)
    env = GaussianEnvelope.for_flip(40 * np.pi, 5e-3)
    with pytest.raises(NonConvergenceError):
        shaped_pulse(_pure(0, 2), sys, ShapedPulse("H1", env, 0.0, n_slices=16), tol=1e-14, max_slices=64)


def test_shaped_pulse_is_converged_under_slice_doubling():
    sys = SpinSystem(
        (Site(Species.C13, 0.0), Site(Species.H1, 20.0), Site(Species.H1, -35.0)),
        np.array([[0, -80, -20], [-80, 0, -300], [-20, -300, 0]], float),
        np.array([[0, 150, 0], [150, 0, 0], [0, 0, 0]], float),
    )
    rho = DensityMatrix(thermal_deviation(sys), "deviation")
    env = GaussianEnvelope.for_flip(np.pi / 2, 5e-3)
    out = shaped_pulse(rho, sys, ShapedPulse("H1", env, 150.0, n_slices=64))
    finer = shaped_pulse(rho, sys, ShapedPulse("H1", env, 150.0, n_slices=2048))
    assert np.linalg.norm(out.data - finer.data) < 1e-5
    assert np.linalg.norm(out.data - rho.data) > 1e-2


# ---------------------------------------------------------------- MQ block


def test_dq_hamiltonian_changes_order_by_two(benzene):
    h = dq_hamiltonian(benzene)
    dec = decompose(h, benzene, "H1")
    nonzero = {p for p, c in dec.components.items() if np.linalg.norm(c) > 1e-12}
    assert nonzero == {-2, 2}


def test_ideal_block_preserves_parity_and_carbon(benzene, rng):
    u = mq_block_propagator(benzene, MqBlock(20, 0.2, "ideal"))
    parity = np.diag(np.exp(1j * np.pi * 2 * benzene.projections("H1")))
    assert np.linalg.norm(u @ parity - parity @ u) < 1e-10
    out = mq_block(_proton_order(benzene), benzene, MqBlock(20, 0.2, "ideal"))
    norms = decompose(out, benzene, "C13").norms()
    assert norms[1] < 1e-12 and norms[-1] < 1e-12
    odd = [n for p, n in decompose(out, benzene, "H1").norms().items() if p % 2]
    assert max(odd) < 1e-12


def test_short_evolution_creates_double_quantum_only(benzene):
    rho = _proton_order(benzene)
    out = mq_block(rho, benzene, MqBlock(1, 0.0, "ideal", 1e-7))
    norms = decompose(out, benzene, "H1").norms()
    assert norms[2] > 1e-6
    assert norms[4] < 1e-3 * norms[2]
    assert out.kind == "deviation"


def test_pulse_level_cycle_approaches_average_hamiltonian(benzene):
    tau = 2e-7
    u_cycle = eight_pulse_cycle(benzene, tau, 0.4)
    u_avg = propagator(dq_hamiltonian(benzene, 0.4), 12 * tau)
    assert np.linalg.norm(u_cycle - u_avg) < 2e-3


@pytest.mark.parametrize("mode", ["ideal", "pulse_level"])
@pytest.mark.parametrize("deg", [15.0, 45.0])
def test_global_phase_multiplies_six_quantum_components(benzene, mode, deg):
    phi = np.radians(deg)
    rho = _proton_order(benzene)
    ref = decompose(mq_block(rho, benzene, MqBlock(20, 0.0, mode)), benzene)
    out = decompose(mq_block(rho, benzene, MqBlock(20, phi, mode)), benzene)
    for p in (6, -6):
        np.testing.assert_allclose(out.components[p], ref.components[p] * np.exp(1j * p * phi), atol=1e-10)


def test_global_phase_is_a_z_rotation_of_the_block(benzene):
    phi = 0.3
    r = z_rotation(benzene, phi)
    u0 = mq_block_propagator(benzene, MqBlock(3, 0.0, "pulse_level"))
    u1 = mq_block_propagator(benzene, MqBlock(3, phi, "pulse_level"))
    np.testing.assert_allclose(u1, r.conj().T @ u0 @ r, atol=1e-10)


# ---------------------------------------------------------------- phase cycling


def test_cycle_weights_select_plus_minus_target():
    w = cycle_weights(16, 6)
    phi = 2 * np.pi * np.arange(16) / 16
    for p in range(-7, 8):
        avg = np.mean(w * np.exp(1j * p * phi))
        assert avg == pytest.approx(1.0 if abs(p) == 6 else 0.0, abs=1e-12)


def test_phase_cycle_filter_equals_projection(benzene, rng):
    for _ in range(3):
        rho = DensityMatrix(random_hermitian(rng, 128, traceless=True), "deviation")
        diff = phase_cycle_filter(rho, benzene, 16, 6).data - project_order(rho, 6, benzene).data
        assert np.linalg.norm(diff) < 1e-8


def test_run_program_phase_cycle_equals_projection(benzene):
    rho = _proton_order(benzene)
    block = MqBlock(20, 0.0, "ideal")
    prog = PulseProgram((block, Delay(1e-4)), PhaseCycle(16, 6))
    out = run_program(rho, prog, benzene)
    expected = apply_event(project_order(mq_block(rho, benzene, block), 6, benzene), benzene, Delay(1e-4))
    assert np.linalg.norm(out.data - expected.data) < 1e-8


def test_phase_cycle_with_hard_pulse_head(benzene):
    # hard-pulse excitation, order 1 selection
    rho = _proton_order(benzene)
    prog = PulseProgram((HardPulse("H1", 0.9, 0.0),), PhaseCycle(16, 1, excitation_end=1))
    out = run_program(rho, prog, benzene)
    expected = project_order(apply_event(rho, benzene, HardPulse("H1", 0.9)), 1, benzene)
    assert np.linalg.norm(out.data - expected.data) < 1e-10


def test_phase_cycle_replicas_are_deterministic_with_threads(benzene):
    rho = _proton_order(benzene)
    prog = PulseProgram((MqBlock(2, 0.0, "pulse_level"),), PhaseCycle(16, 6))
    serial = run_program(rho, prog, benzene)
    threaded = run_program(rho, prog, benzene, workers=4)
    np.testing.assert_array_equal(serial.data, threaded.data)


def test_phase_cycle_validation(benzene):
    rho = _proton_order(benzene)
    with pytest.raises(PulseProgramError):
        run_program(rho, PulseProgram((MqBlock(),), PhaseCycle(12, 6)), benzene)
    with pytest.raises(PulseProgramError):
        run_program(rho, PulseProgram((MqBlock(),), PhaseCycle(16, 7)), benzene)
    with pytest.raises(PulseProgramError):
        run_program(rho, PulseProgram((Delay(1e-3),), PhaseCycle(16, 6)), benzene)


def test_sigma_pairs_used_by_block(benzene):
    # the MQ block never couples the 13C-up and 13C-down Sigma pairs
    u = mq_block_propagator(benzene, MqBlock(20, 0.0, "pulse_level"))
    (a, b), (c, d) = sigma_pairs(benzene)
    assert np.abs(u[np.ix_([a, b], [c, d])]).max() < 1e-12
