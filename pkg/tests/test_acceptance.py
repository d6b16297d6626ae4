"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints.
Criterion 10 (experimental intensities and figure appearance) is excluded
as not reproducible; its structural substitutes live in test_spectra.py.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_hermitian
from spinexpand import Site, Species, SpinSystem, logic
from spinexpand.coherence import decompose, project_order, sigma_phase_of_global_phase
from spinexpand.experiment import expand, expansion_oracle, mq_sigma_gate, measure_model, thermal_state
from spinexpand.pulses import MqBlock, mq_block, phase_cycle_filter
from spinexpand.spectra import fid_spectrum, max_peaks, transition_spectrum
from spinexpand.spin_core import DensityMatrix, expectation, total_op

UP_U, DN_D = 0, 127


def _verdict(n, title, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} {n}. {title}: {detail}")
    assert ok, detail


def _random_ab(rng):
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return v / np.linalg.norm(v)


def test_1_circuit_oracle():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 1.0
    for _ in range(100):
        a, b = _random_ab(rng)
        out = logic.expand_chain(logic.initial_state(a, b, 6)).state
        ghz = np.zeros(128, dtype=complex)
        ghz[0], ghz[127] = a, b
        worst = min(worst, abs(np.vdot(ghz, out)) ** 2)
    elapsed = time.perf_counter() - start
    ok = worst >= 1 - 1e-12 and elapsed < 1.0
    _verdict(1, "circuit oracle", ok, f"min fidelity 1 - {1 - worst:.1e}, {elapsed:.3f} s")


def test_2_polarization_moments():
    rng = np.random.default_rng(2)
    m_op = 2 * total_op(7, range(7), "z")
    cases = [(1.0, 0.0), (0.0, 1.0), (2**-0.5, 2**-0.5)] + [tuple(_random_ab(rng)) for _ in range(20)]
    err2 = err1 = leak = 0.0
    for a, b in cases:
        state = logic.expand_chain(logic.initial_state(a, b, 6))
        rho = DensityMatrix.from_pure(state.state)
        expected_m = 7 * (abs(a) ** 2 - abs(b) ** 2)
        err2 = max(err2, abs(expectation(rho, m_op @ m_op) - 49), abs(logic.polarization_moment(state, 2) - 49))
        err1 = max(err1, abs(expectation(rho, m_op) - expected_m), abs(logic.polarization_moment(state, 1) - expected_m))
        dist = logic.outcome_distribution(state)
        leak = max(leak, sum(p for m, p in dist.items() if abs(m) != 7))
    ok = err2 < 1e-10 and err1 < 1e-10 and leak < 1e-10
    _verdict(2, "polarization moments", ok, f"|<M^2>-49| {err2:.1e}, |<M>-7(|a|^2-|b|^2)| {err1:.1e}, "
             f"weight outside M=+-7 {leak:.1e}")


def test_3_phase_cycle_equivalence(benzene):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        rho = DensityMatrix(random_hermitian(rng, 128, traceless=True), "deviation")
        diff = phase_cycle_filter(rho, benzene, 16, 6).data - project_order(rho, 6, benzene).data
        worst = max(worst, np.linalg.norm(diff))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and elapsed < 30
    _verdict(3, "phase-cycle equivalence", ok, f"max Frobenius error {worst:.1e}, {elapsed:.2f} s")


def test_4_global_phase_law(benzene):
    # MQ excitation starts from populations; a random diagonal deviation is
    # the generic order-zero input
    rng = np.random.default_rng(4)
    pops = rng.normal(size=128)
    rho = DensityMatrix(np.diag(pops - pops.mean()).astype(complex), "deviation")
    worst = 0.0
    sigma = []
    for mode in ("ideal", "pulse_level"):
        ref = decompose(mq_block(rho, benzene, MqBlock(20, 0.0, mode)), benzene)
        for deg in (15.0, 45.0):
            phi = np.radians(deg)
            out = decompose(mq_block(rho, benzene, MqBlock(20, phi, mode)), benzene)
            for p in (6, -6):
                a, b = ref.components[p], out.components[p]
                mask = np.abs(a) > 1e-6 * np.abs(a).max()
                dphase = np.angle(b[mask] / a[mask] * np.exp(-1j * p * phi))
                worst = max(worst, np.abs(dphase).max(), np.abs(np.abs(b[mask]) - np.abs(a[mask])).max())
            if mode == "ideal":
                sigma.append(round(float(np.degrees(sigma_phase_of_global_phase(phi))), 9))
    ok = worst < 1e-8 and sigma == [90.0, 270.0]
    _verdict(4, "global-phase law", ok, f"max phase error {worst:.1e} rad, Sigma phases {sigma} deg")


@pytest.mark.parametrize("deg", [0, 45, 90, 135, 180])
def test_5_ideal_pipeline(benzene, seq, deg):
    start = time.perf_counter()
    res = expand(benzene, np.radians(deg), "ideal", seq)
    elapsed = time.perf_counter() - start
    ok = res.fidelity_vs_oracle >= 0.99 and elapsed < 10
    _verdict(5, f"ideal pipeline theta={deg}", ok, f"fidelity {res.fidelity_vs_oracle:.6f}, {elapsed:.2f} s")


def test_6_pulse_level_gate(benzene, seq):
    gate = mq_sigma_gate(benzene, seq, "pulse_level")
    fid = gate["fidelity"]
    note = "" if fid >= 0.85 else (" (soft band: review)" if fid > 0.80 else " (below review floor)")
    _verdict(6, "pulse-level Sigma 90 gate", fid >= 0.85, f"fidelity {fid:.4f}{note}")


def test_7_measurement_model(benzene):
    psi = expansion_oracle(np.pi / 2, benzene)
    out = measure_model(DensityMatrix.from_pure(psi), 0.5).data
    off = out.copy()
    np.fill_diagonal(off, 0)
    off_norm = np.linalg.norm(off)
    diag = out.diagonal().real
    derr = max(abs(diag[UP_U] - 0.5), abs(diag[DN_D] - 0.5))
    ok = off_norm < 1e-4 and derr < 1e-6
    _verdict(7, "measurement model", ok, f"off-diagonal norm {off_norm:.2e}, diagonal error {derr:.1e}")


def test_8_peak_counts(benzene, ideal_pseudopure):
    counts = []
    for rho in (thermal_state(benzene), ideal_pseudopure.rho_final, expand(benzene, np.pi / 2).rho_final):
        counts.append(len(transition_spectrum(rho, benzene, "H1").peaks))
    dip, zz = max_peaks(6, "dipolar"), max_peaks(6, "zz")
    ok = dip == 792 and zz == 192 and all(c <= 792 for c in counts)
    _verdict(8, "peak-count formulas", ok, f"dipolar {dip}, zz {zz}, simulated H1 peak counts {counts}")


def _two_spin_cases():
    het = SpinSystem((Site(Species.C13), Site(Species.H1)), np.zeros((2, 2)), [[0, 158], [158, 0]])
    homo = SpinSystem((Site(Species.H1, 40.0), Site(Species.H1, -60.0)), [[0, 300], [300, 0]], np.zeros((2, 2)))
    return [("13C-1H C13", het, "C13"), ("13C-1H H1", het, "H1"), ("1H-1H H1", homo, "H1")]


def test_9_spectrum_cross_oracle(benzene):
    cases = _two_spin_cases() + [("benzene H1", benzene, "H1"), ("benzene C13", benzene, "C13")]
    worst_bins = 0.0
    details = []
    ok = True
    for name, sys_, channel in cases:
        rho = thermal_state(sys_)
        a = transition_spectrum(rho, sys_, channel)
        b = fid_spectrum(rho, sys_, channel)
        fa = np.array([p.freq_hz for p in a.peaks])
        fb = np.array([p.freq_hz for p in b.peaks])
        if fa.size != fb.size:
            ok = False
            details.append(f"{name}: {fa.size} vs {fb.size} peaks")
            continue
        shift = np.abs(fa - fb).max() / a.bin_hz
        worst_bins = max(worst_bins, shift)
        details.append(f"{name}: {fa.size} peaks")
    ok = ok and worst_bins <= 1.0
    _verdict(9, "spectrum cross-oracle", ok, f"max shift {worst_bins:.2f} bins; " + ", ".join(details))
