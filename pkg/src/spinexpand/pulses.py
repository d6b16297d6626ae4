"""Pulse-program interpreter.

Events act on density matrices in the doubly rotating frame.  Hard pulses are
instantaneous; shaped pulses are integrated in slices; ``MqBlock`` models the
even-order multiple-quantum excitation cycle either through its average
double-quantum Hamiltonian (``ideal``) or pulse by pulse (``pulse_level``).
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
from scipy.special import erf, wofz

from .coherence import order_matrix, z_rotation
from .hamiltonian import (
    Eigensystem,
    Species,
    SpinSystem,
    build_hamiltonian,
    eigensystem,
    heteronuclear_zz_part,
)
from .spin_core import DensityMatrix, evolve, single_spin_op, total_op

# 12 tau per eight-pulse cycle; 20 cycles of this tau give ~3.5 ms blocks
DEFAULT_TAU_S = 1.45e-5
CYCLE_TAUS = 12


class PulseProgramError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    """Sliced integration did not reach the requested tolerance."""


@dataclass(frozen=True)
class HardPulse:
    channel: str
    flip_angle: float
    phase: float = 0.0

    def __post_init__(self):
        if not 0 <= self.flip_angle <= 2 * np.pi + 1e-12:
            raise PulseProgramError(f"flip angle {self.flip_angle} outside [0, 2pi]")


@dataclass(frozen=True)
class Delay:
    duration: float
    hamiltonian: str = "full"

    def __post_init__(self):
        if self.duration < 0:
            raise PulseProgramError("delay duration must be >= 0")
        if self.hamiltonian not in ("full", "decoupled_heteronuclear"):
            raise PulseProgramError(f"unknown delay hamiltonian {self.hamiltonian!r}")


@dataclass(frozen=True)
class GradientCrusher:
    channel: str = "all"


@dataclass(frozen=True)
class GaussianEnvelope:
    peak_amp_rad_s: float
    duration_s: float
    truncation: float = 3.0

    def __post_init__(self):
        if self.duration_s <= 0 or self.truncation <= 0:
            raise PulseProgramError("Gaussian needs positive duration and truncation")

    @property
    def sigma_s(self) -> float:
        return self.duration_s / (2 * self.truncation)

    def amplitude(self, t: np.ndarray) -> np.ndarray:
        return self.peak_amp_rad_s * np.exp(-0.5 * ((t - self.duration_s / 2) / self.sigma_s) ** 2)

    @property
    def area(self) -> float:
        """Integrated nutation angle (rad) for a unit matrix element."""
        return self.peak_amp_rad_s * self.sigma_s * np.sqrt(2 * np.pi) * erf(self.truncation / np.sqrt(2))

    @classmethod
    def for_flip(cls, flip_angle: float, duration_s: float, truncation: float = 3.0) -> "GaussianEnvelope":
        unit = cls(1.0, duration_s, truncation)
        return cls(flip_angle / unit.area, duration_s, truncation)


@dataclass(frozen=True)
class ShapedPulse:
    channel: str
    envelope: GaussianEnvelope
    carrier_offset_hz: float = 0.0
    n_slices: int = 64
    phase: float = 0.0

    def __post_init__(self):
        if self.n_slices < 16:
            raise PulseProgramError("shaped pulses need at least 16 slices")


@dataclass(frozen=True)
class MqBlock:
    n_cycles: int = 20
    global_phase: float = 0.0
    mode: str = "ideal"
    tau_s: float = DEFAULT_TAU_S

    def __post_init__(self):
        if self.mode not in ("ideal", "pulse_level"):
            raise PulseProgramError(f"unknown MQ block mode {self.mode!r}")
        if self.n_cycles < 0 or self.tau_s <= 0:
            raise PulseProgramError("MQ block needs n_cycles >= 0 and tau_s > 0")

    @property
    def duration(self) -> float:
        return self.n_cycles * CYCLE_TAUS * self.tau_s


PulseEvent = Union[HardPulse, Delay, GradientCrusher, ShapedPulse, MqBlock]


@dataclass(frozen=True)
class PhaseCycle:
    """Coherence-order selection by phase cycling.

    Events before ``excitation_end`` form the excitation segment; when it is
    None the segment ends after the first ``MqBlock``.
    """

    n_steps: int
    target_order: int
    channel: str = "H1"
    excitation_end: int | None = None


@dataclass(frozen=True)
class PulseProgram:
    events: tuple = field(default_factory=tuple)
    phase_cycle: PhaseCycle | None = None

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))


@lru_cache(maxsize=16)
def _eig_full(sys: SpinSystem) -> tuple[np.ndarray, np.ndarray]:
    return np.linalg.eigh(build_hamiltonian(sys))


@lru_cache(maxsize=16)
def _eig_decoupled(sys: SpinSystem) -> tuple[np.ndarray, np.ndarray]:
    return np.linalg.eigh(build_hamiltonian(sys) - heteronuclear_zz_part(sys))


def free_propagator(sys: SpinSystem, t: float, hamiltonian: str = "full") -> np.ndarray:
    w, v = _eig_full(sys) if hamiltonian == "full" else _eig_decoupled(sys)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def _rotation_2x2(flip: float, phase: float) -> np.ndarray:
    c, s = np.cos(flip / 2), np.sin(flip / 2)
    return np.array([[c, -1j * s * np.exp(-1j * phase)], [-1j * s * np.exp(1j * phase), c]])


def hard_pulse_operator(sys: SpinSystem, channel: str, flip_angle: float, phase: float = 0.0) -> np.ndarray:
    """exp(-i flip (Fx cos phase + Fy sin phase)) over every spin of ``channel``."""
    try:
        sites = set(sys.sites_of(channel))
    except ValueError:
        raise PulseProgramError(f"unknown channel {channel!r}") from None
    if not sites:
        raise PulseProgramError(f"no spins on channel {channel!r}")
    rot = _rotation_2x2(flip_angle, phase)
    out = np.ones((1, 1), dtype=complex)
    for k in range(sys.n_spins):
        out = np.kron(out, rot if k in sites else np.eye(2))
    return out


def gradient_crusher(rho: DensityMatrix, sys: SpinSystem, channel: str = "all") -> DensityMatrix:
    """Ideal crusher: zero every element with nonzero coherence order on the
    channel.  ``all`` treats each species separately, since their
    gyromagnetic ratios differ and no heteronuclear coherence survives."""
    if channel == "all":
        keep = np.ones(rho.data.shape, dtype=bool)
        for species in sys.species_present:
            keep &= order_matrix(sys, species) == 0
    else:
        keep = order_matrix(sys, channel) == 0
    return DensityMatrix(np.where(keep, rho.data, 0), rho.kind)


def _gaussian_phase_integrals(env: GaussianEnvelope, omega: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """int_{edges[k]}^{edges[k+1]} a(t) exp(i omega t) dt for every slice k and
    frequency, written with the Faddeeva function so large omega*sigma stays
    finite."""
    sigma = env.sigma_s
    centre = env.duration_s / 2
    b = omega * sigma / np.sqrt(2)
    s = (edges - centre) / (sigma * np.sqrt(2))
    z = b[None, :] + 1j * s[:, None]
    # exp(-b^2) erfc(s - i b) = w(b + i s) exp(-s^2 + 2 i b s)
    g = wofz(z) * np.exp(-s[:, None] ** 2 + 2j * b[None, :] * s[:, None])
    prefac = env.peak_amp_rad_s * sigma * np.sqrt(2) * np.exp(1j * omega * centre) * np.sqrt(np.pi) / 2
    return prefac[None, :] * (g[:-1] - g[1:])


@lru_cache(maxsize=16)
def _eigensystem(sys: SpinSystem) -> Eigensystem:
    return eigensystem(sys)


def _shaped_propagator(sys: SpinSystem, ev: ShapedPulse, n_slices: int) -> np.ndarray:
    sites = sys.sites_of(ev.channel)
    if not sites:
        raise PulseProgramError(f"no spins on channel {ev.channel!r}")
    fz_diag = sys.projections(ev.channel)
    w_carrier = 2 * np.pi * ev.carrier_offset_hz
    duration = ev.envelope.duration_s
    # Carrier frame: H' = H + w_c Fz, drive a(t) (Fx cos phase + Fy sin phase).
    # Integrate in the interaction picture of H'.  Each slice uses the exact
    # integral of the Gaussian envelope against the oscillating phase factors
    # (first-order Magnus term), so slicing error starts at second order.
    eig = _eigensystem(sys)
    v = eig.vectors
    w = eig.energies + w_carrier * eig.m[Species(ev.channel).value]
    drive = np.cos(ev.phase) * total_op(sys.n_spins, sites, "x") + np.sin(ev.phase) * total_op(
        sys.n_spins, sites, "y"
    )
    drive_eig = v.conj().T @ drive @ v
    # the drive conserves the Sz of every other species: exponentiate per block
    others = [eig.m[k] for k in sorted(eig.m) if k != Species(ev.channel).value]
    keys = np.stack(others, axis=1) if others else np.zeros((sys.dim, 1))
    blocks = [np.nonzero(np.all(keys == k, axis=1))[0] for k in np.unique(keys, axis=0)]
    omega = w[:, None] - w[None, :]
    mask = np.abs(drive_eig) > 1e-14
    freqs, inverse = np.unique(np.round(omega[mask], 9), return_inverse=True)
    edges = np.linspace(0.0, duration, n_slices + 1)
    integrals = _gaussian_phase_integrals(ev.envelope, freqs, edges)
    u_int = np.zeros((sys.dim, sys.dim), dtype=complex)
    gen = np.zeros((sys.dim, sys.dim), dtype=complex)
    for idx in blocks:
        sub = np.ix_(idx, idx)
        u_int[sub] = np.eye(idx.size)
    for k in range(n_slices):
        gen[mask] = drive_eig[mask] * integrals[k][inverse]
        for idx in blocks:
            sub = np.ix_(idx, idx)
            g = gen[sub]
            gw, gv = np.linalg.eigh(0.5 * (g + g.conj().T))
            u_int[sub] = (gv * np.exp(-1j * gw)) @ gv.conj().T @ u_int[sub]
    u_frame = v @ (np.exp(-1j * w * duration)[:, None] * u_int) @ v.conj().T
    back = np.exp(1j * w_carrier * duration * fz_diag)
    return back[:, None] * u_frame


def shaped_pulse(
    rho: DensityMatrix,
    sys: SpinSystem,
    ev: ShapedPulse,
    tol: float = 1e-6,
    max_slices: int = 8192,
) -> DensityMatrix:
    """Sliced propagation under H + H_rf(t).

    The slice count is doubled from ``ev.n_slices`` until the output changes
    by less than ``tol`` (Frobenius); NonConvergenceError otherwise.
    """
    n = ev.n_slices
    prev = evolve(rho, _shaped_propagator(sys, ev, n)).data
    while True:
        if 2 * n > max_slices:
            raise NonConvergenceError(
                f"shaped pulse not converged at {n} slices (tolerance {tol:g})"
            )
        n *= 2
        cur = evolve(rho, _shaped_propagator(sys, ev, n)).data
        if np.linalg.norm(cur - prev) < tol:
            return rho.with_data(cur)
        prev = cur


def dq_hamiltonian(sys: SpinSystem, global_phase: float = 0.0) -> np.ndarray:
    """Zeroth-order average Hamiltonian of the eight-pulse cycle (rad/s).

    H = -sum_{j<k} (2 pi b_jk / 4) (e^{2i phi} S_j+ S_k+ + e^{-2i phi} S_j- S_k-)
    over like-spin protons, plus the carbon Zeeman term which the proton
    pulses leave untouched.  The global phase acts as S+ -> S+ e^{i phi}, so
    coherence order p picks up e^{i p phi}.
    """
    n = sys.n_spins
    protons = sys.sites_of("H1")
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    plus = {k: single_spin_op(n, k, "plus") for k in protons}
    minus = {k: single_spin_op(n, k, "minus") for k in protons}
    ph = np.exp(2j * global_phase)
    for j, k in itertools.combinations(protons, 2):
        b = sys.dipolar_hz[j, k]
        if b:
            h -= 2 * np.pi * b / 4 * (ph * plus[j] @ plus[k] + np.conj(ph) * minus[j] @ minus[k])
    for k, site in enumerate(sys.sites):
        if site.species.value != "H1" and site.offset_hz:
            h -= 2 * np.pi * site.offset_hz * single_spin_op(n, k, "z")
    return h


def eight_pulse_cycle(sys: SpinSystem, tau_s: float, global_phase: float = 0.0) -> np.ndarray:
    """One cycle tau/2 X tau' X tau Xb tau' Xb tau Xb tau' Xb tau X tau' X tau/2,
    tau' = 2 tau, delta pulses on the protons, full Hamiltonian in between.

    ``global_phase`` is taken in the S+ -> S+ e^{i phi} sense of
    ``dq_hamiltonian``; in the hard-pulse phase convention that is an offset
    of -phi on every pulse.
    """
    x = hard_pulse_operator(sys, "H1", np.pi / 2, -global_phase)
    xb = hard_pulse_operator(sys, "H1", np.pi / 2, np.pi - global_phase)
    half, short, long_ = (free_propagator(sys, t) for t in (tau_s / 2, tau_s, 2 * tau_s))
    seq = [half, x, long_, x, short, xb, long_, xb, short, xb, long_, xb, short, x, long_, x, half]
    u = np.eye(sys.dim, dtype=complex)
    for step in seq:
        u = step @ u
    return u


def mq_block_propagator(sys: SpinSystem, ev: MqBlock) -> np.ndarray:
    if ev.mode == "ideal":
        w, v = np.linalg.eigh(dq_hamiltonian(sys, ev.global_phase))
        return (v * np.exp(-1j * w * ev.duration)) @ v.conj().T
    return np.linalg.matrix_power(eight_pulse_cycle(sys, ev.tau_s, ev.global_phase), ev.n_cycles)


def mq_block(rho: DensityMatrix, sys: SpinSystem, ev: MqBlock) -> DensityMatrix:
    return evolve(rho, mq_block_propagator(sys, ev))


def apply_event(rho: DensityMatrix, sys: SpinSystem, ev: PulseEvent) -> DensityMatrix:
    if isinstance(ev, HardPulse):
        return evolve(rho, hard_pulse_operator(sys, ev.channel, ev.flip_angle, ev.phase))
    if isinstance(ev, Delay):
        return evolve(rho, free_propagator(sys, ev.duration, ev.hamiltonian))
    if isinstance(ev, GradientCrusher):
        return gradient_crusher(rho, sys, ev.channel)
    if isinstance(ev, ShapedPulse):
        return shaped_pulse(rho, sys, ev)
    if isinstance(ev, MqBlock):
        return mq_block(rho, sys, ev)
    raise PulseProgramError(f"unknown event {ev!r}")


def cycle_weights(n_steps: int, target_order: int) -> np.ndarray:
    """Receiver weights selecting orders +target and -target together.

    Shifting the excitation phases by phi_k = 2 pi k / n multiplies order p by
    exp(i p phi_k); weighting with exp(-i p phi_k) for p = +-target and
    averaging keeps exactly those two orders.
    """
    phi = 2 * np.pi * np.arange(n_steps) / n_steps
    if target_order == 0:
        return np.ones(n_steps, dtype=complex)
    return np.exp(-1j * target_order * phi) + np.exp(1j * target_order * phi)


def _shift_phase(ev: PulseEvent, dphi: float, sys: SpinSystem, channel: str) -> PulseEvent:
    """Advance an event's phase by dphi in the MqBlock sense.

    Every shifted event is conjugated by the same z-rotation; hard and shaped
    pulse phases run the other way (see ``eight_pulse_cycle``).
    """
    if isinstance(ev, MqBlock):
        return replace(ev, global_phase=ev.global_phase + dphi)
    if isinstance(ev, (HardPulse, ShapedPulse)):
        if channel == "all" or set(sys.sites_of(ev.channel)) <= set(sys.sites_of(channel)):
            return replace(ev, phase=float(np.mod(ev.phase - dphi, 2 * np.pi)))
    return ev


def _check_cycle(pc: PhaseCycle, sys: SpinSystem) -> None:
    n = len(sys.sites_of(pc.channel))
    if pc.n_steps <= 2 * n:
        raise PulseProgramError(
            f"{pc.n_steps} phase-cycle steps alias orders; need more than {2 * n} for {n} spins"
        )
    if abs(pc.target_order) > n:
        raise PulseProgramError(f"target order {pc.target_order} unreachable with {n} spins")


def phase_cycle_filter(
    rho: DensityMatrix, sys: SpinSystem, n_steps: int, target_order: int, channel: str = "H1"
) -> DensityMatrix:
    """Phase-cycled selection applied at the filter point: the weighted average
    of z-phase-shifted copies of ``rho``."""
    _check_cycle(PhaseCycle(n_steps, target_order, channel), sys)
    weights = cycle_weights(n_steps, target_order)
    acc = np.zeros_like(rho.data)
    for k in range(n_steps):
        r = z_rotation(sys, 2 * np.pi * k / n_steps, channel)
        acc += weights[k] * (r @ rho.data @ r.conj().T)
    kind = "deviation" if target_order else rho.kind
    return DensityMatrix(0.5 * (acc + acc.conj().T) / n_steps, kind)


def run_program(
    rho: DensityMatrix,
    prog: PulseProgram,
    sys: SpinSystem,
    workers: int = 1,
) -> DensityMatrix:
    """Apply the events left to right.

    With a phase cycle, the excitation segment runs once per step with its
    phases advanced by 2 pi k / n_steps; the replicas are summed with the
    receiver weights in step order and the rest of the program runs once on
    the sum.  ``workers`` > 1 runs replicas on a thread pool; the reduction
    order is fixed, so results do not depend on it.
    """
    if rho.dim != sys.dim:
        raise PulseProgramError(f"state dimension {rho.dim} != system dimension {sys.dim}")
    events: Sequence[PulseEvent] = prog.events
    pc = prog.phase_cycle
    if pc is None:
        for ev in events:
            rho = apply_event(rho, sys, ev)
        return rho

    _check_cycle(pc, sys)
    end = pc.excitation_end
    if end is None:
        mq_idx = [i for i, ev in enumerate(events) if isinstance(ev, MqBlock)]
        if not mq_idx:
            raise PulseProgramError("phase cycle needs an MqBlock or an explicit excitation_end")
        end = mq_idx[0] + 1
    head, tail = events[:end], events[end:]
    weights = cycle_weights(pc.n_steps, pc.target_order)

    def replica(k: int) -> np.ndarray:
        dphi = 2 * np.pi * k / pc.n_steps
        state = rho
        for ev in head:
            state = apply_event(state, sys, _shift_phase(ev, dphi, sys, pc.channel))
        return state.data

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(replica, range(pc.n_steps)))
    else:
        results = [replica(k) for k in range(pc.n_steps)]
    acc = np.zeros_like(rho.data)
    for w, r in zip(weights, results):
        acc += w * r
    acc /= pc.n_steps
    kind = "deviation" if pc.target_order else rho.kind
    out = DensityMatrix(0.5 * (acc + acc.conj().T), kind)
    for ev in tail:
        out = apply_event(out, sys, ev)
    return out
