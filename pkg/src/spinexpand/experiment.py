"""Scripted preparation, expansion and decoherence pipelines.

Step A turns thermal proton order into I0z Sigma_z, step B traps the
population of |up>|u> to give a pseudopure ground state, and step C maps the
13C qubit onto the seven-spin state a|up>|u> + b|down>|d>.  Every step runs in
``ideal`` mode (exact Sigma-subspace rotations, average-Hamiltonian MQ block,
exact saturation) or ``pulse_level`` mode (eight-pulse cycles, phase cycling,
Gaussian saturation pulses).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import minimize_scalar

from . import logic
from .coherence import (
    decompose,
    project_order,
    sigma_bloch,
    sigma_pairs,
    sigma_rotation,
    sigma_rotation_block,
)
from .hamiltonian import (
    Species,
    SpinSystem,
    conditional_coupling_hz,
    eigensystem,
    thermal_deviation,
    total_spin,
)
from .pulses import (
    DEFAULT_TAU_S,
    Delay,
    GaussianEnvelope,
    HardPulse,
    MqBlock,
    PhaseCycle,
    PulseProgram,
    ShapedPulse,
    apply_event,
    free_propagator,
    gradient_crusher,
    mq_block_propagator,
    run_program,
    shaped_pulse,
)
from .spin_core import DensityMatrix, SpinAlgebraError, evolve, fidelity_pure

MODES = ("ideal", "pulse_level")


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class RelaxationParams:
    """Phenomenological decay times in seconds.

    ``t2_by_order`` maps |all-spin coherence order| to T2; orders not listed
    use ``t2_default_s``.  T1 is only applied when ``include_t1`` is set.
    """

    t2_by_order: dict = field(default_factory=lambda: {7: 0.050})
    t2_default_s: float = 0.3
    t1_s: float = 2.0
    include_t1: bool = False

    def __post_init__(self):
        orders = {int(abs(int(k))): float(v) for k, v in dict(self.t2_by_order).items()}
        if any(v <= 0 for v in orders.values()) or self.t2_default_s <= 0 or self.t1_s <= 0:
            raise ValueError("relaxation times must be > 0")
        object.__setattr__(self, "t2_by_order", orders)

    def t2(self, order: int) -> float:
        return self.t2_by_order.get(abs(int(order)), self.t2_default_s)


@dataclass(frozen=True)
class SequenceParams:
    """Timing and selection settings shared by the three steps."""

    n_cycles: int = 20
    tau_s: float = DEFAULT_TAU_S
    phase_cycle_steps: int = 16
    conditional_delay_s: float | None = None
    saturation_duration_s: float = 0.04
    saturation_guard_hz: float = 40.0
    saturation_max_pulses: int = 8
    saturation_tol: float = 1e-3
    saturation_rel_tol: float = 1e-4
    min_contrast: float = 1.5
    min_filter_norm: float = 1e-6

    def __post_init__(self):
        if self.n_cycles < 1 or self.tau_s <= 0:
            raise ValueError("n_cycles must be >= 1 and tau_s > 0")
        if self.conditional_delay_s is not None and self.conditional_delay_s < 0:
            raise ValueError("conditional_delay_s must be >= 0")
        if self.saturation_duration_s <= 0 or self.saturation_max_pulses < 1:
            raise ValueError("saturation needs a positive duration and at least one pulse")

    def block(self, global_phase: float = 0.0, mode: str = "ideal") -> MqBlock:
        return MqBlock(self.n_cycles, global_phase, mode, self.tau_s)


@dataclass
class ExperimentResult:
    rho_final: DensityMatrix
    fidelity_vs_oracle: float
    timeline: list[tuple[str, DensityMatrix]] = field(default_factory=list)
    info: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.fidelity_vs_oracle <= 1.0 + 1e-12:
            raise ValueError(f"fidelity {self.fidelity_vs_oracle} outside [0, 1]")
        self.fidelity_vs_oracle = float(min(self.fidelity_vs_oracle, 1.0))

    def checkpoint(self, label: str) -> DensityMatrix:
        for name, rho in self.timeline:
            if name == label:
                return rho
        raise KeyError(label)


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _single_carbon(sys: SpinSystem) -> int:
    carbons = sys.sites_of(Species.C13)
    if len(carbons) != 1 or carbons[0] != 0:
        raise ExperimentError("the pipelines need exactly one 13C spin at site 0")
    return carbons[0]


# ---------------------------------------------------------------- metrics


def thermal_state(sys: SpinSystem) -> DensityMatrix:
    return DensityMatrix(thermal_deviation(sys), "deviation")


def pure_part(rho: DensityMatrix) -> DensityMatrix:
    """Trace-normalised pure component of a pseudopure density.

    The background level is taken as the median eigenvalue; whatever rises
    above it is kept and normalised.
    """
    w, v = np.linalg.eigh(rho.data)
    w = np.clip(w - np.median(w), 0.0, None)
    if w.sum() <= 0:
        raise ExperimentError("state has no component above its background")
    data = (v * (w / w.sum())) @ v.conj().T
    return DensityMatrix(0.5 * (data + data.conj().T))


def pseudopure_fidelity(rho: DensityMatrix, psi: np.ndarray) -> float:
    return fidelity_pure(pure_part(rho), psi)


def deviation_correlation(a: DensityMatrix | np.ndarray, b: DensityMatrix | np.ndarray) -> float:
    """Tr(A B) / (|A| |B|) for Hermitian A, B (Frobenius norms)."""
    a = a.data if isinstance(a, DensityMatrix) else np.asarray(a)
    b = b.data if isinstance(b, DensityMatrix) else np.asarray(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.real(np.vdot(a, b)) / (na * nb))


def i0z_sigma_z(sys: SpinSystem) -> np.ndarray:
    """I0z Sigma_z on the full space (the step A target operator)."""
    out = np.zeros((sys.dim, sys.dim), dtype=complex)
    up, down = sigma_pairs(sys)[:2]
    for (u, d), s in ((up, 0.5), (down, -0.5)):
        out[u, u] += 0.5 * s
        out[d, d] -= 0.5 * s
    return out


def ground_index(sys: SpinSystem) -> int:
    return sigma_pairs(sys)[0][0]


def expansion_oracle(theta: float, sys: SpinSystem) -> np.ndarray:
    """cos(theta/2)|up>|u> + sin(theta/2)|down>|d> from the circuit model."""
    n = len(sys.sites_of(Species.H1))
    state = logic.expand_chain(logic.initial_state(np.cos(theta / 2), np.sin(theta / 2), n))
    if state.state.size != sys.dim:
        raise ExperimentError("circuit register does not match the spin system")
    return state.state


# ---------------------------------------------------------------- Sigma gates


def conditional_delay(sys: SpinSystem) -> float:
    """Delay that turns the |u>-|d> coherence by +-90 deg depending on 13C."""
    c = conditional_coupling_hz(sys)
    if c == 0:
        raise ExperimentError("no 13C-1H coupling; conditional evolution impossible")
    return 1.0 / (2 * abs(c))


def sigma_block(u: np.ndarray, sys: SpinSystem, pair: int = 0) -> np.ndarray:
    """2x2 restriction of a propagator to one (|u>, |d>) pair."""
    a, b = sigma_pairs(sys)[pair]
    return u[np.ix_([a, b], [a, b])]


def gate_fidelity_90(v: np.ndarray) -> tuple[float, float]:
    """Best |Tr(R^dag V)|^2 / 4 over 90 deg rotations R about XY axes.

    Returns the fidelity and the optimal axis phase.
    """

    def cost(alpha: float) -> float:
        r = sigma_rotation_block(np.pi / 2, alpha)
        return -abs(np.trace(r.conj().T @ v)) ** 2 / 4

    grid = np.linspace(0, 2 * np.pi, 361)
    start = grid[np.argmin([cost(a) for a in grid])]
    step = grid[1] - grid[0]
    res = minimize_scalar(cost, bounds=(start - step, start + step), method="bounded",
                          options={"xatol": 1e-10})
    return float(-res.fun), float(np.mod(res.x, 2 * np.pi))


def mq_sigma_gate(sys: SpinSystem, seq: SequenceParams, mode: str = "pulse_level",
                  global_phase: float = 0.0) -> dict:
    """Effective Sigma-subspace gate of one MQ block for the 13C-up branch."""
    u = mq_block_propagator(sys, seq.block(global_phase, mode))
    fid, alpha = gate_fidelity_90(sigma_block(u, sys, 0))
    fid_down, _ = gate_fidelity_90(sigma_block(u, sys, 1))
    return {"fidelity": fid, "axis_phase": alpha, "fidelity_13c_down": fid_down,
            "duration_s": seq.block(global_phase, mode).duration}


def calibrate_tau(sys: SpinSystem, taus_s, n_cycles: int = 20, mode: str = "pulse_level") -> list[dict]:
    """Sigma 90 deg gate fidelity of the MQ block over a list of tau values."""
    rows = []
    for tau in taus_s:
        seq = SequenceParams(n_cycles=n_cycles, tau_s=float(tau))
        rows.append({"tau_s": float(tau), **mq_sigma_gate(sys, seq, mode)})
    return rows


def sweep_conditional_delay(rho: DensityMatrix, sys: SpinSystem, delays_s) -> list[dict]:
    """Angle between the 13C-up and 13C-down Sigma Bloch vectors after each
    delay; 180 deg marks the conditional 90 deg point for a transverse input."""
    rows = []
    for t in delays_s:
        out = evolve(rho, free_propagator(sys, float(t)))
        up, down = sigma_bloch(out, sys)[:2]
        ang = np.angle(complex(*up[:2])) - np.angle(complex(*down[:2]))
        rows.append({"delay_s": float(t), "relative_angle_deg": float(np.degrees(np.mod(ang, 2 * np.pi)))})
    return rows


def _axis_to_z(r: np.ndarray) -> float:
    """XY axis phase whose +90 deg rotation takes transverse vector r to +z."""
    return float(np.mod(np.arctan2(-r[0], r[1]), 2 * np.pi))


def sigma_pulse(rho: DensityMatrix, sys: SpinSystem, axis_phase: float, mode: str,
                seq: SequenceParams) -> tuple[DensityMatrix, float]:
    """Sigma-subspace 90 deg pulse about ``axis_phase``.

    Pulse-level mode runs an MQ block whose global phase is chosen from the
    calibrated block axis.  A global phase g multiplies |u><d| by e^{i n g},
    which turns the rotation axis by -n g.  Returns the new state and the MQ
    global phase used (0 in ideal mode).
    """
    if mode == "ideal":
        return evolve(rho, sigma_rotation(np.pi / 2, axis_phase, sys)), 0.0
    n = len(sys.sites_of(Species.H1))
    base = mq_sigma_gate(sys, seq, "pulse_level")["axis_phase"]
    g = np.mod(base - axis_phase, 2 * np.pi) / n
    return evolve(rho, mq_block_propagator(sys, seq.block(g, "pulse_level"))), float(g)


# ---------------------------------------------------------------- step A


def prepare_rho_a(sys: SpinSystem, mode: str = "ideal", seq: SequenceParams | None = None) -> ExperimentResult:
    _check_mode(mode)
    seq = seq or SequenceParams()
    carbon = _single_carbon(sys)
    n_h = len(sys.sites_of(Species.H1))
    timeline = []
    rho = thermal_state(sys)
    timeline.append(("thermal", rho))

    rho = apply_event(rho, sys, HardPulse("C13", np.pi / 2))
    rho = gradient_crusher(rho, sys, "C13")
    timeline.append(("c13_saturated", rho))

    if mode == "ideal":
        rho = apply_event(rho, sys, seq.block(0.0, "ideal"))
        timeline.append(("mq_excited", rho))
        rho = project_order(rho, n_h, sys, "H1")
    else:
        prog = PulseProgram(
            (seq.block(0.0, "pulse_level"),),
            PhaseCycle(seq.phase_cycle_steps, n_h, "H1"),
        )
        rho = run_program(rho, prog, sys)
    norm = float(np.linalg.norm(rho.data))
    if norm < seq.min_filter_norm:
        raise ExperimentError(
            f"{n_h}Q filter left norm {norm:.2e}; couplings too weak for the MQ block length"
        )
    timeline.append(("mq_filtered", rho))

    t_c = seq.conditional_delay_s if seq.conditional_delay_s is not None else conditional_delay(sys)
    rho = apply_event(rho, sys, Delay(t_c))
    timeline.append(("rho_a_delay", rho))

    alpha = _axis_to_z(sigma_bloch(rho, sys)[0])
    rho, g = sigma_pulse(rho, sys, alpha, mode, seq)
    timeline.append(("rho_a", rho))

    target = i0z_sigma_z(sys)
    corr = deviation_correlation(rho, target)
    info = {
        "mode": mode,
        "carbon_site": carbon,
        "filter_norm": norm,
        "conditional_delay_s": t_c,
        "sigma_axis_deg": float(np.degrees(alpha)),
        "mq_global_phase_deg": float(np.degrees(g)),
        "overlap_i0z_sigma_z": corr,
    }
    return ExperimentResult(rho, max(corr, 0.0), timeline, info)


# ---------------------------------------------------------------- step B


def trapped_contrast(rho: DensityMatrix, index: int) -> float:
    """(p_target - median) / max |p_other - median| over diagonal populations."""
    p = rho.data.diagonal().real
    med = np.median(p)
    others = np.delete(p, index)
    spread = np.max(np.abs(others - med))
    return float(np.inf if spread == 0 else (p[index] - med) / spread)


def transition_table(sys: SpinSystem, channel: str) -> list[dict]:
    """Single-quantum transitions of ``channel``.

    ``freq_hz`` is (E_lower - E_upper) / 2pi with ``upper`` the state of
    higher channel Sz, so a bare spin at offset f has its line at +f.
    ``states`` are the dominant product-basis indices of (upper, lower).
    """
    eig = eigensystem(sys)
    w, v = eig.energies, eig.vectors
    fplus = v.conj().T @ total_spin(sys, channel, "plus") @ v
    dominant = np.argmax(np.abs(v) ** 2, axis=0)
    rows = []
    for up, lo in zip(*np.nonzero(np.abs(fplus) > 1e-6)):
        rows.append({
            "eig": (int(up), int(lo)),
            "states": (int(dominant[up]), int(dominant[lo])),
            "freq_hz": float((w[lo] - w[up]) / (2 * np.pi)),
            "strength": float(abs(fplus[up, lo]) / 2),
        })
    return rows


def saturation_candidates(sys: SpinSystem, guard_hz: float, min_strength_rel: float = 0.1) -> list[dict]:
    """Transitions that may be saturated: not touching |up>|u>, at least
    ``guard_hz`` away from every line of |up>|u>, and not too weak to drive."""
    ground = ground_index(sys)
    eig = eigensystem(sys)
    ground_eig = int(np.argmax(np.abs(eig.vectors[ground])))
    out = []
    for channel in ("C13", "H1"):
        table = transition_table(sys, channel)
        if not table:
            continue
        protected = [t["freq_hz"] for t in table if ground_eig in t["eig"]]
        cutoff = min_strength_rel * max(t["strength"] for t in table)
        for t in table:
            if ground_eig in t["eig"] or t["strength"] < cutoff:
                continue
            if any(abs(t["freq_hz"] - f) < guard_hz for f in protected):
                continue
            out.append({"channel": channel, **t})
    return out


def _saturate_pulse_level(rho: DensityMatrix, sys: SpinSystem, seq: SequenceParams) -> tuple[DensityMatrix, list]:
    """Greedy selective saturation: hit the allowed line with the largest
    population difference with a Gaussian 90 deg pulse, crush, repeat."""
    cands = saturation_candidates(sys, seq.saturation_guard_hz)
    if not cands:
        raise ExperimentError("no saturation targets survive the guard band")
    v = eigensystem(sys).vectors
    applied = []
    for _ in range(seq.saturation_max_pulses):
        pops = np.real(np.einsum("ij,ik,kj->j", v.conj(), rho.data, v))
        diffs = [abs(pops[c["eig"][0]] - pops[c["eig"][1]]) for c in cands]
        best = int(np.argmax(diffs))
        if diffs[best] < seq.saturation_tol:
            break
        c = cands[best]
        # 90 deg on the transition: nutation angle is 2 |<a|Fx|b>| times the area
        env = GaussianEnvelope.for_flip(np.pi / (4 * c["strength"]), seq.saturation_duration_s)
        tol = seq.saturation_rel_tol * max(1.0, float(np.linalg.norm(rho.data)))
        rho = shaped_pulse(rho, sys, ShapedPulse(c["channel"], env, c["freq_hz"], 64), tol=tol)
        rho = gradient_crusher(rho, sys, "all")
        applied.append((c["channel"], c["freq_hz"]))
    return rho, applied


def prepare_pseudopure(sys: SpinSystem, mode: str = "ideal", seq: SequenceParams | None = None,
                       rho_a: ExperimentResult | None = None) -> ExperimentResult:
    _check_mode(mode)
    seq = seq or SequenceParams()
    res_a = rho_a or prepare_rho_a(sys, mode, seq)
    rho = res_a.rho_final
    ground = ground_index(sys)
    timeline = list(res_a.timeline)
    info: dict[str, Any] = {"mode": mode, "rho_a_overlap": res_a.info["overlap_i0z_sigma_z"]}

    if mode == "ideal":
        p = rho.data.diagonal().real
        if rho.kind == "deviation":
            rest = -p[ground] / (sys.dim - 1)
        else:
            rest = (1 - p[ground]) / (sys.dim - 1)
        diag = np.full(sys.dim, rest)
        diag[ground] = p[ground]
        rho = DensityMatrix(np.diag(diag).astype(complex), rho.kind)
    else:
        rho = gradient_crusher(rho, sys, "all")
        rho, applied = _saturate_pulse_level(rho, sys, seq)
        info["saturated_lines"] = [{"channel": c, "freq_hz": f} for c, f in applied]

    contrast = trapped_contrast(rho, ground)
    p = rho.data.diagonal().real
    # mu: trapped excess over the background level of the other populations
    info["trapped_excess"] = float(p[ground] - np.median(np.delete(p, ground)))
    info["contrast"] = contrast
    timeline.append(("pseudopure", rho))
    if not contrast > seq.min_contrast:
        raise ExperimentError(
            f"trapped-population contrast {contrast:.3g} below {seq.min_contrast} "
            f"(excess {info['trapped_excess']:.3g})"
        )
    psi = np.zeros(sys.dim, dtype=complex)
    psi[ground] = 1
    fid = pseudopure_fidelity(rho, psi)
    return ExperimentResult(rho, fid, timeline, info)


# ---------------------------------------------------------------- step C


def _final_axis(sys: SpinSystem, first_axis: float, t_c: float) -> float:
    """Axis phase of the closing Sigma pulse: take the 13C-up branch, after the
    opening pulse and the delay, onto +z."""
    ket = sigma_rotation_block(np.pi / 2, first_axis) @ np.array([1, 0], dtype=complex)
    ket = sigma_block(free_propagator(sys, t_c), sys, 0) @ ket
    r = np.array([np.real(ket[0] * np.conj(ket[1])) * 2, -np.imag(ket[0] * np.conj(ket[1])) * 2])
    return _axis_to_z(r)


def intermediate_oracle(theta: float, sys: SpinSystem) -> np.ndarray:
    """State after the opening Sigma pulse and the conditional delay, in the
    frame of the simulation: each 13C branch carries its +-90 deg Sigma phase.

    cos(theta/2) e^{-i s pi/4} |up>(|u> + i s|d>)/sqrt2
      + sin(theta/2) e^{+i s pi/4} |down>(|u> - i s|d>)/sqrt2,  s = sign(C)
    """
    s = np.sign(conditional_coupling_hz(sys))
    (u0, d0), (u1, d1) = sigma_pairs(sys)[:2]
    psi = np.zeros(sys.dim, dtype=complex)
    a, b = np.cos(theta / 2) * np.exp(-1j * s * np.pi / 4), np.sin(theta / 2) * np.exp(1j * s * np.pi / 4)
    psi[u0], psi[d0] = a / np.sqrt(2), 1j * s * a / np.sqrt(2)
    psi[u1], psi[d1] = b / np.sqrt(2), -1j * s * b / np.sqrt(2)
    return psi


def expand(sys: SpinSystem, theta: float, mode: str = "ideal", seq: SequenceParams | None = None,
           pseudopure: ExperimentResult | None = None) -> ExperimentResult:
    """theta pulse on 13C, Sigma 90, conditional delay, Sigma 90 at the
    closing phase; fidelity is for the pure part against the circuit oracle."""
    _check_mode(mode)
    seq = seq or SequenceParams()
    res_b = pseudopure or prepare_pseudopure(sys, mode, seq)
    rho = res_b.rho_final
    timeline = list(res_b.timeline)

    rho = apply_event(rho, sys, HardPulse("C13", float(np.mod(theta, 2 * np.pi)), np.pi / 2))
    timeline.append(("theta_pulse", rho))

    first = np.pi / 2
    rho, g1 = sigma_pulse(rho, sys, first, mode, seq)
    timeline.append(("sigma_open", rho))

    t_c = seq.conditional_delay_s if seq.conditional_delay_s is not None else conditional_delay(sys)
    rho = apply_event(rho, sys, Delay(t_c))
    timeline.append(("conditional_delay", rho))

    last = _final_axis(sys, first, t_c)
    rho, g2 = sigma_pulse(rho, sys, last, mode, seq)
    timeline.append(("expanded", rho))

    oracle = expansion_oracle(theta, sys)
    fid = pseudopure_fidelity(rho, oracle)
    mid = pseudopure_fidelity(timeline[-2][1], intermediate_oracle(theta, sys))
    # Sigma phases are reported as the phase acquired by |u><d|, the same
    # sense as sigma_phase_of_global_phase; an axis turn by +d gives e^{-i d}.
    info = {
        "mode": mode,
        "theta_deg": float(np.degrees(theta)),
        "conditional_delay_s": t_c,
        "sigma_axis_open_deg": float(np.degrees(first)),
        "sigma_axis_close_deg": float(np.degrees(last)),
        "sigma_phase_relative_deg": float(np.degrees(np.mod(first - last, 2 * np.pi))),
        "intermediate_fidelity": mid,
        "duration_s": expansion_duration(sys, seq),
        "pseudopure_fidelity": res_b.fidelity_vs_oracle,
    }
    if mode == "pulse_level":
        # global phases are geared n:1 onto the Sigma axis, so they are defined mod 2pi/n
        n = len(sys.sites_of(Species.H1))
        info["mq_phase_relative_deg"] = float(np.degrees(np.mod(g2 - g1, 2 * np.pi / n)))
    return ExperimentResult(rho, fid, timeline, info)


def expansion_duration(sys: SpinSystem, seq: SequenceParams | None = None) -> float:
    """Two MQ blocks plus the conditional delay."""
    seq = seq or SequenceParams()
    t_c = seq.conditional_delay_s if seq.conditional_delay_s is not None else conditional_delay(sys)
    return 2 * seq.block().duration + t_c


# ---------------------------------------------------------------- measurement


def measure_model(rho: DensityMatrix, t: float, params: RelaxationParams | None = None,
                  sys: SpinSystem | None = None) -> DensityMatrix:
    """Dephase each all-spin coherence order p != 0 by exp(-t / T2(|p|)).

    With ``include_t1`` the populations also relax toward uniform with T1.
    """
    if t < 0:
        raise ValueError("storage time must be >= 0")
    params = params or RelaxationParams()
    n = rho.n_spins
    if sys is not None and sys.n_spins != n:
        raise SpinAlgebraError("state and spin system sizes differ")
    idx = np.arange(rho.dim)
    m = np.zeros(rho.dim)
    for k in range(n):
        m += 0.5 - ((idx >> (n - 1 - k)) & 1)
    orders = np.rint(m[:, None] - m[None, :]).astype(int)
    factor = np.ones(orders.shape)
    for p in np.unique(np.abs(orders)):
        if p:
            factor[np.abs(orders) == p] = np.exp(-t / params.t2(p))
    data = rho.data * factor
    if params.include_t1:
        diag = data.diagonal().real
        mean = diag.mean()
        np.fill_diagonal(data, mean + (diag - mean) * np.exp(-t / params.t1_s))
    return rho.with_data(data)


def coherence_histogram(rho: DensityMatrix, sys: SpinSystem, channel: str = "all") -> dict[int, float]:
    return decompose(rho, sys, channel).norms()
