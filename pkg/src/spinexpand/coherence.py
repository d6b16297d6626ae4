"""Coherence-order bookkeeping and the effective two-level algebra on the
proton states |u> (all up) and |d> (all down).

Coherence order of element (i, j) is m_i - m_j, with m the total Sz of the
selected channel.  A z-rotation exp(-i phi Fz) multiplies order p by
exp(-i p phi).

The Sigma operators follow the Pauli convention [Sx, Sy] = i Sz with |u> as
the +1/2 state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hamiltonian import Species, SpinSystem
from .spin_core import DensityMatrix


@dataclass(frozen=True)
class CoherenceDecomposition:
    components: dict[int, np.ndarray]
    channel: str

    def reassemble(self) -> np.ndarray:
        return sum(self.components[p] for p in sorted(self.components))

    def norms(self) -> dict[int, float]:
        """Frobenius norm of every order, including empty ones."""
        return {p: float(np.linalg.norm(c)) for p, c in sorted(self.components.items())}


def order_matrix(sys: SpinSystem, channel: str = "H1") -> np.ndarray:
    m = sys.projections(channel)
    return np.rint(m[:, None] - m[None, :]).astype(int)


def decompose(rho: DensityMatrix | np.ndarray, sys: SpinSystem, channel: str = "H1") -> CoherenceDecomposition:
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    orders = order_matrix(sys, channel)
    n = len(sys.sites_of(channel))
    comps = {p: np.where(orders == p, data, 0) for p in range(-n, n + 1)}
    return CoherenceDecomposition(comps, str(channel))


def project_order(rho: DensityMatrix, p: int, sys: SpinSystem, channel: str = "H1") -> DensityMatrix:
    """Keep coherence orders +p and -p only."""
    n = len(sys.sites_of(channel))
    if abs(p) > n:
        raise ValueError(f"|p| = {abs(p)} exceeds the {n} spins in channel {channel}")
    orders = order_matrix(sys, channel)
    data = np.where(np.abs(orders) == abs(p), rho.data, 0)
    kind = rho.kind if p == 0 else "deviation"
    if p == 0 and rho.kind == "true_state":
        # diagonal blocks keep the trace; positivity is preserved by dephasing
        kind = "true_state"
    return DensityMatrix(data, kind)


def z_rotation(sys: SpinSystem, phi: float, channel: str = "H1") -> np.ndarray:
    """exp(-i phi Fz) for the channel, as a dense diagonal matrix."""
    return np.diag(np.exp(-1j * phi * sys.projections(channel)))


def sigma_pairs(sys: SpinSystem) -> list[tuple[int, int]]:
    """(|u>, |d>) basis indices for every configuration of the non-proton spins,
    ordered so that the all-up configuration comes first."""
    protons = sys.sites_of(Species.H1)
    if not protons:
        raise ValueError("Sigma subspace needs at least one proton")
    n = sys.n_spins
    others = [k for k in range(n) if k not in protons]
    pairs = []
    for cfg in range(2 ** len(others)):
        base = 0
        for pos, site in enumerate(others):
            bit = (cfg >> (len(others) - 1 - pos)) & 1
            base |= bit << (n - 1 - site)
        full = sum(1 << (n - 1 - k) for k in protons)
        pairs.append((base, base | full))
    return pairs


@dataclass(frozen=True)
class SigmaOps:
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    sigma_z: np.ndarray


def sigma_ops(sys: SpinSystem) -> SigmaOps:
    dim = sys.dim
    sx = np.zeros((dim, dim), dtype=complex)
    sy = np.zeros((dim, dim), dtype=complex)
    sz = np.zeros((dim, dim), dtype=complex)
    for u, d in sigma_pairs(sys):
        sx[u, d] = sx[d, u] = 0.5
        sy[u, d], sy[d, u] = -0.5j, 0.5j
        sz[u, u], sz[d, d] = 0.5, -0.5
    return SigmaOps(sx, sy, sz)


def _embed_block(sys: SpinSystem, block: np.ndarray) -> np.ndarray:
    u_full = np.eye(sys.dim, dtype=complex)
    for u, d in sigma_pairs(sys):
        idx = np.ix_([u, d], [u, d])
        u_full[idx] = block
    return u_full


def sigma_rotation_block(angle: float, axis_phase: float) -> np.ndarray:
    """2x2 exp(-i angle (Sx cos phi + Sy sin phi)) on (|u>, |d>)."""
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    return np.array(
        [[c, -1j * s * np.exp(-1j * axis_phase)], [-1j * s * np.exp(1j * axis_phase), c]],
        dtype=complex,
    )


def sigma_rotation(angle: float, axis_phase: float, sys: SpinSystem) -> np.ndarray:
    """Rotation by ``angle`` inside span{|u>, |d>} about an axis at ``axis_phase``
    in the XY plane; identity on the orthogonal complement and on 13C."""
    return _embed_block(sys, sigma_rotation_block(angle, axis_phase))


def sigma_z_rotation(angle: float, sys: SpinSystem) -> np.ndarray:
    return _embed_block(sys, np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)]))


def sigma_phase_of_global_phase(global_phase: float, n_protons: int = 6) -> float:
    """Sigma-subspace phase produced by an MQ-block global phase.

    The all-up/all-down coherence has order n_protons, so |u><d| acquires
    e^{i n_protons phi}: the Sigma phase turns n_protons times faster than
    the pulse phases.
    """
    return float(np.mod(n_protons * global_phase, 2 * np.pi))


def sigma_bloch(rho: DensityMatrix | np.ndarray, sys: SpinSystem) -> list[np.ndarray]:
    """Sigma-subspace Bloch components <Sx>, <Sy>, <Sz> for each non-proton
    configuration, in the order of ``sigma_pairs``."""
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    out = []
    for u, d in sigma_pairs(sys):
        coh = data[u, d]
        out.append(np.array([coh.real, -coh.imag, 0.5 * (data[u, u] - data[d, d]).real]))
    return out
