"""Dense spin-1/2 operator algebra.

Basis convention: a system of ``n`` spins lives in a ``2**n`` dimensional space
built as a Kronecker product with site 0 as the leftmost factor.  Within each
factor index 0 is spin-up (Sz = +1/2) and index 1 is spin-down, so the basis
index of a product state is the binary number whose most significant bit is
site 0 (0 = up, 1 = down).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10

_PAULI_HALF = {
    "x": np.array([[0, 0.5], [0.5, 0]], dtype=complex),
    "y": np.array([[0, -0.5j], [0.5j, 0]], dtype=complex),
    "z": np.array([[0.5, 0], [0, -0.5]], dtype=complex),
    "plus": np.array([[0, 1], [0, 0]], dtype=complex),
    "minus": np.array([[0, 0], [1, 0]], dtype=complex),
}


class SpinAlgebraError(ValueError):
    """Raised when an operator or state violates its structural contract."""


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A Hermitian density matrix.

    ``kind`` is ``"true_state"`` for a normalised, positive state and
    ``"deviation"`` for the traceless high-temperature part used in NMR.
    """

    data: np.ndarray
    kind: str = "true_state"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        object.__setattr__(self, "data", data)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise SpinAlgebraError(f"density matrix must be square, got {data.shape}")
        dim = data.shape[0]
        if dim < 1 or dim & (dim - 1):
            raise SpinAlgebraError(f"dimension {dim} is not a power of two")
        if self.kind not in ("true_state", "deviation"):
            raise SpinAlgebraError(f"unknown density matrix kind {self.kind!r}")
        if np.linalg.norm(data - data.conj().T) > HERMITIAN_TOL * max(1.0, np.linalg.norm(data)):
            raise SpinAlgebraError("density matrix is not Hermitian")
        tr = np.trace(data)
        if self.kind == "true_state":
            if abs(tr - 1) > TRACE_TOL:
                raise SpinAlgebraError(f"true state has trace {tr:.3e}, expected 1")
            if np.linalg.eigvalsh(data).min() < -1e-10:
                raise SpinAlgebraError("true state has negative eigenvalues")
        elif abs(tr) > TRACE_TOL * max(1.0, np.linalg.norm(data)):
            raise SpinAlgebraError(f"deviation state has trace {tr:.3e}, expected 0")

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def n_spins(self) -> int:
        return self.dim.bit_length() - 1

    def with_data(self, data: np.ndarray) -> "DensityMatrix":
        """Same kind, new entries (Hermitian part taken to remove round-off)."""
        data = np.asarray(data, dtype=complex)
        return DensityMatrix(0.5 * (data + data.conj().T), self.kind)

    @classmethod
    def from_pure(cls, psi: np.ndarray) -> "DensityMatrix":
        psi = as_state_vector(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim, dtype=complex) / dim)


def as_state_vector(psi: Iterable[complex], tol: float = 1e-12) -> np.ndarray:
    """Validate a normalised state vector and return it as a complex array."""
    psi = np.asarray(psi, dtype=complex).ravel()
    dim = psi.size
    if dim < 1 or dim & (dim - 1):
        raise SpinAlgebraError(f"state dimension {dim} is not a power of two")
    if abs(np.linalg.norm(psi) - 1) > tol:
        raise SpinAlgebraError(f"state vector norm {np.linalg.norm(psi):.15f} != 1")
    return psi


def basis_state(bits: Sequence[int] | str) -> np.ndarray:
    """Product basis ket; ``bits[k]`` is 0 for up and 1 for down on site k."""
    if isinstance(bits, str):
        bits = [int(c) for c in bits]
    index = reduce(lambda acc, b: 2 * acc + int(b), bits, 0)
    psi = np.zeros(2 ** len(bits), dtype=complex)
    psi[index] = 1.0
    return psi


def spin_projections(n_spins: int, sites: Iterable[int] | None = None) -> np.ndarray:
    """Total Sz eigenvalue of every basis state, summed over ``sites``."""
    sites = range(n_spins) if sites is None else list(sites)
    idx = np.arange(2**n_spins)
    m = np.zeros(idx.size)
    for k in sites:
        bit = (idx >> (n_spins - 1 - k)) & 1
        m += 0.5 - bit
    return m


def single_spin_op(n_spins: int, site: int, axis: str) -> np.ndarray:
    """Spin-1/2 operator for ``axis`` on ``site`` embedded with identities.

    Axes ``x``, ``y``, ``z`` have eigenvalues +-1/2; ``plus``/``minus`` are the
    raising and lowering operators.
    """
    if not 0 <= site < n_spins:
        raise SpinAlgebraError(f"site {site} out of range for {n_spins} spins")
    try:
        local = _PAULI_HALF[axis]
    except KeyError:
        raise SpinAlgebraError(f"unknown axis {axis!r}") from None
    left = np.eye(2**site, dtype=complex)
    right = np.eye(2 ** (n_spins - site - 1), dtype=complex)
    return np.kron(np.kron(left, local), right)


def total_op(n_spins: int, sites: Iterable[int], axis: str) -> np.ndarray:
    """Sum of ``single_spin_op`` over a set of sites."""
    dim = 2**n_spins
    out = np.zeros((dim, dim), dtype=complex)
    for k in sites:
        out += single_spin_op(n_spins, k, axis)
    return out


def is_hermitian(a: np.ndarray, tol: float = 1e-8) -> bool:
    return np.linalg.norm(a - a.conj().T) <= tol


def is_unitary(u: np.ndarray, tol: float = 1e-10) -> bool:
    return np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0])) < tol


def propagator(hamiltonian: np.ndarray, t: float) -> np.ndarray:
    """U = exp(-iHt) for Hermitian H (rad/s) via eigendecomposition."""
    h = np.asarray(hamiltonian, dtype=complex)
    if not is_hermitian(h, 1e-8 * max(1.0, np.linalg.norm(h))):
        raise SpinAlgebraError("propagator requires a Hermitian generator")
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def evolve(rho: DensityMatrix, u: np.ndarray) -> DensityMatrix:
    """Unitary conjugation rho -> U rho U^dagger."""
    if u.shape != rho.data.shape:
        raise SpinAlgebraError(f"dimension mismatch: U {u.shape} vs rho {rho.data.shape}")
    return rho.with_data(u @ rho.data @ u.conj().T)


def fidelity_pure(rho: DensityMatrix, psi: np.ndarray) -> float:
    """<psi|rho|psi> for a true state; deviation inputs are rejected."""
    if rho.kind != "true_state":
        raise SpinAlgebraError("fidelity is undefined for a deviation density; normalise first")
    psi = as_state_vector(psi)
    if psi.size != rho.dim:
        raise SpinAlgebraError("dimension mismatch between rho and psi")
    value = np.vdot(psi, rho.data @ psi)
    return float(np.clip(value.real, 0.0, 1.0))


def expectation(rho: DensityMatrix, a: np.ndarray) -> float:
    """Tr(rho A) for Hermitian A."""
    a = np.asarray(a)
    if a.shape != rho.data.shape:
        raise SpinAlgebraError("dimension mismatch between rho and observable")
    value = np.einsum("ij,ji->", rho.data, a)
    if abs(value.imag) > 1e-10 * max(1.0, abs(value)):
        raise SpinAlgebraError("observable is not Hermitian")
    return float(value.real)


def partial_trace(rho: DensityMatrix, keep: Iterable[int]) -> DensityMatrix:
    """Reduced density matrix on the sites in ``keep`` (kept in ascending order)."""
    keep = sorted(set(keep))
    n = rho.n_spins
    if not keep:
        raise SpinAlgebraError("partial trace needs at least one kept site")
    if keep[0] < 0 or keep[-1] >= n:
        raise SpinAlgebraError(f"kept sites {keep} out of range for {n} spins")
    drop = [k for k in range(n) if k not in keep]
    t = rho.data.reshape([2] * (2 * n))
    # axes 0..n-1 are ket sites, n..2n-1 bra sites
    order = keep + drop + [n + k for k in keep] + [n + k for k in drop]
    t = t.transpose(order)
    dk, dd = 2 ** len(keep), 2 ** len(drop)
    t = t.reshape(dk, dd, dk, dd)
    return DensityMatrix(np.einsum("ajbj->ab", t), rho.kind)
