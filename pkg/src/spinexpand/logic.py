"""Exact qubit-circuit oracle for the CNOT-chain expansion.

Qubit 0 is the leftmost (most significant) factor, |0> maps to spin-up and
|1> to spin-down, so state vectors here use the same basis ordering as the
spin simulator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spin_core import DensityMatrix, as_state_vector


class CircuitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QubitCircuitState:
    n_qubits: int
    state: np.ndarray

    def __post_init__(self):
        psi = as_state_vector(self.state)
        if psi.size != 2**self.n_qubits:
            raise CircuitError(f"{psi.size} amplitudes for {self.n_qubits} qubits")
        object.__setattr__(self, "state", psi)


def initial_state(a: complex, b: complex, n: int) -> QubitCircuitState:
    """(a|0> + b|1>) on qubit 0, followed by n qubits in |0>."""
    if abs(abs(a) ** 2 + abs(b) ** 2 - 1) > 1e-12:
        raise CircuitError("|a|^2 + |b|^2 must equal 1")
    if n < 0:
        raise CircuitError("n must be >= 0")
    psi = np.zeros(2 ** (n + 1), dtype=complex)
    psi[0] = a
    psi[1 << n] = b
    return QubitCircuitState(n + 1, psi)


def cnot(state: QubitCircuitState, control: int, target: int) -> QubitCircuitState:
    n = state.n_qubits
    if control == target:
        raise CircuitError("control and target must differ")
    if not (0 <= control < n and 0 <= target < n):
        raise CircuitError(f"qubit index out of range for {n} qubits")
    idx = np.arange(2**n)
    cbit = (idx >> (n - 1 - control)) & 1
    flipped = np.where(cbit == 1, idx ^ (1 << (n - 1 - target)), idx)
    out = np.empty_like(state.state)
    out[flipped] = state.state
    return QubitCircuitState(n, out)


def expand_chain(state: QubitCircuitState) -> QubitCircuitState:
    """CNOT(0,1), CNOT(1,2), ..., CNOT(n-1,n) applied in that order."""
    for k in range(state.n_qubits - 1):
        state = cnot(state, k, k + 1)
    return state


def ghz_state(a: complex, b: complex, n_qubits: int) -> np.ndarray:
    """Closed form a|0...0> + b|1...1>."""
    psi = np.zeros(2**n_qubits, dtype=complex)
    psi[0], psi[-1] = a, b
    return psi


def magnetization_values(n_qubits: int) -> np.ndarray:
    """Eigenvalue of M = sum_i sigma_z(i) on every basis state."""
    idx = np.arange(2**n_qubits)
    ones = np.array([bin(i).count("1") for i in idx])
    return (n_qubits - 2 * ones).astype(float)


def polarization_moment(state: QubitCircuitState, k: int) -> float:
    """<M^k> with sigma_z eigenvalues +-1."""
    if k < 1:
        raise CircuitError("moment order must be >= 1")
    probs = np.abs(state.state) ** 2
    return float(probs @ magnetization_values(state.n_qubits) ** k)


def outcome_distribution(state: QubitCircuitState) -> dict[int, float]:
    """Probability of each magnetization outcome M."""
    probs = np.abs(state.state) ** 2
    m = magnetization_values(state.n_qubits).astype(int)
    out: dict[int, float] = {}
    for value, p in zip(m, probs):
        out[int(value)] = out.get(int(value), 0.0) + float(p)
    return dict(sorted(out.items()))


def embed_as_density(state: QubitCircuitState, n_qubits: int = 7) -> DensityMatrix:
    """|psi><psi| in the simulator basis (qubit 0 -> 13C site)."""
    if state.n_qubits != n_qubits:
        raise CircuitError(f"expected {n_qubits} qubits, got {state.n_qubits}")
    return DensityMatrix.from_pure(state.state)
