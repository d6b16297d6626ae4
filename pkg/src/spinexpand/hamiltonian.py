"""Spin-system description and the secular rotating-frame Hamiltonian."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .spin_core import single_spin_op, spin_projections, total_op

# rad s^-1 T^-1
GYROMAGNETIC_RATIO = {"H1": 267.522e6, "C13": 67.2828e6}

# Ring geometry of benzene in angstrom, used only for coupling ratios.
_C_RING_RADIUS = 1.397
_CH_BOND = 1.084


class Species(str, Enum):
    C13 = "C13"
    H1 = "H1"


class SpinSystemError(ValueError):
    pass


@dataclass(frozen=True)
class Site:
    species: Species
    offset_hz: float = 0.0


@dataclass(frozen=True, eq=False)
class SpinSystem:
    """Sites plus symmetric coupling matrices in Hz (b/2pi and J/2pi)."""

    sites: tuple[Site, ...]
    dipolar_hz: np.ndarray
    jcoupling_hz: np.ndarray
    name: str = field(default="custom")

    def __post_init__(self):
        sites = tuple(
            Site(Species(s["species"]), float(s.get("offset_hz", 0.0)))
            if isinstance(s, dict)
            else Site(Species(s.species), float(s.offset_hz))
            for s in self.sites
        )
        object.__setattr__(self, "sites", sites)
        n = len(sites)
        if n == 0:
            raise SpinSystemError("spin system needs at least one site")
        for attr in ("dipolar_hz", "jcoupling_hz"):
            m = np.asarray(getattr(self, attr), dtype=float)
            if m.shape != (n, n):
                raise SpinSystemError(f"{attr} must be {n}x{n}, got {m.shape}")
            if not np.allclose(m, m.T, atol=1e-12, rtol=0):
                raise SpinSystemError(f"{attr} is not symmetric")
            if np.any(np.diag(m) != 0):
                raise SpinSystemError(f"{attr} must have a zero diagonal")
            m = m.copy()
            m.setflags(write=False)
            object.__setattr__(self, attr, m)

    @property
    def n_spins(self) -> int:
        return len(self.sites)

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    def sites_of(self, channel: str | Species) -> list[int]:
        """Site indices of a species; ``"all"`` selects every site."""
        if channel == "all":
            return list(range(self.n_spins))
        species = Species(channel)
        return [k for k, s in enumerate(self.sites) if s.species == species]

    @property
    def species_present(self) -> list[Species]:
        return sorted({s.species for s in self.sites}, key=lambda s: s.value)

    def projections(self, channel: str | Species = "all") -> np.ndarray:
        return spin_projections(self.n_spins, self.sites_of(channel))


def build_hamiltonian(sys: SpinSystem) -> np.ndarray:
    """Secular Hamiltonian in rad/s.

    Zeeman terms carry a leading minus sign; unlike-spin pairs couple through
    2pi(b+J) IzSz only, like-spin pairs through the truncated dipolar form
    2pi b (SzSz - SxSx/2 - SySy/2) plus an isotropic 2pi J S.S term.
    """
    n = sys.n_spins
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    for k, site in enumerate(sys.sites):
        if site.offset_hz:
            h -= 2 * np.pi * site.offset_hz * single_spin_op(n, k, "z")
    z = [single_spin_op(n, k, "z") for k in range(n)]
    for j, k in itertools.combinations(range(n), 2):
        b = sys.dipolar_hz[j, k]
        jc = sys.jcoupling_hz[j, k]
        if b == 0 and jc == 0:
            continue
        zz = z[j] @ z[k]
        if sys.sites[j].species != sys.sites[k].species:
            h += 2 * np.pi * (b + jc) * zz
            continue
        xx = single_spin_op(n, j, "x") @ single_spin_op(n, k, "x")
        yy = single_spin_op(n, j, "y") @ single_spin_op(n, k, "y")
        h += 2 * np.pi * b * (zz - 0.5 * xx - 0.5 * yy)
        if jc:
            h += 2 * np.pi * jc * (xx + yy + zz)
    return h


def heteronuclear_zz_part(sys: SpinSystem) -> np.ndarray:
    """Only the unlike-spin IzSz terms of ``build_hamiltonian``."""
    n = sys.n_spins
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    for j, k in itertools.combinations(range(n), 2):
        if sys.sites[j].species == sys.sites[k].species:
            continue
        c = sys.dipolar_hz[j, k] + sys.jcoupling_hz[j, k]
        if c:
            h += 2 * np.pi * c * single_spin_op(n, j, "z") @ single_spin_op(n, k, "z")
    return h


def thermal_deviation(sys: SpinSystem) -> np.ndarray:
    """High-temperature equilibrium deviation, sum of (gamma_i/gamma_H) S_iZ."""
    out = np.zeros((sys.dim, sys.dim), dtype=complex)
    for k, site in enumerate(sys.sites):
        ratio = GYROMAGNETIC_RATIO[site.species.value] / GYROMAGNETIC_RATIO["H1"]
        out += ratio * single_spin_op(sys.n_spins, k, "z")
    return out


def total_spin(sys: SpinSystem, channel: str | Species, axis: str) -> np.ndarray:
    return total_op(sys.n_spins, sys.sites_of(channel), axis)


def conditional_coupling_hz(sys: SpinSystem) -> float:
    """Sum of (b_0k + J_0k) between the single carbon and every proton.

    The proton all-up/all-down coherence precesses at pi times this value
    (rad/s), with a sign set by the carbon state.
    """
    carbons = sys.sites_of(Species.C13)
    if len(carbons) != 1:
        raise SpinSystemError("conditional coupling needs exactly one C13 site")
    c = carbons[0]
    protons = sys.sites_of(Species.H1)
    return float(sum(sys.dipolar_hz[c, k] + sys.jcoupling_hz[c, k] for k in protons))


def _ring_positions() -> tuple[np.ndarray, np.ndarray]:
    angles = np.deg2rad(60.0 * np.arange(6))
    ring = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return _C_RING_RADIUS * ring, (_C_RING_RADIUS + _CH_BOND) * ring


def benzene_ch_ratios() -> np.ndarray:
    """b(C1-Hk)/b(H-H ortho) for k = 1..6 from ring geometry and gamma_C/gamma_H.

    All internuclear vectors lie in the ring plane, so uniaxial averaging about
    the sixfold axis gives every pair the same angular factor and the couplings
    scale as gamma_i gamma_j / r^3.
    """
    carbons, protons = _ring_positions()
    r_hh = np.linalg.norm(protons[1] - protons[0])
    r_ch = np.linalg.norm(protons - carbons[0], axis=1)
    gamma = GYROMAGNETIC_RATIO["C13"] / GYROMAGNETIC_RATIO["H1"]
    return gamma * (r_hh / r_ch) ** 3


def benzene_preset(
    b_ortho_hz: float,
    b_ch_hz: Sequence[float] | None = None,
    j01_hz: float = 158.0,
    offsets_hz: dict | None = None,
) -> SpinSystem:
    """Seven-site 13C-benzene cluster: site 0 is 13C, sites 1-6 run around the ring
    starting from the proton bonded to the labelled carbon.

    H-H couplings follow the hexagon ratios ortho:meta:para = 1 : 3^-3/2 : 1/8.
    ``b_ch_hz`` gives the six C-H couplings explicitly; when omitted they are
    derived from ``b_ortho_hz`` with ``benzene_ch_ratios``.
    """
    if b_ortho_hz == 0:
        raise SpinSystemError("b_ortho_hz must be nonzero")
    offsets_hz = offsets_hz or {}
    sites = [Site(Species.C13, float(offsets_hz.get("C13", 0.0)))]
    sites += [Site(Species.H1, float(offsets_hz.get("H1", 0.0))) for _ in range(6)]
    dip = np.zeros((7, 7))
    ratio = {1: 1.0, 2: 3**-1.5, 3: 1 / 8}
    for j, k in itertools.combinations(range(6), 2):
        sep = min(k - j, 6 - (k - j))
        dip[j + 1, k + 1] = dip[k + 1, j + 1] = b_ortho_hz * ratio[sep]
    if b_ch_hz is None:
        b_ch_hz = b_ortho_hz * benzene_ch_ratios()
    b_ch_hz = np.asarray(b_ch_hz, dtype=float)
    if b_ch_hz.shape != (6,):
        raise SpinSystemError("b_ch_hz needs six values")
    dip[0, 1:] = dip[1:, 0] = b_ch_hz
    jc = np.zeros((7, 7))
    jc[0, 1] = jc[1, 0] = j01_hz
    return SpinSystem(tuple(sites), dip, jc, name="benzene")


@dataclass(frozen=True, eq=False)
class Eigensystem:
    """Eigenpairs of the secular Hamiltonian with per-species Sz labels.

    The Hamiltonian conserves each species' total Sz, so it is diagonalised
    sector by sector and every eigenvector carries exact quantum numbers.
    """

    energies: np.ndarray
    vectors: np.ndarray
    m: dict


def eigensystem(sys: SpinSystem) -> Eigensystem:
    h = build_hamiltonian(sys)
    labels = {s.value: sys.projections(s) for s in sys.species_present}
    keys = np.stack([labels[k] for k in sorted(labels)], axis=1)
    energies = np.zeros(sys.dim)
    vectors = np.zeros((sys.dim, sys.dim), dtype=complex)
    order = []
    for key in np.unique(keys, axis=0):
        idx = np.nonzero(np.all(keys == key, axis=1))[0]
        w, v = np.linalg.eigh(h[np.ix_(idx, idx)])
        cols = np.arange(len(order), len(order) + idx.size)
        energies[cols] = w
        vectors[np.ix_(idx, cols)] = v
        order.extend(idx)
    m = {k: np.real(np.einsum("ij,i,ij->j", vectors.conj(), labels[k], vectors)) for k in labels}
    return Eigensystem(energies, vectors, {k: np.rint(2 * v) / 2 for k, v in m.items()})
