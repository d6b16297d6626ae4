"""Density-matrix simulation of single-spin state expansion in a 13C-benzene
spin cluster: spin algebra, pulse programs, coherence bookkeeping, the
preparation and expansion pipelines, spectra, and a circuit oracle."""

from .hamiltonian import Site, Species, SpinSystem, benzene_preset, build_hamiltonian
from .spin_core import DensityMatrix

__all__ = ["DensityMatrix", "Site", "Species", "SpinSystem", "benzene_preset", "build_hamiltonian"]
__version__ = "0.1.0"
