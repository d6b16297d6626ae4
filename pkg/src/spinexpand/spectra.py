"""Linear-response NMR spectra, peak picking and peak-count bounds.

Line positions follow (E_lower - E_upper) / 2pi, with ``upper`` the state of
higher Sz on the observed channel, so a bare spin at offset f gives a line at
+f.  Intensities are population differences times |<upper|F+|lower>|^2 and
are scaled so the thermal spectrum of the channel sums to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .hamiltonian import SpinSystem, build_hamiltonian, eigensystem, thermal_deviation, total_spin
from .pulses import hard_pulse_operator
from .spin_core import DensityMatrix

DEFAULT_POINTS = 8192
DEFAULT_DWELL_S = 5e-5
DEFAULT_BROADENING_HZ = 5.0


class SpectrumError(ValueError):
    pass


@dataclass(frozen=True)
class Peak:
    freq_hz: float
    intensity: float
    sign: int


@dataclass
class Spectrum:
    channel: str
    freq_hz: np.ndarray
    amplitude: np.ndarray
    peaks: list[Peak] = field(default_factory=list)

    def __post_init__(self):
        self.freq_hz = np.asarray(self.freq_hz, dtype=float)
        self.amplitude = np.asarray(self.amplitude, dtype=float)
        if self.freq_hz.shape != self.amplitude.shape or self.freq_hz.ndim != 1:
            raise SpectrumError("frequency grid and amplitudes must be matching vectors")
        steps = np.diff(self.freq_hz)
        if steps.size and not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise SpectrumError("frequency grid is not uniform")
        self.peaks = sorted(self.peaks, key=lambda p: p.freq_hz)

    @property
    def bin_hz(self) -> float:
        return float(self.freq_hz[1] - self.freq_hz[0])


def frequency_grid(n_points: int = DEFAULT_POINTS, dwell_s: float = DEFAULT_DWELL_S) -> np.ndarray:
    if n_points < 2 or n_points & (n_points - 1):
        raise SpectrumError(f"n_points must be a power of two, got {n_points}")
    if dwell_s <= 0:
        raise SpectrumError("dwell must be > 0")
    return np.fft.fftshift(np.fft.fftfreq(n_points, dwell_s))


def lorentzian(freq_hz: np.ndarray, centre_hz: float, fwhm_hz: float) -> np.ndarray:
    """Unit-area Lorentzian."""
    g = fwhm_hz / 2
    return (g / np.pi) / ((freq_hz - centre_hz) ** 2 + g**2)


def transition_lines(rho: DensityMatrix | np.ndarray, sys: SpinSystem, channel: str) -> tuple[np.ndarray, np.ndarray]:
    """Line frequencies and (unnormalised) intensities, degenerate lines merged.

    The response to a small y pulse is sigma = -i [Fy, rho]; the line of the
    pair (lower a, upper b) carries Re(sigma_ab <b|F+|a>).
    """
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    eig = eigensystem(sys)
    v, w = eig.vectors, eig.energies
    rho_e = v.conj().T @ data @ v
    fp = v.conj().T @ total_spin(sys, channel, "plus") @ v
    fy = (fp - fp.conj().T) / 2j
    sigma = -1j * (fy @ rho_e - rho_e @ fy)
    upper, lower = np.nonzero(np.abs(fp) > 1e-9)
    amp = np.real(sigma[lower, upper] * fp[upper, lower])
    freq = (w[lower] - w[upper]) / (2 * np.pi)
    keys = np.round(freq, 6)
    uniq, inv = np.unique(keys, return_inverse=True)
    merged = np.zeros(uniq.size)
    np.add.at(merged, inv, amp)
    return uniq.astype(float), merged


def _thermal_norm(sys: SpinSystem, channel: str) -> float:
    _, amp = transition_lines(thermal_deviation(sys), sys, channel)
    total = amp.sum()
    if total <= 0:
        raise SpectrumError(f"no thermal signal on channel {channel}")
    return float(total)


def transition_spectrum(
    rho: DensityMatrix,
    sys: SpinSystem,
    channel: str,
    broadening_hz: float = DEFAULT_BROADENING_HZ,
    n_points: int = DEFAULT_POINTS,
    dwell_s: float = DEFAULT_DWELL_S,
    threshold_rel: float = 0.01,
) -> Spectrum:
    if broadening_hz <= 0:
        raise SpectrumError("broadening must be > 0")
    grid = frequency_grid(n_points, dwell_s)
    freq, amp = transition_lines(rho, sys, channel)
    amp = amp / _thermal_norm(sys, channel)
    keep = np.abs(amp) > 1e-12
    out = np.zeros_like(grid)
    for f, a in zip(freq[keep], amp[keep]):
        out += a * lorentzian(grid, f, broadening_hz)
    spec = Spectrum(str(channel), grid, out)
    spec.peaks = peak_pick(spec, threshold_rel)
    return spec


def _sector_blocks(sys: SpinSystem, channel: str):
    """(rows, cols) index pairs of the channel order -1 blocks between
    conserved Sz sectors."""
    labels = np.stack([sys.projections(s) for s in sys.species_present], axis=1)
    chan = sys.projections(channel)
    sectors = [np.nonzero(np.all(labels == key, axis=1))[0] for key in np.unique(labels, axis=0)]
    pairs = []
    for a in sectors:
        for b in sectors:
            if np.isclose(chan[b[0]] - chan[a[0]], 1.0):
                others = [i for i in range(labels.shape[1]) if not np.allclose(labels[a[0], i] - labels[b[0], i], 0)]
                if len(others) == 1:
                    pairs.append((a, b))
    return sectors, pairs


def fid_spectrum(
    rho: DensityMatrix,
    sys: SpinSystem,
    channel: str,
    readout_flip: float = np.deg2rad(5.0),
    n_points: int = DEFAULT_POINTS,
    dwell_s: float = DEFAULT_DWELL_S,
    broadening_hz: float = DEFAULT_BROADENING_HZ,
    threshold_rel: float = 0.01,
) -> Spectrum:
    """Time-domain route: small y readout, sample Tr(rho(t) F+), apodise,
    Fourier transform.

    Propagation uses a matrix-exponential dwell step on the order -1 sector
    blocks only; the eigenbasis is not used.
    """
    if broadening_hz <= 0:
        raise SpectrumError("broadening must be > 0")
    grid = frequency_grid(n_points, dwell_s)
    h = build_hamiltonian(sys)
    w = np.linalg.eigvalsh(h)
    nyquist = 1 / (2 * dwell_s)
    if (w[-1] - w[0]) / (2 * np.pi) > nyquist:
        raise SpectrumError(
            f"spectral width {(w[-1] - w[0]) / (2 * np.pi):.1f} Hz exceeds Nyquist {nyquist:.1f} Hz (aliasing)"
        )
    sectors, pairs = _sector_blocks(sys, channel)
    step = {}
    for s in sectors:
        step[s[0]] = expm(-1j * h[np.ix_(s, s)] * dwell_s)
    fp = total_spin(sys, channel, "plus")
    readout = hard_pulse_operator(sys, channel, readout_flip, np.pi / 2)

    def signal(data: np.ndarray, n: int) -> np.ndarray:
        data = readout @ data @ readout.conj().T
        blocks = [(a, b, data[np.ix_(a, b)].copy(), fp[np.ix_(b, a)]) for a, b in pairs]
        out = np.zeros(n, dtype=complex)
        for k in range(n):
            out[k] = sum(np.einsum("ij,ji->", blk, f) for _, _, blk, f in blocks)
            for i, (a, b, blk, f) in enumerate(blocks):
                blocks[i] = (a, b, step[a[0]] @ blk @ step[b[0]].conj().T, f)
        return out

    s = signal(rho.data, n_points)
    ref = signal(thermal_deviation(sys), 1)[0].real
    if ref <= 0:
        raise SpectrumError(f"no thermal signal on channel {channel}")
    t = dwell_s * np.arange(n_points)
    s = s * np.exp(-np.pi * broadening_hz * t)
    s[0] *= 0.5
    # continuous transform of a decaying line gives half a unit Lorentzian
    spec = 2 * dwell_s * n_points * np.fft.fftshift(np.fft.ifft(s)).real / ref
    out = Spectrum(str(channel), grid, spec)
    out.peaks = peak_pick(out, threshold_rel)
    return out


def max_peaks(n: int, coupling: str) -> int:
    """Upper bound on single-quantum line count for n coupled spins."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if coupling == "dipolar":
        return comb(2 * n, n + 1)
    if coupling == "zz":
        return n * 2 ** (n - 1)
    raise ValueError(f"coupling must be 'dipolar' or 'zz', got {coupling!r}")


def peak_pick(spec: Spectrum, threshold_rel: float = 0.01) -> list[Peak]:
    """Local maxima of |amplitude| above threshold_rel * max |amplitude|."""
    if not 0 < threshold_rel < 1:
        raise ValueError("threshold_rel must lie in (0, 1)")
    mag = np.abs(spec.amplitude)
    top = mag.max() if mag.size else 0.0
    if top == 0:
        return []
    inner = (mag[1:-1] > mag[:-2]) & (mag[1:-1] >= mag[2:]) & (mag[1:-1] >= threshold_rel * top)
    idx = np.nonzero(inner)[0] + 1
    return [Peak(float(spec.freq_hz[i]), float(mag[i]), int(np.sign(spec.amplitude[i]))) for i in idx]


def write_csv(spec: Spectrum, path: str | Path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# channel={spec.channel}\n")
        fh.write("freq_hz,amplitude\n")
        for f, a in zip(spec.freq_hz, spec.amplitude):
            fh.write(f"{f:.6f},{a:.10e}\n")


def peak_report(spec: Spectrum) -> str:
    lines = [f"channel {spec.channel}: {len(spec.peaks)} peaks"]
    lines += [f"  {p.freq_hz:10.2f} Hz  {p.intensity:.4e}  {'+' if p.sign >= 0 else '-'}" for p in spec.peaks]
    return "\n".join(lines)


def plot_spectrum(spec: Spectrum, path: str | Path, title: str | None = None) -> None:
    """SVG line plot with fixed metadata so repeated runs are byte-identical."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "spinexpand", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(spec.freq_hz, spec.amplitude, lw=0.8, color="k")
        ax.set_xlabel(f"{spec.channel} frequency offset (Hz)")
        ax.set_ylabel("intensity")
        ax.invert_xaxis()
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
