"""Spectral diagnostics and trajectory summaries.

Amplitude spectra use the orthonormal 2-D DFT, so the total spectral energy
equals the pixel-domain energy (Parseval) and unit white noise has unit
expected power in every coefficient.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .filters import as_image
from .guidance import d_score
from .schedule import VarianceSchedule

SPECTRUM_SCHEMA = "# fgd-spectrum v1"
SNR_SCHEMA = "# fgd-snr v1 (amplitude ratio)"


@dataclass(frozen=True)
class RadialSpectrum:
    radius: np.ndarray      # integer bin index (cycles per image along the longer side)
    frequency: np.ndarray   # cycles per pixel
    amplitude: np.ndarray
    signal_only: bool = False  # set when the noise amplitude is zero (t = 0)

    def __len__(self):
        return self.radius.size

    @property
    def bins(self):
        return list(zip(self.frequency.tolist(), self.amplitude.tolist()))


def _radius_bins(height: int, width: int) -> tuple[np.ndarray, int]:
    n = max(height, width)
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    return np.rint(np.hypot(fy, fx) * n).astype(np.int64), n


def _bin_mean(values, bins):
    counts = np.bincount(bins.ravel())
    sums = np.bincount(bins.ravel(), weights=values.ravel())
    keep = counts > 0
    return np.nonzero(keep)[0], sums[keep] / counts[keep]


def amplitude_2d(x) -> np.ndarray:
    """Orthonormal DFT amplitude per channel, averaged over channels."""
    x = as_image(x)
    return np.abs(np.fft.fft2(x, axes=(0, 1), norm="ortho")).mean(axis=2)


def radial_amplitude_spectrum(x) -> RadialSpectrum:
    x = as_image(x)
    bins, n = _radius_bins(*x.shape[:2])
    radius, amp = _bin_mean(amplitude_2d(x), bins)
    return RadialSpectrum(radius, radius / n, amp)


def spectral_energy(x) -> float:
    x = as_image(x)
    return float((np.abs(np.fft.fft2(x, axes=(0, 1), norm="ortho")) ** 2).sum())


def _self_conjugate(height, width):
    """Mask of DFT bins whose coefficient is real for real input (DC and Nyquist lines)."""
    ky = np.arange(height)[:, None]
    kx = np.arange(width)[None, :]
    return ((2 * ky) % height == 0) & ((2 * kx) % width == 0)


def expected_noise_amplitude(height: int, width: int) -> RadialSpectrum:
    """Expected radial amplitude of unit white Gaussian noise.

    Complex coefficients have Rayleigh magnitude with mean sqrt(pi)/2; the
    few purely real ones are half-normal with mean sqrt(2/pi).
    """
    bins, n = _radius_bins(height, width)
    per_bin = np.where(_self_conjugate(height, width), math.sqrt(2 / math.pi), math.sqrt(math.pi) / 2)
    radius, amp = _bin_mean(per_bin, bins)
    return RadialSpectrum(radius, radius / n, amp)


def synth_one_over_f(size: int, seed: int = 0, channels: int = 1) -> np.ndarray:
    """Random-phase image with amplitude proportional to 1/max(r, 1), scaled into [-1, 1] with zero mean."""
    rng = np.random.default_rng(seed)
    white = rng.standard_normal((size, size, channels))
    spec = np.fft.fft2(white, axes=(0, 1))
    phase = spec / np.maximum(np.abs(spec), 1e-300)
    k = np.fft.fftfreq(size) * size
    r = np.hypot(k[:, None], k[None, :])
    amp = 1.0 / np.maximum(r, 1.0)
    amp[0, 0] = 0.0
    img = np.fft.ifft2(phase * amp[:, :, None], axes=(0, 1)).real
    img -= img.mean()
    return img / np.abs(img).max()


def snr_per_frequency(x0, s: VarianceSchedule, t: int) -> RadialSpectrum:
    """Signal-to-noise amplitude ratio per radial bin for ``x_t`` built from ``x0``.

    At t = 0 there is no noise; the signal amplitude is returned with
    ``signal_only`` set.
    """
    x0 = as_image(x0)
    sig, noi = s.signal_noise(t)
    spec = radial_amplitude_spectrum(x0)
    if noi == 0.0:
        return RadialSpectrum(spec.radius, spec.frequency, spec.amplitude, signal_only=True)
    noise = expected_noise_amplitude(*x0.shape[:2])
    return RadialSpectrum(spec.radius, spec.frequency, sig * spec.amplitude / (noi * noise.amplitude))


def loglog_slope(spec: RadialSpectrum) -> float:
    """Least-squares slope of log amplitude against log frequency, DC excluded."""
    keep = (spec.radius > 0) & (spec.amplitude > 0)
    return float(np.polyfit(np.log(spec.frequency[keep]), np.log(spec.amplitude[keep]), 1)[0])


def structure_distance(a, b, f) -> float:
    """Mean absolute difference of the two images after filtering."""
    return d_score(f.apply(a) - f.apply(b))


@dataclass
class TraceSummary:
    t: list[int]
    d_scores: list[float]
    lambdas: list[float]
    final_structure_distance: float
    guided_step_change: float     # median |delta d_bar| while guidance is active
    settled_step_change: float    # median |delta d_bar| after t_stop
    flattens: bool


def trace_summary(traj, t_stop: int, guide=None, f=None, threshold: float | None = None) -> TraceSummary:
    """Summarise a trajectory's d_bar / lambda series around ``t_stop``.

    ``flattens`` is true when the median per-step change after ``t_stop`` is
    below the median change during guidance (or below ``threshold`` when given).
    """
    t = np.array(traj.t)
    d = np.array(traj.d_scores, dtype=float)
    during, after = d[t >= t_stop], d[t < t_stop]
    guided = float(np.median(np.abs(np.diff(during)))) if during.size > 1 else float("nan")
    settled = float(np.median(np.abs(np.diff(after)))) if after.size > 1 else float("nan")
    limit = guided if threshold is None else threshold
    final = structure_distance(traj.x0, guide, f) if guide is not None and f is not None else float("nan")
    return TraceSummary(t.tolist(), d.tolist(), list(traj.lambdas), final, guided, settled,
                        bool(settled < limit))


def write_spectrum_csv(path, spectra: dict[str, RadialSpectrum]):
    """One row per radial bin, one amplitude column per named spectrum (same image size)."""
    first = next(iter(spectra.values()))
    with open(path, "w", newline="") as fh:
        fh.write(SPECTRUM_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["radius", "frequency", *spectra])
        for k in range(len(first)):
            w.writerow([int(first.radius[k]), repr(float(first.frequency[k])),
                        *(repr(float(sp.amplitude[k])) for sp in spectra.values())])


def write_snr_csv(path, x0, s: VarianceSchedule, steps=None):
    """Long-format SNR table (t, radius, frequency, snr) over the given steps (default 1..T)."""
    steps = range(1, s.T + 1) if steps is None else steps
    with open(path, "w", newline="") as fh:
        fh.write(SNR_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "radius", "frequency", "snr"])
        for t in steps:
            sp = snr_per_frequency(x0, s, t)
            for r, fr, a in zip(sp.radius, sp.frequency, sp.amplitude):
                w.writerow([t, int(r), repr(float(fr)), repr(float(a))])


def read_table(path) -> tuple[str, list[dict]]:
    """Read any of the package's versioned CSV files; returns (schema line, rows as strings)."""
    with open(path, newline="") as fh:
        schema = fh.readline().rstrip("\n")
        if not schema.startswith("# fgd-"):
            raise ValueError(f"{path}: missing fgd schema line")
        return schema, list(csv.DictReader(fh))
