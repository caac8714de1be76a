"""Frequency-domain machinery: the low/high band split used by
frequency-aware guidance, radially binned power spectral density curves, and
the total/noise/signal PSD decomposition of noisy latents.

The low-pass operator is literally "bilinear down to the base resolution,
bilinear back up"; the high band is the residual, so low + high reconstructs
the input to one floating addition per element. No Fourier-domain brick-wall
filter is involved.

PSD convention: per-mode power is |F_kx,ky|^2 / (H*W)^2 with F the
unnormalized 2-D DFT, so the sum of mode powers equals the mean square of
the grid (Parseval) and a unit white-noise field has expected per-mode power
1 / (H*W). Modes are assigned to radial bins
by rounding their wrapped radial frequency sqrt(kx'^2 + ky'^2) to the
nearest bin center; corner modes beyond the last center fold into the last
bin. Bin power is the mean power of assigned modes, then the mean over
channels.
"""

from dataclasses import dataclass

import numpy as np

from .grid import LatentGrid, Resolution, resample_bilinear
from .schedule import NoiseSchedule, alpha_at, diffuse


def nyquist(res: Resolution) -> float:
    """Highest representable radial frequency, side / 2."""
    return res.side / 2.0


@dataclass(frozen=True)
class BandSplit:
    low: LatentGrid
    high: LatentGrid
    base: Resolution


def band_split(g: LatentGrid, base: Resolution) -> BandSplit:
    """Split into frequencies below the base Nyquist and the residual above.

    low = up(down(g, base)); high = g - low. Constants survive the round
    trip exactly, so a constant grid has zero high band.
    """
    if g.height != g.width:
        raise ValueError(f"band_split needs a square grid, got {g.height}x{g.width}")
    if base.side > g.height:
        raise ValueError(f"base side {base.side} exceeds grid side {g.height}")
    current = Resolution(g.height)
    low = resample_bilinear(resample_bilinear(g, base), current)
    high = LatentGrid(g.data - low.data)
    return BandSplit(low=low, high=high, base=base)


@dataclass(frozen=True)
class PsdCurve:
    """Radially binned power spectral density, channel-mean."""

    freqs: np.ndarray
    power: np.ndarray
    resolution: Resolution

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=np.float64)
        p = np.asarray(self.power, dtype=np.float64)
        if f.shape != p.shape or f.ndim != 1:
            raise ValueError("freqs and power must be 1-D and equally long")
        if np.any(np.diff(f) <= 0):
            raise ValueError("radial frequencies must be strictly increasing")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("power must be finite and non-negative")
        f.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "power", p)

    @property
    def n_bins(self) -> int:
        return len(self.freqs)


def _radial_bin_index(side: int, n_bins: int) -> np.ndarray:
    k = np.fft.fftfreq(side) * side  # wrapped integer frequencies
    r = np.hypot(*np.meshgrid(k, k, indexing="ij"))
    width = nyquist(Resolution(side)) / n_bins
    return np.minimum(np.rint(r / width).astype(np.intp), n_bins - 1)


def mode_powers(g: LatentGrid) -> np.ndarray:
    """Per-mode PSD (C,H,W); sums to the grid's mean square per channel."""
    n = g.height * g.width
    f = np.fft.fft2(g.data, axes=(-2, -1))
    return (f.real**2 + f.imag**2) / float(n) ** 2


def radial_psd(g: LatentGrid, n_bins: int | None = None) -> PsdCurve:
    """Radially binned PSD; defaults to unit-width bins up to Nyquist."""
    if g.height != g.width:
        raise ValueError(f"radial_psd needs a square grid, got {g.height}x{g.width}")
    side = g.height
    nyq = nyquist(Resolution(side))
    if n_bins is None:
        n_bins = side // 2
    if not 1 <= n_bins <= nyq:
        raise ValueError(f"n_bins must be in [1, {nyq}], got {n_bins}")
    idx = _radial_bin_index(side, n_bins)
    powers = mode_powers(g).mean(axis=0)
    sums = np.bincount(idx.ravel(), weights=powers.ravel(), minlength=n_bins)
    counts = np.bincount(idx.ravel(), minlength=n_bins)
    width = nyq / n_bins
    return PsdCurve(
        freqs=np.arange(n_bins) * width,
        power=sums / counts,
        resolution=Resolution(side),
    )


def psd_decomposition(
    z0: LatentGrid,
    noise: LatentGrid,
    t: float,
    sched: NoiseSchedule,
    n_bins: int | None = None,
):
    """PSD decomposition of a forward-diffused latent.

    Returns (psd_total, psd_noise, psd_signal): the curve of the noisy
    latent, the curve of its injected noise part sqrt(1 - a_t) * eps, and
    the clamped difference max(total - noise, 0) estimating the clean-signal
    energy per band.
    """
    if z0.shape != noise.shape:
        raise ValueError(f"shape mismatch: {z0.shape} vs {noise.shape}")
    a = alpha_at(sched, t)  # also validates VP schedule and t domain
    z_t = diffuse(z0, t, noise, sched)
    psd_total = radial_psd(z_t, n_bins)
    noise_part = LatentGrid(np.sqrt(1.0 - a) * noise.data)
    psd_noise = radial_psd(noise_part, n_bins)
    signal = np.maximum(psd_total.power - psd_noise.power, 0.0)
    psd_signal = PsdCurve(psd_total.freqs, signal, psd_total.resolution)
    return psd_total, psd_noise, psd_signal


def band_energy_fractions(curve: PsdCurve, low_fraction: float = 0.25):
    """(low, high) shares of the curve's energy; low = lowest bins."""
    cut = max(int(round(curve.n_bins * low_fraction)), 1)
    total = float(curve.power.sum())
    if total == 0.0:
        return 0.0, 0.0
    low = float(curve.power[:cut].sum())
    return low / total, (total - low) / total


def write_psd_csv(path, total: PsdCurve, noise: PsdCurve, signal: PsdCurve) -> None:
    """CSV with header bin,freq,psd_total,psd_noise,psd_signal."""
    if not (total.n_bins == noise.n_bins == signal.n_bins):
        raise ValueError("curves must share a binning")
    lines = ["bin,freq,psd_total,psd_noise,psd_signal"]
    for i in range(total.n_bins):
        lines.append(
            f"{i},{total.freqs[i]:.17g},{total.power[i]:.17g},"
            f"{noise.power[i]:.17g},{signal.power[i]:.17g}"
        )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
