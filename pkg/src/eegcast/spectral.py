"""FFT, Welch PSD, uniform-noise band detection and adaptive notch filtering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .eeg_io import Recording

DETECT_RATIO = 10.0
DETECT_MAX_CV = 0.25
DETECT_MEDIAN_BINS = 11
DETECT_MIN_FREQ = 1.0


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def fft(x, n: int | None = None, inverse: bool = False) -> np.ndarray:
    """Iterative radix-2 FFT along the last axis, zero-padded to ``n``.

    Forward transform is the unnormalized DFT; ``inverse=True`` applies the
    conjugate kernel with 1/n scaling.
    """
    x = np.asarray(x, dtype=np.complex128)
    if n is None:
        n = x.shape[-1]
    if not _is_pow2(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    if x.shape[-1] > n:
        raise ValueError(f"input length {x.shape[-1]} exceeds FFT length {n}")
    if x.shape[-1] < n:
        pad = [(0, 0)] * (x.ndim - 1) + [(0, n - x.shape[-1])]
        x = np.pad(x, pad)

    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    a = x[..., rev].copy()

    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        a = a.reshape(*a.shape[:-1], n // size, size)
        even = a[..., :half].copy()
        odd = a[..., half:] * tw
        a[..., :half] = even + odd
        a[..., half:] = even - odd
        a = a.reshape(*a.shape[:-2], n)
        size *= 2
    return a / n if inverse else a


def ifft(X, n: int | None = None) -> np.ndarray:
    return fft(X, n, inverse=True)


@dataclass
class PsdEstimate:
    freqs: np.ndarray          # (F,)
    power: np.ndarray          # (C, F), uV^2/Hz
    n_segments: int

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0])


def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def welch_psd(rec: Recording, seg_s: float = 2.0, overlap: float = 0.5) -> PsdEstimate:
    """One-sided Welch density estimate, Hann windows, per-segment mean removed."""
    nper = round(seg_s * rec.fs)
    if rec.n_samples < nper or nper < 2:
        raise ValueError(f"recording of {rec.duration_s:.3f} s is shorter than one {seg_s} s segment")
    step = max(1, nper - round(overlap * nper))
    n_seg = (rec.n_samples - nper) // step + 1
    nfft = 1 << (nper - 1).bit_length()
    win = _hann(nper)
    scale = 1.0 / (rec.fs * np.sum(win ** 2))
    n_bins = nfft // 2 + 1

    power = np.zeros((rec.n_channels, n_bins))
    starts = np.arange(n_seg) * step
    # chunked so long recordings do not materialize every segment at once
    for lo in range(0, n_seg, 256):
        idx = starts[lo:lo + 256, None] + np.arange(nper)
        segs = rec.samples[:, idx]                          # (C, S, nper)
        segs = segs - segs.mean(axis=-1, keepdims=True)
        spec = fft(segs * win, nfft)[..., :n_bins]
        power += np.sum(np.abs(spec) ** 2, axis=1)
    power *= scale / n_seg
    power[:, 1:-1] *= 2.0  # fold negative frequencies; DC and Nyquist are unpaired
    freqs = np.arange(n_bins) * rec.fs / nfft
    return PsdEstimate(freqs, power, n_seg)


@dataclass(frozen=True)
class NoiseBand:
    f_lo: float
    f_hi: float
    f_center: float
    mean_power: float
    cross_channel_cv: float


def _median_filter(x: np.ndarray, width: int) -> np.ndarray:
    half = width // 2
    padded = np.pad(x, half, mode="edge")
    return np.median(np.lib.stride_tricks.sliding_window_view(padded, width), axis=-1)


def detect_noise_bands(psd: PsdEstimate) -> list[NoiseBand]:
    """Flag bins with high cross-channel mean power and low cross-channel CV."""
    if psd.power.shape[0] < 2:
        raise ValueError("noise detection needs at least 2 channels")
    keep = psd.freqs >= DETECT_MIN_FREQ
    freqs = psd.freqs[keep]
    power = psd.power[:, keep]
    mean = power.mean(axis=0)
    std = power.std(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cv = np.where(mean > 0, std / mean, np.inf)
    background = _median_filter(mean, DETECT_MEDIAN_BINS)
    flagged = (mean > 0) & (mean >= DETECT_RATIO * background) & (cv <= DETECT_MAX_CV)

    bands = []
    i = 0
    while i < len(flagged):
        if not flagged[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(flagged) and flagged[j + 1]:
            j += 1
        sl = slice(i, j + 1)
        m = mean[sl]
        band_power = power[:, sl].sum(axis=1)
        bands.append(NoiseBand(
            f_lo=float(freqs[i]),
            f_hi=float(freqs[j]),
            f_center=float(np.sum(freqs[sl] * m) / np.sum(m)),
            mean_power=float(m.mean()),
            cross_channel_cv=float(band_power.std() / band_power.mean()),
        ))
        i = j + 1
    return bands


@dataclass(frozen=True)
class NotchSpec:
    f0: float
    fs: float
    Q: float
    b: tuple[float, float, float]
    a: tuple[float, float, float]    # a[0] == 1

    def response(self, freqs) -> np.ndarray:
        z = np.exp(-1j * 2.0 * np.pi * np.asarray(freqs, dtype=np.float64) / self.fs)
        num = self.b[0] + self.b[1] * z + self.b[2] * z ** 2
        den = self.a[0] + self.a[1] * z + self.a[2] * z ** 2
        return num / den


def design_notch(f0: float, fs: float, Q: float) -> NotchSpec:
    """Second-order IIR notch with zeros on the unit circle at +-2*pi*f0/fs."""
    if not 0 < f0 < fs / 2:
        raise ValueError(f"notch frequency {f0} outside (0, {fs / 2})")
    if not Q > 0:
        raise ValueError(f"Q must be positive, got {Q}")
    w0 = 2.0 * np.pi * f0 / fs
    alpha = np.sin(w0) / (2.0 * Q)
    cw = np.cos(w0)
    a0 = 1.0 + alpha
    b = (1.0 / a0, -2.0 * cw / a0, 1.0 / a0)
    a = (1.0, -2.0 * cw / a0, (1.0 - alpha) / a0)
    return NotchSpec(float(f0), float(fs), float(Q), b, a)


def filtfilt_notch(x: np.ndarray, notch: NotchSpec) -> np.ndarray:
    """Forward pass then time-reversed pass, zero initial state, along the last axis."""
    y = lfilter(notch.b, notch.a, x, axis=-1)
    return lfilter(notch.b, notch.a, y[..., ::-1], axis=-1)[..., ::-1]


def notch_for_band(band: NoiseBand, fs: float) -> NotchSpec:
    width = max(band.f_hi - band.f_lo, 1.0)
    return design_notch(band.f_center, fs, band.f_center / width)


def apply_preprocessing(rec: Recording, seg_s: float = 2.0, overlap: float = 0.5):
    """Detect uniform noise bands and notch them out; returns ``(clean, bands)``."""
    bands = detect_noise_bands(welch_psd(rec, seg_s, overlap))
    if not bands:
        return rec, bands
    x = rec.samples
    for band in bands:
        x = filtfilt_notch(x, notch_for_band(band, rec.fs))
    return Recording(np.ascontiguousarray(x), rec.fs, rec.channel_names), bands


def bands_to_csv(bands) -> str:
    lines = ["f_lo,f_hi,f_center,mean_power,cv"]
    for b in bands:
        lines.append(f"{b.f_lo:.4f},{b.f_hi:.4f},{b.f_center:.4f},{b.mean_power:.6g},{b.cross_channel_cv:.6f}")
    return "\n".join(lines) + "\n"
