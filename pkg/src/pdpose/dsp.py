"""Signal-processing primitives used by preprocessing and feature extraction.

Savitzky-Golay smoothing and differentiation, zero-phase Butterworth
low-pass filtering, Welch PSD of complex (2D) signals folded onto positive
frequencies, and linear gap interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

SAVGOL_ORDER = 3
SAVGOL_WINDOW = 11

WELCH_NPERSEG = 256
WELCH_OVERLAP = 0.5
WELCH_WINDOW = "hann"


@dataclass(frozen=True)
class Spectrum:
    """One-sided power spectral density.

    ``power`` is a density (units²/Hz) on a uniform grid of spacing ``df``.
    """

    freqs: np.ndarray
    power: np.ndarray
    df: float
    params: dict = field(default_factory=dict)

    @property
    def total_power(self) -> float:
        return float(np.sum(self.power) * self.df)


def savgol(x, fs: float = 1.0, deriv: int = 0, window: int = SAVGOL_WINDOW,
           poly_order: int = SAVGOL_ORDER) -> np.ndarray:
    """Savitzky-Golay smoothing or derivative along axis 0.

    Derivatives are scaled to physical units (per second). Edge samples use
    the polynomial fitted to the first/last full window, so polynomials up to
    ``poly_order`` are reproduced exactly over the whole signal.
    """
    x = np.asarray(x, dtype=float)
    if deriv not in (0, 1, 2, 3):
        raise ValueError(f"deriv must be in 0..3, got {deriv}")
    if x.shape[0] < window:
        raise ValueError("signal too short for smoothing window")
    if fs <= 0:
        raise ValueError("fs must be > 0")
    if np.ptp(x, axis=0).max(initial=0.0) == 0.0:
        # exact answer for constant input, free of rounding residue
        return x.copy() if deriv == 0 else np.zeros_like(x)
    return sps.savgol_filter(x, window, poly_order, deriv=deriv, delta=1.0 / fs,
                             axis=0, mode="interp")


def butterworth_lowpass(x, fs: float, cutoff_hz: float = 5.0, order: int = 5) -> np.ndarray:
    """Zero-phase (forward-backward) Butterworth low-pass along axis 0."""
    x = np.asarray(x, dtype=float)
    if cutoff_hz <= 0 or cutoff_hz >= fs / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, Nyquist={fs / 2} Hz)")
    sos = sps.butter(order, cutoff_hz, btype="low", fs=fs, output="sos")
    # scipy's default pad length exceeds very short clips
    padlen = min(3 * (2 * len(sos) + 1), x.shape[0] - 1)
    return sps.sosfiltfilt(sos, x, axis=0, padlen=padlen)


def _segments(x: np.ndarray, nperseg: int, overlap: float):
    n = len(x)
    seglen = min(nperseg, n)
    noverlap = int(seglen * overlap)
    starts = range(0, n - seglen + 1, seglen - noverlap)
    return seglen, noverlap, [x[s:s + seglen] for s in starts]


def welch_two_sided(x, fs: float, nperseg: int = WELCH_NPERSEG,
                    overlap: float = WELCH_OVERLAP, window: str = WELCH_WINDOW):
    """Two-sided Welch density of a (possibly complex) signal.

    Returns FFT-ordered frequencies and powers, plus the parameter record.
    """
    x = np.asarray(x)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("Welch PSD needs a 1D signal of length >= 2")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    seglen, noverlap, segs = _segments(x, nperseg, overlap)
    w = sps.get_window(window, seglen)
    scale = 1.0 / (fs * np.sum(w ** 2))
    acc = np.zeros(seglen)
    for seg in segs:
        if np.ptp(seg.real) == 0 and np.ptp(seg.imag) == 0:
            continue  # detrends to exactly zero
        seg = seg - seg.mean()
        acc += np.abs(np.fft.fft(seg * w)) ** 2
    power = acc * scale / len(segs)
    params = {
        "window": window,
        "nperseg": seglen,
        "noverlap": noverlap,
        "n_segments": len(segs),
        "detrend": "constant",
        "scaling": "density",
    }
    return np.fft.fftfreq(seglen, 1.0 / fs), power, params


def fold_spectrum(power_two_sided: np.ndarray) -> np.ndarray:
    """Sum the +f and -f halves of an FFT-ordered spectrum.

    DC (and the Nyquist bin for even lengths) have no mirror and are kept.
    """
    p = np.asarray(power_two_sided)
    n = len(p)
    half = n // 2
    out = np.empty(half + 1)
    out[0] = p[0]
    k = np.arange(1, (n + 1) // 2)
    out[k] = p[k] + p[n - k]
    if n % 2 == 0:
        out[half] = p[half]
    return out


def welch_psd(x, fs: float, nperseg: int = WELCH_NPERSEG, overlap: float = WELCH_OVERLAP,
              window: str = WELCH_WINDOW) -> Spectrum:
    """Welch PSD of a complex signal (horizontal + i*vertical), folded one-sided.

    The two-sided spectrum of a complex signal is asymmetric: motion with a
    clockwise and a counter-clockwise sense lands on opposite halves. Each
    positive frequency receives the power of both halves.
    """
    _, p2, params = welch_two_sided(np.asarray(x, dtype=complex), fs, nperseg, overlap, window)
    n = params["nperseg"]
    freqs = np.arange(n // 2 + 1) * fs / n
    return Spectrum(freqs=freqs, power=fold_spectrum(p2), df=fs / n, params=params)


def welch_psd_real(x, fs: float, **kw) -> Spectrum:
    """Welch PSD of a real signal; equals the usual one-sided density."""
    x = np.asarray(x, dtype=float)
    return welch_psd(x.astype(complex), fs, **kw)


def interpolate_gaps(segments) -> tuple[int, np.ndarray]:
    """Join temporally ordered segments, filling gaps linearly.

    Parameters
    ----------
    segments : sequence of ``(start_frame, samples)`` with samples (k, d)

    Returns
    -------
    start : int
        First frame of the first segment.
    samples : ndarray
        Values for every frame from the first segment's start to the last
        segment's end, inclusive.
    """
    if not segments:
        raise ValueError("no segments to interpolate")
    frames, values = [], []
    last_end = None
    for start, samples in segments:
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if last_end is not None and start <= last_end:
            raise ValueError("segments must be disjoint and temporally ordered")
        frames.append(np.arange(start, start + len(samples)))
        values.append(samples)
        last_end = start + len(samples) - 1
    frames = np.concatenate(frames)
    values = np.concatenate(values)
    grid = np.arange(frames[0], frames[-1] + 1)
    out = np.column_stack([np.interp(grid, frames, values[:, c]) for c in range(values.shape[1])])
    return int(frames[0]), out
