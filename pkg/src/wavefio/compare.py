"""Field comparison metrics: relative error, cross-correlation lag, phase maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class CompareResult:
    rel_l2: float
    corr_zero_lag: float  # normalized |<a, b>| at zero lag
    corr_peak: float  # max normalized correlation over integer lags
    peak_lag: tuple[int, int]
    phase_shift: float  # energy-weighted circular mean of arg(a conj(b))
    phase_map: np.ndarray
    amp_ratio: float


def compare_fields(a: np.ndarray, b: np.ndarray, window: np.ndarray | None = None, max_lag: int = 8) -> CompareResult:
    """Compare field a against reference b, optionally on a boolean window."""
    if window is None:
        window = np.ones(a.shape, dtype=bool)
    aw = np.where(window, a, 0.0)
    bw = np.where(window, b, 0.0)
    nb = np.linalg.norm(bw)
    na = np.linalg.norm(aw)
    if nb == 0 and na == 0:
        return CompareResult(0.0, 1.0, 1.0, (0, 0), 0.0, np.zeros(a.shape), 1.0)
    rel = float(np.linalg.norm(aw - bw) / max(nb, 1e-300))
    corr0 = float(abs(np.vdot(bw, aw)) / max(na * nb, 1e-300))

    # integer-lag normalized cross-correlation via FFT, restricted to small lags
    fa = np.fft.fft2(aw)
    fb = np.fft.fft2(bw)
    xc = np.fft.ifft2(fa * np.conj(fb))
    mag = np.abs(xc) / max(na * nb, 1e-300)
    lags = np.fft.fftfreq(a.shape[0], 1.0 / a.shape[0]).astype(int)
    keep = np.abs(lags) <= max_lag
    sub = mag[np.ix_(keep, keep)]
    i, j = np.unravel_index(int(np.argmax(sub)), sub.shape)
    corr_peak = float(sub[i, j])
    peak_lag = (int(lags[keep][i]), int(lags[keep][j]))

    phase_map = np.where(window & (np.abs(b) > 0), np.angle(a * np.conj(b)), 0.0)
    weights = (np.abs(a) * np.abs(b))[window]
    phases = np.exp(1j * phase_map[window])
    mean = np.sum(weights * phases)
    phase_shift = float(np.angle(mean)) if np.abs(mean) > 0 else 0.0
    amp_ratio = float(np.abs(aw).max() / max(np.abs(bw).max(), 1e-300))
    return CompareResult(rel, corr0, corr_peak, peak_lag, phase_shift, phase_map, amp_ratio)
