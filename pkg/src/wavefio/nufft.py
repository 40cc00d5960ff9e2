"""Adjoint nonuniform discrete Fourier sums.

Evaluates g(x_j) = sum_l exp(i <x_j, xi_l>) g_l for arbitrary targets x_j.
Small problems are summed directly; large problems whose frequency points
lie on a regular lattice (the only large case produced by the pipeline) go
through an oversampled FFT with exp-of-sqrt kernel spreading, with the
kernel's Fourier correction computed self-consistently by FFT.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

# direct summation below this many (sample x target) pairs
DIRECT_LIMIT = 4_000_000


@dataclass
class SampledSpectrum:
    """Frequency samples of one box: points xi_l (rad/length), complex values.

    Values are normalized by the producer so that
    sum_l values_l * exp(i <xi_l, x>) is the represented field at absolute x.
    `period` (spatial extent) marks lattice spectra eligible for the fast path.
    """

    points: np.ndarray
    values: np.ndarray
    box_id: int = -1
    period: float | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.values = np.atleast_1d(np.asarray(self.values, dtype=complex))
        if len(self.points) != len(self.values):
            raise ValueError("points and values length mismatch")


def eval_adjoint(spectrum: SampledSpectrum, targets: np.ndarray, tolerance: float = 1e-8, method: str = "auto") -> np.ndarray:
    """Evaluate the adjoint Fourier sum at targets with relative max error <= tolerance.

    targets: (m, 2) array of spatial points. Empty spectra give zeros.
    """
    if not (1e-14 < tolerance < 1e-2):
        raise ValueError("tolerance must lie in (1e-14, 1e-2)")
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    m = len(targets)
    if spectrum.values.size == 0:
        return np.zeros(m, dtype=complex)
    if not (np.all(np.isfinite(spectrum.points)) and np.all(np.isfinite(spectrum.values)) and np.all(np.isfinite(targets))):
        raise NumericalError("non-finite input to adjoint NUFFT")

    n_pairs = spectrum.values.size * m
    if method == "direct" or (method == "auto" and (n_pairs <= DIRECT_LIMIT or not _lattice_ok(spectrum))):
        return _direct(spectrum, targets)
    if method == "grid" and not _lattice_ok(spectrum):
        raise ValueError("grid method requires lattice spectrum with period")
    return _gridded(spectrum, targets, tolerance)


def _lattice_ok(spectrum: SampledSpectrum) -> bool:
    if spectrum.period is None:
        return False
    q = spectrum.points * spectrum.period / (2.0 * np.pi)
    return bool(np.max(np.abs(q - np.round(q))) < 1e-9)


def _direct(spectrum: SampledSpectrum, targets: np.ndarray) -> np.ndarray:
    out = np.zeros(len(targets), dtype=complex)
    vals = spectrum.values
    pts = spectrum.points
    chunk = max(1, int(8e6) // max(len(vals), 1))
    for i in range(0, len(targets), chunk):
        ph = targets[i : i + chunk] @ pts.T
        out[i : i + chunk] = np.exp(1j * ph) @ vals
    return out


def _es_kernel(z: np.ndarray, beta: float) -> np.ndarray:
    """exp(beta*(sqrt(1-z^2)-1)) on |z|<=1, zero outside."""
    out = np.zeros_like(z)
    inside = np.abs(z) < 1.0
    out[inside] = np.exp(beta * (np.sqrt(1.0 - z[inside] ** 2) - 1.0))
    return out


def _gridded(spectrum: SampledSpectrum, targets: np.ndarray, tolerance: float) -> np.ndarray:
    from scipy.fft import next_fast_len

    e = spectrum.period
    q = np.round(spectrum.points * e / (2.0 * np.pi)).astype(np.int64)
    span = 2 * int(np.max(np.abs(q))) + 1

    w = min(16, max(4, int(np.ceil(-np.log10(tolerance))) + 2))
    beta = 2.30 * w
    n_f = next_fast_len(max(2 * span, span + 4 * w))

    # kernel Fourier correction, computed from the sampled kernel itself
    half = w // 2 + 1
    z = np.arange(-half, half + 1) / (0.5 * w)
    ker = _es_kernel(z, beta)
    ker_full = np.zeros(n_f)
    ker_full[np.arange(-half, half + 1) % n_f] = ker
    ker_hat = np.fft.fft(ker_full).real  # symmetric kernel -> real spectrum

    f_hat = np.zeros((n_f, n_f), dtype=complex)
    corr = 1.0 / (ker_hat[q[:, 0] % n_f] * ker_hat[q[:, 1] % n_f])
    np.add.at(f_hat, (q[:, 0] % n_f, q[:, 1] % n_f), spectrum.values * corr)
    f = np.fft.ifft2(f_hat) * n_f**2

    # spread-interpolate at targets on the circle [0, 2*pi)
    u = np.mod(targets * (2.0 * np.pi / e), 2.0 * np.pi)
    pos = u * n_f / (2.0 * np.pi)
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    offs = np.arange(-(w // 2) + 1, w // 2 + 1)
    # per-axis kernel weights, shape (m, w)
    k1 = _es_kernel((offs[None, :] - frac[:, 0:1]) / (0.5 * w), beta)
    k2 = _es_kernel((offs[None, :] - frac[:, 1:2]) / (0.5 * w), beta)
    idx1 = (i0[:, 0:1] + offs[None, :]) % n_f
    idx2 = (i0[:, 1:2] + offs[None, :]) % n_f
    # quadrature weight (2*pi/n_f)^2 of the convolution sum cancels against the
    # (n_f/2*pi)^2 implicit in the FFT-based kernel correction
    out = np.zeros(len(targets), dtype=complex)
    f_flat = f.ravel()
    for a in range(len(offs)):
        gathered = f_flat[idx1[:, a : a + 1] * n_f + idx2]  # (m, w)
        out += k1[:, a] * np.einsum("mj,mj->m", gathered, k2)
    return out
