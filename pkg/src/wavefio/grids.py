"""Periodic spatial grids and their discrete frequency lattices.

All fields in the package live on a periodic N x N grid with physical
spacing h = extent / n.  Spectra use the numpy FFT layout; integer
frequencies q map to angular frequencies xi = 2*pi*q / extent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpatialGrid:
    """Square periodic grid: n points per axis over [origin, origin + extent)."""

    n: int
    extent: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.n < 4 or (self.n & (self.n - 1)) != 0:
            raise ValueError("grid size must be a power of two >= 4")
        if self.extent <= 0:
            raise ValueError("extent must be positive")

    @property
    def h(self) -> float:
        return self.extent / self.n

    @property
    def nyquist(self) -> int:
        """Nyquist frequency in integer (cycles per extent) units."""
        return self.n // 2

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        x1 = self.origin[0] + self.h * np.arange(self.n)
        x2 = self.origin[1] + self.h * np.arange(self.n)
        return x1, x2

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x1, x2 = self.axes()
        return np.meshgrid(x1, x2, indexing="ij")

    def freq_integers(self) -> np.ndarray:
        """Integer frequencies in FFT order, shape (n,)."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n).astype(np.int64)

    def freq_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer frequency meshes (FFT order) for both axes."""
        q = self.freq_integers()
        return np.meshgrid(q, q, indexing="ij")

    def angular_freq(self, q) -> np.ndarray:
        """Physical angular frequency (rad per length unit) of integer bins."""
        return 2.0 * np.pi * np.asarray(q, dtype=float) / self.extent

    def wrap(self, points: np.ndarray) -> np.ndarray:
        """Map points into the fundamental periodic cell."""
        p = np.asarray(points, dtype=float)
        o = np.asarray(self.origin)
        return o + np.mod(p - o, self.extent)

    def norm2(self, u: np.ndarray) -> float:
        """Discrete L2 norm with grid-cell quadrature weight."""
        return float(np.sqrt(np.sum(np.abs(u) ** 2) * self.h**2))


def eval_bandlimited(grid: SpatialGrid, u_hat: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate the band-limited interpolant of a spectrum at arbitrary points.

    u_hat is a full-grid FFT-layout spectrum; points has shape (m, 2).
    Used only in tests and small diagnostics (direct sum, O(m * n^2)).
    """
    q1, q2 = grid.freq_mesh()
    xi1 = grid.angular_freq(q1).ravel()
    xi2 = grid.angular_freq(q2).ravel()
    vals = u_hat.ravel() / grid.n**2
    p = np.asarray(points, dtype=float) - np.asarray(grid.origin)
    out = np.zeros(len(p), dtype=complex)
    chunk = max(1, int(2e6 // max(len(p), 1)))
    for i in range(0, len(vals), chunk):
        ph = np.exp(1j * (np.outer(p[:, 0], xi1[i : i + chunk]) + np.outer(p[:, 1], xi2[i : i + chunk])))
        out += ph @ vals[i : i + chunk]
    return out
