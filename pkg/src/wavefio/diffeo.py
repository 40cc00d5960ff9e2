"""Singularity-resolving diffeomorphisms Q and their canonical machinery.

Q is a quadratic shear of configuration space in an anchor frame where the
anchor direction xi0 maps to e1:

    Q:  a -> (a1 - alpha/2 (a2 - a02)^2, a2)

with the covector map xi2 -> xi2 + alpha (a2 - a02) xi1 making the induced
phase-space map C_Q a canonical transformation that fixes (x0, xi0).  The
pullback of box-restricted data is evaluated through the adjoint NUFFT at
warped points Q^{-1}(x_tilde), and the warped field is re-decomposed into
a small set of wave packet boxes with explicit energy accounting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import frame as frame_mod
from . import nufft
from .grids import SpatialGrid


@dataclass(frozen=True)
class DiffeoParams:
    """Anchor (x0, xi0), shear curvature alpha, and deficient coordinate."""

    x0: tuple[float, float]
    xi0: tuple[float, float]
    alpha: float
    deficient_index: int = 2

    def __post_init__(self):
        nu = np.asarray(self.xi0, dtype=float)
        n = np.linalg.norm(nu)
        if n == 0:
            raise ValueError("xi0 must be nonzero")
        object.__setattr__(self, "xi0", tuple(nu / n))
        if self.deficient_index != 2:
            raise ValueError("only the transverse coordinate (index 2) is supported in n=2")

    @property
    def rotation(self) -> np.ndarray:
        """Rows (xi0, xi0_perp): maps the anchor direction to e1."""
        c, s = self.xi0
        return np.array([[c, s], [-s, c]])

    @property
    def a0_perp(self) -> float:
        """Transverse anchor coordinate (x0)_2 in the anchor frame."""
        r = self.rotation
        return float(r[1] @ np.asarray(self.x0))


def _to_frame(p: DiffeoParams, v):
    return np.asarray(v, dtype=float) @ p.rotation.T


def _from_frame(p: DiffeoParams, v):
    return np.asarray(v, dtype=float) @ p.rotation


def apply_Q(p: DiffeoParams, x: np.ndarray) -> np.ndarray:
    """x -> x_tilde, exact closed form; the Jacobian determinant is 1."""
    a = _to_frame(p, x)
    d = a[..., 1] - p.a0_perp
    out = a.copy()
    out[..., 0] = a[..., 0] - 0.5 * p.alpha * d**2
    return _from_frame(p, out)


def apply_Q_inv(p: DiffeoParams, x_tilde: np.ndarray) -> np.ndarray:
    a = _to_frame(p, x_tilde)
    d = a[..., 1] - p.a0_perp
    out = a.copy()
    out[..., 0] = a[..., 0] + 0.5 * p.alpha * d**2
    return _from_frame(p, out)


def apply_CQ(p: DiffeoParams, x: np.ndarray, xi: np.ndarray):
    """Canonical transformation (x, xi) -> (x_tilde, xi_tilde)."""
    a = _to_frame(p, x)
    k = _to_frame(p, xi)
    d = a[..., 1] - p.a0_perp
    kt = k.copy()
    kt[..., 1] = k[..., 1] + p.alpha * d * k[..., 0]
    return apply_Q(p, x), _from_frame(p, kt)


def apply_CQ_inv(p: DiffeoParams, x_tilde: np.ndarray, xi_tilde: np.ndarray):
    a = _to_frame(p, x_tilde)
    k = _to_frame(p, xi_tilde)
    d = a[..., 1] - p.a0_perp
    ko = k.copy()
    ko[..., 1] = k[..., 1] - p.alpha * d * k[..., 0]
    return apply_Q_inv(p, x_tilde), _from_frame(p, ko)


def _conjugate(p: DiffeoParams, m4: np.ndarray) -> np.ndarray:
    """Rotate a 4x4 anchor-frame matrix back to Cartesian coordinates."""
    r = p.rotation
    b = np.zeros((4, 4))
    b[:2, :2] = r
    b[2:, 2:] = r
    return b.T @ m4 @ b


def propagator_Q(p: DiffeoParams, x: np.ndarray, xi: np.ndarray):
    """Propagator matrices (Pi_Q at (x, xi), Pi_Q_inv at C_Q(x, xi)).

    Both are returned in Cartesian coordinates; their product is the
    identity, and each is exactly symplectic.
    """
    a = _to_frame(p, x)
    k = _to_frame(p, xi)
    d = float(a[..., 1] - p.a0_perp)
    k1 = float(k[..., 0])
    al = p.alpha
    pi_q = np.eye(4)
    pi_q[0, 1] = -al * d
    pi_q[3, 1] = al * k1
    pi_q[3, 2] = al * d
    # C_Q preserves (x2, xi1), so Pi_Q_inv at the image point uses the same d, k1
    pi_inv = np.eye(4)
    pi_inv[0, 1] = al * d
    pi_inv[3, 1] = -al * k1
    pi_inv[3, 2] = -al * d
    return _conjugate(p, pi_q), _conjugate(p, pi_inv)


def propagator_Q_inv_at(p: DiffeoParams, x_tilde: np.ndarray, xi_tilde: np.ndarray) -> np.ndarray:
    """Batched Pi_Q_inv evaluated at (x_tilde, xi_tilde); shape (..., 4, 4)."""
    a = _to_frame(p, x_tilde)
    k = _to_frame(p, xi_tilde)
    d = np.asarray(a[..., 1] - p.a0_perp)
    k1 = np.asarray(k[..., 0])
    al = p.alpha
    out = np.zeros(d.shape + (4, 4))
    out[...] = np.eye(4)
    out[..., 0, 1] = al * d
    out[..., 3, 1] = -al * k1
    out[..., 3, 2] = -al * d
    r = p.rotation
    b = np.zeros((4, 4))
    b[:2, :2] = r
    b[2:, 2:] = r
    return np.einsum("ij,...jk,kl->...il", b.T, out, b)


def pullback(spectrum: nufft.SampledSpectrum, p: DiffeoParams, grid: SpatialGrid, tolerance: float = 1e-8) -> np.ndarray:
    """Warped synthesis u_check(x_tilde) = sum_l exp(i <Q^-1(x_tilde), xi_l>) g_l."""
    x1, x2 = grid.mesh()
    pts = np.stack([x1.ravel(), x2.ravel()], axis=1)
    targets = apply_Q_inv(p, pts)
    vals = nufft.eval_adjoint(spectrum, targets, tolerance)
    return vals.reshape(grid.n, grid.n)


def push_forward(u: np.ndarray, p: DiffeoParams, grid: SpatialGrid, tolerance: float = 1e-8) -> np.ndarray:
    """Evaluate the band-limited interpolant of u at Q(x) on the grid."""
    u_hat = np.fft.fft2(u)
    q1, q2 = grid.freq_mesh()
    pts_xi = np.stack([grid.angular_freq(q1).ravel(), grid.angular_freq(q2).ravel()], axis=1)
    vals = u_hat.ravel() / grid.n**2 * np.exp(-1j * (pts_xi @ np.asarray(grid.origin)))
    spec = nufft.SampledSpectrum(pts_xi, vals, period=grid.extent)
    x1, x2 = grid.mesh()
    pts = np.stack([x1.ravel(), x2.ravel()], axis=1)
    targets = apply_Q(p, pts)
    return nufft.eval_adjoint(spec, targets, tolerance).reshape(grid.n, grid.n)


@dataclass
class RedecompositionReport:
    """Energy bookkeeping of the approximate re-decomposition."""

    selected_box_ids: list[int]
    captured_fraction: float
    discarded_fraction: float  # chi-threshold drops inside selected boxes
    residual_fraction: float  # energy of unselected boxes
    renormalization: float
    box_energy_fractions: dict[int, float] = field(default_factory=dict)
    coeff_masks: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def accounting_defect(self) -> float:
        return abs(self.captured_fraction + self.discarded_fraction + self.residual_fraction - 1.0)


def redecompose(
    u_check: np.ndarray,
    tiling: frame_mod.Tiling,
    source_box: frame_mod.FrequencyBox,
    eps_precision: float = 1e-2,
    max_boxes: int = 9,
    chi_threshold: float = 1e-3,
    diffeo: DiffeoParams | None = None,
):
    """Greedy re-decomposition of a pulled-back field into few packet boxes.

    Boxes are selected in order of decreasing spectral energy until the
    captured-energy criterion 1 - captured <= eps_precision or max_boxes is
    reached.  Within selected boxes, coefficients whose pulled-back frequency
    leaves the source window (|chi| below chi_threshold) are dropped and
    accounted as discarded energy.
    """
    if not (1e-8 < eps_precision < 1e-1):
        raise ValueError("eps_precision must lie in (1e-8, 1e-1)")
    grid = tiling.grid
    u_hat = np.fft.fft2(u_check).ravel()
    total = float(np.sum(np.abs(u_hat) ** 2) / grid.n**2)
    coeffs = frame_mod.PacketCoefficients([None] * len(tiling.boxes))
    if total == 0.0:
        return coeffs, RedecompositionReport([], 1.0, 0.0, 0.0, 1.0)

    energies = np.array(
        [float(np.sum(np.abs(u_hat[b.support_flat]) ** 2 * b.window**2) / grid.n**2) for b in tiling.boxes]
    )
    fracs = energies / total
    order = np.argsort(-fracs)

    selected: list[int] = []
    captured = 0.0
    for idx in order:
        if len(selected) >= max_boxes or 1.0 - captured <= eps_precision:
            break
        if fracs[idx] == 0.0:
            break
        selected.append(int(idx))
        captured += float(fracs[idx])

    discarded = 0.0
    kept = 0.0
    coeff_masks: dict[int, np.ndarray] = {}
    for idx in selected:
        b = tiling.boxes[idx]
        vals = u_hat[b.support_flat] * b.window / np.sqrt(b.volume)
        arr = np.fft.ifft2(frame_mod._extract_patch(vals, b, grid.n))
        if diffeo is not None and b.kind == frame_mod.DIRECTIONAL:
            s1, s2 = b.bbox_shape
            m1, m2 = np.meshgrid(np.arange(s1), np.arange(s2), indexing="ij")
            pos = np.asarray(grid.origin) + np.stack([m1 * grid.extent / s1, m2 * grid.extent / s2], axis=-1)
            pos = pos.reshape(-1, 2)
            # a coefficient is dropped only if its whole box support pulls back
            # outside the source window; probe an interior lattice of the support
            # with positions dilated transversally by the packet half-width
            # (coefficient positions are only sharp to the packet scale)
            w = np.zeros(s1 * s2)
            r_pts = np.linalg.norm(b.q_support, axis=1)
            r_lo, r_hi = r_pts.min(), r_pts.max()
            rad = 2.0 * np.pi / grid.extent * (r_lo + np.array([0.1, 0.3, 0.5, 0.7, 0.9]) * (r_hi - r_lo))
            angs = b.theta + np.array([-0.8, -0.4, 0.0, 0.4, 0.8]) * b.angular_halfwidth
            r_perp = 1.5 / b.length_perp
            t_hat = diffeo.rotation[1]
            for shift in (-r_perp, 0.0, r_perp):
                pos_s = pos + shift * t_hat
                for rr in rad:
                    for th in angs:
                        xi_s = rr * np.array([np.cos(th), np.sin(th)])
                        _, xi_pull = apply_CQ_inv(diffeo, pos_s, np.broadcast_to(xi_s, (s1 * s2, 2)))
                        w = np.maximum(w, frame_mod.window_value(tiling, source_box, xi_pull))
            mask = (w < chi_threshold).reshape(s1, s2)
            coeff_masks[int(idx)] = mask
            coef_total = float(np.sum(np.abs(arr) ** 2))
            if coef_total > 0:
                drop = float(np.sum(np.abs(arr[mask]) ** 2)) / coef_total
            else:
                drop = 0.0
            arr = np.where(mask, 0.0, arr)
            discarded += fracs[idx] * drop
            kept += fracs[idx] * (1.0 - drop)
        else:
            kept += fracs[idx]
        coeffs.arrays[idx] = arr

    residual = 1.0 - kept - discarded
    renorm = 1.0 / np.sqrt(kept) if kept > 0 else 1.0
    report = RedecompositionReport(
        selected_box_ids=selected,
        captured_fraction=kept,
        discarded_fraction=discarded,
        residual_fraction=residual,
        renormalization=float(renorm),
        box_energy_fractions={int(i): float(fracs[i]) for i in selected},
        coeff_masks=coeff_masks,
    )
    return coeffs, report
