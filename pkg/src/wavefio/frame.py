"""Dyadic parabolic frequency tiling and the discrete wave packet transform pair.

The frequency plane is covered by an isotropic coarse-scale box, directional
boxes at scales k = 1..k_max obeying parabolic scaling (radial length ~ 2^k,
angular width ~ 2^(k/2)), and an isotropic top ring that absorbs everything
from the finest annulus out to the grid corners.  Windows are built directly
on the discrete frequency grid as square roots of a smooth squared-cosine
partition, radially and angularly, so the co-partition identity

    chi0*beta0 + sum_{nu,k} chi_{nu,k} * beta_{nu,k} = 1

holds at every grid point to machine precision with the self-dual choice
chi = beta = sqrt(partition).

Per box, coefficients are the inverse DFT of u_hat * beta * rho^(-1/2)
restricted to the box lattice: the axis-aligned bounding rectangle of the
window support, which makes the transform pair exactly invertible on the
periodic grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .grids import SpatialGrid
from .nufft import SampledSpectrum

COARSE = "coarse"
DIRECTIONAL = "directional"
TOP = "top"


def meyer_ramp(t: np.ndarray) -> np.ndarray:
    """Polynomial C^3 ramp on [0,1] with ramp(t) + ramp(1-t) = 1."""
    t = np.clip(t, 0.0, 1.0)
    return t**4 * (35.0 - 84.0 * t + 70.0 * t**2 - 20.0 * t**3)


def _rising(r, lo, hi):
    """Smooth 0 -> 1 transition of the squared window over [lo, hi]."""
    return np.sin(0.5 * np.pi * meyer_ramp((r - lo) / (hi - lo))) ** 2


def _angular_profile(t):
    """Squared angular window at normalized center distance t in [0,1]."""
    return np.cos(0.5 * np.pi * meyer_ramp(t)) ** 2


@dataclass
class FrequencyBox:
    """One tile of the frequency plane plus its sparse window samples.

    Lengths and the center radius are in cycles per length unit; rotation
    maps the orientation to e1; dilation is the lattice matrix D_k with
    det D_k = (2 pi)^-2 * rho_k.
    """

    box_id: int
    kind: str
    scale_k: int
    orientation: np.ndarray | None
    theta: float | None
    center_radius: float
    length_parallel: float
    length_perp: float
    rotation: np.ndarray
    dilation: np.ndarray
    volume: float
    # sparse window data on the discrete grid
    support_flat: np.ndarray = field(repr=False)  # flat indices into (n, n) FFT-order arrays
    q_support: np.ndarray = field(repr=False)  # centered integer frequencies, shape (L, 2)
    window: np.ndarray = field(repr=False)  # chi = beta values at support points
    bbox_start: tuple[int, int] = (0, 0)  # centered integer coords of patch corner
    bbox_shape: tuple[int, int] = (0, 0)

    angular_halfwidth: float = np.pi

    @property
    def n_coeff(self) -> int:
        return self.bbox_shape[0] * self.bbox_shape[1]

    def angle_range(self) -> tuple[float, float]:
        """Cone of directions (radians) supported by the window."""
        if self.kind != DIRECTIONAL:
            return (-np.pi, np.pi)
        return (self.theta - self.angular_halfwidth, self.theta + self.angular_halfwidth)


@dataclass
class Tiling:
    """Complete tiling: boxes, window tables, and transform bookkeeping."""

    grid: SpatialGrid
    k_max: int
    angular_constant: float
    boxes: list[FrequencyBox]
    orientations_per_scale: dict[int, int]
    radii: np.ndarray  # transition radii R_0..R_{k_max+1} in integer bins

    def directional_boxes(self, k: int | None = None) -> list[FrequencyBox]:
        out = [b for b in self.boxes if b.kind == DIRECTIONAL]
        if k is not None:
            out = [b for b in out if b.scale_k == k]
        return out

    def box_by_direction(self, k: int, nu: np.ndarray) -> FrequencyBox:
        """Directional box at scale k whose orientation is closest to nu."""
        nu = np.asarray(nu, dtype=float)
        nu = nu / np.linalg.norm(nu)
        cands = self.directional_boxes(k)
        if not cands:
            raise ValueError(f"no directional boxes at scale {k}")
        dots = [float(np.dot(b.orientation, nu)) for b in cands]
        return cands[int(np.argmax(dots))]

    def partition_sum(self) -> np.ndarray:
        """Pointwise sum of chi*beta over all boxes (FFT-order array)."""
        n = self.grid.n
        acc = np.zeros(n * n)
        for b in self.boxes:
            acc[b.support_flat] += b.window**2
        return acc.reshape(n, n)

    def metadata_rows(self) -> list[dict]:
        rows = []
        for b in self.boxes:
            rows.append(
                {
                    "id": b.box_id,
                    "kind": b.kind,
                    "k": b.scale_k,
                    "theta": float(b.theta) if b.theta is not None else float("nan"),
                    "center_radius": b.center_radius,
                    "length_parallel": b.length_parallel,
                    "length_perp": b.length_perp,
                    "n_coeff": b.n_coeff,
                }
            )
        return rows


@dataclass
class PacketCoefficients:
    """Wave packet coefficients u_gamma grouped by box; gamma = (m, nu, k)."""

    arrays: list[np.ndarray]  # aligned with tiling.boxes; shape = box.bbox_shape

    def energy_by_box(self) -> np.ndarray:
        return np.array([float(np.sum(np.abs(a) ** 2)) * a.size for a in self.arrays])

    def total_energy(self) -> float:
        return float(np.sum(self.energy_by_box()))

    def copy_zero(self) -> "PacketCoefficients":
        return PacketCoefficients([np.zeros_like(a) for a in self.arrays])


def _angular_centers(n_nu: int) -> np.ndarray:
    # centered so a box points exactly along +e2 (the lens experiment direction);
    # wrapped to (-pi, pi] so stored orientations share one angle branch
    c = np.pi / 2.0 + 2.0 * np.pi * np.arange(n_nu) / n_nu
    return np.remainder(c + np.pi, 2.0 * np.pi) - np.pi


def build_tiling(
    grid: SpatialGrid,
    k_max: int,
    angular_constant: float = 8.0,
    orientation_counts: dict[int, int] | None = None,
) -> Tiling:
    """Construct the dyadic parabolic tiling on the grid's frequency lattice.

    Transition radii are R_k = nyquist * 2^(k - k_max - 1); the directional
    box at scale k is supported in the annulus [R_{k-1}, R_{k+1}] times a
    cone of half-angle 2*pi/N_k around its orientation, with N_k =
    round(angular_constant * 2^(k/2)) orientations by default;
    orientation_counts overrides N_k per scale.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    nyq = grid.nyquist
    radii = nyq * 2.0 ** (np.arange(0, k_max + 2) - (k_max + 1))  # R_0 .. R_{k_max+1}
    if radii[0] < 2.0:
        raise NumericalError("tiling exceeds Nyquist: k_max too large for this grid")

    n = grid.n
    q1, q2 = grid.freq_mesh()
    r = np.hypot(q1, q2)
    theta = np.arctan2(q2, q1)
    flat_r = r.ravel()
    flat_theta = theta.ravel()

    # nested rising steps g_k on [R_{k-1}, R_k], k = 1..k_max+1
    g = [_rising(flat_r, radii[k - 1], radii[k]) for k in range(1, k_max + 2)]

    boxes: list[FrequencyBox] = []
    orientations_per_scale = {}
    to_cyc = 1.0 / grid.extent  # bins -> cycles per length

    def add_box(kind, k, theta_c, ahw, sq_window_flat):
        sup = np.nonzero(sq_window_flat > 0.0)[0]
        if sup.size == 0:
            raise NumericalError(f"empty window support for {kind} box at scale {k}")
        w = np.sqrt(sq_window_flat[sup])
        qs = np.stack([q1.ravel()[sup], q2.ravel()[sup]], axis=1)
        # wrap-free bounding rectangle in centered integer coordinates
        lo = qs.min(axis=0)
        hi = qs.max(axis=0)
        shape = (int(hi[0] - lo[0] + 1), int(hi[1] - lo[1] + 1))
        if kind == DIRECTIONAL:
            nu = np.array([np.cos(theta_c), np.sin(theta_c)])
            rot = np.array([[nu[0], nu[1]], [-nu[1], nu[0]]])  # maps nu -> e1
            r_lo, r_hi = radii[k - 1], radii[k + 1]
            lp = (r_hi - r_lo * np.cos(ahw)) * to_cyc
            lw = 2.0 * r_hi * np.sin(ahw) * to_cyc
            cr = radii[k] * to_cyc
        else:
            nu, theta_c = None, None
            rot = np.eye(2)
            r_hi = radii[min(k, k_max + 1)] if kind == COARSE else flat_r[sup].max()
            lp = lw = 2.0 * r_hi * to_cyc
            cr = 0.0 if kind == COARSE else radii[k_max] * to_cyc
        rho = (2.0 * np.pi) ** 2 * lp * lw
        dil = np.diag([lp, lw])
        box = FrequencyBox(
            box_id=len(boxes),
            kind=kind,
            scale_k=k,
            orientation=nu,
            theta=theta_c,
            center_radius=cr,
            length_parallel=lp,
            length_perp=lw,
            rotation=rot,
            dilation=dil,
            volume=rho,
            support_flat=sup,
            q_support=qs,
            window=w,
            bbox_start=(int(lo[0]), int(lo[1])),
            bbox_shape=shape,
            angular_halfwidth=float(ahw) if ahw is not None else np.pi,
        )
        boxes.append(box)

    # coarse isotropic box: P_0 = 1 - g_1
    add_box(COARSE, 0, None, None, 1.0 - g[0])

    for k in range(1, k_max + 1):
        n_nu = max(1, int(round(angular_constant * 2.0 ** (k / 2.0))))
        if orientation_counts and k in orientation_counts:
            n_nu = int(orientation_counts[k])
        centers = _angular_centers(n_nu)
        orientations_per_scale[k] = n_nu
        delta = 2.0 * np.pi / n_nu
        p_k = g[k - 1] - g[k]
        ring = np.nonzero(p_k > 0.0)[0]
        for theta_c in centers:
            d = np.abs(np.remainder(flat_theta[ring] - theta_c + np.pi, 2.0 * np.pi) - np.pi)
            ang = np.zeros_like(p_k)
            inside = d < delta
            ang_vals = _angular_profile(d[inside] / delta)
            ang[ring[inside]] = ang_vals
            add_box(DIRECTIONAL, k, theta_c, delta, p_k * ang)

    # isotropic top ring: everything beyond the finest directional annulus
    add_box(TOP, k_max + 1, None, None, g[k_max])

    tiling = Tiling(
        grid=grid,
        k_max=k_max,
        angular_constant=angular_constant,
        boxes=boxes,
        orientations_per_scale=orientations_per_scale,
        radii=radii,
    )
    defect = float(np.max(np.abs(tiling.partition_sum() - 1.0)))
    if defect > 1e-12:
        raise NumericalError(f"co-partition identity violated: defect {defect:.3e}")
    return tiling


def _extract_patch(values: np.ndarray, box: FrequencyBox, n: int) -> np.ndarray:
    patch = np.zeros(box.bbox_shape, dtype=complex)
    i1 = box.q_support[:, 0] - box.bbox_start[0]
    i2 = box.q_support[:, 1] - box.bbox_start[1]
    patch[i1, i2] = values
    return patch


def _patch_values(patch: np.ndarray, box: FrequencyBox) -> np.ndarray:
    i1 = box.q_support[:, 0] - box.bbox_start[0]
    i2 = box.q_support[:, 1] - box.bbox_start[1]
    return patch[i1, i2]


def forward_transform(u: np.ndarray, tiling: Tiling) -> PacketCoefficients:
    """Analysis: per-box inverse DFT of u_hat * beta * rho^(-1/2) on the box lattice."""
    grid = tiling.grid
    if u.shape != (grid.n, grid.n):
        raise ValueError("field shape does not match tiling grid")
    u_hat = np.fft.fft2(u).ravel()
    arrays = []
    for b in tiling.boxes:
        vals = u_hat[b.support_flat] * b.window / np.sqrt(b.volume)
        arrays.append(np.fft.ifft2(_extract_patch(vals, b, grid.n)))
    return PacketCoefficients(arrays)


def inverse_transform(coeffs: PacketCoefficients, tiling: Tiling) -> np.ndarray:
    """Synthesis: u = sum_gamma u_gamma phi_gamma; exact left inverse of analysis."""
    grid = tiling.grid
    n = grid.n
    acc = np.zeros(n * n, dtype=complex)
    for b, arr in zip(tiling.boxes, coeffs.arrays):
        if arr is None:
            continue  # missing boxes are treated as zero
        vals = _patch_values(np.fft.fft2(arr), b)
        acc[b.support_flat] += vals * b.window * np.sqrt(b.volume)
    return np.fft.ifft2(acc.reshape(n, n))


def box_spectrum(u: np.ndarray, box: FrequencyBox, tiling: Tiling) -> SampledSpectrum:
    """Windowed spectrum u_hat*beta*chi at the box lattice frequency points.

    Values are normalized so that sum_l g_l * exp(i <xi_l, x>) reproduces the
    box's field portion at absolute positions x (grid origin phase and DFT
    scaling are absorbed into the values).
    """
    grid = tiling.grid
    if u.shape != (grid.n, grid.n):
        raise ValueError("field shape does not match tiling grid")
    u_hat = np.fft.fft2(u).ravel()
    xi = grid.angular_freq(box.q_support)  # (L, 2) physical angular frequencies
    vals = u_hat[box.support_flat] * box.window**2 / grid.n**2
    vals = vals * np.exp(-1j * (xi @ np.asarray(grid.origin)))
    return SampledSpectrum(points=xi, values=vals, box_id=box.box_id, period=grid.extent)


def synthesize_packet(tiling: Tiling, box: FrequencyBox, center: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Field of a single frame element phi_gamma at the lattice point nearest center.

    Returns the packet sampled on the tiling grid, L2-normalized by default.
    """
    grid = tiling.grid
    e = grid.extent
    s1, s2 = box.bbox_shape
    rel = np.asarray(center, dtype=float) - np.asarray(grid.origin)
    m1 = int(np.round(rel[0] * s1 / e)) % s1
    m2 = int(np.round(rel[1] * s2 / e)) % s2
    x_m = np.asarray(grid.origin) + np.array([m1 * e / s1, m2 * e / s2])
    xi = grid.angular_freq(box.q_support)
    vals = box.window / np.sqrt(box.volume) * np.exp(-1j * (xi @ (x_m - np.asarray(grid.origin))))
    n = grid.n
    spec = np.zeros(n * n, dtype=complex)
    spec[box.support_flat] = vals
    u = np.fft.ifft2(spec.reshape(n, n))
    if normalize:
        u = u / grid.norm2(u)
    return u


def packet_position(tiling: Tiling, box: FrequencyBox, m: tuple[int, int]) -> np.ndarray:
    """Spatial lattice point x_m of coefficient index m in the given box."""
    e = tiling.grid.extent
    s1, s2 = box.bbox_shape
    return np.asarray(tiling.grid.origin) + np.array([m[0] * e / s1, m[1] * e / s2])


def spectrum_from_coeffs(arr: np.ndarray, box: FrequencyBox, tiling: Tiling) -> SampledSpectrum:
    """Windowed spectrum (box_spectrum convention) re-synthesized from coefficients.

    For unmasked coefficients of forward_transform this reproduces
    box_spectrum of the synthesized field portion exactly.
    """
    grid = tiling.grid
    vals_raw = _patch_values(np.fft.fft2(arr), box)
    xi = grid.angular_freq(box.q_support)
    vals = vals_raw * box.window * np.sqrt(box.volume) / grid.n**2
    vals = vals * np.exp(-1j * (xi @ np.asarray(grid.origin)))
    return SampledSpectrum(points=xi, values=vals, box_id=box.box_id, period=grid.extent)


def box_energies(u: np.ndarray, tiling: Tiling) -> np.ndarray:
    """Co-partition split of the spectral energy: e_b = sum |u_hat|^2 chi beta.

    The entries sum exactly to the field's total spectral energy.
    """
    u_hat = np.fft.fft2(u).ravel()
    return np.array([float(np.sum(np.abs(u_hat[b.support_flat]) ** 2 * b.window**2)) for b in tiling.boxes])


def window_value(tiling: Tiling, box: FrequencyBox, xi: np.ndarray) -> np.ndarray:
    """Evaluate chi (= beta) of a box at arbitrary angular frequencies xi.

    Uses the same radial/angular profiles as the grid construction, so on
    grid frequencies this reproduces the stored window samples.
    """
    xi = np.asarray(xi, dtype=float)
    r = np.linalg.norm(xi, axis=-1) * tiling.grid.extent / (2.0 * np.pi)  # bins
    radii = tiling.radii
    k_max = tiling.k_max

    def g(k, rr):
        return _rising(rr, radii[k - 1], radii[k])

    if box.kind == COARSE:
        sq = 1.0 - g(1, r)
    elif box.kind == TOP:
        sq = g(k_max + 1, r)
    else:
        k = box.scale_k
        sq = g(k, r) - g(k + 1, r)
        theta = np.arctan2(xi[..., 1], xi[..., 0])
        d = np.abs(np.remainder(theta - box.theta + np.pi, 2.0 * np.pi) - np.pi)
        ang = np.where(d < box.angular_halfwidth, _angular_profile(np.minimum(d / box.angular_halfwidth, 1.0)), 0.0)
        sq = sq * ang
    return np.sqrt(np.maximum(sq, 0.0))
