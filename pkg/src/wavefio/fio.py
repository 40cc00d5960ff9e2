"""Generating-function tables, low-rank phase kernels, and operator assembly.

Per (cover set, frequency box, cone term) the oscillatory integral is
driven by tables over the output position y at the cone's central unit
direction nu:

    T(y)   backward solution (the x or x-tilde reaching y along the ray)
    S(y)   phase <T(y), nu>  (degree-1 homogeneity: the action integral
           along the ray vanishes for c(x)|xi| symbols)
    H(y)   transverse Hessian of the phase at |xi| = 1
    a(y)   |det W1|^(-1/2) with the KMAH phase factor exp(-i pi m / 2)

The second-order phase remainder exp(i H(y) xi_perp^2 / (2 xi_par)) is
factorized by a truncated SVD in the reduced variables (H, w) and each
box term is applied as a short sum of adjoint NUFFTs at the warped
targets T(y).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator, RegularGridInterpolator

from . import frame as frame_mod
from . import hamilton, nufft
from .diffeo import DiffeoParams, apply_CQ_inv, propagator_Q_inv_at, pullback, redecompose
from .errors import NumericalError
from .grids import SpatialGrid
from .partition import ConeWindow, CoverSet, cone_windows


@dataclass
class GeneratingTables:
    """Sampled generating function, amplitude, and cutoff for one box term."""

    set_label: tuple[int, int]
    box_id: int
    nu_tilde: np.ndarray  # central unit direction of the cone term
    y1_axis: np.ndarray
    y2_axis: np.ndarray
    mask: np.ndarray  # (n1, n2) valid table region
    t_map: np.ndarray  # (n1, n2, 2) backward solution
    phase: np.ndarray  # (n1, n2) <T(y), nu>
    hess: np.ndarray  # (n1, n2) transverse Hessian at |xi| = 1
    amp_abs: np.ndarray  # (n1, n2) |det W1_composed|^(-1/2)
    kmah: np.ndarray  # (n1, n2) int caustic crossings
    gamma: np.ndarray  # (n1, n2) partition weight at (y, nu)
    det_w1: np.ndarray  # (n1, n2) composed det

    def interp_at(self, pts: np.ndarray):
        """Bilinear table lookup at points (m, 2); returns dict + validity."""
        axes = (self.y1_axis, self.y2_axis)

        def make(arr, fill=0.0):
            return RegularGridInterpolator(axes, arr, bounds_error=False, fill_value=fill)

        valid = make(self.mask.astype(float))(pts) > 0.999
        out = {
            "t1": make(np.where(self.mask, self.t_map[..., 0], 0.0))(pts),
            "t2": make(np.where(self.mask, self.t_map[..., 1], 0.0))(pts),
            "hess": make(np.where(self.mask, self.hess, 0.0))(pts),
            "amp_abs": make(np.where(self.mask, self.amp_abs, 0.0))(pts),
            "gamma": make(np.where(self.mask, self.gamma, 0.0))(pts),
        }
        # KMAH index is piecewise constant: nearest-neighbor lookup
        pts_idx = np.stack(
            [np.clip(np.searchsorted(self.y1_axis, pts[:, 0]), 0, len(self.y1_axis) - 1),
             np.clip(np.searchsorted(self.y2_axis, pts[:, 1]), 0, len(self.y2_axis) - 1)],
            axis=1,
        )
        out["kmah"] = self.kmah[pts_idx[:, 0], pts_idx[:, 1]]
        return out, valid

    def amplitude(self) -> np.ndarray:
        """Gamma-weighted complex amplitude table (KMAH phase included)."""
        return self.gamma * self.amp_abs * np.exp(-0.5j * np.pi * self.kmah)


def _composed_det_series(bundle: hamilton.RayBundle, pi_q_inv: np.ndarray) -> np.ndarray:
    """det of the upper-left block of Pi(t) * Pi_Q^-1 along recorded rays."""
    a = pi_q_inv[:, None, :2, :2]
    c = pi_q_inv[:, None, 2:, :2]
    w1 = bundle.pi_series[:, :, :2, :2] @ a + bundle.pi_series[:, :, :2, 2:] @ c
    return w1[..., 0, 0] * w1[..., 1, 1] - w1[..., 0, 1] * w1[..., 1, 0]


def build_tables(
    box,
    cover_set: CoverSet,
    diffeo: DiffeoParams | None,
    model,
    t0: float,
    t1: float,
    grid: SpatialGrid,
    nu_tilde: np.ndarray | None = None,
    dy: float = 0.2,
    dx: float = 0.25,
    rtol: float = 1e-7,
    margin: float = 0.05,
    newton_iters: int = 2,
    y_pad: float = 1.0,
    x_range=None,
) -> GeneratingTables:
    """Build tables for one (box, cover set, cone direction) combination.

    Rays are shot forward from the spatial window (pulled back through the
    diffeomorphism when present); the map x -> y(x, nu) is then inverted on
    the admissible part by scattered interpolation plus batched
    frozen-Jacobian Newton refinement.  x_range defaults to the cover set's
    own lattice window.
    """
    if nu_tilde is None:
        nu_tilde = box.orientation
    nu_tilde = np.asarray(nu_tilde, dtype=float)
    nu_tilde = nu_tilde / np.linalg.norm(nu_tilde)
    nu_perp = np.array([-nu_tilde[1], nu_tilde[0]])

    if x_range is None:
        ax1, ax2, _ = cover_set.axes
        x_range = ((ax1[0], ax1[-1]), (ax2[0], ax2[-1]))
    xs1 = np.arange(x_range[0][0], x_range[0][1] + 1e-12, dx)
    xs2 = np.arange(x_range[1][0], x_range[1][1] + 1e-12, dx)
    g1, g2 = np.meshgrid(xs1, xs2, indexing="ij")
    x_tilde = np.stack([g1.ravel(), g2.ravel()], axis=1)

    def shoot(xt, need_series=False):
        if diffeo is not None:
            x, xi = apply_CQ_inv(diffeo, xt, np.broadcast_to(nu_tilde, xt.shape))
            pqi = propagator_Q_inv_at(diffeo, xt, np.broadcast_to(nu_tilde, xt.shape))
        else:
            x, xi = xt, np.broadcast_to(nu_tilde, xt.shape).copy()
            pqi = np.broadcast_to(np.eye(4), (len(xt), 4, 4)).copy()
        bundle = hamilton.propagator(model, x, xi, t0, t1, rtol=rtol, record=need_series, record_pi=need_series)
        pi_c = bundle.pi @ pqi
        return x, xi, bundle, pqi, pi_c

    x, xi, bundle, pqi, pi_c = shoot(x_tilde, need_series=True)
    w1c = pi_c[:, :2, :2]
    w2c = pi_c[:, :2, 2:]
    det = w1c[:, 0, 0] * w1c[:, 1, 1] - w1c[:, 0, 1] * w1c[:, 1, 0]
    svals = np.linalg.svd(w1c, compute_uv=False)
    cond_ok = svals[:, 1] > margin * np.maximum(svals[:, 0], 1e-300)

    theta = np.arctan2(xi[:, 1], xi[:, 0])
    gamma = cover_set.weight_at(x, theta)
    kmah_counts = np.sum(np.abs(np.diff(np.sign(_composed_det_series(bundle, pqi)), axis=-1)) > 1.0, axis=-1)

    good = cond_ok & (gamma > 0.0) & np.all(np.isfinite(bundle.y), axis=1)
    if np.sum(good) < 8:
        raise NumericalError(f"admissible table region is empty for box {box.box_id}, set {cover_set.label}")

    # transverse Hessian of the phase at |xi|=1: restrict -W1^-1 W2 to nu_perp
    m = -np.linalg.solve(w1c[good], w2c[good])
    hess = np.einsum("i,nij,j->n", nu_perp, m, nu_perp)
    amp_abs = 1.0 / np.sqrt(np.abs(det[good]))

    y_pts = bundle.y[good]
    lo = y_pts.min(axis=0) - y_pad
    hi = y_pts.max(axis=0) + y_pad
    y1_axis = np.arange(lo[0], hi[0] + 1e-12, dy)
    y2_axis = np.arange(lo[1], hi[1] + 1e-12, dy)
    gy1, gy2 = np.meshgrid(y1_axis, y2_axis, indexing="ij")
    targets = np.stack([gy1.ravel(), gy2.ravel()], axis=1)

    vals = np.column_stack(
        [
            x_tilde[good],
            hess,
            amp_abs,
            gamma[good],
            det[good],
            kmah_counts[good].astype(float),
            w1c[good].reshape(-1, 4),
        ]
    )
    lin = LinearNDInterpolator(y_pts, vals)
    interp = lin(targets)
    near = NearestNDInterpolator(y_pts, kmah_counts[good])
    km = near(targets)
    valid = np.all(np.isfinite(interp), axis=1)

    t_est = np.where(valid[:, None], np.nan_to_num(interp[:, 0:2]), 0.0)
    # frozen-Jacobian Newton polish of the inversion: flow-only ray shots with
    # the Jacobian taken from the interpolated composed W1
    if newton_iters > 0 and np.any(valid):
        n_steps = bundle.n_steps
        idx = np.nonzero(valid)[0]
        xt_cur = t_est[idx].copy()
        jac = np.nan_to_num(interp[idx, 7:11]).reshape(-1, 2, 2)
        last_resid = np.full(len(idx), np.inf)
        active = np.arange(len(idx))
        tol_conv = 0.02 * dy
        for _ in range(newton_iters + 1):
            if len(active) == 0:
                break
            xa = xt_cur[active]
            if diffeo is not None:
                x_a, xi_a = apply_CQ_inv(diffeo, xa, np.broadcast_to(nu_tilde, xa.shape))
            else:
                x_a, xi_a = xa, np.broadcast_to(nu_tilde, xa.shape)
            fb = hamilton.flow(model, x_a, xi_a, t0, t1, rtol=rtol, fixed_steps=n_steps)
            resid_vec = fb.y - targets[idx[active]]
            rn = np.linalg.norm(resid_vec, axis=1)
            last_resid[active] = rn
            move = rn > tol_conv
            if not np.any(move):
                break
            step = np.linalg.solve(jac[active[move]], resid_vec[move][..., None])[..., 0]
            xt_cur[active[move]] -= step
            active = active[move]
        converged = last_resid < 10.0 * dy
        t_est[idx[converged]] = xt_cur[converged]
        valid_idx = np.zeros(len(targets), dtype=bool)
        valid_idx[idx[converged]] = True
        valid = valid & valid_idx

    shape = (len(y1_axis), len(y2_axis))
    mask = valid.reshape(shape)
    t_map = t_est.reshape(shape + (2,))
    phase = (t_est @ nu_tilde).reshape(shape)
    out = GeneratingTables(
        set_label=cover_set.label,
        box_id=box.box_id,
        nu_tilde=nu_tilde,
        y1_axis=y1_axis,
        y2_axis=y2_axis,
        mask=mask,
        t_map=np.where(mask[..., None], t_map, 0.0),
        phase=np.where(mask, phase, 0.0),
        hess=np.where(mask, np.nan_to_num(interp[:, 2]).reshape(shape), 0.0),
        amp_abs=np.where(mask, np.nan_to_num(interp[:, 3]).reshape(shape), 0.0),
        kmah=np.where(mask, km.reshape(shape), 0).astype(int),
        gamma=np.where(mask, np.nan_to_num(interp[:, 4]).reshape(shape), 0.0),
        det_w1=np.where(mask, np.nan_to_num(interp[:, 5]).reshape(shape), 0.0),
    )
    return out


@dataclass
class LowRankKernel:
    """Separated form of exp(i H w), w = xi_perp^2 / (2 xi_par), on a box.

    The kernel is centered, exp(i h w) = exp(i h_c w) exp(i (h-h_c) w_c) *
    exp(i (h-h_c)(w-w_c)); the two single-variable phases are evaluated
    exactly and only the low-phase-area residual is factorized by SVD, with
    cubic-spline factor evaluation between grid nodes.
    """

    rank: int
    h_center: float
    w_center: float
    h_axis: np.ndarray
    w_axis: np.ndarray
    alpha: np.ndarray  # (n_h, rank) residual factors in the H variable
    theta_hat: np.ndarray  # (rank, n_w) residual factors in the w variable
    target_eps: float
    achieved_eps: float
    nu_tilde: np.ndarray

    def _eval(self, table_axis, table, x):
        from scipy.interpolate import CubicSpline

        if len(table_axis) < 4:
            return np.full(len(x), table[0], dtype=complex)
        xc = np.clip(x, table_axis[0], table_axis[-1])
        return CubicSpline(table_axis, table)(xc)

    def alpha_at(self, h: np.ndarray) -> np.ndarray:
        """Factors alpha_r(H(y)) including the exact exp(i (h-h_c) w_c); (m, rank)."""
        h = np.asarray(h, dtype=float)
        phase = np.exp(1j * (h - self.h_center) * self.w_center)
        out = np.empty((len(h), self.rank), dtype=complex)
        for r in range(self.rank):
            out[:, r] = phase * self._eval(self.h_axis, self.alpha[:, r], h)
        return out

    def theta_at(self, w: np.ndarray) -> np.ndarray:
        """Factors theta_r(w(xi)) including the exact exp(i h_c w); (rank, L)."""
        w = np.asarray(w, dtype=float)
        phase = np.exp(1j * self.h_center * w)
        out = np.empty((self.rank, len(w)), dtype=complex)
        for r in range(self.rank):
            out[r] = phase * self._eval(self.w_axis, self.theta_hat[r], w)
        return out


def reduced_frequency(points: np.ndarray, nu_tilde: np.ndarray) -> np.ndarray:
    """w = xi_perp^2 / (2 xi_par) for frequency points (L, 2)."""
    nu = nu_tilde / np.linalg.norm(nu_tilde)
    perp = np.array([-nu[1], nu[0]])
    par = points @ nu
    prp = points @ perp
    if np.any(par <= 0):
        raise NumericalError("box frequency points must lie in the forward cone of nu")
    return prp**2 / (2.0 * par)


def lowrank_kernel(
    tables: GeneratingTables,
    box,
    eps: float,
    grid: SpatialGrid,
    cone: ConeWindow | None = None,
    rank_cap: int = 64,
) -> LowRankKernel:
    """Truncated-SVD factorization of the second-order phase kernel.

    The kernel depends on (y, xi) only through (H(y), w(xi)); it is sampled
    on a product lattice of the two reduced variables, factorized, and the
    factors are interpolated back to tables/lattice values.  Raises if eps
    is unreachable at the rank cap.
    """
    if not (1e-10 < eps < 1e-2):
        raise ValueError("eps must lie in (1e-10, 1e-2)")
    h_vals = tables.hess[tables.mask]
    if h_vals.size == 0:
        raise NumericalError("tables carry no admissible samples")
    xi = grid.angular_freq(box.q_support)
    if cone is not None:
        ang = np.arctan2(xi[:, 1], xi[:, 0])
        xi = xi[cone(ang) > 1e-12]
    w_vals = reduced_frequency(xi, tables.nu_tilde)

    h_c = 0.5 * float(h_vals.min() + h_vals.max())
    w_c = 0.5 * float(w_vals.min() + w_vals.max())
    dh_max = 0.5 * float(h_vals.max() - h_vals.min())
    dw_max = 0.5 * float(w_vals.max() - w_vals.min())
    if dh_max < 1e-12 * (abs(h_c) + 1.0):
        dh_max = 0.0
    if dw_max < 1e-12 * (abs(w_c) + 1.0):
        dw_max = 0.0

    n_s = 65
    achieved = np.inf
    for _ in range(5):
        h_axis = np.linspace(-dh_max, dh_max, n_s) if dh_max > 0 else np.array([0.0])
        w_axis = np.linspace(-dw_max, dw_max, n_s) if dw_max > 0 else np.array([0.0])
        resid = np.exp(1j * np.outer(h_axis, w_axis))
        u, s, vh = np.linalg.svd(resid, full_matrices=False)
        # verify on true samples plus spline-node midpoints (interpolation worst case)
        h_test = np.concatenate([h_vals[:: max(1, h_vals.size // 64)], h_c + 0.5 * (h_axis[:-1] + h_axis[1:])])
        w_test = np.concatenate([w_vals[:: max(1, w_vals.size // 64)], w_c + 0.5 * (w_axis[:-1] + w_axis[1:])])
        h_test = np.sort(h_test)
        w_test = np.sort(w_test)
        dense = np.exp(1j * np.outer(h_test, w_test))
        for r in range(1, min(rank_cap, len(s)) + 1):
            lk = LowRankKernel(
                rank=r,
                h_center=h_c,
                w_center=w_c,
                h_axis=h_axis + h_c,
                w_axis=w_axis + w_c,
                alpha=u[:, :r] * s[:r],
                theta_hat=vh[:r],
                target_eps=eps,
                achieved_eps=np.inf,
                nu_tilde=tables.nu_tilde,
            )
            approx = lk.alpha_at(h_test) @ lk.theta_at(w_test)
            err = float(np.max(np.abs(dense - approx)))
            if err <= eps:
                lk.achieved_eps = err
                return lk
            if r == min(rank_cap, len(s)):
                achieved = min(achieved, err)
        n_s = 2 * n_s - 1
    raise NumericalError(f"kernel factorization cannot reach eps={eps} at rank cap {rank_cap} (achieved {achieved:.2e})")


def apply_box(
    spectrum: nufft.SampledSpectrum,
    tables: GeneratingTables,
    kernel: LowRankKernel,
    targets: np.ndarray,
    tolerance: float = 1e-8,
) -> np.ndarray:
    """Evaluate one box term of the operator at arbitrary output points.

    spectrum values must already carry the co-partition weight |chi|^2 and
    any cone window; the phase and amplitude come from the tables and the
    low-rank kernel.
    """
    pts = np.atleast_2d(np.asarray(targets, dtype=float))
    out = np.zeros(len(pts), dtype=complex)
    if spectrum.values.size == 0:
        return out
    interp, valid = tables.interp_at(pts)
    if not np.any(valid):
        return out
    warp = np.stack([interp["t1"][valid], interp["t2"][valid]], axis=1)
    amp = (
        interp["gamma"][valid]
        * interp["amp_abs"][valid]
        * np.exp(-0.5j * np.pi * interp["kmah"][valid])
    )
    alpha = kernel.alpha_at(interp["hess"][valid])
    w = reduced_frequency(spectrum.points, tables.nu_tilde)
    theta = kernel.theta_at(w)
    acc = np.zeros(int(np.sum(valid)), dtype=complex)
    for r in range(kernel.rank):
        spec_r = nufft.SampledSpectrum(
            spectrum.points, spectrum.values * theta[r], box_id=spectrum.box_id, period=spectrum.period
        )
        acc += alpha[:, r] * nufft.eval_adjoint(spec_r, warp, tolerance)
    out[valid] = amp * acc
    return out
