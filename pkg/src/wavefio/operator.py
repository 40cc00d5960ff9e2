"""Preparation and application of the full factorized operator F = sum F_ij.

prepare_operator runs the geometric stage once for a given configuration and
probe data: caustic detection, anchor placement, partition of unity, per-box
re-decomposition plans, generating tables, and low-rank kernels.  The
resulting PreparedOperator holds fixed box selections and coefficient masks,
so apply_operator is exactly linear in the data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import caustic as caustic_mod
from . import diffeo as diffeo_mod
from . import fio
from . import frame as frame_mod
from . import hamilton, partition
from .errors import CoverGapError, NumericalError
from .grids import SpatialGrid
from .symbols import LensModel


@dataclass
class OperatorParams:
    """Free parameters of the preparation and application stages."""

    # canonical-relation sampling
    delta_x: float = 0.25
    delta_nu: float = 0.05
    rank_tol: float = 1e-6
    dilation: int = 1
    # partition
    margin: float = 0.1
    overlap_cells: float = 3.0
    eps_trunc: float = 1e-8
    # diffeomorphisms
    anchors: list | None = None  # explicit [(x0, xi0, alpha), ...]
    alpha: float | None = None  # fixed alpha for auto anchors; None scans
    max_anchors: int = 4
    # re-decomposition
    eps_precision: float = 1e-2
    max_boxes: dict = field(default_factory=lambda: {2: 9, 3: 11})
    max_boxes_default: int = 9
    chi_threshold: float = 1e-3
    renormalize: bool = True
    # tables and kernels
    table_dy: float = 0.2
    table_dx: float = 0.25
    ray_rtol: float = 1e-7
    newton_iters: int = 2
    table_margin: float = 0.05
    eps_kernel: float = 1e-5
    j_terms: dict = field(default_factory=dict)  # per scale; default rule otherwise
    j0: int = 1
    window_overlap: float = 1.0
    nufft_tol: float = 1e-8
    kmah_phase: bool = True  # disable to expose the raw caustic phase shift
    # source handling
    source_energy_tol: float = 1e-2
    x_pad: float = 2.0
    x_quantile: float = 0.995  # energy quantile defining the data support box
    theta_pad: float = 1.0  # cone padding in units of each box's halfwidth
    tail_pad: float = 4.0  # dilation of the output window beyond the data image

    def max_boxes_for(self, k: int) -> int:
        return int(self.max_boxes.get(k, self.max_boxes_default))

    def j_for(self, k: int) -> int:
        if k in self.j_terms:
            return int(self.j_terms[k])
        return partition.default_expansion_terms(k, j0=self.j0, k0=2)


@dataclass
class BoxTerm:
    """Tables, kernel, window, and precomputed output interpolants for one term."""

    set_label: tuple[int, int]
    box_id: int
    beta: int
    cone: partition.ConeWindow
    tables: fio.GeneratingTables
    kernel: fio.LowRankKernel
    out_idx: np.ndarray  # flat grid indices where the tables are valid
    warp: np.ndarray  # T(y) at those points
    amp: np.ndarray  # gamma * |a| without the KMAH phase
    kmah: np.ndarray  # caustic-crossing counts at the output points
    alpha_fac: np.ndarray  # kernel alpha factors at H(y), shape (m, rank)


@dataclass
class SetPlan:
    """Application plan of one cover set for one source box."""

    set_label: tuple[int, int]
    source_box_id: int
    diffeo: diffeo_mod.DiffeoParams | None
    terms: list[BoxTerm]  # identity: terms on the source box; Q: per tilde box
    report: diffeo_mod.RedecompositionReport | None = None


@dataclass
class PreparedOperator:
    model: LensModel
    grid: SpatialGrid
    tiling: frame_mod.Tiling
    t0: float
    t1: float
    params: OperatorParams
    caustic_map: caustic_mod.CausticMap
    cover: list[partition.CoverSet]
    diffeos: list[diffeo_mod.DiffeoParams]
    source_box_ids: list[int]
    skipped_fraction: float
    plans: list[SetPlan]
    anchor_image: np.ndarray  # image of the first anchor at t1 (comparison center)

    def set_labels(self) -> list[tuple[int, int]]:
        return [s.label for s in self.cover]


@dataclass
class OperatorResult:
    total: np.ndarray
    by_set: dict
    input_energy: float
    output_energy: float
    skipped_fraction: float
    reports: list


def _auto_x_range(u: np.ndarray, grid: SpatialGrid, pad: float, quantile: float = 0.995):
    """Smallest axis-aligned box holding the energy quantile, padded."""
    ax1, ax2 = grid.axes()
    e = np.abs(u) ** 2
    out = []
    for ax, prof in ((ax1, e.sum(axis=1)), (ax2, e.sum(axis=0))):
        c = np.cumsum(prof) / prof.sum()
        lo = ax[int(np.searchsorted(c, (1 - quantile) / 2))]
        hi = ax[min(int(np.searchsorted(c, 1 - (1 - quantile) / 2)), len(ax) - 1)]
        out.append((float(lo - pad), float(hi + pad)))
    return tuple(out)


def _theta_range(tiling, box_ids, pad_factor=1.0):
    """Angle range covering the boxes' cones, on a common branch."""
    ref = tiling.boxes[box_ids[0]].theta
    los, his = [], []
    for bid in box_ids:
        b = tiling.boxes[bid]
        th = ref + np.remainder(b.theta - ref + np.pi, 2.0 * np.pi) - np.pi
        pad = pad_factor * b.angular_halfwidth
        los.append(th - b.angular_halfwidth - pad)
        his.append(th + b.angular_halfwidth + pad)
    return min(los), max(his)


def _alpha_scan(model, cmap, x0, xi0, alphas):
    """Choose alpha maximizing the worst conditioning of W1_composed on Sigma."""
    shape = cmap.labels.shape
    g1, g2, gt = np.meshgrid(cmap.x1_axis, cmap.x2_axis, cmap.theta_axis, indexing="ij")
    near_sigma = cmap.smin_ratio < 10 * np.median(cmap.smin_ratio[cmap.labels == cmap.caustic_label])
    if not np.any(near_sigma):
        near_sigma = cmap.labels == cmap.caustic_label
    x = np.stack([g1[near_sigma], g2[near_sigma]], axis=1)
    th = gt[near_sigma]
    xi = np.stack([np.cos(th), np.sin(th)], axis=1)
    pi = cmap.pi[near_sigma]
    best, best_score = alphas[0], -np.inf
    for al in alphas:
        dif = diffeo_mod.DiffeoParams(x0=tuple(x0), xi0=tuple(xi0), alpha=al)
        xt, kt = diffeo_mod.apply_CQ(dif, x, xi)
        piq = diffeo_mod.propagator_Q_inv_at(dif, xt, kt)
        w1c = (pi @ piq)[:, :2, :2]
        s = np.linalg.svd(w1c, compute_uv=False)
        score = float(np.min(s[:, 1] / np.maximum(s[:, 0], 1e-300)))
        if score > best_score:
            best, best_score = al, score
    return best


def _greedy_anchors(model, cmap, params: OperatorParams):
    """Place diffeomorphism anchors on Sigma until the cover has no gaps."""
    if len(cmap.sigma_points) == 0:
        return []
    diffeos = []
    pts = cmap.sigma_points
    centroid = pts.mean(axis=0)
    order = np.argsort(np.linalg.norm(pts - centroid, axis=1))
    first = pts[order[0]]
    seeds = [first]
    for attempt in range(params.max_anchors):
        seed = seeds[-1]
        xi0 = (float(np.cos(seed[2])), float(np.sin(seed[2])))
        x0 = (float(seed[0]), float(seed[1]))
        if params.alpha is not None:
            alpha = params.alpha
        else:
            # focal-distance estimate from the anchor's central ray
            b = hamilton.propagator(model, [x0], [xi0], cmap.t0, cmap.t1, rtol=1e-7, record=True)
            det_t = b.det_w1[0]
            idx = np.nonzero(np.diff(np.sign(det_t)) != 0)[0]
            if len(idx):
                frac = idx[0] / (len(det_t) - 1)
                y_star = b.path[0][idx[0]]
                d_f = max(np.linalg.norm(y_star - np.asarray(x0)), 1.0)
            else:
                d_f = np.linalg.norm(b.y[0] - np.asarray(x0))
            alpha = _alpha_scan(model, cmap, x0, xi0, [f / d_f for f in (0.25, 0.5, 1.0, 2.0)])
        diffeos.append(diffeo_mod.DiffeoParams(x0=x0, xi0=xi0, alpha=float(alpha)))
        try:
            partition.build_cover(
                cmap, diffeos, model, cmap.t0, cmap.t1,
                margin=params.margin, overlap_cells=params.overlap_cells, eps_trunc=params.eps_trunc,
            )
            return diffeos
        except CoverGapError as err:
            # place the next anchor at the farthest Sigma point from current seeds
            d = np.min(
                [np.linalg.norm(pts[:, :2] - np.asarray(s[:2]), axis=1) for s in seeds], axis=0
            )
            seeds.append(pts[int(np.argmax(d))])
    raise CoverGapError(f"could not cover the relation with {params.max_anchors} anchors")


def _term_x_range(model, diffeo, nu, out_window, data_range, t0, t1, pad=1.5, clip_range=None):
    """Source window whose image covers the output window for this direction.

    Q-set terms are clipped to the sampled cover lattice: their cutoff
    vanishes beyond it, and the quadratic shear would otherwise blow the
    backward image of far-off-axis corners up to tens of km.
    """
    (w1lo, w1hi), (w2lo, w2hi) = out_window
    corners = np.array([[w1lo, w2lo], [w1lo, w2hi], [w1hi, w2lo], [w1hi, w2hi]])
    back = hamilton.backward(model, corners, np.broadcast_to(nu, corners.shape), t1, t0, rtol=1e-6)
    if diffeo is not None:
        back = diffeo_mod.apply_Q(diffeo, back)
    lo1 = min(back[:, 0].min(), data_range[0][0]) - pad
    hi1 = max(back[:, 0].max(), data_range[0][1]) + pad
    lo2 = min(back[:, 1].min(), data_range[1][0]) - pad
    hi2 = max(back[:, 1].max(), data_range[1][1]) + pad
    if clip_range is not None:
        lo1 = max(lo1, clip_range[0][0] - pad)
        hi1 = min(hi1, clip_range[0][1] + pad)
        lo2 = max(lo2, clip_range[1][0] - pad)
        hi2 = min(hi2, clip_range[1][1] + pad)
    return ((lo1, hi1), (lo2, hi2))


def _make_term(prepared_args, cover_set, box, beta, cone, diffeo, cache, out_window, data_range):
    model, grid, tiling, t0, t1, params = prepared_args
    key = (cover_set.label, box.box_id, beta)
    if key in cache:
        return cache[key]
    nu = np.array([np.cos(cone.center), np.sin(cone.center)])
    clip = None
    if diffeo is not None:
        ax1, ax2, _ = cover_set.axes
        clip = ((ax1[0], ax1[-1]), (ax2[0], ax2[-1]))
    x_range = _term_x_range(model, diffeo, nu, out_window, data_range, t0, t1, clip_range=clip)
    tables = fio.build_tables(
        box, cover_set, diffeo, model, t0, t1, grid,
        nu_tilde=nu, dy=params.table_dy, dx=params.table_dx, rtol=params.ray_rtol,
        margin=params.table_margin, newton_iters=params.newton_iters, x_range=x_range,
    )
    kernel = fio.lowrank_kernel(tables, box, params.eps_kernel, grid, cone=cone)
    x1, x2 = grid.mesh()
    pts = np.stack([x1.ravel(), x2.ravel()], axis=1)
    interp, valid = tables.interp_at(pts)
    idx = np.nonzero(valid)[0]
    warp = np.stack([interp["t1"][idx], interp["t2"][idx]], axis=1)
    amp = interp["gamma"][idx] * interp["amp_abs"][idx]
    term = BoxTerm(
        set_label=cover_set.label, box_id=box.box_id, beta=beta, cone=cone,
        tables=tables, kernel=kernel, out_idx=idx, warp=warp, amp=amp,
        kmah=interp["kmah"][idx], alpha_fac=kernel.alpha_at(interp["hess"][idx]),
    )
    cache[key] = term
    return term


def prepare_operator(
    model: LensModel,
    grid: SpatialGrid,
    tiling: frame_mod.Tiling,
    t0: float,
    t1: float,
    u_probe: np.ndarray,
    params: OperatorParams | None = None,
) -> PreparedOperator:
    """Run the geometric preparation stage against probe data."""
    params = params or OperatorParams()

    energies = frame_mod.box_energies(u_probe, tiling)
    total = float(energies.sum())
    if total <= 0:
        raise NumericalError("probe data carries no energy")
    order = np.argsort(-energies)
    source_ids, acc = [], 0.0
    for idx in order:
        if acc >= (1.0 - params.source_energy_tol) * total:
            break
        if tiling.boxes[idx].kind == frame_mod.DIRECTIONAL:
            source_ids.append(int(idx))
        acc += float(energies[idx])
    skipped = 1.0 - float(np.sum(energies[source_ids])) / total

    x_range = _auto_x_range(u_probe, grid, params.x_pad, params.x_quantile)
    th_lo, th_hi = _theta_range(tiling, source_ids, params.theta_pad)
    ref_box = tiling.boxes[source_ids[0]]
    cmap = caustic_mod.detect(
        model, ref_box, t0, t1, params.delta_x, params.delta_nu,
        rank_tol=params.rank_tol, x_range=x_range, dilation=params.dilation,
        theta_range=(th_lo, th_hi),
    )

    if params.anchors is not None:
        diffeos = [
            diffeo_mod.DiffeoParams(x0=tuple(a[0]), xi0=tuple(a[1]), alpha=float(a[2]))
            for a in params.anchors
        ]
    else:
        diffeos = _greedy_anchors(model, cmap, params)

    cover = partition.build_cover(
        cmap, diffeos, model, t0, t1,
        margin=params.margin, overlap_cells=params.overlap_cells, eps_trunc=params.eps_trunc,
    )

    if diffeos:
        b = hamilton.flow(model, [diffeos[0].x0], [diffeos[0].xi0], t0, t1, rtol=1e-7)
        anchor_image = b.y[0]
    else:
        b = hamilton.flow(model, [[np.mean(x_range[0]), np.mean(x_range[1])]], [[0.0, 1.0]], t0, t1, rtol=1e-7)
        anchor_image = b.y[0]

    # output window: forward image of the data support corners, dilated
    corners = np.array(
        [[x_range[0][i], x_range[1][j]] for i in (0, 1) for j in (0, 1)], dtype=float
    )
    nu_main = tiling.boxes[source_ids[0]].orientation
    fwd = hamilton.flow(model, corners, np.broadcast_to(nu_main, corners.shape), t0, t1, rtol=1e-6)
    out_window = (
        (float(fwd.y[:, 0].min() - params.tail_pad), float(fwd.y[:, 0].max() + params.tail_pad)),
        (float(fwd.y[:, 1].min() - params.tail_pad), float(fwd.y[:, 1].max() + params.tail_pad)),
    )

    prep_args = (model, grid, tiling, t0, t1, params)
    cache: dict = {}
    plans: list[SetPlan] = []
    for bid in source_ids:
        box = tiling.boxes[bid]
        spec_probe = frame_mod.box_spectrum(u_probe, box, tiling)
        for cs in cover:
            if cs.is_identity:
                j = params.j_for(box.scale_k)
                cones = partition.cone_windows(box, j, params.window_overlap)
                terms = []
                for beta, cone in enumerate(cones):
                    try:
                        terms.append(_make_term(prep_args, cs, box, beta, cone, None, cache, out_window, x_range))
                    except NumericalError:
                        continue  # cone sees no admissible region for this set
                plans.append(SetPlan(cs.label, bid, None, terms))
            else:
                u_chk = diffeo_mod.pullback(spec_probe, cs.diffeo, grid, params.nufft_tol)
                _, report = diffeo_mod.redecompose(
                    u_chk, tiling, box,
                    eps_precision=params.eps_precision,
                    max_boxes=params.max_boxes_for(box.scale_k),
                    chi_threshold=params.chi_threshold,
                    diffeo=cs.diffeo,
                )
                terms = []
                for tid in report.selected_box_ids:
                    tbox = tiling.boxes[tid]
                    if tbox.kind != frame_mod.DIRECTIONAL:
                        continue
                    j = params.j_for(tbox.scale_k)
                    cones = partition.cone_windows(tbox, j, params.window_overlap)
                    for beta, cone in enumerate(cones):
                        try:
                            terms.append(_make_term(prep_args, cs, tbox, beta, cone, cs.diffeo, cache, out_window, x_range))
                        except NumericalError:
                            continue
                plans.append(SetPlan(cs.label, bid, cs.diffeo, terms, report))

    return PreparedOperator(
        model=model, grid=grid, tiling=tiling, t0=t0, t1=t1, params=params,
        caustic_map=cmap, cover=cover, diffeos=diffeos, source_box_ids=source_ids,
        skipped_fraction=skipped, plans=plans, anchor_image=anchor_image,
    )


def _apply_term(term: BoxTerm, spectrum, out, tol, kmah_phase=True):
    from . import nufft

    ang = np.arctan2(spectrum.points[:, 1], spectrum.points[:, 0])
    win = term.cone(ang)
    keep = win > 1e-14
    if not np.any(keep):
        return
    vals = spectrum.values[keep] * win[keep]
    pts = spectrum.points[keep]
    w = fio.reduced_frequency(pts, term.tables.nu_tilde)
    theta = term.kernel.theta_at(w)
    acc = np.zeros(len(term.out_idx), dtype=complex)
    for r in range(term.kernel.rank):
        spec_r = nufft.SampledSpectrum(pts, vals * theta[r], period=spectrum.period)
        acc += term.alpha_fac[:, r] * nufft.eval_adjoint(spec_r, term.warp, tol)
    amp = term.amp
    if kmah_phase:
        amp = amp * np.exp(-0.5j * np.pi * term.kmah)
    out.ravel()[term.out_idx] += amp * acc


def apply_operator(u: np.ndarray, prepared: PreparedOperator) -> OperatorResult:
    """Apply the prepared factorized operator to data on the grid."""
    grid = prepared.grid
    tiling = prepared.tiling
    params = prepared.params
    if u.shape != (grid.n, grid.n):
        raise ValueError("data shape does not match the prepared grid")

    by_set = {cs.label: np.zeros((grid.n, grid.n), dtype=complex) for cs in prepared.cover}
    reports = []
    for plan in prepared.plans:
        box = tiling.boxes[plan.source_box_id]
        out = by_set[plan.set_label]
        if plan.diffeo is None:
            spec = frame_mod.box_spectrum(u, box, tiling)
            for term in plan.terms:
                _apply_term(term, spec, out, params.nufft_tol, params.kmah_phase)
        else:
            spec = frame_mod.box_spectrum(u, box, tiling)
            u_chk = diffeo_mod.pullback(spec, plan.diffeo, grid, params.nufft_tol)
            u_hat = np.fft.fft2(u_chk).ravel()
            renorm = plan.report.renormalization if params.renormalize else 1.0
            scale_terms = {}
            for tid in plan.report.selected_box_ids:
                tbox = tiling.boxes[tid]
                if tbox.kind != frame_mod.DIRECTIONAL:
                    continue
                vals = u_hat[tbox.support_flat] * tbox.window / np.sqrt(tbox.volume)
                arr = np.fft.ifft2(frame_mod._extract_patch(vals, tbox, grid.n))
                mask = plan.report.coeff_masks.get(tid)
                if mask is not None:
                    arr = np.where(mask, 0.0, arr)
                scale_terms[tid] = frame_mod.spectrum_from_coeffs(arr, tbox, tiling)
            for term in plan.terms:
                tspec = scale_terms.get(term.box_id)
                if tspec is None:
                    continue
                tmp = np.zeros_like(out)
                _apply_term(term, tspec, tmp, params.nufft_tol, params.kmah_phase)
                out += renorm * tmp
            reports.append((plan.set_label, plan.source_box_id, plan.report))

    total = np.sum(list(by_set.values()), axis=0)
    e_in = float(np.sum(np.abs(u) ** 2) * grid.h**2)
    e_out = float(np.sum(np.abs(total) ** 2) * grid.h**2)
    return OperatorResult(
        total=total,
        by_set=by_set,
        input_energy=e_in,
        output_energy=e_out,
        skipped_fraction=prepared.skipped_fraction,
        reports=reports,
    )
