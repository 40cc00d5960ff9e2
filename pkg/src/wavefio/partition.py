"""Pseudodifferential partition of unity over the cover {O_i, O_ij}.

Cover sets live on the same (x1, x2, theta) lattice as the caustic map.
Identity sets (Q = I) are admissible where W1 is well conditioned; each
diffeomorphism Q_ij contributes a set admissible where the upper-left block
of Pi * Pi_Q^-1 is well conditioned.  Weights are double-exponential
cutoffs of the signed lattice distance to the admissible boundary,
combined hierarchically: identity sets first, Q sets share the remainder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .caustic import CausticMap
from .diffeo import DiffeoParams, apply_CQ, propagator_Q_inv_at
from .errors import CoverGapError


@dataclass
class CoverSet:
    """One admissible set with its partition weight table on the lattice."""

    label: tuple[int, int]  # (i, 0) for identity sets, (i, j) for Q sets
    diffeo: DiffeoParams | None
    admissible: np.ndarray  # bool over (n1, n2, nt)
    distance: np.ndarray  # signed lattice distance, negative inside
    weight: np.ndarray  # normalized partition weight
    det_w1: np.ndarray  # det of the (composed) upper-left block on the lattice
    axes: tuple[np.ndarray, np.ndarray, np.ndarray]
    raw_weight: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_identity(self) -> bool:
        return self.diffeo is None

    def _lookup_points(self, x, theta):
        # clamp onto the lattice: weights extend by their boundary values, which
        # keeps the pointwise partition-of-unity sum exact off-lattice too
        c = 0.5 * (self.axes[2][0] + self.axes[2][-1])
        th = c + np.remainder(np.asarray(theta) - c + np.pi, 2.0 * np.pi) - np.pi
        p1 = np.clip(np.asarray(x)[..., 0], self.axes[0][0], self.axes[0][-1])
        p2 = np.clip(np.asarray(x)[..., 1], self.axes[1][0], self.axes[1][-1])
        th = np.clip(th, self.axes[2][0], self.axes[2][-1])
        return np.stack([p1, p2, th], axis=-1)

    def weight_at(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Trilinear weight lookup; clamped to the lattice boundary outside."""
        interp = RegularGridInterpolator(self.axes, self.weight, bounds_error=False, fill_value=None)
        return interp(self._lookup_points(x, theta))

    def admissible_at(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        interp = RegularGridInterpolator(
            self.axes, self.admissible.astype(float), bounds_error=False, fill_value=None
        )
        return interp(self._lookup_points(x, theta)) > 0.999


def cutoff_weight(d: np.ndarray, s: float = 1.0, b: float = 0.0, eps_trunc: float = 0.0) -> np.ndarray:
    """Normalized double-exponential cutoff exp(-exp(s*d + b)).

    d is negative inside the set; the weight tends to 1 deep inside and to 0
    outside, with value exp(-exp(b)) at d = 0.  Values below eps_trunc are
    truncated to 0, above 1 - eps_trunc to 1.
    """
    arg = np.clip(s * np.asarray(d, dtype=float) + b, -700.0, 700.0)
    w = np.exp(-np.exp(arg))
    if eps_trunc > 0:
        w = np.where(w < eps_trunc, 0.0, w)
        w = np.where(w > 1.0 - eps_trunc, 1.0, w)
    return w


def signed_lattice_distance(mask: np.ndarray) -> np.ndarray:
    """Signed Euclidean distance (in lattice cells) to the mask boundary."""
    big = float(sum(mask.shape))
    if np.all(mask):
        return np.full(mask.shape, -big)
    if not np.any(mask):
        return np.full(mask.shape, big)
    inside = ndimage.distance_transform_edt(mask)
    outside = ndimage.distance_transform_edt(~mask)
    return outside - inside


def cutoff_shape(overlap_cells: float, eps_trunc: float) -> tuple[float, float]:
    """Scale and offset of the boundary cutoff.

    The weight passes eps_trunc half a cell inside the admissible boundary
    (so the truncated support stays within the set) and saturates to 1
    within overlap_cells further inside.
    """
    hi = float(np.log(np.log(1.0 / eps_trunc)))
    lo = float(np.log(-np.log(1.0 - eps_trunc)))
    s = (hi - lo) / overlap_cells
    return s, hi - 0.5 * s


def _cond_ratio(mat: np.ndarray) -> np.ndarray:
    """min/max singular value of a batch of 2x2 matrices."""
    s = np.linalg.svd(mat, compute_uv=False)
    return s[..., 1] / np.maximum(s[..., 0], 1e-300)


def build_cover(
    cmap: CausticMap,
    diffeos: list[DiffeoParams],
    model=None,
    t0: float | None = None,
    t1: float | None = None,
    margin: float = 0.1,
    overlap_cells: float = 3.0,
    eps_trunc: float = 1e-8,
) -> list[CoverSet]:
    """Construct the hierarchical partition of unity over the sampled relation.

    Identity-diffeomorphism sets are built first from the well-conditioned
    components of W1; the Q_ij sets share the remaining weight on the part
    of the lattice the identity sets do not cover.  Raises CoverGapError if
    any sample ends up outside every admissible set.
    """
    shape = cmap.labels.shape
    axes = (cmap.x1_axis, cmap.x2_axis, cmap.theta_axis)
    s_scale, b_off = cutoff_shape(overlap_cells, eps_trunc)

    ratio_w1 = cmap.smin_ratio
    ok = ratio_w1 > margin
    struct = ndimage.generate_binary_structure(3, 1)

    sets: list[CoverSet] = []
    id_weight_total = np.zeros(shape)
    # identity sets: well-conditioned samples on each non-caustic label's side
    # of Sigma (sign regions cannot wrap around the caustic's fold edge)
    for lab in cmap.set_labels:
        if lab == cmap.caustic_label:
            continue
        lab_mask = cmap.labels == lab
        signs = np.sign(cmap.det_w1[lab_mask])
        sign_i = 1.0 if np.mean(signs) >= 0 else -1.0
        sign_ok = ok & (np.sign(cmap.det_w1) == sign_i)
        comp, n_comp = ndimage.label(sign_ok, structure=struct)
        hit = np.unique(comp[lab_mask & sign_ok])
        hit = hit[hit > 0]
        if hit.size == 0:
            continue
        adm = np.isin(comp, hit)
        dist = signed_lattice_distance(adm)
        w = cutoff_weight(dist, s=s_scale, b=b_off, eps_trunc=eps_trunc)
        sets.append(
            CoverSet(
                label=(lab, 0),
                diffeo=None,
                admissible=adm,
                distance=dist,
                weight=w,
                det_w1=cmap.det_w1,
                axes=axes,
                raw_weight=w,
            )
        )
        id_weight_total += w

    remainder = np.clip(1.0 - id_weight_total, 0.0, None)

    # Q sets: admissible where the composed upper-left block has full rank
    g1, g2, gt = np.meshgrid(*axes, indexing="ij")
    x = np.stack([g1.ravel(), g2.ravel()], axis=1)
    xi = np.stack([np.cos(gt.ravel()), np.sin(gt.ravel())], axis=1)
    pi_flat = cmap.pi.reshape(-1, 4, 4)
    q_sets = []
    q_weights = []
    caustic_i = cmap.caustic_label if cmap.caustic_label else (max(cmap.set_labels) + 1)
    for j, dif in enumerate(diffeos, start=1):
        xt, kt = apply_CQ(dif, x, xi)
        pi_q_inv = propagator_Q_inv_at(dif, xt, kt)
        pi_c = pi_flat @ pi_q_inv
        w1c = pi_c[:, :2, :2]
        det = (w1c[:, 0, 0] * w1c[:, 1, 1] - w1c[:, 0, 1] * w1c[:, 1, 0]).reshape(shape)
        adm = (_cond_ratio(w1c) > margin).reshape(shape)
        dist = signed_lattice_distance(adm)
        w = cutoff_weight(dist, s=s_scale, b=b_off, eps_trunc=eps_trunc)
        cs = CoverSet(
            label=(caustic_i, j),
            diffeo=dif,
            admissible=adm,
            distance=dist,
            weight=w,
            det_w1=det,
            axes=axes,
            raw_weight=w,
        )
        q_sets.append(cs)
        q_weights.append(w)

    if q_sets:
        q_total = np.sum(q_weights, axis=0)
        share = np.where(q_total > 0.0, remainder / np.maximum(q_total, 1e-300), 0.0)
        for cs in q_sets:
            cs.weight = cs.weight * share
        sets.extend(q_sets)

    # fatal only when a sample lies in no admissible set at all
    covered = np.zeros(shape, dtype=bool)
    for cs in sets:
        covered |= cs.admissible
    if not sets or np.any(~covered):
        n_gap = int(np.sum(~covered)) if sets else int(np.prod(shape))
        idx = np.argwhere(~covered) if sets else np.argwhere(np.ones(shape, bool))
        raise CoverGapError(
            f"{n_gap} lattice samples not covered by any admissible set; first at "
            f"x=({axes[0][idx[0][0]]:.3f},{axes[1][idx[0][1]]:.3f}), theta={axes[2][idx[0][2]]:.3f}"
        )

    return normalize_partition(sets)


def normalize_partition(sets: list[CoverSet]) -> list[CoverSet]:
    """Divide weights by their pointwise sum so they sum exactly to 1."""
    if not sets:
        return sets
    total = np.sum([cs.weight for cs in sets], axis=0)
    if np.any(total <= 0.0):
        idx = np.argwhere(total <= 0.0)
        raise CoverGapError(f"zero total partition weight at {len(idx)} samples")
    for cs in sets:
        cs.weight = cs.weight / total
    return sets


@dataclass
class ConeWindow:
    """Squared-cosine window on a sub-cone of a box's directional range."""

    center: float  # central direction (radians)
    lo: float
    hi: float
    tau: float  # transition width (radians)
    edge_lo: bool  # saturates to the cone edge (no lower neighbor)
    edge_hi: bool

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        from .frame import meyer_ramp

        th = np.remainder(np.asarray(theta, dtype=float) - self.center + np.pi, 2.0 * np.pi) - np.pi + self.center
        w = np.ones_like(th)
        if not self.edge_lo:
            t = np.clip((th - (self.lo - 0.5 * self.tau)) / self.tau, 0.0, 1.0)
            w = w * np.sin(0.5 * np.pi * meyer_ramp(t)) ** 2
        if not self.edge_hi:
            t = np.clip((th - (self.hi - 0.5 * self.tau)) / self.tau, 0.0, 1.0)
            w = w * np.cos(0.5 * np.pi * meyer_ramp(t)) ** 2
        return w


def cone_windows(box, j_terms: int, window_overlap: float = 1.0) -> list[ConeWindow]:
    """Partition the box's cone of directions into j_terms overlapping windows."""
    if j_terms < 1:
        raise ValueError("j_terms must be >= 1")
    lo, hi = box.angle_range()
    delta = (hi - lo) / j_terms
    tau = float(np.clip(window_overlap, 1e-6, 1.0)) * delta
    wins = []
    for b in range(j_terms):
        w_lo = lo + b * delta
        w_hi = lo + (b + 1) * delta
        wins.append(
            ConeWindow(
                center=0.5 * (w_lo + w_hi),
                lo=w_lo,
                hi=w_hi,
                tau=tau,
                edge_lo=(b == 0),
                edge_hi=(b == j_terms - 1),
            )
        )
    return wins


@dataclass
class SeparatedCutoff:
    """Low-rank separated form Gamma(y, xi) ~ sum_b gamma1_b(y) * gamma2_b(xi)."""

    windows: list[ConeWindow]
    profiles: list[np.ndarray]  # gamma1_b sampled on the table's y indexing

    @property
    def n_terms(self) -> int:
        return len(self.windows)

    def reconstruct(self, theta: np.ndarray) -> np.ndarray:
        """Evaluate sum_b gamma1_b * gamma2_b(theta); output (y..., theta...)."""
        acc = 0.0
        for g1, win in zip(self.profiles, self.windows):
            acc = acc + g1[..., None] * win(np.atleast_1d(theta))[None, ...]
        return acc


def separate(gamma_table: np.ndarray, theta_axis: np.ndarray, box, j_terms: int, window_overlap: float = 1.0) -> SeparatedCutoff:
    """Separated representation of a cutoff table sampled over (y, theta).

    gamma_table has shape (n_y, n_theta) with theta_axis covering the box's
    cone.  The y-profile of each term is the table at the window's central
    direction; windows are clamped if j_terms exceeds the direction count.
    """
    n_theta = gamma_table.shape[-1]
    if j_terms > n_theta:
        import warnings

        warnings.warn(f"j_terms={j_terms} exceeds {n_theta} sampled directions; clamped")
        j_terms = n_theta
    wins = cone_windows(box, j_terms, window_overlap)
    profiles = []
    for win in wins:
        idx = int(np.argmin(np.abs(theta_axis - win.center)))
        profiles.append(gamma_table[..., idx].copy())
    return SeparatedCutoff(windows=wins, profiles=profiles)


def default_expansion_terms(k: int, j0: int = 1, k0: int = 2) -> int:
    """Default J at scale k: max(1, round(j0 * 2^(-(k - k0)/2))) -> 1 as k grows."""
    return max(1, int(round(j0 * 2.0 ** (-(k - k0) / 2.0))))
