"""Caustic detection on the sampled canonical relation.

The relation is sampled on an (x1, x2, theta) lattice: source positions in
the data support and initial directions in a frequency box's cone.  Rank
deficiencies of W1 = dy/dx are monitored along the rays; the sign-change
loci of det W1 (the caustic surface Sigma) separate the lattice into the
sets O_i, with a dilated band around Sigma forming the caustic-containing
set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NumericalError
from . import hamilton


@dataclass
class CausticMap:
    """Sampled rank profile of W1 over (x, nu) with region labels.

    labels partition all samples; caustic_label is the label of the set
    containing Sigma (0 when the medium produces no caustic).
    """

    x1_axis: np.ndarray
    x2_axis: np.ndarray
    theta_axis: np.ndarray
    det_w1: np.ndarray  # (n1, n2, nt)
    smin_ratio: np.ndarray  # min/max singular value of W1
    labels: np.ndarray  # (n1, n2, nt) int, labels 1..n_sets
    caustic_label: int
    sigma_points: np.ndarray  # (m, 3) lattice coordinates of sign-change midpoints
    kmah_counts: np.ndarray  # (n1, n2, nt) det-sign crossings along each ray
    pi: np.ndarray  # (n1, n2, nt, 4, 4) endpoint propagators (Cartesian)
    y: np.ndarray  # (n1, n2, nt, 2) ray endpoints
    eta: np.ndarray  # (n1, n2, nt, 2)
    escaped: np.ndarray
    t0: float
    t1: float
    rank_tol: float

    @property
    def set_labels(self) -> list[int]:
        return sorted(int(v) for v in np.unique(self.labels))

    @property
    def n_sets(self) -> int:
        return len(self.set_labels)

    def shape(self):
        return self.labels.shape


def rank_profile(w1: np.ndarray, rank_tol: float = 1e-6):
    """Deficiency index set I (Fermi-frame coordinates) and null-space basis.

    Returns (I, basis) where I lists the coordinates spanning the null space
    of the 2x2 matrix; full rank gives (set(), empty basis).
    """
    if not (1e-12 < rank_tol < 1e-2):
        raise ValueError("rank_tol must lie in (1e-12, 1e-2)")
    w1 = np.asarray(w1, dtype=float)
    if not np.all(np.isfinite(w1)):
        raise NumericalError("non-finite W1")
    u, s, vt = np.linalg.svd(w1)
    if s[0] == 0.0:
        return {1, 2}, np.eye(2)
    deficient = s <= rank_tol * s[0]
    if not np.any(deficient):
        return set(), np.zeros((2, 0))
    basis = vt[deficient].T  # right-singular vectors spanning the null space
    idx = {int(np.argmax(np.abs(b))) + 1 for b in basis.T}
    return idx, basis


def kmah(det_series: np.ndarray) -> np.ndarray:
    """Count sign changes of det W1 along rays; series shape (..., S)."""
    det = np.asarray(det_series, dtype=float)
    sign = np.sign(det)
    if np.any(np.all(det[..., :] == 0.0, axis=-1)):
        raise NumericalError("det W1 vanishes on a plateau: refine the sampling")
    # treat isolated exact zeros as crossings counted once
    zero = sign == 0.0
    if np.any(zero):
        sign = sign.copy()
        flat = sign.reshape(-1, sign.shape[-1])
        for row in flat:
            last = 1.0
            for i in range(len(row)):
                if row[i] == 0.0:
                    row[i] = last
                else:
                    last = row[i]
        sign = flat.reshape(sign.shape)
    return np.sum(np.abs(np.diff(sign, axis=-1)) > 1.0, axis=-1).astype(int)


def detect(
    model,
    box,
    t0: float,
    t1: float,
    delta_x: float,
    delta_nu: float,
    rank_tol: float = 1e-6,
    x_range=((-3.0, 3.0), (3.0, 7.0)),
    dilation: int = 1,
    rtol: float = 1e-7,
    bounds=None,
    theta_range=None,
) -> CausticMap:
    """Sample the canonical relation over the box cone and label the sets O_i.

    theta_range overrides the box's own cone (used when one map serves
    several neighboring source boxes).
    """
    lo, hi = theta_range if theta_range is not None else box.angle_range()
    theta = np.arange(lo, hi + 1e-12, delta_nu)
    x1 = np.arange(x_range[0][0], x_range[0][1] + 1e-12, delta_x)
    x2 = np.arange(x_range[1][0], x_range[1][1] + 1e-12, delta_x)
    g1, g2, gt = np.meshgrid(x1, x2, theta, indexing="ij")
    shape = g1.shape
    x = np.stack([g1.ravel(), g2.ravel()], axis=1)
    xi = np.stack([np.cos(gt.ravel()), np.sin(gt.ravel())], axis=1)

    bundle = hamilton.propagator(model, x, xi, t0, t1, rtol=rtol, record=True, bounds=bounds)
    if bundle.det_w1 is None:
        raise NumericalError("propagator did not record det W1")
    det_t = bundle.det_w1
    det = det_t[:, -1].reshape(shape)
    counts = kmah(det_t).reshape(shape)
    w1 = bundle.pi[:, :2, :2]
    svals = np.linalg.svd(w1, compute_uv=False)
    ratio = (svals[:, 1] / np.maximum(svals[:, 0], 1e-300)).reshape(shape)
    escaped = bundle.escaped.reshape(shape) if bundle.escaped is not None else np.zeros(shape, bool)

    # caustic band: deficient samples plus cells adjacent to a det sign change
    deficient = ratio <= rank_tol
    edge = np.zeros(shape, dtype=bool)
    sigma_pts = []
    axes = (x1, x2, theta)
    sgn = np.sign(det)
    for axis in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis] = slice(0, -1)
        b[axis] = slice(1, None)
        change = sgn[tuple(a)] * sgn[tuple(b)] < 0
        edge[tuple(a)] |= change
        edge[tuple(b)] |= change
        idx = np.argwhere(change)
        if len(idx):
            mids = []
            for d in range(3):
                c = axes[d][idx[:, d]].astype(float)
                if d == axis:
                    c = 0.5 * (c + axes[d][idx[:, d] + 1])
                mids.append(c)
            sigma_pts.append(np.stack(mids, axis=1))
    sigma_points = np.concatenate(sigma_pts, axis=0) if sigma_pts else np.zeros((0, 3))

    band = deficient | edge
    if dilation > 0 and np.any(band):
        band = ndimage.binary_dilation(band, structure=ndimage.generate_binary_structure(3, 1), iterations=dilation)

    # components of constant det sign: Sigma separates them by construction,
    # so each same-sign region stays connected regardless of the band width
    struct = ndimage.generate_binary_structure(3, 1)
    comp_pos, n_pos = ndimage.label(sgn > 0, structure=struct)
    comp_neg, n_neg = ndimage.label(sgn < 0, structure=struct)
    comps = []
    for c in range(1, n_pos + 1):
        comps.append((comp_pos == c) & ~band)
    for c in range(1, n_neg + 1):
        comps.append((comp_neg == c) & ~band)
    comps = [m for m in comps if np.any(m)]
    # positive-det components first, larger components first within a sign
    comps.sort(key=lambda m: (-float(np.mean(sgn[m])), -int(np.sum(m))))

    labels = np.zeros(shape, dtype=int)
    caustic_label = 0
    next_label = 1
    for rank, m in enumerate(comps):
        if rank == 1 and np.any(band):
            caustic_label = next_label
            next_label += 1
        labels[m] = next_label
        next_label += 1
    if np.any(band) and caustic_label == 0:
        caustic_label = next_label
        next_label += 1
    if np.any(band):
        labels[band] = caustic_label

    if np.any(labels == 0):
        raise NumericalError("unlabeled caustic-map samples")

    return CausticMap(
        x1_axis=x1,
        x2_axis=x2,
        theta_axis=theta,
        det_w1=det,
        smin_ratio=ratio,
        labels=labels,
        caustic_label=caustic_label,
        sigma_points=sigma_points,
        kmah_counts=counts,
        pi=bundle.pi.reshape(shape + (4, 4)),
        y=bundle.y.reshape(shape + (2,)),
        eta=bundle.eta.reshape(shape + (2,)),
        escaped=escaped,
        t0=t0,
        t1=t1,
        rank_tol=rank_tol,
    )
