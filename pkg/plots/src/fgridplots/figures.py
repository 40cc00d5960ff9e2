"""Figure renderers for completed pipeline runs.

Every function takes the run directory (holding tile/, trace/, caustics/,
prepare/, apply/, fdref/, compare/ stage outputs) and writes deterministic
PNG panels: fixed dpi and sizes, color ranges derived from the data, no
timestamps embedded.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .fgrid import grid_extent, read_fgrid

DPI = 120
PNG_META = {"Software": "fgridplots"}


def _save(fig, path):
    fig.savefig(path, dpi=DPI, metadata=PNG_META)
    plt.close(fig)
    return Path(path)


def _sym(ax, field, ext, title):
    lim = np.max(np.abs(field))
    im = ax.imshow(
        field.T, origin="lower", extent=ext, cmap="RdBu_r", vmin=-lim, vmax=lim, interpolation="nearest"
    )
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("x1 [km]")
    ax.set_ylabel("x2 [km]")
    return im


def render_rays(run: Path, out: Path):
    """Ray fan with caustic crossings marked (bi-characteristics panel)."""
    data, meta = read_fgrid(run / "trace" / "rays.fgrid")
    fig, ax = plt.subplots(figsize=(5, 6))
    for ray in data:
        t, y1, y2, det = ray.T
        ax.plot(y1.real, y2.real, color="0.4", lw=0.7)
        sign = np.sign(det.real)
        cross = np.nonzero(np.diff(sign) != 0)[0]
        if len(cross):
            ax.plot(y1.real[cross], y2.real[cross], "r.", ms=5)
    ax.set_xlabel("x1 [km]")
    ax.set_ylabel("x2 [km]")
    ax.set_title("ray fan; det W1 sign changes in red")
    ax.set_aspect("equal")
    return _save(fig, out / "rays.png")


def render_caustic_map(run: Path, out: Path):
    """Region labels with the caustic surface overlay, per direction slice."""
    labels, meta = read_fgrid(run / "caustics" / "labels.fgrid")
    sigma, _ = read_fgrid(run / "caustics" / "sigma_points.fgrid")
    det, _ = read_fgrid(run / "caustics" / "det_w1.fgrid")
    n_t = labels.shape[2]
    slices = sorted(set([0, n_t // 2, n_t - 1]))
    ext = (float(meta["x1_lo"]), float(meta["x1_hi"]), float(meta["x2_lo"]), float(meta["x2_hi"]))
    th_lo, th_hi = float(meta["theta_lo"]), float(meta["theta_hi"])
    thetas = np.linspace(th_lo, th_hi, n_t)
    fig, axes = plt.subplots(1, len(slices), figsize=(4 * len(slices), 4.5), squeeze=False)
    for ax, s in zip(axes[0], slices):
        ax.imshow(
            labels[:, :, s].real.T, origin="lower", extent=ext, cmap="Pastel1",
            vmin=1, vmax=max(3, labels.real.max()), interpolation="nearest",
        )
        ax.contour(
            np.linspace(ext[0], ext[1], labels.shape[0]),
            np.linspace(ext[2], ext[3], labels.shape[1]),
            det[:, :, s].real.T, levels=[0.0], colors="r", linewidths=1.5,
        )
        if len(sigma):
            near = np.abs(sigma[:, 2].real - thetas[s]) < (th_hi - th_lo) / max(n_t - 1, 1)
            ax.plot(sigma[near, 0].real, sigma[near, 1].real, "r.", ms=2)
        ax.set_title(f"sets O_i at theta = {thetas[s]:.3f}", fontsize=9)
        ax.set_xlabel("x1 [km]")
    axes[0][0].set_ylabel("x2 [km]")
    return _save(fig, out / "caustic_map.png")


def render_partition(run: Path, out: Path):
    """Partition weights on the central direction slice (iso-amplitude view)."""
    weights = sorted((run / "prepare").glob("weight_*.fgrid"))
    if not weights:
        raise FileNotFoundError("no partition weight artifacts in prepare/")
    fig, axes = plt.subplots(1, len(weights) + 1, figsize=(3.6 * (len(weights) + 1), 4), squeeze=False)
    total = None
    for ax, wf in zip(axes[0], weights):
        w, meta = read_fgrid(wf)
        s = w.shape[2] // 2
        ext = (float(meta["x1_lo"]), float(meta["x1_hi"]), float(meta["x2_lo"]), float(meta["x2_hi"]))
        im = ax.imshow(w[:, :, s].real.T, origin="lower", extent=ext, cmap="viridis", vmin=0, vmax=1,
                       interpolation="nearest")
        ax.contour(np.linspace(ext[0], ext[1], w.shape[0]), np.linspace(ext[2], ext[3], w.shape[1]),
                   w[:, :, s].real.T, levels=[0.5], colors="w", linewidths=1.0)
        ax.set_title(f"Gamma {wf.stem.split('weight_')[1]}", fontsize=9)
        total = w[:, :, s].real if total is None else total + w[:, :, s].real
    im = axes[0][-1].imshow(total.T, origin="lower", extent=ext, cmap="viridis", vmin=0, vmax=1.2,
                            interpolation="nearest")
    axes[0][-1].set_title("sum (= 1)", fontsize=9)
    fig.colorbar(im, ax=axes[0][-1], shrink=0.8)
    return _save(fig, out / "partition.png")


def render_expansion(run: Path, out: Path):
    """Cutoff tables entering the separated representation."""
    tables = sorted((run / "prepare").glob("tables_*_gamma.fgrid"))
    if not tables:
        raise FileNotFoundError("no table artifacts in prepare/")
    fig, axes = plt.subplots(1, len(tables), figsize=(4 * len(tables), 4), squeeze=False)
    for ax, tf in zip(axes[0], tables):
        g, meta = read_fgrid(tf)
        ext = (float(meta["y1_lo"]), float(meta["y1_hi"]), float(meta["y2_lo"]), float(meta["y2_hi"]))
        ax.imshow(g.real.T, origin="lower", extent=ext, cmap="viridis", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(tf.stem, fontsize=8)
        ax.set_xlabel("y1 [km]")
    return _save(fig, out / "expansion_tables.png")


def render_packets(run: Path, out: Path, packet: int = 0):
    """Input packet and per-set contributions (operator factorization panels)."""
    apply_dir = run / "apply"
    inp, meta = read_fgrid(apply_dir / f"packet{packet:02d}_input.fgrid")
    ext = grid_extent(meta)
    sets = sorted(apply_dir.glob(f"packet{packet:02d}_set_*.fgrid"))
    total, _ = read_fgrid(apply_dir / f"packet{packet:02d}_total.fgrid")
    n = 2 + len(sets)
    fig, axes = plt.subplots(1, n, figsize=(3.6 * n, 4.2), squeeze=False)
    _sym(axes[0][0], inp.real, ext, "input packet")
    for ax, sf in zip(axes[0][1:], sets):
        fld, _ = read_fgrid(sf)
        _sym(ax, fld.real, ext, sf.stem.split("packet%02d_" % packet)[1])
    _sym(axes[0][-1], total.real, ext, "joint output")
    return _save(fig, out / f"packet{packet:02d}_sets.png")


def render_compare(run: Path, out: Path, packet: int = 0):
    """Operator output vs finite-difference reference, shared color range."""
    a, meta = read_fgrid(run / "apply" / f"packet{packet:02d}_total.fgrid")
    b, _ = read_fgrid(run / "fdref" / f"packet{packet:02d}_reference.fgrid")
    ext = grid_extent(meta)
    lim = max(np.abs(a.real).max(), np.abs(b.real).max())
    fig, axes = plt.subplots(1, 3, figsize=(11.5, 4.2))
    for ax, fld, title in ((axes[0], a.real, "operator"), (axes[1], b.real, "finite differences")):
        ax.imshow(fld.T, origin="lower", extent=ext, cmap="RdBu_r", vmin=-lim, vmax=lim, interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("x1 [km]")
    diff_path = run / "compare" / f"packet{packet:02d}_phase_map.fgrid"
    if diff_path.exists():
        ph, _ = read_fgrid(diff_path)
        im = axes[2].imshow(ph.real.T, origin="lower", extent=ext, cmap="twilight", vmin=-np.pi, vmax=np.pi,
                            interpolation="nearest")
        axes[2].set_title("phase difference", fontsize=9)
        fig.colorbar(im, ax=axes[2], shrink=0.8)
    else:
        _sym(axes[2], (a - b).real, ext, "difference")
    return _save(fig, out / f"packet{packet:02d}_compare.png")


ALL_FIGURES = {
    "rays": render_rays,
    "caustic_map": render_caustic_map,
    "partition": render_partition,
    "expansion": render_expansion,
    "packets": render_packets,
    "compare": render_compare,
}


def render_all(run: Path, out: Path, names=None) -> list[Path]:
    run = Path(run)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in names or ALL_FIGURES:
        written.append(ALL_FIGURES[name](run, out))
    return written
