"""Command-line pipeline: tile | trace | caustics | prepare | apply | fdref | compare.

Each stage writes .fgrid artifacts plus a deterministic manifest into
<out>/<stage>/; stages consume earlier outputs from the same directory and
are skipped when a manifest with the same config hash already exists
(override with --stage-force).  Exit codes: 0 ok, 2 config error,
3 upstream missing, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import pickle
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import caustic as caustic_mod
from . import compare as compare_mod
from . import fdref as fdref_mod
from . import frame as frame_mod
from . import hamilton, operator
from .config import ExperimentConfig, load_config
from .errors import ConfigError, NumericalError, UpstreamMissingError, WavefioError
from .fgrid import read_fgrid, write_fgrid

STAGES = ["tile", "trace", "caustics", "prepare", "apply", "fdref", "compare"]


def _table1_lines(cfg: ExperimentConfig) -> list[str]:
    """The user-defined free parameters, echoed into every manifest."""
    return [
        f"param.delta_nu = {cfg.delta_nu!r}",
        f"param.delta_x = {cfg.delta_x!r}",
        f"param.alpha = {cfg.alpha if cfg.anchors is None else [a[2] for a in cfg.anchors]}",
        f"param.j_terms = {cfg.j_terms or 'default rule j0=%d' % cfg.j0}",
        f"param.eps_precision = {cfg.eps_precision!r}",
        f"param.eps_kernel = {cfg.eps_kernel!r}",
        f"param.chi_threshold = {cfg.chi_threshold!r}",
    ]


def _write_manifest(stage_dir: Path, cfg: ExperimentConfig, extra: list[str]) -> None:
    lines = [
        f"stage = {stage_dir.name}",
        f"wavefio_version = {__version__}",
        f"numpy_version = {np.__version__}",
        f"config_hash = {cfg.config_hash()}",
        *_table1_lines(cfg),
        *extra,
        "",
        "[config]",
        *cfg.echo_lines(),
    ]
    (stage_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _stage_done(stage_dir: Path, cfg: ExperimentConfig) -> bool:
    man = stage_dir / "manifest.txt"
    if not man.exists():
        return False
    for line in man.read_text().splitlines():
        if line.startswith("config_hash = "):
            return line.split(" = ")[1] == cfg.config_hash()
    return False


def _require(path: Path, what: str):
    if not path.exists():
        raise UpstreamMissingError(f"missing upstream artifact {path}; run '{what}' first")


def _source_packets(cfg: ExperimentConfig):
    grid = cfg.grid()
    tiling = frame_mod.build_tiling(grid, cfg.k_max, cfg.angular_constant, cfg.orientation_counts or None)
    th = np.radians(cfg.source_direction_deg)
    box = tiling.box_by_direction(cfg.source_k, (np.cos(th), np.sin(th)))
    packets = [frame_mod.synthesize_packet(tiling, box, np.asarray(c)) for c in cfg.source_centers]
    return grid, tiling, box, packets


def stage_tile(cfg: ExperimentConfig, out: Path) -> list[str]:
    grid, tiling, box, _ = _source_packets(cfg)
    ps = tiling.partition_sum()
    write_fgrid(out / "partition_sum.fgrid", ps, {"what": "pointwise co-partition sum", "n": grid.n})
    rows = tiling.metadata_rows()
    lines = [f"boxes = {len(rows)}", f"source_box = {box.box_id}"]
    lines.append("box_table = id kind k theta center_radius length_parallel length_perp n_coeff")
    for r in rows:
        lines.append(
            "box = {id} {kind} {k} {theta:.6f} {center_radius:.6f} {length_parallel:.6f} "
            "{length_perp:.6f} {n_coeff}".format(**r)
        )
    lines.append(f"copartition_defect = {np.max(np.abs(ps - 1.0)):.3e}")
    return lines


def stage_trace(cfg: ExperimentConfig, out: Path) -> list[str]:
    grid, tiling, box, packets = _source_packets(cfg)
    model = cfg.model()
    lo, hi = box.angle_range()
    n_fan = 15
    centers = np.asarray(cfg.source_centers)
    c0 = centers.mean(axis=0)
    offsets = np.linspace(-2.0, 2.0, n_fan)
    perp = np.array([-np.sin(np.radians(cfg.source_direction_deg)), np.cos(np.radians(cfg.source_direction_deg))])
    starts = c0[None, :] + offsets[:, None] * np.array([perp[1], -perp[0]])
    th = np.radians(cfg.source_direction_deg)
    xi = np.tile([np.cos(th), np.sin(th)], (n_fan, 1))
    bundle = hamilton.propagator(model, starts, xi, cfg.t0, cfg.t1, rtol=cfg.ray_rtol, record=True)
    data = np.stack(
        [
            np.broadcast_to(bundle.times, bundle.path.shape[:2]),
            bundle.path[..., 0],
            bundle.path[..., 1],
            bundle.det_w1,
        ],
        axis=-1,
    )
    write_fgrid(out / "rays.fgrid", data, {"what": "fan rays (t, y1, y2, det W1)", "n_rays": n_fan})
    return [f"rays = {n_fan}", f"steps = {bundle.n_steps}"]


def stage_caustics(cfg: ExperimentConfig, out: Path) -> list[str]:
    grid, tiling, box, packets = _source_packets(cfg)
    model = cfg.model()
    probe = packets[0]
    for p in packets[1:]:
        probe = probe + p
    x_range = operator._auto_x_range(probe, grid, cfg.x_pad, cfg.x_quantile)
    cmap = caustic_mod.detect(
        model, box, cfg.t0, cfg.t1, cfg.delta_x, cfg.delta_nu,
        rank_tol=cfg.rank_tol, x_range=x_range, dilation=cfg.dilation,
    )
    meta = {
        "x1_lo": cmap.x1_axis[0], "x1_hi": cmap.x1_axis[-1],
        "x2_lo": cmap.x2_axis[0], "x2_hi": cmap.x2_axis[-1],
        "theta_lo": cmap.theta_axis[0], "theta_hi": cmap.theta_axis[-1],
    }
    write_fgrid(out / "labels.fgrid", cmap.labels.astype(float), meta)
    write_fgrid(out / "det_w1.fgrid", cmap.det_w1, meta)
    write_fgrid(out / "smin_ratio.fgrid", cmap.smin_ratio, meta)
    write_fgrid(out / "kmah.fgrid", cmap.kmah_counts.astype(float), meta)
    write_fgrid(out / "sigma_points.fgrid", cmap.sigma_points, {"what": "caustic surface samples (x1, x2, theta)"})
    write_fgrid(out / "endpoints.fgrid", cmap.y, meta)
    return [
        f"n_sets = {cmap.n_sets}",
        f"caustic_label = {cmap.caustic_label}",
        f"sigma_samples = {len(cmap.sigma_points)}",
    ]


def stage_prepare(cfg: ExperimentConfig, out: Path) -> list[str]:
    grid, tiling, box, packets = _source_packets(cfg)
    model = cfg.model()
    probe = packets[0]
    for p in packets[1:]:
        probe = probe + p
    prep = operator.prepare_operator(model, grid, tiling, cfg.t0, cfg.t1, probe, cfg.operator_params())
    with open(out / "prepared.pkl", "wb") as f:
        pickle.dump(prep, f)
    lines = [
        f"cover_sets = {len(prep.cover)}",
        f"source_boxes = {prep.source_box_ids}",
        f"skipped_energy_fraction = {prep.skipped_fraction:.6f}",
        f"anchor_image = {prep.anchor_image[0]:.4f}, {prep.anchor_image[1]:.4f}",
    ]
    for d in prep.diffeos:
        lines.append(f"diffeo = x0=({d.x0[0]:.3f},{d.x0[1]:.3f}) xi0=({d.xi0[0]:.3f},{d.xi0[1]:.3f}) alpha={d.alpha}")
    for cs in prep.cover:
        meta = {
            "set_i": cs.label[0], "set_j": cs.label[1],
            "x1_lo": cs.axes[0][0], "x1_hi": cs.axes[0][-1],
            "x2_lo": cs.axes[1][0], "x2_hi": cs.axes[1][-1],
            "theta_lo": cs.axes[2][0], "theta_hi": cs.axes[2][-1],
        }
        write_fgrid(out / f"weight_{cs.label[0]}_{cs.label[1]}.fgrid", cs.weight, meta)
        write_fgrid(out / f"admissible_{cs.label[0]}_{cs.label[1]}.fgrid", cs.admissible.astype(float), meta)
    total = np.sum([cs.weight for cs in prep.cover], axis=0)
    lines.append(f"partition_sum_defect = {np.max(np.abs(total - 1.0)):.3e}")
    for plan in prep.plans:
        for term in plan.terms:
            lines.append(
                f"term = set={term.set_label} source={plan.source_box_id} box={term.box_id} "
                f"beta={term.beta} rank={term.kernel.rank} kernel_eps={term.kernel.achieved_eps:.2e}"
            )
        if plan.report is not None:
            r = plan.report
            lines.append(
                f"redecomposition = set={plan.set_label} source={plan.source_box_id} "
                f"boxes={r.selected_box_ids} captured={r.captured_fraction:.4f} "
                f"discarded={r.discarded_fraction:.4f} residual={r.residual_fraction:.4f} "
                f"renormalization={r.renormalization:.4f}"
            )
    # table snapshots of the first plan's first term for the figure scripts
    for plan in prep.plans:
        for term in plan.terms:
            tb = term.tables
            meta = {
                "set_i": term.set_label[0], "set_j": term.set_label[1], "box": term.box_id,
                "beta": term.beta,
                "y1_lo": tb.y1_axis[0], "y1_hi": tb.y1_axis[-1],
                "y2_lo": tb.y2_axis[0], "y2_hi": tb.y2_axis[-1],
            }
            stem = f"tables_{term.set_label[0]}_{term.set_label[1]}_{term.box_id}_{term.beta}"
            write_fgrid(out / f"{stem}_gamma.fgrid", tb.gamma, meta)
            write_fgrid(out / f"{stem}_phase.fgrid", np.where(tb.mask, tb.phase, np.nan * 0.0), meta)
            break
        break
    return lines


def _load_prepared(out_root: Path) -> operator.PreparedOperator:
    path = out_root / "prepare" / "prepared.pkl"
    _require(path, "prepare")
    with open(path, "rb") as f:
        return pickle.load(f)


def stage_apply(cfg: ExperimentConfig, out: Path) -> list[str]:
    grid, tiling, box, packets = _source_packets(cfg)
    prep = _load_prepared(out.parent)
    lines = []
    for i, packet in enumerate(packets):
        res = operator.apply_operator(packet, prep)
        meta = {"packet": i, "extent": grid.extent, "origin0": grid.origin[0], "origin1": grid.origin[1],
                "anchor_image0": prep.anchor_image[0], "anchor_image1": prep.anchor_image[1]}
        write_fgrid(out / f"packet{i:02d}_input.fgrid", packet, meta)
        write_fgrid(out / f"packet{i:02d}_total.fgrid", res.total, meta)
        for lab, fld in res.by_set.items():
            write_fgrid(out / f"packet{i:02d}_set_{lab[0]}_{lab[1]}.fgrid", fld, meta)
        lines.append(
            f"packet{i:02d} = E_in={res.input_energy:.6f} E_out={res.output_energy:.6f} "
            f"skipped={res.skipped_fraction:.6f}"
        )
    return lines


def stage_fdref(cfg: ExperimentConfig, out: Path) -> list[str]:
    grid, tiling, box, packets = _source_packets(cfg)
    model = cfg.model()
    fd_cfg = fdref_mod.FdConfig(h=cfg.fd_h, cfl=cfg.fd_cfl, order=cfg.fd_order, sponge_width=cfg.fd_sponge)
    lines = []
    for i, packet in enumerate(packets):
        res = fdref_mod.solve_halfwave(packet, model, cfg.t0, cfg.t1, fd_cfg, grid)
        meta = {"packet": i, "extent": grid.extent, "origin0": grid.origin[0], "origin1": grid.origin[1]}
        write_fgrid(out / f"packet{i:02d}_reference.fgrid", res.field, meta)
        lines.append(f"packet{i:02d} = steps={res.n_steps} dt={res.dt:.6f} ppw={res.ppw:.2f}")
    return lines


def stage_compare(cfg: ExperimentConfig, out: Path, path_a=None, path_b=None) -> list[str]:
    grid = cfg.grid()
    lines = []
    pairs = []
    if path_a and path_b:
        pairs.append(("custom", Path(path_a), Path(path_b)))
    else:
        apply_dir = out.parent / "apply"
        fd_dir = out.parent / "fdref"
        for i in range(len(cfg.source_centers)):
            pairs.append(
                (f"packet{i:02d}", apply_dir / f"packet{i:02d}_total.fgrid", fd_dir / f"packet{i:02d}_reference.fgrid")
            )
    prep_path = out.parent / "prepare" / "prepared.pkl"
    center = None
    if prep_path.exists():
        center = _load_prepared(out.parent).anchor_image
    for name, pa, pb in pairs:
        _require(pa, "apply")
        _require(pb, "fdref")
        a, meta_a = read_fgrid(pa)
        b, _ = read_fgrid(pb)
        if center is None:
            mag = np.abs(b)
            idx = np.unravel_index(int(np.argmax(mag)), mag.shape)
            x1, x2 = grid.mesh()
            center = np.array([x1[idx], x2[idx]])
        x1, x2 = grid.mesh()
        window = np.hypot(x1 - center[0], x2 - center[1]) < cfg.compare_radius
        res = compare_mod.compare_fields(a, b, window, cfg.compare_max_lag)
        write_fgrid(out / f"{name}_phase_map.fgrid", res.phase_map, {"what": "arg(a conj b) on window"})
        write_fgrid(out / f"{name}_diff.fgrid", np.abs(np.where(window, a - b, 0.0)), {"what": "|a-b| on window"})
        lines.append(
            f"{name} = rel_l2={res.rel_l2:.6f} corr0={res.corr_zero_lag:.6f} corr_peak={res.corr_peak:.6f} "
            f"lag=({res.peak_lag[0]},{res.peak_lag[1]}) phase_shift={res.phase_shift:.6f} amp_ratio={res.amp_ratio:.6f}"
        )
    return lines


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wavefio", description="Wave-packet evaluation of Fourier integral operators")
    parser.add_argument("command", choices=STAGES)
    parser.add_argument("--config", required=True, help="path to the experiment configuration")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--threads", type=int, default=0, help="numpy thread cap (0 = leave unchanged)")
    parser.add_argument("--stage-force", action="store_true", help="recompute even if the stage is up to date")
    parser.add_argument("--a", help="compare: first field artifact")
    parser.add_argument("--b", help="compare: second field artifact")
    args = parser.parse_args(argv)

    if args.threads > 0:
        import os

        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    try:
        cfg = load_config(args.config)
        np.random.seed(cfg.seed)
        out_root = Path(args.out)
        stage_dir = out_root / args.command
        stage_dir.mkdir(parents=True, exist_ok=True)
        if not args.stage_force and _stage_done(stage_dir, cfg):
            print(f"{args.command}: up to date (config hash {cfg.config_hash()})")
            return 0
        t_start = time.time()
        fn = {
            "tile": stage_tile,
            "trace": stage_trace,
            "caustics": stage_caustics,
            "prepare": stage_prepare,
            "apply": stage_apply,
            "fdref": stage_fdref,
        }
        if args.command == "compare":
            extra = stage_compare(cfg, stage_dir, args.a, args.b)
        else:
            extra = fn[args.command](cfg, stage_dir)
        _write_manifest(stage_dir, cfg, extra)
        # wall-clock timing kept outside the deterministic manifest
        (stage_dir / "timings.txt").write_text(f"{args.command} = {time.time() - t_start:.2f} s\n")
        print(f"{args.command}: done in {time.time() - t_start:.1f} s -> {stage_dir}")
        return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except UpstreamMissingError as err:
        print(f"upstream missing: {err}", file=sys.stderr)
        return 3
    except (NumericalError, WavefioError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
