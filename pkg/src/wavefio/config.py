"""Experiment configuration: sectioned key = value files, validated."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .grids import SpatialGrid
from .operator import OperatorParams
from .symbols import LensModel


def _parse_pair(text: str, where: str):
    try:
        a, b = (float(v) for v in text.split(","))
        return (a, b)
    except Exception as exc:
        raise ConfigError(f"{where}: expected 'x, y', got {text!r}") from exc


def _parse_int_map(text: str, where: str) -> dict:
    out = {}
    if not text.strip():
        return out
    try:
        for part in text.split(","):
            k, v = part.split(":")
            out[int(k)] = int(v)
    except Exception as exc:
        raise ConfigError(f"{where}: expected 'k:v, k:v', got {text!r}") from exc
    return out


@dataclass
class ExperimentConfig:
    """Typed view of the configuration file; see configs/ for examples."""

    c0: float = 2.0
    kappa: float = -0.4
    sigma: float = 3.0
    xc: tuple = (0.0, 14.0)
    t0: float = 0.0
    t1: float = 7.0
    n: int = 256
    extent: float = 25.6
    origin: tuple = (-12.8, 0.0)
    k_max: int = 4
    angular_constant: float = 8.0
    orientation_counts: dict = field(default_factory=dict)
    source_k: int = 3
    source_direction_deg: float = 90.0
    source_centers: list = field(default_factory=lambda: [(0.0, 5.0)])
    delta_x: float = 0.25
    delta_nu: float = 0.04
    rank_tol: float = 1e-6
    dilation: int = 1
    x_quantile: float = 0.98
    x_pad: float = 1.5
    theta_pad: float = 0.35
    anchors: list | None = None  # [(x0, xi0, alpha)] or None for auto
    alpha: float | None = None
    max_boxes: dict = field(default_factory=lambda: {2: 9, 3: 11, 4: 11})
    eps_precision: float = 1e-2
    chi_threshold: float = 1e-3
    renormalize: bool = True
    j_terms: dict = field(default_factory=dict)
    j0: int = 1
    overlap_cells: float = 3.0
    eps_trunc: float = 1e-8
    margin: float = 0.1
    eps_kernel: float = 1e-5
    table_dy: float = 0.2
    table_dx: float = 0.25
    ray_rtol: float = 1e-7
    newton_iters: int = 2
    nufft_tol: float = 1e-8
    source_energy_tol: float = 1e-2
    tail_pad: float = 4.0
    fd_h: float = 0.05
    fd_cfl: float = 0.45
    fd_order: int = 4
    fd_sponge: int = 20
    compare_radius: float = 2.5
    compare_max_lag: int = 8
    seed: int = 1234

    def grid(self) -> SpatialGrid:
        return SpatialGrid(self.n, self.extent, tuple(self.origin))

    def model(self) -> LensModel:
        return LensModel(c0=self.c0, kappa=self.kappa, sigma=self.sigma, xc=tuple(self.xc))

    def operator_params(self) -> OperatorParams:
        return OperatorParams(
            delta_x=self.delta_x,
            delta_nu=self.delta_nu,
            rank_tol=self.rank_tol,
            dilation=self.dilation,
            margin=self.margin,
            overlap_cells=self.overlap_cells,
            eps_trunc=self.eps_trunc,
            anchors=self.anchors,
            alpha=self.alpha,
            eps_precision=self.eps_precision,
            max_boxes=dict(self.max_boxes),
            chi_threshold=self.chi_threshold,
            renormalize=self.renormalize,
            table_dy=self.table_dy,
            table_dx=self.table_dx,
            ray_rtol=self.ray_rtol,
            newton_iters=self.newton_iters,
            eps_kernel=self.eps_kernel,
            j_terms=dict(self.j_terms),
            j0=self.j0,
            nufft_tol=self.nufft_tol,
            source_energy_tol=self.source_energy_tol,
            x_pad=self.x_pad,
            x_quantile=self.x_quantile,
            theta_pad=self.theta_pad,
            tail_pad=self.tail_pad,
        )

    def echo_lines(self) -> list[str]:
        """Deterministic flat echo of every parameter (manifest content)."""
        out = []
        for key in sorted(vars(self)):
            val = getattr(self, key)
            if isinstance(val, float):
                val = repr(val)
            out.append(f"{key} = {val}")
        return out

    def config_hash(self) -> str:
        return hashlib.sha256("\n".join(self.echo_lines()).encode()).hexdigest()[:16]


def load_config(path_or_text: str, is_text: bool = False) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        if is_text:
            cp.read_file(io.StringIO(path_or_text))
        else:
            with open(path_or_text) as f:
                cp.read_file(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path_or_text}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    cfg = ExperimentConfig()

    def grab(section, key, cast, attr=None, required=False):
        if cp.has_option(section, key):
            raw = cp.get(section, key)
            try:
                val = cast(raw)
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc
            setattr(cfg, attr or key, val)
        elif required:
            raise ConfigError(f"[{section}] missing required key {key}")

    grab("model", "c0", float)
    grab("model", "kappa", float)
    grab("model", "sigma", float)
    grab("model", "xc", lambda s: _parse_pair(s, "[model] xc"))
    grab("time", "t0", float)
    grab("time", "t1", float)
    grab("grid", "n", int)
    grab("grid", "extent", float)
    grab("grid", "origin", lambda s: _parse_pair(s, "[grid] origin"))
    grab("tiling", "k_max", int)
    grab("tiling", "angular_constant", float)
    grab("tiling", "orientation_counts", lambda s: _parse_int_map(s, "[tiling] orientation_counts"))
    grab("source", "k", int, "source_k")
    grab("source", "direction", float, "source_direction_deg")

    def centers(s):
        return [_parse_pair(p, "[source] centers") for p in s.split(";") if p.strip()]

    grab("source", "centers", centers, "source_centers")
    grab("caustic", "delta_x", float)
    grab("caustic", "delta_nu", float)
    grab("caustic", "rank_tol", float)
    grab("caustic", "dilation", int)
    grab("caustic", "x_quantile", float)
    grab("caustic", "x_pad", float)
    grab("caustic", "theta_pad", float)

    def anchors(s):
        if s.strip().lower() == "auto":
            return None
        out = []
        for part in s.split(";"):
            if not part.strip():
                continue
            try:
                pos, ang, al = part.split("@")
                x0 = _parse_pair(pos, "[diffeo] anchors")
                th = np.radians(float(ang))
                out.append((x0, (float(np.cos(th)), float(np.sin(th))), float(al)))
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"[diffeo] anchors: expected 'x,y @ deg @ alpha', got {part!r}") from exc
        return out

    grab("diffeo", "anchors", anchors)
    grab("diffeo", "alpha", float)
    grab("diffeo", "max_boxes", lambda s: _parse_int_map(s, "[diffeo] max_boxes"))
    grab("diffeo", "eps_precision", float)
    grab("diffeo", "chi_threshold", float)
    grab("diffeo", "renormalize", lambda s: s.strip().lower() in ("1", "true", "yes"))
    grab("partition", "j_terms", lambda s: _parse_int_map(s, "[partition] j_terms"))
    grab("partition", "j0", int)
    grab("partition", "overlap_cells", float)
    grab("partition", "eps_trunc", float)
    grab("partition", "margin", float)
    grab("boxalgo", "eps_kernel", float)
    grab("boxalgo", "table_dy", float)
    grab("boxalgo", "table_dx", float)
    grab("boxalgo", "ray_rtol", float)
    grab("boxalgo", "newton_iters", int)
    grab("boxalgo", "nufft_tol", float)
    grab("boxalgo", "source_energy_tol", float)
    grab("boxalgo", "tail_pad", float)
    grab("fd", "h", float, "fd_h")
    grab("fd", "cfl", float, "fd_cfl")
    grab("fd", "order", int, "fd_order")
    grab("fd", "sponge_width", int, "fd_sponge")
    grab("compare", "radius", float, "compare_radius")
    grab("compare", "max_lag", int, "compare_max_lag")
    grab("run", "seed", int)

    # validation with field-level messages
    if cfg.n < 8 or (cfg.n & (cfg.n - 1)) != 0:
        raise ConfigError("[grid] n must be a power of two >= 8")
    if cfg.t1 <= cfg.t0:
        raise ConfigError("[time] t1 must exceed t0")
    if cfg.k_max < 1:
        raise ConfigError("[tiling] k_max must be >= 1")
    if not (1 <= cfg.source_k <= cfg.k_max):
        raise ConfigError("[source] k must lie in [1, k_max]")
    if cfg.fd_cfl > 0.7:
        raise ConfigError("[fd] cfl must be <= 0.7")
    if not (1e-8 < cfg.eps_precision < 1e-1):
        raise ConfigError("[diffeo] eps_precision must lie in (1e-8, 1e-1)")
    if cfg.c0 + min(0.0, cfg.kappa) <= 0:
        raise ConfigError("[model] velocity must stay positive")
    return cfg
