import shutil
from pathlib import Path

import numpy as np
import pytest

from wavefio import cli
from wavefio.config import load_config
from wavefio.fgrid import read_fgrid, write_fgrid

TINY_CONFIG = """
[model]
c0 = 2.0
kappa = 0.0

[time]
t0 = 0.0
t1 = 1.5

[grid]
n = 64
extent = 12.8
origin = -6.4, 0.0

[tiling]
k_max = 2

[source]
k = 2
direction = 90
centers = 0.0, 3.0

[caustic]
delta_x = 0.5
delta_nu = 0.1
x_pad = 1.0

[boxalgo]
table_dx = 0.5
table_dy = 0.25
source_energy_tol = 5e-2
tail_pad = 2.0

[fd]
h = 0.1
cfl = 0.45

[compare]
radius = 2.0
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "exp.cfg"
    cfg_path.write_text(TINY_CONFIG)
    return root, cfg_path


def run(cfg_path, out, *args):
    return cli.main([*args, "--config", str(cfg_path), "--out", str(out)])


@pytest.fixture(scope="module")
def pipeline(workdir):
    root, cfg_path = workdir
    out = root / "out"
    for stage in ("tile", "trace", "caustics", "prepare", "apply", "fdref", "compare"):
        assert run(cfg_path, out, stage) == 0, stage
    return root, cfg_path, out


def test_config_parsing(workdir):
    _, cfg_path = workdir
    cfg = load_config(str(cfg_path))
    assert cfg.n == 64 and cfg.kappa == 0.0 and cfg.source_k == 2
    assert cfg.source_centers == [(0.0, 3.0)]


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[grid]\nn = 63\n")
    assert cli.main(["tile", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text("[fd]\ncfl = 0.9\n")
    assert cli.main(["tile", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["tile", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")]) == 2


def test_pipeline_artifacts(pipeline):
    _, _, out = pipeline
    assert (out / "tile" / "partition_sum.fgrid").exists()
    assert (out / "caustics" / "labels.fgrid").exists()
    assert (out / "prepare" / "prepared.pkl").exists()
    assert (out / "apply" / "packet00_total.fgrid").exists()
    assert (out / "fdref" / "packet00_reference.fgrid").exists()
    man = (out / "compare" / "manifest.txt").read_text()
    assert "corr0=" in man
    for stage in ("tile", "caustics", "prepare", "apply", "fdref", "compare"):
        text = (out / stage / "manifest.txt").read_text()
        for key in ("param.delta_nu", "param.delta_x", "param.alpha", "param.j_terms",
                    "param.eps_precision", "param.eps_kernel"):
            assert key in text, (stage, key)


def test_operator_matches_fd_tiny(pipeline):
    _, _, out = pipeline
    a, _ = read_fgrid(out / "apply" / "packet00_total.fgrid")
    b, _ = read_fgrid(out / "fdref" / "packet00_reference.fgrid")
    num = abs(np.vdot(b, a))
    den = np.linalg.norm(a) * np.linalg.norm(b)
    assert num / den > 0.95


def test_idempotent_and_deterministic(pipeline, capsys):
    root, cfg_path, out = pipeline
    assert run(cfg_path, out, "tile") == 0
    assert "up to date" in capsys.readouterr().out
    before = (out / "tile" / "partition_sum.fgrid").read_bytes()
    manifest_before = (out / "tile" / "manifest.txt").read_bytes()
    assert run(cfg_path, out, "tile", "--stage-force") == 0
    assert (out / "tile" / "partition_sum.fgrid").read_bytes() == before
    assert (out / "tile" / "manifest.txt").read_bytes() == manifest_before


def test_compare_identical_fields(pipeline):
    root, cfg_path, out = pipeline
    src = out / "apply" / "packet00_total.fgrid"
    assert cli.main(["compare", "--config", str(cfg_path), "--out", str(out),
                     "--a", str(src), "--b", str(src), "--stage-force"]) == 0
    man = (out / "compare" / "manifest.txt").read_text()
    line = [l for l in man.splitlines() if l.startswith("custom")][0]
    assert "rel_l2=0.000000" in line and "lag=(0,0)" in line


def test_missing_upstream_exit_code(workdir, tmp_path):
    _, cfg_path = workdir
    assert cli.main(["apply", "--config", str(cfg_path), "--out", str(tmp_path / "fresh")]) == 3


def test_fgrid_roundtrip(tmp_path, rng):
    arr = rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7))
    path = tmp_path / "x.fgrid"
    write_fgrid(path, arr, {"alpha": 1.5, "note": "test"})
    back, meta = read_fgrid(path)
    assert np.array_equal(back, arr)
    assert meta["alpha"] == "1.5" and meta["note"] == "test"
    real = rng.standard_normal((3, 3, 3))
    write_fgrid(path, real, {})
    back, _ = read_fgrid(path)
    assert np.array_equal(back, real)
