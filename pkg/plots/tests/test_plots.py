import struct
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fgridplots.fgrid import read_fgrid
from fgridplots.figures import render_all

PIPELINE_CONFIG = """
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


def write_fgrid_raw(path, array, metadata):
    """Test-local writer following the documented container layout."""
    arr = np.ascontiguousarray(array)
    arr = arr.astype("<c16") if np.iscomplexobj(arr) else arr.astype("<f8")
    code = 1 if arr.dtype == np.dtype("<c16") else 0
    meta = "\n".join(f"{k} = {v}" for k, v in metadata.items()).encode()
    with open(path, "wb") as f:
        f.write(b"FGRD")
        f.write(struct.pack("<HBB", 1, code, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes(order="C"))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    """Run the producing pipeline once through its public CLI."""
    root = tmp_path_factory.mktemp("pipeline")
    cfg = root / "exp.cfg"
    cfg.write_text(PIPELINE_CONFIG)
    out = root / "out"
    for stage in ("tile", "trace", "caustics", "prepare", "apply", "fdref", "compare"):
        proc = subprocess.run(
            [sys.executable, "-m", "wavefio.cli", stage, "--config", str(cfg), "--out", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, (stage, proc.stderr)
    return out


def test_reader_roundtrip(tmp_path):
    arr = np.arange(12.0).reshape(3, 4) + 1j
    write_fgrid_raw(tmp_path / "a.fgrid", arr, {"extent": 1.0})
    back, meta = read_fgrid(tmp_path / "a.fgrid")
    assert np.array_equal(back, arr)
    assert meta["extent"] == "1.0"


def test_reader_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.fgrid"
    bad.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValueError, match="not an fgrid"):
        read_fgrid(bad)


def test_renders_all_figures(pipeline_run, tmp_path):
    out = tmp_path / "figs"
    written = render_all(pipeline_run, out)
    assert len(written) == 6
    for path in written:
        assert path.exists() and path.stat().st_size > 2000


def test_pixel_deterministic(pipeline_run, tmp_path):
    out1 = tmp_path / "f1"
    out2 = tmp_path / "f2"
    w1 = render_all(pipeline_run, out1)
    w2 = render_all(pipeline_run, out2)
    for p1, p2 in zip(w1, w2):
        assert p1.read_bytes() == p2.read_bytes()


def test_missing_artifacts_fail_cleanly(tmp_path):
    with pytest.raises(FileNotFoundError):
        render_all(tmp_path / "empty_run", tmp_path / "figs", names=["rays"])


def test_cli_entry(pipeline_run, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "fgridplots.cli", "--run", str(pipeline_run), "--out", str(tmp_path / "f"),
         "--figures", "compare,packets"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "f" / "packet00_compare.png").exists()
