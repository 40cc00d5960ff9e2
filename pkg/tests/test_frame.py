import numpy as np
import pytest

from wavefio import frame
from wavefio.errors import NumericalError
from wavefio.grids import SpatialGrid

from conftest import rel_l2


def random_field(grid, rng):
    return rng.standard_normal((grid.n, grid.n)) + 1j * rng.standard_normal((grid.n, grid.n))


def test_copartition_identity(tiling64):
    assert np.max(np.abs(tiling64.partition_sum() - 1.0)) < 1e-12


def test_orientation_counts(grid256):
    t = frame.build_tiling(grid256, k_max=3, angular_constant=8.0)
    # ~ angular_constant * 2^(k/2) orientations per scale
    for k in (1, 2, 3):
        assert t.orientations_per_scale[k] == int(round(8.0 * 2 ** (k / 2)))
    assert t.orientations_per_scale[3] == 23


def test_kmax_too_large_rejected():
    g = SpatialGrid(16, 1.0)
    with pytest.raises(NumericalError, match="Nyquist"):
        frame.build_tiling(g, k_max=4)


def test_roundtrip_white_noise(grid64, tiling64, rng):
    u = random_field(grid64, rng)
    u2 = frame.inverse_transform(frame.forward_transform(u, tiling64), tiling64)
    assert rel_l2(u2, u) < 1e-10


def test_forward_zero(tiling64, grid64):
    c = frame.forward_transform(np.zeros((grid64.n, grid64.n), dtype=complex), tiling64)
    assert all(np.all(a == 0) for a in c.arrays)


def test_forward_single_packet_concentrates(tiling64, grid64):
    box = tiling64.box_by_direction(2, (1.0, 0.0))
    phi = frame.synthesize_packet(tiling64, box, np.array([0.0, 6.4]))
    c = frame.forward_transform(phi, tiling64)
    energies = c.energy_by_box()
    assert int(np.argmax(energies)) == box.box_id
    # own-box energy dominates any other single box
    others = np.delete(energies, box.box_id)
    assert energies[box.box_id] > 2.0 * np.max(others)


def test_inverse_zero_and_missing_boxes(tiling64, grid64, rng):
    c = frame.forward_transform(random_field(grid64, rng), tiling64)
    z = c.copy_zero()
    assert np.all(frame.inverse_transform(z, tiling64) == 0)
    # missing boxes treated as zero
    c.arrays[3] = None
    out = frame.inverse_transform(c, tiling64)
    assert np.all(np.isfinite(out))


def test_single_box_band_limited(tiling64, grid64, rng):
    u = random_field(grid64, rng)
    c = frame.forward_transform(u, tiling64)
    keep = tiling64.directional_boxes(2)[3].box_id
    only = c.copy_zero()
    only.arrays[keep] = c.arrays[keep]
    field = frame.inverse_transform(only, tiling64)
    spec = np.abs(np.fft.fft2(field).ravel())
    box = tiling64.boxes[keep]
    mask = np.zeros(grid64.n**2, dtype=bool)
    mask[box.support_flat] = True
    assert np.max(spec[~mask]) < 1e-12 * np.max(spec)


def test_box_spectrum_disjoint_and_peak(tiling64, grid64):
    n = grid64.n
    box = tiling64.box_by_direction(1, (0.0, 1.0))
    # plane wave at the box's center frequency bin
    qc = box.q_support[np.argmax(box.window)]
    x1, x2 = grid64.mesh()
    xi = grid64.angular_freq(qc)
    u = np.exp(1j * ((x1 - grid64.origin[0]) * xi[0] + (x2 - grid64.origin[1]) * xi[1]))
    s = frame.box_spectrum(u, box, tiling64)
    peak = np.argmax(np.abs(s.values))
    assert np.allclose(s.points[peak], xi)
    # peak value = chi*beta at center * u_hat, in field-synthesis normalization
    expected = np.max(box.window) ** 2 * np.exp(-1j * (xi @ np.asarray(grid64.origin)))
    assert np.abs(s.values[peak] - expected) < 1e-12
    # disjoint box sees nothing
    far = tiling64.box_by_direction(1, (0.0, -1.0))
    s2 = frame.box_spectrum(u, far, tiling64)
    assert np.max(np.abs(s2.values)) < 1e-14


def test_box_spectra_sum_reconstructs(tiling64, grid64, rng):
    u = random_field(grid64, rng)
    n = grid64.n
    acc = np.zeros(n * n, dtype=complex)
    u_hat = np.fft.fft2(u).ravel()
    for b in tiling64.boxes:
        acc[b.support_flat] += u_hat[b.support_flat] * b.window**2
    assert rel_l2(np.fft.ifft2(acc.reshape(n, n)), u) < 1e-12


def test_parabolic_scaling(tiling256):
    for k in (1, 2):
        b_lo = tiling256.directional_boxes(k)[0]
        b_hi = tiling256.directional_boxes(k + 1)[0]
        assert 1.8 <= b_hi.length_parallel / b_lo.length_parallel <= 2.2
        assert 1.3 <= b_hi.length_perp / b_lo.length_perp <= 1.5


def test_dilation_volume_invariant(tiling64):
    for b in tiling64.boxes:
        assert np.isclose(np.linalg.det(b.dilation), b.volume / (2 * np.pi) ** 2)


def test_packet_decay_monotone(tiling64, grid64):
    box = tiling64.box_by_direction(2, (0.0, 1.0))
    center = np.array([0.0, 6.4])
    phi = frame.synthesize_packet(tiling64, box, center)
    x1, x2 = grid64.mesh()
    along = np.abs((x1 - center[0]) * box.orientation[0] + (x2 - center[1]) * box.orientation[1])
    radial = np.hypot(x1 - center[0], x2 - center[1])
    total = np.sum(np.abs(phi) ** 2)
    fracs = []
    for c in (5.0, 10.0, 20.0):
        outside = (along * box.length_parallel + radial * box.length_perp) > c
        fracs.append(np.sum(np.abs(phi[outside]) ** 2) / total)
    assert fracs[0] > fracs[1] > fracs[2]


def test_roundtrip_many_fields(grid64, tiling64, rng):
    worst = 0.0
    for _ in range(20):
        u = random_field(grid64, rng)
        u2 = frame.inverse_transform(frame.forward_transform(u, tiling64), tiling64)
        worst = max(worst, rel_l2(u2, u))
    assert worst < 1e-10
