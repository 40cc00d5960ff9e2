import numpy as np
import pytest

from wavefio.errors import NumericalError
from wavefio.nufft import SampledSpectrum, eval_adjoint


def brute(points, values, targets):
    return np.array([np.sum(values * np.exp(1j * (t @ points.T))) for t in np.atleast_2d(targets)])


def test_single_sample_exact(rng):
    xi0 = np.array([3.7, -1.2])
    s = SampledSpectrum(xi0[None, :], [1.0])
    tg = rng.uniform(-2, 2, (50, 2))
    g = eval_adjoint(s, tg, 1e-10)
    assert np.allclose(g, np.exp(1j * (tg @ xi0)), atol=1e-13)


def test_empty_spectrum():
    s = SampledSpectrum(np.zeros((0, 2)), np.zeros(0))
    g = eval_adjoint(s, np.zeros((7, 2)), 1e-6)
    assert g.shape == (7,) and np.all(g == 0)


def test_nonfinite_rejected():
    s = SampledSpectrum(np.array([[np.nan, 0.0]]), [1.0])
    with pytest.raises(NumericalError):
        eval_adjoint(s, np.zeros((1, 2)), 1e-6)


def test_tolerance_domain():
    s = SampledSpectrum(np.zeros((1, 2)), [1.0])
    for bad in (1e-1, 1e-15):
        with pytest.raises(ValueError):
            eval_adjoint(s, np.zeros((1, 2)), bad)


def test_grid_targets_match_idft(rng):
    # full-grid spectrum evaluated back on the regular grid = inverse DFT
    n, e = 32, 4.0
    u = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    u_hat = np.fft.fft2(u)
    q = np.fft.fftfreq(n, 1 / n).astype(int)
    q1, q2 = np.meshgrid(q, q, indexing="ij")
    pts = 2 * np.pi / e * np.stack([q1.ravel(), q2.ravel()], axis=1)
    vals = u_hat.ravel() / n**2
    x = e / n * np.arange(n)
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    tg = np.stack([x1.ravel(), x2.ravel()], axis=1)
    g = eval_adjoint(SampledSpectrum(pts, vals, period=e), tg, 1e-10)
    assert np.linalg.norm(g.reshape(n, n) - u) / np.linalg.norm(u) < 1e-10


def test_random_vs_dense_oracle(rng):
    pts = rng.uniform(-40, 40, (1000, 2))
    vals = rng.standard_normal(1000) + 1j * rng.standard_normal(1000)
    tg = rng.uniform(-3, 3, (1000, 2))
    g = eval_adjoint(SampledSpectrum(pts, vals), tg, 1e-10)
    ref = brute(pts, vals, tg[:20])
    assert np.max(np.abs(g[:20] - ref)) / np.max(np.abs(ref)) < 1e-10


def test_linearity(rng):
    pts = rng.uniform(-10, 10, (200, 2))
    a = rng.standard_normal(200) + 1j * rng.standard_normal(200)
    b = rng.standard_normal(200) + 1j * rng.standard_normal(200)
    tg = rng.uniform(-2, 2, (64, 2))
    ga = eval_adjoint(SampledSpectrum(pts, a), tg, 1e-8)
    gb = eval_adjoint(SampledSpectrum(pts, b), tg, 1e-8)
    gab = eval_adjoint(SampledSpectrum(pts, 2.0 * a + 1j * b), tg, 1e-8)
    assert np.allclose(gab, 2.0 * ga + 1j * gb, atol=1e-10 * np.max(np.abs(ga)))


def test_hermitian_symmetric_gives_real(rng):
    half = rng.uniform(0.5, 20, (300, 2))
    vals = rng.standard_normal(300) + 1j * rng.standard_normal(300)
    pts = np.vstack([half, -half])
    allv = np.concatenate([vals, np.conj(vals)])
    tg = rng.uniform(-2, 2, (128, 2))
    g = eval_adjoint(SampledSpectrum(pts, allv), tg, 1e-8)
    assert np.max(np.abs(g.imag)) < 1e-8 * np.max(np.abs(g))


@pytest.mark.parametrize("tol", [1e-6, 1e-10])
def test_error_bound_random_instances(tol):
    rng = np.random.default_rng(777)
    for trial in range(10):
        n_pts = rng.integers(50, 400)
        pts = rng.uniform(-50, 50, (n_pts, 2))
        vals = rng.standard_normal(n_pts) + 1j * rng.standard_normal(n_pts)
        tg = rng.uniform(-2, 2, (40, 2))
        g = eval_adjoint(SampledSpectrum(pts, vals), tg, tol)
        ref = brute(pts, vals, tg)
        assert np.max(np.abs(g - ref)) / np.max(np.abs(ref)) <= tol


@pytest.mark.parametrize("tol", [1e-6, 1e-10])
def test_gridded_path_error_bound(tol):
    rng = np.random.default_rng(99)
    e = 25.6
    for trial in range(10):
        q = np.unique(rng.integers(-128, 128, (2000, 2)), axis=0)
        pts = 2 * np.pi * q / e
        vals = rng.standard_normal(len(q)) + 1j * rng.standard_normal(len(q))
        tg = rng.uniform(-15, 15, (300, 2))
        g = eval_adjoint(SampledSpectrum(pts, vals, period=e), tg, tol, method="grid")
        ref = eval_adjoint(SampledSpectrum(pts, vals), tg, tol, method="direct")
        assert np.max(np.abs(g - ref)) / np.max(np.abs(ref)) <= tol


def test_output_order_matches_targets(rng):
    pts = rng.uniform(-5, 5, (50, 2))
    vals = rng.standard_normal(50) * (1 + 0j)
    tg = rng.uniform(-2, 2, (20, 2))
    g = eval_adjoint(SampledSpectrum(pts, vals), tg, 1e-8)
    g_rev = eval_adjoint(SampledSpectrum(pts, vals), tg[::-1], 1e-8)
    assert np.allclose(g, g_rev[::-1])
