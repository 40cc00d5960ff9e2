import numpy as np
import pytest

from wavefio import diffeo, frame
from wavefio.grids import SpatialGrid
from wavefio.hamilton import symplectic_form

from conftest import rel_l2

P_STD = diffeo.DiffeoParams(x0=(0.0, 0.0), xi0=(1.0, 0.0), alpha=1.0)
P_GEN = diffeo.DiffeoParams(x0=(0.3, -1.2), xi0=(0.6, 0.8), alpha=0.7)


def test_anchor_fixed_point():
    xt, kt = diffeo.apply_CQ(P_GEN, np.array(P_GEN.x0), np.array(P_GEN.xi0))
    assert np.allclose(xt, P_GEN.x0, atol=1e-14)
    assert np.allclose(kt, P_GEN.xi0, atol=1e-14)


def test_closed_form_examples():
    assert np.allclose(diffeo.apply_Q(P_STD, np.array([0.0, 1.0])), [-0.5, 1.0])
    xt, kt = diffeo.apply_CQ(P_STD, np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert np.allclose(xt, [-0.5, 1.0]) and np.allclose(kt, [1.0, 1.0])


def test_roundtrip_exact(rng):
    x = rng.uniform(-5, 5, (1000, 2))
    xi = rng.uniform(-3, 3, (1000, 2))
    assert np.max(np.abs(diffeo.apply_Q_inv(P_GEN, diffeo.apply_Q(P_GEN, x)) - x)) < 1e-13
    xt, kt = diffeo.apply_CQ(P_GEN, x, xi)
    xb, kb = diffeo.apply_CQ_inv(P_GEN, xt, kt)
    assert np.max(np.abs(xb - x)) < 1e-13
    assert np.max(np.abs(kb - xi)) < 1e-13


def test_cq_jacobian_symplectic(rng):
    # C_Q is quadratic, so central differences are exact up to roundoff
    j = symplectic_form()
    eps = 1e-2
    worst = 0.0
    for _ in range(200):
        z = rng.uniform(-4, 4, 4)
        cols = []
        for k in range(4):
            d = np.zeros(4)
            d[k] = eps
            xp, kp = diffeo.apply_CQ(P_GEN, z[:2] + d[:2], z[2:] + d[2:])
            xm, km = diffeo.apply_CQ(P_GEN, z[:2] - d[:2], z[2:] - d[2:])
            cols.append(np.concatenate([xp - xm, kp - km]) / (2 * eps))
        jac = np.stack(cols, axis=1)
        worst = max(worst, float(np.max(np.abs(jac.T @ j @ jac - j))))
    assert worst < 1e-12


def test_propagator_q_block_structure():
    # at the anchor transverse plane only the alpha*xi1 coupling survives
    pq, _ = diffeo.propagator_Q(P_STD, np.array([5.0, 0.0]), np.array([2.0, 0.3]))
    expected = np.eye(4)
    expected[3, 1] = 1.0 * 2.0
    assert np.allclose(pq, expected, atol=1e-14)


def test_propagator_q_symplectic_and_inverse(rng):
    j = symplectic_form()
    for _ in range(50):
        x = rng.uniform(-4, 4, 2)
        xi = rng.uniform(-3, 3, 2)
        pq, pqi = diffeo.propagator_Q(P_GEN, x, xi)
        assert np.max(np.abs(pq.T @ j @ pq - j)) < 1e-14
        assert np.max(np.abs(pq @ pqi - np.eye(4))) < 1e-13
        assert np.max(np.abs(pqi - np.linalg.inv(pq))) < 1e-12


def test_propagator_q_inv_batched_matches(rng):
    x = rng.uniform(-4, 4, (10, 2))
    xi = rng.uniform(-3, 3, (10, 2))
    xt, kt = diffeo.apply_CQ(P_GEN, x, xi)
    batched = diffeo.propagator_Q_inv_at(P_GEN, xt, kt)
    for i in range(10):
        _, pqi = diffeo.propagator_Q(P_GEN, x[i], xi[i])
        assert np.max(np.abs(batched[i] - pqi)) < 1e-13


@pytest.fixture(scope="module")
def packet_setup():
    grid = SpatialGrid(128, 25.6, (-12.8, 0.0))
    tiling = frame.build_tiling(grid, k_max=2, angular_constant=8.0)
    box = tiling.box_by_direction(2, (0.0, 1.0))
    phi = frame.synthesize_packet(tiling, box, np.array([0.0, 5.0]))
    u_hat = np.fft.fft2(phi).ravel()
    acc = np.zeros(grid.n * grid.n, dtype=complex)
    acc[box.support_flat] = u_hat[box.support_flat] * box.window**2
    u_box = np.fft.ifft2(acc.reshape(grid.n, grid.n))
    return grid, tiling, box, phi, u_box


def test_pullback_identity_limit(packet_setup):
    grid, tiling, box, phi, u_box = packet_setup
    p0 = diffeo.DiffeoParams(x0=(0.0, 5.0), xi0=(0.0, 1.0), alpha=1e-12)
    spec = frame.box_spectrum(phi, box, tiling)
    u_chk = diffeo.pullback(spec, p0, grid, 1e-8)
    assert rel_l2(u_chk, u_box) < 1e-7


def test_pullback_energy_preserved(packet_setup):
    grid, tiling, box, phi, u_box = packet_setup
    p = diffeo.DiffeoParams(x0=(0.0, 5.0), xi0=(0.0, 1.0), alpha=1.0)
    spec = frame.box_spectrum(phi, box, tiling)
    u_chk = diffeo.pullback(spec, p, grid, 1e-9)
    e_in = np.sum(np.abs(u_box) ** 2)
    e_out = np.sum(np.abs(u_chk) ** 2)
    assert abs(e_out - e_in) / e_in < 1e-6


def test_pullback_pushforward_roundtrip(packet_setup):
    grid, tiling, box, phi, u_box = packet_setup
    p = diffeo.DiffeoParams(x0=(0.0, 5.0), xi0=(0.0, 1.0), alpha=0.5)
    spec = frame.box_spectrum(phi, box, tiling)
    u_chk = diffeo.pullback(spec, p, grid, 1e-9)
    back = diffeo.push_forward(u_chk, p, grid, 1e-9)
    x1, x2 = grid.mesh()
    near = np.hypot(x1, x2 - 5.0) < 4.0
    err = np.linalg.norm((back - u_box)[near]) / np.linalg.norm(u_box[near])
    assert err < 1e-2


def test_redecompose_identity_selects_source_first(packet_setup):
    grid, tiling, box, phi, u_box = packet_setup
    coeffs, rep = diffeo.redecompose(u_box, tiling, box, eps_precision=5e-2, max_boxes=1)
    assert rep.selected_box_ids[0] == box.box_id
    assert rep.captured_fraction > 0.75
    assert rep.accounting_defect() < 1e-12


def test_redecompose_monotone_and_accounting(packet_setup):
    grid, tiling, box, phi, u_box = packet_setup
    p = diffeo.DiffeoParams(x0=(0.0, 5.0), xi0=(0.0, 1.0), alpha=1.0)
    spec = frame.box_spectrum(phi, box, tiling)
    u_chk = diffeo.pullback(spec, p, grid, 1e-8)
    x1, x2 = grid.mesh()
    near = np.hypot(x1, x2 - 5.0) < 3.0
    errs, caps = [], []
    for nb in (3, 7, 9):
        coeffs, rep = diffeo.redecompose(u_chk, tiling, box, eps_precision=1e-6, max_boxes=nb, chi_threshold=1e-3, diffeo=p)
        u_sel = frame.inverse_transform(coeffs, tiling)
        back = diffeo.push_forward(u_sel, p, grid, 1e-8)
        errs.append(np.linalg.norm((back - u_box)[near]) / np.linalg.norm(u_box[near]))
        caps.append(rep.captured_fraction)
        assert rep.accounting_defect() < 1e-12
    assert errs[0] > errs[1] > errs[2]
    assert caps[0] < caps[1] < caps[2]


def test_redecompose_selection_nonincreasing_in_precision(packet_setup):
    grid, tiling, box, phi, u_box = packet_setup
    p = diffeo.DiffeoParams(x0=(0.0, 5.0), xi0=(0.0, 1.0), alpha=1.0)
    spec = frame.box_spectrum(phi, box, tiling)
    u_chk = diffeo.pullback(spec, p, grid, 1e-8)
    counts = []
    for eps in (1e-6, 1e-2, 5e-2):
        _, rep = diffeo.redecompose(u_chk, tiling, box, eps_precision=eps, max_boxes=30, diffeo=p)
        counts.append(len(rep.selected_box_ids))
    assert counts[0] >= counts[1] >= counts[2]


def test_redecompose_zero_field(packet_setup):
    grid, tiling, box, _, _ = packet_setup
    coeffs, rep = diffeo.redecompose(np.zeros((grid.n, grid.n), complex), tiling, box)
    assert rep.selected_box_ids == []
