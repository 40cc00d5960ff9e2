"""Hamilton system and propagator-matrix ODE for c(y)|eta| symbols.

Rays and the 4x4 perturbation system

    dPi/dt = [[p_eta_y, p_eta_eta], [-p_yy, -p_y_eta]] Pi,   Pi(t0) = I

are integrated with classical RK4 and step-halving error control, batched
over initial conditions.  The Fermi (ray-centered) view is obtained by
rotating the Cartesian solution with the instantaneous frame (nu, nu_perp).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

CARTESIAN = "cartesian"
FERMI = "fermi"

_J = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])


def symplectic_form() -> np.ndarray:
    return _J.copy()


@dataclass
class RayBundle:
    """Endpoint state of a batch of rays plus recorded diagnostics."""

    y: np.ndarray  # (B, 2) endpoint positions
    eta: np.ndarray  # (B, 2) endpoint momenta
    t0: float
    t1: float
    pi: np.ndarray | None = None  # (B, 4, 4) propagator, Cartesian frame
    times: np.ndarray | None = None  # (S,) sample times of the recorded series
    det_w1: np.ndarray | None = None  # (B, S) det of dy/dx along rays
    path: np.ndarray | None = None  # (B, S, 2) positions, when recorded
    eta_path: np.ndarray | None = None  # (B, S, 2) momenta, when recorded
    pi_series: np.ndarray | None = None  # (B, S, 4, 4) recorded propagators
    escaped: np.ndarray | None = None  # (B,) rays that left the given bounds
    n_steps: int = 0

    def w_blocks(self):
        p = self.pi
        return p[:, :2, :2], p[:, :2, 2:], p[:, 2:, :2], p[:, 2:, 2:]


def _rhs(model, y, eta):
    """Time derivatives (dy, deta) for the Hamilton system."""
    speed = model.c(y)
    mag = np.linalg.norm(eta, axis=-1, keepdims=True)
    nu = eta / mag
    return speed[..., None] * nu, -mag * model.grad_c(y)


def _rhs_prop(model, y, eta, pi):
    """Right-hand side of the perturbation ODE, dPi = M(t) Pi."""
    speed = model.c(y)
    grad = model.grad_c(y)
    hess = model.hess_c(y)
    mag = np.linalg.norm(eta, axis=-1, keepdims=True)
    nu = eta / mag
    eye = np.eye(2)[None]
    proj = eye - nu[:, :, None] * nu[:, None, :]
    m = np.empty((len(y), 4, 4))
    m[:, :2, :2] = nu[:, :, None] * grad[:, None, :]  # d^2 p / d eta d y
    m[:, :2, 2:] = speed[:, None, None] * proj / mag[:, :, None]  # d^2 p / d eta^2
    m[:, 2:, :2] = -mag[:, :, None] * hess  # -d^2 p / d y^2
    m[:, 2:, 2:] = -grad[:, :, None] * nu[:, None, :]  # -d^2 p / d y d eta
    return m @ pi


def _integrate(model, x, xi, t0, t1, n_steps, with_pi, record_every=0, record_pi=False):
    y = np.array(x, dtype=float)
    eta = np.array(xi, dtype=float)
    pi = np.broadcast_to(np.eye(4), (len(y), 4, 4)).copy() if with_pi else None
    dt = (t1 - t0) / n_steps
    rec_t, rec_det, rec_path, rec_eta, rec_pi = [], [], [], [], []

    def record(t):
        rec_t.append(t)
        if with_pi:
            w1 = pi[:, :2, :2]
            rec_det.append(w1[:, 0, 0] * w1[:, 1, 1] - w1[:, 0, 1] * w1[:, 1, 0])
            if record_pi:
                rec_pi.append(pi.copy())
        rec_path.append(y.copy())
        rec_eta.append(eta.copy())

    if record_every:
        record(t0)
    for i in range(n_steps):
        k1y, k1e = _rhs(model, y, eta)
        k2y, k2e = _rhs(model, y + 0.5 * dt * k1y, eta + 0.5 * dt * k1e)
        k3y, k3e = _rhs(model, y + 0.5 * dt * k2y, eta + 0.5 * dt * k2e)
        k4y, k4e = _rhs(model, y + dt * k3y, eta + dt * k3e)
        if with_pi:
            p1 = _rhs_prop(model, y, eta, pi)
            p2 = _rhs_prop(model, y + 0.5 * dt * k1y, eta + 0.5 * dt * k1e, pi + 0.5 * dt * p1)
            p3 = _rhs_prop(model, y + 0.5 * dt * k2y, eta + 0.5 * dt * k2e, pi + 0.5 * dt * p2)
            p4 = _rhs_prop(model, y + dt * k3y, eta + dt * k3e, pi + dt * p3)
            pi = pi + dt / 6.0 * (p1 + 2.0 * p2 + 2.0 * p3 + p4)
        y = y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        eta = eta + dt / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e)
        if record_every and ((i + 1) % record_every == 0 or i == n_steps - 1):
            record(t0 + (i + 1) * dt)

    times = np.array(rec_t) if record_every else None
    det = np.array(rec_det).T if (record_every and with_pi) else None
    path = np.swapaxes(np.array(rec_path), 0, 1) if record_every else None
    eta_path = np.swapaxes(np.array(rec_eta), 0, 1) if record_every else None
    pis = np.swapaxes(np.array(rec_pi), 0, 1) if (record_every and with_pi and record_pi) else None
    return y, eta, pi, times, det, path, eta_path, pis


def _solve(model, x, xi, t0, t1, rtol, with_pi, record=False, bounds=None, max_halvings=8, record_pi=False, fixed_steps=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if np.any(np.linalg.norm(xi, axis=-1) == 0):
        raise ValueError("xi must be nonzero")
    if not (1e-12 < rtol < 1e-4):
        raise ValueError("rtol must lie in (1e-12, 1e-4)")
    if t1 == t0:
        pi = np.broadcast_to(np.eye(4), (len(x), 4, 4)).copy() if with_pi else None
        return RayBundle(y=x.copy(), eta=xi.copy(), t0=t0, t1=t1, pi=pi, n_steps=0)

    if fixed_steps is not None:
        n = int(fixed_steps)
        cur = _integrate(model, x, xi, t0, t1, n, with_pi)
    else:
        span = abs(t1 - t0)
        n = max(32, int(16 * span))
        prev = _integrate(model, x, xi, t0, t1, n, with_pi)
        for _ in range(max_halvings):
            n *= 2
            cur = _integrate(model, x, xi, t0, t1, n, with_pi)
            scale = 1.0 + np.linalg.norm(cur[0], axis=-1) + np.linalg.norm(cur[1], axis=-1)
            err = (np.linalg.norm(cur[0] - prev[0], axis=-1) + np.linalg.norm(cur[1] - prev[1], axis=-1)) / scale
            if with_pi:
                err = err + np.max(np.abs(cur[2] - prev[2]), axis=(1, 2)) / (1.0 + np.max(np.abs(cur[2]), axis=(1, 2)))
            if float(np.max(err)) < rtol:
                break
            prev = cur
        else:
            raise NumericalError(f"ray integration did not reach rtol={rtol} within {n} steps")

    rec = max(1, n // 256) if record else 0
    if record:
        y, eta, pi, times, det, path, eta_path, pis = _integrate(model, x, xi, t0, t1, n, with_pi, record_every=rec, record_pi=record_pi)
    else:
        y, eta, pi, times, det, path, eta_path, pis = cur[0], cur[1], cur[2], None, None, None, None, None

    escaped = None
    if bounds is not None:
        (lo1, hi1), (lo2, hi2) = bounds
        escaped = (y[:, 0] < lo1) | (y[:, 0] > hi1) | (y[:, 1] < lo2) | (y[:, 1] > hi2)
    return RayBundle(
        y=y, eta=eta, t0=t0, t1=t1, pi=pi, times=times, det_w1=det, path=path, eta_path=eta_path,
        pi_series=pis, escaped=escaped, n_steps=n,
    )


def flow(model, x, xi, t0: float, t1: float, rtol: float = 1e-9, record: bool = False, bounds=None, fixed_steps=None) -> RayBundle:
    """Integrate the Hamilton system from (x, xi) at t0 to t1 (batched)."""
    return _solve(model, x, xi, t0, t1, rtol, with_pi=False, record=record, bounds=bounds, fixed_steps=fixed_steps)


def propagator(
    model,
    x,
    xi,
    t0: float,
    t1: float,
    rtol: float = 1e-9,
    frame: str = CARTESIAN,
    record: bool = False,
    bounds=None,
    record_pi: bool = False,
) -> RayBundle:
    """Integrate rays together with the 4x4 propagator matrix Pi.

    In the Fermi frame the returned pi is rotated block-wise with the
    instantaneous direction frames at t1 (left) and t0 (right), so transverse
    rank deficiencies of W1 show up in the second row/column.
    """
    bundle = _solve(model, x, xi, t0, t1, rtol, with_pi=True, record=record, bounds=bounds, record_pi=record_pi)
    if frame == FERMI:
        xi0 = np.atleast_2d(np.asarray(xi, dtype=float))
        bundle.pi = fermi_rotate(bundle.pi, xi0, bundle.eta)
    elif frame != CARTESIAN:
        raise ValueError("frame must be 'cartesian' or 'fermi'")
    return bundle


def fermi_rotate(pi: np.ndarray, eta0: np.ndarray, eta1: np.ndarray) -> np.ndarray:
    """Rotate Cartesian propagator blocks into ray-centered coordinates."""

    def frame_of(eta):
        nu = eta / np.linalg.norm(eta, axis=-1, keepdims=True)
        g = np.empty((len(nu), 2, 2))
        g[:, 0, :] = nu
        g[:, 1, 0] = -nu[:, 1]
        g[:, 1, 1] = nu[:, 0]
        return g

    g0 = frame_of(np.atleast_2d(eta0))
    g1 = frame_of(np.atleast_2d(eta1))
    out = np.empty_like(pi)
    for (i, j) in ((0, 0), (0, 1), (1, 0), (1, 1)):
        blk = pi[:, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
        out[:, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2] = g1 @ blk @ np.swapaxes(g0, 1, 2)
    return out


def backward(model, y, xi, t1: float, t0: float, rtol: float = 1e-9) -> np.ndarray:
    """Backward solution: integrate from terminal data (y, xi) at t1 down to t0.

    Returns the position x(y, xi; t0, t1).  Degree-1 homogeneity of the
    symbol makes the result independent of |xi|.
    """
    bundle = _solve(model, y, xi, t1, t0, rtol, with_pi=False)
    return bundle.y


def symplectic_defect(pi: np.ndarray) -> np.ndarray:
    """Max-norm of Pi^T J Pi - J per batch element."""
    val = np.swapaxes(pi, -1, -2) @ _J @ pi - _J
    return np.max(np.abs(val), axis=(-2, -1))
