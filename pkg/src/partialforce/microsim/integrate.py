"""Fixed-step time integrators."""

import numpy as np


class IntegrationError(FloatingPointError):
    def __init__(self, message, step, rows=()):
        super().__init__(message)
        self.step = step
        self.rows = tuple(rows)


def _bad_rows(x):
    x2 = x.reshape(-1, x.shape[-1]) if x.ndim > 1 else x[None]
    return np.flatnonzero(~np.all(np.isfinite(x2), axis=-1))


def euler_step(f, x, dt):
    return x + dt * f(x)


def rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(state, rhs, dt, steps, scheme="rk4", stride=1):
    """Integrate ``dx/dt = rhs(x)`` with a fixed step and return snapshots.

    ``state`` may be a single state (N,) or a batch (B, N); the result has
    shape (steps // stride + 1, N) or (B, steps // stride + 1, N), starting
    with the initial state.  ``rhs`` is a callable, or a system object (its
    ``rhs`` method is used).  ``scheme="velocity_verlet"`` needs a system
    exposing ``verlet_step``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if stride < 1 or steps < 0:
        raise ValueError("steps must be >= 0 and stride >= 1")
    x = np.array(state, dtype=np.float64)
    if scheme == "velocity_verlet":
        if not hasattr(rhs, "verlet_step"):
            raise TypeError("velocity_verlet needs a system with verlet_step")
        step = rhs.verlet_step
        x = rhs.prepare_verlet(x)
    else:
        f = rhs.rhs if hasattr(rhs, "rhs") else rhs
        if scheme == "euler":
            def step(y, h):
                return euler_step(f, y, h)
        elif scheme == "rk4":
            def step(y, h):
                return rk4_step(f, y, h)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    snaps = [x.copy()]
    for k in range(1, steps + 1):
        x = step(x, dt)
        if k % stride == 0:
            if not np.all(np.isfinite(x)):
                bad = _bad_rows(x)
                raise IntegrationError(f"non-finite state at step {k} (rows {bad.tolist()})", k, bad)
            snaps.append(x.copy())
    if not np.all(np.isfinite(x)):
        bad = _bad_rows(x)
        raise IntegrationError(f"non-finite state at step {steps} (rows {bad.tolist()})", steps, bad)
    traj = np.stack(snaps, axis=0)
    return traj if traj.ndim == 2 else np.swapaxes(traj, 0, 1)
