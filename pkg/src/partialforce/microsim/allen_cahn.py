"""2-D Allen-Cahn phase field on the unit square with zero-flux walls.

The grid is cell-centred with spacing h = 1/G and the state is the
row-major flattening of the G x G field.  The Laplacian copies the edge
value into a ghost cell, which makes the discrete flow an exact gradient
flow of the discrete free energy returned by ``observable``:

    rhs(v) = -(1/h^2) dE_h/dv.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .base import MicroSystem, ParameterError, as_batch

R1_RANGE = (0.3, 0.4)
R2_RANGE = (0.1, 0.15)


def default_epsilon(grid):
    """Interface parameter giving a transition layer of about ten cells."""
    return 10.0 / (grid * 2.0 * math.sqrt(2.0) * math.atanh(0.9))


@dataclass(frozen=True)
class AcParams:
    grid: int = 64
    epsilon: float = None
    dt: float = None
    t_max: float = 1.0
    equilibrium_tol: float = 1e-4

    def __post_init__(self):
        if self.grid < 8:
            raise ParameterError("Allen-Cahn grid needs at least 8 cells per side")
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", default_epsilon(self.grid))
        if self.dt is None:
            # explicit RK4 and Euler both stay stable below ~0.24 h^2 here
            object.__setattr__(self, "dt", 0.2 / self.grid**2)
        if self.epsilon <= 0 or self.dt <= 0:
            raise ParameterError("epsilon and dt must be positive")

    @property
    def h(self):
        return 1.0 / self.grid


class AllenCahn(MicroSystem):
    kind = "allen_cahn"
    m = 1
    d_star = 1

    def __init__(self, params=None, **kw):
        self.params = params if params is not None else AcParams(**kw)
        g = self.params.grid
        self.grid = g
        self.n = g * g
        i, j = np.divmod(np.arange(self.n), g)
        self._up = np.maximum(i - 1, 0) * g + j
        self._down = np.minimum(i + 1, g - 1) * g + j
        self._left = i * g + np.maximum(j - 1, 0)
        self._right = i * g + np.minimum(j + 1, g - 1)
        self._inv_h2 = float(g * g)
        self._inv_eps2 = 1.0 / self.params.epsilon**2
        c = (np.arange(g) + 0.5) / g
        self.xc, self.yc = np.meshgrid(c, c, indexing="ij")

    def params_dict(self):
        return asdict(self.params)

    def _lap_react(self, v, vu, vd, vl, vr):
        return (vu + vd + vl + vr - 4.0 * v) * self._inv_h2 - self._inv_eps2 * (v * v * v - v)

    def rhs(self, x):
        xb, single = as_batch(x)
        out = self._lap_react(
            xb, xb[:, self._up], xb[:, self._down], xb[:, self._left], xb[:, self._right]
        )
        return out[0] if single else out

    def partial_rhs(self, x, idx):
        xb, single = as_batch(x)
        idx = self._check_mask(idx)
        idx_b = np.broadcast_to(idx, (xb.shape[0], idx.shape[-1]))

        def take(j):
            return np.take_along_axis(xb, j, axis=1)

        out = self._lap_react(
            take(idx_b),
            take(self._up[idx_b]),
            take(self._down[idx_b]),
            take(self._left[idx_b]),
            take(self._right[idx_b]),
        )[..., None]
        return out[0] if single and idx.ndim == 1 else out

    def energy(self, x):
        return self.observable(x)[0][..., 0]

    def observable(self, x):
        """Discrete free energy and its exact gradient."""
        xb, single = as_batch(x)
        g = self.grid
        h2 = 1.0 / self._inv_h2
        v = xb.reshape(-1, g, g)
        dv_i = np.diff(v, axis=1)
        dv_j = np.diff(v, axis=2)
        bulk = 0.25 * (v * v - 1.0) ** 2
        e = h2 * self._inv_eps2 * bulk.sum(axis=(1, 2)) + 0.5 * (
            (dv_i**2).sum(axis=(1, 2)) + (dv_j**2).sum(axis=(1, 2))
        )
        grad = h2 * self._inv_eps2 * (v**3 - v)
        grad[:, :-1, :] -= dv_i
        grad[:, 1:, :] += dv_i
        grad[:, :, :-1] -= dv_j
        grad[:, :, 1:] += dv_j
        z = e[:, None]
        jac = grad.reshape(xb.shape[0], 1, self.n)
        return (z[0], jac[0]) if single else (z, jac)

    def initial(self, r1, r2):
        if not (R1_RANGE[0] <= r1 <= R1_RANGE[1] and R2_RANGE[0] <= r2 <= R2_RANGE[1]):
            raise ParameterError(f"(r1, r2) = ({r1}, {r2}) outside {R1_RANGE} x {R2_RANGE}")
        d = np.hypot(self.xc - 0.5, self.yc - 0.5)
        w = math.sqrt(2.0) * self.params.epsilon
        v = -1.0 + np.tanh((r1 - d) / w) - np.tanh((r2 - d) / w)
        return v.ravel()

    def sample_initial(self, rng):
        r1 = rng.uniform(*R1_RANGE)
        r2 = rng.uniform(*R2_RANGE)
        return self.initial(r1, r2), {"r1": r1, "r2": r2}

    def is_equilibrium(self, x):
        return np.max(np.abs(self.rhs(x)), axis=-1) < self.params.equilibrium_tol
