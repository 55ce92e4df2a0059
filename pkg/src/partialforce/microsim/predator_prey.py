"""1-D predator-prey reaction-diffusion system on a cell-centred grid.

State layout: ``x = (u_1..u_G, v_1..v_G)`` with G grid cells, so every grid
value of either field is one microscopic coordinate (n = 2G, m = 1).
Zero-flux boundaries use the one-sided stencils (w_2 - w_1)/dx^2 and
(w_{G-1} - w_G)/dx^2, written below as a ghost-cell copy of the edge value.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .base import MicroSystem, ParameterError, as_batch

MU_RANGE = (0.0, 0.2)
# sampling floor: the homogenised prey mean keeps its sign, and tiny or zero
# means sit on the unstable extinction state
MU_SAMPLE_RANGE = (0.01, 0.2)
SIGMA_RANGE = (0.4, 0.6)


@dataclass(frozen=True)
class PpParams:
    a: float = 3.0
    b: float = 0.4
    prey_diffusion: float = 1.0
    predator_diffusion: float = 1.0
    grid: int = 50

    def __post_init__(self):
        if not (self.a > 0 and 0 < self.b < 1 and self.grid >= 3):
            raise ParameterError(f"invalid predator-prey parameters {self}")

    @property
    def dx(self):
        return 1.0 / self.grid


class PredatorPrey(MicroSystem):
    kind = "predator_prey"
    m = 1
    d_star = 2

    def __init__(self, params=None, **kw):
        self.params = params if params is not None else PpParams(**kw)
        g = self.params.grid
        self.grid = g
        self.n = 2 * g
        self.cells = (np.arange(g) + 0.5) * self.params.dx
        local = np.arange(g)
        right = np.minimum(local + 1, g - 1)
        left = np.maximum(local - 1, 0)
        self._right = np.concatenate([right, right + g])
        self._left = np.concatenate([left, left + g])
        self._inv_dx2 = 1.0 / self.params.dx**2
        self._diff = np.concatenate(
            [np.full(g, self.params.prey_diffusion), np.full(g, self.params.predator_diffusion)]
        )

    def params_dict(self):
        return asdict(self.params)

    def rhs(self, x):
        xb, single = as_batch(x)
        g = self.grid
        p = self.params
        u = xb[:, :g]
        v = xb[:, g:]
        lap = (xb[:, self._right] - 2.0 * xb + xb[:, self._left]) * self._inv_dx2
        react = np.concatenate([u * (1.0 - u - v), p.a * v * (u - p.b)], axis=1)
        out = react + self._diff * lap
        return out[0] if single else out

    def partial_rhs(self, x, idx):
        xb, single = as_batch(x)
        idx = self._check_mask(idx)
        idx_b = np.broadcast_to(idx, (xb.shape[0], idx.shape[-1]))
        g = self.grid
        p = self.params
        take = lambda j: np.take_along_axis(xb, j, axis=1)  # noqa: E731
        w = take(idx_b)
        lap = (take(self._right[idx_b]) - 2.0 * w + take(self._left[idx_b])) * self._inv_dx2
        local = idx_b % g
        u = take(local)
        v = take(local + g)
        is_u = idx_b < g
        react = np.where(is_u, u * (1.0 - u - v), p.a * v * (u - p.b))
        out = (react + self._diff[idx_b] * lap)[..., None]
        return out[0] if single and idx.ndim == 1 else out

    def observable(self, x):
        xb, single = as_batch(x)
        g = self.grid
        z = np.stack([xb[:, :g].mean(axis=1), xb[:, g:].mean(axis=1)], axis=1)
        jac = np.zeros((xb.shape[0], 2, self.N))
        jac[:, 0, :g] = 1.0 / g
        jac[:, 1, g:] = 1.0 / g
        return (z[0], jac[0]) if single else (z, jac)

    def initial(self, mu, sigma):
        if not (MU_RANGE[0] <= mu <= MU_RANGE[1] and SIGMA_RANGE[0] <= sigma <= SIGMA_RANGE[1]):
            raise ParameterError(f"(mu, sigma) = ({mu}, {sigma}) outside {MU_RANGE} x {SIGMA_RANGE}")
        u = mu + sigma * np.cos(5.0 * np.pi * self.cells)
        return np.concatenate([u, 1.0 - u])

    def sample_initial(self, rng):
        mu = rng.uniform(*MU_SAMPLE_RANGE)
        sigma = rng.uniform(*SIGMA_RANGE)
        return self.initial(mu, sigma), {"mu": mu, "sigma": sigma}
