"""Small synthetic systems and random instances shared by the closure tests."""

import numpy as np

from partialforce.closure import Decoder, EncoderStack, LatentModel
from partialforce.diffnet import MlpParams, MlpSpec
from partialforce.microsim import PpParams, PredatorPrey
from partialforce.microsim.base import MicroSystem
from partialforce.rng import Xoshiro256


class LinearToy(MicroSystem):
    """x' = A x with a linear observable z* = P x (P has d_star rows)."""

    kind = "linear_toy"

    def __init__(self, n, m, proj, a):
        self.n = n
        self.m = m
        self.proj = np.asarray(proj, dtype=np.float64)
        self.d_star = self.proj.shape[0]
        self.a = np.asarray(a, dtype=np.float64)

    def params_dict(self):
        return {}

    def rhs(self, x):
        return np.asarray(x) @ self.a.T

    def partial_rhs(self, x, idx):
        f = self.rhs(x)
        idx = self._check_mask(idx)
        f = f.reshape(*f.shape[:-1], self.n, self.m)
        if f.ndim == 2:
            return f[idx]
        return np.take_along_axis(f, idx[..., None], axis=-2)

    def observable(self, x):
        x = np.asarray(x, dtype=np.float64)
        xb = x[None] if x.ndim == 1 else x
        z = xb @ self.proj.T
        jac = np.broadcast_to(self.proj, (xb.shape[0],) + self.proj.shape).copy()
        return (z[0], jac[0]) if x.ndim == 1 else (z, jac)


def orthonormal_stack(n, m, d, d_star, seed):
    """Encoder whose phi' = Q^T has orthonormal rows (affine phi_hat, no hidden layer)."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n * m, d)))
    sys_ = LinearToy(n, m, q[:, :d_star].T, rng.standard_normal((n * m, n * m)))
    stack = EncoderStack.create(sys_, d, hidden=(), rng=None)
    w, b = stack.params.layers[0]
    w[...] = q[:, d_star:].T
    b[...] = 0.0
    return stack, q


def tiny_pp(grid=3):
    return PredatorPrey(PpParams(grid=grid))


def random_stack(system, d, hidden, act, seed):
    return EncoderStack.create(system, d, hidden=hidden, rng=Xoshiro256(seed), activation=act)


def random_model(d, hidden, act, seed):
    return LatentModel.create(d, hidden=hidden, rng=Xoshiro256(seed), activation=act)


def random_decoder(d, n_out, hidden, act, seed):
    return Decoder.create(d, n_out, hidden=hidden, rng=Xoshiro256(seed), activation=act)


def affine_model(bias):
    """g(z) = bias for every z (zero weights)."""
    d = len(bias)
    spec = MlpSpec((d, 3, d), "tanh")
    params = MlpParams(spec)
    params.layers[-1][1][:] = bias
    return LatentModel(spec, params)


def pp_states(system, k, seed):
    rng = np.random.default_rng(seed)
    g = system.grid
    u = rng.uniform(0.05, 0.9, (k, g))
    v = rng.uniform(0.05, 0.9, (k, g))
    return np.concatenate([u, v], axis=1)
