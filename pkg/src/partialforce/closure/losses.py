"""Autoencoder and latent-dynamics losses with exact parameter gradients.

The dynamics losses all compare a latent vector field g_theta(z) with
microscopic forces:

    L_z   = mean ||phi' f - g||^2
    L_x   = mean ||f - pinv(phi') g||^2
    L_x,p = (1/p) mean sum_{j in mask} ||f_j - pinv(phi')_j g||^2

Gradients are taken with respect to theta only (the encoder is frozen).
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .. import diffnet
from ..diffnet import MlpParams, MlpSpec, kappa_penalty
from ..tensor_math import gram_cholesky, pinv_full_row_rank
from .encoder import encode


class MaskSizeError(ValueError):
    pass


@dataclass
class Decoder:
    spec: MlpSpec
    params: MlpParams

    @classmethod
    def create(cls, d, n_out, hidden=(128, 128, 128), rng=None, activation="tanh"):
        spec = MlpSpec((d,) + tuple(hidden) + (n_out,), activation)
        return cls(spec, MlpParams.init(spec, rng) if rng is not None else MlpParams(spec))

    def __call__(self, z):
        return diffnet.forward(self.spec, self.params, z)[0]


@dataclass
class LatentModel:
    spec: MlpSpec
    params: MlpParams

    @classmethod
    def create(cls, d, hidden=(128, 128, 128), rng=None, activation="tanh"):
        spec = MlpSpec((d,) + tuple(hidden) + (d,), activation)
        return cls(spec, MlpParams.init(spec, rng) if rng is not None else MlpParams(spec))

    def __call__(self, z):
        return diffnet.forward(self.spec, self.params, z)[0]


def _batch(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 1 else x


def ae_loss_and_grad(stack, decoder, x, lambda_cond):
    """L_AE = mean ||x - psi(phi(x))||^2 + lambda_cond * mean (kappa(phi' phi'^T) - 1)^2.

    Returns ``(value, grad_encoder, grad_decoder, info)`` where ``info`` holds
    the two loss terms and the per-sample condition numbers (when computed).
    """
    if lambda_cond < 0:
        raise ValueError("lambda_cond must be non-negative")
    xb = _batch(x)
    bsz = xb.shape[0]
    if bsz == 0:
        raise ValueError("empty batch")
    need_jac = lambda_cond > 0
    z, phi_prime, tape = encode(stack, xb, with_jacobian=need_jac, keep_tape=True)
    xr, dtape = diffnet.forward(decoder.spec, decoder.params, z)
    r = xr - xb
    rec = float(np.sum(r * r) / bsz)
    g_dec, dz = diffnet.backward(decoder.spec, decoder.params, dtape, 2.0 * r / bsz)
    ds = stack.d_star
    info = {"rec": rec, "cond": 0.0, "kappa": None}
    if need_jac:
        pen, kappa, dpen = kappa_penalty(phi_prime)
        cond = float(pen.mean())
        bar = stack.front.jac_adjoint(lambda_cond * dpen[:, ds:, :] / bsz, xb)
        g_enc, _ = diffnet.backward(stack.spec, stack.params, tape, dz[:, ds:], bar)
        info.update(cond=cond, kappa=kappa)
    else:
        g_enc, _ = diffnet.backward(stack.spec, stack.params, tape, dz[:, ds:])
    return rec + lambda_cond * info["cond"], g_enc, g_dec, info


def _model_grad(model, tape, dg):
    grad, _ = diffnet.backward(model.spec, model.params, tape, dg)
    return grad


def loss_lz(stack, model, x, forces):
    """Latent-space loss; needs full forces (B, N)."""
    xb = _batch(x)
    f = _batch(forces)
    if f.shape != xb.shape:
        raise MaskSizeError("L_z needs full forces with the shape of x (a p = 1 dataset)")
    z, phi_prime = encode(stack, xb)
    w = np.einsum("bdn,bn->bd", phi_prime, f)
    g, tape = diffnet.forward(model.spec, model.params, z)
    r = w - g
    bsz = xb.shape[0]
    return float(np.sum(r * r) / bsz), _model_grad(model, tape, -2.0 * r / bsz)


def loss_lx(stack, model, x, forces):
    """Microscopic loss with the full pseudo-inverse; needs full forces (B, N)."""
    xb = _batch(x)
    f = _batch(forces)
    if f.shape != xb.shape:
        raise MaskSizeError("L_x needs full forces with the shape of x (a p = 1 dataset)")
    z, phi_prime = encode(stack, xb)
    pinv = pinv_full_row_rank(phi_prime)
    g, tape = diffnet.forward(model.spec, model.params, z)
    res = f - np.einsum("bnd,bd->bn", pinv, g)
    bsz = xb.shape[0]
    dg = -2.0 * np.einsum("bnd,bn->bd", pinv, res) / bsz
    return float(np.sum(res * res) / bsz), _model_grad(model, tape, dg)


def mask_coords(masks, m):
    """Coordinate indices of masked particles: (B, k) -> (B, k*m)."""
    masks = np.asarray(masks, dtype=np.int64)
    return (masks[..., None] * m + np.arange(m)).reshape(*masks.shape[:-1], -1)


def masked_pinv_rows(phi_prime, coords, return_cond=False):
    """Rows ``coords`` of pinv(phi') = phi'^T (phi' phi'^T)^-1 without forming the rest."""
    _, cond = gram_cholesky(phi_prime)  # raises on rank deficiency
    gram = phi_prime @ np.swapaxes(phi_prime, -1, -2)
    a_m = np.take_along_axis(phi_prime, coords[:, None, :], axis=2)
    rows = np.swapaxes(np.linalg.solve(gram, a_m), -1, -2)
    return (rows, cond) if return_cond else rows


def loss_lxp(stack, model, x, masks, forces, p):
    """Partial-force loss; ``forces`` has shape (B, k, m) with k = n*p."""
    xb = _batch(x)
    masks = np.asarray(masks, dtype=np.int64)
    forces = np.asarray(forces, dtype=np.float64)
    if masks.ndim == 1:
        masks, forces = masks[None], forces[None]
    p = Fraction(p)
    sys_ = stack.system
    if Fraction(masks.shape[1]) != sys_.n * p:
        raise MaskSizeError(f"mask size {masks.shape[1]} != n*p = {sys_.n * p}")
    z, phi_prime = encode(stack, xb)
    rows = masked_pinv_rows(phi_prime, mask_coords(masks, sys_.m))
    g, tape = diffnet.forward(model.spec, model.params, z)
    fm = forces.reshape(xb.shape[0], -1)
    res = fm - np.einsum("bkd,bd->bk", rows, g)
    bsz = xb.shape[0]
    scale = 1.0 / float(p)
    dg = -2.0 * scale * np.einsum("bkd,bk->bd", rows, res) / bsz
    return scale * float(np.sum(res * res) / bsz), _model_grad(model, tape, dg)


# -- cached quadratic form ---------------------------------------------------

@dataclass
class QuadraticCache:
    """Per-sample data reducing any dynamics loss to a quadratic in g.

    loss_i(g) = scale * (s_i - 2 g.c_i + g.Q_i g); the encoder is frozen, so
    z, s, c and Q are computed once and training steps cost O(d^2).
    """

    z: np.ndarray
    s: np.ndarray
    c: np.ndarray
    q: np.ndarray
    scale: float
    kind: str
    kappa: np.ndarray = None

    @property
    def K(self):
        return self.z.shape[0]

    def loss_and_dg(self, g, idx):
        c = self.c[idx]
        q = self.q[idx]
        qg = np.einsum("bij,bj->bi", q, g)
        vals = self.scale * (self.s[idx] - 2.0 * np.sum(g * c, axis=1) + np.sum(g * qg, axis=1))
        dg = 2.0 * self.scale * (qg - c)
        return vals, dg


def build_cache(stack, kind, x, masks=None, forces=None, p=1, chunk=256):
    """Precompute the quadratic-form data for ``kind`` in {"L_z", "L_x", "L_xp"}."""
    x = np.asarray(x, dtype=np.float64)
    sys_ = stack.system
    p = Fraction(p)
    if kind in ("L_z", "L_x") and p != 1:
        raise MaskSizeError(f"{kind} needs a full-force dataset (p = 1), got p = {p}")
    if kind not in ("L_z", "L_x", "L_xp"):
        raise ValueError(f"unknown loss kind {kind!r}")
    if masks is not None and Fraction(np.shape(masks)[1]) != sys_.n * p:
        raise MaskSizeError(f"mask size {np.shape(masks)[1]} != n*p = {sys_.n * p}")
    d = stack.d
    out_z, out_s, out_c, out_q, out_k = [], [], [], [], []
    for lo in range(0, x.shape[0], chunk):
        xb = x[lo : lo + chunk]
        fb = np.asarray(forces[lo : lo + chunk], dtype=np.float64).reshape(xb.shape[0], -1)
        z, phi_prime = encode(stack, xb)
        if kind == "L_z":
            if masks is not None and np.shape(masks)[1] != sys_.n:
                raise MaskSizeError("L_z needs full forces")
            _, kap = gram_cholesky(phi_prime)
            w = np.einsum("bdn,bn->bd", phi_prime, fb)
            s = np.sum(w * w, axis=1)
            c = w
            q = np.broadcast_to(np.eye(d), (xb.shape[0], d, d)).copy()
        else:
            if masks is None:
                coords = np.broadcast_to(np.arange(sys_.N), (xb.shape[0], sys_.N))
            else:
                coords = mask_coords(masks[lo : lo + chunk], sys_.m)
            rows, kap = masked_pinv_rows(phi_prime, coords, return_cond=True)
            s = np.sum(fb * fb, axis=1)
            c = np.einsum("bkd,bk->bd", rows, fb)
            q = np.einsum("bki,bkj->bij", rows, rows)
        out_z.append(z)
        out_s.append(s)
        out_c.append(c)
        out_q.append(q)
        out_k.append(kap)
    scale = 1.0 if kind != "L_xp" else float(1 / p)
    cat = (lambda a, shape: np.concatenate(a) if a else np.zeros(shape))  # noqa: E731
    return QuadraticCache(cat(out_z, (0, d)), cat(out_s, (0,)), cat(out_c, (0, d)),
                          cat(out_q, (0, d, d)), scale, kind, cat(out_k, (0,)))


def cached_loss_and_grad(model, cache, idx):
    """Mean cached loss over samples ``idx`` and its gradient w.r.t. theta."""
    g, tape = diffnet.forward(model.spec, model.params, cache.z[idx])
    vals, dg = cache.loss_and_dg(g, idx)
    bsz = len(idx)
    return float(vals.sum() / bsz), _model_grad(model, tape, dg / bsz)
