"""Encoder stack phi = (phi_star, phi_hat) and decoder psi.

phi_star is the system's analytic observable.  phi_hat is an MLP applied to
the output of a fixed, non-trainable front end (identity, patch averages, or
per-bin kinetic/displacement statistics), so the encoder Jacobian is

    phi' = [ d phi_star / dx ;  J_mlp(features(x)) @ J_front(x) ].
"""

import numpy as np

from .. import diffnet
from ..diffnet import MlpParams, MlpSpec


class FrontEnd:
    """Fixed feature map with an affine normalization ``(raw - shift) / scale``."""

    kind = "base"

    def __init__(self, n_in, n_out):
        self.n_in = n_in
        self.n_out = n_out
        self.shift = np.zeros(n_out)
        self.scale = np.ones(n_out)

    def raw(self, x):
        raise NotImplementedError

    def features(self, x):
        return (self.raw(x) - self.shift) / self.scale

    def fit_normalization(self, x):
        r = self.raw(x)
        self.shift = r.mean(axis=0)
        sd = r.std(axis=0)
        self.scale = np.where(sd > 1e-12, sd, 1.0)

    def jac_apply(self, jm, x):
        """``jm @ J_front(x)`` for jm of shape (B, k, n_out) -> (B, k, n_in)."""
        raise NotImplementedError

    def jac_adjoint(self, bar, x):
        """``bar @ J_front(x)^T`` for bar of shape (B, k, n_in) -> (B, k, n_out)."""
        raise NotImplementedError

    def to_dict(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out,
                "shift": self.shift.tolist(), "scale": self.scale.tolist()}


class IdentityFront(FrontEnd):
    kind = "identity"

    def __init__(self, n_in, **_):
        super().__init__(n_in, n_in)

    def raw(self, x):
        return x

    def jac_apply(self, jm, x):
        return jm / self.scale

    def jac_adjoint(self, bar, x):
        return bar / self.scale


class PatchPoolFront(FrontEnd):
    """Means over non-overlapping ``patch x patch`` blocks of a square grid."""

    kind = "patch_pool"

    def __init__(self, n_in, grid=None, patch=4, **_):
        grid = grid or int(round(np.sqrt(n_in)))
        if grid * grid != n_in or grid % patch:
            raise ValueError(f"grid {grid} is not a multiple of patch {patch} or does not match N={n_in}")
        self.grid, self.patch = grid, patch
        c = grid // patch
        super().__init__(n_in, c * c)
        i, j = np.divmod(np.arange(n_in), grid)
        self.owner = (i // patch) * c + j // patch
        self.pool = np.zeros((c * c, n_in))
        self.pool[self.owner, np.arange(n_in)] = 1.0 / patch**2

    def raw(self, x):
        return x @ self.pool.T

    def jac_apply(self, jm, x):
        return (jm / self.scale) @ self.pool

    def jac_adjoint(self, bar, x):
        return (bar @ self.pool.T) / self.scale

    def to_dict(self):
        d = super().to_dict()
        d.update(grid=self.grid, patch=self.patch)
        return d


class KineticBinsFront(FrontEnd):
    """Per-bin statistics of an atomistic state (atoms grouped by index).

    For each of ``bins`` groups: mean squared velocity per component and mean
    squared displacement from the reference lattice (minimum image).
    """

    kind = "kinetic_bins"

    def __init__(self, n_in, lattice=None, box=None, bins=12, **_):
        n_atoms = n_in // 6
        if lattice is None or box is None:
            raise ValueError("kinetic_bins needs the reference lattice and box")
        self.lattice = np.asarray(lattice, dtype=np.float64).reshape(n_atoms, 3)
        self.box = float(box)
        self.bins = int(min(bins, n_atoms))
        self.bin_of = np.arange(n_atoms) * self.bins // n_atoms
        self.counts = np.bincount(self.bin_of, minlength=self.bins).astype(np.float64)
        self.n_atoms = n_atoms
        super().__init__(n_in, 4 * self.bins)

    def _split(self, x):
        s = np.asarray(x).reshape(-1, self.n_atoms, 6)
        d = s[..., :3] - self.lattice
        d = d - self.box * np.round(d / self.box)
        return d, s[..., 3:]

    def _pool(self, a):
        # a: (B, n_atoms) -> (B, bins)
        out = np.zeros((a.shape[0], self.bins))
        np.add.at(out.T, self.bin_of, a.T)
        return out / self.counts

    def raw(self, x):
        d, v = self._split(x)
        cols = [self._pool(v[..., c] ** 2) for c in range(3)] + [self._pool(np.sum(d * d, axis=-1))]
        return np.stack(cols, axis=-1).reshape(d.shape[0], -1)

    def _dfeat(self, x):
        # derivative of feature (bin_of[i], c) w.r.t. the coordinates of atom i
        d, v = self._split(x)
        w = 2.0 / self.counts[self.bin_of]
        return d * w[:, None], v * w[:, None]

    def jac_apply(self, jm, x):
        jm = jm / self.scale
        bsz, k, _ = jm.shape
        gd, gv = self._dfeat(x)
        jm4 = jm.reshape(bsz, k, self.bins, 4)[:, :, self.bin_of, :]
        out = np.empty((bsz, k, self.n_atoms, 6))
        out[..., :3] = jm4[..., 3:4] * gd[:, None]
        out[..., 3:] = jm4[..., :3] * gv[:, None]
        return out.reshape(bsz, k, self.n_in)

    def jac_adjoint(self, bar, x):
        bsz, k, _ = bar.shape
        gd, gv = self._dfeat(x)
        b6 = bar.reshape(bsz, k, self.n_atoms, 6)
        per_atom = np.empty((bsz, k, self.n_atoms, 4))
        per_atom[..., :3] = b6[..., 3:] * gv[:, None]
        per_atom[..., 3] = np.sum(b6[..., :3] * gd[:, None], axis=-1)
        out = np.zeros((bsz, k, self.bins, 4))
        for b in range(self.bins):
            out[:, :, b] = per_atom[:, :, self.bin_of == b].sum(axis=2)
        return out.reshape(bsz, k, -1) / self.scale

    def to_dict(self):
        d = super().to_dict()
        d.update(bins=self.bins, box=self.box)
        return d


FRONTS = {c.kind: c for c in (IdentityFront, PatchPoolFront, KineticBinsFront)}


def default_front(system):
    if system.kind == "allen_cahn":
        return PatchPoolFront(system.N, grid=system.grid, patch=4)
    if system.kind == "lennard_jones":
        return KineticBinsFront(system.N, lattice=system.lattice, box=system.box)
    return IdentityFront(system.N)


def front_from_dict(system, d):
    kw = {k: v for k, v in d.items() if k not in ("kind", "n_in", "n_out", "shift", "scale")}
    if d["kind"] == "kinetic_bins":
        kw.update(lattice=system.lattice, box=system.box)
    front = FRONTS[d["kind"]](system.N, **kw)
    front.shift = np.asarray(d["shift"], dtype=np.float64)
    front.scale = np.asarray(d["scale"], dtype=np.float64)
    return front


class EncoderStack:
    """phi = (phi_star, phi_hat); only phi_hat carries parameters."""

    def __init__(self, system, front, spec, params):
        if spec.n_in != front.n_out:
            raise ValueError(f"MLP input {spec.n_in} != front-end output {front.n_out}")
        self.system = system
        self.front = front
        self.spec = spec
        self.params = params

    @property
    def d_star(self):
        return self.system.d_star

    @property
    def d(self):
        return self.d_star + self.spec.n_out

    @classmethod
    def create(cls, system, d, hidden=(128, 128, 128), rng=None, front=None, activation="tanh"):
        front = front or default_front(system)
        spec = MlpSpec((front.n_out,) + tuple(hidden) + (d - system.d_star,), activation)
        params = MlpParams.init(spec, rng) if rng is not None else MlpParams(spec)
        return cls(system, front, spec, params)


def encode(stack, x, with_jacobian=True, keep_tape=False):
    """Return ``z`` (B, d) and, if requested, ``phi_prime`` (B, d, N).

    ``keep_tape`` also returns the MLP tape (for parameter gradients).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None] if single else x
    zs, js = stack.system.observable(xb)
    feats = stack.front.features(xb)
    zh, tape = diffnet.forward(stack.spec, stack.params, feats)
    z = np.concatenate([zs, zh], axis=1)
    phi_prime = None
    if with_jacobian:
        jm = diffnet.input_jacobian(stack.spec, stack.params, tape)
        phi_prime = np.concatenate([js, stack.front.jac_apply(jm, xb)], axis=1)
    if single:
        z = z[0]
        phi_prime = None if phi_prime is None else phi_prime[0]
    if keep_tape:
        return z, phi_prime, tape
    return z, phi_prime


def encode_observable_part(stack, x):
    """Only the fixed observable block of z (cheap, no MLP)."""
    return stack.system.observable(x)[0]
