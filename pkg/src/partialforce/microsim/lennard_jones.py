"""Lennard-Jones fluid in a periodic cube (reduced units, eps = sigma = 1).

State layout: one row of six numbers per atom, ``(r_x, r_y, r_z, v_x, v_y,
v_z)``, flattened atom-major.  The pair force is truncated at ``r_cut``.
Neighbour candidates come from a cell list whose edge is at least
``r_cut / cell_divisions``; only cells that can hold an atom within
``r_cut`` of the home cell are visited.
"""

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..rng import Xoshiro256
from .base import MicroSystem, ParameterError

T0_RANGE = (0.5, 1.5)
OVERLAP_TOL = 1e-6


class OverlapError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LjParams:
    n_atoms: int = 108
    density: float = 0.8
    r_cut: float = 2.5
    mass: float = 1.0
    dt: float = 0.001
    steps: int = 250
    cell_divisions: int = 3

    def __post_init__(self):
        if self.n_atoms < 2 or self.density <= 0 or self.r_cut <= 0:
            raise ParameterError(f"invalid Lennard-Jones parameters {self}")
        if self.box <= 2.0 * self.r_cut:
            raise ParameterError(f"box {self.box:.4f} must exceed 2 r_cut = {2 * self.r_cut}")

    @property
    def box(self):
        return (self.n_atoms / self.density) ** (1.0 / 3.0)


def pair_force_magnitude(r2, r_cut=2.5):
    """Return F(r)/r for squared separations (zero beyond the cutoff)."""
    r2 = np.asarray(r2, dtype=np.float64)
    inv2 = 1.0 / r2
    inv6 = inv2 * inv2 * inv2
    return np.where(r2 <= r_cut * r_cut, 24.0 * inv2 * inv6 * (2.0 * inv6 - 1.0), 0.0)


def pair_potential(r2, r_cut=2.5, shift=False):
    r2 = np.asarray(r2, dtype=np.float64)
    inv6 = (1.0 / r2) ** 3
    v = 4.0 * inv6 * (inv6 - 1.0)
    if shift:
        ic6 = r_cut**-6
        v = v - 4.0 * ic6 * (ic6 - 1.0)
    return np.where(r2 <= r_cut * r_cut, v, 0.0)


def fcc_lattice(n_atoms, box):
    """First ``n_atoms`` sites of a face-centred cubic lattice filling the box."""
    k = math.ceil((n_atoms / 4.0) ** (1.0 / 3.0) - 1e-12)
    a = box / k
    basis = np.array([[0, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5]])
    cells = np.array(list(itertools.product(range(k), repeat=3)), dtype=np.float64)
    sites = (cells[:, None, :] + basis[None]).reshape(-1, 3) * a + 0.25 * a
    return sites[:n_atoms]


class LennardJones(MicroSystem):
    kind = "lennard_jones"
    m = 6
    d_star = 1

    def __init__(self, params=None, **kw):
        self.params = params if params is not None else LjParams(**kw)
        p = self.params
        self.n = p.n_atoms
        self.box = p.box
        self.lattice = fcc_lattice(self.n, self.box)
        self.n_side = max(1, int(math.floor(self.box / (p.r_cut / p.cell_divisions))))
        self.cell_edge = self.box / self.n_side
        self._stencil = self._build_stencil()

    def params_dict(self):
        return asdict(self.params)

    def _build_stencil(self):
        # cell offsets whose closest approach to the home cell is within r_cut,
        # folded modulo the grid so that no cell is visited twice
        s = self.n_side
        reach = int(math.ceil(self.params.r_cut / self.cell_edge))
        offs = set()
        for o in itertools.product(range(-reach, reach + 1), repeat=3):
            gap = [max(abs(c) - 1, 0) * self.cell_edge for c in o]
            if gap[0] ** 2 + gap[1] ** 2 + gap[2] ** 2 < self.params.r_cut**2:
                offs.add(tuple(c % s for c in o))
        return np.array(sorted(offs), dtype=np.int64)

    # -- state helpers -----------------------------------------------------
    def split(self, x):
        s = np.asarray(x, dtype=np.float64).reshape(-1, self.n, 6)
        return s[..., :3], s[..., 3:]

    def join(self, r, v):
        return np.concatenate([r, v], axis=-1).reshape(*r.shape[:-2], self.N)

    def wrap(self, r):
        return r - self.box * np.floor(r / self.box)

    # -- forces ------------------------------------------------------------
    def _candidates(self, r, atoms):
        """Flat (owner, partner) candidate pairs for ``atoms`` from the cell list."""
        s = self.n_side
        cidx = np.floor(r / self.cell_edge).astype(np.int64) % s
        cell = (cidx[:, 0] * s + cidx[:, 1]) * s + cidx[:, 2]
        order = np.argsort(cell, kind="stable")
        counts = np.bincount(cell, minlength=s**3)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        nb = (cidx[atoms][:, None, :] + self._stencil[None]) % s
        nb_cell = ((nb[..., 0] * s + nb[..., 1]) * s + nb[..., 2]).ravel()
        cnt = counts[nb_cell]
        total = int(cnt.sum())
        owner = np.repeat(np.repeat(np.arange(len(atoms)), len(self._stencil)), cnt)
        first = np.repeat(np.cumsum(cnt) - cnt, cnt)
        partner = order[np.repeat(starts[nb_cell], cnt) + np.arange(total) - first]
        keep = partner != atoms[owner]
        return owner[keep], partner[keep]

    def _pair_terms(self, r, atoms):
        owner, partner = self._candidates(r, atoms)
        d = r[atoms[owner]] - r[partner]
        d -= self.box * np.round(d / self.box)
        r2 = np.einsum("ij,ij->i", d, d)
        if r2.size and r2.min() < OVERLAP_TOL**2:
            raise OverlapError(f"atoms closer than {OVERLAP_TOL}")
        return owner, partner, d, r2

    def forces_on(self, r, atoms):
        """Total pair force on each atom in ``atoms`` (shape (k, 3))."""
        atoms = np.asarray(atoms, dtype=np.int64)
        owner, _, d, r2 = self._pair_terms(r, atoms)
        fr = pair_force_magnitude(r2, self.params.r_cut)
        out = np.empty((len(atoms), 3))
        for c in range(3):
            out[:, c] = np.bincount(owner, weights=fr * d[:, c], minlength=len(atoms))
        return out

    def accelerations(self, r):
        return self.forces_on(r, np.arange(self.n)) / self.params.mass

    def _rhs_single(self, x):
        s = x.reshape(self.n, 6)
        out = np.empty_like(s)
        out[:, :3] = s[:, 3:]
        out[:, 3:] = self.accelerations(s[:, :3])
        return out.ravel()

    def rhs(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self._rhs_single(x)
        return np.stack([self._rhs_single(row) for row in x])

    def _partial_single(self, x, idx):
        s = x.reshape(self.n, 6)
        out = np.empty((len(idx), 6))
        out[:, :3] = s[idx, 3:]
        out[:, 3:] = self.forces_on(s[:, :3], idx) / self.params.mass
        return out

    def partial_rhs(self, x, idx):
        x = np.asarray(x, dtype=np.float64)
        idx = self._check_mask(idx)
        if x.ndim == 1:
            return self._partial_single(x, idx)
        if idx.ndim == 1:
            return np.stack([self._partial_single(row, idx) for row in x])
        return np.stack([self._partial_single(row, i) for row, i in zip(x, idx)])

    # -- energetics --------------------------------------------------------
    def potential_energy(self, r, shift=True):
        _, _, _, r2 = self._pair_terms(r, np.arange(self.n))
        return 0.5 * float(pair_potential(r2, self.params.r_cut, shift).sum())

    def kinetic_energy(self, v):
        return 0.5 * self.params.mass * float(np.sum(v * v))

    def total_energy(self, x, shift=True):
        r, v = self.split(x)
        return self.potential_energy(r[0], shift) + self.kinetic_energy(v[0])

    def temperature(self, x):
        return self.observable(x)[0][..., 0]

    def observable(self, x):
        """Instantaneous temperature and its gradient."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        _, v = self.split(x)
        c = 2.0 / (3.0 * (self.n - 1))
        t = c * 0.5 * self.params.mass * np.sum(v * v, axis=(1, 2))
        jac = np.zeros((v.shape[0], self.n, 6))
        jac[..., 3:] = c * self.params.mass * v
        jac = jac.reshape(v.shape[0], 1, self.N)
        z = t[:, None]
        return (z[0], jac[0]) if single else (z, jac)

    # -- integration -------------------------------------------------------
    def prepare_verlet(self, x):
        return np.array(x, dtype=np.float64)

    def _verlet_single(self, x, dt):
        s = x.reshape(self.n, 6)
        r, v = s[:, :3], s[:, 3:]
        a = self.accelerations(r)
        r_new = self.wrap(r + dt * v + 0.5 * dt * dt * a)
        a_new = self.accelerations(r_new)
        v_new = v + 0.5 * dt * (a + a_new)
        return np.concatenate([r_new, v_new], axis=1).ravel()

    def verlet_step(self, x, dt):
        # accelerations are recomputed at the start of each step; this keeps
        # the step a pure function of the state at twice the force cost
        if x.ndim == 1:
            return self._verlet_single(x, dt)
        return np.stack([self._verlet_single(row, dt) for row in x])

    # -- initial conditions ------------------------------------------------
    def initial(self, t0, seed):
        if not (T0_RANGE[0] <= t0 <= T0_RANGE[1]):
            raise ParameterError(f"T0 = {t0} outside {T0_RANGE}")
        rng = Xoshiro256(seed)
        v = rng.normals(self.n * 3).reshape(self.n, 3)
        v -= v.mean(axis=0)
        t_now = self.params.mass * np.sum(v * v) / (3.0 * (self.n - 1))
        v *= math.sqrt(t0 / t_now)
        return self.join(self.lattice[None], v[None])[0]

    def sample_initial(self, rng):
        t0 = rng.uniform(*T0_RANGE)
        seed = rng.next_u64()
        return self.initial(t0, seed), {"T0": t0, "seed": seed}
