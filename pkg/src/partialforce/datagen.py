"""Partial-force dataset generation and the ``.pfds`` binary format.

Configurations are drawn from the trajectory distribution: simulate a batch
of microscopic trajectories from random initial-condition parameters, keep
snapshots at a fixed stride, pick K of them, and attach to each one a fresh
uniform mask and the forces on the masked particles only.
"""

import json
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .io_utils import atomic_write_bytes, atomic_write_text
from .microsim import KIND_NAMES, KINDS, IntegrationError, integrate, make_system
from .rng import Xoshiro256

MAGIC = b"PFDS"
VERSION = 1
HEADER = struct.Struct("<4sII7Q")
SELECTION_STREAM = 1 << 32
AUDIT_TOL = 1e-12


class DatasetError(Exception):
    """Base class for malformed dataset files."""


class BadMagicError(DatasetError):
    pass


class VersionError(DatasetError):
    pass


class TruncatedError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class MaskError(ValueError):
    pass


class AuditError(AssertionError):
    pass


def as_fraction(p):
    """Exact rational from a Fraction, int, "a/b" string or (num, den) pair."""
    if isinstance(p, Fraction):
        f = p
    elif isinstance(p, (tuple, list)):
        f = Fraction(int(p[0]), int(p[1]))
    elif isinstance(p, float):
        f = Fraction(p).limit_denominator(1 << 20)
    else:
        f = Fraction(p)
    if not 0 < f <= 1:
        raise MaskError(f"p = {f} must lie in (0, 1]")
    return f


def mask_size(n, p):
    p = as_fraction(p)
    sel = n * p
    if sel.denominator != 1 or sel <= 0:
        raise MaskError(f"n*p = {n}*{p} is not a positive integer")
    return int(sel)


def sample_mask(n, p, rng):
    """Uniform random subset of ``range(n)`` with exactly n*p elements, ascending."""
    return rng.choose(n, mask_size(n, p))


@dataclass
class Sampling:
    """How configurations are drawn from the trajectory distribution.

    ``stride`` counts integrator steps between kept snapshots.  Snapshots
    earlier than ``t_start`` are simulated but not offered for sampling.
    ``n_traj`` of ``None`` means "just enough trajectories to hold K
    snapshots".
    """

    t_end: float
    dt: float
    scheme: str
    stride: int
    n_traj: int = None
    stop_at_equilibrium: bool = False
    t_start: float = 0.0

    @property
    def steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def snapshots(self):
        return self.steps // self.stride + 1

    @property
    def skip(self):
        """Number of leading snapshots excluded from sampling."""
        return int(math.ceil(self.t_start / (self.dt * self.stride) - 1e-9))

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("t_end", "dt", "scheme", "stride", "n_traj", "stop_at_equilibrium", "t_start")}


def default_sampling(system, test=False):
    """Default trajectory protocol per system kind."""
    if system.kind == "predator_prey":
        # observations every 0.1 time units on [0, 30]; the micro step is set by
        # the explicit diffusion limit 4 D / dx^2 of the 50-cell grid.  Training
        # configurations start at the first observation after t = 0: the cosine
        # profile's diffusive mode (rate D (5 pi)^2 ~ 250) is gone by then but
        # dominates the force norm at t = 0.  Test rollouts start from the
        # same first observation.
        if test:
            return Sampling(t_end=30.0, dt=2e-4, scheme="rk4", stride=500, t_start=0.1)
        return Sampling(t_end=30.0, dt=1e-4, scheme="euler", stride=1000, t_start=0.1)
    if system.kind == "allen_cahn":
        p = system.params
        return Sampling(t_end=p.t_max, dt=p.dt, scheme="rk4", stride=20, stop_at_equilibrium=True)
    if system.kind == "lennard_jones":
        p = system.params
        return Sampling(t_end=p.steps * p.dt, dt=p.dt, scheme="velocity_verlet", stride=10)
    raise ValueError(system.kind)


def simulate(system, x0, sampling):
    """Snapshots of one or more trajectories: (S, N) or (B, S, N).

    With ``stop_at_equilibrium`` the run ends at the first snapshot where every
    trajectory in the batch satisfies the system's equilibrium test.
    """
    if not sampling.stop_at_equilibrium:
        return integrate(x0, system, sampling.dt, sampling.steps, sampling.scheme, sampling.stride)
    x = np.array(x0, dtype=np.float64)
    snaps = [x]
    for _ in range(sampling.steps // sampling.stride):
        x = integrate(x, system, sampling.dt, sampling.stride, sampling.scheme, sampling.stride)[..., -1, :]
        snaps.append(x)
        if np.all(system.is_equilibrium(x)):
            break
    traj = np.stack(snaps, axis=0)
    return traj if traj.ndim == 2 else np.swapaxes(traj, 0, 1)


def simulate_batch(system, sampling, n_traj, seed, first=0):
    """Run trajectories ``first .. first + n_traj - 1`` with per-trajectory PRNG streams.

    Returns (list of snapshot arrays, list of initial-condition parameter
    dicts, list of per-trajectory generators positioned after the draws).
    """
    rngs = [Xoshiro256.stream(seed, t) for t in range(first, first + n_traj)]
    starts, params = [], []
    for r in rngs:
        x0, prm = system.sample_initial(r)
        starts.append(x0)
        params.append(prm)
    trajs = []
    try:
        if system.kind == "predator_prey" and n_traj:
            trajs = list(simulate(system, np.stack(starts), sampling))
        else:
            for x0 in starts:
                trajs.append(simulate(system, x0, sampling))
    except IntegrationError as exc:
        # batched runs report rows of the batch; serial runs fail on the next index
        rows = [first + int(r) for r in exc.rows] if system.kind == "predator_prey" else [first + len(trajs)]
        raise IntegrationError(f"integration blew up in trajectories {rows}: {exc}", exc.step, rows) from None
    return trajs, params, rngs


@dataclass
class Dataset:
    kind: str
    n: int
    m: int
    p: Fraction
    seed: int
    x: np.ndarray
    masks: np.ndarray
    forces: np.ndarray
    system_params: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p = as_fraction(self.p)
        k = self.x.shape[0]
        if self.x.shape != (k, self.n * self.m):
            raise ValueError(f"x has shape {self.x.shape}, expected ({k}, {self.n * self.m})")
        if self.masks.shape[0] != k or self.forces.shape != (k, self.masks.shape[1], self.m):
            raise ValueError("masks/forces do not match the sample count")

    @property
    def K(self):
        return self.x.shape[0]

    @property
    def sel(self):
        return self.masks.shape[1]

    @property
    def N(self):
        return self.n * self.m

    def system(self):
        return make_system(self.kind, self.system_params)

    def full_forces(self):
        """Forces as (K, N) vectors; only valid for p = 1 datasets."""
        if self.p != 1:
            raise MaskError(f"dataset holds partial forces (p = {self.p}), full forces need p = 1")
        return self.forces.reshape(self.K, self.N)

    def header_dict(self):
        return {"magic": MAGIC.decode(), "version": VERSION, "kind": self.kind, "kind_code": KINDS[self.kind],
                "n": self.n, "m": self.m, "sel": self.sel, "K": self.K,
                "p_num": self.p.numerator, "p_den": self.p.denominator, "seed": self.seed}


def _label(system, snaps, masks):
    forces = system.partial_rhs(snaps, masks)
    return forces.reshape(len(snaps), masks.shape[1], system.m)


def generate_dataset(system, sampling, p, K, seed, audit=0.0):
    """Algorithm for building a partial-force dataset.

    Labels come from ``system.partial_rhs`` only.  ``audit`` is the fraction
    of samples that are additionally checked against the full evaluator.
    """
    p = as_fraction(p)
    sel = mask_size(system.n, p)
    if K < 0:
        raise ValueError("K must be non-negative")
    snaps_per = sampling.snapshots - sampling.skip
    n_traj_auto = sampling.n_traj is None
    n_traj = sampling.n_traj if not n_traj_auto else max(1, math.ceil(K / snaps_per))
    sampling = replace(sampling, n_traj=n_traj)
    if K > n_traj * snaps_per:
        raise ValueError(f"K = {K} exceeds {n_traj} trajectories x {snaps_per} snapshots")
    trajs, ic_params, rngs = simulate_batch(system, sampling, n_traj if K else 0, seed)
    # runs that stop at equilibrium can be short: top up when n_traj was not fixed
    while n_traj_auto and sum(len(t) - sampling.skip for t in trajs) < K:
        more = simulate_batch(system, sampling, 1, seed, first=len(trajs))
        trajs += more[0]
        ic_params += more[1]
        rngs += more[2]
        sampling = replace(sampling, n_traj=len(trajs))
    trajs = [t[sampling.skip:] for t in trajs]
    sizes = [len(t) for t in trajs]
    pool = int(sum(sizes))
    if K > pool:
        raise ValueError(f"K = {K} exceeds the {pool} snapshots produced")
    chosen = Xoshiro256.stream(seed, SELECTION_STREAM).choose(pool, K) if K else np.zeros(0, np.int64)
    bounds = np.cumsum([0] + sizes)
    traj_of = np.searchsorted(bounds, chosen, side="right") - 1
    xs, ms, fs = [], [], []
    for t in np.unique(traj_of):
        local = chosen[traj_of == t] - bounds[t]
        snaps = trajs[t][local]
        masks = np.stack([sample_mask(system.n, p, rngs[t]) for _ in local])
        xs.append(snaps)
        ms.append(masks)
        fs.append(_label(system, snaps, masks))
    x = np.concatenate(xs) if xs else np.zeros((0, system.N))
    masks = np.concatenate(ms) if ms else np.zeros((0, sel), np.int64)
    forces = np.concatenate(fs) if fs else np.zeros((0, sel, system.m))
    ds = Dataset(system.kind, system.n, system.m, p, int(seed), x, masks.astype(np.int64), forces,
                 system.params_dict(),
                 {"sampling": sampling.to_dict(), "initial_conditions": ic_params,
                  "selected": chosen.tolist()})
    if audit > 0 and K:
        audit_dataset(system, ds, audit, seed)
    return ds


def audit_dataset(system, ds, fraction, seed=0):
    """Compare stored forces with the full evaluator on a random subsample."""
    k = max(1, int(round(fraction * ds.K)))
    picks = Xoshiro256.stream(seed, SELECTION_STREAM + 1).choose(ds.K, min(k, ds.K))
    worst = 0.0
    for i in picks:
        full = system.rhs(ds.x[i]).reshape(system.n, system.m)
        worst = max(worst, float(np.max(np.abs(full[ds.masks[i]] - ds.forces[i]), initial=0.0)))
    if worst >= AUDIT_TOL:
        raise AuditError(f"partial forces differ from full evaluation by {worst:.3e}")
    return worst


# -- binary format ---------------------------------------------------------

def encode_dataset(ds):
    head = HEADER.pack(MAGIC, VERSION, KINDS[ds.kind], ds.n, ds.m, ds.sel, ds.K,
                       ds.p.numerator, ds.p.denominator, ds.seed)
    rec = np.dtype([("x", "<f8", (ds.N,)), ("mask", "<u8", (ds.sel,)), ("f", "<f8", (ds.sel * ds.m,))])
    body = np.empty(ds.K, dtype=rec)
    body["x"] = ds.x
    body["mask"] = ds.masks
    body["f"] = ds.forces.reshape(ds.K, ds.sel * ds.m)
    payload = head + body.tobytes()
    return payload + struct.pack("<I", zlib.crc32(payload))


def decode_dataset(raw):
    if len(raw) < HEADER.size:
        raise TruncatedError(f"file holds {len(raw)} bytes, header needs {HEADER.size}")
    magic, version, kind, n, m, sel, K, pn, pd, seed = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"unsupported format version {version}")
    if kind not in KIND_NAMES:
        raise DatasetError(f"unknown system kind code {kind}")
    rec = np.dtype([("x", "<f8", (n * m,)), ("mask", "<u8", (sel,)), ("f", "<f8", (sel * m,))])
    need = HEADER.size + K * rec.itemsize + 4
    if len(raw) < need:
        raise TruncatedError(f"header announces {K} records ({need} bytes), file has {len(raw)}")
    if len(raw) > need:
        raise DatasetError(f"{len(raw) - need} trailing bytes after checksum")
    (crc,) = struct.unpack_from("<I", raw, need - 4)
    if zlib.crc32(raw[: need - 4]) != crc:
        raise ChecksumError("CRC32 mismatch")
    body = np.frombuffer(raw, dtype=rec, count=K, offset=HEADER.size)
    return Dataset(KIND_NAMES[kind], n, m, Fraction(pn, pd), seed,
                   body["x"].astype(np.float64).reshape(K, n * m),
                   body["mask"].astype(np.int64).reshape(K, sel),
                   body["f"].astype(np.float64).reshape(K, sel, m))


def write_dataset(path, ds, extra=None):
    """Write ``path`` and the JSON sidecar ``path + '.json'`` atomically."""
    atomic_write_bytes(path, encode_dataset(ds))
    side = {"header": ds.header_dict(), "system_params": ds.system_params}
    side.update(ds.meta)
    if extra:
        side.update(extra)
    atomic_write_text(f"{path}.json", json.dumps(side, indent=2, sort_keys=True, default=_json_default))


def read_dataset(path):
    with open(path, "rb") as fh:
        ds = decode_dataset(fh.read())
    try:
        with open(f"{path}.json") as fh:
            side = json.load(fh)
        ds.system_params = side.get("system_params", {})
        ds.meta = {k: v for k, v in side.items() if k not in ("header", "system_params")}
    except FileNotFoundError:
        pass
    return ds


def write_trajectories(path, system, trajs, dt, stride, seed, extra=None):
    """Export snapshots with the dataset record layout (empty masks, p = 1)."""
    trajs = np.asarray(trajs, dtype=np.float64)
    flat = trajs.reshape(-1, system.N)
    ds = Dataset(system.kind, system.n, system.m, Fraction(1), int(seed), flat,
                 np.zeros((len(flat), 0), np.int64), np.zeros((len(flat), 0, system.m)),
                 system.params_dict(),
                 {"trajectory_shape": list(trajs.shape), "dt": dt, "stride": stride})
    write_dataset(path, ds, extra)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, Fraction):
        return str(o)
    raise TypeError(type(o))


def configuration_pool(system, sampling, n_traj, seed):
    """Unlabelled configurations from the trajectory distribution, (n_traj * S, N)."""
    trajs, _, _ = simulate_batch(system, sampling, n_traj, seed)
    if not trajs:
        return np.zeros((0, system.N))
    return np.concatenate([t[sampling.skip:] for t in trajs])
