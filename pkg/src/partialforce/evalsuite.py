"""Latent rollouts, the trajectory error metric, and the loss-identity checks."""

import itertools
import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from . import diffnet
from .closure.encoder import encode
from .closure.losses import loss_lx, loss_lxp, loss_lz, mask_coords, masked_pinv_rows
from .datagen import default_sampling, mask_size, simulate_batch
from .microsim.integrate import rk4_step
from .rng import Xoshiro256
from .tensor_math import sym_eig

SANDWICH_SLACK = 1e-8


@dataclass
class RolloutSpec:
    dt_latent: float = 0.1
    t_end: float = 30.0
    scheme: str = "rk4"

    def __post_init__(self):
        if self.dt_latent <= 0:
            raise ValueError("dt_latent must be positive")
        if self.scheme != "rk4":
            raise ValueError("only rk4 rollouts are supported")

    @property
    def steps(self):
        return int(round(self.t_end / self.dt_latent))


def rollout(model, z0, spec):
    """RK4 trajectory of dz/dt = g(z); returns ``(traj, finite)``.

    ``traj`` has shape (steps + 1, d) or (B, steps + 1, d).  A trajectory that
    leaves the finite range is frozen at its last finite state and flagged
    ``False`` in ``finite``.
    """
    z = np.array(z0, dtype=np.float64)
    single = z.ndim == 1
    z = z[None] if single else z
    if z.shape[1] != model.spec.n_in:
        raise ValueError(f"z0 has size {z.shape[1]}, model expects {model.spec.n_in}")

    def g(y):
        return diffnet.forward(model.spec, model.params, y)[0]

    ok = np.ones(z.shape[0], dtype=bool)
    out = [z.copy()]
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(spec.steps):
            nxt = rk4_step(g, z, spec.dt_latent)
            good = np.all(np.isfinite(nxt), axis=1) & ok
            ok &= good
            z = np.where(good[:, None], nxt, z)
            out.append(z.copy())
    traj = np.stack(out, axis=1)
    return (traj[0], bool(ok[0])) if single else (traj, ok)


def mean_relative_error(true, pred):
    """Average over trajectories of sum_t ||true - pred||^2 / sum_t ||true||^2.

    Inputs have shape (B, S, d) (or (S, d) for one trajectory).
    """
    t = np.asarray(true, dtype=np.float64)
    q = np.asarray(pred, dtype=np.float64)
    if t.shape != q.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {q.shape}")
    if t.ndim == 2:
        t, q = t[None], q[None]
    den = np.sum(t * t, axis=(1, 2))
    if np.any(den == 0):
        raise ZeroDivisionError("a reference trajectory is identically zero")
    return float(np.mean(np.sum((t - q) ** 2, axis=(1, 2)) / den))


def per_trajectory_errors(true, pred):
    t = np.asarray(true, dtype=np.float64)
    q = np.asarray(pred, dtype=np.float64)
    return np.sum((t - q) ** 2, axis=(1, 2)) / np.sum(t * t, axis=(1, 2))


# -- two-sided bound between the latent and microscopic losses --------------

@dataclass
class SandwichReport:
    b1: float
    b2: float
    C: float
    L_z: float
    L_x: float
    lower: float
    upper: float
    holds: bool

    def to_dict(self):
        return asdict(self)


def sandwich_terms(phi_prime, forces):
    """Batch eigenvalue extremes of phi' phi'^T and the theta-free constant C.

    C = -mean ||(I - P) f||^2 with P the projector onto the row space of
    phi', computed as ||f||^2 - (phi' f)^T G^{-1} (phi' f).
    """
    gram = phi_prime @ np.swapaxes(phi_prime, -1, -2)
    lam = sym_eig(gram).eigenvalues
    w = np.einsum("bdn,bn->bd", phi_prime, forces)
    proj = np.einsum("bd,bd->b", w, np.linalg.solve(gram, w[..., None])[..., 0])
    resid = np.sum(forces * forces, axis=1) - proj
    return float(lam[:, -1].min()), float(lam[:, 0].max()), float(-np.mean(resid))


def verify_sandwich(stack, model, x, forces, slack=SANDWICH_SLACK):
    """Check b1 (L_x + C) <= L_z <= b2 (L_x + C) on a full-force batch."""
    x = np.asarray(x, dtype=np.float64)
    f = np.asarray(forces, dtype=np.float64).reshape(x.shape)
    _, phi_prime = encode(stack, x)
    b1, b2, c = sandwich_terms(phi_prime, f)
    lz = loss_lz(stack, model, x, f)[0]
    lx = loss_lx(stack, model, x, f)[0]
    base = lx + c
    lower, upper = b1 * base, b2 * base
    tol = slack * max(abs(lz), abs(upper), 1e-300)
    holds = bool(lower - tol <= lz <= upper + tol)
    return SandwichReport(b1, b2, c, lz, lx, lower, upper, holds)


# -- unbiasedness of the partial-force loss ---------------------------------

@dataclass
class UnbiasednessReport:
    L_x: float
    mc_mean: float
    mc_std: float
    trials: int
    z_score: float
    rel_dev: float
    enum_mean: float = None
    enum_count: int = 0

    def to_dict(self):
        return asdict(self)


def particle_residuals(stack, model, x, forces):
    """Per-particle squared residuals ||f_j - pinv(phi')_j g||^2 for one state."""
    sys_ = stack.system
    full = np.arange(sys_.n)
    x = np.asarray(x, dtype=np.float64)[None]
    z, phi_prime = encode(stack, x)
    rows = masked_pinv_rows(phi_prime, mask_coords(full[None], sys_.m))
    g = diffnet.forward(model.spec, model.params, z)[0]
    res = np.asarray(forces, dtype=np.float64).reshape(1, -1) - np.einsum("bkd,bd->bk", rows, g)
    return np.sum(res.reshape(sys_.n, sys_.m) ** 2, axis=1)


def verify_unbiasedness(stack, model, x, forces, p, trials=10000, seed=0, enumerate_limit=6):
    """Compare the mask-average of L_x,p with L_x for one state.

    Monte Carlo over ``trials`` fresh masks; for n <= ``enumerate_limit``
    additionally the exact average over every mask of size n*p.
    """
    sys_ = stack.system
    p = Fraction(p)
    k = mask_size(sys_.n, p)
    f = np.asarray(forces, dtype=np.float64).reshape(sys_.n, sys_.m)
    lx = loss_lx(stack, model, np.asarray(x)[None], f.reshape(1, -1))[0]
    r = particle_residuals(stack, model, x, f)
    rng = Xoshiro256(seed)
    inv_p = float(1 / p)
    vals = np.array([inv_p * r[rng.choose(sys_.n, k)].sum() for _ in range(trials)])
    mean = float(vals.mean()) if trials else float("nan")
    std = float(vals.std(ddof=1)) if trials > 1 else 0.0
    se = std / math.sqrt(trials) if trials > 1 else 0.0
    z = (mean - lx) / se if se > 0 else 0.0
    rep = UnbiasednessReport(lx, mean, std, trials, float(z), abs(mean - lx) / lx if lx else 0.0)
    if sys_.n <= enumerate_limit:
        masks = [np.array(c) for c in itertools.combinations(range(sys_.n), k)]
        ev = [loss_lxp(stack, model, np.asarray(x)[None], m[None], f[m][None], p)[0] for m in masks]
        rep.enum_mean = float(np.mean(ev))
        rep.enum_count = len(masks)
    return rep


# -- end-to-end evaluation ---------------------------------------------------

def generate_test_set(system, n_test, test_seed, sampling=None):
    """Ground-truth test trajectories: returns (x0 (B, N), z_star (B, S, d*), params).

    Snapshots before ``sampling.t_start`` are dropped, so ``x0`` is the state
    at the first kept observation.
    """
    sampling = sampling or default_sampling(system, test=True)
    trajs, params, _ = simulate_batch(system, sampling, n_test, test_seed)
    if not trajs:
        raise ValueError("n_test must be positive")
    trajs = [t[sampling.skip:] for t in trajs]
    longest = max(len(t) for t in trajs)
    # runs stopped at equilibrium are held at their final state
    trajs = np.stack([np.concatenate([t, np.repeat(t[-1:], longest - len(t), axis=0)]) for t in trajs])
    zs, _ = system.observable(trajs.reshape(-1, system.N))
    return trajs[:, 0], zs.reshape(trajs.shape[0], trajs.shape[1], -1), params


def predict_observables(stack, model, x0, n_snap, dt_snap, dt_latent=None):
    """Encode x0, roll out, and return predicted z* at the snapshot times."""
    dt_latent = dt_latent or dt_snap
    ratio = int(round(dt_snap / dt_latent))
    if ratio < 1 or abs(ratio * dt_latent - dt_snap) > 1e-9 * dt_snap:
        raise ValueError("snapshot spacing must be a multiple of the latent step")
    z0, _ = encode(stack, np.asarray(x0), with_jacobian=False)
    spec = RolloutSpec(dt_latent, (n_snap - 1) * dt_snap)
    traj, ok = rollout(model, z0, spec)
    return traj[:, ::ratio, : stack.d_star], ok


def end_to_end_eval(stack, model, x0, z_true, dt_snap=0.1, dt_latent=None):
    """Mean relative error of predicted observables on a test set."""
    pred, ok = predict_observables(stack, model, x0, z_true.shape[1], dt_snap, dt_latent)
    errs = per_trajectory_errors(z_true, pred)
    return {"error": float(errs.mean()), "per_trajectory": errs.tolist(),
            "blown_up": int(np.sum(~ok))}


def constant_baseline(z_true):
    """Error of predicting z*(t) = z*(0) for all t."""
    pred = np.broadcast_to(z_true[:, :1], z_true.shape)
    return mean_relative_error(z_true, pred)
