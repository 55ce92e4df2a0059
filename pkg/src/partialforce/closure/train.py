"""Adam optimizer and the two training loops (autoencoder, then dynamics)."""

import csv
import io
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..io_utils import atomic_write_text
from ..rng import Xoshiro256
from .losses import ae_loss_and_grad, build_cache, cached_loss_and_grad


class TrainingDivergence(FloatingPointError):
    def __init__(self, message, epoch, step):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class Adam:
    """Textbook Adam with bias correction, updating a flat array in place."""

    def __init__(self, size, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        self.v += (1.0 - b2) * grad * grad
        m_hat = self.m / (1.0 - b1**self.t)
        v_hat = self.v / (1.0 - b2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainConfig:
    batch: int = 64
    epochs: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_cond: float = 1e-6
    loss_kind: str = "L_xp"
    seed: int = 0
    patience: int = 10
    min_lr: float = 1e-6
    plateau_tol: float = 1e-3

    def __post_init__(self):
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("batch must be >= 1 and epochs >= 0")
        if self.lambda_cond < 0:
            raise ValueError("lambda_cond must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class History:
    rows: list = field(default_factory=list)

    def add(self, **row):
        self.rows.append(row)

    @property
    def losses(self):
        return [r["loss"] for r in self.rows]

    def to_csv(self):
        if not self.rows:
            return ""
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()

    def write_csv(self, path):
        atomic_write_text(path, self.to_csv())


class _Plateau:
    """Halve the learning rate when the epoch loss stops improving."""

    def __init__(self, opts, cfg):
        self.opts = opts
        self.cfg = cfg
        self.best = np.inf
        self.wait = 0

    def update(self, loss):
        if loss < self.best * (1.0 - self.cfg.plateau_tol):
            self.best = loss
            self.wait = 0
            return
        self.wait += 1
        if self.wait >= self.cfg.patience:
            for o in self.opts:
                o.lr = max(o.lr * 0.5, self.cfg.min_lr)
            self.wait = 0


def _batches(rng, k, size):
    order = rng.permutation(k)
    return [order[i : i + size] for i in range(0, k, size)]


def train_autoencoder(stack, decoder, x, cfg, log_path=None):
    """Train phi_hat and psi jointly on the configurations ``x`` (K, N)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty autoencoder training set")
    rng = Xoshiro256(cfg.seed)
    opt_e = Adam(stack.params.flat.size, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    opt_d = Adam(decoder.params.flat.size, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    plateau = _Plateau([opt_e, opt_d], cfg)
    hist = History()
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        tot = rec = 0.0
        kappas = []
        batches = _batches(rng, x.shape[0], cfg.batch)
        for step, idx in enumerate(batches):
            val, g_e, g_d, info = ae_loss_and_grad(stack, decoder, x[idx], cfg.lambda_cond)
            if not (np.isfinite(val) and np.all(np.isfinite(g_e)) and np.all(np.isfinite(g_d))):
                raise TrainingDivergence(f"autoencoder loss diverged at epoch {epoch}, step {step}", epoch, step)
            opt_e.step(stack.params.flat, g_e)
            opt_d.step(decoder.params.flat, g_d)
            tot += val * len(idx)
            rec += info["rec"] * len(idx)
            if info["kappa"] is not None:
                kappas.append(info["kappa"])
        loss = tot / x.shape[0]
        kap = np.concatenate(kappas) if kappas else np.array([np.nan])
        hist.add(epoch=epoch, loss=loss, rec=rec / x.shape[0], lr=opt_e.lr,
                 kappa_mean=float(np.mean(kap)), kappa_max=float(np.max(kap)),
                 wall_time=round(time.perf_counter() - t0, 3))
        plateau.update(loss)
    if log_path:
        hist.write_csv(log_path)
    return hist


def train_dynamics(stack, model, cfg, cache=None, x=None, masks=None, forces=None, p=1, log_path=None):
    """Minibatch Adam on the frozen-encoder dynamics loss.

    Either pass a prebuilt ``QuadraticCache`` or the raw data from which it
    is built.  The encoder parameters are never touched.
    """
    if cache is None:
        cache = build_cache(stack, cfg.loss_kind, x, masks, forces, p)
    if cache.K == 0:
        raise ValueError("empty dynamics training set")
    rng = Xoshiro256(cfg.seed)
    opt = Adam(model.params.flat.size, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    plateau = _Plateau([opt], cfg)
    hist = History()
    kap = cache.kappa if cache.kappa is not None and len(cache.kappa) else np.array([np.nan])
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        tot = 0.0
        for step, idx in enumerate(_batches(rng, cache.K, cfg.batch)):
            val, grad = cached_loss_and_grad(model, cache, idx)
            if not (np.isfinite(val) and np.all(np.isfinite(grad))):
                raise TrainingDivergence(f"dynamics loss diverged at epoch {epoch}, step {step}", epoch, step)
            opt.step(model.params.flat, grad)
            tot += val * len(idx)
        loss = tot / cache.K
        hist.add(epoch=epoch, loss=loss, lr=opt.lr, kappa_mean=float(np.mean(kap)),
                 kappa_max=float(np.max(kap)), wall_time=round(time.perf_counter() - t0, 3))
        plateau.update(loss)
    if log_path:
        hist.write_csv(log_path)
    return hist


def training_loss(model, cache):
    """Full-dataset cached loss (no update)."""
    return cached_loss_and_grad(model, cache, np.arange(cache.K))[0]
