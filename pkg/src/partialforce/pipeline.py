"""Config-driven stages: data generation, training, evaluation and checks.

Every stage reads a validated run config (see ``config.py``) and writes its
artifacts under ``paths.workdir``.  Outputs carry the config hash and seed.
"""

import csv
import io
import json
import os
from dataclasses import replace
from fractions import Fraction

import numpy as np

from .closure import (
    Decoder,
    EncoderStack,
    LatentModel,
    TrainConfig,
    build_cache,
    load_ae,
    load_model,
    save_ae,
    save_model,
    train_autoencoder,
    train_dynamics,
)
from .closure.encoder import encode
from .datagen import (
    configuration_pool,
    default_sampling,
    generate_dataset,
    read_dataset,
    write_dataset,
)
from .evalsuite import (
    constant_baseline,
    end_to_end_eval,
    generate_test_set,
    verify_sandwich,
    verify_unbiasedness,
)
from .config import run_hash
from .io_utils import atomic_write_bytes, atomic_write_text, config_hash
from .microsim import make_system
from .rng import Xoshiro256
from .tensor_math import gram_cholesky


class MissingArtifact(FileNotFoundError):
    pass


def _path(cfg, *parts):
    return os.path.join(cfg["paths"]["workdir"], *parts)


def _require(path, producer):
    if not os.path.exists(path):
        raise MissingArtifact(f"{path} not found; run `partialforce {producer}` first")


def system_of(cfg):
    return make_system(cfg["system"]["kind"], cfg["system"]["params"])


def sampling_of(cfg, system, test=False):
    s = default_sampling(system, test=test)
    if test:
        t_end = cfg["eval"]["t_end"]
        return s if t_end is None else replace(s, t_end=t_end)
    data = cfg["data"]
    over = {k: data[k] for k in ("n_traj", "stride", "t_end", "dt", "scheme") if data[k] is not None}
    return replace(s, **over)


def p_of(cfg):
    return Fraction(cfg["data"]["p_num"], cfg["data"]["p_den"])


def provenance(cfg, seed):
    return {"config_hash": run_hash(cfg), "seed": int(seed)}


# -- data --------------------------------------------------------------------

def make_dataset(cfg, K=None, p=None, seed=None):
    system = system_of(cfg)
    K = cfg["data"]["K"] if K is None else K
    p = p_of(cfg) if p is None else Fraction(p)
    seed = cfg["data"]["seed"] if seed is None else seed
    return generate_dataset(system, sampling_of(cfg, system), p, K, seed, audit=cfg["data"]["audit"])


def gen_data(cfg):
    ds = make_dataset(cfg)
    path = _path(cfg, "dataset.pfds")
    write_dataset(path, ds, extra=provenance(cfg, ds.seed))
    return path, ds


# -- autoencoder -------------------------------------------------------------

def ae_pool(cfg, system=None):
    system = system or system_of(cfg)
    a = cfg["ae"]
    return configuration_pool(system, sampling_of(cfg, system), a["pool_traj"], a["pool_seed"])


def fit_ae(cfg, pool, system=None, lambda_cond=None, seed=None, log_path=None):
    """Create and train the encoder/decoder pair on ``pool``."""
    system = system or system_of(cfg)
    a = cfg["ae"]
    seed = a["seed"] if seed is None else seed
    lam = a["lambda_cond"] if lambda_cond is None else lambda_cond
    rng = Xoshiro256(seed)
    stack = EncoderStack.create(system, a["d"], hidden=a["hidden"], rng=rng, activation=a["activation"])
    if stack.front.kind != "identity":
        stack.front.fit_normalization(pool)
    dec = Decoder.create(a["d"], system.N, hidden=a["hidden"], rng=rng, activation=a["activation"])
    tc = TrainConfig(batch=a["batch"], epochs=a["epochs"], lr=a["lr"], seed=seed, lambda_cond=lam)
    hist = train_autoencoder(stack, dec, pool, tc, log_path)
    return stack, dec, hist


def encoder_kappa(stack, x):
    """Per-sample condition number of phi' phi'^T."""
    _, phi_prime = encode(stack, x)
    return gram_cholesky(phi_prime)[1]


def train_ae(cfg):
    system = system_of(cfg)
    pool = ae_pool(cfg, system)
    stack, dec, hist = fit_ae(cfg, pool, system, log_path=_path(cfg, "ae_log.csv"))
    kap = encoder_kappa(stack, pool)
    extra = dict(provenance(cfg, cfg["ae"]["seed"]), lambda_cond=cfg["ae"]["lambda_cond"],
                 kappa_mean=float(kap.mean()), kappa_max=float(kap.max()))
    save_ae(_path(cfg, "ae"), stack, dec, cfg["ae"]["seed"], extra)
    return stack, dec, hist


def load_trained_ae(cfg):
    _require(_path(cfg, "ae.enc.json"), "train-ae")
    stack, dec, _ = load_ae(_path(cfg, "ae"), system_of(cfg))
    return stack, dec


# -- dynamics ----------------------------------------------------------------

def dataset_cache(cfg, stack, ds, loss_kind=None):
    kind = loss_kind or cfg["dyn"]["loss_kind"]
    return build_cache(stack, kind, ds.x, ds.masks, ds.forces, Fraction(ds.p))


def fit_dynamics(cfg, stack, cache, seed, log_path=None):
    dyn = cfg["dyn"]
    model = LatentModel.create(stack.d, hidden=dyn["hidden"], rng=Xoshiro256.stream(seed, 0),
                               activation=dyn["activation"])
    tc = TrainConfig(batch=dyn["batch"], epochs=dyn["epochs"], lr=dyn["lr"], seed=seed,
                     loss_kind=cache.kind)
    hist = train_dynamics(stack, model, tc, cache=cache, log_path=log_path)
    return model, hist


def repeat_seeds(cfg):
    return [cfg["dyn"]["seed"] + r for r in range(cfg["dyn"]["repeats"])]


def train_dyn(cfg):
    stack, _ = load_trained_ae(cfg)
    path = _path(cfg, "dataset.pfds")
    _require(path, "gen-data")
    ds = read_dataset(path)
    cache = dataset_cache(cfg, stack, ds)
    models = []
    for r, seed in enumerate(repeat_seeds(cfg)):
        model, _ = fit_dynamics(cfg, stack, cache, seed, log_path=_path(cfg, f"dyn_r{r}_log.csv"))
        save_model(_path(cfg, f"dyn_r{r}"), model, seed,
                   dict(provenance(cfg, seed), loss_kind=cache.kind, K=ds.K, p=str(ds.p)))
        models.append(model)
    return models


# -- evaluation --------------------------------------------------------------

def test_set(cfg, system=None):
    """Ground-truth test trajectories, cached in the workdir by (n_test, test_seed)."""
    system = system or system_of(cfg)
    ev = cfg["eval"]
    key = config_hash({"system": cfg["system"], "n_test": ev["n_test"], "test_seed": ev["test_seed"],
                       "t_end": ev["t_end"]})
    path = _path(cfg, f"testset_{key}.npz")
    if os.path.exists(path):
        with np.load(path) as f:
            return f["x0"], f["z"]
    x0, z, _ = generate_test_set(system, ev["n_test"], ev["test_seed"], sampling_of(cfg, system, test=True))
    buf = io.BytesIO()
    np.savez(buf, x0=x0, z=z)
    atomic_write_bytes(path, buf.getvalue())
    return x0, z


def evaluate_models(cfg, stack, models, x0, z):
    sampling = default_sampling(stack.system, test=True)
    dt_snap = sampling.dt * sampling.stride
    errs, blown = [], []
    for model in models:
        r = end_to_end_eval(stack, model, x0, z, dt_snap=dt_snap, dt_latent=cfg["eval"]["dt_latent"])
        errs.append(r["error"])
        blown.append(r["blown_up"])
    return np.array(errs), blown


def _csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def evaluate(cfg):
    stack, _ = load_trained_ae(cfg)
    models = []
    for r in range(cfg["dyn"]["repeats"]):
        _require(_path(cfg, f"dyn_r{r}.json"), "train-dyn")
        models.append(load_model(_path(cfg, f"dyn_r{r}"))[0])
    x0, z = test_set(cfg, stack.system)
    errs, blown = evaluate_models(cfg, stack, models, x0, z)
    prov = provenance(cfg, cfg["eval"]["test_seed"])
    rows = [dict(repeat=r, seed=s, error=f"{e:.6e}", blown_up=b, config_hash=prov["config_hash"])
            for r, (s, e, b) in enumerate(zip(repeat_seeds(cfg), errs, blown))]
    report = dict(prov, loss_kind=cfg["dyn"]["loss_kind"], n_test=len(x0), errors=errs.tolist(),
                  mean=float(errs.mean()), std=float(errs.std()), median=float(np.median(errs)),
                  constant_baseline=constant_baseline(z))
    atomic_write_text(_path(cfg, "eval.csv"), _csv(rows))
    atomic_write_text(_path(cfg, "eval.json"), json.dumps(report, indent=2))
    return report


# -- loss identity checks --------------------------------------------------

def orthonormal_rows(rng, d, n):
    """A d x n matrix with orthonormal rows from Gaussian draws (QR)."""
    a = rng.normals(n * d).reshape(n, d)
    q, _ = np.linalg.qr(a)
    return q.T


def verify(cfg):
    """Sandwich over random theta and batches, plus unbiasedness on one state."""
    stack, _ = load_trained_ae(cfg)
    system = stack.system
    v = cfg["verify"]
    rng = Xoshiro256(v["seed"])
    pool = ae_pool(cfg, system)
    dyn = cfg["dyn"]
    worst, held = 0.0, 0
    total = v["thetas"] * v["batches"]
    batches = [pool[np.array(rng.choose(len(pool), v["batch_size"]))] for _ in range(v["batches"])]
    forces = [system.rhs(b) for b in batches]
    for t in range(v["thetas"]):
        model = LatentModel.create(stack.d, hidden=dyn["hidden"], rng=Xoshiro256.stream(v["seed"], 1 + t),
                                   activation=dyn["activation"])
        for b, f in zip(batches, forces):
            rep = verify_sandwich(stack, model, b, f)
            held += rep.holds
            scale = max(abs(rep.L_z), 1e-300)
            worst = max(worst, (rep.lower - rep.L_z) / scale, (rep.L_z - rep.upper) / scale)
    # unbiasedness at the configured sampling fraction (1/5 for full-force configs)
    p = p_of(cfg) if p_of(cfg) < 1 else Fraction(1, 5)
    model = LatentModel.create(stack.d, hidden=dyn["hidden"], rng=Xoshiro256(v["seed"]),
                               activation=dyn["activation"])
    x = pool[0]
    ub = verify_unbiasedness(stack, model, x, system.rhs(x), p, trials=v["mc_trials"], seed=v["seed"])
    report = dict(provenance(cfg, v["seed"]), sandwich_checks=total, sandwich_held=held,
                  sandwich_worst_violation=worst, unbiasedness=ub.to_dict())
    atomic_write_text(_path(cfg, "verify.json"), json.dumps(report, indent=2, default=str))
    return report


# -- data-budget error table -----------------------------------------------

TABLE3_COLUMNS = ("K_equiv", "loss", "p", "K", "mean", "std", "errors")


def table3(cfg, progress=None):
    """Error table over equivalent data budgets for L_x and L_xp at each p."""
    system = system_of(cfg)
    stack, _ = load_trained_ae(cfg) if os.path.exists(_path(cfg, "ae.enc.json")) else train_ae(cfg)[:2]
    x0, z = test_set(cfg, system)
    rows = []
    for e in cfg["table3"]["K_equiv"]:
        cols = [("L_x", Fraction(1))] + [("L_xp", Fraction(s)) for s in cfg["table3"]["p"]]
        for loss, p in cols:
            K = int(Fraction(e) / p)
            ds = make_dataset(cfg, K=K, p=p)
            cache = dataset_cache(cfg, stack, ds, loss)
            models = [fit_dynamics(cfg, stack, cache, s)[0] for s in repeat_seeds(cfg)]
            errs, _ = evaluate_models(cfg, stack, models, x0, z)
            rows.append(dict(K_equiv=e, loss=loss, p=str(p), K=K, mean=f"{errs.mean():.4e}",
                             std=f"{errs.std():.4e}", errors=" ".join(f"{x:.4e}" for x in errs)))
            if progress:
                progress(rows[-1])
    h = run_hash(cfg)
    text = f"# config_hash={h} seed={cfg['data']['seed']}\n" + _csv(rows)
    atomic_write_text(_path(cfg, "table3.csv"), text)
    return rows
