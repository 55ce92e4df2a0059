"""Run configuration: one JSON document plus ``key.path=value`` overrides."""

import copy
import json
from fractions import Fraction

from .io_utils import config_hash
from .microsim import ParameterError, make_system


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


LATENT_DIM = {"predator_prey": 4, "allen_cahn": 32, "lennard_jones": 32}

DEFAULTS = {
    "system": {"kind": "predator_prey", "params": {}},
    "data": {"K": 15000, "p_num": 1, "p_den": 5, "seed": 0, "n_traj": None, "stride": None,
             "t_end": None, "dt": None, "scheme": None, "audit": 0.0},
    "ae": {"d": None, "hidden": [64, 64, 64], "activation": "softplus", "lambda_cond": 1e-6,
           "epochs": 30, "lr": 1e-3, "batch": 64, "seed": 1, "pool_traj": 10, "pool_seed": 12345},
    "dyn": {"loss_kind": "L_xp", "hidden": [64, 64, 64], "activation": "softplus", "epochs": 150,
            "lr": 1e-3, "batch": 64, "seed": 0, "repeats": 3},
    "eval": {"n_test": 100, "dt_latent": 0.1, "test_seed": 777, "t_end": None},
    "verify": {"thetas": 100, "batches": 20, "batch_size": 32, "mc_trials": 10000, "seed": 5},
    "table3": {"K_equiv": [600, 3000], "p": ["3/4", "1/2", "1/4", "1/5"]},
    "paths": {"workdir": "runs/default"},
}

_KINDS = {"L_z", "L_x", "L_xp"}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"{path}{k}", "unknown key")
        if isinstance(out[k], dict) and k != "params":
            if not isinstance(v, dict):
                raise ConfigError(f"{path}{k}", "expected an object")
            out[k] = _merge(out[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def parse_override(text):
    """``a.b.c=value`` -> (["a", "b", "c"], value); the value is parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key.path=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(key, "empty path component")
    return parts, val


def apply_override(cfg, parts, val):
    node = cfg
    for i, k in enumerate(parts[:-1]):
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(".".join(parts[: i + 1]), "unknown key")
        node = node[k]
    if not isinstance(node, dict):
        raise ConfigError(".".join(parts), "not an object")
    # system parameters are open-ended; make_system validates them
    if parts[-1] not in node and parts[-2:-1] != ["params"]:
        raise ConfigError(".".join(parts), "unknown key")
    node[parts[-1]] = val


def _need(cond, path, message):
    if not cond:
        raise ConfigError(path, message)


def validate(cfg):
    """Check types and ranges; returns the config with derived fields filled in."""
    kind = cfg["system"]["kind"]
    _need(kind in LATENT_DIM, "system.kind", f"unknown system kind {kind!r}")
    _need(isinstance(cfg["system"]["params"], dict), "system.params", "expected an object")
    try:
        system = make_system(kind, cfg["system"]["params"])
    except (ParameterError, ValueError) as exc:
        raise ConfigError("system.params", str(exc)) from None
    data = cfg["data"]
    for key in ("K", "p_num", "p_den", "seed"):
        _need(isinstance(data[key], int) and data[key] >= 0, f"data.{key}", "expected a non-negative integer")
    _need(data["p_num"] > 0 and data["p_den"] > 0 and data["p_num"] <= data["p_den"], "data.p_num",
          "p must lie in (0, 1]")
    p = Fraction(data["p_num"], data["p_den"])
    _need((system.n * p).denominator == 1, "data.p_den", f"n*p = {system.n}*{p} is not an integer")
    for key in ("n_traj", "stride"):
        _need(data[key] is None or (isinstance(data[key], int) and data[key] > 0), f"data.{key}",
              "expected a positive integer or null")
    for blk in ("ae", "dyn"):
        b = cfg[blk]
        _need(isinstance(b["hidden"], list) and all(isinstance(h, int) and h > 0 for h in b["hidden"]),
              f"{blk}.hidden", "expected a list of positive integers")
        _need(b["activation"] in ("tanh", "softplus"), f"{blk}.activation", "tanh or softplus")
        _need(isinstance(b["epochs"], int) and b["epochs"] >= 0, f"{blk}.epochs", "expected an integer >= 0")
        _need(isinstance(b["batch"], int) and b["batch"] >= 1, f"{blk}.batch", "expected an integer >= 1")
        _need(isinstance(b["lr"], (int, float)) and b["lr"] > 0, f"{blk}.lr", "expected a positive number")
    _need(isinstance(cfg["ae"]["lambda_cond"], (int, float)) and cfg["ae"]["lambda_cond"] >= 0,
          "ae.lambda_cond", "expected a non-negative number")
    if cfg["ae"]["d"] is None:
        cfg["ae"]["d"] = LATENT_DIM[kind]
    _need(isinstance(cfg["ae"]["d"], int) and cfg["ae"]["d"] > system.d_star, "ae.d",
          f"latent dim must exceed d* = {system.d_star}")
    _need(cfg["dyn"]["loss_kind"] in _KINDS, "dyn.loss_kind", "one of L_z, L_x, L_xp")
    _need(cfg["dyn"]["loss_kind"] == "L_xp" or p == 1, "dyn.loss_kind",
          f"{cfg['dyn']['loss_kind']} needs a full-force dataset (p = 1)")
    _need(isinstance(cfg["dyn"]["repeats"], int) and cfg["dyn"]["repeats"] >= 1, "dyn.repeats",
          "expected an integer >= 1")
    ev = cfg["eval"]
    _need(isinstance(ev["n_test"], int) and ev["n_test"] >= 1, "eval.n_test", "expected an integer >= 1")
    _need(isinstance(ev["dt_latent"], (int, float)) and ev["dt_latent"] > 0, "eval.dt_latent",
          "expected a positive number")
    _need(ev["t_end"] is None or (isinstance(ev["t_end"], (int, float)) and ev["t_end"] > 0), "eval.t_end",
          "expected a positive number or null")
    for i, s in enumerate(cfg["table3"]["p"]):
        try:
            q = Fraction(s)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"table3.p[{i}]", f"not a fraction: {s!r}") from None
        _need(0 < q < 1 and (system.n * q).denominator == 1, f"table3.p[{i}]", "need 0 < p < 1 with n*p integral")
    _need(all(isinstance(k, int) and k > 0 for k in cfg["table3"]["K_equiv"]), "table3.K_equiv",
          "expected positive integers")
    _need(isinstance(cfg["paths"]["workdir"], str) and cfg["paths"]["workdir"], "paths.workdir",
          "expected a path")
    return cfg


def load_config(path=None, overrides=()):
    """Defaults <- JSON file <- overrides, validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(str(path), "top level must be an object")
        cfg = _merge(cfg, user)
    for text in overrides:
        parts, val = parse_override(text)
        apply_override(cfg, parts, val)
    return validate(cfg)


def run_hash(cfg):
    """Hash of everything except ``paths``, so a run is identified independently of where it is written."""
    return config_hash({k: v for k, v in cfg.items() if k != "paths"})
