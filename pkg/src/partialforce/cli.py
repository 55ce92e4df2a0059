"""Command-line entry point: ``partialforce <command> [--config FILE] [key.path=value ...]``.

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 numerical abort.
"""

import argparse
import json
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

COMMANDS = ("gen-data", "train-ae", "train-dyn", "eval", "verify", "reproduce-table3", "bench", "show-config")

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


def build_parser():
    ap = argparse.ArgumentParser(prog="partialforce", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("overrides", nargs="*", metavar="key.path=value", help="config overrides")
    ap.add_argument("-c", "--config", help="JSON run config (defaults are used for missing keys)")
    ap.add_argument("--threads", type=int, help="cap on BLAS/worker threads")
    return ap


def _say(msg):
    print(msg, flush=True)


def _run(cmd, cfg):
    from . import pipeline as pl

    if cmd == "show-config":
        _say(json.dumps(cfg, indent=2))
    elif cmd == "gen-data":
        path, ds = pl.gen_data(cfg)
        _say(f"wrote {path}: kind={ds.kind} n={ds.n} m={ds.m} N={ds.N} K={ds.K} p={ds.p}")
    elif cmd == "train-ae":
        stack, _, hist = pl.train_ae(cfg)
        last = hist.rows[-1] if hist.rows else {}
        _say(f"autoencoder d={stack.d} final rec={last.get('rec', float('nan')):.3e} "
             f"-> {pl._path(cfg, 'ae')}.{{enc,dec}}.*")
    elif cmd == "train-dyn":
        models = pl.train_dyn(cfg)
        _say(f"trained {len(models)} latent model(s) -> {pl._path(cfg, 'dyn_r*')}")
    elif cmd == "eval":
        rep = pl.evaluate(cfg)
        _say(f"{rep['loss_kind']}: error {rep['mean']:.3e} +- {rep['std']:.3e} over {len(rep['errors'])} "
             f"repeat(s); constant baseline {rep['constant_baseline']:.3e}")
    elif cmd == "verify":
        rep = pl.verify(cfg)
        ub = rep["unbiasedness"]
        _say(f"sandwich held {rep['sandwich_held']}/{rep['sandwich_checks']}; "
             f"unbiasedness rel dev {ub['rel_dev']:.2e} (z = {ub['z_score']:.2f})")
    elif cmd == "bench":
        from . import bench

        path = pl._path(cfg, "bench.csv")
        rows = bench.run(path)
        part, full = bench.growth(rows)
        _say(bench.to_csv(rows).rstrip())
        _say(f"partial time x{part:.2f}, full time x{full:.2f} from {rows[0]['n_atoms']} to "
             f"{rows[-1]['n_atoms']} atoms -> {path}")
    elif cmd == "reproduce-table3":
        def show(row):
            _say(f"K_equiv={row['K_equiv']:>6} {row['loss']:>4} p={row['p']:>4}: {row['mean']} +- {row['std']}")
        pl.table3(cfg, progress=show)
        _say(f"wrote {pl._path(cfg, 'table3.csv')}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            _say("error: --threads must be >= 1")
            return EXIT_CONFIG
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    from .closure import TrainingDivergence
    from .config import ConfigError, load_config
    from .datagen import DatasetError
    from .microsim import IntegrationError
    from .tensor_math import RankDeficientError

    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        _say(f"config error at {exc}")
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        _say(f"config file not found: {exc.filename}")
        return EXIT_MISSING
    try:
        _run(args.command, cfg)
    except (FileNotFoundError, DatasetError) as exc:
        _say(f"missing or unreadable artifact: {exc}")
        return EXIT_MISSING
    except (TrainingDivergence, IntegrationError, RankDeficientError, FloatingPointError) as exc:
        _say(f"numerical abort: {exc}")
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
