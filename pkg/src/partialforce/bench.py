"""Wall-clock cost of partial versus full force evaluation for Lennard-Jones.

Partial evaluation touches only the masked atoms and their cell-list
neighbours, so at fixed density its cost should not grow with the box.
"""

import csv
import io
import time

import numpy as np

from .io_utils import atomic_write_text
from .microsim import LennardJones, LjParams
from .rng import Xoshiro256

SIZES = (108, 256, 500, 864)


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def partial_force_scaling(sizes=SIZES, mask_size=50, repeats=7, seed=0, density=0.8):
    """Rows of (n_atoms, mask, partial_s, full_s); times are medians over ``repeats`` runs."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rows = []
    for n in sizes:
        system = LennardJones(LjParams(n_atoms=n, density=density))
        x = system.initial(1.0, seed)
        k = min(mask_size, n)
        mask = np.array(Xoshiro256.stream(seed, n).choose(n, k), dtype=np.int64)
        system.partial_rhs(x, mask)  # warm-up
        part = _median_time(lambda: system.partial_rhs(x, mask), repeats)
        full = _median_time(lambda: system.rhs(x), repeats)
        rows.append({"n_atoms": n, "mask": k, "partial_s": part, "full_s": full})
    return rows


def to_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["n_atoms", "mask", "partial_s", "full_s"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "partial_s": f"{r['partial_s']:.6e}", "full_s": f"{r['full_s']:.6e}"})
    return buf.getvalue()


def growth(rows):
    """(partial time ratio, full time ratio) between the largest and smallest size."""
    a, b = rows[0], rows[-1]
    return b["partial_s"] / a["partial_s"], b["full_s"] / a["full_s"]


def run(path=None, **kw):
    rows = partial_force_scaling(**kw)
    if path:
        atomic_write_text(path, to_csv(rows))
    return rows
