"""Regenerate the golden datasets.  Only run this together with a format-version bump."""

import os

from partialforce.datagen import Sampling, generate_dataset, write_dataset
from partialforce.microsim import LennardJones, PredatorPrey

HERE = os.path.dirname(os.path.abspath(__file__))

GOLDEN = {
    "golden_pp.pfds": (PredatorPrey, Sampling(t_end=0.05, dt=1e-4, scheme="euler", stride=100, n_traj=2),
                       "1/5", 4, 2024),
    "golden_lj.pfds": (LennardJones, Sampling(t_end=0.004, dt=0.001, scheme="velocity_verlet", stride=2,
                                              n_traj=1), "1/4", 2, 7),
}


def build(name):
    cls, sampling, p, k, seed = GOLDEN[name]
    return generate_dataset(cls(), sampling, p, k, seed)


if __name__ == "__main__":
    for name in GOLDEN:
        write_dataset(os.path.join(HERE, name), build(name))
        print("wrote", name)
