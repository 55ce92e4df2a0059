"""A small end-to-end predator-prey run through the same stages as the CLI.

The stages are:
1. simulate trajectories and store configurations with the forces of 20% of
   the cells;
2. train the autoencoder, whose first two latent coordinates are the mean
   prey and predator densities;
3. freeze it and fit the latent vector field with the partial-force loss;
4. roll the latent ODE forward from encoded test states and compare the
   observables.

The budget here is a fifth of the default one (600 equivalent full-force
samples), so it finishes in a couple of minutes.  `partialforce gen-data && partialforce train-ae && ...` runs the
full-size version.
"""

import sys
import tempfile

from partialforce import pipeline as pl
from partialforce.closure import load_model
from partialforce.config import load_config
from partialforce.evalsuite import predict_observables

work = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="pf_demo_")
cfg = load_config(None, [f"paths.workdir={work}", "data.K=3000", "dyn.repeats=2",
                         "eval.n_test=10"])

path, ds = pl.gen_data(cfg)
print(f"dataset: K={ds.K} configurations, {ds.sel} of {ds.n} cells carry forces (p={ds.p}) -> {path}")

stack, _, hist = pl.train_ae(cfg)
print(f"autoencoder: reconstruction {hist.rows[-1]['rec']:.2e}, "
      f"mean condition number {hist.rows[-1]['kappa_mean']:.3g}")

pl.train_dyn(cfg)
rep = pl.evaluate(cfg)
print(f"latent model errors: {', '.join(f'{e:.2e}' for e in rep['errors'])}")
print(f"holding the initial observable fixed gives {rep['constant_baseline']:.2e}")

# one test trajectory, true against predicted mean prey density
x0, z = pl.test_set(cfg, stack.system)
model, _ = load_model(pl._path(cfg, "dyn_r0"))
pred, _ = predict_observables(stack, model, x0[:1], z.shape[1], 0.1)
for t in (0, 50, 100, 200, z.shape[1] - 1):
    print(f"t={0.1 * (t + 1):5.1f}  prey true {z[0, t, 0]:.4f}  predicted {pred[0, t, 0]:.4f}")
