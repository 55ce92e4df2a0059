"""Why a handful of particle forces is enough to train latent dynamics.

We take a small predator-prey grid, a random encoder and a random latent
model, and compare three losses on one state:

* L_x uses every force block;
* L_x,p uses only the n*p blocks in a random mask, rescaled by 1/p;
* L_z measures the mismatch in latent space.

Averaged over masks, L_x,p equals L_x.  And L_z is squeezed between
b1 (L_x + C) and b2 (L_x + C), where b1, b2 are eigenvalue extremes of the
encoder's Gram matrix.
"""

import itertools
from fractions import Fraction

import numpy as np

from partialforce.closure import EncoderStack, LatentModel, loss_lx, loss_lxp
from partialforce.evalsuite import verify_sandwich, verify_unbiasedness
from partialforce.microsim import PpParams, PredatorPrey
from partialforce.rng import Xoshiro256

system = PredatorPrey(PpParams(grid=3))  # n = 6 cells (3 prey, 3 predator)
stack = EncoderStack.create(system, 4, hidden=(8,), rng=Xoshiro256(1), activation="tanh")
model = LatentModel.create(4, hidden=(8,), rng=Xoshiro256(2), activation="tanh")

rng = np.random.default_rng(0)
x = np.concatenate([rng.uniform(0.1, 0.8, 3), rng.uniform(0.1, 0.8, 3)])
f = system.rhs(x)
lx = loss_lx(stack, model, x[None], f[None])[0]
print(f"L_x with all 6 force blocks:       {lx:.10f}")

# every mask of 2 cells out of 6 (p = 1/3): the mean is exactly L_x
p = Fraction(1, 3)
vals = []
for mask in itertools.combinations(range(6), 2):
    m = np.array(mask)
    vals.append(loss_lxp(stack, model, x[None], m[None], f[m][None, :, None], p)[0])
print(f"mean of L_x,p over all {len(vals)} masks:   {np.mean(vals):.10f}")
print(f"single masks range from {min(vals):.4f} to {max(vals):.4f}")

# Monte Carlo on the full 100-cell system with p = 1/5
big = PredatorPrey()
stack_big = EncoderStack.create(big, 4, hidden=(16,), rng=Xoshiro256(3), activation="tanh")
model_big = LatentModel.create(4, hidden=(16,), rng=Xoshiro256(4), activation="tanh")
xb = np.concatenate([rng.uniform(0.1, 0.8, 50), rng.uniform(0.1, 0.8, 50)])
rep = verify_unbiasedness(stack_big, model_big, xb, big.rhs(xb), Fraction(1, 5), trials=10000, seed=7)
print(f"\nn = 100, p = 1/5, 10^4 masks: mean {rep.mc_mean:.6g} vs L_x {rep.L_x:.6g} "
      f"(z = {rep.z_score:.2f}, rel dev {rep.rel_dev:.1e})")

# the latent loss sits between the two scaled copies of L_x + C
batch = np.stack([np.concatenate([rng.uniform(0.1, 0.8, 3), rng.uniform(0.1, 0.8, 3)]) for _ in range(16)])
s = verify_sandwich(stack, model, batch, system.rhs(batch))
print(f"\nb1 = {s.b1:.3g}, b2 = {s.b2:.3g}, C = {s.C:.4g}")
print(f"{s.lower:.5g} <= L_z = {s.L_z:.5g} <= {s.upper:.5g}: {s.holds}")
