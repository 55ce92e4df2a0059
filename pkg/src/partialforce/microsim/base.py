import numpy as np

KINDS = {"predator_prey": 1, "allen_cahn": 2, "lennard_jones": 3}
KIND_NAMES = {v: k for k, v in KINDS.items()}


class ParameterError(ValueError):
    """Initial-condition or system parameter outside its admissible range."""


class MicroSystem:
    """Common surface of the microscopic systems.

    Subclasses define ``kind``, ``n`` (particles), ``m`` (coordinates per
    particle), ``d_star`` and implement ``rhs``, ``partial_rhs``,
    ``observable``, ``initial`` and ``sample_initial``.
    """

    kind = None
    n = 0
    m = 1
    d_star = 1

    @property
    def N(self):
        return self.n * self.m

    def params_dict(self):
        raise NotImplementedError

    def descriptor(self):
        return {"kind": self.kind, "n": self.n, "m": self.m, "params": self.params_dict()}

    def _check_mask(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexError(f"mask index out of range [0, {self.n})")
        return idx

    def rhs(self, x):
        raise NotImplementedError

    def partial_rhs(self, x, idx):
        """Forces on the particles in ``idx``: shape (k, m), or (B, k, m) for batches."""
        raise NotImplementedError

    def observable(self, x):
        """Return ``(z_star, jac)`` with shapes (..., d_star) and (..., d_star, N)."""
        raise NotImplementedError

    def sample_initial(self, rng):
        """Draw initial-condition parameters from the training box; return (x0, params)."""
        raise NotImplementedError


def as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return (x[None], True) if x.ndim == 1 else (x, False)
