"""Microscopic systems, integrators and macroscopic observables."""

from .allen_cahn import AcParams, AllenCahn
from .base import KIND_NAMES, KINDS, MicroSystem, ParameterError
from .integrate import IntegrationError, euler_step, integrate, rk4_step
from .lennard_jones import LennardJones, LjParams, OverlapError
from .predator_prey import PpParams, PredatorPrey

_CLASSES = {"predator_prey": (PredatorPrey, PpParams), "allen_cahn": (AllenCahn, AcParams),
            "lennard_jones": (LennardJones, LjParams)}


def make_system(kind, params=None):
    """Build a system from its kind name and a (possibly partial) parameter dict."""
    if kind not in _CLASSES:
        raise ParameterError(f"unknown system kind {kind!r}")
    cls, pcls = _CLASSES[kind]
    try:
        return cls(pcls(**(params or {})))
    except TypeError as exc:
        raise ParameterError(str(exc)) from None


__all__ = [
    "AcParams", "AllenCahn", "IntegrationError", "KINDS", "KIND_NAMES", "LennardJones",
    "LjParams", "MicroSystem", "OverlapError", "ParameterError", "PpParams", "PredatorPrey",
    "euler_step", "integrate", "make_system", "rk4_step",
]
