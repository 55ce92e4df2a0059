"""Checkpoint helpers for the autoencoder pair and the latent model.

An autoencoder checkpoint ``prefix`` is two MLP checkpoints:
``prefix.enc.{json,bin}`` (with the front-end description in its metadata)
and ``prefix.dec.{json,bin}``.
"""

from ..diffnet import load_checkpoint, save_checkpoint
from .encoder import EncoderStack, front_from_dict
from .losses import Decoder, LatentModel


def save_ae(prefix, stack, decoder, seed=0, extra=None):
    meta = dict(extra or {})
    meta.update(role="encoder", front=stack.front.to_dict(), d=stack.d, d_star=stack.d_star,
                system=stack.system.descriptor())
    save_checkpoint(f"{prefix}.enc", stack.spec, stack.params, seed, meta)
    dmeta = dict(extra or {})
    dmeta.update(role="decoder", d=stack.d)
    save_checkpoint(f"{prefix}.dec", decoder.spec, decoder.params, seed, dmeta)


def load_ae(prefix, system):
    spec, params, meta = load_checkpoint(f"{prefix}.enc")
    front = front_from_dict(system, meta["front"])
    stack = EncoderStack(system, front, spec, params)
    dspec, dparams, _ = load_checkpoint(f"{prefix}.dec")
    return stack, Decoder(dspec, dparams), meta


def save_model(prefix, model, seed=0, extra=None):
    meta = dict(extra or {})
    meta.update(role="latent_model")
    save_checkpoint(prefix, model.spec, model.params, seed, meta)


def load_model(prefix):
    spec, params, meta = load_checkpoint(prefix)
    return LatentModel(spec, params), meta
