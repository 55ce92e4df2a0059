"""Encoder/decoder, dynamics losses and training loops."""

from .checkpoint import load_ae, load_model, save_ae, save_model
from .encoder import (
    EncoderStack,
    FrontEnd,
    IdentityFront,
    KineticBinsFront,
    PatchPoolFront,
    default_front,
    encode,
)
from .losses import (
    Decoder,
    LatentModel,
    MaskSizeError,
    QuadraticCache,
    ae_loss_and_grad,
    build_cache,
    cached_loss_and_grad,
    loss_lx,
    loss_lxp,
    loss_lz,
    mask_coords,
    masked_pinv_rows,
)
from .train import Adam, History, TrainConfig, TrainingDivergence, train_autoencoder, train_dynamics

__all__ = [
    "Adam", "Decoder", "EncoderStack", "FrontEnd", "History", "IdentityFront", "KineticBinsFront",
    "LatentModel", "MaskSizeError", "PatchPoolFront", "QuadraticCache", "TrainConfig",
    "TrainingDivergence", "ae_loss_and_grad", "build_cache", "cached_loss_and_grad", "default_front",
    "encode", "load_ae", "load_model", "loss_lx", "loss_lxp", "loss_lz", "mask_coords",
    "masked_pinv_rows", "save_ae", "save_model", "train_autoencoder", "train_dynamics",
]
