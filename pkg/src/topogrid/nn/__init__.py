"""Autodiff, encoders, masked policy and checkpoints."""

from .autodiff import Tensor, backward, no_grad
from .checkpoint import CheckpointError, load_into, read_checkpoint, save_checkpoint
from .distribution import MaskedCategoricalSet
from .encoders import ENCODERS, make_encoder
from .optim import Adam
from .policy import PolicyNetwork

__all__ = [
    "Adam", "CheckpointError", "ENCODERS", "MaskedCategoricalSet", "PolicyNetwork", "Tensor",
    "backward", "load_into", "make_encoder", "no_grad", "read_checkpoint", "save_checkpoint",
]
