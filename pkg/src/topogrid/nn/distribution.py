"""Factorised categorical policy with per-element invalid-action masking."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class MaskedCategoricalSet:
    """Independent categoricals, one per element, over padded ``[B, E, K]`` logits.

    Masked slots get probability exactly 0 (their logits act as -inf).  The
    do-nothing choice is always valid, so no element is ever fully masked.
    """

    def __init__(self, logits: Tensor, mask: np.ndarray):
        mask = np.asarray(mask, dtype=bool)
        if logits.shape != mask.shape:
            raise ValueError(f"logits {logits.shape} and mask {mask.shape} differ in shape")
        self.logits = logits
        self.mask = mask
        self.log_p = ad.masked_log_softmax(logits, mask, axis=-1)

    @property
    def probs(self) -> np.ndarray:
        return np.where(self.mask, np.exp(self.log_p.data), 0.0)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF draw per element; returns int64 ``[B, E]``."""
        p = self.probs
        cdf = np.cumsum(p, axis=-1)
        u = rng.random(p.shape[:-1] + (1,)) * cdf[..., -1:]
        # first valid slot whose cumulative mass exceeds u; zero-mass slots
        # never satisfy this before their predecessor does
        hit = (cdf > u) & self.mask
        return np.argmax(hit, axis=-1).astype(np.int64)

    def argmax(self) -> np.ndarray:
        """Most probable valid choice per element; ties go to the lowest index."""
        filled = np.where(self.mask, self.logits.data, -np.inf)
        return np.argmax(filled, axis=-1).astype(np.int64)

    def log_prob(self, actions: np.ndarray) -> Tensor:
        """Sum over elements of the chosen choice's log probability, shape ``[B]``."""
        actions = np.asarray(actions, dtype=np.int64)
        if not np.all(np.take_along_axis(self.mask, actions[..., None], axis=-1)):
            raise ValueError("action selects a masked choice")
        picked = ad.take_along(self.log_p, actions[..., None], axis=-1)
        return ad.tsum(picked, axis=(1, 2))

    def entropy(self) -> Tensor:
        """Sum over elements of per-element entropy (valid choices only), shape ``[B]``."""
        p = ad.exp(self.log_p) * self.mask
        return ad.neg(ad.tsum(p * self.log_p, axis=(1, 2)))
