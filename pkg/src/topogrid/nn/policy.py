"""Actor-critic network: shared encoder, tanh MLP heads."""

from __future__ import annotations

import hashlib

import numpy as np

from ..actions import MAX_DIM, ActionLayout, layout
from ..grid import GridSpec
from . import autodiff as ad
from .autodiff import Tensor
from .distribution import MaskedCategoricalSet
from .encoders import HIDDEN, make_encoder
from .layers import MLP, Module


class PolicyNetwork(Module):
    def __init__(self, spec: GridSpec, encoder: str = "flat", seed: int | np.random.Generator = 0,
                 hidden: int = HIDDEN, noop_prior: float = 0.0, reference_prior: float = 0.0):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.layout: ActionLayout = layout(spec)
        self.variant = encoder
        self.hidden = hidden
        self.encoder = make_encoder(encoder, spec, rng, hidden)
        n_out = self.layout.n_elements * MAX_DIM
        self.actor = MLP([hidden, 128, 128, 128, n_out], rng)
        self.critic = MLP([hidden, 128, 128, 128, 1], rng)
        # start near do-nothing (and near the reference busbar-1 topology) so
        # early exploration does not wreck the grid
        bias = self.actor.layers[-1].bias.data.reshape(self.layout.n_elements, MAX_DIM)
        rows = np.arange(self.layout.n_elements)
        bias[rows, self.layout.noop] += noop_prior
        bias[rows, self.layout.reference] += reference_prior

    def featurize(self, obs):
        return self.encoder.featurize(obs)

    def collate(self, items):
        return self.encoder.collate(items)

    def forward(self, batch) -> tuple[Tensor, Tensor]:
        """Padded logits ``[B, E, MAX_DIM]`` and values ``[B]``."""
        z = self.encoder(batch)
        b = z.shape[0]
        logits = ad.reshape(self.actor(z), (b, self.layout.n_elements, MAX_DIM))
        values = ad.reshape(self.critic(z), (b,))
        return logits, values

    def distribution(self, batch, masks: np.ndarray) -> tuple[MaskedCategoricalSet, Tensor]:
        logits, values = self.forward(batch)
        return MaskedCategoricalSet(logits, masks), values

    def act(self, obs_list, masks: np.ndarray, rng: np.random.Generator | None = None):
        """Sample (or argmax when ``rng`` is None) without recording a graph.

        Returns actions ``[B, E]``, their log probabilities and the values.
        """
        with ad.no_grad():
            batch = self.collate([self.featurize(o) for o in obs_list])
            dist, values = self.distribution(batch, masks)
            actions = dist.argmax() if rng is None else dist.sample(rng)
            logp = dist.log_prob(actions).data
        return actions, logp, values.data

    def value(self, obs_list) -> np.ndarray:
        with ad.no_grad():
            _, values = self.forward(self.collate([self.featurize(o) for o in obs_list]))
        return values.data

    def schema(self) -> str:
        shapes = ";".join(f"{n}:{'x'.join(map(str, p.shape))}" for n, p in self.named_parameters())
        return f"{self.layout.schema()}|{self.variant}|{self.hidden}|{shapes}"

    def schema_hash(self) -> bytes:
        return hashlib.sha256(self.schema().encode()).digest()
