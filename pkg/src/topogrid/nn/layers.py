"""Parameter containers built on the autodiff tensor."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


class Module:
    """Holds named parameters and child modules in insertion order."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix + name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params():
            raise ValueError(f"expected {self.n_params()} parameters, got {flat.size}")
        i = 0
        for p in self.parameters():
            p.data = flat[i:i + p.data.size].reshape(p.shape).copy()
            i += p.data.size

    def grad_flat(self) -> np.ndarray:
        """Gradients in parameter order; parameters off the tape read as zero."""
        return np.concatenate([
            (p.grad if p.grad is not None else np.zeros_like(p.data)).ravel() for p in self.parameters()
        ])


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = glorot(rng, n_in, n_out)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.ndim == 2:
            return ad.matmul(x, self.weight) + self.bias
        # fold leading axes so the weight gradient is one GEMM, not a batch of them
        lead = x.shape[:-1]
        flat = ad.reshape(x, (-1, x.shape[-1]))
        return ad.reshape(ad.matmul(flat, self.weight) + self.bias, lead + (self.bias.shape[0],))


class MLP(Module):
    """tanh hidden layers followed by a linear output layer."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x) -> Tensor:
        for layer in self.layers[:-1]:
            x = ad.tanh(layer(x))
        return self.layers[-1](x)
