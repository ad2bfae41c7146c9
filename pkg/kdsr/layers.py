from abc import ABC, abstractmethod
from typing import Optional

import numpy as np

from kdsr.autograd import Array, ParamGroup, Parameter, Tensor, sqrt


class Module(ABC):
    """Anything holding Parameters; `parameters()` order is stable and defines checkpoints."""

    @abstractmethod
    def parameters(self) -> list[Parameter]: ...


def gaussian(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> Array:
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    """y = x W + b with W stored (in, out)."""

    def __init__(
        self,
        name: str,
        in_dim: int,
        out_dim: int,
        rng: Optional[np.random.Generator] = None,
        bias: bool = True,
        weight: Optional[Array] = None,
    ) -> None:
        if weight is None:
            if rng is None:
                raise ValueError(f"{name}: need an rng or explicit weights")
            weight = gaussian(rng, (in_dim, out_dim), 1.0 / np.sqrt(in_dim))
        if weight.shape != (in_dim, out_dim):
            raise ValueError(f"{name}: weight shape {weight.shape} != {(in_dim, out_dim)}")
        self.weight = Parameter(weight, f"{name}.weight", ParamGroup.OTHER)
        self.bias: Optional[Parameter] = (
            Parameter(np.zeros(out_dim), f"{name}.bias", ParamGroup.OTHER) if bias else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out

    def parameters(self) -> list[Parameter]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class LayerNorm(Module):
    def __init__(self, name: str, dim: int, eps: float = 1e-6) -> None:
        self.gain = Parameter(np.ones(dim), f"{name}.gain", ParamGroup.OTHER)
        self.shift = Parameter(np.zeros(dim), f"{name}.shift", ParamGroup.OTHER)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        centred = x - x.mean(axis=-1, keepdims=True)
        var = (centred * centred).mean(axis=-1, keepdims=True)
        return centred / sqrt(var + self.eps) * self.gain + self.shift

    def parameters(self) -> list[Parameter]:
        return [self.gain, self.shift]
