from typing import Optional

import numpy as np

from kdsr.autograd import Parameter, Tensor, sigmoid, stack, tanh
from kdsr.backbones.base_backbone import Backbone
from kdsr.config import BackboneConfig
from kdsr.layers import Linear


class GruBackbone(Backbone):
    """
    Single-layer GRU from a zero initial state:

        z = σ(x W_z + h U_z + b_z)
        r = σ(x W_r + h U_r + b_r)
        g = tanh(x W_g + r * (h U_g) + b_g)
        h = (1 - z) * g + z * h
    """

    def __init__(self, dim: int, max_length: int, rng: Optional[np.random.Generator]) -> None:
        super().__init__(dim, max_length)
        self.input_update = Linear("gru.input_update", dim, dim, rng)
        self.input_reset = Linear("gru.input_reset", dim, dim, rng)
        self.input_candidate = Linear("gru.input_candidate", dim, dim, rng)
        self.hidden_update = Linear("gru.hidden_update", dim, dim, rng, bias=False)
        self.hidden_reset = Linear("gru.hidden_reset", dim, dim, rng, bias=False)
        self.hidden_candidate = Linear("gru.hidden_candidate", dim, dim, rng, bias=False)

    @classmethod
    def from_config(cls, cfg: BackboneConfig, rng: np.random.Generator) -> "GruBackbone":
        return cls(cfg.dim, cfg.max_length, rng)

    def get_name(self) -> str:
        return "gru"

    def parameters(self) -> list[Parameter]:
        return [
            p
            for layer in (
                self.input_update,
                self.input_reset,
                self.input_candidate,
                self.hidden_update,
                self.hidden_reset,
                self.hidden_candidate,
            )
            for p in layer.parameters()
        ]

    def cell(self, x: Tensor, h: Tensor) -> Tensor:
        z = sigmoid(self.input_update(x) + self.hidden_update(h))
        r = sigmoid(self.input_reset(x) + self.hidden_reset(h))
        g = tanh(self.input_candidate(x) + r * self.hidden_candidate(h))
        return (1.0 - z) * g + z * h

    def encode(self, fused: Tensor) -> Tensor:
        batch, steps, _ = fused.shape
        h = Tensor(np.zeros((batch, self.dim)))
        states = []
        for t in range(steps):
            h = self.cell(fused[:, t, :], h)
            states.append(h)
        return stack(states, axis=1)
