import numpy as np

from kdsr.autograd import Tensor
from kdsr.config import BackboneConfig
from kdsr.layers import Module


class Backbone(Module):
    def __init__(self, dim: int, max_length: int) -> None:
        self.dim = dim
        self.max_length = max_length

    @classmethod
    def from_config(cls, cfg: BackboneConfig, rng: np.random.Generator) -> "Backbone":
        raise RuntimeError("from_config not implemented!")

    def encode(self, fused: Tensor) -> Tensor:
        """
        Params:
            fused       (batch, steps, dim) fused item inputs, right-padded

        Return:
            Tensor      (batch, steps, dim) hidden states; h_t only sees positions <= t
        """
        raise RuntimeError("encode not implemented!")

    def get_name(self) -> str:
        raise RuntimeError("get_name not implemented yet!")
