from typing import Optional

import numpy as np

from kdsr.autograd import ParamGroup, Parameter, Tensor, relu, softmax
from kdsr.backbones.base_backbone import Backbone
from kdsr.config import BackboneConfig
from kdsr.errors import ConfigError
from kdsr.layers import LayerNorm, Linear, Module, gaussian

# Additive score for masked positions; exp() of it underflows to exactly 0.
MASKED = -1e9
POSITION_INIT_STD = 0.01
FFN_WIDTH = 4


def causal_mask(steps: int) -> np.ndarray:
    """(steps, steps) additive mask; row t keeps columns 0..t."""
    return np.triu(np.full((steps, steps), MASKED), k=1)


class AttentionBlock(Module):
    """Pre-norm block: x + MHA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, name: str, dim: int, heads: int, rng: Optional[np.random.Generator]):
        self.heads = heads
        self.attn_norm = LayerNorm(f"{name}.attn_norm", dim)
        self.query = Linear(f"{name}.query", dim, dim, rng)
        self.key = Linear(f"{name}.key", dim, dim, rng)
        self.value = Linear(f"{name}.value", dim, dim, rng)
        self.proj = Linear(f"{name}.proj", dim, dim, rng)
        self.ffn_norm = LayerNorm(f"{name}.ffn_norm", dim)
        self.ffn_in = Linear(f"{name}.ffn_in", dim, FFN_WIDTH * dim, rng)
        self.ffn_out = Linear(f"{name}.ffn_out", FFN_WIDTH * dim, dim, rng)

    def parameters(self) -> list[Parameter]:
        layers: list[Module] = [
            self.attn_norm,
            self.query,
            self.key,
            self.value,
            self.proj,
            self.ffn_norm,
            self.ffn_in,
            self.ffn_out,
        ]
        return [p for layer in layers for p in layer.parameters()]

    def _split_heads(self, x: Tensor) -> Tensor:
        batch, steps, dim = x.shape
        return x.reshape(batch, steps, self.heads, dim // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        batch, steps, dim = x.shape
        normed = self.attn_norm(x)
        q = self._split_heads(self.query(normed))
        k = self._split_heads(self.key(normed))
        v = self._split_heads(self.value(normed))

        scores = q @ k.transpose(0, 1, 3, 2) / float(np.sqrt(dim // self.heads)) + mask
        mixed = (softmax(scores, axis=-1) @ v).transpose(0, 2, 1, 3).reshape(batch, steps, dim)
        x = x + self.proj(mixed)
        return x + self.ffn_out(relu(self.ffn_in(self.ffn_norm(x))))


class AttnBackbone(Backbone):
    """Causal self-attention encoder with learned positions and a final layer norm."""

    def __init__(
        self,
        dim: int,
        max_length: int,
        rng: Optional[np.random.Generator],
        layers: int = 2,
        heads: int = 2,
    ) -> None:
        super().__init__(dim, max_length)
        if heads < 1 or dim % heads != 0:
            raise ConfigError(f"{heads} heads do not divide hidden size {dim}")
        if rng is None:
            raise ValueError("attention backbone needs an rng for its initial weights")
        self.positions = Parameter(
            gaussian(rng, (max_length, dim), POSITION_INIT_STD), "attn.positions", ParamGroup.OTHER
        )
        self.blocks = [AttentionBlock(f"attn.block{i}", dim, heads, rng) for i in range(layers)]
        self.final_norm = LayerNorm("attn.final_norm", dim)

    @classmethod
    def from_config(cls, cfg: BackboneConfig, rng: np.random.Generator) -> "AttnBackbone":
        return cls(cfg.dim, cfg.max_length, rng, layers=cfg.layers, heads=cfg.heads)

    def get_name(self) -> str:
        return "attn"

    def parameters(self) -> list[Parameter]:
        params = [self.positions]
        for block in self.blocks:
            params += block.parameters()
        return params + self.final_norm.parameters()

    def encode(self, fused: Tensor) -> Tensor:
        """Inputs longer than the learned positions keep only their last `max_length` steps."""
        if fused.shape[1] > self.max_length:
            fused = fused[:, -self.max_length :]
        steps = fused.shape[1]
        x = fused + self.positions[:steps]
        mask = causal_mask(steps)
        for block in self.blocks:
            x = block(x, mask)
        return self.final_norm(x)
