"""
Student side of distillation: the trainable embedding tables and, per modality channel, a
holistic head g_φ and a dissected head W_out(ReLU(W_c |e_i - e_j|)).
"""

from typing import Mapping, Optional

import numpy as np
import numpy.typing as npt

from kdsr.autograd import (
    Array,
    ParamGroup,
    Parameter,
    Tensor,
    absolute,
    cross_entropy,
    relu,
    sigmoid,
    take_rows,
)
from kdsr.corpus import Channel
from kdsr.errors import ArgumentError, DimensionError, ItemLookupError, ShapeError
from kdsr.layers import Linear, Module, gaussian
from kdsr.scoring import ScoringKind, score_tensors

ID_INIT_STD = 0.01


class EmbeddingBank(Module):
    """
    ID table e_v plus one modality table per channel, all in the embedding LR group.

    Modality tables start as row copies of the teacher's compressed matrices. Without
    modality they are zero and frozen, which gives the ID-only reference model.
    """

    def __init__(
        self,
        item_count: int,
        dim: int,
        rng: np.random.Generator,
        compressed: Optional[Mapping[Channel, Array]] = None,
        use_modality: bool = True,
    ) -> None:
        self.item_count = item_count
        self.dim = dim
        self.use_modality = use_modality
        self.id_table = Parameter(
            gaussian(rng, (item_count, dim), ID_INIT_STD), "bank.id", ParamGroup.EMBEDDING
        )
        self.modality: dict[Channel, Parameter] = {}
        for channel in Channel:
            if use_modality and compressed is not None:
                values = np.array(compressed[channel], dtype=np.float64)
                if values.shape != (item_count, dim):
                    raise ShapeError(
                        f"{channel.value} table needs shape {(item_count, dim)}, got {values.shape}"
                    )
            else:
                values = np.zeros((item_count, dim))
            self.modality[channel] = Parameter(
                values, f"bank.{channel.value}", ParamGroup.EMBEDDING, trainable=use_modality
            )

    @property
    def image_table(self) -> Parameter:
        return self.modality[Channel.IMAGE]

    @property
    def text_table(self) -> Parameter:
        return self.modality[Channel.TEXT]

    def parameters(self) -> list[Parameter]:
        return [self.id_table] + [self.modality[channel] for channel in Channel]


class HolisticHead(Module):
    """g_φ, a square linear map that starts at the identity."""

    def __init__(self, name: str, dim: int) -> None:
        self.transform = Linear(name, dim, dim, weight=np.eye(dim))

    def __call__(self, e: Tensor) -> Tensor:
        return self.transform(e)

    def parameters(self) -> list[Parameter]:
        return self.transform.parameters()


class DissectedHead(Module):
    def __init__(self, name: str, dim: int, codes: int, rng: np.random.Generator) -> None:
        self.hidden = Linear(f"{name}.hidden", dim, dim, rng)
        self.out = Linear(f"{name}.out", dim, codes, rng)

    @property
    def codes(self) -> int:
        return self.out.weight.shape[1]

    def parameters(self) -> list[Parameter]:
        return self.hidden.parameters() + self.out.parameters()


class ChannelHeads(Module):
    def __init__(self, channel: Channel, dim: int, codes: int, rng: np.random.Generator) -> None:
        self.channel = channel
        self.holistic = HolisticHead(f"heads.{channel.value}.holistic", dim)
        self.dissected = DissectedHead(f"heads.{channel.value}.dissected", dim, codes, rng)

    def parameters(self) -> list[Parameter]:
        return self.holistic.parameters() + self.dissected.parameters()


def lookup(table: Parameter, items: npt.NDArray[np.int64]) -> Tensor:
    items = np.asarray(items, dtype=np.int64)
    n = table.shape[0]
    if items.size and (items.min() < 0 or items.max() >= n):
        raise ItemLookupError(f"item index outside [0, {n}) in {table.name}")
    return take_rows(table, items)


def holistic_predict(head: HolisticHead, kind: ScoringKind, e_i: Tensor, e_j: Tensor) -> Tensor:
    """r̂ per row: ξ(g_φ(e_i), g_φ(e_j))."""
    if e_i.shape != e_j.shape:
        raise DimensionError(f"cannot pair {e_i.shape} with {e_j.shape}")
    return score_tensors(kind, head(e_i), head(e_j))


def kd_soft_loss(
    teacher_scores: Array, student_scores: Tensor, tau: float, soft: bool = True
) -> Tensor:
    """
    Mean over pairs of (σ(r/τ) - σ(r̂/τ))².

    With `soft=False` the raw scores are compared directly (hard match).
    """
    r = np.asarray(teacher_scores, dtype=np.float64)
    if r.size == 0:
        raise ArgumentError("kd_soft_loss needs at least one pair")
    if r.shape != student_scores.shape:
        raise DimensionError(f"{r.shape} teacher scores vs {student_scores.shape} student scores")
    if tau <= 0:
        raise ArgumentError(f"temperature must be positive, got {tau}")
    if soft:
        target = sigmoid(Tensor(r / tau)).data
        diff = sigmoid(student_scores / tau) - target
    else:
        diff = student_scores - r
    return (diff * diff).mean()


def dissected_logits(head: DissectedHead, e_i: Tensor, e_j: Tensor) -> Tensor:
    if e_i.shape != e_j.shape:
        raise DimensionError(f"cannot pair {e_i.shape} with {e_j.shape}")
    return head.out(relu(head.hidden(absolute(e_i - e_j))))


def kd_code_loss(logits: Tensor, codes: npt.NDArray[np.int64]) -> Tensor:
    """Mean cross-entropy of per-pair logits against the teacher's code indices."""
    codes = np.asarray(codes, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != len(codes):
        raise ArgumentError(f"{logits.shape} logits for {len(codes)} teacher codes")
    if len(codes) == 0:
        raise ArgumentError("kd_code_loss needs at least one pair")
    if codes.min() < 0 or codes.max() >= logits.shape[1]:
        raise ArgumentError(f"teacher code outside [0, {logits.shape[1]})")
    return cross_entropy(logits, codes)
