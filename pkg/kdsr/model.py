"""
The student recommender: fused item inputs, a sequence backbone, the long/short-term readout
and full-catalogue dot-product scoring, plus the per-channel KD heads.
"""

from typing import Dict, Mapping, Optional, Sequence, Type

import numpy as np
import numpy.typing as npt

from kdsr.autograd import Array, Parameter, Tensor, concat, cross_entropy, no_grad, relu, softmax
from kdsr.backbones.attn_backbone import MASKED, AttnBackbone
from kdsr.backbones.base_backbone import Backbone
from kdsr.backbones.gru_backbone import GruBackbone
from kdsr.config import BackboneKind, TrainConfig
from kdsr.corpus import Channel
from kdsr.errors import ArgumentError, DimensionError
from kdsr.layers import Linear, Module
from kdsr.student import ChannelHeads, EmbeddingBank, lookup

# Padding slots reuse item 0; every read of them is masked out.
PAD_ITEM = 0


def pad_batch(sequences: Sequence[Sequence[int]]) -> tuple[npt.NDArray[np.int64], np.ndarray]:
    """Right-pad to the longest sequence; returns (items, lengths)."""
    if not sequences:
        raise ArgumentError("cannot pad an empty batch")
    lengths = np.array([len(seq) for seq in sequences], dtype=np.int64)
    if lengths.min() < 1:
        raise ArgumentError("every sequence needs at least one item")
    items = np.full((len(sequences), int(lengths.max())), PAD_ITEM, dtype=np.int64)
    for row, seq in enumerate(sequences):
        items[row, : len(seq)] = seq
    return items, lengths


def fuse(bank: EmbeddingBank, items: npt.NDArray[np.int64]) -> Tensor:
    """e_v + e_a + e_b per position."""
    fused = lookup(bank.id_table, items)
    for channel in Channel:
        fused = fused + lookup(bank.modality[channel], items)
    return fused


class Readout(Module):
    """
    P = W3 [h^s; h^l] at every prefix end t, where h^l is the mean of h_1..h_t and h^s is the
    softmax(W2 ReLU(W1 h_i))-weighted sum over the last `window` positions up to t.
    """

    def __init__(self, dim: int, window: int, rng: Optional[np.random.Generator]) -> None:
        if window < 1:
            raise ArgumentError(f"readout window must be >= 1, got {window}")
        self.window = window
        self.w1 = Linear("readout.w1", dim, dim, rng, bias=False)
        self.w2 = Linear("readout.w2", dim, 1, rng, bias=False)
        self.w3 = Linear("readout.w3", 2 * dim, dim, rng, bias=False)

    def parameters(self) -> list[Parameter]:
        return self.w1.parameters() + self.w2.parameters() + self.w3.parameters()

    def window_mask(self, steps: int) -> Array:
        t = np.arange(steps)[:, None]
        i = np.arange(steps)[None, :]
        inside = (i <= t) & (i > t - self.window)
        return np.where(inside, 0.0, MASKED)

    def attention(self, hiddens: Tensor) -> Tensor:
        """α as (batch, steps, steps): row t holds the weights for the prefix ending at t."""
        batch, steps, _ = hiddens.shape
        logits = self.w2(relu(self.w1(hiddens))).reshape(batch, 1, steps)
        return softmax(logits + self.window_mask(steps), axis=-1)

    def __call__(self, hiddens: Tensor) -> Tensor:
        steps = hiddens.shape[1]
        if steps < 1:
            raise ArgumentError("readout needs at least one hidden state")
        long_term = Tensor(np.tril(np.ones((steps, steps))) / np.arange(1, steps + 1)[:, None])
        h_long = long_term @ hiddens
        h_short = self.attention(hiddens) @ hiddens
        return self.w3(concat([h_short, h_long], axis=-1))


def score_items(p: Tensor, bank: EmbeddingBank) -> Tensor:
    """ŷ = P e_vᵀ over the whole catalogue."""
    if p.shape[-1] != bank.dim:
        raise DimensionError(f"representation width {p.shape[-1]} vs embeddings {bank.dim}")
    return p @ bank.id_table.transpose(1, 0)


def truncate(seq: Sequence[int], limit: int) -> list[int]:
    return list(seq[-limit:]) if len(seq) > limit else list(seq)


class StudentModel(Module):
    backbone_mapping: Dict[BackboneKind, Type[Backbone]] = {
        BackboneKind.GRU: GruBackbone,
        BackboneKind.ATTN: AttnBackbone,
    }

    def __init__(
        self,
        item_count: int,
        cfg: TrainConfig,
        rng: np.random.Generator,
        compressed: Optional[Mapping[Channel, Array]] = None,
    ) -> None:
        dim = cfg.backbone.dim
        self.cfg = cfg
        self.max_length = cfg.backbone.max_length
        self.bank = EmbeddingBank(item_count, dim, rng, compressed, cfg.student.use_modality)
        backbone_class = StudentModel.backbone_mapping[cfg.backbone.kind]
        self.backbone = backbone_class.from_config(cfg.backbone, rng)
        self.readout = Readout(dim, cfg.backbone.window, rng)
        self.heads = {
            channel: ChannelHeads(channel, dim, cfg.teacher.codes, rng) for channel in Channel
        }

    @property
    def item_count(self) -> int:
        return self.bank.item_count

    def parameters(self) -> list[Parameter]:
        params = self.bank.parameters() + self.backbone.parameters() + self.readout.parameters()
        for channel in Channel:
            params += self.heads[channel].parameters()
        return params

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def represent(self, items: npt.NDArray[np.int64]) -> Tensor:
        """P for every prefix of a right-padded (batch, steps) item matrix."""
        return self.readout(self.backbone.encode(fuse(self.bank, items)))

    def rec_loss(self, sequences: Sequence[Sequence[int]]) -> Tensor:
        """
        Next-item cross-entropy at every position (inputs seq[:-1], targets seq[1:]), averaged
        over all valid positions. Sequences keep their most recent max_length + 1 items.
        """
        kept = [truncate(seq, self.max_length + 1) for seq in sequences]
        kept = [seq for seq in kept if len(seq) >= 2]
        if not kept:
            raise ArgumentError("rec_loss needs a sequence with at least two items")
        items, lengths = pad_batch([seq[:-1] for seq in kept])
        rows, cols = np.nonzero(np.arange(items.shape[1])[None, :] < lengths[:, None])
        targets = np.array([kept[r][c + 1] for r, c in zip(rows, cols)], dtype=np.int64)

        p = self.represent(items)
        dim = p.shape[-1]
        flat = p.reshape(-1, dim)[rows * items.shape[1] + cols]
        return cross_entropy(score_items(flat, self.bank), targets)

    def score_prefixes(self, prefixes: Sequence[Sequence[int]]) -> Array:
        """Catalogue logits after each prefix (its most recent max_length items)."""
        kept = [truncate(prefix, self.max_length) for prefix in prefixes]
        items, lengths = pad_batch(kept)
        with no_grad():
            p = self.represent(items)
            last = p.data[np.arange(len(kept)), lengths - 1]
            return score_items(Tensor(last), self.bank).data
