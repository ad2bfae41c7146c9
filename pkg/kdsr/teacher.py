"""
The correlation teacher: compress a frozen modality matrix with a linear autoencoder, then
answer item-pair queries with a holistic score r_ij and a dissected correlation code c_ij.
"""

import logging
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import numpy.typing as npt

from kdsr.autograd import Array, Tensor
from kdsr.codebook import (
    Codebook,
    QuantizerKind,
    assign_codes,
    fit_codebook_kmeans,
    fit_codebook_vq,
)
from kdsr.config import TeacherConfig
from kdsr.corpus import Channel, ModalityMatrix
from kdsr.errors import (
    ArgumentError,
    CheckpointError,
    ConfigError,
    DimensionError,
    ItemLookupError,
    SelfPairError,
    ShapeError,
    TeacherTrainingError,
)
from kdsr.layers import Linear
from kdsr.numerics import Adam, matmul
from kdsr.rng import Stream, make_stream
from kdsr.scoring import ScoringKind, holistic_score, segment_scores

logger = logging.getLogger(__name__)

ARTIFACT_MAGIC = b"KDTC"
ARTIFACT_VERSION = 1
SCORING_CODES = list(ScoringKind)
QUANTIZER_CODES = list(QuantizerKind)


class Autoencoder:
    """Linear encoder d_m -> d_c and decoder d_c -> d_m, no activation."""

    def __init__(self, encoder: Linear, decoder: Linear):
        self.encoder = encoder
        self.decoder = decoder
        self.initial_error = float("nan")
        self.final_error = float("nan")

    @classmethod
    def random(cls, in_dim: int, code_dim: int, rng: np.random.Generator) -> "Autoencoder":
        return cls(
            Linear("ae.encoder", in_dim, code_dim, rng),
            Linear("ae.decoder", code_dim, in_dim, rng),
        )

    @classmethod
    def from_blocks(cls, blocks: Sequence[Array]) -> "Autoencoder":
        enc_w, enc_b, dec_w, dec_b = blocks
        d_m, d_c = enc_w.shape
        encoder = Linear("ae.encoder", d_m, d_c, weight=enc_w.copy())
        decoder = Linear("ae.decoder", d_c, d_m, weight=dec_w.copy())
        assert encoder.bias is not None and decoder.bias is not None
        encoder.bias.data[...] = enc_b
        decoder.bias.data[...] = dec_b
        return cls(encoder, decoder)

    @property
    def in_dim(self) -> int:
        return self.encoder.weight.shape[0]

    @property
    def code_dim(self) -> int:
        return self.encoder.weight.shape[1]

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()

    def reconstruction_loss(self, m: Array) -> Tensor:
        x = Tensor(m)
        diff = self.decoder(self.encoder(x)) - x
        return (diff * diff).mean()


def _channel_key(m: ModalityMatrix) -> int:
    return list(Channel).index(m.channel)


def train_autoencoder(
    m: ModalityMatrix,
    code_dim: int,
    epochs: int,
    lr: float,
    seed: int,
    splits: int = 1,
) -> Autoencoder:
    """Full-batch Adam on mean squared reconstruction error."""
    if code_dim > m.dim:
        raise ConfigError(f"compressed width {code_dim} exceeds modality width {m.dim}")
    if splits < 1 or code_dim % splits != 0:
        raise ConfigError(f"compressed width {code_dim} is not divisible by {splits} segments")

    rng = make_stream(seed, Stream.TEACHER, _channel_key(m), 0)
    ae = Autoencoder.random(m.dim, code_dim, rng)
    optimizer = Adam(ae.parameters())
    lrs = {p.group: lr for p in ae.parameters()}

    ae.initial_error = ae.reconstruction_loss(m.values).item()
    error = ae.initial_error
    for epoch in range(epochs):
        optimizer.zero_grad()
        loss = ae.reconstruction_loss(m.values)
        error = loss.item()
        if not np.isfinite(error):
            raise TeacherTrainingError(f"autoencoder diverged at epoch {epoch} ({error})")
        loss.backward()
        optimizer.step(lrs)

    if epochs > 0:
        error = ae.reconstruction_loss(m.values).item()
        if not np.isfinite(error):
            raise TeacherTrainingError(f"autoencoder diverged after {epochs} epochs")
    ae.final_error = error
    logger.info(
        "%s autoencoder %d->%d: mse %.6f -> %.6f",
        m.channel.value,
        m.dim,
        code_dim,
        ae.initial_error,
        ae.final_error,
    )
    return ae


def compress(ae: Autoencoder, m: ModalityMatrix | Array) -> Array:
    values = m.values if isinstance(m, ModalityMatrix) else np.asarray(m, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != ae.in_dim:
        raise DimensionError(f"cannot encode {values.shape} with input width {ae.in_dim}")
    bias = ae.encoder.bias.data if ae.encoder.bias is not None else 0.0
    return matmul(values, ae.encoder.weight.data) + bias


def correlation_vector(kind: ScoringKind, mi: Array, mj: Array, splits: int) -> Array:
    return segment_scores(kind, np.asarray(mi), np.asarray(mj), splits)


@dataclass
class TeacherSignals:
    channel: Channel
    compressed: Array
    scoring: ScoringKind
    codebook: Codebook
    splits: int
    autoencoder: Optional[Autoencoder] = None
    _cache: dict[tuple[int, int], tuple[float, int]] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def items(self) -> int:
        return self.compressed.shape[0]

    def distill_pair(self, i: int, j: int) -> tuple[float, int]:
        r, c = self.distill_pairs(np.array([i]), np.array([j]))
        return float(r[0]), int(c[0])

    def distill_pairs(
        self, left: npt.NDArray[np.int64], right: npt.NDArray[np.int64]
    ) -> tuple[Array, npt.NDArray[np.int64]]:
        """(r_ij, c_ij) per pair; symmetric because every pair is looked up as (min, max)."""
        left = np.asarray(left, dtype=np.int64)
        right = np.asarray(right, dtype=np.int64)
        if np.any(left == right):
            raise SelfPairError("an item cannot be paired with itself")
        n = self.items
        if np.any((left < 0) | (left >= n) | (right < 0) | (right >= n)):
            raise ItemLookupError(f"pair index outside [0, {n})")

        lo = np.minimum(left, right)
        hi = np.maximum(left, right)
        keys = list(zip(lo.tolist(), hi.tolist()))
        with self._lock:
            missing = sorted({key for key in keys if key not in self._cache})
            if missing:
                a = np.array([key[0] for key in missing])
                b = np.array([key[1] for key in missing])
                scores, codes = self._compute(a, b)
                for key, r, c in zip(missing, scores.tolist(), codes.tolist()):
                    self._cache[key] = (r, c)
            found = [self._cache[key] for key in keys]

        return (
            np.array([f[0] for f in found], dtype=np.float64),
            np.array([f[1] for f in found], dtype=np.int64),
        )

    def _compute(self, a: npt.NDArray[np.int64], b: npt.NDArray[np.int64]):
        mi, mj = self.compressed[a], self.compressed[b]
        scores = np.atleast_1d(holistic_score(self.scoring, mi, mj))
        vectors = segment_scores(self.scoring, mi, mj, self.splits)
        return scores, assign_codes(self.codebook.codewords, vectors)


def within_sequence_pairs(sequences: Sequence[Sequence[int]]) -> npt.NDArray[np.int64]:
    """All unordered distinct-item pairs inside each sequence, as (min, max) rows."""
    chunks = []
    for seq in sequences:
        items = np.array(list(dict.fromkeys(seq)), dtype=np.int64)
        if len(items) < 2:
            continue
        a, b = np.triu_indices(len(items), k=1)
        pairs = np.stack([items[a], items[b]], axis=1)
        chunks.append(np.sort(pairs, axis=1))
    if not chunks:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(chunks, axis=0)


def build_teacher(
    train_sequences: Sequence[Sequence[int]],
    m: ModalityMatrix,
    cfg: TeacherConfig,
    code_dim: int,
    seed: int,
) -> TeacherSignals:
    cfg.validate(code_dim)
    ae = train_autoencoder(m, code_dim, cfg.ae_epochs, cfg.ae_lr, seed, cfg.splits)
    compressed = compress(ae, m)

    rng = make_stream(seed, Stream.TEACHER, _channel_key(m), 1)
    pairs = within_sequence_pairs(train_sequences)
    if len(pairs) == 0:
        raise ArgumentError("no within-sequence pairs to fit the codebook on")
    if len(pairs) > cfg.codebook_sample:
        pairs = pairs[np.sort(rng.choice(len(pairs), cfg.codebook_sample, replace=False))]
    vectors = segment_scores(
        cfg.scoring, compressed[pairs[:, 0]], compressed[pairs[:, 1]], cfg.splits
    )

    match cfg.quantizer:
        case QuantizerKind.KMEANS:
            codebook = fit_codebook_kmeans(vectors, cfg.codes, cfg.kmeans_iters, rng)
        case QuantizerKind.VQ:
            codebook = fit_codebook_vq(vectors, cfg.codes, cfg.vq_passes, cfg.vq_rate, rng)

    logger.info(
        "%s teacher: %d correlation vectors, %d/%d codes used",
        m.channel.value,
        len(vectors),
        int((codebook.usage > 0).sum()),
        codebook.size,
    )
    return TeacherSignals(m.channel, compressed, cfg.scoring, codebook, cfg.splits, ae)


###########################
#  KDTC artifact          #
###########################


def save_teacher(path: Union[str, Path], signals: TeacherSignals) -> None:
    ae = signals.autoencoder
    if ae is None:
        raise ArgumentError("teacher signals carry no autoencoder to persist")
    tag = signals.channel.value.encode("utf-8")
    header = struct.pack(
        f"<4sII{len(tag)}sIIIIII",
        ARTIFACT_MAGIC,
        ARTIFACT_VERSION,
        len(tag),
        tag,
        ae.in_dim,
        ae.code_dim,
        signals.splits,
        signals.codebook.size,
        SCORING_CODES.index(signals.scoring),
        QUANTIZER_CODES.index(signals.codebook.kind),
    )
    blocks = [p.data for p in ae.parameters()] + [
        signals.codebook.codewords,
        signals.codebook.usage.astype(np.float64),
    ]
    with open(path, "wb") as file:
        file.write(header)
        for block in blocks:
            file.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_teacher(path: Union[str, Path], m: ModalityMatrix) -> TeacherSignals:
    raw = Path(path).read_bytes()
    try:
        magic, version, tag_len = struct.unpack_from("<4sII", raw, 0)
        if magic != ARTIFACT_MAGIC:
            raise CheckpointError(f"{path} is not a teacher artifact")
        if version != ARTIFACT_VERSION:
            raise CheckpointError(f"{path}: unsupported teacher artifact version {version}")
        offset = 12
        tag = raw[offset : offset + tag_len].decode("utf-8")
        offset += tag_len
        d_m, d_c, splits, codes, scoring, quantizer = struct.unpack_from("<IIIIII", raw, offset)
        offset += 24
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated teacher artifact header") from exc
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: channel tag is not valid UTF-8") from exc
    if scoring >= len(SCORING_CODES) or quantizer >= len(QUANTIZER_CODES):
        raise CheckpointError(
            f"{path}: unknown scoring code {scoring} or quantizer code {quantizer}"
        )

    if tag != m.channel.value:
        raise ShapeError(f"{path} was distilled for channel {tag}, not {m.channel.value}")
    if d_m != m.dim:
        raise ShapeError(f"{path} expects modality width {d_m}, got {m.dim}")

    shapes = [(d_m, d_c), (d_c,), (d_c, d_m), (d_m,), (codes, splits), (codes,)]
    blocks = []
    for shape in shapes:
        size = int(np.prod(shape)) * 8
        if offset + size > len(raw):
            raise CheckpointError(f"{path}: truncated teacher artifact")
        block = np.frombuffer(raw, dtype="<f8", count=size // 8, offset=offset)
        blocks.append(block.reshape(shape).astype(np.float64))
        offset += size

    ae = Autoencoder.from_blocks(blocks[:4])
    try:
        codebook = Codebook(blocks[4], QUANTIZER_CODES[quantizer], blocks[5].astype(np.int64))
    except ArgumentError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return TeacherSignals(m.channel, compress(ae, m), SCORING_CODES[scoring], codebook, splits, ae)


