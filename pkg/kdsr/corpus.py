import logging
import struct
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Union

import numpy as np
import numpy.typing as npt

from kdsr.autograd import Array
from kdsr.errors import (
    ArgumentError,
    ConfigError,
    EmptyDatasetError,
    MissingInputError,
    NumericError,
    ParseError,
    ShapeError,
    SplitError,
)
from kdsr.rng import Stream, make_stream

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MODALITY_MAGIC = b"MODF"
MODALITY_VERSION = 1
_MODALITY_HEADER = struct.Struct("<4sIII")

TRAIN_FRACTION_NUM, TRAIN_FRACTION_DEN = 4, 5
SYNTHETIC_START_TIME = 1_600_000_000
SYNTHETIC_TIME_STEP = 60


class Channel(Enum):
    IMAGE = "image"
    TEXT = "text"


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    timestamp: int


@dataclass
class Dataset:
    sequences: list[list[int]]
    item_ids: list[str]
    user_ids: list[str]

    @property
    def item_count(self) -> int:
        return len(self.item_ids)

    @property
    def user_count(self) -> int:
        return len(self.user_ids)

    @property
    def interaction_count(self) -> int:
        return sum(len(seq) for seq in self.sequences)


@dataclass
class ModalityMatrix:
    channel: Channel
    values: Array

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"{self.channel.value} modality matrix must be 2-D")
        _require_finite_matrix(self.values, self.channel.value)

    @property
    def items(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class HeldOutEvent:
    user: int
    prefix: tuple[int, ...]
    target: int


@dataclass
class SplitDataset:
    dataset: Dataset
    train_sequences: list[list[int]]
    held_out: list[HeldOutEvent]

    @property
    def item_count(self) -> int:
        return self.dataset.item_count


@dataclass
class SyntheticSpec:
    items: int = 500
    users: int = 2000
    min_length: int = 5
    max_length: int = 20
    colors: int = 4
    shapes: int = 4
    categories: int = 5
    brands: int = 5
    modality_dim: int = 256
    noise: float = 0.1
    mixing: float = 0.8
    seed: int = 0
    attribute_values: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.attribute_values = {
            "color": self.colors,
            "shape": self.shapes,
            "category": self.categories,
            "brand": self.brands,
        }

    def validate(self) -> None:
        if self.items < 1 or self.users < 1:
            raise ConfigError("synthetic corpus needs at least one item and one user")
        if not 0.0 <= self.mixing <= 1.0:
            raise ConfigError(f"mixing weight {self.mixing} outside [0, 1]")
        if self.noise < 0:
            raise ConfigError(f"noise {self.noise} must be non-negative")
        if not 1 <= self.min_length <= self.max_length:
            raise ConfigError("need 1 <= min_length <= max_length")
        if min(self.attribute_values.values()) < 1:
            raise ConfigError("every attribute needs at least one value")
        half = self.modality_dim // 2
        if half < max(self.colors, self.categories) or self.modality_dim - half < max(
            self.shapes, self.brands
        ):
            raise ConfigError(f"modality_dim {self.modality_dim} too small for attribute blocks")


# Image features encode {color, shape}; text features encode {category, brand}.
CHANNEL_ATTRIBUTES = {
    Channel.IMAGE: ("color", "shape"),
    Channel.TEXT: ("category", "brand"),
}


###########################
#  Interaction logs       #
###########################


def load_interactions(path: PathLike) -> list[Interaction]:
    """Parse a `user \\t item \\t timestamp` TSV; records come back sorted by (user, time)."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"interaction file {path} not found")

    records: list[Interaction] = []
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not valid UTF-8 (byte {e.start})")
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", line_no)
        user, item, stamp = fields
        try:
            timestamp = int(stamp)
        except ValueError:
            raise ParseError(f"timestamp {stamp!r} is not an integer", line_no)
        records.append(Interaction(user, item, timestamp))

    # sorted() is stable, so equal timestamps keep file order
    return sorted(records, key=lambda r: (r.user, r.timestamp))


def write_interactions(path: PathLike, ds: Dataset) -> None:
    with open(path, "w", encoding="utf-8") as file:
        for user, seq in zip(ds.user_ids, ds.sequences):
            for pos, item in enumerate(seq):
                stamp = SYNTHETIC_START_TIME + SYNTHETIC_TIME_STEP * pos
                file.write(f"{user}\t{ds.item_ids[item]}\t{stamp}\n")


def core_k_filter(interactions: list[Interaction], k: int) -> Dataset:
    """
    Drop users and items with fewer than k interactions until nothing changes, then index
    items by first appearance in the filtered log.
    """
    if k < 1:
        raise ArgumentError(f"core-k needs k >= 1, got {k}")

    kept = sorted(interactions, key=lambda r: (r.user, r.timestamp))
    while True:
        user_counts = Counter(r.user for r in kept)
        item_counts = Counter(r.item for r in kept)
        survivors = [r for r in kept if user_counts[r.user] >= k and item_counts[r.item] >= k]
        if len(survivors) == len(kept):
            break
        kept = survivors

    if not kept:
        raise EmptyDatasetError(f"core-{k} filtering removed every interaction")

    item_index: dict[str, int] = {}
    user_index: dict[str, int] = {}
    sequences: list[list[int]] = []
    for r in kept:
        if r.item not in item_index:
            item_index[r.item] = len(item_index)
        if r.user not in user_index:
            user_index[r.user] = len(user_index)
            sequences.append([])
        sequences[user_index[r.user]].append(item_index[r.item])

    logger.info(
        "core-%d: %d users, %d items, %d interactions",
        k,
        len(user_index),
        len(item_index),
        len(kept),
    )
    return Dataset(sequences, list(item_index), list(user_index))


def split_train_test(ds: Dataset) -> SplitDataset:
    """Chronological 80/20 split per user (floor, at least one training event)."""
    train: list[list[int]] = []
    events: list[HeldOutEvent] = []
    for user, seq in enumerate(ds.sequences):
        if len(seq) < 2:
            raise SplitError(f"user {ds.user_ids[user]} has {len(seq)} events, need at least 2")
        cut = max(1, len(seq) * TRAIN_FRACTION_NUM // TRAIN_FRACTION_DEN)
        train.append(list(seq[:cut]))
        for pos in range(cut, len(seq)):
            events.append(HeldOutEvent(user, tuple(seq[:pos]), seq[pos]))
    return SplitDataset(ds, train, events)


###########################
#  Modality feature files #
###########################


def write_modality_matrix(path: PathLike, m: ModalityMatrix) -> None:
    header = _MODALITY_HEADER.pack(MODALITY_MAGIC, MODALITY_VERSION, m.items, m.dim)
    with open(path, "wb") as file:
        file.write(header)
        file.write(m.values.astype("<f4").tobytes(order="C"))


def load_modality_matrix(
    path: PathLike, expected_items: int, channel: Channel = Channel.IMAGE
) -> ModalityMatrix:
    """Read the MODF binary format, or a comma-separated text fallback."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"modality file {path} not found")
    raw = path.read_bytes()

    if raw[:4] == MODALITY_MAGIC:
        values = _decode_binary(raw, path)
    else:
        values = _decode_csv(raw, path)

    if values.shape[0] != expected_items:
        raise ShapeError(
            f"{path} holds {values.shape[0]} items but the dataset has {expected_items}"
        )
    return ModalityMatrix(channel, values)


def _decode_binary(raw: bytes, path: Path) -> Array:
    if len(raw) < _MODALITY_HEADER.size:
        raise ParseError(f"{path}: truncated header")
    _, version, items, dim = _MODALITY_HEADER.unpack_from(raw)
    if version != MODALITY_VERSION:
        raise ParseError(f"{path}: unsupported modality format version {version}")
    body = raw[_MODALITY_HEADER.size :]
    if len(body) != items * dim * 4:
        raise ParseError(f"{path}: expected {items * dim * 4} payload bytes, got {len(body)}")
    values = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(items, dim)
    _require_finite_matrix(values, str(path))
    return values


def _decode_csv(raw: bytes, path: Path) -> Array:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not valid UTF-8 (byte {e.start})")
    rows: list[list[float]] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(cell) for cell in line.split(",")])
        except ValueError:
            raise ParseError(f"{path}: non-numeric cell", line_no)
        if len(rows[-1]) != len(rows[0]):
            raise ParseError(f"{path}: expected {len(rows[0])} columns", line_no)
    if not rows:
        raise ParseError(f"{path}: no rows")
    values = np.array(rows, dtype=np.float64)
    _require_finite_matrix(values, str(path))
    return values


def _require_finite_matrix(values: Array, label: str) -> None:
    bad = np.argwhere(~np.isfinite(values))
    if len(bad):
        row, col = (int(v) for v in bad[0])
        raise NumericError(f"{label}: non-finite value at row {row}, col {col}")


###########################
#  Synthetic corpora      #
###########################


def item_attributes(spec: SyntheticSpec) -> dict[str, npt.NDArray[np.int64]]:
    """Latent attributes per generated item, indexed by generation order (item id suffix)."""
    rng = make_stream(spec.seed, Stream.DATA)
    return _draw_attributes(spec, rng)


def _draw_attributes(spec: SyntheticSpec, rng: np.random.Generator):
    return {
        name: rng.integers(0, count, size=spec.items)
        for name, count in spec.attribute_values.items()
    }


def _tiled_one_hot(values: npt.NDArray[np.int64], cardinality: int, width: int) -> Array:
    positions = np.arange(width)
    return (positions[None, :] % cardinality == values[:, None]).astype(np.float64)


def is_complementary(attrs: dict[str, npt.NDArray[np.int64]], spec: SyntheticSpec, i, j) -> bool:
    """Same colour, next category: the suit-then-tie pattern."""
    return bool(
        attrs["color"][j] == attrs["color"][i]
        and attrs["category"][j] == (attrs["category"][i] + 1) % spec.categories
    )


def generate_synthetic(
    spec: SyntheticSpec, core_k: int = 5
) -> tuple[Dataset, dict[Channel, ModalityMatrix]]:
    spec.validate()
    rng = make_stream(spec.seed, Stream.DATA)
    attrs = _draw_attributes(spec, rng)

    features: dict[Channel, Array] = {}
    half = spec.modality_dim // 2
    for channel, (first, second) in CHANNEL_ATTRIBUTES.items():
        blocks = np.concatenate(
            [
                _tiled_one_hot(attrs[first], spec.attribute_values[first], half),
                _tiled_one_hot(
                    attrs[second], spec.attribute_values[second], spec.modality_dim - half
                ),
            ],
            axis=1,
        )
        noisy = blocks + spec.noise * rng.normal(size=blocks.shape)
        # Round through float32 so the file format reproduces the matrix exactly.
        features[channel] = noisy.astype(np.float32).astype(np.float64)

    by_key: dict[tuple[int, int], list[int]] = {}
    for item in range(spec.items):
        by_key.setdefault((int(attrs["color"][item]), int(attrs["category"][item])), []).append(
            item
        )

    interactions: list[Interaction] = []
    for user in range(spec.users):
        length = min(int(rng.integers(spec.min_length, spec.max_length + 1)), spec.items)
        seq = [int(rng.integers(spec.items))]
        used = {seq[0]}
        while len(seq) < length:
            current = seq[-1]
            nxt = None
            if rng.random() < spec.mixing:
                key = (
                    int(attrs["color"][current]),
                    (int(attrs["category"][current]) + 1) % spec.categories,
                )
                candidates = [c for c in by_key.get(key, []) if c not in used]
                if candidates:
                    nxt = candidates[int(rng.integers(len(candidates)))]
            while nxt is None or nxt in used:
                nxt = int(rng.integers(spec.items))
            seq.append(nxt)
            used.add(nxt)
        user_id = f"u{user:06d}"
        for pos, item in enumerate(seq):
            stamp = SYNTHETIC_START_TIME + SYNTHETIC_TIME_STEP * pos
            interactions.append(Interaction(user_id, f"i{item:06d}", stamp))

    ds = core_k_filter(interactions, core_k)
    order = [int(item_id[1:]) for item_id in ds.item_ids]
    modalities = {
        channel: ModalityMatrix(channel, values[order]) for channel, values in features.items()
    }
    return ds, modalities
