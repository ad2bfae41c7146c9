import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import numpy.typing as npt

from kdsr.autograd import Array
from kdsr.errors import ArgumentError, DimensionError

logger = logging.getLogger(__name__)

# Rows per distance block when quantizing large correlation-vector sets.
ASSIGN_CHUNK = 4096
VQ_INIT_STD = 0.01


class QuantizerKind(Enum):
    VQ = "vq"
    KMEANS = "kmeans"


@dataclass
class Codebook:
    codewords: Array
    kind: QuantizerKind
    usage: npt.NDArray[np.int64]
    # Mean squared quantization error after each assignment pass (k-means only).
    errors: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.codewords.ndim != 2 or self.size < 2:
            raise ArgumentError(f"codebook needs at least 2 codewords, got {self.codewords.shape}")
        if not np.all(np.isfinite(self.codewords)):
            raise ArgumentError("codebook holds non-finite codewords")

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    @property
    def dim(self) -> int:
        return self.codewords.shape[1]

    def histogram(self) -> str:
        width = max(len(str(int(self.usage.max()))), 5) if self.usage.size else 5
        lines = [f"{'code':>6} {'count':>{width}}"]
        for code, count in enumerate(self.usage):
            lines.append(f"{code:>6} {int(count):>{width}}")
        lines.append(f"{'total':>6} {int(self.usage.sum()):>{width}}")
        return "\n".join(lines)


def squared_distances(vectors: Array, codewords: Array) -> Array:
    # Direct differences rather than the |a|^2 - 2ab + |b|^2 expansion, so argmin is exact.
    diff = vectors[:, None, :] - codewords[None, :, :]
    return (diff * diff).sum(axis=-1)


def assign_codes(codewords: Array, vectors: Array) -> npt.NDArray[np.int64]:
    """Nearest codeword per row by Euclidean distance; ties go to the lowest index."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if vectors.shape[1] != codewords.shape[1]:
        raise DimensionError(f"vectors of dim {vectors.shape[1]} vs codewords {codewords.shape}")
    out = np.empty(len(vectors), dtype=np.int64)
    for start in range(0, len(vectors), ASSIGN_CHUNK):
        block = vectors[start : start + ASSIGN_CHUNK]
        out[start : start + len(block)] = np.argmin(squared_distances(block, codewords), axis=1)
    return out


def assign_code(cb: Codebook, v: Array) -> int:
    return int(assign_codes(cb.codewords, np.asarray(v, dtype=np.float64)[None, :])[0])


def fit_codebook_kmeans(
    vectors: Array, x: int, iters: int, rng: np.random.Generator
) -> Codebook:
    """
    Lloyd's algorithm. Centroids start on x distinct sampled inputs; an emptied cluster is
    reseeded on the point currently farthest from its centroid.
    """
    data = np.asarray(vectors, dtype=np.float64)
    n = len(data)
    if x < 2:
        raise ArgumentError(f"need at least 2 codes, got {x}")
    if n < x:
        raise ArgumentError(f"k-means needs at least {x} vectors, got {n}")

    centroids = data[np.sort(rng.choice(n, size=x, replace=False))].copy()
    assignment = assign_codes(centroids, data)
    errors = [_quantization_error(data, centroids, assignment)]

    for _ in range(iters):
        for code in range(x):
            members = assignment == code
            if members.any():
                centroids[code] = data[members].mean(axis=0)

        counts = np.bincount(assignment, minlength=x)
        if (counts == 0).any():
            dist = ((data - centroids[assignment]) ** 2).sum(axis=1)
            for code in np.flatnonzero(counts == 0):
                far = int(np.argmax(dist))
                centroids[code] = data[far]
                dist[far] = 0.0

        new_assignment = assign_codes(centroids, data)
        errors.append(_quantization_error(data, centroids, new_assignment))
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment

    logger.debug("k-means: %d passes, error %.6f -> %.6f", len(errors) - 1, errors[0], errors[-1])
    usage = np.bincount(assignment, minlength=x).astype(np.int64)
    return Codebook(centroids, QuantizerKind.KMEANS, usage, errors)


def _quantization_error(data: Array, centroids: Array, assignment) -> float:
    diff = data - centroids[assignment]
    return float((diff * diff).sum(axis=1).mean())


def fit_codebook_vq(
    vectors: Array, x: int, passes: int, rate: float, rng: np.random.Generator
) -> Codebook:
    """
    Streaming VQ from a small Gaussian start: the nearest codeword moves toward each vector by
    an exponential moving average with `rate`. A codeword unused for a whole pass is reseeded
    onto a random data vector.
    """
    data = np.asarray(vectors, dtype=np.float64)
    if x < 2:
        raise ArgumentError(f"need at least 2 codes, got {x}")
    if not 0.0 < rate <= 1.0:
        raise ArgumentError(f"VQ rate must be in (0, 1], got {rate}")
    if len(data) == 0:
        raise ArgumentError("VQ needs at least one vector")

    codewords = rng.normal(0.0, VQ_INIT_STD, size=(x, data.shape[1]))

    for _ in range(passes):
        pass_usage = np.zeros(x, dtype=np.int64)
        for row in rng.permutation(len(data)):
            v = data[row]
            diff = codewords - v
            code = int(np.argmin((diff * diff).sum(axis=1)))
            codewords[code] = (1.0 - rate) * codewords[code] + rate * v
            pass_usage[code] += 1
        for code in np.flatnonzero(pass_usage == 0):
            codewords[code] = data[int(rng.integers(len(data)))]

    usage = np.bincount(assign_codes(codewords, data), minlength=x).astype(np.int64)
    return Codebook(codewords, QuantizerKind.VQ, usage)
