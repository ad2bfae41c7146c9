"""
Correlation scoring functions ξ.

All kinds score along the last axis and follow "larger means more correlated": the two
distances are returned negated.
"""

from enum import Enum

import numpy as np

from kdsr.autograd import Array, Tensor, absolute, sqrt
from kdsr.errors import ConfigError, DegenerateVectorError, DimensionError


class ScoringKind(Enum):
    COSINE = "cosine"
    DOT = "dot"
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"


def holistic_score(kind: ScoringKind, u: Array, v: Array) -> Array | float:
    """ξ(u, v) over the last axis; scalar for 1-D inputs."""
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"cannot score {a.shape} against {b.shape}")

    match kind:
        case ScoringKind.COSINE:
            na = np.sqrt((a * a).sum(axis=-1))
            nb = np.sqrt((b * b).sum(axis=-1))
            if np.any(na == 0.0) or np.any(nb == 0.0):
                raise DegenerateVectorError("cosine score of a zero vector")
            out = (a * b).sum(axis=-1) / (na * nb)
        case ScoringKind.DOT:
            out = (a * b).sum(axis=-1)
        case ScoringKind.EUCLIDEAN:
            diff = a - b
            out = -np.sqrt((diff * diff).sum(axis=-1))
        case ScoringKind.MANHATTAN:
            out = -np.abs(a - b).sum(axis=-1)
        case _:
            raise ValueError(f"unknown scoring kind {kind}")

    return float(out) if np.ndim(out) == 0 else out


def segment_scores(kind: ScoringKind, u: Array, v: Array, splits: int) -> Array:
    """
    Score D contiguous segments of the last axis against each other; shape (..., D).

    Under cosine a segment that is zero on either side scores 0.
    """
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"cannot score {a.shape} against {b.shape}")
    width = a.shape[-1]
    if splits < 1 or width % splits != 0:
        raise ConfigError(f"compressed width {width} is not divisible by {splits} segments")
    seg_shape = a.shape[:-1] + (splits, width // splits)
    sa = a.reshape(seg_shape)
    sb = b.reshape(seg_shape)

    if kind is ScoringKind.COSINE:
        na = np.sqrt((sa * sa).sum(axis=-1))
        nb = np.sqrt((sb * sb).sum(axis=-1))
        denom = na * nb
        dots = (sa * sb).sum(axis=-1)
        safe = np.where(denom > 0, denom, 1.0)
        return np.where(denom > 0, dots / safe, 0.0)
    return np.asarray(holistic_score(kind, sa, sb), dtype=np.float64)


def score_tensors(kind: ScoringKind, u: Tensor, v: Tensor) -> Tensor:
    """Differentiable ξ over the last axis of two (rows, dim) tensors; shape (rows,)."""
    if u.shape != v.shape:
        raise DimensionError(f"cannot score {u.shape} against {v.shape}")

    match kind:
        case ScoringKind.COSINE:
            nu = sqrt((u * u).sum(axis=-1))
            nv = sqrt((v * v).sum(axis=-1))
            if np.any(nu.data == 0.0) or np.any(nv.data == 0.0):
                raise DegenerateVectorError("cosine score of a zero transformed vector")
            return (u * v).sum(axis=-1) / (nu * nv)
        case ScoringKind.DOT:
            return (u * v).sum(axis=-1)
        case ScoringKind.EUCLIDEAN:
            diff = u - v
            return -sqrt((diff * diff).sum(axis=-1))
        case ScoringKind.MANHATTAN:
            return -absolute(u - v).sum(axis=-1)
        case _:
            raise ValueError(f"unknown scoring kind {kind}")
