"""
Leave-prefix ranking evaluation (HR@k, MRR@k) and the pairwise-similarity drift diagnostic.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np
import numpy.typing as npt

from kdsr.autograd import Array
from kdsr.corpus import HeldOutEvent, SplitDataset
from kdsr.errors import ArgumentError, ItemLookupError
from kdsr.numerics import pearson
from kdsr.scoring import ScoringKind, holistic_score

logger = logging.getLogger(__name__)

CUTOFFS = (5, 20)
EVAL_CHUNK = 256
# Above this many candidate pairs, drift pairs are drawn by rejection instead of enumeration.
ENUMERATE_PAIR_LIMIT = 5_000_000


class PrefixScorer(Protocol):
    def score_prefixes(self, prefixes: Sequence[Sequence[int]]) -> Array: ...


@dataclass
class MetricsReport:
    hr5: float
    hr20: float
    mrr5: float
    mrr20: float
    events: int

    def to_dict(self) -> dict:
        return asdict(self)

    def __str__(self) -> str:
        return (
            f"HR@5 {self.hr5:.4f}  HR@20 {self.hr20:.4f}  "
            f"MRR@5 {self.mrr5:.4f}  MRR@20 {self.mrr20:.4f}  ({self.events} events)"
        )


def rank_of_target(logits: Array, target: int, exclusions: Iterable[int] = ()) -> int:
    """
    1 + the number of non-excluded items ranked above the target. An item ranks above it
    with a strictly greater logit, or an equal logit and a lower index.
    """
    scores = np.asarray(logits, dtype=np.float64)
    n = scores.shape[0]
    if not 0 <= target < n:
        raise ItemLookupError(f"target {target} outside [0, {n})")
    excluded = np.zeros(n, dtype=bool)
    excluded[list(exclusions)] = True
    if excluded[target]:
        raise ArgumentError(f"target {target} is excluded from its own ranking")
    t = scores[target]
    above = (scores > t) | ((scores == t) & (np.arange(n) < target))
    return 1 + int((above & ~excluded).sum())


def hr_mrr(ranks: Sequence[int] | npt.NDArray[np.int64], k: int) -> tuple[float, float]:
    if k < 1:
        raise ArgumentError(f"cutoff k must be >= 1, got {k}")
    r = np.asarray(ranks, dtype=np.int64)
    if r.size == 0:
        raise ArgumentError("hr_mrr needs at least one rank")
    if r.min() < 1:
        raise ArgumentError("ranks are 1-based")
    hits = r <= k
    return float(hits.mean()), float(np.where(hits, 1.0 / r, 0.0).mean())


def _rank_chunk(model: PrefixScorer, events: Sequence[HeldOutEvent]) -> list[int]:
    logits = model.score_prefixes([event.prefix for event in events])
    ranks = []
    for row, event in zip(logits, events):
        seen = set(event.prefix)
        seen.discard(event.target)
        ranks.append(rank_of_target(row, event.target, seen))
    return ranks


def evaluate(model: PrefixScorer, split: SplitDataset, threads: int = 1) -> MetricsReport:
    """
    Rank every held-out next item against the full catalogue after its whole prefix, leaving
    out items the user already consumed (the target itself always stays in).
    """
    events = sorted(split.held_out, key=lambda e: (e.user, len(e.prefix), e.target))
    if not events:
        raise ArgumentError("no held-out events to evaluate")
    chunks = [events[i : i + EVAL_CHUNK] for i in range(0, len(events), EVAL_CHUNK)]

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ranked = list(pool.map(lambda chunk: _rank_chunk(model, chunk), chunks))
    else:
        ranked = [_rank_chunk(model, chunk) for chunk in chunks]
    ranks = np.array([r for chunk in ranked for r in chunk], dtype=np.int64)

    hr5, mrr5 = hr_mrr(ranks, CUTOFFS[0])
    hr20, mrr20 = hr_mrr(ranks, CUTOFFS[1])
    report = MetricsReport(hr5, hr20, mrr5, mrr20, len(ranks))
    logger.debug("evaluated %s", report)
    return report


###########################
#  Drift diagnostic       #
###########################


def sample_drift_pairs(items: int, count: int, rng: np.random.Generator) -> npt.NDArray[np.int64]:
    """`count` distinct unordered (i < j) pairs, or all of them when there are fewer."""
    if items < 2:
        raise ArgumentError("drift pairs need at least two items")
    total = items * (items - 1) // 2
    if count >= total:
        left, right = np.triu_indices(items, k=1)
        return np.stack([left, right], axis=1).astype(np.int64)
    if total <= ENUMERATE_PAIR_LIMIT:
        left, right = np.triu_indices(items, k=1)
        chosen = np.sort(rng.choice(total, size=count, replace=False))
        return np.stack([left[chosen], right[chosen]], axis=1).astype(np.int64)

    seen: set[tuple[int, int]] = set()
    pairs: list[tuple[int, int]] = []
    while len(pairs) < count:
        i, j = (int(x) for x in rng.integers(items, size=2))
        key = (min(i, j), max(i, j))
        if i != j and key not in seen:
            seen.add(key)
            pairs.append(key)
    return np.array(pairs, dtype=np.int64)


def pairwise_similarity_profile(space: Array, pairs: npt.NDArray[np.int64]) -> Array:
    """Cosine similarity of each (i, j) row pair, in pair order."""
    values = np.asarray(space, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64)
    n = values.shape[0]
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise ItemLookupError(f"pair index outside [0, {n})")
    scores = holistic_score(ScoringKind.COSINE, values[pairs[:, 0]], values[pairs[:, 1]])
    return np.atleast_1d(np.asarray(scores, dtype=np.float64))


def drift(
    e: Array, m: Array, v: Optional[Array], pairs: npt.NDArray[np.int64]
) -> tuple[float, Optional[float]]:
    """(pearson_EM, pearson_EV) between similarity profiles; EV is None without V."""
    if e.shape[0] != m.shape[0] or (v is not None and v.shape[0] != e.shape[0]):
        raise ArgumentError("drift spaces must cover the same items")
    profile = pairwise_similarity_profile(e, pairs)
    em = pearson(profile, pairwise_similarity_profile(m, pairs))
    ev = None if v is None else pearson(profile, pairwise_similarity_profile(v, pairs))
    return em, ev


def mean_or_none(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [x for x in values if x is not None]
    return math.fsum(present) / len(present) if present else None
