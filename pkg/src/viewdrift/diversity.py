"""Per-block diversity metrics and content ambiguity scores.

Two complementary views of a block of watched programs: average pairwise
cosine distance (spread in embedding space) and the entropy of the block's
cluster distribution (spread across content clusters).  Ambiguity is the
entropy of a content's fuzzy membership row; a user's score is the maximum
ambiguity seen before their end block.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from viewdrift.clustering import HardAssignment, MembershipMatrix, cut_assignments
from viewdrift.corpus import BlockPair, WatchedHistory
from viewdrift.embedding import EmbeddingMatrix

__all__ = [
    "DiversityScore",
    "SweepPoint",
    "cosine_distance",
    "avg_pairwise_distance",
    "cde",
    "ambiguity",
    "ambiguity_scores",
    "max_ambiguity",
    "kd_sweep",
]


@dataclass(frozen=True)
class DiversityScore:
    """One metric value for one user block; ``kd`` is None for apd."""

    user_id: str
    block: str  # "start" or "end"
    metric: str  # "apd" or "cde"
    value: float
    kd: Optional[int] = None

    def __post_init__(self) -> None:
        if self.block not in ("start", "end"):
            raise ValueError(f"block must be 'start' or 'end', got {self.block!r}")
        if self.metric not in ("apd", "cde"):
            raise ValueError(f"metric must be 'apd' or 'cde', got {self.metric!r}")


@dataclass(frozen=True)
class SweepPoint:
    kd: int
    mean_delta: float
    p_value: float  # NaN when the paired test is degenerate


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cos(a, b); raises on zero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine distance undefined for zero vectors")
    return 1.0 - float(np.dot(a, b)) / (na * nb)


def avg_pairwise_distance(
    block: Sequence[str], embedding: EmbeddingMatrix
) -> float:
    """Mean cosine distance over ordered pairs i != j of the block's vectors.

    Repeat views keep their multiplicity.  Unknown ids raise KeyError naming
    the id; blocks need at least two views.
    """
    if len(block) < 2:
        raise ValueError(f"block must hold >= 2 views, got {len(block)}")
    vectors = np.stack([embedding.vector(cid) for cid in block])
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0):
        bad = block[int(np.flatnonzero(norms == 0)[0])]
        raise ValueError(f"zero vector for content {bad!r}")
    normed = vectors / norms[:, None]
    D = 1.0 - normed @ normed.T
    np.fill_diagonal(D, 0.0)
    n = len(block)
    return float(D.sum() / (n * (n - 1)))


def _entropy(counts: Sequence[float], base: Optional[float]) -> float:
    total = float(sum(counts))
    h = 0.0
    for c in counts:
        if c > 0:
            p = c / total
            h -= p * math.log(p)
    if base is not None:
        h /= math.log(base)
    return h


def cde(
    block: Sequence[str],
    assignment: HardAssignment,
    base: Optional[float] = None,
    normalize: bool = False,
) -> float:
    """Cluster Diversity Entropy: entropy of the block's cluster histogram.

    Natural log by default; ``base`` switches the unit and ``normalize``
    divides by the maximum log(n_clusters).  Zero when every view falls in
    one cluster; at most log of min(n_clusters, block length).
    """
    if not block:
        raise ValueError("block must be non-empty")
    if base is not None and (base <= 0 or base == 1.0):
        raise ValueError(f"entropy base must be positive and != 1, got {base}")
    try:
        counts = Counter(assignment.labels[cid] for cid in block)
    except KeyError as exc:
        raise KeyError(exc.args[0]) from None
    h = _entropy(list(counts.values()), base)
    if normalize:
        if assignment.n_clusters < 2:
            return 0.0
        h /= math.log(assignment.n_clusters) / (
            math.log(base) if base is not None else 1.0
        )
    return h


def ambiguity(
    membership_row: Sequence[float],
    base: Optional[float] = None,
    atol: float = 1e-6,
) -> float:
    """Entropy of one membership row; the row must sum to 1 within ``atol``."""
    row = np.asarray(membership_row, dtype=np.float64)
    if row.ndim != 1 or row.shape[0] < 1:
        raise ValueError("membership row must be a non-empty 1-d array")
    if np.any(row < 0):
        raise ValueError("membership row has negative entries")
    total = float(row.sum())
    if abs(total - 1.0) > atol:
        raise ValueError(f"membership row sums to {total}, expected 1 within {atol}")
    return _entropy(row.tolist(), base)


def ambiguity_scores(
    membership: MembershipMatrix, base: Optional[float] = None
) -> dict[str, float]:
    """Ambiguity of every content in a membership matrix."""
    return {
        cid: ambiguity(membership.matrix[i], base=base)
        for i, cid in enumerate(membership.ids)
    }


def max_ambiguity(
    history: WatchedHistory,
    end_block_history_start: int,
    scores: Mapping[str, float],
    missing: str = "error",
) -> float:
    """Largest ambiguity among watched views strictly before the end block.

    The range covers every watched view from the start of the history
    (registration-day and warm-up views included) up to but excluding index
    ``end_block_history_start``.  ``missing`` controls unknown contents:
    "error" raises KeyError, "skip" ignores them.
    """
    if missing not in ("error", "skip"):
        raise ValueError(f"missing must be 'error' or 'skip', got {missing!r}")
    if not 1 <= end_block_history_start <= len(history.events):
        raise ValueError(
            f"end_block_history_start {end_block_history_start} leaves an "
            f"empty range or exceeds history length {len(history.events)}"
        )
    best: Optional[float] = None
    for event in history.events[:end_block_history_start]:
        if event.content_id not in scores:
            if missing == "error":
                raise KeyError(event.content_id)
            continue
        value = scores[event.content_id]
        if best is None or value > best:
            best = value
    if best is None:
        raise ValueError(
            f"no scored content before the end block for user {history.user_id!r}"
        )
    return best


def kd_sweep(
    block_pairs: Iterable[BlockPair],
    embedding: EmbeddingMatrix,
    k_list: Sequence[int],
    base: Optional[float] = None,
) -> list[SweepPoint]:
    """Mean end-start CDE change and paired-test p at cuts of one dendrogram.

    All cluster counts come from the same merge tree, so points are directly
    comparable.  Degenerate paired tests (constant deltas) yield p = NaN.
    """
    from viewdrift.stats import DegenerateVarianceError, paired_t

    pairs = list(block_pairs)
    if not pairs:
        raise ValueError("block_pairs must be non-empty")
    assignments = cut_assignments(embedding, k_list)
    points = []
    for kd in k_list:
        assignment = assignments[kd]
        start = [cde(p.start_block, assignment, base=base) for p in pairs]
        end = [cde(p.end_block, assignment, base=base) for p in pairs]
        deltas = [e - s for s, e in zip(start, end)]
        mean_delta = float(np.mean(deltas))
        if len(pairs) < 2:
            p_value = float("nan")
        else:
            try:
                p_value = paired_t(start, end).p_value
            except DegenerateVarianceError:
                p_value = float("nan")
        points.append(SweepPoint(kd=kd, mean_delta=mean_delta, p_value=p_value))
    return points
