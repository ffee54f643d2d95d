"""Bipartite user-content graph and the samplers feeding the trainer."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from viewdrift.corpus import WatchedHistory

__all__ = [
    "GraphConstructionError",
    "BipartiteGraph",
    "AliasTable",
    "build_bipartite",
    "build_alias_table",
    "build_noise_table",
    "sample_edge",
    "sample_negative",
    "write_edges_csv",
]


class GraphConstructionError(ValueError):
    """Raised when no user survives the activity filter."""


@dataclass
class BipartiteGraph:
    """Deduplicated user-content edges over sorted id vocabularies.

    Edge k connects user ``user_ids[edge_users[k]]`` to content
    ``content_ids[edge_contents[k]]``; edges are sorted by (user, content)
    index, so construction is deterministic for a given history set.
    """

    user_ids: list[str]
    content_ids: list[str]
    edge_users: np.ndarray
    edge_contents: np.ndarray
    user_degrees: np.ndarray
    content_degrees: np.ndarray

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_contents(self) -> int:
        return len(self.content_ids)

    @property
    def n_edges(self) -> int:
        return int(self.edge_users.shape[0])


def build_bipartite(
    histories: Mapping[str, WatchedHistory],
    min_programs_per_user: int = 10,
) -> BipartiteGraph:
    """Build the graph from watched histories.

    A user is kept only with strictly more than ``min_programs_per_user``
    distinct watched contents; repeat views collapse into a single edge.
    The result is independent of input ordering.
    """
    if min_programs_per_user < 0:
        raise ValueError(
            f"min_programs_per_user must be >= 0, got {min_programs_per_user}"
        )
    kept: dict[str, list[str]] = {}
    for uid, history in histories.items():
        distinct = sorted(set(history.content_ids()))
        if len(distinct) > min_programs_per_user:
            kept[uid] = distinct
    if not kept:
        raise GraphConstructionError(
            "no user has more than "
            f"{min_programs_per_user} distinct watched contents"
        )
    user_ids = sorted(kept)
    content_ids = sorted({cid for contents in kept.values() for cid in contents})
    content_index = {cid: i for i, cid in enumerate(content_ids)}
    edge_users: list[int] = []
    edge_contents: list[int] = []
    for u_idx, uid in enumerate(user_ids):
        for cid in kept[uid]:
            edge_users.append(u_idx)
            edge_contents.append(content_index[cid])
    eu = np.asarray(edge_users, dtype=np.int64)
    ec = np.asarray(edge_contents, dtype=np.int64)
    return BipartiteGraph(
        user_ids=user_ids,
        content_ids=content_ids,
        edge_users=eu,
        edge_contents=ec,
        user_degrees=np.bincount(eu, minlength=len(user_ids)).astype(np.int64),
        content_degrees=np.bincount(ec, minlength=len(content_ids)).astype(np.int64),
    )


@dataclass
class AliasTable:
    """Walker alias table: O(1) draws from a fixed discrete distribution.

    ``probabilities`` is the normalized target distribution; ``prob[i]`` is
    the chance of keeping slot i rather than deferring to ``alias[i]``.
    """

    probabilities: np.ndarray
    prob: np.ndarray
    alias: np.ndarray

    def __len__(self) -> int:
        return int(self.prob.shape[0])

    def sample(
        self, rng: np.random.Generator, size: Optional[int] = None
    ) -> Union[int, np.ndarray]:
        """Draw indices; scalar when ``size`` is None."""
        n = len(self)
        if size is None:
            i = int(rng.integers(n))
            return i if rng.random() < self.prob[i] else int(self.alias[i])
        idx = rng.integers(n, size=size)
        keep = rng.random(size) < self.prob[idx]
        return np.where(keep, idx, self.alias[idx])


def build_alias_table(weights: np.ndarray) -> AliasTable:
    """Build an alias table from non-negative weights (need not be normalized)."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] == 0:
        raise ValueError("weights must be a non-empty 1-d array")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must not all be zero")
    p = w / total
    n = p.shape[0]
    scaled = p * n
    prob = np.zeros(n, dtype=np.float64)
    alias = np.zeros(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    scaled = scaled.copy()
    while small and large:
        s = small.pop()
        l = large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = (scaled[l] + scaled[s]) - 1.0
        if scaled[l] < 1.0:
            small.append(l)
        else:
            large.append(l)
    for i in large:
        prob[i] = 1.0
        alias[i] = i
    for i in small:  # fp residue; these slots are probability ~1
        prob[i] = 1.0
        alias[i] = i
    return AliasTable(probabilities=p, prob=prob, alias=alias)


def build_noise_table(graph: BipartiteGraph, power: float = 0.75) -> AliasTable:
    """Noise distribution over users, proportional to degree**power.

    Zero-degree users keep probability zero for any power.
    """
    if power < 0:
        raise ValueError(f"power must be >= 0, got {power}")
    d = graph.user_degrees.astype(np.float64)
    weights = np.power(d, power)
    weights[d == 0] = 0.0  # 0**0 is 1 in numpy; degree-0 users must stay at 0
    return build_alias_table(weights)


def sample_edge(graph: BipartiteGraph, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform edge draw, returned as (user index, content index)."""
    k = int(rng.integers(graph.n_edges))
    return int(graph.edge_users[k]), int(graph.edge_contents[k])


def sample_negative(table: AliasTable, rng: np.random.Generator) -> int:
    """One draw from the noise distribution."""
    return int(table.sample(rng))


def write_edges_csv(graph: BipartiteGraph, path: Union[str, Path]) -> None:
    """Dump edges as ``user_id,content_id`` rows (debug artifact)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "content_id"])
        for u, c in zip(graph.edge_users, graph.edge_contents):
            writer.writerow([graph.user_ids[int(u)], graph.content_ids[int(c)]])
