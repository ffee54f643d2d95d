"""Clustering of content embeddings: average-linkage HAC and fuzzy c-means.

HAC runs once on cosine distances and the resulting dendrogram can be cut at
any cluster count, so a sweep over K_d shares a single merge tree.  Fuzzy
c-means then refines a hard cut into soft memberships whose row entropy is
the content's ambiguity score.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from viewdrift.corpus import ParseError
from viewdrift.embedding import EmbeddingMatrix

__all__ = [
    "AverageLinkageClustering",
    "FuzzyCMeans",
    "HardAssignment",
    "MembershipMatrix",
    "hard_cluster",
    "cut_assignments",
    "soft_cluster",
    "fcm_objective",
    "cut_from_merges",
    "write_assignment_csv",
    "read_assignment_csv",
    "write_membership_csv",
    "read_membership_csv",
    "write_linkage_json",
    "read_linkage_json",
]


@dataclass(frozen=True)
class HardAssignment:
    """Content id -> cluster label in [0, n_clusters)."""

    n_clusters: int
    labels: dict[str, int]

    def __post_init__(self) -> None:
        bad = {l for l in self.labels.values() if not 0 <= l < self.n_clusters}
        if bad:
            raise ValueError(f"labels outside [0, {self.n_clusters}): {sorted(bad)}")


@dataclass
class MembershipMatrix:
    """Row-stochastic membership of each content in each kept cluster.

    ``cluster_labels[j]`` is the hard-assignment label that seeded column j;
    initialization clusters that started empty are dropped.
    """

    ids: list[str]
    matrix: np.ndarray
    cluster_labels: list[int]
    m: float

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (len(self.ids), len(self.cluster_labels)):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{len(self.ids)} ids x {len(self.cluster_labels)} clusters"
            )

    def row(self, content_id: str) -> np.ndarray:
        try:
            return self.matrix[self.ids.index(content_id)]
        except ValueError:
            raise KeyError(content_id) from None


def _normalized_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        bad = int(np.flatnonzero(norms == 0)[0])
        raise ValueError(f"row {bad} has zero norm; cosine distance undefined")
    return X / norms[:, None]


class AverageLinkageClustering(BaseEstimator, ClusterMixin):
    """Agglomerative clustering, average linkage on cosine distance.

    Cluster distances follow the Lance-Williams average-linkage update.  When
    several pairs tie at the minimum distance, the pair whose (creation
    index, creation index) key is lexicographically smallest merges first;
    leaves are created in input order, merged clusters in merge order.  This
    makes the dendrogram deterministic.
    """

    def __init__(self, n_clusters: int = 20):
        self.n_clusters = n_clusters

    def fit(self, X, y=None) -> "AverageLinkageClustering":
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        if not 1 <= self.n_clusters <= n:
            raise ValueError(
                f"n_clusters must be in [1, {n}], got {self.n_clusters}"
            )
        normed = _normalized_rows(X)
        D = 1.0 - normed @ normed.T
        np.fill_diagonal(D, np.inf)

        creation = np.arange(n, dtype=np.int64)
        size = np.ones(n, dtype=np.int64)
        merges = np.empty((n - 1, 4), dtype=np.float64)
        for step in range(n - 1):
            dmin = D.min()
            cand_i, cand_j = np.nonzero(D == dmin)
            best = None
            best_key = None
            for i, j in zip(cand_i, cand_j):
                if i >= j:
                    continue
                ci, cj = creation[i], creation[j]
                key = (ci, cj) if ci < cj else (cj, ci)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (int(i), int(j))
            a, b = best
            si, sj = size[a], size[b]
            row = (si * D[a] + sj * D[b]) / (si + sj)
            D[a, :] = row
            D[:, a] = row
            D[a, a] = np.inf
            D[b, :] = np.inf
            D[:, b] = np.inf
            merges[step] = (best_key[0], best_key[1], dmin, si + sj)
            creation[a] = n + step
            size[a] = si + sj

        self.n_leaves_ = n
        self.merges_ = merges
        self.labels_ = self.cut(self.n_clusters)
        return self

    def cut(self, n_clusters: int) -> np.ndarray:
        """Labels for a cut of the fitted dendrogram at ``n_clusters``."""
        if not hasattr(self, "merges_"):
            raise NotFittedError("fit must be called before cut")
        return cut_from_merges(self.n_leaves_, self.merges_, n_clusters)


def cut_from_merges(
    n_leaves: int, merges: np.ndarray, n_clusters: int
) -> np.ndarray:
    """Apply the first n_leaves - n_clusters merges and label the components.

    Labels are assigned in order of each cluster's first point, so they run
    0..n_clusters-1 deterministically.
    """
    if not 1 <= n_clusters <= n_leaves:
        raise ValueError(f"n_clusters must be in [1, {n_leaves}], got {n_clusters}")
    n_apply = n_leaves - n_clusters
    parent = np.arange(n_leaves + n_apply, dtype=np.int64)
    for step in range(n_apply):
        left, right = int(merges[step, 0]), int(merges[step, 1])
        parent[left] = n_leaves + step
        parent[right] = n_leaves + step

    def root(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    labels = np.empty(n_leaves, dtype=np.int64)
    relabel: dict[int, int] = {}
    for leaf in range(n_leaves):
        r = root(leaf)
        if r not in relabel:
            relabel[r] = len(relabel)
        labels[leaf] = relabel[r]
    return labels


class FuzzyCMeans(BaseEstimator, ClusterMixin):
    """Fuzzy c-means with fuzzifier m > 1 on (by default) length-normalized rows.

    ``fit(X, init_labels=...)`` seeds memberships one-hot from a hard
    assignment; init labels with no points are dropped with a warning and the
    effective cluster count shrinks.  Iterations alternate centroid and
    membership updates until the largest membership change falls below
    ``tol``; the objective is recorded after each iteration and never
    increases.
    """

    def __init__(
        self,
        n_clusters: int = 20,
        m: float = 1.15,
        tol: float = 1e-6,
        max_iter: int = 300,
        normalize: bool = True,
    ):
        self.n_clusters = n_clusters
        self.m = m
        self.tol = tol
        self.max_iter = max_iter
        self.normalize = normalize

    def fit(self, X, y=None, init_labels: Optional[Sequence[int]] = None):
        if self.m <= 1.0:
            raise ValueError(f"fuzzifier m must be > 1, got {self.m}")
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        if not 1 <= self.n_clusters <= n:
            raise ValueError(f"n_clusters must be in [1, {n}], got {self.n_clusters}")
        if init_labels is None:
            raise ValueError("init_labels is required (one-hot initialization)")
        labels = np.asarray(init_labels, dtype=np.int64)
        if labels.shape != (n,):
            raise ValueError(f"init_labels must have shape ({n},)")
        if labels.min() < 0 or labels.max() >= self.n_clusters:
            raise ValueError("init_labels must lie in [0, n_clusters)")
        if self.normalize:
            X = _normalized_rows(X)

        kept = [k for k in range(self.n_clusters) if np.any(labels == k)]
        dropped = sorted(set(range(self.n_clusters)) - set(kept))
        if dropped:
            warnings.warn(
                f"init clusters {dropped} are empty and were dropped; "
                f"effective n_clusters is {len(kept)}",
                RuntimeWarning,
                stacklevel=2,
            )
        col = {k: j for j, k in enumerate(kept)}
        U = np.zeros((n, len(kept)), dtype=np.float64)
        U[np.arange(n), [col[int(l)] for l in labels]] = 1.0

        exponent = 2.0 / (self.m - 1.0)
        objective_path: list[float] = []
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            um = U**self.m
            centers = (um.T @ X) / um.sum(axis=0)[:, None]
            sq = _sq_distances(X, centers)
            U_new = _membership_update(sq, exponent)
            objective_path.append(float((U_new**self.m * sq).sum()))
            shift = float(np.abs(U_new - U).max())
            U = U_new
            if shift < self.tol:
                break

        self.membership_ = U
        self.cluster_centers_ = centers
        self.cluster_labels_ = kept
        self.labels_ = np.asarray([kept[j] for j in U.argmax(axis=1)], dtype=np.int64)
        self.objective_path_ = objective_path
        self.n_iter_ = n_iter
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "cluster_centers_"):
            raise NotFittedError("fit must be called before predict")
        X = check_array(X, dtype=np.float64)
        if self.normalize:
            X = _normalized_rows(X)
        sq = _sq_distances(X, self.cluster_centers_)
        exponent = 2.0 / (self.m - 1.0)
        U = _membership_update(sq, exponent)
        return np.asarray(
            [self.cluster_labels_[j] for j in U.argmax(axis=1)], dtype=np.int64
        )


def _sq_distances(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared euclidean distances, clipped at zero against fp noise."""
    sq = (
        (X**2).sum(axis=1)[:, None]
        - 2.0 * (X @ centers.T)
        + (centers**2).sum(axis=1)[None, :]
    )
    return np.maximum(sq, 0.0)


def _membership_update(sq: np.ndarray, exponent: float) -> np.ndarray:
    """Membership u_ik = 1 / sum_j (d_ik / d_ij)**(2/(m-1)), coincidence-aware.

    Rows where some distance is exactly zero split membership uniformly over
    the zero-distance centroids.  Ratios are taken against the row minimum so
    large exponents cannot overflow.
    """
    n, k = sq.shape
    U = np.zeros((n, k), dtype=np.float64)
    rmin = sq.min(axis=1)
    coincident = rmin == 0.0
    if np.any(coincident):
        hits = sq[coincident] == 0.0
        U[coincident] = hits / hits.sum(axis=1)[:, None]
    regular = ~coincident
    if np.any(regular):
        ratios = sq[regular] / rmin[regular, None]
        w = ratios ** (-exponent / 2.0)  # == (d_ik/d_imin)**-exponent on sqrt scale
        U[regular] = w / w.sum(axis=1)[:, None]
    return U


def fcm_objective(
    X: np.ndarray, memberships: np.ndarray, centers: np.ndarray, m: float
) -> float:
    """J = sum_ik u_ik**m * ||x_i - v_k||**2 for the given state."""
    X = np.asarray(X, dtype=np.float64)
    memberships = np.asarray(memberships, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    return float((memberships**m * _sq_distances(X, centers)).sum())


def hard_cluster(embedding: EmbeddingMatrix, n_clusters: int) -> HardAssignment:
    """Cluster an embedding with HAC and return id-keyed labels."""
    model = AverageLinkageClustering(n_clusters=n_clusters).fit(embedding.vectors)
    return HardAssignment(
        n_clusters=n_clusters,
        labels={cid: int(l) for cid, l in zip(embedding.ids, model.labels_)},
    )


def cut_assignments(
    embedding: EmbeddingMatrix, k_list: Iterable[int]
) -> dict[int, HardAssignment]:
    """Cuts of one dendrogram at several cluster counts."""
    ks = list(k_list)
    if not ks:
        raise ValueError("k_list must be non-empty")
    model = AverageLinkageClustering(n_clusters=min(max(ks), len(embedding))).fit(
        embedding.vectors
    )
    out = {}
    for k in ks:
        labels = model.cut(k)
        out[k] = HardAssignment(
            n_clusters=k,
            labels={cid: int(l) for cid, l in zip(embedding.ids, labels)},
        )
    return out


def soft_cluster(
    embedding: EmbeddingMatrix,
    init: HardAssignment,
    m: float = 1.15,
    tol: float = 1e-6,
    max_iter: int = 300,
) -> MembershipMatrix:
    """Fuzzy memberships seeded from a hard assignment of the same contents."""
    missing = [cid for cid in embedding.ids if cid not in init.labels]
    if missing:
        raise ValueError(f"init assignment lacks labels for {missing[:3]}")
    labels = [init.labels[cid] for cid in embedding.ids]
    model = FuzzyCMeans(n_clusters=init.n_clusters, m=m, tol=tol, max_iter=max_iter)
    model.fit(embedding.vectors, init_labels=labels)
    return MembershipMatrix(
        ids=list(embedding.ids),
        matrix=model.membership_,
        cluster_labels=list(model.cluster_labels_),
        m=m,
    )


def write_assignment_csv(
    assignment: HardAssignment, path: Union[str, Path]
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["content_id", "cluster"])
        for cid in sorted(assignment.labels):
            writer.writerow([cid, assignment.labels[cid]])


def read_assignment_csv(path: Union[str, Path]) -> HardAssignment:
    path = Path(path)
    labels: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or {"content_id", "cluster"} - set(reader.fieldnames):
            raise ParseError(f"{path}:1: expected content_id,cluster header")
        for row in reader:
            labels[row["content_id"]] = int(row["cluster"])
    if not labels:
        raise ParseError(f"{path}: no assignments")
    return HardAssignment(n_clusters=max(labels.values()) + 1, labels=labels)


def write_membership_csv(
    membership: MembershipMatrix, path: Union[str, Path]
) -> None:
    k = len(membership.cluster_labels)
    order = sorted(range(len(membership.ids)), key=lambda i: membership.ids[i])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["content_id"] + [f"u_{j}" for j in range(k)])
        for i in order:
            writer.writerow(
                [membership.ids[i]] + [repr(float(v)) for v in membership.matrix[i]]
            )


def read_membership_csv(path: Union[str, Path], m: float = 1.15) -> MembershipMatrix:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "content_id":
            raise ParseError(f"{path}:1: expected content_id,u_0,... header")
        k = len(header) - 1
        ids = []
        rows = []
        for row in reader:
            if len(row) != k + 1:
                raise ParseError(f"{path}: row for {row[0]!r} has wrong width")
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return MembershipMatrix(
        ids=ids,
        matrix=np.asarray(rows, dtype=np.float64).reshape(len(ids), k),
        cluster_labels=list(range(k)),
        m=m,
    )


def write_linkage_json(
    ids: Sequence[str], merges: np.ndarray, path: Union[str, Path]
) -> None:
    """Persist a dendrogram (leaf order plus merge table) as JSON."""
    payload = {
        "ids": list(ids),
        "merges": [
            [int(row[0]), int(row[1]), repr(float(row[2])), int(row[3])]
            for row in merges
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def read_linkage_json(path: Union[str, Path]) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        payload = json.load(fh)
    ids = list(payload["ids"])
    merges = np.asarray(
        [[float(a), float(b), float(d), float(s)] for a, b, d, s in payload["merges"]],
        dtype=np.float64,
    ).reshape(len(ids) - 1 if ids else 0, 4)
    return ids, merges
