"""Content embeddings trained by negative-sampling SGD on the bipartite graph.

Each view edge pulls a user vector and a content vector together through a
sigmoid of their dot product while pushed-away "negative" users are drawn
from a degree**0.75 noise distribution.  Only the content side is kept; user
vectors are a training artifact.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator

from viewdrift import _sgd
from viewdrift.corpus import ParseError
from viewdrift.graph import AliasTable, BipartiteGraph, build_noise_table

__all__ = [
    "TrainConfig",
    "TrainingDivergedError",
    "EmbeddingMatrix",
    "SecondOrderEmbedding",
    "learning_rate",
    "edge_loss",
    "edge_gradients",
    "sgd_step",
    "train",
    "nearest_neighbors",
    "save_embeddings",
    "load_embeddings",
]

MAX_DOT = _sgd.MAX_DOT
LR_FLOOR_FRACTION = 1e-4  # floor = rho0 * this, when enabled


class TrainingDivergedError(RuntimeError):
    """Non-finite parameters appeared during training."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run.

    ``total_samples`` counts edge draws; each draws ``negatives`` noise users.
    ``workers=1`` is bit-reproducible for a given seed; more workers update
    shared arrays lock-free and only reproduce statistically.
    """

    dim: int = 100
    negatives: int = 5
    total_samples: int = 10_000_000
    rho0: float = 0.025
    lr_floor: bool = True
    noise_power: float = 0.75
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.negatives < 0:
            raise ValueError(f"negatives must be >= 0, got {self.negatives}")
        if self.total_samples < 1:
            raise ValueError(f"total_samples must be >= 1, got {self.total_samples}")
        if not 0.0 < self.rho0 < 1.0:
            raise ValueError(f"rho0 must be in (0, 1), got {self.rho0}")
        if self.noise_power < 0:
            raise ValueError(f"noise_power must be >= 0, got {self.noise_power}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass
class EmbeddingMatrix:
    """Content ids with their embedding rows, all entries finite."""

    ids: list[str]
    vectors: np.ndarray
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise ValueError(
                f"vectors shape {self.vectors.shape} does not match {len(self.ids)} ids"
            )
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding contains non-finite entries")
        self._index = {cid: i for i, cid in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise ValueError("duplicate content ids in embedding")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, content_id: str) -> bool:
        return content_id in self._index

    def vector(self, content_id: str) -> np.ndarray:
        try:
            return self.vectors[self._index[content_id]]
        except KeyError:
            raise KeyError(content_id) from None


def learning_rate(
    t: int, total_samples: int, rho0: float = 0.025, floor: bool = True
) -> float:
    """Linear decay rho0 * (1 - t/total), floored at rho0 * 1e-4 when enabled."""
    lr = rho0 * (1.0 - t / total_samples)
    if floor:
        lr = max(lr, rho0 * LR_FLOOR_FRACTION)
    return lr


def _clamp(x: float) -> float:
    return max(-MAX_DOT, min(MAX_DOT, x))


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-_clamp(x)))


def edge_loss(
    u_vec: np.ndarray,
    c_vec: np.ndarray,
    negatives: Sequence[np.ndarray] = (),
) -> float:
    """-log sigma(u.c) - sum_k log sigma(-u_k.c), dots clamped to +-35."""
    loss = -math.log(_sigmoid(float(np.dot(u_vec, c_vec))))
    for neg in negatives:
        loss -= math.log(_sigmoid(-float(np.dot(neg, c_vec))))
    return loss


def edge_gradients(
    u_vec: np.ndarray,
    c_vec: np.ndarray,
    negatives: Sequence[np.ndarray] = (),
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Gradients of :func:`edge_loss` w.r.t. (u, c, each negative)."""
    g_pos = _sigmoid(float(np.dot(u_vec, c_vec))) - 1.0
    grad_u = g_pos * c_vec
    grad_c = g_pos * u_vec
    grads_neg = []
    for neg in negatives:
        s = _sigmoid(float(np.dot(neg, c_vec)))
        grads_neg.append(s * c_vec)
        grad_c = grad_c + s * neg
    return grad_u, grad_c, grads_neg


def sgd_step(
    u_vec: np.ndarray,
    c_vec: np.ndarray,
    negatives: Sequence[np.ndarray],
    lr: float,
) -> None:
    """One in-place descent step on all vectors of one sampled edge."""
    grad_u, grad_c, grads_neg = edge_gradients(u_vec, c_vec, negatives)
    u_vec -= lr * grad_u
    for neg, g in zip(negatives, grads_neg):
        neg -= lr * g
    c_vec -= lr * grad_c


def _probe_loss(
    user_vecs: np.ndarray,
    content_vecs: np.ndarray,
    probe_users: np.ndarray,
    probe_contents: np.ndarray,
    probe_negs: np.ndarray,
) -> float:
    """Mean edge loss over a fixed probe set (vectorized)."""
    u = user_vecs[probe_users]
    c = content_vecs[probe_contents]
    pos = np.clip(np.einsum("ij,ij->i", u, c), -MAX_DOT, MAX_DOT)
    loss = np.logaddexp(0.0, -pos)
    if probe_negs.shape[1]:
        nd = np.clip(
            np.einsum("ikj,ij->ik", user_vecs[probe_negs], c), -MAX_DOT, MAX_DOT
        )
        loss = loss + np.logaddexp(0.0, nd).sum(axis=1)
    return float(loss.mean())


def _check_finite(
    user_vecs: np.ndarray,
    content_vecs: np.ndarray,
    graph: BipartiteGraph,
    t_done: int,
) -> None:
    bad_u = np.flatnonzero(~np.isfinite(user_vecs).all(axis=1))
    bad_c = np.flatnonzero(~np.isfinite(content_vecs).all(axis=1))
    if bad_u.size or bad_c.size:
        names = [f"user {graph.user_ids[i]!r}" for i in bad_u[:3]]
        names += [f"content {graph.content_ids[i]!r}" for i in bad_c[:3]]
        raise TrainingDivergedError(
            f"non-finite parameters by sample {t_done}: " + ", ".join(names)
        )


def _fit_arrays(
    graph: BipartiteGraph,
    config: TrainConfig,
    probe_size: int = 0,
    checkpoints: int = 10,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Train and return (user vectors, content vectors, probe loss path)."""
    noise = build_noise_table(graph, power=config.noise_power)
    rng = np.random.default_rng(config.seed)
    bound = 0.5 / config.dim
    user_vecs = rng.uniform(-bound, bound, size=(graph.n_users, config.dim))
    content_vecs = rng.uniform(-bound, bound, size=(graph.n_contents, config.dim))

    probe_users = probe_contents = probe_negs = None
    loss_path: list[float] = []
    if probe_size > 0:
        probe_rng = np.random.default_rng((config.seed, 0x9E3779B9))
        pick = probe_rng.integers(graph.n_edges, size=probe_size)
        probe_users = graph.edge_users[pick]
        probe_contents = graph.edge_contents[pick]
        probe_negs = np.asarray(
            noise.sample(probe_rng, size=(probe_size, max(config.negatives, 1)))
        )[:, : config.negatives].reshape(probe_size, config.negatives)
        loss_path.append(
            _probe_loss(user_vecs, content_vecs, probe_users, probe_contents, probe_negs)
        )

    lr_min = config.rho0 * LR_FLOOR_FRACTION if config.lr_floor else 0.0
    # uint64 array, not a list: the kernel boxes its returned state as a
    # Python int, and feeding that back raw lets numba specialize the state
    # slot as int64, which overflows on values >= 2**63
    states = np.array(
        [_sgd.worker_state(config.seed, w) for w in range(config.workers)],
        dtype=np.uint64,
    )
    chunks = max(1, min(checkpoints, config.total_samples))
    base, extra = divmod(config.total_samples, chunks)
    t_next = 0
    for chunk in range(chunks):
        chunk_steps = base + (1 if chunk < extra else 0)
        if chunk_steps == 0:
            continue
        w_base, w_extra = divmod(chunk_steps, config.workers)
        offsets = []
        t = t_next
        for w in range(config.workers):
            steps = w_base + (1 if w < w_extra else 0)
            offsets.append((t, steps))
            t += steps
        if config.workers == 1:
            t_start, steps = offsets[0]
            states[0] = _sgd.run_chunk(
                user_vecs, content_vecs,
                graph.edge_users, graph.edge_contents,
                noise.prob, noise.alias,
                config.negatives, config.rho0, lr_min,
                t_start, steps, config.total_samples, states[0],
            )
        else:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                futures = {
                    w: pool.submit(
                        _sgd.run_chunk,
                        user_vecs, content_vecs,
                        graph.edge_users, graph.edge_contents,
                        noise.prob, noise.alias,
                        config.negatives, config.rho0, lr_min,
                        t_start, steps, config.total_samples, states[w],
                    )
                    for w, (t_start, steps) in enumerate(offsets)
                    if steps > 0
                }
                for w, fut in futures.items():
                    states[w] = fut.result()
        t_next += chunk_steps
        _check_finite(user_vecs, content_vecs, graph, t_next)
        if probe_size > 0:
            loss_path.append(
                _probe_loss(
                    user_vecs, content_vecs, probe_users, probe_contents, probe_negs
                )
            )
    return user_vecs, content_vecs, loss_path


def train(graph: BipartiteGraph, config: TrainConfig = TrainConfig()) -> EmbeddingMatrix:
    """Train content embeddings on the graph; see :class:`TrainConfig`."""
    _, content_vecs, _ = _fit_arrays(graph, config)
    return EmbeddingMatrix(ids=list(graph.content_ids), vectors=content_vecs)


class SecondOrderEmbedding(BaseEstimator):
    """Estimator wrapper around :func:`train`.

    ``fit`` takes a :class:`BipartiteGraph`; the learned content vectors are
    exposed as ``embedding_``.  With ``probe_size > 0`` a fixed edge sample is
    scored before training and after each of ``checkpoints`` chunks, giving
    ``loss_path_``.
    """

    def __init__(
        self,
        dim: int = 100,
        negatives: int = 5,
        total_samples: int = 10_000_000,
        rho0: float = 0.025,
        lr_floor: bool = True,
        noise_power: float = 0.75,
        probe_size: int = 0,
        checkpoints: int = 10,
        seed: int = 0,
        workers: int = 1,
    ):
        self.dim = dim
        self.negatives = negatives
        self.total_samples = total_samples
        self.rho0 = rho0
        self.lr_floor = lr_floor
        self.noise_power = noise_power
        self.probe_size = probe_size
        self.checkpoints = checkpoints
        self.seed = seed
        self.workers = workers

    def _config(self) -> TrainConfig:
        return TrainConfig(
            dim=self.dim,
            negatives=self.negatives,
            total_samples=self.total_samples,
            rho0=self.rho0,
            lr_floor=self.lr_floor,
            noise_power=self.noise_power,
            seed=self.seed,
            workers=self.workers,
        )

    def fit(self, graph: BipartiteGraph, y=None) -> "SecondOrderEmbedding":
        if not isinstance(graph, BipartiteGraph):
            raise TypeError("fit expects a BipartiteGraph")
        _, content_vecs, loss_path = _fit_arrays(
            graph,
            self._config(),
            probe_size=self.probe_size,
            checkpoints=self.checkpoints,
        )
        self.embedding_ = EmbeddingMatrix(
            ids=list(graph.content_ids), vectors=content_vecs
        )
        self.loss_path_ = loss_path
        return self

    def nearest_neighbors(self, content_id: str, k: int = 5) -> list[tuple[str, float]]:
        if not hasattr(self, "embedding_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("fit must be called before nearest_neighbors")
        return nearest_neighbors(self.embedding_, content_id, k)


def nearest_neighbors(
    embedding: EmbeddingMatrix, content_id: str, k: int
) -> list[tuple[str, float]]:
    """Top-k contents by cosine similarity, ties broken by id; query excluded."""
    if not 1 <= k <= len(embedding) - 1:
        raise ValueError(f"k must be in [1, {len(embedding) - 1}], got {k}")
    q = embedding.vector(content_id)
    qn = np.linalg.norm(q)
    norms = np.linalg.norm(embedding.vectors, axis=1)
    if qn == 0 or np.any(norms == 0):
        raise ValueError("cosine similarity undefined for zero vectors")
    sims = (embedding.vectors @ q) / (norms * qn)
    order = sorted(
        (i for i, cid in enumerate(embedding.ids) if cid != content_id),
        key=lambda i: (-sims[i], embedding.ids[i]),
    )
    return [(embedding.ids[i], float(sims[i])) for i in order[:k]]


def save_embeddings(embedding: EmbeddingMatrix, path: Union[str, Path]) -> None:
    """Write ``<count> <dim>`` then one ``<id> <v1> ... <vdim>`` line per content.

    Floats are written with repr, so a load round-trips exactly.  Ids must not
    contain whitespace.
    """
    for cid in embedding.ids:
        if any(ch.isspace() for ch in cid):
            raise ValueError(f"content id {cid!r} contains whitespace")
    with open(path, "w") as fh:
        fh.write(f"{len(embedding)} {embedding.dim}\n")
        for cid, row in zip(embedding.ids, embedding.vectors):
            fh.write(cid + " " + " ".join(repr(float(v)) for v in row) + "\n")


def load_embeddings(path: Union[str, Path]) -> EmbeddingMatrix:
    """Read the format written by :func:`save_embeddings`."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ParseError(f"{path}:1: expected '<count> <dim>' header")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise ParseError(f"{path}:1: bad header {header}") from None
        ids: list[str] = []
        rows: list[list[str]] = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ParseError(
                    f"{path}:{lineno}: row {parts[0]!r} has {len(parts) - 1} "
                    f"values, expected {dim}"
                )
            ids.append(parts[0])
            rows.append(parts[1:])
    if len(ids) != count:
        raise ParseError(f"{path}: header says {count} rows, found {len(ids)}")
    try:
        vectors = np.asarray(rows, dtype=np.float64)
    except ValueError:
        raise ParseError(f"{path}: non-numeric embedding value") from None
    if count == 0:
        vectors = vectors.reshape(0, dim)
    return EmbeddingMatrix(ids=ids, vectors=vectors)
