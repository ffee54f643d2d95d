"""Embedding trainer: schedule, loss, gradients, persistence."""

import math
import time

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from oracles import finite_difference_gradient
from viewdrift.corpus import ParseError, ViewEvent, WatchedHistory
from viewdrift.embedding import (
    EmbeddingMatrix,
    SecondOrderEmbedding,
    TrainConfig,
    TrainingDivergedError,
    _check_finite,
    edge_gradients,
    edge_loss,
    learning_rate,
    load_embeddings,
    nearest_neighbors,
    save_embeddings,
    sgd_step,
    train,
)
from viewdrift.graph import build_bipartite


def planted_graph(n_users=40, contents_per_side=8, picks=5, seed=0):
    """Two disjoint co-viewing communities."""
    rng = np.random.default_rng(seed)
    spec = {}
    for u in range(n_users):
        side = u % 2
        pool = [f"s{side}c{i:02d}" for i in range(contents_per_side)]
        chosen = rng.choice(contents_per_side, size=picks, replace=False)
        spec[f"u{u:02d}"] = [pool[int(i)] for i in chosen]
    histories = {
        uid: WatchedHistory(
            user_id=uid,
            events=tuple(ViewEvent(uid, cid, t, 600.0) for t, cid in enumerate(cids)),
        )
        for uid, cids in spec.items()
    }
    return build_bipartite(histories, min_programs_per_user=1)


class TestLearningRate:
    def test_linear_decay(self):
        assert learning_rate(0, 10_000_000) == 0.025
        assert learning_rate(5_000_000, 10_000_000) == pytest.approx(0.0125)

    def test_floor(self):
        assert learning_rate(10_000_000, 10_000_000) == pytest.approx(2.5e-6)
        assert learning_rate(10_000_000, 10_000_000, floor=False) == 0.0

    def test_custom_rho0(self):
        assert learning_rate(0, 100, rho0=0.5) == 0.5
        assert learning_rate(100, 100, rho0=0.5) == pytest.approx(5e-5)


class TestEdgeLoss:
    def test_orthogonal_pair_costs_log2(self):
        u = np.array([1.0, 0.0])
        c = np.array([0.0, 1.0])
        assert edge_loss(u, c) == pytest.approx(math.log(2), abs=1e-15)

    def test_each_orthogonal_negative_adds_log2(self):
        u = np.array([1.0, 0.0])
        c = np.array([0.0, 1.0])
        neg = np.array([1.0, 0.0])
        assert edge_loss(u, c, [neg]) == pytest.approx(2 * math.log(2), abs=1e-15)
        assert edge_loss(u, c, [neg, neg]) == pytest.approx(3 * math.log(2), abs=1e-15)

    def test_dot_products_clamp(self):
        c = np.array([1.0])
        assert edge_loss(np.array([100.0]), c) == edge_loss(np.array([35.0]), c)

    def test_aligned_pair_is_cheap_misaligned_negative_expensive(self):
        u = np.array([2.0, 0.0])
        c = np.array([2.0, 0.0])
        assert edge_loss(u, c) < math.log(2)
        assert edge_loss(u, c, [u]) > edge_loss(u, c)


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("n_neg", [0, 1, 4])
    def test_match_central_differences(self, seed, n_neg):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(2, 10))
        u = rng.normal(scale=0.3, size=dim)
        c = rng.normal(scale=0.3, size=dim)
        negs = [rng.normal(scale=0.3, size=dim) for _ in range(n_neg)]
        grad_u, grad_c, grads_neg = edge_gradients(u, c, negs)

        fd_u = finite_difference_gradient(lambda x: edge_loss(x, c, negs), u)
        fd_c = finite_difference_gradient(lambda x: edge_loss(u, x, negs), c)
        assert np.allclose(grad_u, fd_u, atol=1e-7)
        assert np.allclose(grad_c, fd_c, atol=1e-7)
        for i, g in enumerate(grads_neg):
            def loss_of_neg(x, i=i):
                swapped = list(negs)
                swapped[i] = x
                return edge_loss(u, c, swapped)

            assert np.allclose(g, finite_difference_gradient(loss_of_neg, negs[i]),
                               atol=1e-7)

    def test_sgd_step_moves_the_right_way(self):
        u = np.array([0.3, 0.0])
        c = np.array([0.3, 0.0])
        neg = np.array([0.4, 0.0])
        pos_before = float(u @ c)
        neg_before = float(neg @ c)
        loss_before = edge_loss(u, c, [neg])
        sgd_step(u, c, [neg], lr=0.05)
        assert float(u @ c) > pos_before
        assert float(neg @ c) < neg_before
        assert edge_loss(u, c, [neg]) < loss_before


class TestTraining:
    def test_same_seed_same_vectors(self):
        g = planted_graph()
        cfg = TrainConfig(dim=8, total_samples=50_000, seed=11)
        a = train(g, cfg)
        b = train(g, cfg)
        assert a.ids == b.ids
        assert np.array_equal(a.vectors, b.vectors)

    def test_seed_changes_vectors(self):
        g = planted_graph()
        a = train(g, TrainConfig(dim=8, total_samples=50_000, seed=11))
        b = train(g, TrainConfig(dim=8, total_samples=50_000, seed=12))
        assert not np.array_equal(a.vectors, b.vectors)

    def test_multi_worker_smoke(self):
        g = planted_graph()
        emb = train(g, TrainConfig(dim=8, total_samples=60_000, seed=1, workers=3))
        assert emb.vectors.shape == (g.n_contents, 8)
        assert np.all(np.isfinite(emb.vectors))

    def test_probe_loss_drops_on_planted_graph(self):
        g = planted_graph()
        model = SecondOrderEmbedding(
            dim=8, total_samples=300_000, probe_size=256, seed=3
        ).fit(g)
        assert len(model.loss_path_) == 11  # before training + 10 checkpoints
        assert model.loss_path_[-1] < 0.8 * model.loss_path_[0]

    def test_estimator_api(self):
        model = SecondOrderEmbedding(dim=4, total_samples=1000)
        params = model.get_params()
        assert params["dim"] == 4 and params["total_samples"] == 1000
        assert clone(model).get_params() == params
        with pytest.raises(NotFittedError):
            model.nearest_neighbors("x", 1)
        with pytest.raises(TypeError):
            model.fit(np.zeros((3, 3)))

    def test_check_finite_names_the_bad_rows(self):
        g = planted_graph()
        user_vecs = np.zeros((g.n_users, 4))
        content_vecs = np.zeros((g.n_contents, 4))
        content_vecs[1, 2] = np.nan
        with pytest.raises(TrainingDivergedError, match=g.content_ids[1]):
            _check_finite(user_vecs, content_vecs, g, 1234)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"dim": 0},
            {"negatives": -1},
            {"total_samples": 0},
            {"rho0": 0.0},
            {"rho0": 1.0},
            {"noise_power": -1.0},
            {"workers": 0},
        ],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestEmbeddingMatrix:
    def test_lookup(self):
        emb = EmbeddingMatrix(ids=["a", "b"], vectors=np.eye(2))
        assert "a" in emb and "z" not in emb
        assert emb.dim == 2 and len(emb) == 2
        assert np.array_equal(emb.vector("b"), [0.0, 1.0])
        with pytest.raises(KeyError):
            emb.vector("z")

    @pytest.mark.parametrize(
        "ids,vectors,match",
        [
            (["a", "a"], np.eye(2), "duplicate"),
            (["a"], np.eye(2), "shape"),
            (["a", "b"], np.array([[1.0, 0.0], [np.nan, 1.0]]), "finite"),
        ],
    )
    def test_validation(self, ids, vectors, match):
        with pytest.raises(ValueError, match=match):
            EmbeddingMatrix(ids=ids, vectors=vectors)


class TestNearestNeighbors:
    def test_orthogonal_similarities_are_zero_ties_by_id(self):
        emb = EmbeddingMatrix(ids=["a", "c", "b"], vectors=np.eye(3))
        assert nearest_neighbors(emb, "a", 2) == [("b", 0.0), ("c", 0.0)]

    def test_orders_by_similarity(self):
        emb = EmbeddingMatrix(
            ids=["a", "far", "near"],
            vectors=np.array([[1.0, 0.0], [-1.0, 0.0], [0.9, 0.1]]),
        )
        out = nearest_neighbors(emb, "a", 2)
        assert [cid for cid, _ in out] == ["near", "far"]
        assert out[0][1] == pytest.approx(0.9 / math.hypot(0.9, 0.1))

    def test_k_bounds_and_zero_vectors(self):
        emb = EmbeddingMatrix(ids=["a", "b"], vectors=np.eye(2))
        with pytest.raises(ValueError, match="k must"):
            nearest_neighbors(emb, "a", 0)
        with pytest.raises(ValueError, match="k must"):
            nearest_neighbors(emb, "a", 2)
        degenerate = EmbeddingMatrix(
            ids=["a", "b"], vectors=np.array([[1.0, 0.0], [0.0, 0.0]])
        )
        with pytest.raises(ValueError, match="zero vectors"):
            nearest_neighbors(degenerate, "a", 1)


class TestPersistence:
    def awkward_matrix(self):
        vectors = np.array(
            [
                [0.1, -1.5e-17, 3.0],
                [1e300, 2.0 / 3.0, -0.0],
            ]
        )
        return EmbeddingMatrix(ids=["first", "second"], vectors=vectors)

    def test_round_trip_is_exact(self, tmp_path):
        emb = self.awkward_matrix()
        path = tmp_path / "emb.txt"
        save_embeddings(emb, path)
        assert path.read_text().splitlines()[0] == "2 3"
        back = load_embeddings(path)
        assert back.ids == emb.ids
        assert np.array_equal(back.vectors, emb.vectors)

    def test_rejects_whitespace_ids(self, tmp_path):
        emb = EmbeddingMatrix(ids=["a b"], vectors=np.ones((1, 2)))
        with pytest.raises(ValueError, match="whitespace"):
            save_embeddings(emb, tmp_path / "emb.txt")

    @pytest.mark.parametrize(
        "body,match",
        [
            ("3\n", "header"),
            ("x y\n", "bad header"),
            ("2 3\naa 1.0 2.0 3.0\nbb 1.0 2.0\n", "'bb' has 2 values"),
            ("3 2\naa 1.0 2.0\nbb 1.0 2.0\n", "header says 3"),
            ("1 2\naa 1.0 zz\n", "non-numeric"),
        ],
    )
    def test_load_errors(self, tmp_path, body, match):
        path = tmp_path / "emb.txt"
        path.write_text(body)
        with pytest.raises(ParseError, match=match):
            load_embeddings(path)

    def test_large_load_is_fast(self, tmp_path):
        rng = np.random.default_rng(0)
        n, dim = 20_878, 100
        emb = EmbeddingMatrix(
            ids=[f"c{i:05d}" for i in range(n)],
            vectors=rng.normal(size=(n, dim)),
        )
        path = tmp_path / "big.txt"
        save_embeddings(emb, path)
        t0 = time.perf_counter()
        back = load_embeddings(path)
        elapsed = time.perf_counter() - t0
        assert len(back) == n and back.dim == dim
        assert elapsed < 5.0
