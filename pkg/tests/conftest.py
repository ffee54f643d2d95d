"""Shared fixtures: planted corpora trained once per session.

The expensive pieces (synthetic corpora, embedding training, full pipeline
runs) are session-scoped so module tests and the acceptance suite reuse the
same runs.  Wall-clock timings are captured where an acceptance criterion
budgets them.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

import viewdrift as vd
from viewdrift.pipeline import PipelineConfig, run_pipeline


@dataclass
class CorpusRun:
    config: vd.SynthConfig
    events: vd.EventLog
    profiles: dict
    truth: vd.GroundTruth
    watched: dict
    graph: object
    embedding: vd.EmbeddingMatrix
    train_seconds: float
    block_pairs: list


@dataclass
class PipelineRun:
    config: PipelineConfig
    out_dir: Path
    manifest: dict
    wall_seconds: float


def _build_corpus_run(cfg: vd.SynthConfig, train: vd.TrainConfig) -> CorpusRun:
    events, profiles, truth = vd.generate(cfg)
    watched = vd.derive_watched(events, min_watch_seconds=cfg.min_watch_seconds)
    graph = vd.build_bipartite(watched, min_programs_per_user=10)
    t0 = time.perf_counter()
    embedding = vd.train(graph, train)
    train_seconds = time.perf_counter() - t0
    pairs = []
    for uid in sorted(watched):
        result = vd.extract_blocks(watched[uid], profiles[uid])
        if isinstance(result, vd.BlockPair) and all(
            cid in embedding
            for cid in set(result.start_block) | set(result.end_block)
        ):
            pairs.append(result)
    return CorpusRun(
        config=cfg,
        events=events,
        profiles=profiles,
        truth=truth,
        watched=watched,
        graph=graph,
        embedding=embedding,
        train_seconds=train_seconds,
        block_pairs=pairs,
    )


@pytest.fixture(scope="session")
def warm_kernel():
    """Compile the SGD kernel outside any timed section."""
    cfg = vd.SynthConfig(genres=2, contents_per_genre=4, users=8,
                         views_per_user=(20, 25), seed=1,
                         subpools_per_genre=1, preferred_subpools=1)
    with warnings.catch_warnings():
        # deliberately tiny corpus; the short-history warning is expected
        warnings.simplefilter("ignore", RuntimeWarning)
        events, _, _ = vd.generate(cfg)
    watched = vd.derive_watched(events)
    graph = vd.build_bipartite(watched, min_programs_per_user=1)
    vd.train(graph, vd.TrainConfig(dim=4, total_samples=1000, seed=1))
    return True


@pytest.fixture(scope="session")
def no_drift_run(warm_kernel) -> CorpusRun:
    """Planted 5-genre, 200-content, 1000-user corpus with no drift."""
    cfg = vd.SynthConfig(
        genres=5,
        contents_per_genre=40,
        users=1000,
        views_per_user=(50, 90),
        drift="none",
        seed=42,
        subpools_per_genre=1,
        preferred_subpools=1,
    )
    train = vd.TrainConfig(dim=16, negatives=5, total_samples=5_000_000, seed=42)
    return _build_corpus_run(cfg, train)


@pytest.fixture(scope="session")
def broaden_run(warm_kernel, tmp_path_factory) -> PipelineRun:
    """Full pipeline over a corpus that broadens across genres while
    narrowing within them."""
    config = PipelineConfig(
        synth_genres=5,
        synth_contents_per_genre=40,
        synth_users=1000,
        synth_views_min=60,
        synth_views_max=90,
        synth_drift="broaden",
        synth_magnitude=1.0,
        synth_subpools_per_genre=4,
        synth_base_explore=0.02,
        synth_explore_max=0.10,
        dim=16,
        total_samples=5_000_000,
        kd=5,
        ka=20,
        sweep_ks=(1, 2, 5, 10, 20, 40),
        seed=202,
    )
    out_dir = tmp_path_factory.mktemp("broaden")
    t0 = time.perf_counter()
    manifest = run_pipeline(config, out_dir)
    wall = time.perf_counter() - t0
    return PipelineRun(config=config, out_dir=out_dir, manifest=manifest, wall_seconds=wall)


@pytest.fixture(scope="session")
def boost_run(warm_kernel, tmp_path_factory) -> PipelineRun:
    """Full pipeline over a corpus where half the users drift hard and pick
    up cross-genre blend contents along the way."""
    config = PipelineConfig(
        synth_genres=5,
        synth_contents_per_genre=40,
        synth_users=1000,
        synth_views_min=60,
        synth_views_max=90,
        synth_drift="broaden",
        synth_magnitude=0.0,
        synth_ambiguity_fraction=0.15,
        synth_blend_view_prob=0.3,
        synth_ambiguity_boost=1.0,
        synth_subpools_per_genre=4,
        synth_base_explore=0.02,
        synth_explore_max=0.10,
        dim=16,
        total_samples=5_000_000,
        kd=5,
        ka=20,
        group_size=300,
        seed=505,
    )
    out_dir = tmp_path_factory.mktemp("boost")
    t0 = time.perf_counter()
    manifest = run_pipeline(config, out_dir)
    wall = time.perf_counter() - t0
    return PipelineRun(config=config, out_dir=out_dir, manifest=manifest, wall_seconds=wall)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture()
def tiny_corpus():
    """Small deterministic corpus for fast module tests."""
    cfg = vd.SynthConfig(
        genres=3,
        contents_per_genre=10,
        users=40,
        views_per_user=(40, 50),
        seed=7,
        subpools_per_genre=2,
        preferred_subpools=1,
    )
    events, profiles, truth = vd.generate(cfg)
    watched = vd.derive_watched(events)
    return cfg, events, profiles, truth, watched
