"""End-to-end pipeline: synth -> ingest -> graph -> embed -> cluster ->
diversity -> report, with content-addressed stage caching.

Each stage is keyed by a hash of its name, parameters and input file hashes;
reruns with unchanged inputs restore outputs from the cache directory instead
of recomputing.  ``manifest.json`` records every stage with hashes of its
inputs and outputs, so two runs can be compared byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import shutil
from dataclasses import asdict, dataclass, fields
from datetime import date
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from viewdrift import clustering, corpus, diversity, embedding, graph, stats, synth

__all__ = ["PipelineConfig", "run_pipeline", "emit_histogram", "load_config"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Flat configuration for the full pipeline (YAML-friendly).

    Leave ``events``/``profiles`` unset to generate a synthetic corpus from
    the ``synth_*`` fields; point them at files to skip the synth stage.
    """

    # input corpus (optional; otherwise synthesized)
    events: Optional[str] = None
    profiles: Optional[str] = None
    # synth
    synth_genres: int = 5
    synth_contents_per_genre: int = 40
    synth_users: int = 1000
    synth_views_min: int = 50
    synth_views_max: int = 90
    synth_drift: str = "none"
    synth_magnitude: float = 0.0
    synth_ambiguity_fraction: float = 0.0
    synth_subpools_per_genre: int = 4
    synth_base_explore: float = 0.03
    synth_explore_max: float = 0.25
    synth_blend_view_prob: float = 0.0
    synth_ambiguity_boost: float = 0.0
    # ingest
    min_watch_seconds: float = 300.0
    min_active_days: int = 0
    strict_days: bool = False
    active_window_start: Optional[str] = None
    active_window_end: Optional[str] = None
    block_size: int = 10
    warmup_skip: int = 10
    # graph
    min_programs_per_user: int = 10
    # embed
    dim: int = 100
    negatives: int = 5
    total_samples: int = 10_000_000
    rho0: float = 0.025
    lr_floor: bool = True
    noise_power: float = 0.75
    workers: int = 1
    # cluster
    kd: int = 20
    ka: int = 20
    fcm_m: float = 1.15
    fcm_tol: float = 1e-6
    fcm_max_iter: int = 300
    # diversity / report
    sweep_ks: tuple[int, ...] = (1, 2, 5, 10, 20, 40)
    hist_bins: int = 20
    alpha: float = 0.01
    group_size: int = 300
    delta_metric: str = "cde"
    seed: int = 0

    def __post_init__(self) -> None:
        if (self.events is None) != (self.profiles is None):
            raise ValueError("events and profiles must be given together")
        if self.delta_metric not in ("cde", "apd"):
            raise ValueError(
                f"delta_metric must be 'cde' or 'apd', got {self.delta_metric!r}"
            )
        if not self.sweep_ks:
            raise ValueError("sweep_ks must be non-empty")

    def synth_config(self) -> synth.SynthConfig:
        return synth.SynthConfig(
            genres=self.synth_genres,
            contents_per_genre=self.synth_contents_per_genre,
            users=self.synth_users,
            views_per_user=(self.synth_views_min, self.synth_views_max),
            drift=self.synth_drift,
            magnitude=self.synth_magnitude,
            ambiguity_fraction=self.synth_ambiguity_fraction,
            subpools_per_genre=self.synth_subpools_per_genre,
            base_explore=self.synth_base_explore,
            explore_max=self.synth_explore_max,
            blend_view_prob=self.synth_blend_view_prob,
            ambiguity_boost=self.synth_ambiguity_boost,
            min_watch_seconds=self.min_watch_seconds,
            seed=self.seed,
        )

    def eligibility(self) -> corpus.EligibilityCriteria:
        window = None
        if self.active_window_start is not None and self.active_window_end is not None:
            window = (
                date.fromisoformat(self.active_window_start),
                date.fromisoformat(self.active_window_end),
            )
        return corpus.EligibilityCriteria(
            min_active_days=self.min_active_days,
            strict_days=self.strict_days,
            active_within=window,
        )

    def train_config(self) -> embedding.TrainConfig:
        return embedding.TrainConfig(
            dim=self.dim,
            negatives=self.negatives,
            total_samples=self.total_samples,
            rho0=self.rho0,
            lr_floor=self.lr_floor,
            noise_power=self.noise_power,
            seed=self.seed,
            workers=self.workers,
        )


def load_config(path: Union[str, Path], overrides: Optional[dict] = None) -> PipelineConfig:
    """Read a flat YAML mapping into a PipelineConfig; unknown keys fail fast."""
    import yaml

    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a flat mapping")
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {unknown}")
    if "sweep_ks" in raw and raw["sweep_ks"] is not None:
        value = raw["sweep_ks"]
        if isinstance(value, str):
            value = [int(v) for v in value.split(",") if v.strip()]
        raw["sweep_ks"] = tuple(int(v) for v in value)
    return PipelineConfig(**raw)


def emit_histogram(
    values: Sequence[float], bins: int
) -> list[tuple[float, float, int]]:
    """Equal-width histogram rows (bin_lo, bin_hi, count); empty input errors.

    Bin edges follow numpy.histogram, so the last bin includes its upper
    edge and an all-equal sample lands in one occupied bin.
    """
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        raise ValueError("cannot build a histogram of zero values")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    counts, edges = np.histogram(vals, bins=bins)
    return [
        (float(edges[i]), float(edges[i + 1]), int(counts[i]))
        for i in range(len(counts))
    ]


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_key(name: str, params: dict, input_hashes: Sequence[str]) -> str:
    payload = json.dumps(
        {"stage": name, "params": params, "inputs": list(input_hashes)},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


class _Runner:
    """Executes stages with caching and accumulates manifest entries."""

    def __init__(self, out_dir: Path, cache_dir: Optional[Path], force: bool):
        self.out_dir = out_dir
        self.cache_dir = cache_dir
        self.force = force
        self.entries: list[dict] = []

    def run(
        self,
        name: str,
        params: dict,
        inputs: Sequence[Path],
        outputs: Sequence[str],
        fn: Callable[[], None],
    ) -> None:
        input_hashes = [_sha256(p) for p in inputs]
        key = _stage_key(name, params, input_hashes)
        slot = self.cache_dir / key if self.cache_dir else None
        out_paths = [self.out_dir / o for o in outputs]
        cached = False
        if (
            slot is not None
            and not self.force
            and (slot / ".complete").exists()
            and all((slot / o).exists() for o in outputs)
        ):
            for o in outputs:
                shutil.copyfile(slot / o, self.out_dir / o)
            cached = True
            log.info("stage %s: cache hit (%s)", name, key)
        else:
            fn()
            missing = [str(p) for p in out_paths if not p.exists()]
            if missing:
                raise RuntimeError(f"stage {name} did not write {missing}")
            if slot is not None:
                slot.mkdir(parents=True, exist_ok=True)
                for o in outputs:
                    shutil.copyfile(self.out_dir / o, slot / o)
                (slot / ".complete").touch()
            log.info("stage %s: computed (%s)", name, key)
        self.entries.append(
            {
                "name": name,
                "key": key,
                "cached": cached,
                "params": params,
                "inputs": [
                    {"path": str(p), "sha256": h}
                    for p, h in zip(inputs, input_hashes)
                ],
                "outputs": [
                    {"path": o, "sha256": _sha256(self.out_dir / o)}
                    for o in outputs
                ],
            }
        )


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value: float) -> str:
    return repr(float(value))


def _load_watched(cfg: PipelineConfig, events_path: Path):
    events = corpus.load_events(events_path, strict=False)
    return corpus.derive_watched(events, min_watch_seconds=cfg.min_watch_seconds)


def _eligible_pairs(
    cfg: PipelineConfig, events_path: Path, profiles_path: Path
) -> tuple[dict, list[corpus.BlockPair], list[corpus.Excluded]]:
    """Watched histories plus block pairs for every eligible user."""
    watched = _load_watched(cfg, events_path)
    profiles = corpus.load_profiles(profiles_path, strict=False)
    eligible = corpus.filter_eligible(watched, cfg.eligibility())
    pairs: list[corpus.BlockPair] = []
    excluded: list[corpus.Excluded] = []
    for uid in sorted(eligible):
        if uid not in profiles:
            excluded.append(corpus.Excluded(uid, len(eligible[uid]), "missing_profile"))
            continue
        result = corpus.extract_blocks(
            eligible[uid], profiles[uid], n=cfg.block_size, warmup_skip=cfg.warmup_skip
        )
        if isinstance(result, corpus.BlockPair):
            pairs.append(result)
        else:
            excluded.append(result)
    return eligible, pairs, excluded


def run_pipeline(
    config: PipelineConfig,
    out_dir: Union[str, Path],
    cache_dir: Optional[Union[str, Path]] = None,
    force: bool = False,
) -> dict:
    """Run every stage, write artifacts plus manifest.json, return the manifest."""
    cfg = config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = Path(cache_dir) if cache_dir else None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)
    runner = _Runner(out, cache, force)

    if cfg.events is None:
        synth_params = {
            k: v for k, v in asdict(cfg).items() if k.startswith("synth_")
        }
        synth_params.update(seed=cfg.seed, min_watch_seconds=cfg.min_watch_seconds)

        def do_synth() -> None:
            log_, profiles, truth = synth.generate(cfg.synth_config())
            synth.write_corpus(log_, profiles, truth, out)

        runner.run(
            "synth",
            synth_params,
            inputs=[],
            outputs=["events.csv", "profiles.csv", "ground_truth.json"],
            fn=do_synth,
        )
        events_path = out / "events.csv"
        profiles_path = out / "profiles.csv"
    else:
        events_path = Path(cfg.events)
        profiles_path = Path(cfg.profiles)

    ingest_params = {
        "min_watch_seconds": cfg.min_watch_seconds,
        "min_active_days": cfg.min_active_days,
        "strict_days": cfg.strict_days,
        "active_window": [cfg.active_window_start, cfg.active_window_end],
        "block_size": cfg.block_size,
        "warmup_skip": cfg.warmup_skip,
    }

    def do_ingest() -> None:
        eligible, pairs, excluded = _eligible_pairs(cfg, events_path, profiles_path)
        corpus.write_blocks_csv(pairs, out / "blocks.csv")
        reasons: dict[str, int] = {}
        for e in excluded:
            reasons[e.reason] = reasons.get(e.reason, 0) + 1
        summary = {
            "eligible_users": len(eligible),
            "users_with_blocks": len(pairs),
            "excluded": reasons,
        }
        with open(out / "ingest_summary.json", "w") as fh:
            json.dump(summary, fh, sort_keys=True, indent=1)
            fh.write("\n")

    runner.run(
        "ingest",
        ingest_params,
        inputs=[events_path, profiles_path],
        outputs=["blocks.csv", "ingest_summary.json"],
        fn=do_ingest,
    )

    graph_params = {
        "min_watch_seconds": cfg.min_watch_seconds,
        "min_programs_per_user": cfg.min_programs_per_user,
    }

    def do_graph() -> None:
        g = graph.build_bipartite(
            _load_watched(cfg, events_path),
            min_programs_per_user=cfg.min_programs_per_user,
        )
        graph.write_edges_csv(g, out / "edges.csv")

    runner.run(
        "graph", graph_params, inputs=[events_path], outputs=["edges.csv"], fn=do_graph
    )

    embed_params = {
        **graph_params,
        "dim": cfg.dim,
        "negatives": cfg.negatives,
        "total_samples": cfg.total_samples,
        "rho0": cfg.rho0,
        "lr_floor": cfg.lr_floor,
        "noise_power": cfg.noise_power,
        "seed": cfg.seed,
        "workers": cfg.workers,
    }

    def do_embed() -> None:
        g = graph.build_bipartite(
            _load_watched(cfg, events_path),
            min_programs_per_user=cfg.min_programs_per_user,
        )
        emb = embedding.train(g, cfg.train_config())
        embedding.save_embeddings(emb, out / "embeddings.txt")

    runner.run(
        "embed",
        embed_params,
        inputs=[events_path],
        outputs=["embeddings.txt"],
        fn=do_embed,
    )

    cluster_params = {
        "kd": cfg.kd,
        "ka": cfg.ka,
        "fcm_m": cfg.fcm_m,
        "fcm_tol": cfg.fcm_tol,
        "fcm_max_iter": cfg.fcm_max_iter,
    }

    def do_cluster() -> None:
        emb = embedding.load_embeddings(out / "embeddings.txt")
        model = clustering.AverageLinkageClustering(
            n_clusters=min(cfg.kd, len(emb))
        ).fit(emb.vectors)
        clustering.write_linkage_json(emb.ids, model.merges_, out / "linkage.json")
        hard = clustering.HardAssignment(
            n_clusters=min(cfg.kd, len(emb)),
            labels={
                cid: int(l) for cid, l in zip(emb.ids, model.cut(min(cfg.kd, len(emb))))
            },
        )
        clustering.write_assignment_csv(hard, out / "clusters.csv")
        init = clustering.HardAssignment(
            n_clusters=min(cfg.ka, len(emb)),
            labels={
                cid: int(l) for cid, l in zip(emb.ids, model.cut(min(cfg.ka, len(emb))))
            },
        )
        membership = clustering.soft_cluster(
            emb, init, m=cfg.fcm_m, tol=cfg.fcm_tol, max_iter=cfg.fcm_max_iter
        )
        clustering.write_membership_csv(membership, out / "membership.csv")

    runner.run(
        "cluster",
        cluster_params,
        inputs=[out / "embeddings.txt"],
        outputs=["clusters.csv", "membership.csv", "linkage.json"],
        fn=do_cluster,
    )

    diversity_params = {
        **ingest_params,
        "sweep_ks": list(cfg.sweep_ks),
        "hist_bins": cfg.hist_bins,
    }

    def do_diversity() -> None:
        emb = embedding.load_embeddings(out / "embeddings.txt")
        hard = clustering.read_assignment_csv(out / "clusters.csv")
        membership = clustering.read_membership_csv(out / "membership.csv", m=cfg.fcm_m)
        linkage_ids, merges = clustering.read_linkage_json(out / "linkage.json")
        eligible, pairs, _ = _eligible_pairs(cfg, events_path, profiles_path)

        scored = diversity.ambiguity_scores(membership)
        rows = []
        usable_pairs = []
        skipped = 0
        for pair in pairs:
            block_ids = set(pair.start_block) | set(pair.end_block)
            if any(cid not in emb for cid in block_ids):
                skipped += 1
                continue
            usable_pairs.append(pair)
            for block_name, block in (
                ("start", pair.start_block),
                ("end", pair.end_block),
            ):
                rows.append(
                    (
                        pair.user_id,
                        block_name,
                        "apd",
                        "",
                        _fmt(diversity.avg_pairwise_distance(block, emb)),
                    )
                )
                rows.append(
                    (
                        pair.user_id,
                        block_name,
                        "cde",
                        hard.n_clusters,
                        _fmt(diversity.cde(block, hard)),
                    )
                )
        if skipped:
            log.info("diversity: skipped %d users with unembedded contents", skipped)
        if not usable_pairs:
            raise RuntimeError("no user has fully embedded blocks")
        _write_csv(
            out / "diversity.csv",
            ["user_id", "block", "metric", "kd", "value"],
            rows,
        )

        # max ambiguity strictly before the end block, over the full history
        amb_rows = []
        for pair in usable_pairs:
            history = eligible[pair.user_id]
            try:
                value = diversity.max_ambiguity(
                    history, pair.end_block_history_start, scored, missing="skip"
                )
            except ValueError:
                continue
            amb_rows.append((pair.user_id, _fmt(value)))
        _write_csv(out / "user_ambiguity.csv", ["user_id", "max_ambiguity"], amb_rows)

        content_rows = [
            (cid, _fmt(scored[cid])) for cid in sorted(scored)
        ]
        _write_csv(out / "ambiguity.csv", ["content_id", "ambiguity"], content_rows)

        # sweep cuts reuse the stored dendrogram
        sweep_rows = []
        ks = [k for k in cfg.sweep_ks if 1 <= k <= len(linkage_ids)]
        for kd in ks:
            labels = clustering.cut_from_merges(len(linkage_ids), merges, kd)
            assignment = clustering.HardAssignment(
                n_clusters=kd,
                labels={cid: int(l) for cid, l in zip(linkage_ids, labels)},
            )
            start = [diversity.cde(p.start_block, assignment) for p in usable_pairs]
            end = [diversity.cde(p.end_block, assignment) for p in usable_pairs]
            deltas = [e - s for s, e in zip(start, end)]
            mean_delta = float(np.mean(deltas))
            if len(usable_pairs) < 2:
                p_value = float("nan")
            else:
                try:
                    p_value = stats.paired_t(start, end).p_value
                except stats.DegenerateVarianceError:
                    p_value = float("nan")
            sweep_rows.append((kd, _fmt(mean_delta), _fmt(p_value)))
        _write_csv(out / "kd_sweep.csv", ["kd", "mean_delta", "p_value"], sweep_rows)

        apd_values = {
            "start": [float(r[4]) for r in rows if r[2] == "apd" and r[1] == "start"],
            "end": [float(r[4]) for r in rows if r[2] == "apd" and r[1] == "end"],
        }
        hist_rows = []
        for block_name in ("start", "end"):
            for lo, hi, count in emit_histogram(apd_values[block_name], cfg.hist_bins):
                hist_rows.append((block_name, _fmt(lo), _fmt(hi), count))
        _write_csv(
            out / "apd_hist.csv", ["block", "bin_lo", "bin_hi", "count"], hist_rows
        )
        amb_hist = emit_histogram(
            [scored[cid] for cid in sorted(scored)], cfg.hist_bins
        )
        _write_csv(
            out / "ambiguity_hist.csv",
            ["bin_lo", "bin_hi", "count"],
            [(_fmt(lo), _fmt(hi), count) for lo, hi, count in amb_hist],
        )

    runner.run(
        "diversity",
        diversity_params,
        inputs=[
            events_path,
            profiles_path,
            out / "embeddings.txt",
            out / "clusters.csv",
            out / "membership.csv",
            out / "linkage.json",
        ],
        outputs=[
            "diversity.csv",
            "kd_sweep.csv",
            "ambiguity.csv",
            "user_ambiguity.csv",
            "apd_hist.csv",
            "ambiguity_hist.csv",
        ],
        fn=do_diversity,
    )

    report_params = {
        "alpha": cfg.alpha,
        "group_size": cfg.group_size,
        "delta_metric": cfg.delta_metric,
    }

    def do_report() -> None:
        scores = read_diversity_csv(out / "diversity.csv")
        report = stats.diversity_change_report(scores, alpha=cfg.alpha)
        with open(out / "report.json", "w") as fh:
            json.dump(report, fh, sort_keys=True, indent=1)
            fh.write("\n")

        user_scores = read_user_ambiguity_csv(out / "user_ambiguity.csv")
        deltas = _per_user_delta(scores, cfg.delta_metric)
        deltas = {u: d for u, d in deltas.items() if u in user_scores}
        scores_with_delta = {u: user_scores[u] for u in deltas}
        try:
            split = stats.split_by_max_ambiguity(scores_with_delta, cfg.group_size)
            amb_report = stats.ambiguity_group_report(split, deltas, alpha=cfg.alpha)
        except ValueError as exc:
            amb_report = {"error": str(exc), "alpha": cfg.alpha}
        amb_report["metric"] = cfg.delta_metric
        with open(out / "ambiguity_report.json", "w") as fh:
            json.dump(amb_report, fh, sort_keys=True, indent=1)
            fh.write("\n")

    runner.run(
        "report",
        report_params,
        inputs=[out / "diversity.csv", out / "user_ambiguity.csv"],
        outputs=["report.json", "ambiguity_report.json"],
        fn=do_report,
    )

    manifest = {
        "config": {
            **asdict(cfg),
            "sweep_ks": list(cfg.sweep_ks),
        },
        "stages": runner.entries,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def read_diversity_csv(path: Union[str, Path]) -> list[diversity.DiversityScore]:
    """Read rows written by the diversity stage."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                diversity.DiversityScore(
                    user_id=row["user_id"],
                    block=row["block"],
                    metric=row["metric"],
                    value=float(row["value"]),
                    kd=int(row["kd"]) if row["kd"] else None,
                )
            )
    return out


def read_user_ambiguity_csv(path: Union[str, Path]) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return {row["user_id"]: float(row["max_ambiguity"]) for row in reader}


def _per_user_delta(
    scores: Sequence[diversity.DiversityScore], metric: str
) -> dict[str, float]:
    acc: dict[str, dict[str, float]] = {}
    for s in scores:
        if s.metric == metric:
            acc.setdefault(s.user_id, {})[s.block] = s.value
    return {
        uid: blocks["end"] - blocks["start"]
        for uid, blocks in acc.items()
        if set(blocks) == {"start", "end"}
    }
