"""Command line interface.

Subcommands mirror the pipeline stages so each step can run standalone on
files, while ``run`` executes the whole pipeline from a YAML config with
stage caching.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from viewdrift import clustering, corpus, diversity, embedding, graph, pipeline, stats, synth

log = logging.getLogger("viewdrift")


def _add_watched_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--events", required=True, help="events CSV/JSONL file")
    p.add_argument("--min-watch-seconds", type=float, default=300.0,
                   help="views shorter than this are not 'watched' (default 300)")


def _watched(args) -> dict[str, corpus.WatchedHistory]:
    events = corpus.load_events(args.events, strict=False)
    if events.malformed:
        log.warning("%d malformed rows skipped", len(events.malformed))
    return corpus.derive_watched(events, min_watch_seconds=args.min_watch_seconds)


def _cmd_synth(args) -> int:
    config = synth.SynthConfig(
        genres=args.genres,
        contents_per_genre=args.contents_per_genre,
        users=args.users,
        views_per_user=(args.views_min, args.views_max),
        drift=args.drift,
        magnitude=args.magnitude,
        ambiguity_fraction=args.ambiguity_fraction,
        blend_view_prob=args.blend_view_prob,
        ambiguity_boost=args.ambiguity_boost,
        seed=args.seed,
    )
    events, profiles, truth = synth.generate(config)
    paths = synth.write_corpus(events, profiles, truth, args.out_dir)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


def _cmd_ingest(args) -> int:
    watched = _watched(args)
    profiles = corpus.load_profiles(args.profiles, strict=False)
    criteria = corpus.EligibilityCriteria(
        min_active_days=args.min_active_days, strict_days=args.strict_days
    )
    eligible = corpus.filter_eligible(watched, criteria)
    pairs = []
    excluded = 0
    for uid in sorted(eligible):
        if uid not in profiles:
            excluded += 1
            continue
        result = corpus.extract_blocks(
            eligible[uid], profiles[uid], n=args.n, warmup_skip=args.warmup_skip
        )
        if isinstance(result, corpus.BlockPair):
            pairs.append(result)
        else:
            excluded += 1
    corpus.write_blocks_csv(pairs, args.out)
    print(f"blocks: {args.out} ({len(pairs)} users, {excluded} excluded)")
    return 0


def _cmd_graph(args) -> int:
    g = graph.build_bipartite(
        _watched(args), min_programs_per_user=args.min_programs
    )
    graph.write_edges_csv(g, args.out)
    print(
        f"graph: {g.n_users} users, {g.n_contents} contents, {g.n_edges} edges "
        f"-> {args.out}"
    )
    return 0


def _cmd_embed(args) -> int:
    g = graph.build_bipartite(
        _watched(args), min_programs_per_user=args.min_programs
    )
    config = embedding.TrainConfig(
        dim=args.dim,
        negatives=args.negatives,
        total_samples=int(args.samples),
        rho0=args.rho0,
        lr_floor=not args.no_lr_floor,
        noise_power=args.noise_power,
        seed=args.seed,
        workers=args.workers,
    )
    emb = embedding.train(g, config)
    embedding.save_embeddings(emb, args.out)
    print(f"embeddings: {len(emb)} x {emb.dim} -> {args.out}")
    return 0


def _cmd_cluster(args) -> int:
    emb = embedding.load_embeddings(args.emb)
    model = clustering.AverageLinkageClustering(n_clusters=args.kd).fit(emb.vectors)
    hard = clustering.HardAssignment(
        n_clusters=args.kd,
        labels={cid: int(l) for cid, l in zip(emb.ids, model.labels_)},
    )
    clustering.write_assignment_csv(hard, args.out)
    print(f"clusters: K={args.kd} -> {args.out}")
    if args.linkage:
        clustering.write_linkage_json(emb.ids, model.merges_, args.linkage)
        print(f"linkage: {args.linkage}")
    if args.fuzzy:
        init = clustering.HardAssignment(
            n_clusters=args.ka,
            labels={cid: int(l) for cid, l in zip(emb.ids, model.cut(args.ka))},
        )
        membership = clustering.soft_cluster(
            emb, init, m=args.m, tol=args.tol, max_iter=args.max_iter
        )
        clustering.write_membership_csv(membership, args.membership_out)
        print(f"membership: K={args.ka}, m={args.m} -> {args.membership_out}")
    return 0


def _cmd_diversity(args) -> int:
    emb = embedding.load_embeddings(args.emb)
    hard = clustering.read_assignment_csv(args.clusters)
    pairs = corpus.read_blocks_csv(args.blocks)
    rows = []
    skipped = 0
    for pair in pairs:
        block_ids = set(pair.start_block) | set(pair.end_block)
        if any(cid not in emb for cid in block_ids):
            skipped += 1
            continue
        for name, block in (("start", pair.start_block), ("end", pair.end_block)):
            rows.append(
                (pair.user_id, name, "apd", "",
                 repr(diversity.avg_pairwise_distance(block, emb)))
            )
            rows.append(
                (pair.user_id, name, "cde", hard.n_clusters,
                 repr(diversity.cde(block, hard)))
            )
    import csv

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "block", "metric", "kd", "value"])
        writer.writerows(rows)
    print(f"diversity: {len(rows)} rows -> {args.out} ({skipped} users skipped)")
    return 0


def _cmd_ambiguity(args) -> int:
    membership = clustering.read_membership_csv(args.membership)
    scores = diversity.ambiguity_scores(membership)
    import csv

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["content_id", "ambiguity"])
        for cid in sorted(scores):
            writer.writerow([cid, repr(scores[cid])])
    print(f"ambiguity: {len(scores)} contents -> {args.out}")
    if args.hist:
        rows = pipeline.emit_histogram(list(scores.values()), args.bins)
        with open(args.hist, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, count in rows:
                writer.writerow([repr(lo), repr(hi), count])
        print(f"histogram: {args.hist}")
    return 0


def _cmd_sweep(args) -> int:
    emb = embedding.load_embeddings(args.emb)
    pairs = corpus.read_blocks_csv(args.blocks)
    ks = [int(v) for v in args.kd_list.split(",") if v.strip()]
    pairs = [
        p
        for p in pairs
        if all(cid in emb for cid in set(p.start_block) | set(p.end_block))
    ]
    points = diversity.kd_sweep(pairs, emb, ks)
    import csv

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kd", "mean_delta", "p_value"])
        for pt in points:
            writer.writerow([pt.kd, repr(pt.mean_delta), repr(pt.p_value)])
    print(f"sweep: {len(points)} cuts -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    scores = pipeline.read_diversity_csv(args.diversity)
    report = stats.diversity_change_report(scores, alpha=args.alpha)
    with open(args.out, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"report: {args.out}")
    if args.ambiguity:
        user_scores = pipeline.read_user_ambiguity_csv(args.ambiguity)
        deltas = pipeline._per_user_delta(scores, args.metric)
        usable = {u: user_scores[u] for u in deltas if u in user_scores}
        deltas = {u: deltas[u] for u in usable}
        split = stats.split_by_max_ambiguity(usable, args.group_size)
        amb = stats.ambiguity_group_report(split, deltas, alpha=args.alpha)
        amb["metric"] = args.metric
        with open(args.ambiguity_out, "w") as fh:
            json.dump(amb, fh, sort_keys=True, indent=1)
            fh.write("\n")
        print(f"ambiguity report: {args.ambiguity_out}")
    return 0


def _cmd_run(args) -> int:
    overrides = {
        "seed": args.seed,
        "workers": args.workers,
        "total_samples": int(args.samples) if args.samples is not None else None,
    }
    config = pipeline.load_config(args.config, overrides)
    manifest = pipeline.run_pipeline(
        config, args.out_dir, cache_dir=args.cache_dir, force=args.force
    )
    for stage in manifest["stages"]:
        state = "cached" if stage["cached"] else "computed"
        print(f"{stage['name']}: {state}")
    print(f"manifest: {Path(args.out_dir) / 'manifest.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewdrift",
        description="Measure how content diversity shifts across each user's history.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic viewing corpus")
    p.add_argument("--genres", type=int, default=5)
    p.add_argument("--contents-per-genre", type=int, default=40)
    p.add_argument("--users", type=int, default=1000)
    p.add_argument("--views-min", type=int, default=50)
    p.add_argument("--views-max", type=int, default=90)
    p.add_argument("--drift", choices=("none", "broaden", "narrow"), default="none")
    p.add_argument("--magnitude", type=float, default=0.0)
    p.add_argument("--ambiguity-fraction", type=float, default=0.0)
    p.add_argument("--blend-view-prob", type=float, default=0.0)
    p.add_argument("--ambiguity-boost", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("ingest", help="derive watched blocks from raw events")
    _add_watched_args(p)
    p.add_argument("--profiles", required=True)
    p.add_argument("--min-active-days", type=int, default=0)
    p.add_argument("--strict-days", action="store_true",
                   help="require strictly more active days than the minimum")
    p.add_argument("--n", type=int, default=10, help="block size (default 10)")
    p.add_argument("--warmup-skip", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("graph", help="build the user-content graph")
    _add_watched_args(p)
    p.add_argument("--min-programs", type=int, default=10,
                   help="keep users with strictly more distinct contents")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_graph)

    p = sub.add_parser("embed", help="train content embeddings")
    _add_watched_args(p)
    p.add_argument("--min-programs", type=int, default=10)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--samples", type=float, default=1e7,
                   help="total edge samples (default 1e7)")
    p.add_argument("--rho0", type=float, default=0.025)
    p.add_argument("--no-lr-floor", action="store_true")
    p.add_argument("--noise-power", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_embed)

    p = sub.add_parser("cluster", help="cluster embeddings (HAC, optional FCM)")
    p.add_argument("--emb", required=True)
    p.add_argument("--kd", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--linkage", help="also write the dendrogram as JSON")
    p.add_argument("--fuzzy", action="store_true")
    p.add_argument("--ka", type=int, default=20)
    p.add_argument("--m", type=float, default=1.15)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--membership-out", default="membership.csv")
    p.set_defaults(fn=_cmd_cluster)

    p = sub.add_parser("diversity", help="per-block APD and CDE values")
    p.add_argument("--blocks", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_diversity)

    p = sub.add_parser("ambiguity", help="content ambiguity from memberships")
    p.add_argument("--membership", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hist", help="also write an equal-width histogram CSV")
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(fn=_cmd_ambiguity)

    p = sub.add_parser("sweep", help="CDE change across dendrogram cuts")
    p.add_argument("--blocks", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--kd-list", default="1,2,5,10,20,40")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("report", help="paired-test report from diversity values")
    p.add_argument("--diversity", required=True)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.add_argument("--ambiguity", help="per-user max-ambiguity CSV for the group report")
    p.add_argument("--ambiguity-out", default="ambiguity_report.json")
    p.add_argument("--group-size", type=int, default=300)
    p.add_argument("--metric", choices=("cde", "apd"), default="cde")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("run", help="run the full pipeline from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cache-dir", help="stage cache directory (reruns become no-ops)")
    p.add_argument("--force", action="store_true", help="ignore cached stages")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, help="override worker count")
    p.add_argument("--samples", type=float, help="override total_samples")
    p.set_defaults(fn=_cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except (
        corpus.ParseError,
        graph.GraphConstructionError,
        stats.DegenerateVarianceError,
        ValueError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
