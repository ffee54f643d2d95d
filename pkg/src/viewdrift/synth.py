"""Synthetic viewing logs with planted genre structure and known drift.

Contents are grouped into genres, each genre into sub-pools; every user has a
home genre, two secondary genres and a preferred pair of sub-pools, so the
co-viewing graph carries both macro (genre) and micro (sub-pool) structure.
Drift moves two dials along a user's timeline: the chance of an off-home
view (macro broadening) and the size of the favorite set views are drawn
from (micro narrowing).  "narrow" runs the same schedule backwards.  A slice
of cross-genre "blend" contents makes ambiguity controllable.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Union

import numpy as np

from viewdrift.corpus import EventLog, UserProfile, ViewEvent

__all__ = ["SynthConfig", "GroundTruth", "generate", "write_corpus"]

_DRIFTS = ("none", "broaden", "narrow")


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for one synthetic corpus.

    ``drift`` sets the direction, ``magnitude`` in [0, 1] the strength.  With
    ``ambiguity_boost > 0`` half the users (chosen by the seed) drift with
    magnitude raised by the boost and pick up cross-genre blend contents at a
    rate that follows the drift schedule, peaking at ``blend_view_prob``; the
    other half never see blends and keep the base magnitude.  With a boost of
    zero every user shares a constant ``blend_view_prob``.
    """

    genres: int = 5
    contents_per_genre: int = 40
    users: int = 1000
    views_per_user: tuple[int, int] = (50, 90)
    drift: str = "none"
    magnitude: float = 0.0
    ambiguity_fraction: float = 0.0
    seed: int = 0
    subpools_per_genre: int = 4
    preferred_subpools: int = 2
    base_explore: float = 0.03
    explore_max: float = 0.25
    focus_floor: int = 1
    blend_view_prob: float = 0.0
    ambiguity_boost: float = 0.0
    views_per_day: int = 5
    registration_span_days: int = 14
    short_watch_fraction: float = 0.1
    min_watch_seconds: float = 300.0
    start_date: str = "2024-01-01"

    def __post_init__(self) -> None:
        if self.genres < 1:
            raise ValueError(f"genres must be >= 1, got {self.genres}")
        if self.contents_per_genre < 1:
            raise ValueError(
                f"contents_per_genre must be >= 1, got {self.contents_per_genre}"
            )
        if self.users < 1:
            raise ValueError(f"users must be >= 1, got {self.users}")
        lo, hi = self.views_per_user
        if not 1 <= lo <= hi:
            raise ValueError(f"views_per_user range is invalid: {self.views_per_user}")
        if self.drift not in _DRIFTS:
            raise ValueError(f"drift must be one of {_DRIFTS}, got {self.drift!r}")
        if not 0.0 <= self.magnitude <= 1.0:
            raise ValueError(f"magnitude must be in [0, 1], got {self.magnitude}")
        if not 0.0 <= self.ambiguity_fraction <= 1.0:
            raise ValueError(
                f"ambiguity_fraction must be in [0, 1], got {self.ambiguity_fraction}"
            )
        if not 1 <= self.subpools_per_genre <= self.contents_per_genre:
            raise ValueError("subpools_per_genre must be in [1, contents_per_genre]")
        if not 1 <= self.preferred_subpools <= self.subpools_per_genre:
            raise ValueError("preferred_subpools must be in [1, subpools_per_genre]")
        if self.views_per_day < 1:
            raise ValueError(f"views_per_day must be >= 1, got {self.views_per_day}")


@dataclass
class GroundTruth:
    """What the generator planted, for recovery checks."""

    config: dict
    content_genres: dict[str, list[int]]
    user_home_genre: dict[str, int]
    user_secondary_genres: dict[str, list[int]]
    user_magnitude: dict[str, float]
    user_blend_prob: dict[str, float]
    user_exposed: dict[str, bool]

    def pure_contents(self) -> list[str]:
        return sorted(c for c, g in self.content_genres.items() if len(g) == 1)

    def blend_contents(self) -> list[str]:
        return sorted(c for c, g in self.content_genres.items() if len(g) > 1)

    def to_json(self, path: Union[str, Path]) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "GroundTruth":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(**payload)


def _drift_level(cfg: SynthConfig, tau: float) -> float:
    if cfg.drift == "broaden":
        return tau
    if cfg.drift == "narrow":
        return 1.0 - tau
    return 0.0


def _off_home_prob(cfg: SynthConfig, magnitude: float, tau: float) -> float:
    level = _drift_level(cfg, tau)
    return min(1.0, cfg.base_explore + cfg.explore_max * magnitude * level)


def _focus_size(cfg: SynthConfig, magnitude: float, tau: float, full: int) -> int:
    level = _drift_level(cfg, tau)
    floor = min(cfg.focus_floor, full)
    f = round(full - (full - floor) * magnitude * level)
    return max(floor, min(full, f))


def _blend_prob(cfg: SynthConfig, user_blend_prob: float, tau: float) -> float:
    # with a boost in play, exposed users pick up blends along the drift
    # schedule (late under broaden); otherwise blend exposure is constant
    if cfg.ambiguity_boost > 0:
        return user_blend_prob * _drift_level(cfg, tau)
    return user_blend_prob


def generate(
    config: SynthConfig,
) -> tuple[EventLog, dict[str, UserProfile], GroundTruth]:
    """Generate a corpus; identical config and seed give identical output."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    lo_views, hi_views = cfg.views_per_user
    if hi_views < 35:
        warnings.warn(
            f"views_per_user upper bound {hi_views} leaves fewer than 35 views; "
            "default block extraction (10 warm-up + two blocks of 10) will "
            "exclude most users",
            RuntimeWarning,
            stacklevel=2,
        )

    # contents: per-genre pure pools plus cross-genre blends
    content_genres: dict[str, list[int]] = {}
    genre_pools: list[list[str]] = []
    for g in range(cfg.genres):
        pool = [f"g{g:02d}c{i:03d}" for i in range(cfg.contents_per_genre)]
        genre_pools.append(pool)
        for cid in pool:
            content_genres[cid] = [g]
    n_blends = int(round(cfg.ambiguity_fraction * cfg.genres * cfg.contents_per_genre))
    blends_by_genre: dict[int, list[str]] = {g: [] for g in range(cfg.genres)}
    for i in range(n_blends):
        width = 2 + int(rng.integers(2)) if cfg.genres >= 3 else 2
        width = min(width, cfg.genres)
        members = sorted(int(g) for g in rng.choice(cfg.genres, size=width, replace=False))
        cid = f"mix{i:03d}"
        content_genres[cid] = members
        for g in members:
            blends_by_genre[g].append(cid)

    # sub-pool split of each genre, contiguous chunks
    subpool_slices: list[list[list[str]]] = []
    for g in range(cfg.genres):
        chunks = np.array_split(np.asarray(genre_pools[g], dtype=object),
                                cfg.subpools_per_genre)
        subpool_slices.append([list(c) for c in chunks])

    base_day = date.fromisoformat(cfg.start_date)
    events: list[ViewEvent] = []
    profiles: dict[str, UserProfile] = {}
    truth = GroundTruth(
        config={**asdict(cfg), "views_per_user": list(cfg.views_per_user)},
        content_genres=content_genres,
        user_home_genre={},
        user_secondary_genres={},
        user_magnitude={},
        user_blend_prob={},
        user_exposed={},
    )

    for u in range(cfg.users):
        uid = f"u{u:05d}"
        home = u % cfg.genres
        others = [g for g in range(cfg.genres) if g != home]
        if others:
            picks = rng.choice(len(others), size=min(2, len(others)), replace=False)
            secondary = sorted(others[int(i)] for i in picks)
        else:
            secondary = []
        exposed = cfg.ambiguity_boost > 0 and bool(rng.random() < 0.5)
        if cfg.ambiguity_boost > 0:
            magnitude = min(1.0, cfg.magnitude + cfg.ambiguity_boost) if exposed else cfg.magnitude
            blend_prob = cfg.blend_view_prob if exposed else 0.0
        else:
            magnitude = cfg.magnitude
            blend_prob = cfg.blend_view_prob

        # ranked favorites per genre the user can visit: preferred sub-pools
        # shuffled once; early views roam the whole ranking, narrowed views
        # stick to its head
        rankings: dict[int, list[str]] = {}
        for g in [home] + secondary:
            pool_ids = rng.choice(
                cfg.subpools_per_genre, size=cfg.preferred_subpools, replace=False
            )
            candidates = [
                cid for p in sorted(int(p) for p in pool_ids)
                for cid in subpool_slices[g][p]
            ]
            order = rng.permutation(len(candidates))
            rankings[g] = [candidates[int(i)] for i in order]

        reg_day = base_day + timedelta(
            days=int(rng.integers(cfg.registration_span_days))
        )
        reg_epoch = int(
            datetime(reg_day.year, reg_day.month, reg_day.day, tzinfo=timezone.utc).timestamp()
        )
        n_views = int(rng.integers(lo_views, hi_views + 1))
        denom = max(n_views - 1, 1)
        for k in range(n_views):
            tau = k / denom
            if rng.random() < _off_home_prob(cfg, magnitude, tau) and secondary:
                genre = secondary[int(rng.integers(len(secondary)))]
            else:
                genre = home
            blends = blends_by_genre.get(genre, [])
            if (
                blend_prob > 0
                and blends
                and rng.random() < _blend_prob(cfg, blend_prob, tau)
            ):
                cid = blends[int(rng.integers(len(blends)))]
            else:
                ranked = rankings[genre]
                f = _focus_size(cfg, magnitude, tau, len(ranked))
                cid = ranked[int(rng.integers(f))]
            day_offset, slot = divmod(k, cfg.views_per_day)
            start = reg_epoch + day_offset * 86400 + slot * 9000 + (u % 900)
            if rng.random() < cfg.short_watch_fraction:
                watch = float(rng.integers(10, int(cfg.min_watch_seconds)))
            else:
                watch = float(rng.integers(int(cfg.min_watch_seconds), 7200))
            events.append(ViewEvent(uid, cid, start, watch))

        profiles[uid] = UserProfile(user_id=uid, registration_date=reg_day)
        truth.user_home_genre[uid] = home
        truth.user_secondary_genres[uid] = list(secondary)
        truth.user_magnitude[uid] = magnitude
        truth.user_blend_prob[uid] = blend_prob
        truth.user_exposed[uid] = exposed

    return EventLog(events=events), profiles, truth


def write_corpus(
    events: EventLog,
    profiles: dict[str, UserProfile],
    truth: GroundTruth,
    out_dir: Union[str, Path],
) -> dict[str, Path]:
    """Write events.csv, profiles.csv and ground_truth.json into a directory."""
    import csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events_path = out / "events.csv"
    with open(events_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "content_id", "start_time", "watch_seconds"])
        for e in events:
            writer.writerow([e.user_id, e.content_id, e.start_time, repr(e.watch_seconds)])
    profiles_path = out / "profiles.csv"
    with open(profiles_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "registration_date"])
        for uid in sorted(profiles):
            writer.writerow([uid, profiles[uid].registration_date.isoformat()])
    truth_path = out / "ground_truth.json"
    truth.to_json(truth_path)
    return {"events": events_path, "profiles": profiles_path, "ground_truth": truth_path}
