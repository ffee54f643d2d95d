"""Viewing-log ingestion and per-user block extraction.

Raw logs become per-user *watched histories* (views at or above a duration
threshold, in time order), which are filtered for eligibility and sliced
into a start block and an end block of n programs each for before/after
comparison.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Union

__all__ = [
    "ParseError",
    "ViewEvent",
    "EventLog",
    "UserProfile",
    "WatchedHistory",
    "EligibilityCriteria",
    "BlockPair",
    "Excluded",
    "load_events",
    "load_profiles",
    "derive_watched",
    "filter_eligible",
    "extract_blocks",
    "write_blocks_csv",
    "read_blocks_csv",
]

_EVENT_COLUMNS = ("user_id", "content_id", "start_time", "watch_seconds")
_PROFILE_COLUMNS = ("user_id", "registration_date")
_INT_RE = re.compile(r"^[+-]?\d+$")


class ParseError(ValueError):
    """A malformed input row encountered in strict mode."""


@dataclass(frozen=True)
class ViewEvent:
    """One playback event.  ``start_time`` is epoch seconds, UTC."""

    user_id: str
    content_id: str
    start_time: int
    watch_seconds: float

    def __post_init__(self) -> None:
        if not self.user_id:
            raise ValueError("user_id must be non-empty")
        if not self.content_id:
            raise ValueError("content_id must be non-empty")
        if self.watch_seconds < 0:
            raise ValueError(f"watch_seconds must be >= 0, got {self.watch_seconds}")

    def day(self) -> date:
        """Calendar day of the event, UTC."""
        return datetime.fromtimestamp(self.start_time, tz=timezone.utc).date()


@dataclass
class EventLog:
    """Parsed events plus the (line, reason) pairs rejected in lenient mode."""

    events: list[ViewEvent]
    malformed: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[ViewEvent]:
        return iter(self.events)


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    registration_date: date


@dataclass(frozen=True)
class WatchedHistory:
    """A user's qualifying views in (start_time, content_id) order."""

    user_id: str
    events: tuple[ViewEvent, ...]

    def __len__(self) -> int:
        return len(self.events)

    def content_ids(self) -> tuple[str, ...]:
        return tuple(e.content_id for e in self.events)

    def active_days(self) -> set[date]:
        return {e.day() for e in self.events}


@dataclass(frozen=True)
class EligibilityCriteria:
    """Filters applied to watched histories before block extraction.

    ``min_active_days`` compares against the number of distinct UTC days with
    at least one watched view; ``strict_days=True`` requires strictly more
    days than the minimum, the default requires at least the minimum (so the
    default minimum of 0 accepts everyone).  ``active_within`` keeps only
    users with a watched view inside the inclusive date window.
    """

    min_active_days: int = 0
    strict_days: bool = False
    active_within: Optional[tuple[date, date]] = None

    def __post_init__(self) -> None:
        if self.min_active_days < 0:
            raise ValueError("min_active_days must be >= 0")
        if self.active_within is not None:
            lo, hi = self.active_within
            if lo > hi:
                raise ValueError(f"active_within window is empty: {lo}..{hi}")

    def admits(self, history: WatchedHistory) -> bool:
        days = history.active_days()
        if self.strict_days:
            if len(days) <= self.min_active_days:
                return False
        elif len(days) < self.min_active_days:
            return False
        if self.active_within is not None:
            lo, hi = self.active_within
            if not any(lo <= d <= hi for d in days):
                return False
        return True


@dataclass(frozen=True)
class BlockPair:
    """First and last n watched programs of one user.

    ``end_block_history_start`` is the index into the full watched history of
    the first end-block event; views strictly before it (registration-day and
    warm-up views included) form the "until the end block" range used by
    ambiguity scoring.  It is None for pairs read back from CSV.
    """

    user_id: str
    start_block: tuple[str, ...]
    end_block: tuple[str, ...]
    end_block_history_start: Optional[int] = None


@dataclass(frozen=True)
class Excluded:
    """A user dropped by block extraction, with the reason recorded."""

    user_id: str
    eligible_count: int
    reason: str


def _detect_epoch_mode(raw: str) -> bool:
    return bool(_INT_RE.match(raw.strip()))


def _parse_start_time(raw: str, epoch_mode: bool) -> int:
    raw = raw.strip()
    if epoch_mode:
        if not _INT_RE.match(raw):
            raise ValueError(f"expected epoch seconds, got {raw!r}")
        return int(raw)
    text = raw.replace("Z", "+00:00") if raw.endswith("Z") else raw
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _parse_date(raw: str) -> date:
    return date.fromisoformat(raw.strip())


def _infer_format(path: Path, format: Optional[str]) -> str:
    if format is not None:
        if format not in ("csv", "jsonl"):
            raise ValueError(f"unknown format {format!r}, expected 'csv' or 'jsonl'")
        return format
    return "jsonl" if path.suffix in (".jsonl", ".ndjson") else "csv"


def _event_rows(path: Path, fmt: str) -> Iterator[tuple[int, dict]]:
    """Yield (1-based line number, field dict) for each data row."""
    if fmt == "csv":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in _EVENT_COLUMNS if c not in header]
            if missing:
                raise ParseError(f"{path}:1: missing columns {missing}")
            for row in reader:
                yield reader.line_num, row
    else:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    yield lineno, {"__error__": f"invalid JSON: {exc.msg}"}
                    continue
                if not isinstance(obj, dict):
                    yield lineno, {"__error__": "row is not a JSON object"}
                    continue
                yield lineno, obj


def load_events(
    path: Union[str, Path],
    format: Optional[str] = None,
    strict: bool = True,
) -> EventLog:
    """Load view events from a CSV or JSONL file.

    The timestamp convention (epoch seconds vs ISO-8601) is detected from the
    first data row and applied to the whole file.  In strict mode the first
    malformed row raises :class:`ParseError` naming the line; otherwise bad
    rows are collected in ``EventLog.malformed``.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    events: list[ViewEvent] = []
    malformed: list[tuple[int, str]] = []
    epoch_mode: Optional[bool] = None

    def reject(lineno: int, reason: str) -> None:
        if strict:
            raise ParseError(f"{path}:{lineno}: {reason}")
        malformed.append((lineno, reason))

    for lineno, row in _event_rows(path, fmt):
        if "__error__" in row:
            reject(lineno, row["__error__"])
            continue
        missing = [c for c in _EVENT_COLUMNS if row.get(c) in (None, "")]
        if missing:
            reject(lineno, f"missing fields {missing}")
            continue
        raw_time = str(row["start_time"])
        if epoch_mode is None:
            epoch_mode = _detect_epoch_mode(raw_time)
        try:
            start_time = _parse_start_time(raw_time, epoch_mode)
        except ValueError as exc:
            reject(lineno, f"bad start_time: {exc}")
            continue
        try:
            watch = float(row["watch_seconds"])
        except (TypeError, ValueError):
            reject(lineno, f"bad watch_seconds: {row['watch_seconds']!r}")
            continue
        try:
            events.append(
                ViewEvent(
                    user_id=str(row["user_id"]).strip(),
                    content_id=str(row["content_id"]).strip(),
                    start_time=start_time,
                    watch_seconds=watch,
                )
            )
        except ValueError as exc:
            reject(lineno, str(exc))
    return EventLog(events=events, malformed=malformed)


def load_profiles(
    path: Union[str, Path],
    format: Optional[str] = None,
    strict: bool = True,
) -> dict[str, UserProfile]:
    """Load user profiles (registration dates); one profile per user_id."""
    path = Path(path)
    fmt = _infer_format(path, format)
    profiles: dict[str, UserProfile] = {}

    def reject(lineno: int, reason: str) -> None:
        if strict:
            raise ParseError(f"{path}:{lineno}: {reason}")

    if fmt == "csv":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in _PROFILE_COLUMNS if c not in header]
            if missing:
                raise ParseError(f"{path}:1: missing columns {missing}")
            rows: Iterable[tuple[int, dict]] = ((reader.line_num, r) for r in reader)
            rows = list(rows)
    else:
        rows = [(n, r) for n, r in _event_rows(path, fmt)]

    for lineno, row in rows:
        if "__error__" in row:
            reject(lineno, row["__error__"])
            continue
        uid = str(row.get("user_id") or "").strip()
        raw_date = str(row.get("registration_date") or "").strip()
        if not uid or not raw_date:
            reject(lineno, "missing user_id or registration_date")
            continue
        try:
            reg = _parse_date(raw_date)
        except ValueError:
            reject(lineno, f"bad registration_date: {raw_date!r}")
            continue
        if uid in profiles:
            reject(lineno, f"duplicate profile for user {uid!r}")
            continue
        profiles[uid] = UserProfile(user_id=uid, registration_date=reg)
    return profiles


def derive_watched(
    events: Union[EventLog, Iterable[ViewEvent]],
    min_watch_seconds: float = 300.0,
) -> dict[str, WatchedHistory]:
    """Keep views with watch_seconds >= threshold (boundary inclusive) and
    order each user's survivors by (start_time, content_id).

    Every user present in the input gets a history, possibly empty.
    Idempotent: re-deriving from the flattened result is a no-op.
    """
    if min_watch_seconds <= 0:
        raise ValueError(f"min_watch_seconds must be > 0, got {min_watch_seconds}")
    per_user: dict[str, list[ViewEvent]] = {}
    for event in events:
        bucket = per_user.setdefault(event.user_id, [])
        if event.watch_seconds >= min_watch_seconds:
            bucket.append(event)
    histories: dict[str, WatchedHistory] = {}
    for uid in sorted(per_user):
        ordered = sorted(per_user[uid], key=lambda e: (e.start_time, e.content_id))
        histories[uid] = WatchedHistory(user_id=uid, events=tuple(ordered))
    return histories


def filter_eligible(
    histories: Mapping[str, WatchedHistory],
    criteria: EligibilityCriteria = EligibilityCriteria(),
) -> dict[str, WatchedHistory]:
    """Drop histories failing the eligibility criteria."""
    return {uid: h for uid, h in histories.items() if criteria.admits(h)}


def extract_blocks(
    history: WatchedHistory,
    profile: UserProfile,
    n: int = 10,
    warmup_skip: int = 10,
) -> Union[BlockPair, Excluded]:
    """Slice a watched history into its first and last n eligible programs.

    Views on the registration day are removed first, then the next
    ``warmup_skip`` watched views are dropped; the remainder must hold at
    least 2n events or the user is excluded.  Blocks never overlap.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if warmup_skip < 0:
        raise ValueError(f"warmup_skip must be >= 0, got {warmup_skip}")
    reg_day = profile.registration_date
    eligible = [
        i for i, e in enumerate(history.events) if e.day() != reg_day
    ][warmup_skip:]
    if len(eligible) < 2 * n:
        return Excluded(
            user_id=history.user_id,
            eligible_count=len(eligible),
            reason="too_few_eligible_events",
        )
    start_idx = eligible[:n]
    end_idx = eligible[-n:]
    return BlockPair(
        user_id=history.user_id,
        start_block=tuple(history.events[i].content_id for i in start_idx),
        end_block=tuple(history.events[i].content_id for i in end_idx),
        end_block_history_start=end_idx[0],
    )


def write_blocks_csv(pairs: Iterable[BlockPair], path: Union[str, Path]) -> None:
    """Write block pairs as ``user_id,block,position,content_id`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "block", "position", "content_id"])
        for pair in sorted(pairs, key=lambda p: p.user_id):
            for block_name, block in (("start", pair.start_block), ("end", pair.end_block)):
                for pos, cid in enumerate(block):
                    writer.writerow([pair.user_id, block_name, pos, cid])


def read_blocks_csv(path: Union[str, Path]) -> list[BlockPair]:
    """Read block pairs written by :func:`write_blocks_csv`."""
    path = Path(path)
    acc: dict[str, dict[str, dict[int, str]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("user_id", "block", "position", "content_id")
                   if c not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(f"{path}:1: missing columns {missing}")
        for row in reader:
            block = row["block"]
            if block not in ("start", "end"):
                raise ParseError(f"{path}:{reader.line_num}: bad block {block!r}")
            acc.setdefault(row["user_id"], {"start": {}, "end": {}})[block][
                int(row["position"])
            ] = row["content_id"]
    pairs = []
    for uid in sorted(acc):
        blocks = {}
        for name in ("start", "end"):
            positions = acc[uid][name]
            if sorted(positions) != list(range(len(positions))):
                raise ParseError(f"{path}: non-contiguous positions for user {uid!r}")
            blocks[name] = tuple(positions[i] for i in range(len(positions)))
        pairs.append(BlockPair(uid, blocks["start"], blocks["end"], None))
    return pairs
