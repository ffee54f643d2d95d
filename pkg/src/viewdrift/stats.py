"""Significance tests for diversity changes, with no external stat tables.

Student-t tail probabilities come from a regularized incomplete beta
evaluated by continued fraction, so paired and Welch tests are exact to
double precision without lookup tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Sequence

if TYPE_CHECKING:
    from viewdrift.diversity import DiversityScore

__all__ = [
    "DegenerateVarianceError",
    "TestResult",
    "GroupSplit",
    "regularized_incomplete_beta",
    "student_t_cdf",
    "two_sided_p",
    "paired_t",
    "welch_t",
    "split_by_max_ambiguity",
    "diversity_change_report",
    "ambiguity_group_report",
]

# sd below |mean| * this is fp noise on constant differences, not variance
_DEGENERATE_REL_TOL = 1e-12


class DegenerateVarianceError(ValueError):
    """The test statistic is undefined because the variance collapsed."""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    degrees_of_freedom: float
    p_value: float
    mean_a: float
    mean_b: float
    n_a: int
    n_b: int


@dataclass(frozen=True)
class GroupSplit:
    """Top and bottom ``group_size`` users by score, ties broken by user id."""

    high_group: tuple[str, ...]
    low_group: tuple[str, ...]
    group_size: int


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise RuntimeError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError(f"a and b must be > 0, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    """P(T <= t) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError(f"df must be > 0, got {df}")
    if math.isinf(t):
        return 0.0 if t < 0 else 1.0
    x = df / (df + t * t)
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return 1.0 - tail if t >= 0 else tail


def two_sided_p(t: float, df: float) -> float:
    """Two-sided p-value, computed from one beta evaluation (no 1-cdf loss)."""
    if df <= 0:
        raise ValueError(f"df must be > 0, got {df}")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _sample_var(values: Sequence[float], mean: float) -> float:
    return math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)


def paired_t(start: Sequence[float], end: Sequence[float]) -> TestResult:
    """Paired two-sided t-test on per-user (end - start) differences.

    Constant differences (a pure shift) leave the statistic undefined and
    raise :class:`DegenerateVarianceError`; the check treats a standard
    deviation below ``|mean| * 1e-12`` as zero so the rule survives
    floating-point noise.
    """
    start = [float(v) for v in start]
    end = [float(v) for v in end]
    if len(start) != len(end):
        raise ValueError(f"length mismatch: {len(start)} vs {len(end)}")
    n = len(start)
    if n < 2:
        raise ValueError(f"need >= 2 pairs, got {n}")
    diffs = [e - s for s, e in zip(start, end)]
    mean_d = _mean(diffs)
    var_d = _sample_var(diffs, mean_d)
    sd_d = math.sqrt(var_d)
    if sd_d == 0.0 or sd_d <= abs(mean_d) * _DEGENERATE_REL_TOL:
        raise DegenerateVarianceError(
            "differences are constant; the paired statistic is undefined"
        )
    t = mean_d / (sd_d / math.sqrt(n))
    df = n - 1
    return TestResult(
        statistic=t,
        degrees_of_freedom=float(df),
        p_value=two_sided_p(t, df),
        mean_a=_mean(start),
        mean_b=_mean(end),
        n_a=n,
        n_b=n,
    )


def welch_t(group_a: Sequence[float], group_b: Sequence[float]) -> TestResult:
    """Welch's two-sided t-test for unequal variances.

    Both variances zero with equal means raises
    :class:`DegenerateVarianceError`.  Both zero with different means gives
    t = +-inf, p = 0 and pooled df (documented edge case).
    """
    a = [float(v) for v in group_a]
    b = [float(v) for v in group_b]
    if len(a) < 2 or len(b) < 2:
        raise ValueError(f"both groups need >= 2 values, got {len(a)} and {len(b)}")
    mean_a = _mean(a)
    mean_b = _mean(b)
    var_a = _sample_var(a, mean_a)
    var_b = _sample_var(b, mean_b)
    sa = var_a / len(a)
    sb = var_b / len(b)
    if sa + sb == 0.0:
        if mean_a == mean_b:
            raise DegenerateVarianceError(
                "both groups are constant and equal; the statistic is undefined"
            )
        t = math.inf if mean_a > mean_b else -math.inf
        df = float(len(a) + len(b) - 2)
        return TestResult(t, df, 0.0, mean_a, mean_b, len(a), len(b))
    t = (mean_a - mean_b) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (
        (sa**2 / (len(a) - 1)) + (sb**2 / (len(b) - 1))
    )
    return TestResult(
        statistic=t,
        degrees_of_freedom=df,
        p_value=two_sided_p(t, df),
        mean_a=mean_a,
        mean_b=mean_b,
        n_a=len(a),
        n_b=len(b),
    )


def split_by_max_ambiguity(
    scores: Mapping[str, float], group_size: int
) -> GroupSplit:
    """Users with the ``group_size`` highest and lowest max-ambiguity scores.

    Ordering is by (score descending, user id ascending); the groups never
    overlap, which requires at least 2 * group_size scored users.
    """
    if group_size < 1:
        raise ValueError(f"group_size must be >= 1, got {group_size}")
    if len(scores) < 2 * group_size:
        raise ValueError(
            f"need >= {2 * group_size} scored users for disjoint groups, "
            f"got {len(scores)}"
        )
    ordered = sorted(scores, key=lambda uid: (-scores[uid], uid))
    return GroupSplit(
        high_group=tuple(ordered[:group_size]),
        low_group=tuple(ordered[-group_size:]),
        group_size=group_size,
    )


def _report_row(
    metric: str,
    kd: Optional[int],
    start: Sequence[float],
    end: Sequence[float],
    alpha: float,
) -> dict:
    row: dict = {
        "metric": metric,
        "kd": kd,
        "mean_start": _mean(start),
        "mean_end": _mean(end),
        "n": len(start),
    }
    try:
        result = paired_t(start, end)
    except DegenerateVarianceError:
        row.update(t=None, df=None, p=None, significant=False, degenerate=True)
        return row
    row.update(
        t=result.statistic,
        df=result.degrees_of_freedom,
        p=result.p_value,
        significant=result.p_value < alpha,
        degenerate=False,
    )
    return row


def diversity_change_report(
    scores: Iterable["DiversityScore"], alpha: float = 0.01
) -> dict:
    """Paired-test summary rows, one per (metric, kd) with both blocks present.

    Every user contributing to a row must have both a start and an end value
    for that metric; a one-sided user is an error naming the user.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    table: dict[tuple[str, Optional[int]], dict[str, dict[str, float]]] = {}
    for s in scores:
        per_user = table.setdefault((s.metric, s.kd), {}).setdefault(s.user_id, {})
        if s.block in per_user:
            raise ValueError(
                f"duplicate {s.metric} {s.block} value for user {s.user_id!r}"
            )
        per_user[s.block] = s.value
    if not table:
        raise ValueError("no diversity scores given")
    rows = []
    for metric, kd in sorted(table, key=lambda k: (k[0], k[1] if k[1] else 0)):
        per_user = table[(metric, kd)]
        for uid, blocks in per_user.items():
            if set(blocks) != {"start", "end"}:
                raise ValueError(
                    f"user {uid!r} lacks a {'end' if 'start' in blocks else 'start'} "
                    f"value for metric {metric!r}"
                )
        users = sorted(per_user)
        start = [per_user[u]["start"] for u in users]
        end = [per_user[u]["end"] for u in users]
        rows.append(_report_row(metric, kd, start, end, alpha))
    return {"alpha": alpha, "rows": rows}


def ambiguity_group_report(
    split: GroupSplit, deltas: Mapping[str, float], alpha: float = 0.01
) -> dict:
    """Welch comparison of diversity change between ambiguity groups."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    missing = [u for u in split.high_group + split.low_group if u not in deltas]
    if missing:
        raise ValueError(f"no delta for users {missing[:3]}")
    high = [deltas[u] for u in split.high_group]
    low = [deltas[u] for u in split.low_group]
    report = {
        "alpha": alpha,
        "n_per_group": split.group_size,
        "group_high_mean": _mean(high),
        "group_low_mean": _mean(low),
    }
    try:
        result = welch_t(high, low)
    except DegenerateVarianceError:
        report.update(t=None, df=None, p=None, significant=False, degenerate=True)
        return report
    report.update(
        t=result.statistic,
        df=result.degrees_of_freedom,
        p=result.p_value,
        significant=result.p_value < alpha,
        degenerate=False,
    )
    return report
