"""Aggregate metrics: daily series, extrapolation, shares, host stability."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta

from .capture import utc_day

TOTAL = "total"
INDUSTRIAL = "industrial"


def extrapolate(count: int, sample_interval: int) -> int:
    """On-wire estimate for a sampled count; exact integer arithmetic."""
    if sample_interval < 1:
        raise ValueError("sample_interval must be >= 1")
    return count * sample_interval


def request_share(rows) -> dict[str, dict]:
    """Requests over requests-plus-replies per protocol.

    rows: iterable of (protocol, direction). Unrelated packets are counted
    but never enter the share; share is None when there is no denominator.
    """
    per: dict[str, dict] = {}
    for protocol, direction in rows:
        entry = per.setdefault(protocol, {"requests": 0, "replies": 0, "unrelated": 0})
        if direction == "request":
            entry["requests"] += 1
        elif direction == "reply":
            entry["replies"] += 1
        else:
            entry["unrelated"] += 1
    for entry in per.values():
        denominator = entry["requests"] + entry["replies"]
        entry["share"] = entry["requests"] / denominator if denominator else None
    return dict(sorted(per.items()))


@dataclass(frozen=True)
class HostActivity:
    """Activity window and active-day count for one destination host."""

    ip: str
    first_day: date
    last_day: date
    active_days: frozenset[date]
    window_days: int  # inclusive of both endpoints
    active_day_count: int

    @property
    def stability(self) -> float:
        return self.active_day_count / self.window_days


def host_stability(day_rows) -> list[HostActivity]:
    """Per-host (window, active days) from (ip, day) observations.

    Sorted by active-day count descending, then by address for determinism.
    """
    per_ip: dict[str, set[date]] = {}
    for ip, day in day_rows:
        per_ip.setdefault(ip, set()).add(day)
    out = []
    for ip, days in per_ip.items():
        first, last = min(days), max(days)
        out.append(
            HostActivity(
                ip=ip,
                first_day=first,
                last_day=last,
                active_days=frozenset(days),
                window_days=(last - first).days + 1,
                active_day_count=len(days),
            )
        )
    out.sort(key=lambda h: (-h.active_day_count, h.ip))
    return out


def protocol_rank(dissections) -> list[tuple[str, int]]:
    """Protocols by packet count, ties broken lexicographically."""
    counts: dict[str, int] = {}
    for dissection in dissections:
        counts[dissection.protocol] = counts.get(dissection.protocol, 0) + 1
    return sorted(counts.items(), key=lambda item: (-item[1], item[0]))


@dataclass
class DayRow:
    day: date
    total: int = 0
    industrial: int = 0

    def extrapolated(self, sample_interval: int) -> tuple[int, int]:
        return (
            extrapolate(self.total, sample_interval),
            extrapolate(self.industrial, sample_interval),
        )


def daily_series(entries) -> dict[tuple[str, str], list[DayRow]]:
    """Raw daily totals per (vantage, protocol) with gap days zero-filled.

    entries: iterable of (vantage, protocol, ts_us, industrial: bool). The
    total and industrial series sit side by side in each row so filtered and
    unfiltered views stay comparable.
    """
    buckets: dict[tuple[str, str], dict[date, DayRow]] = {}
    for vantage, protocol, ts_us, industrial in entries:
        day = utc_day(ts_us)
        series = buckets.setdefault((vantage, protocol), {})
        row = series.get(day)
        if row is None:
            row = series[day] = DayRow(day=day)
        row.total += 1
        if industrial:
            row.industrial += 1
    out: dict[tuple[str, str], list[DayRow]] = {}
    for key in sorted(buckets):
        series = buckets[key]
        first, last = min(series), max(series)
        rows = []
        day = first
        while day <= last:
            rows.append(series.get(day) or DayRow(day=day))
            day += timedelta(days=1)
        out[key] = rows
    return out
