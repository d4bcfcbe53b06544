"""Time series and share reports over classified payloads."""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Union

from .registry import Classification, Verdict

PERIODS = ("year", "month")


def period_label(ts: datetime, period: str) -> str:
    if period == "year":
        return f"{ts.year:04d}"
    if period == "month":
        return f"{ts.year:04d}-{ts.month:02d}"
    raise ValueError(f"period must be one of {PERIODS}, got {period!r}")


def _period_range(first: str, last: str, period: str) -> list[str]:
    if period == "year":
        return [f"{y:04d}" for y in range(int(first), int(last) + 1)]
    y, m = map(int, first.split("-"))
    ly, lm = map(int, last.split("-"))
    out = []
    while (y, m) <= (ly, lm):
        out.append(f"{y:04d}-{m:02d}")
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return out


@dataclass
class Bucket:
    label: str
    by_verdict: Counter = field(default_factory=Counter)
    by_protocol: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.by_verdict.values())


@dataclass
class TimeSeriesReport:
    period: str
    buckets: list[Bucket] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(b.total for b in self.buckets)

    def labels(self) -> list[str]:
        """Every protocol label present anywhere in the report, sorted."""
        return sorted({k for b in self.buckets for k in b.by_protocol})

    def totals(self) -> list[tuple[str, int]]:
        return [(b.label, b.total) for b in self.buckets]

    def rows(self) -> list[tuple[str, str, int]]:
        """Dense ``(period, protocol, count)`` rows, zero counts included."""
        labels = self.labels()
        return [(b.label, name, b.by_protocol[name]) for b in self.buckets for name in labels]

    def series(self) -> dict[str, tuple[list[str], list[int]]]:
        """One ``(x, y)`` series per verdict, x = period labels ascending."""
        xs = [b.label for b in self.buckets]
        return {v.value: (xs, [b.by_verdict[v.value] for b in self.buckets]) for v in Verdict}


def aggregate(items: Iterable[tuple[Classification, datetime]], period: str = "year") -> TimeSeriesReport:
    """Bucket classified payloads by year or month.

    Periods between the first and last bucket with no records are emitted
    with zero counts.
    """
    if period not in PERIODS:
        raise ValueError(f"period must be one of {PERIODS}, got {period!r}")
    buckets: dict[str, Bucket] = {}
    for cls, ts in items:
        label = period_label(ts, period)
        b = buckets.get(label)
        if b is None:
            b = buckets[label] = Bucket(label)
        b.by_verdict[cls.verdict.value] += 1
        b.by_protocol[cls.label] += 1
    if not buckets:
        return TimeSeriesReport(period)
    labels = sorted(buckets)
    return TimeSeriesReport(
        period, [buckets.get(lb) or Bucket(lb) for lb in _period_range(labels[0], labels[-1], period)]
    )


@dataclass
class ShareReport:
    total: int
    counts: dict[str, int]
    shares: dict[str, float]
    verdict_counts: dict[str, int]

    def share(self, label: str) -> float:
        return self.shares.get(label, 0.0)

    @property
    def unattributed_share(self) -> float:
        return self.verdict_share(Verdict.UNATTRIBUTED)

    @property
    def dark_wallet_share(self) -> float:
        return self.verdict_share(Verdict.DARK_WALLET)

    def verdict_share(self, verdict: Verdict) -> float:
        if not self.total:
            return 0.0
        return self.verdict_counts.get(verdict.value, 0) / self.total

    def rows(self) -> list[tuple[str, int, float]]:
        """``(protocol, count, share)`` sorted by descending count, then name."""
        return sorted(((k, self.counts[k], self.shares[k]) for k in self.counts),
                      key=lambda r: (-r[1], r[0]))


def share_report(items: Iterable[Union[Classification, tuple[Classification, object]]]) -> ShareReport:
    """Per-protocol fractions; dark-wallet and unattributed get their own rows.

    Accepts bare classifications or ``(classification, anything)`` pairs.
    """
    counts: Counter = Counter()
    verdicts: Counter = Counter()
    for item in items:
        cls = item if isinstance(item, Classification) else item[0]
        counts[cls.label] += 1
        verdicts[cls.verdict.value] += 1
    total = sum(counts.values())
    shares = {k: c / total for k, c in counts.items()} if total else {}
    return ShareReport(total, dict(counts), shares, dict(verdicts))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def render_report(report: TimeSeriesReport | ShareReport, fmt: str = "csv", plotdata: bool = False) -> str:
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    if isinstance(report, ShareReport):
        if plotdata:
            raise ValueError("plot data is only available for time series reports")
        header = ["protocol", "count", "share"]
        rows = [(name, count, round(share, 12)) for name, count, share in report.rows()]
    elif plotdata:
        header = ["series", "x", "y"]
        rows = [(name, x, y) for name, (xs, ys) in report.series().items() for x, y in zip(xs, ys)]
    else:
        header = ["period", "protocol", "count"]
        rows = report.rows()
    if fmt == "json":
        if plotdata:
            body = {name: {"x": xs, "y": ys} for name, (xs, ys) in report.series().items()}
            doc = {"period": report.period, "series": body}
        else:
            doc = {"rows": [dict(zip(header, r)) for r in rows]}
            if isinstance(report, TimeSeriesReport):
                doc["period"] = report.period
            else:
                doc["total"] = report.total
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def export_report(report: TimeSeriesReport | ShareReport, path: str | Path,
                  fmt: str = "csv", plotdata: bool = False) -> Path:
    """Write *report* to *path*; identical reports give identical bytes."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_report(report, fmt, plotdata))
    return path
