"""Operator reports: delimited stats/records files plus rendered figures."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from datetime import timedelta
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # file rendering only, never a display
import matplotlib.pyplot as plt

from .model import TimeWindow, format_ts
from .store import IocStore, StoreFilter

logger = logging.getLogger(__name__)


def write_report(store: IocStore, window: TimeWindow, out_dir: Path) -> list[Path]:
    """Write stats.csv, records.csv, and three PNG figures; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats = store.stats(window)
    result = store.query(StoreFilter(window=window, limit=10_000))
    written = []

    stats_path = out / "stats.csv"
    with open(stats_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dimension", "key", "count"])
        for kind, count in sorted(stats.counts_by_kind.items()):
            writer.writerow(["kind", kind.value, count])
        for source, count in sorted(stats.counts_by_source.items()):
            writer.writerow(["source", source, count])
        writer.writerow(["total", "", stats.total])
    written.append(stats_path)

    records_path = out / "records.csv"
    with open(records_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "kind", "value", "source", "first_reported", "last_reported", "threat_label", "ports"])
        for rec in result.records:
            writer.writerow(
                [
                    rec.id,
                    rec.signature.kind.value,
                    rec.signature.value,
                    rec.source,
                    format_ts(rec.first_reported),
                    format_ts(rec.last_reported),
                    rec.threat_label,
                    " ".join(str(p) for p in rec.ports),
                ]
            )
    written.append(records_path)

    written.append(_bar_figure(out / "counts_by_kind.png", {k.value: v for k, v in stats.counts_by_kind.items()}, "Records by signature kind"))
    written.append(_bar_figure(out / "counts_by_source.png", dict(stats.counts_by_source), "Records by source"))
    written.append(_timeline_figure(out / "reports_timeline.png", result))
    logger.info("report written to %s (%d files)", out, len(written))
    return written


def _bar_figure(path: Path, counts: dict[str, int], title: str) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    keys = sorted(counts)
    ax.bar(keys, [counts[k] for k in keys], color="#33557a")
    ax.set_title(title)
    ax.set_ylabel("records")
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _timeline_figure(path: Path, result) -> Path:
    per_day = Counter(rec.last_reported.date() for rec in result.records)
    fig, ax = plt.subplots(figsize=(7, 4))
    if per_day:
        days = sorted(per_day)
        span = [days[0] + timedelta(days=i) for i in range((days[-1] - days[0]).days + 1)]
        ax.plot(span, [per_day.get(d, 0) for d in span], marker="o", color="#7a3355")
    ax.set_title("Last-reported activity per day")
    ax.set_ylabel("records")
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
