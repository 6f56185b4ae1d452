"""Metrics persistence (CSV with a JSONL mirror) and SVG / table emission."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterable, List, Sequence
from xml.sax.saxutils import escape

log = logging.getLogger(__name__)


class MetricsValidationError(ValueError):
    pass


@dataclass
class MetricsRecord:
    run_id: str
    epoch: int
    step: int
    train_loss: float
    eval_accuracy: float
    wall_seconds: float
    lr: float
    train_seconds: float = 0.0  # wall time minus time spent evaluating

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "MetricsRecord":
        kw = {}
        for f in fields(cls):
            if f.name not in row:
                continue
            raw = row[f.name]
            kw[f.name] = raw if f.type == "str" else (int(raw) if f.type == "int" else float(raw))
        return cls(**kw)


FIELDNAMES = [f.name for f in fields(MetricsRecord)]


def _fmt(v):
    # repr() of a float round-trips exactly
    return repr(float(v)) if isinstance(v, float) else str(v)


class MemorySink:
    """Collects records in a list, enforcing the per-run ordering invariants."""

    def __init__(self):
        self.records: List[MetricsRecord] = []

    def _check(self, rec: MetricsRecord):
        if self.records:
            last = self.records[-1]
            if rec.step <= last.step:
                raise MetricsValidationError(f"step {rec.step} after {last.step}: steps must strictly increase")
            if rec.wall_seconds < last.wall_seconds:
                raise MetricsValidationError("wall_seconds decreased within a run")

    def append(self, rec: MetricsRecord):
        self._check(rec)
        self.records.append(rec)

    def close(self):
        pass


class FileSink(MemorySink):
    """Appends each record to ``<stem>.csv`` and ``<stem>.jsonl``, flushing after every write."""

    def __init__(self, csv_path, jsonl_path=None):
        super().__init__()
        self.csv_path = str(csv_path)
        self.jsonl_path = str(jsonl_path) if jsonl_path else os.path.splitext(self.csv_path)[0] + ".jsonl"
        self._csv_fh = open(self.csv_path, "w", newline="")
        self._json_fh = open(self.jsonl_path, "w")
        self._writer = csv.writer(self._csv_fh)
        self._writer.writerow(FIELDNAMES)
        self._csv_fh.flush()

    def append(self, rec: MetricsRecord):
        self._check(rec)
        row = asdict(rec)
        self._writer.writerow([_fmt(row[k]) for k in FIELDNAMES])
        self._json_fh.write(json.dumps(row) + "\n")
        self._csv_fh.flush()
        self._json_fh.flush()
        self.records.append(rec)

    def close(self):
        self._csv_fh.close()
        self._json_fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> List[MetricsRecord]:
    """Read a metrics file written by :class:`FileSink` (``.csv`` or ``.jsonl``)."""
    path = str(path)
    if path.endswith(".jsonl"):
        with open(path) as fh:
            return [MetricsRecord(**json.loads(line)) for line in fh if line.strip()]
    with open(path, newline="") as fh:
        return [MetricsRecord.from_row(row) for row in csv.DictReader(fh)]


# ---------------------------------------------------------------- SVG plots

_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def plot_accuracy_vs_time(streams, out, title="Accuracy vs training time",
                          width=640, height=400) -> str:
    """Write one polyline per run (x: wall seconds, y: eval accuracy) as SVG.

    ``streams`` is a mapping or a sequence of ``(legend label, records)``.
    Empty streams are skipped with a warning.  Returns the SVG text.
    """
    items = list(streams.items()) if isinstance(streams, dict) else list(streams)
    kept = []
    for label, recs in items:
        if not recs:
            log.warning("skipping empty metrics stream %r", label)
            continue
        kept.append((str(label), list(recs)))
    xs = [r.wall_seconds for _, recs in kept for r in recs] or [0.0]
    x_lo, x_hi = 0.0, max(max(xs), 1e-9)
    y_lo, y_hi = 0.0, 1.0
    left, right, top, bottom = 60, 150, 30, 50
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return top + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph

    out_lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        out_lines.append(f'<text x="{px(t):.2f}" y="{top + ph + 15}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y_lo, y_hi, 6):
        out_lines.append(f'<text x="{left - 6}" y="{py(t) + 4:.2f}" text-anchor="end">{t:.1f}</text>')
        out_lines.append(f'<line x1="{left}" y1="{py(t):.2f}" x2="{left + pw}" y2="{py(t):.2f}" '
                         'stroke="#dddddd"/>')
    out_lines.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">'
                     'training time (s)</text>')
    out_lines.append(f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
                     f'transform="rotate(-90 15 {top + ph / 2:.1f})">accuracy</text>')
    for i, (label, recs) in enumerate(kept):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(r.wall_seconds):.2f},{py(r.eval_accuracy):.2f}" for r in recs)
        out_lines.append(f'<polyline class="run" data-label="{escape(label, {chr(34): "&quot;"})}" '
                         f'fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 10 + 16 * i
        out_lines.append(f'<g class="legend"><line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" '
                         f'y2="{ly}" stroke="{color}" stroke-width="2"/>'
                         f'<text x="{left + pw + 35}" y="{ly + 4}">{escape(label)}</text></g>')
    out_lines.append("</svg>")
    text = "\n".join(out_lines) + "\n"
    with open(out, "w") as fh:
        fh.write(text)
    return text


def plot_trend(xs: Sequence[float], ys: Sequence[float], out, xlabel: str, ylabel: str,
               title: str = "", width=480, height=320) -> str:
    """Single-series scatter+line SVG (e.g. seconds/epoch vs swept value)."""
    left, right, top, bottom = 60, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y_lo, y_hi = (0.0, max(ys)) if ys else (0.0, 1.0)
    x_hi = x_hi if x_hi > x_lo else x_lo + 1.0
    y_hi = y_hi if y_hi > y_lo else y_lo + 1.0

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return top + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {top + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for t in _ticks(x_lo, x_hi):
        parts.append(f'<text x="{px(t):.2f}" y="{top + ph + 15}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y_lo, y_hi):
        parts.append(f'<text x="{left - 6}" y="{py(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    if xs:
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{pts}"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="#1f77b4"/>')
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    with open(out, "w") as fh:
        fh.write(text)
    return text


# ---------------------------------------------------------------- tables

SUMMARY_COLUMNS = ["parameter", "value", "optimizer", "learning_rate", "seed", "status",
                   "final_accuracy", "best_accuracy", "seconds_per_epoch", "wall_seconds"]


def summary_table(results: Iterable, out=None) -> str:
    """One CSV row per run result; returns the text and writes it to ``out`` if given."""
    lines = [",".join(SUMMARY_COLUMNS)]
    for r in results:
        hp = r.config.hyper
        row = [r.parameter, _cell(r.value), hp.optimizer, repr(hp.learning_rate), str(r.config.seed),
               r.status, f"{r.final_accuracy:.4f}", f"{r.best_accuracy:.4f}",
               f"{r.seconds_per_epoch:.4f}", f"{r.wall_seconds:.3f}"]
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    if out is not None:
        with open(out, "w") as fh:
            fh.write(text)
    return text


def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)
