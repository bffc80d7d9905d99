"""CSV, JSON and SVG emitters for experiment artifacts.

CSV follows RFC 4180 (CRLF line ends, minimal quoting) with floats written
at 17 significant digits, so a re-run with the same seed reproduces the body
byte for byte.  An optional first line ``# generated: <ISO-8601>`` carries
the only run-dependent content.
"""

from __future__ import annotations

import csv
import io
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

FLOAT_FORMAT = ".17g"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, FLOAT_FORMAT)
    return "" if x is None else str(x)


def timestamp_line() -> str:
    return "# generated: " + datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def csv_text(header: Sequence[str], rows: Iterable[Sequence], timestamp: bool = False) -> str:
    buf = io.StringIO()
    if timestamp:
        buf.write(timestamp_line() + "\r\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def csv_body(text: str) -> str:
    """Drop the timestamp line, if any, for comparisons between runs."""
    lines = text.split("\r\n")
    return "\r\n".join(line for line in lines if not line.startswith("# generated:"))


def write_csv(path, header, rows, timestamp=False) -> Path:
    path = Path(path)
    path.write_text(csv_text(header, rows, timestamp), encoding="utf-8", newline="")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, payload: dict, timestamp=False) -> Path:
    path = Path(path)
    payload = _jsonable(payload)
    if timestamp:
        payload = {"generated": timestamp_line()[len("# generated: "):], **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def write_path_samples(path, report, max_rows: int = 1_000_000, timestamp=False) -> int:
    """Stream retained paths as ``path_id, t, value`` rows; returns rows written."""
    path = Path(path)
    times = report.record_times
    fan = report.fan_samples
    written = 0
    with path.open("w", encoding="utf-8", newline="") as fh:
        if timestamp:
            fh.write(timestamp_line() + "\r\n")
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["path_id", "t", "value"])
        for pid in range(fan.shape[0]):
            for t, v in zip(times, fan[pid]):
                if written >= max_rows:
                    return written
                w.writerow([pid, fmt(t), fmt(v)])
                written += 1
    return written


# ---------------------------------------------------------------------------
# svg


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * abs(hi):
        out.append(round(v, 12))
        v += step
    return out


def svg_chart(
    x,
    series: dict,
    *,
    bands: Optional[dict] = None,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 640,
    height: int = 400,
) -> str:
    """Static line chart; ``bands`` maps a label to ``(lower, upper)`` arrays drawn as shaded areas."""
    x = np.asarray(x, dtype=float)
    bands = bands or {}
    ys = [np.asarray(v, dtype=float) for v in series.values()]
    for lo, hi in bands.values():
        ys += [np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)]
    finite = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.zeros(1)
    y0, y1 = float(finite.min()), float(finite.max())
    pad = 0.05 * (y1 - y0 or 1.0)
    y0, y1 = y0 - pad, y1 + pad
    x0, x1 = float(x.min()), float(x.max())
    if x1 == x0:
        x1 = x0 + 1.0
    left, right, top, bottom = 70, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (y1 - v) / (y1 - y0) * ph

    def points(xs, vals):
        return " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, vals) if np.isfinite(b))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.2f}" y1="{top + ph}" x2="{px(t):.2f}" y2="{top + ph + 5}" stroke="#444"/>')
        out.append(f'<text x="{px(t):.2f}" y="{top + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{py(t):.2f}" x2="{left}" y2="{py(t):.2f}" stroke="#444"/>')
        out.append(f'<text x="{left - 8}" y="{py(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{left + pw / 2:.0f}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{top + ph / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2:.0f})">{_esc(ylabel)}</text>'
    )
    for k, (label, (lo, hi)) in enumerate(bands.items()):
        colour = _PALETTE[k % len(_PALETTE)]
        poly = points(x, lo) + " " + points(x[::-1], np.asarray(hi, dtype=float)[::-1])
        out.append(f'<polygon points="{poly}" fill="{colour}" fill-opacity="0.15" stroke="none"><title>{_esc(label)}</title></polygon>')
    for k, (label, vals) in enumerate(series.items()):
        colour = _PALETTE[k % len(_PALETTE)]
        out.append(f'<polyline points="{points(x, vals)}" fill="none" stroke="{colour}" stroke-width="1.8"/>')
        ly = top + 16 + 16 * k
        out.append(f'<line x1="{left + 10}" y1="{ly - 4}" x2="{left + 30}" y2="{ly - 4}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + 36}" y="{ly}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_svg(path, *args, **kwargs) -> Path:
    path = Path(path)
    path.write_text(svg_chart(*args, **kwargs), encoding="utf-8")
    return path
