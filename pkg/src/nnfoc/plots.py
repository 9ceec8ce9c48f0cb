"""Deterministic SVG figures (no plotting library).

Coordinates are printed with fixed precision so the same trace always
produces byte-identical files. Long series are decimated by keeping the
min and max of each bucket, which preserves peaks.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .control import SimTrace
from .errors import DomainError

WIDTH, PANEL_H, MARGIN = 900, 260, 55
COLORS = ("#222222", "#1f77b4", "#d62728", "#2ca02c", "#9467bd")
MAX_POINTS = 4000


def decimate(x: np.ndarray, y: np.ndarray, max_points: int = MAX_POINTS):
    n = len(x)
    if n <= max_points:
        return x, y
    buckets = max_points // 2
    edges = np.linspace(0, n, buckets + 1).astype(np.int64)
    xs, ys = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        seg = y[a:b]
        i, j = a + int(np.argmin(seg)), a + int(np.argmax(seg))
        for k in sorted((i, j)) if i != j else (i,):
            xs.append(x[k])
            ys.append(y[k])
    return np.array(xs), np.array(ys)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _panel(top: float, title: str, x: np.ndarray, series: Sequence, ylabel: str) -> list:
    ys = np.concatenate([s[1] for s in series])
    lo, hi = float(np.min(ys)), float(np.max(ys))
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    x0, x1 = float(x[0]), float(x[-1]) if x[-1] > x[0] else float(x[0]) + 1.0
    pw, ph = WIDTH - 2 * MARGIN, PANEL_H - 2 * 25
    sx = lambda v: MARGIN + (v - x0) / (x1 - x0) * pw
    sy = lambda v: top + 25 + (hi - v) / (hi - lo) * ph
    out = [
        f'<rect x="{MARGIN}" y="{top + 25}" width="{pw}" height="{ph}" fill="none" stroke="#999999"/>',
        f'<text x="{MARGIN}" y="{top + 18}" font-size="13">{escape(title)}</text>',
        f'<text x="8" y="{_fmt(top + 25 + ph / 2)}" font-size="11">{escape(ylabel)}</text>',
        f'<text x="{MARGIN}" y="{_fmt(top + PANEL_H - 8)}" font-size="10">{x0:.3f} s</text>',
        f'<text x="{WIDTH - MARGIN - 50}" y="{_fmt(top + PANEL_H - 8)}" font-size="10">{x1:.3f} s</text>',
        f'<text x="{MARGIN - 50}" y="{_fmt(sy(hi - pad))}" font-size="10">{hi - pad:.3g}</text>',
        f'<text x="{MARGIN - 50}" y="{_fmt(sy(lo + pad))}" font-size="10">{lo + pad:.3g}</text>',
    ]
    for k, (label, y) in enumerate(series):
        dx, dy = decimate(x, y)
        pts = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(dx, dy))
        color = COLORS[k % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts}"><title>{escape(label)}</title></polyline>')
        out.append(
            f'<text x="{WIDTH - MARGIN - 160}" y="{top + 40 + 14 * k}" font-size="11" fill="{color}">{escape(label)}</text>'
        )
    return out


def plot_trace(
    trace: SimTrace,
    out_path,
    adjusted: Optional[np.ndarray] = None,
    adjusted_label: str = "iq adjusted",
    title: str = "",
    window: Optional[tuple] = None,
) -> Path:
    """Speed panel (reference vs measured) over a current panel (iq_pi vs adjusted).

    ``adjusted`` defaults to the trace's own ``iq_adj``.
    """
    if len(trace) == 0:
        raise DomainError("cannot plot an empty trace")
    t = trace.t
    sl = slice(None)
    if window is not None:
        a = max(0, int(round(window[0] / trace.sample_time)))
        b = min(len(trace), int(round(window[1] / trace.sample_time)) + 1)
        if b <= a:
            raise DomainError(f"plot window {window} selects no samples")
        sl = slice(a, b)
    adj = trace.iq_adj if adjusted is None else np.asarray(adjusted)
    body = _panel(
        0, f"{title} speed".strip(), t[sl],
        [("omega_ref", trace.omega_ref[sl]), ("omega_meas", trace.omega_meas[sl])], "pu",
    )
    body += _panel(
        PANEL_H, f"{title} quadrature current".strip(), t[sl],
        [("iq_pi", trace.iq_pi[sl]), (adjusted_label, adj[sl])], "A",
    )
    svg = "\n".join(
        [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{2 * PANEL_H}" '
            f'viewBox="0 0 {WIDTH} {2 * PANEL_H}">',
            '<rect width="100%" height="100%" fill="white"/>',
            *body,
            "</svg>",
            "",
        ]
    )
    out_path = Path(out_path)
    out_path.write_text(svg)
    return out_path


def plot_comparison(traces: dict, out_path, title: str = "", window: Optional[tuple] = None) -> Path:
    """Reference plus the measured speed of several runs on one panel."""
    if not traces:
        raise DomainError("nothing to plot")
    first = next(iter(traces.values()))
    if len(first) == 0:
        raise DomainError("cannot plot an empty trace")
    sl = slice(None)
    if window is not None:
        a = int(round(window[0] / first.sample_time))
        b = min(len(first), int(round(window[1] / first.sample_time)) + 1)
        sl = slice(a, b)
    series = [("omega_ref", first.omega_ref[sl])] + [(name, tr.omega_meas[sl]) for name, tr in traces.items()]
    body = _panel(0, title, first.t[sl], series, "pu")
    svg = "\n".join(
        [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{PANEL_H}" viewBox="0 0 {WIDTH} {PANEL_H}">',
            '<rect width="100%" height="100%" fill="white"/>',
            *body,
            "</svg>",
            "",
        ]
    )
    out_path = Path(out_path)
    out_path.write_text(svg)
    return out_path
