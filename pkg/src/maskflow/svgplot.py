"""Minimal self-contained SVG line plots with log-scaled axes.

Every plotted point carries its exact data values in ``data-x`` and
``data-y`` attributes so plots can be parsed back and checked against the
CSV they were drawn from.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from xml.sax.saxutils import escape

from .errors import DomainError

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
SVG_NS = "http://www.w3.org/2000/svg"


def _log_ticks(lo, hi):
    return [10.0**e for e in range(math.floor(math.log10(lo)), math.ceil(math.log10(hi)) + 1)]


def line_plot_svg(series, *, title="", xlabel="", ylabel="", width=640, height=420, xlog_offset=1.0):
    """Render ``{label: [(x, y), ...]}`` with a log y-axis and a log ``x + xlog_offset`` axis.

    Non-positive ``y`` values cannot be shown on a log axis and raise
    ``DomainError``.
    """
    pts = [(x, y) for s in series.values() for x, y in s]
    if not pts:
        raise DomainError("nothing to plot")
    if any(not (y > 0 and math.isfinite(y)) for _, y in pts):
        raise DomainError("log-scale plot needs positive finite values")
    if any(x + xlog_offset <= 0 for x, _ in pts):
        raise DomainError("x values must exceed -xlog_offset")
    ml, mr, mt, mb = 70, 150, 40, 55
    pw, ph = width - ml - mr, height - mt - mb
    yt = _log_ticks(min(y for _, y in pts), max(y for _, y in pts))
    ylo, yhi = math.log10(yt[0]), math.log10(yt[-1])
    if yhi == ylo:
        yhi += 1
    xs = [math.log10(x + xlog_offset) for x, _ in pts]
    xlo, xhi = min(xs), max(xs)
    if xhi == xlo:
        xhi = xlo + 1

    def px(x):
        return ml + pw * (math.log10(x + xlog_offset) - xlo) / (xhi - xlo)

    def py(y):
        return mt + ph * (1 - (math.log10(y) - ylo) / (yhi - ylo))

    out = [
        f'<svg xmlns="{SVG_NS}" width="{width}" height="{height}" viewBox="0 0 {width} {height}" '
        f'data-xscale="log" data-yscale="log" data-xlog-offset="{xlog_offset!r}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="13">{escape(xlabel)}</text>',
        f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for t in yt:
        y = py(t)
        out.append(f'<line class="ytick" x1="{ml}" x2="{ml + pw}" y1="{y:.2f}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 6}" y="{y + 4:.2f}" text-anchor="end" font-size="11">{t:g}</text>')
    for x in sorted({x for x, _ in pts}):
        X = px(x)
        out.append(f'<text x="{X:.2f}" y="{mt + ph + 16}" text-anchor="middle" font-size="11">{x:g}</text>')
    for i, (label, s) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in s)
        out.append(f'<g class="series" data-label="{escape(label, {chr(34): "&quot;"})}">')
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in s:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}" data-x="{x!r}" data-y="{y!r}"/>')
        out.append("</g>")
        ly = mt + 18 * i + 10
        out.append(f'<line x1="{ml + pw + 10}" x2="{ml + pw + 30}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly + 4}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_line_plot(path, series, **kwargs):
    with open(path, "w") as fh:
        fh.write(line_plot_svg(series, **kwargs))


def read_line_plot(path):
    """Parse back ``{label: [(x, y), ...]}`` from a plot written by this module."""
    root = ET.parse(path).getroot()
    series = {}
    for g in root.iter(f"{{{SVG_NS}}}g"):
        if g.get("class") != "series":
            continue
        series[g.get("data-label")] = [
            (float(c.get("data-x")), float(c.get("data-y"))) for c in g.iter(f"{{{SVG_NS}}}circle")
        ]
    return series
