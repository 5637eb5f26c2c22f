"""Segmentation band charts as standalone SVG text."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .evaluation import segments_of

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94",
    "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5", "#393b79", "#637939",
)

WIDTH = 800
BAND_HEIGHT = 28
GAP = 8
LABEL_WIDTH = 70


def color(label: int) -> str:
    return PALETTE[int(label) % len(PALETTE)]


def band_svg(rows: list[tuple[str, np.ndarray]], title: str = "") -> str:
    """One horizontal band per labelled sequence; all rows share the time axis."""
    if not rows:
        raise ValueError("need at least one row to plot")
    n = max(len(seq) for _, seq in rows)
    top = 22 if title else 4
    height = top + len(rows) * (BAND_HEIGHT + GAP)
    scale = (WIDTH - LABEL_WIDTH) / max(n, 1)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">'
    ]
    if title:
        out.append(f'<text x="4" y="15">{escape(title)}</text>')
    for r, (name, seq) in enumerate(rows):
        y = top + r * (BAND_HEIGHT + GAP)
        out.append(f'<text x="4" y="{y + BAND_HEIGHT * 0.65:.1f}">{escape(name)}</text>')
        for start, end, label in segments_of(np.asarray(seq)):
            out.append(
                f'<rect x="{LABEL_WIDTH + start * scale:.2f}" y="{y}" width="{(end - start) * scale:.2f}" '
                f'height="{BAND_HEIGHT}" fill="{color(label)}"><title>{label}: {start}-{end}</title></rect>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_band_plot(path, pred, gt=None, title: str = "") -> None:
    rows = [] if gt is None else [("GT", np.asarray(gt))]
    rows.append(("Pred", np.asarray(pred)))
    Path(path).write_text(band_svg(rows, title))
