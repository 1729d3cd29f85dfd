"""CSV summaries and dependency-free SVG heatmaps."""

from __future__ import annotations

import html
import math
from pathlib import Path

import numpy as np

CELL = 12
MARGIN_LEFT = 60
MARGIN_TOP = 40
MARGIN_BOTTOM = 30
MARGIN_RIGHT = 20


def _color(v: float, vmin: float, vmax: float) -> str:
    if not math.isfinite(v):
        return "#cccccc"
    mid = 0.5 * (vmin + vmax)
    half = max(vmax - mid, 1e-12)
    x = max(-1.0, min(1.0, (v - mid) / half))
    # blue (negative) -> white -> red (positive)
    if x >= 0:
        r, g, b = 255, int(255 * (1 - x)), int(255 * (1 - x))
    else:
        r, g, b = int(255 * (1 + x)), int(255 * (1 + x)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(values, title: str = "", row_label: str = "channel", col_label: str = "window",
                vmin: float | None = None, vmax: float | None = None,
                col_ticks=None, cell: int = CELL) -> str:
    """Render a 2-D array as an SVG grid; rows top to bottom, NaN in grey."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("heatmap needs a 2-D array")
    finite = m[np.isfinite(m)]
    if vmin is None or vmax is None:
        bound = float(np.abs(finite).max()) if finite.size else 1.0
        bound = bound or 1.0
        vmin = -bound if vmin is None else vmin
        vmax = bound if vmax is None else vmax
    rows, cols = m.shape
    width = MARGIN_LEFT + cols * cell + MARGIN_RIGHT
    height = MARGIN_TOP + rows * cell + MARGIN_BOTTOM
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{MARGIN_LEFT}" y="20" font-size="12" font-family="sans-serif">'
        f'{html.escape(title)}</text>',
    ]
    for i in range(rows):
        for j in range(cols):
            out.append(
                f'<rect x="{MARGIN_LEFT + j * cell}" y="{MARGIN_TOP + i * cell}" width="{cell}" '
                f'height="{cell}" fill="{_color(m[i, j], vmin, vmax)}"/>'
            )
    ticks = col_ticks if col_ticks is not None else range(cols)
    for j, tick in enumerate(ticks):
        if j % max(1, cols // 10) == 0:
            out.append(
                f'<text x="{MARGIN_LEFT + j * cell}" y="{MARGIN_TOP + rows * cell + 14}" '
                f'font-size="8" font-family="sans-serif">{html.escape(str(tick))}</text>'
            )
    out.append(
        f'<text x="4" y="{MARGIN_TOP + 10}" font-size="10" font-family="sans-serif">'
        f'{html.escape(row_label)}</text>'
    )
    out.append(
        f'<text x="{MARGIN_LEFT}" y="{height - 4}" font-size="10" font-family="sans-serif">'
        f'{html.escape(col_label)} (range {vmin:.3g} to {vmax:.3g})</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cell_table_csv(r, valid, p_values=None, significant=None) -> str:
    """One row per channel x window: channel, window, r, valid, p, significant."""
    r = np.asarray(r)
    lines = ["channel,window,r,valid,p,significant"]
    for ch in range(r.shape[0]):
        for w in range(r.shape[1]):
            p = "" if p_values is None or not np.isfinite(p_values[ch, w]) else f"{p_values[ch, w]:.10g}"
            sig = "" if significant is None else str(int(significant[ch, w]))
            rv = "" if not valid[ch, w] else f"{r[ch, w]:.10g}"
            lines.append(f"{ch},{w},{rv},{int(valid[ch, w])},{p},{sig}")
    return "\n".join(lines) + "\n"


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path
