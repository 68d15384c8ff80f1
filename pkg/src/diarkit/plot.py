"""Truth-versus-prediction tick plots as standalone SVG."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

TRACK_HEIGHT = 60
MARGIN = 40
GAP = 30


def comparison_svg(truth, pred, start: int = 0, title: str = "") -> str:
    """Two tracks (truth above prediction) with a vertical tick per 1-label.

    ``start`` is the segment index of the first entry, used for the axis.
    """
    t = np.asarray(getattr(truth, "classes", truth))
    p = np.asarray(getattr(pred, "classes", pred))
    if len(t) != len(p):
        raise ValueError(f"truth length {len(t)} != prediction length {len(p)}")
    n = len(t)
    scale = 2.0 if n <= 400 else 800.0 / n
    width = MARGIN * 2 + max(n * scale, 200)
    height = MARGIN * 2 + 2 * TRACK_HEIGHT + GAP
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height}" '
        f'viewBox="0 0 {width:.1f} {height}">',
        f'<title>{escape(title or "label vs prediction")}</title>',
    ]
    for row, (name, vec) in enumerate((("truth", t), ("prediction", p))):
        top = MARGIN + row * (TRACK_HEIGHT + GAP)
        parts.append(f'<g class="{name}">')
        parts.append(f'<text x="4" y="{top - 6}" font-size="11">{name}</text>')
        for i in np.flatnonzero(vec):
            x = MARGIN + (i + 0.5) * scale
            parts.append(f'<line class="tick" x1="{x:.2f}" y1="{top}" x2="{x:.2f}" '
                         f'y2="{top + TRACK_HEIGHT}" stroke="black" stroke-width="1"/>')
        parts.append("</g>")
    axis_y = height - MARGIN + 14
    parts.append(f'<line x1="{MARGIN}" y1="{axis_y - 10}" x2="{MARGIN + n * scale:.2f}" '
                 f'y2="{axis_y - 10}" stroke="gray"/>')
    parts.append(f'<text x="{MARGIN}" y="{axis_y + 4}" font-size="10">{start}</text>')
    parts.append(f'<text x="{MARGIN + n * scale:.2f}" y="{axis_y + 4}" font-size="10" '
                 f'text-anchor="end">{start + n} (segment index)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_comparison(truth, pred, out, start: int = 0, title: str = "") -> None:
    Path(out).write_text(comparison_svg(truth, pred, start, title), encoding="utf-8")
