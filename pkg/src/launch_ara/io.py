"""File output helpers: atomic writes, CSV tables, SVG heatmaps."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path):
    """Minimal numeric CSV reader returning ``(header, rows)``."""
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = [[float(v) for v in line.split(",")] for line in lines[1:]]
    return header, rows


def _ramp(frac: float) -> str:
    # Dark blue -> yellow linear ramp.
    lo = np.array([48, 18, 120])
    hi = np.array([250, 230, 40])
    r, g, b = (lo + (hi - lo) * frac).round().astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(ts, ps, values, title: str, marker=None, cell_px: int = 8) -> str:
    """Heatmap with ``t`` on the x axis and ``p`` on the y axis; ``marker`` is ``(i, j)``."""
    values = np.asarray(values, dtype=float)
    nt, np_ = values.shape
    left, top, bar = 70, 40, 30
    width = left + nt * cell_px + bar + 90
    height = top + np_ * cell_px + 50
    finite = values[np.isfinite(values)]
    vmin = float(finite.min()) if finite.size else 0.0
    vmax = float(finite.max()) if finite.size else 1.0
    span = vmax - vmin if vmax > vmin else 1.0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<text x="{left}" y="20" font-size="13">{title}</text>',
    ]
    for i in range(nt):
        for j in range(np_):
            v = values[i, j]
            color = _ramp((v - vmin) / span) if np.isfinite(v) else "#cccccc"
            x = left + i * cell_px
            y = top + (np_ - 1 - j) * cell_px
            out.append(f'<rect x="{x}" y="{y}" width="{cell_px}" height="{cell_px}" fill="{color}"/>')
    if marker is not None:
        i, j = marker
        cx = left + i * cell_px + cell_px / 2
        cy = top + (np_ - 1 - j) * cell_px + cell_px / 2
        d = max(cell_px, 6)
        out.append(
            f'<path d="M{cx - d} {cy - d} L{cx + d} {cy + d} M{cx - d} {cy + d} L{cx + d} {cy - d}" '
            f'stroke="white" stroke-width="2"/>'
        )
    bottom = top + np_ * cell_px
    out.append(f'<text x="{left}" y="{bottom + 16}">t1 {float(ts[0]):g}</text>')
    out.append(f'<text x="{left + nt * cell_px}" y="{bottom + 16}" text-anchor="end">{float(ts[-1]):g}</text>')
    out.append(f'<text x="{left - 4}" y="{bottom}" text-anchor="end">p1 {float(ps[0]):g}</text>')
    out.append(f'<text x="{left - 4}" y="{top + 10}" text-anchor="end">{float(ps[-1]):g}</text>')
    bx = left + nt * cell_px + 15
    steps = 20
    for s in range(steps):
        h = np_ * cell_px / steps
        out.append(f'<rect x="{bx}" y="{top + (steps - 1 - s) * h}" width="{bar - 15}" height="{h + 0.5}" fill="{_ramp(s / (steps - 1))}"/>')
    out.append(f'<text x="{bx + bar - 10}" y="{top + 10}">{vmax:.4g}</text>')
    out.append(f'<text x="{bx + bar - 10}" y="{bottom}">{vmin:.4g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
