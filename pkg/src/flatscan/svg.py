"""Minimal SVG rendering (rects, circles and polylines) with deterministic output."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np


def _f(v):
    return format(float(v), ".6g")


def _shade(t):
    """Grey-to-blue ramp for t in [0, 1]."""
    t = float(min(max(t, 0.0), 1.0))
    r = int(round(245 - 215 * t))
    g = int(round(245 - 165 * t))
    b = int(round(250 - 70 * t))
    return f"#{r:02x}{g:02x}{b:02x}"


def _document(width, height, body, comments=()):
    head = "".join(f"<!-- {escape(c).replace('--', '- -')} -->\n" for c in comments)
    return (head + f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n' + "\n".join(body) + "\n</svg>\n")


def heatmap(matrix, *, title="", xlabel="", ylabel="", comments=(), cell=6, margin=40) -> str:
    """Rows of ``matrix`` are drawn bottom-up (row 0 at the bottom); NaN cells are left white."""
    M = np.asarray(matrix, dtype=float)
    rows, cols = M.shape
    finite = M[np.isfinite(M)]
    hi = float(finite.max()) if finite.size else 1.0
    lo = float(finite.min()) if finite.size else 0.0
    span = hi - lo if hi > lo else 1.0
    w = cols * cell + 2 * margin
    h = rows * cell + 2 * margin
    body = [f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>']
    for i in range(rows):
        y = margin + (rows - 1 - i) * cell
        for j in range(cols):
            v = M[i, j]
            if not np.isfinite(v):
                continue
            body.append(f'<rect x="{margin + j * cell}" y="{y}" width="{cell}" height="{cell}" '
                        f'fill="{_shade((v - lo) / span)}"/>')
    body.append(f'<text x="{margin}" y="{margin - 12}" font-size="12">{escape(title)} '
                f'[{_f(lo)}, {_f(hi)}]</text>')
    body.append(f'<text x="{margin}" y="{h - 10}" font-size="11">{escape(xlabel)}</text>')
    body.append(f'<text x="10" y="{margin + rows * cell / 2}" font-size="11" '
                f'transform="rotate(-90 10 {margin + rows * cell / 2})">{escape(ylabel)}</text>')
    return _document(w, h, body, comments)


def scatter_plot(layers, *, title="", comments=(), size=480, margin=30) -> str:
    """``layers`` is a list of dicts with ``points`` (m x 2), ``kind`` in
    {"dots", "line"} and optional ``color`` / ``radius``."""
    allp = np.vstack([np.asarray(L["points"], dtype=float)[:, :2] for L in layers if len(L["points"])])
    lo = allp.min(axis=0)
    hi = allp.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    scale = (size - 2 * margin) / span

    def tx(p):
        return margin + (p[0] - lo[0]) * scale, size - margin - (p[1] - lo[1]) * scale

    body = [f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>']
    for L in layers:
        P = np.asarray(L["points"], dtype=float)[:, :2]
        color = L.get("color", "#333333")
        if L.get("kind", "dots") == "line":
            coords = " ".join(f"{_f(a)},{_f(b)}" for a, b in (tx(p) for p in P))
            body.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1"/>')
        else:
            rad = L.get("radius", 1.2)
            for p in P:
                a, b = tx(p)
                body.append(f'<circle cx="{_f(a)}" cy="{_f(b)}" r="{rad}" fill="{color}"/>')
    body.append(f'<text x="{margin}" y="{margin - 10}" font-size="12">{escape(title)}</text>')
    return _document(size, size, body, comments)
