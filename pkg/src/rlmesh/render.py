"""Deterministic SVG rendering of triangle meshes.

Coordinates are printed with four decimals after mapping the mesh bounding
box into a fixed-width canvas, so the same mesh always yields the same
bytes.

Fill colours use a three-stop diverging ramp: t = 0 is #2c7bb6 (blue),
t = 0.5 is #ffffbf (pale yellow), t = 1 is #d7191c (red), with linear
interpolation per RGB channel between stops. ``element-quality`` maps the
radius ratio q_r clipped to [0, 1] onto t directly. ``element-volume`` maps
each area (divided by h^2 at the centroid) linearly from the mesh minimum
(t = 0) to the mesh maximum (t = 1).
"""
from __future__ import annotations

import numpy as np

from .geometry import Polygon, triangle_measures
from .mesh_state import CONSTANT, SizeField

COLORINGS = (None, "none", "element-volume", "element-quality")
RAMP = ((0.0, (0x2C, 0x7B, 0xB6)), (0.5, (0xFF, 0xFF, 0xBF)), (1.0, (0xD7, 0x19, 0x1C)))
WIDTH = 800.0
MARGIN = 10.0


def ramp_color(t: float) -> str:
    t = min(max(float(t), 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(RAMP, RAMP[1:]):
        if t <= t1:
            u = (t - t0) / (t1 - t0)
            rgb = [round(a + (b - a) * u) for a, b in zip(c0, c1)]
            return "#{:02x}{:02x}{:02x}".format(*rgb)
    return "#{:02x}{:02x}{:02x}".format(*RAMP[-1][1])


def _fill_values(points, tris, coloring, size):
    m = triangle_measures(points, tris)
    if coloring == "element-quality":
        with np.errstate(divide="ignore", invalid="ignore"):
            q = 2.0 * m["inradius"] / m["circumradius"]
        return np.clip(np.nan_to_num(q, nan=0.0), 0.0, 1.0)
    area = m["area"] / np.asarray(size(m["centroid"])) ** 2
    lo, hi = area.min(), area.max()
    return np.full(len(area), 0.5) if hi <= lo else (area - lo) / (hi - lo)


def render_svg(points, triangles, outline: Polygon | np.ndarray | None = None, coloring: str | None = None,
               size: SizeField = CONSTANT) -> str:
    """SVG document with the domain outline and triangle edges.

    With a coloring, each triangle is a filled ``<path>``; otherwise triangles
    are unfilled paths. The outline is a single ``<polygon>``.
    """
    if coloring not in COLORINGS:
        raise ValueError(f"coloring must be one of {COLORINGS[1:]}")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    tris = np.asarray(triangles, dtype=int).reshape(-1, 3)
    ring = None
    if outline is not None:
        ring = outline.vertices if isinstance(outline, Polygon) else np.asarray(outline, dtype=float)
    parts = [a for a in (pts, ring) if a is not None and len(a)]
    extent = np.concatenate(parts) if parts else np.zeros((1, 2))
    lo, hi = extent.min(axis=0), extent.max(axis=0)
    span = max(float((hi - lo).max()), 1e-12)
    scale = (WIDTH - 2 * MARGIN) / span
    height = (hi[1] - lo[1]) * scale + 2 * MARGIN

    def xy(p):
        return f"{(p[0] - lo[0]) * scale + MARGIN:.4f},{(hi[1] - p[1]) * scale + MARGIN:.4f}"

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0f}" height="{height:.4f}" '
        f'viewBox="0 0 {WIDTH:.0f} {height:.4f}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
    ]
    colored = coloring not in (None, "none") and len(tris)
    fills = _fill_values(pts, tris, coloring, size) if colored else None
    out.append('<g stroke="#000000" stroke-width="0.5" stroke-linejoin="round">')
    for k, (i, j, l) in enumerate(tris):
        fill = ramp_color(fills[k]) if colored else "none"
        out.append(f'<path d="M{xy(pts[i])} L{xy(pts[j])} L{xy(pts[l])} Z" fill="{fill}"/>')
    out.append("</g>")
    if ring is not None and len(ring):
        coords = " ".join(xy(p) for p in ring)
        out.append(f'<polygon points="{coords}" fill="none" stroke="#000000" stroke-width="1.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
