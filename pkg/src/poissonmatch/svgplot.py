"""Minimal deterministic SVG scatter output for torus matchings.

Convention: line segments join matched pairs, unmatched points are drawn at
twice the radius, colors are literal ("red", "blue", more via a small cycle).
Pairs wrapping around the torus are drawn without their joining segment to
avoid lines crossing the whole picture.
"""

from __future__ import annotations

import numpy as np

_PALETTE = ["red", "blue", "green", "orange", "purple", "brown"]


def color_name(c: int) -> str:
    return _PALETTE[c % len(_PALETTE)]


def torus_svg(config, matching, px: int = 800, point_radius: float = 2.0) -> str:
    """Render a 2-d torus configuration with its matching as an SVG string."""
    if config.dimension != 2:
        raise ValueError("SVG scatter requires dimension 2")
    scale = px / config.side
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{px}" height="{px}" '
        f'viewBox="0 0 {px} {px}">',
        f'<rect width="{px}" height="{px}" fill="white"/>',
    ]
    pts = config.points * scale
    seen = set()
    for i, j in matching.pairs():
        if (i, j) in seen:
            continue
        seen.add((i, j))
        a, b = pts[i], pts[j]
        if np.all(np.abs(config.points[i] - config.points[j]) <= config.side / 2):
            parts.append(
                f'<line x1="{a[0]:.2f}" y1="{a[1]:.2f}" x2="{b[0]:.2f}" y2="{b[1]:.2f}" '
                'stroke="black" stroke-width="0.6"/>'
            )
    matched = matching.is_matched()
    for i in range(config.n):
        r = point_radius if matched[i] else 2.0 * point_radius
        parts.append(
            f'<circle cx="{pts[i][0]:.2f}" cy="{pts[i][1]:.2f}" r="{r:.2f}" '
            f'fill="{color_name(int(config.colors[i]))}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def write_svg(path, svg: str) -> None:
    with open(path, "w") as fh:
        fh.write(svg)
