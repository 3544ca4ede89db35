"""Deterministic SVG rendering of layouts for inspection.

2D canvases are drawn as they are (y pointing up, flipped for SVG). 3D
rooms are drawn top-down: each object's footprint is rotated by its yaw and
carries a tick along its facing direction ``encode_rotation(r)``.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence
from xml.sax.saxutils import escape

from .core import Layout
from .dgauss import encode_rotation

PALETTE = (
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
)
TARGET_PX = 512.0


def _f(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def render_svg(layout: Layout, category_names: Optional[Sequence[str]] = None) -> bytes:
    W, H = layout.bounds[0], layout.bounds[1]
    k = TARGET_PX / max(W, H)
    pw, ph = W * k, H * k

    def X(x):
        return x * k

    def Y(y):
        return (H - y) * k

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(pw)}" height="{_f(ph)}" '
        f'viewBox="0 0 {_f(pw)} {_f(ph)}">',
        '<defs><pattern id="hatch" width="8" height="8" patternUnits="userSpaceOnUse" '
        'patternTransform="rotate(45)"><line x1="0" y1="0" x2="0" y2="8" stroke="#888" stroke-width="2"/>'
        "</pattern></defs>",
        f'<rect class="canvas" x="0" y="0" width="{_f(pw)}" height="{_f(ph)}" fill="#ffffff" stroke="#000000"/>',
    ]
    if layout.product_region is not None:
        x0, y0, x1, y1 = layout.product_region
        out.append(
            f'<rect class="product" x="{_f(X(x0))}" y="{_f(Y(y1))}" width="{_f((x1 - x0) * k)}" '
            f'height="{_f((y1 - y0) * k)}" fill="url(#hatch)" stroke="#888"/>'
        )
    for i, o in enumerate(layout.objects):
        color = PALETTE[o.category % len(PALETTE)]
        name = category_names[o.category] if category_names and o.category < len(category_names) else str(o.category)
        cx, cy = X(o.location[0]), Y(o.location[1])
        w, h = o.size[0] * k, o.size[1] * k
        rect = (
            f'<rect class="obj" x="{_f(-w / 2)}" y="{_f(-h / 2)}" width="{_f(w)}" height="{_f(h)}" '
            f'fill="{color}" fill-opacity="0.5" stroke="{color}"/>'
        )
        if layout.kind == "3D":
            # the y flip mirrors the plane, so angles turn clockwise in SVG
            deg = -math.degrees(o.rotation)
            c, s = encode_rotation(o.rotation)
            r = max(w, h) / 2
            out.append(f'<g transform="translate({_f(cx)},{_f(cy)}) rotate({_f(deg)})">{rect}</g>')
            out.append(
                f'<line class="tick" x1="{_f(cx)}" y1="{_f(cy)}" x2="{_f(cx + r * c)}" '
                f'y2="{_f(cy - r * s)}" stroke="#000000"/>'
            )
        else:
            out.append(f'<g transform="translate({_f(cx)},{_f(cy)})">{rect}</g>')
        out.append(
            f'<text x="{_f(cx)}" y="{_f(cy)}" font-size="10" text-anchor="middle">{escape(f"{i}:{name}")}</text>'
        )
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")
