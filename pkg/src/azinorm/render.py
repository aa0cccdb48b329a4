"""Static BEV rendering to SVG."""

from __future__ import annotations

from typing import Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

from .geom import OrientedBox
from .merge import box_corners_bev
from .patching import CircularLayout

GT_STYLE = 'fill="none" stroke="#1a9850" stroke-width="1.5"'
PRED_STYLE = 'fill="none" stroke="#d73027" stroke-width="1.2" stroke-dasharray="4 2"'
PATCH_STYLE = 'fill="none" stroke="#4575b4" stroke-width="0.5" stroke-opacity="0.5"'
AXIS_STYLE = 'stroke="#999999" stroke-width="0.8"'


def render_svg(xyz: Optional[np.ndarray], gt_boxes: Sequence[OrientedBox] = (),
               pred_boxes: Sequence[OrientedBox] = (),
               bounds: Tuple[float, float, float, float] = (-75, 75, -75, 75),
               patch_centers: Optional[np.ndarray] = None, layout=None,
               size: int = 800, title: str = "") -> str:
    """Top-down view: +X to the right, +Y up, metres mapped linearly to pixels."""
    xmin, xmax, ymin, ymax = bounds
    scale = size / max(xmax - xmin, ymax - ymin, 1e-9)
    w = (xmax - xmin) * scale
    h = (ymax - ymin) * scale

    def px(x, y):
        return (x - xmin) * scale, (ymax - y) * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1f}" height="{h:.1f}" '
           f'viewBox="0 0 {w:.1f} {h:.1f}">']
    if title:
        out.append(f"<title>{escape(title)}</title>")
    out.append(f'<rect x="0" y="0" width="{w:.1f}" height="{h:.1f}" fill="white" stroke="#cccccc"/>')
    ox, oy = px(0.0, 0.0)
    out.append('<g id="frame">')
    out.append(f'<line x1="0" y1="{oy:.2f}" x2="{w:.1f}" y2="{oy:.2f}" {AXIS_STYLE}/>')
    out.append(f'<line x1="{ox:.2f}" y1="0" x2="{ox:.2f}" y2="{h:.1f}" {AXIS_STYLE}/>')
    out.append(f'<circle cx="{ox:.2f}" cy="{oy:.2f}" r="3" fill="#333333"/>')
    out.append("</g>")

    if patch_centers is not None and len(patch_centers) and layout is not None:
        out.append('<g id="patches">')
        for cx, cy in patch_centers:
            x, y = px(cx, cy)
            if isinstance(layout, CircularLayout):
                out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{layout.radius * scale:.2f}" {PATCH_STYLE}/>')
            else:
                a = layout.side * scale
                out.append(f'<rect x="{x - a / 2:.2f}" y="{y - a / 2:.2f}" width="{a:.2f}" '
                           f'height="{a:.2f}" {PATCH_STYLE}/>')
        out.append("</g>")

    if xyz is not None and len(xyz):
        out.append('<g id="points" fill="#555555">')
        for x, y in xyz[:, :2]:
            sx, sy = px(x, y)
            out.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="0.6"/>')
        out.append("</g>")

    for gid, boxes, style in (("gt", gt_boxes, GT_STYLE), ("pred", pred_boxes, PRED_STYLE)):
        if not boxes:
            continue
        out.append(f'<g id="{gid}">')
        for b in boxes:
            pts = " ".join("%.2f,%.2f" % px(x, y) for x, y in box_corners_bev(b))
            out.append(f'<polygon points="{pts}" {style}/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
