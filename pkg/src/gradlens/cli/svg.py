"""SVG 1.1 contact sheet: one row per original, its best reconstruction beside it."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from ..imaging import FieldImage, quantize

CELL = 6  # screen pixels per image pixel
GAP = 12


def _image_rects(img: FieldImage, x0: int, y0: int) -> list[str]:
    q = quantize(img)
    if q.shape[2] == 1:
        q = np.repeat(q, 3, axis=2)
    out = []
    for r in range(q.shape[0]):
        for c in range(q.shape[1]):
            red, green, blue = (int(v) for v in q[r, c])
            out.append(
                f'<rect x="{x0 + c * CELL}" y="{y0 + r * CELL}" width="{CELL}" height="{CELL}" '
                f'fill="#{red:02x}{green:02x}{blue:02x}"/>'
            )
    return out


def contact_sheet(pairs: list[tuple[FieldImage, FieldImage | None, str]], notice: str | None = None) -> str:
    """``pairs`` holds (original, reconstruction or None, caption)."""
    if pairs:
        h, w = pairs[0][0].height, pairs[0][0].width
    else:
        h = w = 1
    tile_w, tile_h = w * CELL, h * CELL
    top = 24 if notice else 0
    width = 2 * tile_w + 3 * GAP + 160
    height = top + len(pairs) * (tile_h + GAP) + GAP
    body = []
    if notice:
        body.append(f'<text x="{GAP}" y="16" font-size="12" font-family="monospace">{escape(notice)}</text>')
    for i, (orig, recon, caption) in enumerate(pairs):
        y = top + GAP + i * (tile_h + GAP)
        body += _image_rects(orig, GAP, y)
        if recon is not None:
            body += _image_rects(recon, 2 * GAP + tile_w, y)
        body.append(
            f'<text x="{3 * GAP + 2 * tile_w}" y="{y + tile_h // 2}" font-size="11" '
            f'font-family="monospace">{escape(caption)}</text>'
        )
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )
