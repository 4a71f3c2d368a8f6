"""Minimal SVG line/scatter plots for run directories."""
from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


@dataclass
class Panel:
    """One set of axes. Data is added first; scaling happens at render time."""

    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    equal: bool = False
    items: list = field(default_factory=list)

    def line(self, x, y, label: str, color: str | None = None, css: str = ""):
        self.items.append(("line", np.asarray(x, float), np.asarray(y, float), label, color, css))

    def scatter(self, x, y, label: str, color: str | None = None, css: str = ""):
        self.items.append(("scatter", np.asarray(x, float), np.asarray(y, float), label, color, css))

    def polygon(self, x, y, label: str, color: str | None = None, css: str = ""):
        self.items.append(("polygon", np.asarray(x, float), np.asarray(y, float), label, color, css))

    def _limits(self, w, h):
        xs = np.concatenate([it[1] for it in self.items if it[1].size] or [np.zeros(1)])
        ys = np.concatenate([it[2] for it in self.items if it[2].size] or [np.zeros(1)])
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        if x1 - x0 < 1e-9:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 - y0 < 1e-9:
            y0, y1 = y0 - 0.5, y1 + 0.5
        if self.equal:
            scale = max((x1 - x0) / w, (y1 - y0) / h)
            cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
            x0, x1 = cx - scale * w / 2, cx + scale * w / 2
            y0, y1 = cy - scale * h / 2, cy + scale * h / 2
        pad_x, pad_y = 0.05 * (x1 - x0), 0.05 * (y1 - y0)
        return x0 - pad_x, x1 + pad_x, y0 - pad_y, y1 + pad_y

    def render(self, ox: float, oy: float, w: float, h: float) -> list[str]:
        x0, x1, y0, y1 = self._limits(w, h)

        def px(x):
            return ox + (x - x0) / (x1 - x0) * w

        def py(y):
            return oy + h - (y - y0) / (y1 - y0) * h

        out = [f'<rect x="{ox:.1f}" y="{oy:.1f}" width="{w:.1f}" height="{h:.1f}" '
               'fill="none" stroke="#888"/>',
               f'<text x="{ox + w / 2:.1f}" y="{oy - 8:.1f}" text-anchor="middle" '
               f'font-size="13">{escape(self.title)}</text>',
               f'<text x="{ox + w / 2:.1f}" y="{oy + h + 32:.1f}" text-anchor="middle" '
               f'font-size="11">{escape(self.xlabel)}</text>',
               f'<text x="{ox - 44:.1f}" y="{oy + h / 2:.1f}" font-size="11" '
               f'transform="rotate(-90 {ox - 44:.1f} {oy + h / 2:.1f})" '
               f'text-anchor="middle">{escape(self.ylabel)}</text>']
        for val in np.linspace(x0, x1, 5):
            out.append(f'<text x="{px(val):.1f}" y="{oy + h + 14:.1f}" font-size="9" '
                       f'text-anchor="middle">{val:.3g}</text>')
        for val in np.linspace(y0, y1, 5):
            out.append(f'<text x="{ox - 4:.1f}" y="{py(val) + 3:.1f}" font-size="9" '
                       f'text-anchor="end">{val:.3g}</text>')
        for i, (kind, x, y, label, color, css) in enumerate(self.items):
            color = color or PALETTE[i % len(PALETTE)]
            cls = f' class="{css}"' if css else ""
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            if kind == "line":
                out.append(f'<polyline{cls} data-label="{escape(label)}" points="{pts}" '
                           f'fill="none" stroke="{color}" stroke-width="1.5"/>')
            elif kind == "polygon":
                out.append(f'<polygon{cls} data-label="{escape(label)}" points="{pts}" '
                           f'fill="{color}" fill-opacity="0.15" stroke="{color}"/>')
            else:
                out.extend(f'<circle{cls} cx="{px(a):.2f}" cy="{py(b):.2f}" r="2.5" '
                           f'fill="{color}"/>' for a, b in zip(x, y))
            ly = oy + 14 + 14 * i
            out.append(f'<text x="{ox + w - 6:.1f}" y="{ly:.1f}" font-size="10" '
                       f'text-anchor="end" fill="{color}">{escape(label)}</text>')
        return out


def write_svg(path, panels: list[Panel], cols: int = 1, panel_w: float = 420,
              panel_h: float = 300) -> None:
    rows = -(-len(panels) // cols)
    W = cols * (panel_w + 90) + 20
    H = rows * (panel_h + 80) + 20
    body = []
    for i, panel in enumerate(panels):
        r, c = divmod(i, cols)
        body.extend(panel.render(70 + c * (panel_w + 90), 40 + r * (panel_h + 80), panel_w, panel_h))
    svg = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}" '
           f'viewBox="0 0 {W:.0f} {H:.0f}" font-family="sans-serif">',
           '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]
    with open(path, "w") as fh:
        fh.write("\n".join(svg) + "\n")
