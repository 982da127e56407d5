"""Deterministic SVG and plain-text forest plots.

A plot is a sequence of panels, each a title plus :class:`~zibc.meta.ForestRow`
records. All panels share one x-axis so that methods can be compared by eye.
Coordinates are rounded to two decimals, giving byte-identical output for
identical input.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .meta import ForestRow

PANEL_TITLES = {
    "true": "True method",
    "zibc": "ZIBC method",
    "conventional": "Conventional method",
    "": "Effects",
}
PANEL_ORDER = ("true", "zibc", "conventional", "")

ROW_H = 20
TOP = 50
LABEL_W = 90
PLOT_W = 180
TEXT_W = 130
PANEL_W = LABEL_W + PLOT_W + TEXT_W
BOTTOM = 45


def ordered_panels(panels: dict) -> list[tuple[str, list[ForestRow]]]:
    keys = [k for k in PANEL_ORDER if k in panels] + [k for k in panels if k not in PANEL_ORDER]
    return [(PANEL_TITLES.get(k, k), panels[k]) for k in keys]


def _nice_step(span):
    raw = span / 5.0
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= raw:
            return m * mag
    return 10 * mag


def axis_range(all_rows):
    lo = min(min(r.ci_low for r in rows) for rows in all_rows)
    hi = max(max(r.ci_high for r in rows) for rows in all_rows)
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    step = _nice_step(hi - lo)
    lo = math.floor(lo / step) * step
    hi = math.ceil(hi / step) * step
    ticks = []
    t = lo
    while t <= hi + step * 1e-6:
        ticks.append(round(t, 10) + 0.0)
        t += step
    return lo, hi, ticks


def _fmt(v):
    return f"{v:.2f}"


def _num(v):
    return f"{v:.2f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def render_svg(panels: dict, title: str = "") -> str:
    plist = ordered_panels(panels)
    lo, hi, ticks = axis_range([rows for _, rows in plist])
    nrows = max(len(rows) for _, rows in plist)
    width = PANEL_W * len(plist)
    height = TOP + ROW_H * (nrows + 1) + BOTTOM

    def sx(v, x0):
        return x0 + LABEL_W + (v - lo) / (hi - lo) * PLOT_W

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.2f}" y="16" text-anchor="middle" font-size="13" '
                   f'font-weight="bold">{escape(title)}</text>')
    for p, (ptitle, rows) in enumerate(plist):
        x0 = p * PANEL_W
        out.append(f'<g class="panel" data-title="{escape(ptitle)}">')
        out.append(f'<text x="{x0 + PANEL_W / 2:.2f}" y="36" text-anchor="middle" '
                   f'font-weight="bold">{escape(ptitle)}</text>')
        y_axis = TOP + ROW_H * (nrows + 1) - ROW_H / 2
        zero_x = sx(0.0, x0)
        out.append(f'<line x1="{zero_x:.2f}" y1="{TOP - 5}" x2="{zero_x:.2f}" y2="{y_axis:.2f}" '
                   f'stroke="#888" stroke-dasharray="3,3"/>')
        for i, r in enumerate(rows):
            if r.summary:
                yc = TOP + ROW_H * (len(rows))
            else:
                yc = TOP + ROW_H * i + ROW_H / 2
            out.append(f'<text x="{x0 + 6}" y="{yc + 4:.2f}">{escape(r.label)}</text>')
            lo_x, hi_x, mid_x = sx(r.ci_low, x0), sx(r.ci_high, x0), sx(r.effect, x0)
            if r.summary:
                out.append(
                    f'<polygon class="summary" points="{lo_x:.2f},{yc:.2f} {mid_x:.2f},{yc - 6:.2f} '
                    f'{hi_x:.2f},{yc:.2f} {mid_x:.2f},{yc + 6:.2f}" fill="black"/>')
            else:
                size = 3.0 + 5.0 * math.sqrt(r.weight or 0.0)
                out.append(f'<line x1="{lo_x:.2f}" y1="{yc:.2f}" x2="{hi_x:.2f}" y2="{yc:.2f}" '
                           f'stroke="black"/>')
                out.append(f'<rect class="study" x="{mid_x - size / 2:.2f}" y="{yc - size / 2:.2f}" '
                           f'width="{size:.2f}" height="{size:.2f}" fill="black"/>')
            out.append(f'<text x="{x0 + LABEL_W + PLOT_W + 8}" y="{yc + 4:.2f}">'
                       f'{_fmt(r.effect)} [{_fmt(r.ci_low)}, {_fmt(r.ci_high)}]</text>')
        out.append(f'<line x1="{sx(lo, x0):.2f}" y1="{y_axis:.2f}" x2="{sx(hi, x0):.2f}" '
                   f'y2="{y_axis:.2f}" stroke="black"/>')
        for t in ticks:
            tx = sx(t, x0)
            out.append(f'<line x1="{tx:.2f}" y1="{y_axis:.2f}" x2="{tx:.2f}" y2="{y_axis + 4:.2f}" '
                       f'stroke="black"/>')
            out.append(f'<text x="{tx:.2f}" y="{y_axis + 15:.2f}" text-anchor="middle" '
                       f'font-size="9">{_num(t)}</text>')
        out.append(f'<text x="{x0 + LABEL_W + PLOT_W / 2:.2f}" y="{y_axis + 30:.2f}" '
                   f'text-anchor="middle" font-size="10">Log incidence density ratio</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_text(panels: dict, title: str = "", width: int = 41) -> str:
    plist = ordered_panels(panels)
    lo, hi, _ = axis_range([rows for _, rows in plist])
    label_w = max(len(r.label) for _, rows in plist for r in rows)

    def col(v):
        return int(round((v - lo) / (hi - lo) * (width - 1)))

    lines = []
    if title:
        lines += [title, ""]
    for ptitle, rows in plist:
        lines.append(ptitle)
        lines.append("-" * len(ptitle))
        for r in rows:
            cells = [" "] * width
            zc = col(0.0)
            cells[zc] = ":"
            a, b = col(r.ci_low), col(r.ci_high)
            for c in range(a, b + 1):
                cells[c] = "-"
            cells[a], cells[b] = "[", "]"
            cells[col(r.effect)] = "*" if r.summary else "#"
            lines.append(f"{r.label:<{label_w}}  {''.join(cells)}  "
                         f"{r.effect:6.2f} [{r.ci_low:6.2f}, {r.ci_high:6.2f}]")
        lines.append(f"{'':<{label_w}}  {_num(lo):<{width // 2}}{_num(hi):>{width - width // 2}}")
        lines.append("")
    return "\n".join(lines)
