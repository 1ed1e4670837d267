"""Minimal SVG emission: grouped bars with interval whiskers and line charts.

Static figure reproduction only; every plot-producing command also writes the
underlying CSV, so nothing is plot-only.
"""

from __future__ import annotations

import math
from pathlib import Path

PALETTE = (
    "#4878d0",
    "#ee854a",
    "#6acc64",
    "#d65f5f",
    "#956cb4",
    "#8c613c",
    "#dc7ec0",
    "#797979",
    "#d5bb67",
)


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _axis_ticks(vmax: float, n: int = 5) -> list[float]:
    if vmax <= 0:
        return [0.0, 1.0]
    raw = vmax / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min(s for s in (1 * mag, 2 * mag, 5 * mag, 10 * mag) if s >= raw)
    k = math.ceil(vmax / step)
    return [i * step for i in range(k + 1)]


def _fmt_tick(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.1e}"
    if float(v).is_integer():
        return str(int(v))
    return f"{v:g}"


def grouped_bars(
    title: str,
    group_labels: list[str],
    series: dict[str, list[float]],
    intervals: dict[str, list[tuple[float, float]]] | None = None,
    y_label: str = "",
    width: int = 860,
    height: int = 420,
) -> str:
    """Bars grouped by ``group_labels``, one colour per series, whiskers optional."""
    ml, mr, mt, mb = 70, 20, 40, 70
    plot_w, plot_h = width - ml - mr, height - mt - mb
    n_groups, n_series = len(group_labels), len(series)
    vmax = 0.0
    for name, values in series.items():
        vmax = max(vmax, max(values, default=0.0))
        if intervals and name in intervals:
            vmax = max(vmax, max((hi for _, hi in intervals[name]), default=0.0))
    ticks = _axis_ticks(vmax * 1.05 if vmax > 0 else 1.0)
    top = ticks[-1]

    def ypix(v: float) -> float:
        return mt + plot_h * (1.0 - v / top)

    group_w = plot_w / max(n_groups, 1)
    bar_w = group_w * 0.8 / max(n_series, 1)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="Helvetica,Arial,sans-serif" font-size="12">',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="15">{_esc(title)}</text>',
    ]
    for tick in ticks:
        y = ypix(tick)
        parts.append(
            f'<line x1="{ml}" y1="{y:.1f}" x2="{width - mr}" y2="{y:.1f}" stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{ml - 6}" y="{y + 4:.1f}" text-anchor="end">{_fmt_tick(tick)}</text>'
        )
    if y_label:
        parts.append(
            f'<text x="16" y="{mt + plot_h / 2}" text-anchor="middle" '
            f'transform="rotate(-90 16 {mt + plot_h / 2})">{_esc(y_label)}</text>'
        )
    for gi, glabel in enumerate(group_labels):
        gx = ml + gi * group_w
        parts.append(
            f'<text x="{gx + group_w / 2:.1f}" y="{height - mb + 18}" text-anchor="middle">'
            f"{_esc(str(glabel))}</text>"
        )
        for si, (name, values) in enumerate(series.items()):
            v = values[gi]
            x = gx + group_w * 0.1 + si * bar_w
            y = ypix(v)
            colour = PALETTE[si % len(PALETTE)]
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w * 0.92:.1f}" '
                f'height="{mt + plot_h - y:.1f}" fill="{colour}"/>'
            )
            if intervals and name in intervals:
                lo, hi = intervals[name][gi]
                cx = x + bar_w * 0.46
                parts.append(
                    f'<line x1="{cx:.1f}" y1="{ypix(lo):.1f}" x2="{cx:.1f}" y2="{ypix(hi):.1f}" '
                    f'stroke="#333333" stroke-width="1.4"/>'
                )
                for v2 in (lo, hi):
                    parts.append(
                        f'<line x1="{cx - 3:.1f}" y1="{ypix(v2):.1f}" x2="{cx + 3:.1f}" '
                        f'y2="{ypix(v2):.1f}" stroke="#333333" stroke-width="1.4"/>'
                    )
    for si, name in enumerate(series):
        lx = ml + si * 150
        ly = height - 16
        colour = PALETTE[si % len(PALETTE)]
        parts.append(f'<rect x="{lx}" y="{ly - 10}" width="12" height="12" fill="{colour}"/>')
        parts.append(f'<text x="{lx + 16}" y="{ly}">{_esc(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def line_chart(
    title: str,
    x_labels: list[str],
    series: dict[str, list[float]],
    bands: dict[str, list[tuple[float, float]]] | None = None,
    y_label: str = "",
    width: int = 860,
    height: int = 420,
) -> str:
    """Lines over a shared x axis with optional shaded intervals."""
    ml, mr, mt, mb = 70, 20, 40, 70
    plot_w, plot_h = width - ml - mr, height - mt - mb
    n = len(x_labels)
    vmax = 0.0
    for name, values in series.items():
        vmax = max(vmax, max(values, default=0.0))
        if bands and name in bands:
            vmax = max(vmax, max((hi for _, hi in bands[name]), default=0.0))
    ticks = _axis_ticks(vmax * 1.05 if vmax > 0 else 1.0)
    top = ticks[-1]

    def xpix(i: int) -> float:
        return ml + plot_w * (i / max(n - 1, 1))

    def ypix(v: float) -> float:
        return mt + plot_h * (1.0 - v / top)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="Helvetica,Arial,sans-serif" font-size="12">',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="15">{_esc(title)}</text>',
    ]
    for tick in ticks:
        y = ypix(tick)
        parts.append(
            f'<line x1="{ml}" y1="{y:.1f}" x2="{width - mr}" y2="{y:.1f}" stroke="#dddddd"/>'
        )
        parts.append(f'<text x="{ml - 6}" y="{y + 4:.1f}" text-anchor="end">{_fmt_tick(tick)}</text>')
    step = max(1, n // 10)
    for i in range(0, n, step):
        parts.append(
            f'<text x="{xpix(i):.1f}" y="{height - mb + 18}" text-anchor="middle" font-size="10">'
            f"{_esc(str(x_labels[i]))}</text>"
        )
    if y_label:
        parts.append(
            f'<text x="16" y="{mt + plot_h / 2}" text-anchor="middle" '
            f'transform="rotate(-90 16 {mt + plot_h / 2})">{_esc(y_label)}</text>'
        )
    for si, (name, values) in enumerate(series.items()):
        colour = PALETTE[si % len(PALETTE)]
        if bands and name in bands:
            upper = [f"{xpix(i):.1f},{ypix(hi):.1f}" for i, (_, hi) in enumerate(bands[name])]
            lower = [
                f"{xpix(i):.1f},{ypix(lo):.1f}"
                for i, (lo, _) in reversed(list(enumerate(bands[name])))
            ]
            parts.append(
                f'<polygon points="{" ".join(upper + lower)}" fill="{colour}" opacity="0.18"/>'
            )
        points = " ".join(f"{xpix(i):.1f},{ypix(v):.1f}" for i, v in enumerate(values))
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{colour}" stroke-width="1.8"/>'
        )
        lx = ml + si * 150
        ly = height - 16
        parts.append(f'<rect x="{lx}" y="{ly - 10}" width="12" height="12" fill="{colour}"/>')
        parts.append(f'<text x="{lx + 16}" y="{ly}">{_esc(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def save_svg(svg: str, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
    return path
