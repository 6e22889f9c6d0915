"""Static SVG charts rendered only from report payloads.

Each SVG embeds its data table as JSON inside ``<metadata>`` so a plot can be
checked against (or regenerated from) the report it came from.
"""

from __future__ import annotations

import json
from xml.sax.saxutils import escape, unescape

WIDTH, HEIGHT = 640, 400
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 150, 30, 40, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _header(title: str, data: dict) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f"<metadata>{escape(json.dumps(data, sort_keys=True))}</metadata>",
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]


def bar_chart(labels, values, title: str, xlabel: str = "") -> str:
    """Horizontal bars, first label at the top."""
    labels = [str(v) for v in labels]
    values = [float(v) for v in values]
    lines = _header(title, {"labels": labels, "values": values})
    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    vmax = max([abs(v) for v in values] + [1e-300])
    step = plot_h / max(len(values), 1)
    for i, (label, v) in enumerate(zip(labels, values)):
        y = MARGIN_TOP + i * step
        w = plot_w * abs(v) / vmax
        lines.append(
            f'<rect x="{MARGIN_LEFT}" y="{_fmt(y + 0.1 * step)}" width="{_fmt(w)}" '
            f'height="{_fmt(0.8 * step)}" fill="{PALETTE[0]}"><title>{escape(label)}: {v:.6g}</title></rect>'
        )
        lines.append(
            f'<text x="{MARGIN_LEFT - 6}" y="{_fmt(y + 0.5 * step + 4)}" text-anchor="end">{escape(label)}</text>'
        )
    lines.append(
        f'<text x="{MARGIN_LEFT + plot_w / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)} '
        f"(max {vmax:.4g})</text>"
    )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def line_chart(x, series: dict, title: str, xlabel: str = "", ylabel: str = "") -> str:
    """Polylines sharing one abscissa; ``series`` maps legend name to values."""
    x = [float(v) for v in x]
    series = {k: [float(v) for v in vals] for k, vals in series.items()}
    lines = _header(title, {"x": x, "series": series})
    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    ys = [v for vals in series.values() for v in vals] or [0.0]
    xmin, xmax = min(x), max(x)
    ymin, ymax = min(ys), max(ys)
    if xmax == xmin:
        xmax = xmin + 1.0
    if ymax == ymin:
        ymax = ymin + 1.0

    def px(v):
        return MARGIN_LEFT + plot_w * (v - xmin) / (xmax - xmin)

    def py(v):
        return MARGIN_TOP + plot_h * (1.0 - (v - ymin) / (ymax - ymin))

    lines.append(
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#999"/>'
    )
    for i, (name, vals) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x, vals))
        lines.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="2"/>')
        lines.append(
            f'<text x="{MARGIN_LEFT + 8}" y="{MARGIN_TOP + 14 + 14 * i}" fill="{colour}">{escape(name)}</text>'
        )
    lines.append(f'<text x="{MARGIN_LEFT - 6}" y="{MARGIN_TOP + 4}" text-anchor="end">{ymax:.3g}</text>')
    lines.append(f'<text x="{MARGIN_LEFT - 6}" y="{MARGIN_TOP + plot_h}" text-anchor="end">{ymin:.3g}</text>')
    lines.append(
        f'<text x="{MARGIN_LEFT + plot_w / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>'
    )
    lines.append(
        f'<text x="20" y="{MARGIN_TOP + plot_h / 2}" transform="rotate(-90 20 {MARGIN_TOP + plot_h / 2})" '
        f'text-anchor="middle">{escape(ylabel)}</text>'
    )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def relevance_svg(payload: dict) -> str:
    return bar_chart(payload["features"], payload["scores"],
                     f"Feature relevance ({payload['method']})", "mean relevance")


def mask_sweep_svg(payload: dict) -> str:
    return line_chart(
        list(range(len(payload["r2"]))),
        {f"{payload['method']} ({payload['order']})": payload["r2"]},
        "Validation R^2 while masking features",
        "features masked",
        "R^2",
    )


def gap_svg(payload: dict) -> str:
    return bar_chart(payload["features"], payload["profile"]["gaps"],
                     f"Uncertainty gap, sample {payload['sample']}", "gap score")


def extract_metadata(svg: str) -> dict:
    """Inverse of the embedded data table."""
    start = svg.index("<metadata>") + len("<metadata>")
    end = svg.index("</metadata>")
    return json.loads(unescape(svg[start:end]))
