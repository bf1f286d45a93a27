"""Hand-rolled SVG learning curves.

One polyline per series on shared axes, with tick labels, a legend, and a
title; the output is self-contained valid XML. Episode returns are
smoothed with a trailing mean before plotting (the CSVs keep raw values).
"""

from __future__ import annotations

from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f")


def trailing_mean(values, window=20):
    """Mean over the trailing `window` entries (fewer near the start)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out


def _ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def _fmt(x):
    if abs(x) >= 10000:
        return f"{x:.3g}"
    if x == int(x):
        return str(int(x))
    return f"{x:.3g}"


def render_curves(series, title="episode return", x_label="environment steps",
                  y_label="return", width=720, height=440):
    """Build an SVG document string.

    series: iterable of (label, xs, ys); empty series are skipped but keep
    their legend entry so the plotted set is explicit.
    """
    margin_l, margin_r, margin_t, margin_b = 70, 20, 40, 50
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b

    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    x_lo, x_hi = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    y_lo, y_hi = (min(ys_all), max(ys_all)) if ys_all else (0.0, 1.0)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    def px(x):
        return margin_l + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return margin_t + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{escape(title)}</text>',
    ]

    # axes
    x0, y0 = margin_l, margin_t + plot_h
    parts.append(f'<line x1="{x0}" y1="{margin_t}" x2="{x0}" y2="{y0}" '
                 'stroke="black" stroke-width="1"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" '
                 'stroke="black" stroke-width="1"/>')
    for t in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{px(t):.1f}" y1="{y0}" x2="{px(t):.1f}" '
                     f'y2="{y0 + 4}" stroke="black" stroke-width="1"/>')
        parts.append(f'<text x="{px(t):.1f}" y="{y0 + 18}" '
                     'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{escape(_fmt(t))}</text>')
    for t in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{x0 - 4}" y1="{py(t):.1f}" x2="{x0}" '
                     f'y2="{py(t):.1f}" stroke="black" stroke-width="1"/>')
        parts.append(f'<text x="{x0 - 8}" y="{py(t) + 4:.1f}" '
                     'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{escape(_fmt(t))}</text>')
    parts.append(f'<text x="{margin_l + plot_w / 2:.1f}" y="{height - 12}" '
                 'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">{escape(x_label)}</text>')
    parts.append(f'<text x="16" y="{margin_t + plot_h / 2:.1f}" '
                 'text-anchor="middle" font-family="sans-serif" '
                 'font-size="12" transform="rotate(-90 16 '
                 f'{margin_t + plot_h / 2:.1f})">{escape(y_label)}</text>')

    # series + legend
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if xs:
            points = " ".join(f"{px(x):.2f},{py(y):.2f}"
                              for x, y in zip(xs, ys))
            parts.append(f'<polyline fill="none" stroke="{color}" '
                         f'stroke-width="1.5" points="{points}"/>')
        ly = margin_t + 8 + 16 * i
        lx = margin_l + plot_w - 150
        parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 22}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 28}" y="{ly + 4}" '
                     'font-family="sans-serif" font-size="11">'
                     f'{escape(str(label))}</text>')

    parts.append("</svg>")
    return "\n".join(parts)


def write_curves(path, series, **kwargs):
    doc = render_curves(series, **kwargs)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(doc)
    return path


def episode_series(rows, window=20):
    """(xs, ys) for plotting: global_step against the trailing-mean scaled
    episode return."""
    xs = [r["global_step"] for r in rows]
    ys = trailing_mean([r["ext_return_scaled"] for r in rows], window)
    return xs, ys
