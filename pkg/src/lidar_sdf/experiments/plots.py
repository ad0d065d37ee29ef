"""Minimal SVG charts built from the CSV files an experiment wrote.

Each chart embeds the CSV it was drawn from in a comment, so the figure can
be traced back to its numbers.
"""

from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT, MARGIN = 640, 420, 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class _Axes:
    def __init__(self, xlo, xhi, ylo, yhi):
        if xhi == xlo:
            xhi = xlo + 1.0
        if yhi == ylo:
            yhi = ylo + 1.0
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def x(self, v):
        return MARGIN + (v - self.xlo) / (self.xhi - self.xlo) * (WIDTH - 2 * MARGIN)

    def y(self, v):
        return HEIGHT - MARGIN - (v - self.ylo) / (self.yhi - self.ylo) * (HEIGHT - 2 * MARGIN)


def _frame(title, xlabel, ylabel, axes: _Axes, source: Path) -> list[str]:
    data = source.read_text().replace("--", "- -")
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">',
        f"<!-- source: {escape(source.name)}\n{data}-->",
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="15" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {HEIGHT / 2})">{escape(ylabel)}</text>',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 15}" font-size="10">{axes.xlo:.3g}</text>',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 15}" text-anchor="end" font-size="10">{axes.xhi:.3g}</text>',
        f'<text x="{MARGIN - 5}" y="{HEIGHT - MARGIN}" text-anchor="end" font-size="10">{axes.ylo:.3g}</text>',
        f'<text x="{MARGIN - 5}" y="{MARGIN + 4}" text-anchor="end" font-size="10">{axes.yhi:.3g}</text>',
    ]


def _legend(names) -> list[str]:
    out = []
    for k, name in enumerate(names):
        y = MARGIN + 14 * k
        out.append(f'<rect x="{WIDTH - MARGIN - 150}" y="{y - 8}" width="10" height="10" fill="{PALETTE[k % len(PALETTE)]}"/>')
        out.append(f'<text x="{WIDTH - MARGIN - 135}" y="{y + 1}" font-size="11">{escape(name)}</text>')
    return out


def _write(lines, path) -> None:
    Path(path).write_text("\n".join(lines + ["</svg>"]) + "\n")


def plot_depth_sweep(csv_path, svg_path) -> None:
    """Final test loss against parameter count, one line per skip setting."""
    src = Path(csv_path)
    rows = read_csv(src)
    series: dict[str, list] = {}
    for r in rows:
        label = "skip" if r["skip"] == "1" else "plain"
        series.setdefault(label, []).append((int(r["params"]), float(r["final_test_loss"])))
    xs = [p for s in series.values() for p, _ in s]
    ys = [v for s in series.values() for _, v in s]
    axes = _Axes(min(xs), max(xs), 0.0, max(ys))
    lines = _frame("Depth sweep", "parameters", "final test loss", axes, src)
    for k, (label, pts) in enumerate(sorted(series.items())):
        pts.sort()
        path = " ".join(f"{axes.x(p):.2f},{axes.y(v):.2f}" for p, v in pts)
        lines.append(f'<polyline fill="none" stroke="{PALETTE[k]}" points="{path}"/>')
    lines += _legend(sorted(series))
    _write(lines, svg_path)


def plot_confidence_scatter(csv_path, svg_path) -> None:
    """Predicted confidence against label sdf, one colour per method."""
    src = Path(csv_path)
    rows = read_csv(src)
    methods = sorted({r["method"] for r in rows})
    xs = [float(r["sdf_label"]) for r in rows]
    ys = [float(r["conf_pred"]) for r in rows]
    axes = _Axes(min(xs), max(xs), min(min(ys), 0.0), max(max(ys), 1.0))
    lines = _frame("Confidence vs label distance", "label sdf", "predicted confidence", axes, src)
    for r in rows:
        colour = PALETTE[methods.index(r["method"]) % len(PALETTE)]
        lines.append(f'<circle cx="{axes.x(float(r["sdf_label"])):.2f}" cy="{axes.y(float(r["conf_pred"])):.2f}" '
                     f'r="1.5" fill="{colour}" fill-opacity="0.5"/>')
    lines += _legend(methods)
    _write(lines, svg_path)


def plot_bars(csv_path, svg_path, label_keys, value_key, title) -> None:
    src = Path(csv_path)
    rows = read_csv(src)
    values = [float(r[value_key]) for r in rows]
    axes = _Axes(0, len(rows), 0.0, max(values) if values else 1.0)
    lines = _frame(title, "", value_key, axes, src)
    slot = (WIDTH - 2 * MARGIN) / max(len(rows), 1)
    for k, (r, v) in enumerate(zip(rows, values)):
        x0 = MARGIN + k * slot + 0.15 * slot
        top = axes.y(v)
        lines.append(f'<rect x="{x0:.2f}" y="{top:.2f}" width="{0.7 * slot:.2f}" '
                     f'height="{HEIGHT - MARGIN - top:.2f}" fill="{PALETTE[k % len(PALETTE)]}"/>')
        label = " / ".join(r[key] for key in label_keys)
        lines.append(f'<text x="{x0 + 0.35 * slot:.2f}" y="{top - 4:.2f}" text-anchor="middle" '
                     f'font-size="10">{escape(label)}</text>')
    _write(lines, svg_path)
