"""Dependency-free SVG rendering of the emotion training curves.

One chart, two panels: validation/train emotion accuracy on the left,
emotion loss on the right, both against epoch. Exactly one polyline per
series (4 total) plus circle markers so single-epoch histories still show
their data point.
"""

from __future__ import annotations

import csv

from .errors import ConfigError

REQUIRED_COLUMNS = (
    "epoch",
    "train_acc_emotion", "val_acc_emotion",
    "train_loss_emotion", "val_loss_emotion",
)

_TRAIN_COLOR = "#1f77b4"
_VAL_COLOR = "#d62728"

_PANEL_W, _PANEL_H = 390, 300
_MARGIN_L, _MARGIN_B, _MARGIN_T = 52, 40, 34
_GAP = 70


def read_metrics_csv(path) -> list:
    """Parse a metrics CSV into row dicts, checking the plotted columns."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise ConfigError(f"{path}: empty metrics CSV")
        for col in REQUIRED_COLUMNS:
            if col not in reader.fieldnames:
                raise ConfigError(f"{path}: metrics CSV is missing column {col}")
        rows = list(reader)
    if not rows:
        raise ConfigError(f"{path}: metrics CSV has no data rows")
    return rows


def _series(rows, column):
    out = []
    for i, row in enumerate(rows, start=2):
        try:
            out.append(float(row[column]))
        except (TypeError, ValueError):
            raise ConfigError(f"metrics CSV line {i}: column {column} is not numeric") from None
    return out


def _ticks(lo, hi, n=5):
    if hi == lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


class _Panel:
    def __init__(self, x0, title, ylabel):
        self.x0 = x0
        self.title = title
        self.ylabel = ylabel
        self.parts = []

    def render(self, epochs, series, svg):
        x0, y0 = self.x0 + _MARGIN_L, _MARGIN_T
        w, h = _PANEL_W - _MARGIN_L - 10, _PANEL_H - _MARGIN_T - _MARGIN_B
        lo_x, hi_x = min(epochs), max(epochs)
        values = [v for _, vs in series for v in vs]
        lo_y, hi_y = min(values), max(values)
        if hi_y == lo_y:
            lo_y, hi_y = lo_y - 0.5, hi_y + 0.5
        if hi_x == lo_x:
            hi_x = lo_x + 1

        def px(e):
            return x0 + (e - lo_x) / (hi_x - lo_x) * w

        def py(v):
            return y0 + h - (v - lo_y) / (hi_y - lo_y) * h

        svg.append(f'<text x="{x0 + w / 2:.1f}" y="{y0 - 14}" text-anchor="middle" '
                   f'font-size="14" font-weight="bold">{self.title}</text>')
        # axes
        svg.append(f'<line x1="{x0}" y1="{y0 + h}" x2="{x0 + w}" y2="{y0 + h}" stroke="black"/>')
        svg.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y0 + h}" stroke="black"/>')
        for tv in _ticks(lo_y, hi_y):
            svg.append(f'<text x="{x0 - 6}" y="{py(tv) + 4:.1f}" text-anchor="end" '
                       f'font-size="10">{tv:.3g}</text>')
        for tv in sorted({lo_x, hi_x, (lo_x + hi_x) // 2}):
            svg.append(f'<text x="{px(tv):.1f}" y="{y0 + h + 16}" text-anchor="middle" '
                       f'font-size="10">{tv:g}</text>')
        svg.append(f'<text x="{x0 + w / 2:.1f}" y="{y0 + h + 32}" text-anchor="middle" '
                   f'font-size="12">epoch</text>')
        svg.append(f'<text x="{self.x0 + 14}" y="{y0 + h / 2:.1f}" text-anchor="middle" '
                   f'font-size="12" transform="rotate(-90 {self.x0 + 14} {y0 + h / 2:.1f})">'
                   f'{self.ylabel}</text>')
        for color, vs in series:
            pts = " ".join(f"{px(e):.2f},{py(v):.2f}" for e, v in zip(epochs, vs))
            svg.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            for e, v in zip(epochs, vs):
                svg.append(f'<circle cx="{px(e):.2f}" cy="{py(v):.2f}" r="2.5" fill="{color}"/>')


def training_curves_svg(rows) -> str:
    """Render metric rows (from read_metrics_csv) into an SVG document."""
    epochs = [int(float(r["epoch"])) for r in rows]
    acc = [(_TRAIN_COLOR, _series(rows, "train_acc_emotion")),
           (_VAL_COLOR, _series(rows, "val_acc_emotion"))]
    loss = [(_TRAIN_COLOR, _series(rows, "train_loss_emotion")),
            (_VAL_COLOR, _series(rows, "val_loss_emotion"))]

    width = 2 * _PANEL_W + _GAP
    height = _PANEL_H + 30
    svg = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>']
    _Panel(0, "Emotion accuracy", "accuracy").render(epochs, acc, svg)
    _Panel(_PANEL_W + _GAP, "Emotion loss", "loss").render(epochs, loss, svg)
    # legend
    ly = _PANEL_H + 10
    for i, (label, color) in enumerate((("train", _TRAIN_COLOR), ("validation", _VAL_COLOR))):
        lx = width / 2 - 90 + i * 110
        svg.append(f'<rect x="{lx}" y="{ly}" width="18" height="4" fill="{color}"/>')
        svg.append(f'<text x="{lx + 24}" y="{ly + 6}" font-size="12">{label}</text>')
    svg.append("</svg>")
    return "\n".join(svg) + "\n"
