"""Standalone SVG scatter and convergence plots, written by hand."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 400
MARGIN = 50
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b"]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Axes:
    def __init__(self, x0, y0, w, h, xlim, ylim):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        lo, hi = xlim
        self.xlim = (lo, hi if hi > lo else lo + 1.0)
        lo, hi = ylim
        self.ylim = (lo, hi if hi > lo else lo + 1.0)

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (np.asarray(x, float) - lo) / (hi - lo) * self.w

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 + self.h - (np.asarray(y, float) - lo) / (hi - lo) * self.h

    def frame(self, title: str, xlabel: str, ylabel: str) -> list[str]:
        out = [
            f'<rect x="{_fmt(self.x0)}" y="{_fmt(self.y0)}" width="{_fmt(self.w)}" '
            f'height="{_fmt(self.h)}" fill="none" stroke="#333"/>',
            f'<text x="{_fmt(self.x0 + self.w / 2)}" y="{_fmt(self.y0 - 10)}" '
            f'text-anchor="middle" font-size="13">{escape(title)}</text>',
            f'<text x="{_fmt(self.x0 + self.w / 2)}" y="{_fmt(self.y0 + self.h + 35)}" '
            f'text-anchor="middle" font-size="11">{escape(xlabel)}</text>',
            f'<text x="{_fmt(self.x0 - 38)}" y="{_fmt(self.y0 + self.h / 2)}" text-anchor="middle" '
            f'font-size="11" transform="rotate(-90 {_fmt(self.x0 - 38)} {_fmt(self.y0 + self.h / 2)})">'
            f'{escape(ylabel)}</text>',
        ]
        for t in np.linspace(*self.xlim, 5):
            x = self.px(t)
            out.append(f'<line x1="{_fmt(x)}" y1="{_fmt(self.y0 + self.h)}" x2="{_fmt(x)}" '
                       f'y2="{_fmt(self.y0 + self.h + 4)}" stroke="#333"/>')
            out.append(f'<text x="{_fmt(x)}" y="{_fmt(self.y0 + self.h + 16)}" text-anchor="middle" '
                       f'font-size="9">{t:.3g}</text>')
        for t in np.linspace(*self.ylim, 5):
            y = self.py(t)
            out.append(f'<line x1="{_fmt(self.x0 - 4)}" y1="{_fmt(y)}" x2="{_fmt(self.x0)}" '
                       f'y2="{_fmt(y)}" stroke="#333"/>')
            out.append(f'<text x="{_fmt(self.x0 - 6)}" y="{_fmt(y + 3)}" text-anchor="end" '
                       f'font-size="9">{t:.3g}</text>')
        return out


def _document(width, height, body: list[str]) -> str:
    return "\n".join([
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        *body,
        "</svg>",
        "",
    ])


def scatter_svg(samples: np.ndarray, centers: np.ndarray, title: str = "generated samples",
                max_points: int = 2000) -> str:
    """Generated samples (small dots) over mixture centers (red crosses)."""
    samples = np.asarray(samples, float)[:max_points]
    centers = np.asarray(centers, float)
    pad = 0.5
    lim = (float(centers.min()) - pad, float(centers.max()) + pad)
    ax = _Axes(MARGIN, MARGIN, WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN, lim, lim)
    body = ax.frame(title, "x", "y")
    body.append('<g class="samples" fill="#1f77b4" fill-opacity="0.4">')
    inside = samples[(samples >= lim[0]).all(axis=1) & (samples <= lim[1]).all(axis=1)]
    for x, y in zip(ax.px(inside[:, 0]), ax.py(inside[:, 1])):
        body.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="1.5"/>')
    body.append("</g>")
    body.append('<g class="centers" stroke="#d62728" stroke-width="1.5">')
    for x, y in zip(ax.px(centers[:, 0]), ax.py(centers[:, 1])):
        body.append(f'<path class="center" d="M{_fmt(x - 4)} {_fmt(y)}H{_fmt(x + 4)}'
                    f'M{_fmt(x)} {_fmt(y - 4)}V{_fmt(y + 4)}"/>')
    body.append("</g>")
    return _document(WIDTH, HEIGHT, body)


CURVES = (("modes_covered", "modes"), ("kl", "KL divergence"),
          ("high_quality_fraction", "high-quality fraction"),
          ("hp_unique", "unique HP designs"), ("lp_unique", "unique LP designs"),
          ("accuracy", "conditional accuracy"))


def convergence_svg(histories: dict[str, list[dict]], title: str = "convergence") -> str:
    """One panel per metric present in the records, one line per history."""
    present = [(k, label) for k, label in CURVES
               if any(k in r for recs in histories.values() for r in recs)]
    if not present:
        ax = _Axes(MARGIN, MARGIN, WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN, (0, 1), (0, 1))
        body = ax.frame(title, "epoch", "value")
        body.append(f'<text class="no-data" x="{WIDTH / 2}" y="{HEIGHT / 2}" '
                    'text-anchor="middle" font-size="14" fill="#888">no data</text>')
        return _document(WIDTH, HEIGHT, body)
    panel_w, panel_h = 360, 240
    width = panel_w * len(present)
    height = panel_h + 40 + 18 * len(histories)
    body = []
    for p, (key, label) in enumerate(present):
        xs = [r["epoch"] for recs in histories.values() for r in recs if key in r]
        ys = [r[key] for recs in histories.values() for r in recs if key in r]
        ax = _Axes(p * panel_w + 60, 40, panel_w - 90, panel_h - 80,
                   (min(xs), max(xs)), (min(0.0, min(ys)), max(ys)))
        body += ax.frame(label, "epoch", label)
        for k, (name, recs) in enumerate(histories.items()):
            pts = [(r["epoch"], r[key]) for r in recs if key in r]
            if not pts:
                continue
            color = PALETTE[k % len(PALETTE)]
            coords = " ".join(f"{_fmt(ax.px(x))},{_fmt(ax.py(y))}" for x, y in pts)
            body.append(f'<polyline class="curve" data-series="{escape(name)}" points="{coords}" '
                        f'fill="none" stroke="{color}" stroke-width="1.5"/>')
    for k, name in enumerate(histories):
        y = panel_h + 20 + 18 * k
        color = PALETTE[k % len(PALETTE)]
        body.append(f'<rect x="60" y="{y - 9}" width="12" height="10" fill="{color}"/>')
        body.append(f'<text x="78" y="{y}" font-size="11">{escape(name)}</text>')
    return _document(width, height, body)


def emit_plots(histories: dict[str, list[dict]], samples, centers, path, prefix: str = "") -> list[Path]:
    """Write ``<prefix>convergence.svg`` and, for 2D data with known centers,
    ``<prefix>scatter.svg`` under ``path``. Returns the files written."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    written = []
    conv = path / f"{prefix}convergence.svg"
    conv.write_text(convergence_svg(histories))
    written.append(conv)
    if samples is not None and centers is not None and np.asarray(samples).ndim == 2 \
            and np.asarray(samples).shape[1] == 2:
        sc = path / f"{prefix}scatter.svg"
        sc.write_text(scatter_svg(samples, centers))
        written.append(sc)
    return written
