"""Tiny deterministic SVG line/bar plots driven by CSV files.

Output contains no timestamps, random ids, or float noise: the same CSV
always renders to the same bytes. Good enough for run reports; not a
general plotting library.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

W, H = 640, 420
ML, MR, MT, MB = 64, 20, 36, 46  # margins
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

KIND_TITLES = {
    "score_field": "score x-component along the inter-mode segment",
    "norm_series": "guidance gradient norm per step",
    "loss_curve": "training loss",
    "label_hist": "label counts",
}


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    return rows[0], [r for r in rows[1:] if r]


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    for m in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= m * mag:
            step = m * mag
            break
    start = np.ceil(lo / step) * step
    vals = []
    v = start
    while v <= hi + 1e-12 * step:
        vals.append(0.0 if abs(v) < 1e-12 * step else float(v))
        v += step
    return vals


def _fmt_tick(v: float) -> str:
    return f"{v:g}"


def _sx(x, lo, hi):
    span = (hi - lo) or 1.0
    return ML + (x - lo) / span * (W - ML - MR)


def _sy(y, lo, hi):
    span = (hi - lo) or 1.0
    return H - MB - (y - lo) / span * (H - MT - MB)


def _frame(parts: list[str], title: str) -> None:
    parts.append(f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>')
    parts.append(
        f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
        f'fill="none" stroke="#333" stroke-width="1"/>')
    parts.append(f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="14">{title}</text>')


def _axes(parts, xlo, xhi, ylo, yhi, xlabel: str):
    for v in _ticks(xlo, xhi):
        px = _sx(v, xlo, xhi)
        parts.append(f'<line x1="{px:.2f}" y1="{H - MB}" x2="{px:.2f}" '
                     f'y2="{H - MB + 5}" stroke="#333"/>')
        parts.append(f'<text x="{px:.2f}" y="{H - MB + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{_fmt_tick(v)}</text>')
    for v in _ticks(ylo, yhi):
        py = _sy(v, ylo, yhi)
        parts.append(f'<line x1="{ML - 5}" y1="{py:.2f}" x2="{ML}" y2="{py:.2f}" '
                     f'stroke="#333"/>')
        parts.append(f'<text x="{ML - 8}" y="{py + 4:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{_fmt_tick(v)}</text>')
    parts.append(f'<text x="{(ML + W - MR) / 2:.1f}" y="{H - 10}" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">{xlabel}</text>')


def _legend(parts, names: list[str]):
    x0, y0 = W - MR - 150, MT + 12
    for i, name in enumerate(names):
        y = y0 + 16 * i
        parts.append(f'<line x1="{x0}" y1="{y - 4}" x2="{x0 + 22}" y2="{y - 4}" '
                     f'stroke="{COLORS[i % len(COLORS)]}" stroke-width="2"/>')
        parts.append(f'<text x="{x0 + 28}" y="{y}" font-family="sans-serif" '
                     f'font-size="12">{name}</text>')


def _no_data(parts):
    parts.append(f'<text x="{W / 2:.1f}" y="{H / 2:.1f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="16" fill="#888">no data</text>')


def _lines_svg(header, rows, title, log_x=False) -> str:
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
             f'viewBox="0 0 {W} {H}">']
    _frame(parts, title)
    if not rows or len(header) < 2:
        _no_data(parts)
        parts.append("</svg>")
        return "\n".join(parts) + "\n"
    data = np.array([[float(v) for v in r] for r in rows])
    xs = data[:, 0]
    if log_x:
        xs = np.log10(np.maximum(xs, 1.0))
    ys = data[:, 1:]
    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = float(ys.min()), float(ys.max())
    if ylo == yhi:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    _axes(parts, xlo, xhi, ylo, yhi, header[0] + (" (log10)" if log_x else ""))
    for j in range(ys.shape[1]):
        pts = " ".join(f"{_sx(x, xlo, xhi):.2f},{_sy(y, ylo, yhi):.2f}"
                       for x, y in zip(xs, ys[:, j]))
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{COLORS[j % len(COLORS)]}" stroke-width="1.5"/>')
    _legend(parts, list(header[1:]))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _bars_svg(header, rows, title) -> str:
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
             f'viewBox="0 0 {W} {H}">']
    _frame(parts, title)
    if not rows or len(header) < 2:
        _no_data(parts)
        parts.append("</svg>")
        return "\n".join(parts) + "\n"
    labels = [r[0] for r in rows]
    counts = [float(r[1]) for r in rows]
    yhi = max(counts) * 1.05 or 1.0
    _axes(parts, 0, len(rows), 0.0, yhi, header[0])
    span = W - ML - MR
    bw = span / len(rows)
    for i, (lab, c) in enumerate(zip(labels, counts)):
        x = ML + i * bw + 0.1 * bw
        y = _sy(c, 0.0, yhi)
        parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{0.8 * bw:.2f}" '
                     f'height="{H - MB - y:.2f}" fill="{COLORS[0]}"/>')
        parts.append(f'<text x="{ML + (i + 0.5) * bw:.2f}" y="{H - MB + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{lab}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render(kind: str, header: list[str], rows: list[list[str]]) -> str:
    if kind not in KIND_TITLES:
        raise ValueError(f"unknown plot kind {kind!r}; have {sorted(KIND_TITLES)}")
    title = KIND_TITLES[kind]
    if kind == "label_hist":
        return _bars_svg(header, rows, title)
    return _lines_svg(header, rows, title, log_x=(kind == "loss_curve"))


def plot_csv(kind: str, csv_path, svg_path) -> Path:
    header, rows = _read_csv(csv_path)
    svg = render(kind, header, rows)
    out = Path(svg_path)
    out.write_text(svg)
    return out


__all__ = ["render", "plot_csv", "KIND_TITLES"]
