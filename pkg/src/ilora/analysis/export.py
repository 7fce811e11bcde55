"""CSV and self-contained SVG renderings of heatmaps, expert weights and curves."""
from __future__ import annotations

import csv
import os
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .gradients import Heatmap

WARM = (178, 24, 43)
COLD = (33, 102, 172)
EXPERT_COLORS = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948",
                 "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac")


def _open(path: str | os.PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


def diverging_color(v: float) -> str:
    """-1 maps to cold blue, 0 to white, +1 to warm red."""
    if np.isnan(v):
        return "#cccccc"
    v = float(np.clip(v, -1.0, 1.0))
    end = WARM if v >= 0 else COLD
    t = abs(v)
    rgb = [round(255 + (c - 255) * t) for c in end]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _svg(width: float, height: float, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
            f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, *body, "</svg>", ""])


def export_heatmap(h: Heatmap, path_csv, path_svg, cell: int = 44) -> None:
    """Write the matrix (labels in the heatmap's current order) as CSV and an SVG grid."""
    with _open(path_csv) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + h.labels)
        for label, row in zip(h.labels, h.matrix):
            w.writerow([label] + [format(float(v), ".17g") for v in row])
    n = len(h.labels)
    margin = 40
    body = []
    for i in range(n):
        y = margin + i * cell
        body.append(f'<text x="{margin - 4}" y="{y + cell / 2 + 4:.1f}" text-anchor="end">'
                    f'{escape(h.labels[i])}</text>')
        body.append(f'<text x="{margin + i * cell + cell / 2:.1f}" y="{margin - 6}" '
                    f'text-anchor="middle">{escape(h.labels[i])}</text>')
        for j in range(n):
            v = float(h.matrix[i, j])
            x = margin + j * cell
            body.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                        f'fill="{diverging_color(v)}" data-value="{v:.6f}"/>')
            text = "nan" if np.isnan(v) else f"{v:.2f}"
            ink = "#ffffff" if abs(v) > 0.6 else "#000000"
            body.append(f'<text x="{x + cell / 2:.1f}" y="{y + cell / 2 + 4:.1f}" '
                        f'text-anchor="middle" fill="{ink}">{text}</text>')
    size = margin + n * cell + 10
    with _open(path_svg) as fh:
        fh.write(_svg(size, size, body))


def read_heatmap_csv(path) -> Heatmap:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    labels = rows[0][1:]
    mat = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return Heatmap(mat, labels)


def export_attention(rows: list[tuple[str, np.ndarray]], path_csv, path_svg,
                     bar_width: float = 400.0, bar_height: float = 22.0) -> list[list[float]]:
    """One stacked horizontal bar per sequence; returns the segment widths drawn."""
    if not rows:
        raise ValueError("no attention rows to export")
    K = len(np.asarray(rows[0][1]).reshape(-1))
    for label, w in rows:
        if np.asarray(w).reshape(-1).size != K:
            raise ValueError(f"row {label!r} has {np.asarray(w).size} experts, expected {K}")
    with _open(path_csv) as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["sequence"] + [f"expert_{k + 1}" for k in range(K)])
        for label, w in rows:
            wr.writerow([label] + [format(float(v), ".17g") for v in np.asarray(w).reshape(-1)])
    left, top = 90, 30
    body, widths = [], []
    for k in range(K):
        body.append(f'<rect x="{left + k * 80}" y="6" width="10" height="10" '
                    f'fill="{EXPERT_COLORS[k % len(EXPERT_COLORS)]}"/>')
        body.append(f'<text x="{left + k * 80 + 14}" y="15">Expert {k + 1}</text>')
    for r, (label, w) in enumerate(rows):
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        y = top + r * (bar_height + 6)
        body.append(f'<text x="{left - 6}" y="{y + bar_height / 2 + 4:.1f}" text-anchor="end">'
                    f'{escape(label)}</text>')
        x = float(left)
        seg = []
        for k, v in enumerate(w / w.sum()):
            width = v * bar_width
            seg.append(width)
            body.append(f'<rect x="{x:.3f}" y="{y:.1f}" width="{width:.3f}" height="{bar_height}" '
                        f'fill="{EXPERT_COLORS[k % len(EXPERT_COLORS)]}"/>')
            if width > 28:
                body.append(f'<text x="{x + width / 2:.1f}" y="{y + bar_height / 2 + 4:.1f}" '
                            f'text-anchor="middle" fill="#ffffff">{100 * v:.1f}%</text>')
            x += width
        widths.append(seg)
    with _open(path_svg) as fh:
        fh.write(_svg(left + bar_width + 20, top + len(rows) * (bar_height + 6) + 10, body))
    return widths


def export_curves(curves: dict[str, list[float]], path_csv, path_svg,
                  width: float = 520.0, height: float = 260.0) -> None:
    """Per-step series side by side in a CSV plus a polyline chart."""
    names = list(curves)
    n = max(len(c) for c in curves.values())
    with _open(path_csv) as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step"] + names)
        for i in range(n):
            wr.writerow([i + 1] + [format(curves[k][i], ".17g") if i < len(curves[k]) else ""
                                   for k in names])
    vals = np.concatenate([np.asarray(c, dtype=np.float64) for c in curves.values()])
    lo, hi = float(vals.min()), float(vals.max())
    hi = hi if hi > lo else lo + 1.0
    pad = 40
    body = [f'<rect x="{pad}" y="10" width="{width - pad - 10}" height="{height - pad - 10}" '
            f'fill="none" stroke="#888888"/>',
            f'<text x="{pad - 4}" y="16" text-anchor="end">{hi:.3g}</text>',
            f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end">{lo:.3g}</text>']
    for k, name in enumerate(names):
        c = np.asarray(curves[name], dtype=np.float64)
        xs = pad + (width - pad - 10) * np.arange(len(c)) / max(1, n - 1)
        ys = 10 + (height - pad - 10) * (hi - c) / (hi - lo)
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
        color = EXPERT_COLORS[k % len(EXPERT_COLORS)]
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        body.append(f'<text x="{pad + 8 + 90 * k}" y="{height - 12}" fill="{color}">{escape(name)}</text>')
    with _open(path_svg) as fh:
        fh.write(_svg(width, height, body))
