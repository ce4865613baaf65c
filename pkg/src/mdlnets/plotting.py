"""Train-vs-test deviation scatter plots written as plain SVG."""
from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable
from xml.sax.saxutils import escape

from .experiment import table_rows
from .tasks import TASK_NAMES

PANEL = 260
PAD = 40
MARKERS = {
    "Golden": "star",
    "mdl": "circle",
    "l1": "square",
    "l2": "triangle",
    "none": "diamond",
    "none_with_h_limit": "diamond",
}
COLORS = {
    "Golden": "#888888",
    "mdl": "#1b7837",
    "l1": "#2166ac",
    "l2": "#b2182b",
    "none": "#762a83",
    "none_with_h_limit": "#762a83",
}


def _shape(kind: str, x: float, y: float, color: str, r: float = 5.0) -> str:
    if kind == "circle":
        return f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="{color}"/>'
    if kind == "square":
        return f'<rect x="{x - r:.2f}" y="{y - r:.2f}" width="{2 * r}" height="{2 * r}" fill="{color}"/>'
    if kind == "triangle":
        pts = [(x, y - r), (x - r, y + r), (x + r, y + r)]
    elif kind == "diamond":
        pts = [(x, y - r), (x + r, y), (x, y + r), (x - r, y)]
    else:
        pts = []
        for i in range(10):
            rad = r * (1.0 if i % 2 == 0 else 0.45)
            a = math.pi / 2 + i * math.pi / 5
            pts.append((x + rad * math.cos(a), y - rad * math.sin(a)))
    return '<polygon points="{}" fill="{}"/>'.format(" ".join(f"{px:.2f},{py:.2f}" for px, py in pts), color)


def _limit(values: list[float]) -> float:
    m = max((abs(v) for v in values), default=0.0)
    return max(1.0, m * 1.15)


def scatter_svg(points: dict[str, list[tuple[str, float, float]]]) -> str:
    """SVG with one panel per task; each point is (label, delta_train, delta_test)."""
    tasks = [t for t in TASK_NAMES if t in points] + sorted(t for t in points if t not in TASK_NAMES)
    cols = min(3, len(tasks))
    rows = math.ceil(len(tasks) / cols)
    width = cols * (PANEL + PAD) + PAD
    height = rows * (PANEL + PAD) + PAD + 30
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for k, task in enumerate(tasks):
        ox = PAD + (k % cols) * (PANEL + PAD)
        oy = PAD + (k // cols) * (PANEL + PAD)
        pts = points[task]
        lim = _limit([v for _, a, b in pts for v in (a, b)])

        def sx(v):
            return ox + (v + lim) / (2 * lim) * PANEL

        def sy(v):
            return oy + PANEL - (v + lim) / (2 * lim) * PANEL

        out.append(f'<g id="panel-{escape(task)}">')
        out.append(f'<rect x="{ox}" y="{oy}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#444"/>')
        out.append(f'<line x1="{sx(0):.2f}" y1="{oy}" x2="{sx(0):.2f}" y2="{oy + PANEL}" stroke="#aaa" stroke-dasharray="4 3"/>')
        out.append(f'<line x1="{ox}" y1="{sy(0):.2f}" x2="{ox + PANEL}" y2="{sy(0):.2f}" stroke="#aaa" stroke-dasharray="4 3"/>')
        out.append(f'<text x="{ox + PANEL / 2}" y="{oy - 8}" text-anchor="middle" font-weight="bold">{escape(task)}</text>')
        out.append(f'<text x="{ox + PANEL / 2}" y="{oy + PANEL + 16}" text-anchor="middle">Δ train % (±{lim:.3g})</text>')
        out.append(
            f'<text x="{ox - 10}" y="{oy + PANEL / 2}" text-anchor="middle" '
            f'transform="rotate(-90 {ox - 10} {oy + PANEL / 2})">Δ test %</text>'
        )
        seen: dict[tuple[float, float], int] = defaultdict(int)
        for label, a, b in pts:
            x, y = sx(a), sy(b)
            out.append(_shape(MARKERS.get(label, "circle"), x, y, COLORS.get(label, "#000")))
            key = (round(x, 1), round(y, 1))
            # stack labels of coincident markers instead of overprinting them
            out.append(f'<text x="{x + 7:.2f}" y="{y - 6 + 11 * seen[key]:.2f}">{escape(label)}</text>')
            seen[key] += 1
        out.append("</g>")
    ly = height - 18
    lx = PAD
    for label in ("Golden", "mdl", "l1", "l2", "none_with_h_limit"):
        out.append(_shape(MARKERS[label], lx, ly, COLORS[label]))
        out.append(f'<text x="{lx + 9}" y="{ly + 4}">{escape(label)}</text>')
        lx += 30 + 7 * len(label)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def make_scatter(bundles: Iterable, path) -> Path:
    """Write a train/test deviation scatter of the bundles' report rows to ``path``."""
    rows = table_rows(bundles)
    if not rows:
        raise ValueError("no bundles to plot")
    points: dict[str, list[tuple[str, float, float]]] = defaultdict(list)
    for r in rows:
        label = "Golden" if r["golden"] == "1" else r["regularizer"]
        points[r["task"]].append((label, float(r["delta_train_pct"]), float(r["delta_test_pct"])))
    path = Path(path)
    path.write_text(scatter_svg(dict(points)), encoding="utf-8")
    return path
