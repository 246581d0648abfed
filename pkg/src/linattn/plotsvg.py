"""Turn benchmark CSVs into standalone SVG line charts, one file per metric.

No plotting dependency: the files are small hand-assembled SVG documents
with log-scaled axes, one polyline per (kernel, pass) series.
"""

from __future__ import annotations

import math
from pathlib import Path

from .bench import read_csv
from .matrixops import DomainError

METRICS = ("median_ns", "per_token_ns", "aux_bytes")

_PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
    "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
)

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 78, 170, 28, 52


def _fmt_si(v: float) -> str:
    for cut, suffix in ((1e9, "G"), (1e6, "M"), (1e3, "k")):
        if v >= cut:
            return f"{v / cut:g}{suffix}"
    return f"{v:g}"


def _log_ticks(lo: float, hi: float) -> list[float]:
    ticks = []
    e = math.floor(math.log10(lo))
    while 10.0 ** e <= hi * 1.0001:
        if 10.0 ** e >= lo * 0.9999:
            ticks.append(10.0 ** e)
        e += 1
    if not ticks:
        ticks = [lo, hi]
    return ticks


def _series(rows: list[dict], metric: str) -> dict[str, list[tuple[float, float]]]:
    by_key: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        try:
            n = float(row["n"])
            y = float(row[metric])
        except (TypeError, ValueError) as exc:
            raise DomainError(f"non-numeric value in column '{metric}' or 'n': {row}") from exc
        key = f"{row['kernel']}/{row['pass']}"
        by_key.setdefault(key, []).append((n, y))
    for pts in by_key.values():
        pts.sort()
    return by_key


def _render(metric: str, by_key: dict[str, list[tuple[float, float]]]) -> str:
    xs = [x for pts in by_key.values() for x, _ in pts]
    ys = [y for pts in by_key.values() for _, y in pts]
    ys = [max(y, 1e-12) for y in ys]  # log axis guard; metrics are positive in practice
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_lo == x_hi:
        x_lo, x_hi = x_lo / 2, x_hi * 2
    if y_lo == y_hi:
        y_lo, y_hi = y_lo / 2, y_hi * 2

    lx0, lx1 = math.log10(x_lo), math.log10(x_hi)
    ly0, ly1 = math.log10(y_lo), math.log10(y_hi)
    px0, px1 = _ML, _W - _MR
    py0, py1 = _H - _MB, _MT

    def sx(x: float) -> float:
        return px0 + (math.log10(x) - lx0) / (lx1 - lx0) * (px1 - px0)

    def sy(y: float) -> float:
        return py0 + (math.log10(max(y, 1e-12)) - ly0) / (ly1 - ly0) * (py1 - py0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{(px0 + px1) / 2:.1f}" y="16" text-anchor="middle" font-size="13">{metric} vs sequence length</text>',
        f'<line x1="{px0}" y1="{py0}" x2="{px1}" y2="{py0}" stroke="black"/>',
        f'<line x1="{px0}" y1="{py0}" x2="{px0}" y2="{py1}" stroke="black"/>',
    ]

    for xv in sorted(set(xs)):
        x = sx(xv)
        parts.append(f'<line x1="{x:.1f}" y1="{py0}" x2="{x:.1f}" y2="{py0 + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{py0 + 16}" text-anchor="middle">{_fmt_si(xv)}</text>')
    parts.append(f'<text x="{(px0 + px1) / 2:.1f}" y="{_H - 12}" text-anchor="middle">n (tokens)</text>')

    for yv in _log_ticks(y_lo, y_hi):
        y = sy(yv)
        parts.append(f'<line x1="{px0 - 4}" y1="{y:.1f}" x2="{px1}" y2="{y:.1f}" stroke="#dddddd"/>')
        parts.append(f'<line x1="{px0 - 4}" y1="{y:.1f}" x2="{px0}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{px0 - 8}" y="{y + 3:.1f}" text-anchor="end">{_fmt_si(yv)}</text>')
    parts.append(
        f'<text x="16" y="{(py0 + py1) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(py0 + py1) / 2:.1f})">{metric}</text>'
    )

    for i, (key, pts) in enumerate(sorted(by_key.items())):
        color = _PALETTE[i % len(_PALETTE)]
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="2.6" fill="{color}"/>')
        ly = _MT + 14 + 16 * i
        parts.append(f'<line x1="{px1 + 12}" y1="{ly - 4}" x2="{px1 + 34}" y2="{ly - 4}" stroke="{color}" stroke-width="1.6"/>')
        parts.append(f'<text x="{px1 + 40}" y="{ly}">{key}</text>')

    parts.append("</svg>")
    return "\n".join(parts)


def plot_csv(csv_path: Path, out_dir: Path) -> list[Path]:
    """Render one SVG per metric column into out_dir and return the paths.

    All validation happens before the first file is written, so a bad CSV
    leaves no partial output behind.
    """
    rows = read_csv(csv_path)
    documents = {}
    for metric in METRICS:
        documents[metric] = _render(metric, _series(rows, metric))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for metric, doc in documents.items():
        target = out_dir / f"{metric}.svg"
        target.write_text(doc)
        written.append(target)
    return written
