"""CSV and SVG writers for MPJPE tables and PCJ curves."""

from __future__ import annotations

import math
from pathlib import Path

from .. import __version__
from ..geometry import atomic_write_bytes
from .metrics import TABLE_CATEGORIES, MetricReport, PcjCurve


def _num(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.10g}"


def provenance_line(cfg_hash: str | None) -> str:
    return f"# rigjoints {__version__} config={cfg_hash or 'none'}\n"


def mpjpe_csv(rows: list[tuple[str, MetricReport]], cfg_hash: str | None = None) -> str:
    """Long format: one ``method,category,value`` line per Table column."""
    out = [provenance_line(cfg_hash), "method,category,value\n"]
    for method, rep in rows:
        for cat in TABLE_CATEGORIES:
            out.append(f"{method},{cat},{_num(rep.categories[cat])}\n")
    return "".join(out)


def mpjpe_table_csv(rows: list[tuple[str, MetricReport]], cfg_hash: str | None = None) -> str:
    """Wide format mirroring the printed table: one row per method."""
    out = [provenance_line(cfg_hash), "method," + ",".join(TABLE_CATEGORIES) + "\n"]
    for method, rep in rows:
        out.append(method + "," + ",".join(_num(v) for v in rep.row()) + "\n")
    return "".join(out)


def pcj_csv(curve: PcjCurve, cfg_hash: str | None = None) -> str:
    out = [provenance_line(cfg_hash), "factor,body,fingers\n"]
    for f, b, g in zip(curve.factors, curve.body, curve.fingers):
        out.append(f"{f:.2f},{_num(float(b))},{_num(float(g))}\n")
    return "".join(out)


def pcj_svg(curve: PcjCurve, cfg_hash: str | None = None, width: int = 480, height: int = 320) -> str:
    """Line plot of both curves, factor on x, percentage correct on y."""
    left, right, top, bottom = 50, 20, 20, 40
    pw, ph = width - left - right, height - top - bottom

    def xy(f, v):
        return left + pw * f, top + ph * (1.0 - v)

    def path(vals):
        pts = [xy(float(f), float(v)) for f, v in zip(curve.factors, vals) if not math.isnan(v)]
        return " ".join(f"{'M' if i == 0 else 'L'}{x:.2f},{y:.2f}" for i, (x, y) in enumerate(pts))

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f"<!-- rigjoints {__version__} config={cfg_hash or 'none'} -->",
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in range(0, 11, 2):
        x, _ = xy(t / 10, 0)
        _, y = xy(0, t / 10)
        lines.append(f'<text x="{x:.1f}" y="{top + ph + 15}" font-size="10" text-anchor="middle">{t / 10:.1f}</text>')
        lines.append(f'<text x="{left - 5}" y="{y + 3:.1f}" font-size="10" text-anchor="end">{t * 10}%</text>')
    lines.append(f'<text x="{left + pw / 2}" y="{height - 5}" font-size="11" text-anchor="middle">threshold factor</text>')
    lines.append(f'<path d="{path(curve.body)}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>')
    lines.append(f'<path d="{path(curve.fingers)}" fill="none" stroke="#d62728" stroke-width="1.5"/>')
    lines.append(f'<text x="{left + 10}" y="{top + 15}" font-size="11" fill="#1f77b4">body</text>')
    lines.append(f'<text x="{left + 10}" y="{top + 30}" font-size="11" fill="#d62728">fingers</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
