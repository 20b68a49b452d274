"""Report files: record CSV, plain-text summary and a static log-log SVG chart."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from .inequalities import write_records

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def summarize(title: str, lines: list[tuple[str, object]], records=()) -> str:
    out = [title, "=" * len(title)]
    out += [f"{k}: {v}" for k, v in lines]
    records = list(records)
    if records:
        viol = [r for r in records if r.status == "violation"]
        skipped = sum(r.status == "skipped" for r in records)
        out.append(f"records: {len(records)} ({len(viol)} violations, {skipped} skipped)")
        for r in viol:
            out.append(f"  violation: {r.name} level {r.level} lhs={r.lhs!r} rhs={r.rhs!r}")
    return "\n".join(out) + "\n"


def table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _ticks(lo: float, hi: float) -> list[float]:
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    return [10.0 ** e for e in range(a, b + 1)]


def loglog_svg(series: dict[str, tuple[list, list]], title: str = "", xlabel: str = "r",
               ylabel: str = "osc", width: int = 560, height: int = 400) -> str:
    """Polyline chart of positive data on logarithmic axes."""
    pts = {k: [(x, y) for x, y in zip(*v) if x > 0 and y > 0] for k, v in series.items()}
    xs = [p[0] for v in pts.values() for p in v]
    ys = [p[1] for v in pts.values() for p in v]
    if not xs:
        xs, ys = [1.0, 10.0], [1.0, 10.0]
    tx, ty = _ticks(min(xs), max(xs)), _ticks(min(ys), max(ys))
    x0, x1 = math.log10(tx[0]), math.log10(tx[-1])
    y0, y1 = math.log10(ty[0]), math.log10(ty[-1])
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    ml, mr, mt, mb = 64, 150, 36, 48
    pw, ph = width - ml - mr, height - mt - mb

    def X(x):
        return ml + (math.log10(x) - x0) / (x1 - x0) * pw

    def Y(y):
        return mt + ph - (math.log10(y) - y0) / (y1 - y0) * ph

    el = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
          f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
          f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
          f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in tx:
        el.append(f'<line x1="{X(t):.2f}" y1="{mt}" x2="{X(t):.2f}" y2="{mt + ph}" stroke="#ddd"/>')
        el.append(f'<text x="{X(t):.2f}" y="{mt + ph + 16}" text-anchor="middle">{t:g}</text>')
    for t in ty:
        el.append(f'<line x1="{ml}" y1="{Y(t):.2f}" x2="{ml + pw}" y2="{Y(t):.2f}" stroke="#ddd"/>')
        el.append(f'<text x="{ml - 6}" y="{Y(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    el.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    el.append(f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" '
              f'transform="rotate(-90 16 {mt + ph / 2})">{escape(ylabel)}</text>')
    if title:
        el.append(f'<text x="{ml + pw / 2}" y="22" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for i, (name, p) in enumerate(pts.items()):
        color = PALETTE[i % len(PALETTE)]
        if p:
            path = " ".join(f"{X(x):.2f},{Y(y):.2f}" for x, y in sorted(p))
            el.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
            el += [f'<circle cx="{X(x):.2f}" cy="{Y(y):.2f}" r="2.5" fill="{color}"/>' for x, y in p]
        ly = mt + 14 + 16 * i
        el.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 28}" y2="{ly - 4}" '
                  f'stroke="{color}" stroke-width="2"/>')
        el.append(f'<text x="{ml + pw + 32}" y="{ly}">{escape(name)}</text>')
    el.append("</svg>")
    return "\n".join(el) + "\n"


def write_report(out_dir, stem: str, records, summary: str, svg: str | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{stem}.csv", "summary": out / f"{stem}_summary.txt"}
    write_records(records, paths["csv"])
    paths["summary"].write_text(summary, encoding="utf-8")
    if svg is not None:
        paths["svg"] = out / f"{stem}.svg"
        paths["svg"].write_text(svg, encoding="utf-8")
    return paths
