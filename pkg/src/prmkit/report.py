"""Render evaluation outputs: accuracy-vs-N curves and improvement-over-MV
heatmaps as CSV, JSON, and self-contained SVG.

SVG is emitted by hand with fixed geometry and fixed-precision numbers, so
equal inputs always produce identical bytes and golden-file tests stay
meaningful. No plotting library is involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .corpus import DOMAIN_ORDER
from .errors import EmptyInput, MissingN, MissingScope
from .rerank import EvalCurve

SCOPE_ORDER = ("all", "math_adjacent", "non_math_adjacent") + DOMAIN_ORDER

_PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)


@dataclass(frozen=True)
class ImprovementCell:
    row: str  # model/configuration tag
    column: str  # scope
    delta: float  # accuracy difference vs. MV, percentage points
    at_n: int


@dataclass(frozen=True)
class ImprovementTable:
    rows: tuple[str, ...]
    columns: tuple[str, ...]
    cells: tuple[tuple[ImprovementCell, ...], ...]  # [row][column]
    at_n: int
    normalized: bool


def _scope_sort_key(scope: str):
    if scope in SCOPE_ORDER:
        return (0, SCOPE_ORDER.index(scope))
    return (1, scope)


def improvement_table(
    curves: Mapping[str, Sequence[EvalCurve]],
    baseline: Sequence[EvalCurve],
    at_n: int,
    normalize: bool = False,
) -> ImprovementTable:
    """Accuracy deltas against the majority-voting baseline at one N.

    ``curves`` maps a configuration tag to its per-scope curves; the
    baseline must cover every scope those configurations report. Deltas
    are percentage points; ``normalize`` additionally rescales each column
    by its largest absolute delta (for display; raw deltas stay the
    default).
    """
    base_acc: dict[str, float] = {}
    for curve in baseline:
        point = curve.point_at(at_n)
        if point is None:
            raise MissingN(f"baseline curve for scope {curve.scope!r} lacks N={at_n}")
        base_acc[curve.scope] = point.acc

    rows = tuple(sorted(curves))
    columns_present: set[str] = set()
    deltas: dict[tuple[str, str], float] = {}
    for tag in rows:
        for curve in curves[tag]:
            if curve.scope not in base_acc:
                raise MissingScope(
                    f"no MV baseline for scope {curve.scope!r} (config {tag!r})"
                )
            point = curve.point_at(at_n)
            if point is None:
                raise MissingN(f"curve {tag!r}/{curve.scope!r} lacks N={at_n}")
            deltas[(tag, curve.scope)] = (point.acc - base_acc[curve.scope]) * 100.0
            columns_present.add(curve.scope)
    columns = tuple(sorted(columns_present, key=_scope_sort_key))
    for tag in rows:
        for scope in columns:
            if (tag, scope) not in deltas:
                raise MissingScope(f"config {tag!r} lacks a curve for scope {scope!r}")

    if normalize:
        for scope in columns:
            peak = max(abs(deltas[(tag, scope)]) for tag in rows)
            if peak > 0:
                for tag in rows:
                    deltas[(tag, scope)] /= peak

    cells = tuple(
        tuple(
            ImprovementCell(row=tag, column=scope, delta=deltas[(tag, scope)], at_n=at_n)
            for scope in columns
        )
        for tag in rows
    )
    return ImprovementTable(
        rows=rows, columns=columns, cells=cells, at_n=at_n, normalized=normalize
    )


def _curve_label(curve: EvalCurve) -> str:
    return f"{curve.method.value}-{curve.aggregation.value}-{curve.scope}"


def _curve_csv(curve: EvalCurve) -> str:
    lines = ["n,acc,stderr"]
    for p in curve.points:
        lines.append(f"{p.n},{p.acc!r},{p.stderr!r}")
    return "\n".join(lines) + "\n"


def _table_csv(table: ImprovementTable) -> str:
    lines = ["tag," + ",".join(table.columns)]
    for row_cells in table.cells:
        lines.append(
            row_cells[0].row + "," + ",".join(repr(c.delta) for c in row_cells)
        )
    return "\n".join(lines) + "\n"


def _table_json(table: ImprovementTable) -> str:
    return json.dumps(
        {
            "at_n": table.at_n,
            "normalized": table.normalized,
            "rows": list(table.rows),
            "columns": list(table.columns),
            "deltas": [[c.delta for c in row] for row in table.cells],
        },
        sort_keys=True,
    )


def _svg_header(width: int, height: int) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" '
        f'width="{width}" height="{height}" font-family="sans-serif">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
    )


def _log2(n: int) -> float:
    from math import log2

    return log2(n)


def curves_svg(curves: Sequence[EvalCurve], labels: Optional[Sequence[str]] = None) -> str:
    """Line chart of accuracy vs. N with a logarithmic N axis."""
    if not curves:
        raise EmptyInput("no curves to draw")
    if labels is None:
        labels = [_curve_label(c) for c in curves]
    width, height = 640, 400
    left, right, top, bottom = 64.0, 16.0, 16.0, 48.0
    plot_w = width - left - right
    plot_h = height - top - bottom

    all_ns = sorted({p.n for c in curves for p in c.points})
    lo, hi = _log2(all_ns[0]), _log2(all_ns[-1])
    span = hi - lo if hi > lo else 1.0

    def x(n: int) -> float:
        return left + (_log2(n) - lo) / span * plot_w

    def y(acc: float) -> float:
        return top + (1.0 - acc) * plot_h

    parts = [_svg_header(width, height)]
    # axes and gridlines
    parts.append(
        f'<line x1="{left:.2f}" y1="{top:.2f}" x2="{left:.2f}" '
        f'y2="{top + plot_h:.2f}" stroke="black"/>\n'
        f'<line x1="{left:.2f}" y1="{top + plot_h:.2f}" x2="{left + plot_w:.2f}" '
        f'y2="{top + plot_h:.2f}" stroke="black"/>\n'
    )
    for i in range(6):
        acc = i / 5.0
        yy = y(acc)
        parts.append(
            f'<line x1="{left:.2f}" y1="{yy:.2f}" x2="{left + plot_w:.2f}" y2="{yy:.2f}" '
            f'stroke="#dddddd"/>\n'
            f'<text x="{left - 8:.2f}" y="{yy + 4:.2f}" font-size="12" '
            f'text-anchor="end">{acc:.1f}</text>\n'
        )
    for n in all_ns:
        xx = x(n)
        parts.append(
            f'<text x="{xx:.2f}" y="{top + plot_h + 18:.2f}" font-size="12" '
            f'text-anchor="middle">{n}</text>\n'
        )
    parts.append(
        f'<text x="{left + plot_w / 2:.2f}" y="{height - 10:.2f}" font-size="13" '
        f'text-anchor="middle">number of sampled CoTs</text>\n'
        f'<text x="16" y="{top + plot_h / 2:.2f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + plot_h / 2:.2f})">accuracy</text>\n'
    )
    for ci, curve in enumerate(curves):
        color = _PALETTE[ci % len(_PALETTE)]
        coords = " ".join(f"{x(p.n):.2f},{y(p.acc):.2f}" for p in curve.points)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>\n'
        )
        for p in curve.points:
            parts.append(
                f'<circle cx="{x(p.n):.2f}" cy="{y(p.acc):.2f}" r="3" fill="{color}"/>\n'
            )
            if p.stderr > 0:
                parts.append(
                    f'<line x1="{x(p.n):.2f}" y1="{y(p.acc + p.stderr):.2f}" '
                    f'x2="{x(p.n):.2f}" y2="{y(p.acc - p.stderr):.2f}" '
                    f'stroke="{color}" stroke-width="1"/>\n'
                )
        ly = top + 16 + 16 * ci
        parts.append(
            f'<line x1="{left + plot_w - 150:.2f}" y1="{ly:.2f}" '
            f'x2="{left + plot_w - 126:.2f}" y2="{ly:.2f}" stroke="{color}" stroke-width="2"/>\n'
            f'<text x="{left + plot_w - 120:.2f}" y="{ly + 4:.2f}" '
            f'font-size="12">{labels[ci]}</text>\n'
        )
    parts.append("</svg>\n")
    return "".join(parts)


def _heat_color(value: float, peak: float) -> str:
    # Diverging map: blue (negative) -> white -> red (positive).
    if peak <= 0:
        return "#ffffff"
    t = max(-1.0, min(1.0, value / peak))
    if t >= 0:
        r, g, b = 255, round(255 * (1 - t)), round(255 * (1 - t))
    else:
        r, g, b = round(255 * (1 + t)), round(255 * (1 + t)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def table_svg(table: ImprovementTable) -> str:
    """Color-mapped improvement grid with numeric cell labels."""
    if not table.rows or not table.columns:
        raise EmptyInput("empty improvement table")
    cell_w, cell_h = 86, 34
    left, top = 150, 70
    width = left + cell_w * len(table.columns) + 16
    height = top + cell_h * len(table.rows) + 16
    peak = max(abs(c.delta) for row in table.cells for c in row)

    unit = "normalized" if table.normalized else "percentage points"
    parts = [_svg_header(width, height)]
    parts.append(
        f'<text x="{left:.2f}" y="24" font-size="14">Improvement over majority voting '
        f"at N={table.at_n} ({unit})</text>\n"
    )
    for j, column in enumerate(table.columns):
        cx = left + cell_w * j + cell_w / 2
        parts.append(
            f'<text x="{cx:.2f}" y="{top - 10:.2f}" font-size="11" '
            f'text-anchor="middle">{column}</text>\n'
        )
    for i, row_cells in enumerate(table.cells):
        cy = top + cell_h * i
        parts.append(
            f'<text x="{left - 8:.2f}" y="{cy + cell_h / 2 + 4:.2f}" font-size="12" '
            f'text-anchor="end">{table.rows[i]}</text>\n'
        )
        for j, cell in enumerate(row_cells):
            cx = left + cell_w * j
            fill = _heat_color(cell.delta, peak)
            parts.append(
                f'<rect x="{cx:.2f}" y="{cy:.2f}" width="{cell_w}" height="{cell_h}" '
                f'fill="{fill}" stroke="#999999"/>\n'
                f'<text x="{cx + cell_w / 2:.2f}" y="{cy + cell_h / 2 + 4:.2f}" '
                f'font-size="12" text-anchor="middle">{cell.delta:.2f}</text>\n'
            )
    parts.append("</svg>\n")
    return "".join(parts)


def render(
    curves: Optional[Sequence[EvalCurve]] = None,
    table: Optional[ImprovementTable] = None,
    formats: Sequence[str] = ("csv", "json", "svg"),
    outdir=".",
    curve_labels: Optional[Sequence[str]] = None,
) -> list[Path]:
    """Write the requested formats into outdir; returns the files written."""
    if not curves and table is None:
        raise EmptyInput("nothing to render")
    unknown = set(formats) - {"csv", "json", "svg"}
    if unknown:
        raise ValueError(f"unknown output formats: {sorted(unknown)}")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name: str, text: str):
        path = outdir / name
        path.write_text(text, encoding="utf-8")
        written.append(path)

    for curve in curves or []:
        stem = f"curve_{_curve_label(curve)}"
        if "csv" in formats:
            emit(f"{stem}.csv", _curve_csv(curve))
        if "json" in formats:
            emit(f"{stem}.json", curve.to_json() + "\n")
    if curves and "svg" in formats:
        emit("curves.svg", curves_svg(curves, curve_labels))
    if table is not None:
        if "csv" in formats:
            emit("improvement.csv", _table_csv(table))
        if "json" in formats:
            emit("improvement.json", _table_json(table) + "\n")
        if "svg" in formats:
            emit("improvement.svg", table_svg(table))
    return written
