"""Turn runner CSVs into per-series gnuplot-ready data files and a minimal
static SVG rendering (polyline chart for curves, grayscale heatmap for
occurrence matrices). No interactivity, no text beyond axis labels.
"""

from __future__ import annotations

import csv
from pathlib import Path


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows or len(rows) < 2:
        raise ValueError(f"{path}: empty CSV (no data rows)")
    return rows[0], rows[1:]


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _svg_header(width: int, height: int) -> list[str]:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>']


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#17becf", "#7f7f7f")


def _polyline_svg(series: dict[str, list[tuple[float, float]]],
                  path: Path, width: int = 640, height: int = 420) -> None:
    pad = 50
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = _svg_header(width, height)
    parts.append(f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" '
                 f'height="{height - 2 * pad}" fill="none" stroke="black"/>')
    for i, (name, pts) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * (i + 1)}" '
                     f'font-size="10" fill="{color}">{name}</text>')
    parts.append(f'<text x="{pad}" y="{height - pad + 24}" font-size="10">'
                 f'{x0:.4g} .. {x1:.4g}</text>')
    parts.append(f'<text x="4" y="{pad}" font-size="10">{y1:.4g}</text>')
    parts.append(f'<text x="4" y="{height - pad}" font-size="10">{y0:.4g}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts))


def _heatmap_svg(rows: list[list[float]], labels: list[str], path: Path,
                 cell: int = 2, label_pad: int = 90) -> None:
    n_rows = len(rows)
    n_cols = len(rows[0]) if rows else 0
    width = label_pad + n_cols * cell + 10
    height = n_rows * max(cell, 12) + 10
    rh = max(cell, 12)
    parts = _svg_header(width, height)
    for i, row in enumerate(rows):
        parts.append(f'<text x="2" y="{5 + i * rh + rh // 2}" '
                     f'font-size="9">{labels[i]}</text>')
        for j, v in enumerate(row):
            shade = int(round(255 * (1.0 - v)))
            parts.append(f'<rect x="{label_pad + j * cell}" y="{5 + i * rh}" '
                         f'width="{cell}" height="{rh}" '
                         f'fill="rgb({shade},{shade},{255 if v else shade})"/>')
    parts.append("</svg>")
    path.write_text("\n".join(parts))


def emit_plot_data(csv_path: str | Path, out_dir: str | Path | None = None
                   ) -> list[Path]:
    """Emit .dat series files plus an .svg rendering for a runner CSV.

    Occurrence matrices (header starting with "config") become heatmaps;
    any CSV with numeric columns becomes one series per numeric column
    against the first numeric column. Unknown schemas raise.
    """
    csv_path = Path(csv_path)
    out_dir = csv_path.parent if out_dir is None else Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header, rows = _read_csv(csv_path)
    stem = csv_path.stem
    written: list[Path] = []

    if header and header[0] == "config":
        labels = [r[0] for r in rows]
        cells = [[float(v) for v in r[1:]] for r in rows]
        if not cells or not cells[0]:
            raise ValueError(f"{csv_path}: occurrence matrix has no columns")
        dat = out_dir / f"{stem}.dat"
        with open(dat, "w") as fh:
            for label, row in zip(labels, cells):
                fh.write(label + " " + " ".join(str(int(v)) for v in row) + "\n")
        svg = out_dir / f"{stem}.svg"
        _heatmap_svg(cells, labels, svg)
        return [dat, svg]

    numeric_cols = [j for j in range(len(header))
                    if all(_is_float(r[j]) for r in rows if j < len(r) and r[j] != "")]
    if not numeric_cols:
        raise ValueError(f"{csv_path}: unknown CSV schema (no numeric columns)")
    xcol = numeric_cols[0]
    ycols = numeric_cols[1:]
    if not ycols:
        raise ValueError(f"{csv_path}: unknown CSV schema (only one numeric column)")

    # Group rows by the non-numeric columns so each parameter combination
    # becomes its own series.
    key_cols = [j for j in range(len(header)) if j not in numeric_cols]
    series: dict[str, list[tuple[float, float]]] = {}
    for r in rows:
        if any(j < len(r) and r[j] == "" for j in (xcol, ycols[0])):
            continue
        tag = ",".join(r[j] for j in key_cols)
        for j in ycols:
            name = header[j] if not tag else f"{tag}:{header[j]}"
            series.setdefault(name, []).append((float(r[xcol]), float(r[j])))
    dat = out_dir / f"{stem}.dat"
    with open(dat, "w") as fh:
        for name, pts in series.items():
            fh.write(f"# {name}\n")
            for x, y in pts:
                fh.write(f"{x} {y}\n")
            fh.write("\n\n")
    svg = out_dir / f"{stem}.svg"
    _polyline_svg(series, svg)
    return [dat, svg]
