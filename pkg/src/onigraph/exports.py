"""CSV and SVG exports: centrality heatmaps and forecast timeseries.

SVG output is hand-rendered (no plotting dependency) so identical inputs
produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .centrality import CentralityScores
from .data import NodeIndex
from .errors import DataError, DimensionError
from .training import EvalReport

Array = np.ndarray

CELL_PX = 24
CHART_W, CHART_H, MARGIN = 640, 320, 40


def _ramp(t: float) -> str:
    """Linear grayscale-to-hot ramp: black through red and yellow to white."""
    r = min(1.0, 3.0 * t)
    g = min(1.0, max(0.0, 3.0 * t - 1.0))
    b = min(1.0, max(0.0, 3.0 * t - 2.0))
    return "#{:02x}{:02x}{:02x}".format(round(255 * r), round(255 * g), round(255 * b))


def _fmt(x: float) -> str:
    return repr(round(float(x), 6))


def export_centrality_heatmap(
    scores: CentralityScores | Array, nodes: NodeIndex, path: str | Path
) -> tuple[Path, Path]:
    """Write <path>.csv (lat,lon,centrality per grid node) and <path>.svg
    (equirectangular cell raster; land cells and the ONI node are blank).
    Returns both paths."""
    values = scores.scores if isinstance(scores, CentralityScores) else np.asarray(scores, float)
    if values.shape != (nodes.count,):
        raise DimensionError(
            f"scores length {values.shape} does not match node count {nodes.count}"
        )
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = Path(str(base) + ".csv")
    svg_path = Path(str(base) + ".svg")

    grid_nodes = nodes.grid_count
    lines = ["lat,lon,centrality"]
    for i in range(grid_nodes):
        lat, lon = nodes.latlon[i]
        lines.append(f"{_fmt(lat)},{_fmt(lon)},{values[i]!r}")
    csv_path.write_text("\n".join(lines) + "\n")

    lats = np.unique(nodes.latlon[:grid_nodes, 0])
    lons = np.unique(nodes.latlon[:grid_nodes, 1])
    lat_pos = {v: i for i, v in enumerate(lats)}
    lon_pos = {v: i for i, v in enumerate(lons)}
    lo, hi = float(values[:grid_nodes].min()), float(values[:grid_nodes].max())
    span = hi - lo

    width, height = len(lons) * CELL_PX, len(lats) * CELL_PX
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#dddddd"/>',
    ]
    for i in range(grid_nodes):
        lat, lon = nodes.latlon[i]
        t = 0.5 if span == 0.0 else (float(values[i]) - lo) / span
        # row 0 at the top is the highest latitude
        y = (len(lats) - 1 - lat_pos[lat]) * CELL_PX
        x = lon_pos[lon] * CELL_PX
        parts.append(
            f'<rect x="{x}" y="{y}" width="{CELL_PX}" height="{CELL_PX}" fill="{_ramp(t)}"/>'
        )
    parts.append("</svg>")
    svg_path.write_text("\n".join(parts) + "\n")
    return csv_path, svg_path


def _polyline(xs: Array, ys: Array, color: str) -> str:
    points = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>'


def export_forecast_timeseries(report: EvalReport, path: str | Path) -> tuple[Path, Path]:
    """Write <path>.csv (index,target,prediction) and <path>.svg plotting
    both series, with the correlation and RMSE in the chart title."""
    if report.n == 0:
        raise DataError("cannot export an empty report")
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = Path(str(base) + ".csv")
    svg_path = Path(str(base) + ".svg")

    lines = ["index,target,prediction"]
    for i, (t, p) in enumerate(zip(report.targets, report.predictions)):
        lines.append(f"{i},{float(t)!r},{float(p)!r}")
    csv_path.write_text("\n".join(lines) + "\n")

    both = np.concatenate([report.targets, report.predictions])
    lo, hi = float(both.min()), float(both.max())
    if hi == lo:
        hi = lo + 1.0
    inner_w, inner_h = CHART_W - 2 * MARGIN, CHART_H - 2 * MARGIN

    def to_xy(series: Array) -> tuple[Array, Array]:
        xs = MARGIN + inner_w * np.arange(report.n) / max(1, report.n - 1)
        ys = MARGIN + inner_h * (1.0 - (series - lo) / (hi - lo))
        return xs, ys

    title = (
        f"ONI forecast, lead {report.lead_months} mo: "
        f"r={report.r:.4f}, RMSE={report.rmse:.4f}, n={report.n}"
    )
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{CHART_W}" height="{CHART_H}" viewBox="0 0 {CHART_W} {CHART_H}">',
        f'<rect width="{CHART_W}" height="{CHART_H}" fill="#ffffff"/>',
        f'<text x="{MARGIN}" y="{MARGIN - 16}" font-family="sans-serif" font-size="13">'
        f"{title}</text>",
        f'<line x1="{MARGIN}" y1="{CHART_H - MARGIN}" x2="{CHART_W - MARGIN}" '
        f'y2="{CHART_H - MARGIN}" stroke="#888888"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{CHART_H - MARGIN}" '
        f'stroke="#888888"/>',
        _polyline(*to_xy(report.targets), "#1f6fb4"),
        _polyline(*to_xy(report.predictions), "#e06c00"),
    ]
    parts.append("</svg>")
    svg_path.write_text("\n".join(parts) + "\n")
    return csv_path, svg_path
