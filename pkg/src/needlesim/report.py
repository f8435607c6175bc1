"""Box-plot quantiles and standalone SVG rendering for study metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import PathMetrics

METRIC_COLUMNS = {
    "rmse_n": lambda m: m.rmse,
    "mae_n": lambda m: m.mae,
    "pct_identical": lambda m: m.pct_identical,
    "msd_mm": lambda m: m.msd,
    "hsd_mm": lambda m: m.hsd,
}


@dataclass(frozen=True)
class BoxStats:
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]


def box_stats(values) -> BoxStats:
    """Tukey box-plot statistics with 1.5 IQR whiskers."""
    v = np.asarray(values, dtype=float)
    q1, med, q3 = (float(x) for x in np.percentile(v, [25, 50, 75]))
    iqr = q3 - q1
    lo_lim, hi_lim = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_lim) & (v <= hi_lim)]
    whisker_lo = float(inside.min()) if inside.size else q1
    whisker_hi = float(inside.max()) if inside.size else q3
    outliers = tuple(float(x) for x in np.sort(v[(v < lo_lim) | (v > hi_lim)]))
    return BoxStats(float(v.min()), q1, med, q3, float(v.max()),
                    whisker_lo, whisker_hi, outliers)


def write_quantile_csv(metrics: list[PathMetrics], path) -> None:
    """One row per (patient, metric) with box-plot quantiles."""
    patients = sorted({m.patient_id for m in metrics})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "metric", "n", "min", "q1", "median", "q3",
                    "max", "whisker_lo", "whisker_hi", "n_outliers"])
        for pid in patients:
            sel = [m for m in metrics if m.patient_id == pid]
            for name, getter in METRIC_COLUMNS.items():
                vals = [getter(m) for m in sel]
                b = box_stats(vals)
                w.writerow([pid, name, len(vals), b.minimum, b.q1, b.median,
                            b.q3, b.maximum, b.whisker_lo, b.whisker_hi,
                            len(b.outliers)])


def boxplot_svg(groups: dict[str, list[float]], title: str, unit: str,
                width: int = 560, height: int = 360) -> str:
    """Self-contained SVG box plot, one box per group."""
    margin_l, margin_b, margin_t = 60, 40, 30
    plot_w = width - margin_l - 20
    plot_h = height - margin_t - margin_b
    stats = {name: box_stats(vals) for name, vals in groups.items() if vals}
    if not stats:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"/>'
    lo = min(s.minimum for s in stats.values())
    hi = max(s.maximum for s in stats.values())
    if hi == lo:
        hi = lo + 1.0

    def y(v):
        return margin_t + plot_h * (1.0 - (v - lo) / (hi - lo))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" font-family="sans-serif" font-size="11">',
             f'<text x="{margin_l}" y="18" font-size="13">{title}</text>']
    # axis with 5 ticks
    parts.append(f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" '
                 f'y2="{margin_t + plot_h}" stroke="black"/>')
    for i in range(6):
        v = lo + (hi - lo) * i / 5
        yy = y(v)
        parts.append(f'<line x1="{margin_l - 4}" y1="{yy:.1f}" x2="{margin_l}" '
                     f'y2="{yy:.1f}" stroke="black"/>')
        parts.append(f'<text x="{margin_l - 8}" y="{yy + 4:.1f}" '
                     f'text-anchor="end">{v:.3g}</text>')
    parts.append(f'<text x="12" y="{margin_t - 8}">{unit}</text>')

    n = len(stats)
    slot = plot_w / n
    box_w = min(slot * 0.5, 60.0)
    for i, (name, s) in enumerate(stats.items()):
        cx = margin_l + slot * (i + 0.5)
        x0, x1 = cx - box_w / 2, cx + box_w / 2
        parts.append(f'<line x1="{cx:.1f}" y1="{y(s.whisker_lo):.1f}" '
                     f'x2="{cx:.1f}" y2="{y(s.q1):.1f}" stroke="black"/>')
        parts.append(f'<line x1="{cx:.1f}" y1="{y(s.q3):.1f}" '
                     f'x2="{cx:.1f}" y2="{y(s.whisker_hi):.1f}" stroke="black"/>')
        for wv in (s.whisker_lo, s.whisker_hi):
            parts.append(f'<line x1="{cx - box_w / 4:.1f}" y1="{y(wv):.1f}" '
                         f'x2="{cx + box_w / 4:.1f}" y2="{y(wv):.1f}" stroke="black"/>')
        parts.append(f'<rect x="{x0:.1f}" y="{y(s.q3):.1f}" width="{box_w:.1f}" '
                     f'height="{max(y(s.q1) - y(s.q3), 0.5):.1f}" '
                     f'fill="#9ecae1" stroke="black"/>')
        parts.append(f'<line x1="{x0:.1f}" y1="{y(s.median):.1f}" x2="{x1:.1f}" '
                     f'y2="{y(s.median):.1f}" stroke="black" stroke-width="2"/>')
        for ov in s.outliers[:200]:
            parts.append(f'<circle cx="{cx:.1f}" cy="{y(ov):.1f}" r="2" '
                         f'fill="none" stroke="black"/>')
        parts.append(f'<text x="{cx:.1f}" y="{margin_t + plot_h + 16}" '
                     f'text-anchor="middle">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_report(metrics: list[PathMetrics], out_dir) -> list[str]:
    """Quantile CSV plus one box-plot SVG per metric; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    qcsv = out / "quantiles.csv"
    write_quantile_csv(metrics, qcsv)
    written.append(str(qcsv))
    patients = sorted({m.patient_id for m in metrics})
    units = {"rmse_n": "N", "mae_n": "N", "pct_identical": "%",
             "msd_mm": "mm", "hsd_mm": "mm"}
    for name, getter in METRIC_COLUMNS.items():
        groups = {pid: [getter(m) for m in metrics if m.patient_id == pid]
                  for pid in patients}
        svg = boxplot_svg(groups, f"{name} per path", units[name])
        svg_path = out / f"box_{name}.svg"
        svg_path.write_text(svg)
        written.append(str(svg_path))
    return written
