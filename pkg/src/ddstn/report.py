"""Comparison-table, ROC and manifest writers used by ``ddstn compare``."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .evaluation import METRICS, EvalReport, RocCurve

TABLE_COLUMNS = ("ACC", "SEN", "SPE", "YI")
_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def seed_summary(reports: list[EvalReport]) -> dict[str, tuple[float, float]]:
    """Per metric: (mean over seeds of fold means, mean over seeds of fold SDs)."""
    out = {}
    for m in METRICS:
        means = [r.aggregate[m]["mean"] for r in reports]
        sds = [r.aggregate[m]["sd"] for r in reports]
        out[m] = (float(np.mean(means)), float(np.mean(sds)))
    return out


def format_pm(mean: float, sd: float) -> str:
    return f"{100 * mean:.2f}±{100 * sd:.2f}"


def write_table(path, summaries: dict[str, dict[str, tuple[float, float]]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", *TABLE_COLUMNS])
        for alg, summary in summaries.items():
            w.writerow([alg] + [format_pm(*summary[m]) for m in METRICS])


def read_table(path) -> dict[str, dict[str, float]]:
    """Parse ``table1.csv`` back into mean accuracies etc. (percent values)."""
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["algorithm"]] = {
                c: float(row[c].split("±")[0]) for c in TABLE_COLUMNS
            }
    return out


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def roc_svg(curves: dict[str, RocCurve], size: int = 420) -> str:
    """Hand-drawn SVG of several ROC curves with AUC in the legend."""
    pad = 50
    plot = size - 2 * pad

    def xy(f: float, t: float) -> str:
        return f"{pad + f * plot:.2f},{pad + (1 - t) * plot:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{pad}" y="{pad}" width="{plot}" height="{plot}" fill="none" stroke="black"/>',
        f'<polyline points="{xy(0, 0)} {xy(1, 1)}" fill="none" stroke="#bbbbbb" stroke-dasharray="4,3"/>',
    ]
    for i in range(6):
        v = i / 5
        x = pad + v * plot
        y = pad + (1 - v) * plot
        parts.append(f'<line x1="{x:.2f}" y1="{pad + plot}" x2="{x:.2f}" y2="{pad + plot + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="{pad + plot + 17}" text-anchor="middle">{v:.1f}</text>')
        parts.append(f'<line x1="{pad - 5}" y1="{y:.2f}" x2="{pad}" y2="{y:.2f}" stroke="black"/>')
        parts.append(f'<text x="{pad - 8}" y="{y + 4:.2f}" text-anchor="end">{v:.1f}</text>')
    parts.append(f'<text x="{size / 2}" y="{size - 10}" text-anchor="middle">False positive rate</text>')
    parts.append(
        f'<text x="14" y="{size / 2}" text-anchor="middle" transform="rotate(-90 14 {size / 2})">'
        "True positive rate</text>"
    )
    for i, (name, roc) in enumerate(curves.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(xy(f, t) for f, t in zip(roc.fpr, roc.tpr))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = pad + plot - 12 - 14 * (len(curves) - 1 - i)
        parts.append(f'<line x1="{pad + plot - 150}" y1="{ly - 4}" x2="{pad + plot - 130}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{pad + plot - 125}" y="{ly}">{name} (AUC={roc.auc:.3f})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
