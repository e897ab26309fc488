"""CSV summaries and score-versus-step SVG plots, written without a plotting library."""
from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
SUMMARY_COLUMNS = (
    "label", "env", "algo", "config_hash", "final_mean", "final_std",
    "teacher_final_mean", "n_seeds", "failed_seeds", "runtime_s",
)


def summary_row(report) -> dict:
    spec = report.spec
    return {
        "label": report.label,
        "env": spec["env"],
        "algo": spec["algo"],
        "config_hash": report.config_hash,
        "final_mean": repr(float(report.final_mean)),
        "final_std": repr(float(report.final_std)),
        "teacher_final_mean": "" if report.teacher_final_mean is None else repr(float(report.teacher_final_mean)),
        "n_seeds": len(report.series),
        "failed_seeds": ";".join(sorted(report.failed_seeds)),
        "runtime_s": f"{report.runtime:.1f}",
    }


def write_series(report, path):
    """Long-format raw scores: ``seed, eval_index, step, score, teacher_score``."""
    freq = report.spec["eval_freq"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "eval_index", "step", "score", "teacher_score"])
        for seed, series in report.series.items():
            teacher = report.teacher_series.get(seed, [])
            for k, v in enumerate(series):
                w.writerow([seed, k, k * freq, repr(float(v)), repr(float(teacher[k])) if k < len(teacher) else ""])


def _polyline(xs, ys, sx, sy, colour, dash=""):
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline fill="none" stroke="{colour}" stroke-width="1.5"{extra} points="{pts}"/>'


def svg_plot(curves, title="", width=640, height=360) -> str:
    """Line plot of ``curves``: a list of ``(name, steps, values, dashed)``."""
    ml, mr, mt, mb = 56, 170, 30, 40
    xs = [x for _, s, _, _ in curves for x in s] or [0.0, 1.0]
    ys = [y for _, _, v, _ in curves for y in v if np.isfinite(y)] or [0.0, 100.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(min(ys), 0.0), max(max(ys), 100.0)
    x1 = x1 if x1 > x0 else x0 + 1.0
    sx = lambda x: ml + (x - x0) / (x1 - x0) * (width - ml - mr)
    sy = lambda y: height - mb - (y - y0) / (y1 - y0) * (height - mt - mb)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{ml}" y="18" font-size="13" font-family="sans-serif">{escape(title)}</text>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
    ]
    for y in np.linspace(y0, y1, 5):
        out.append(f'<text x="{ml - 6}" y="{sy(y) + 4:.1f}" font-size="10" text-anchor="end" font-family="sans-serif">{y:.0f}</text>')
        out.append(f'<line x1="{ml}" y1="{sy(y):.1f}" x2="{width - mr}" y2="{sy(y):.1f}" stroke="#ddd"/>')
    for x in np.linspace(x0, x1, 5):
        out.append(f'<text x="{sx(x):.1f}" y="{height - mb + 16}" font-size="10" text-anchor="middle" font-family="sans-serif">{x:.0f}</text>')
    out.append(f'<text x="{(ml + width - mr) / 2:.0f}" y="{height - 6}" font-size="11" text-anchor="middle" font-family="sans-serif">step</text>')
    for i, (name, steps, values, dashed) in enumerate(curves):
        colour = PALETTE[i % len(PALETTE)]
        out.append(_polyline(steps, values, sx, sy, colour, "5,3" if dashed else ""))
        ly = mt + 14 * i + 6
        out.append(f'<line x1="{width - mr + 10}" y1="{ly}" x2="{width - mr + 30}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{width - mr + 34}" y="{ly + 4}" font-size="10" font-family="sans-serif">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out)


def _mean_curve(series: dict, freq):
    if not series:
        return [], []
    n = min(len(v) for v in series.values())
    vals = np.mean([v[:n] for v in series.values()], axis=0)
    return [k * freq for k in range(n)], list(vals)


def render_run_plot(report, path):
    """Score versus step of one run: the seed mean, plus the teacher when there is one."""
    freq = report.spec["eval_freq"]
    curves = [(report.label, *_mean_curve(report.series, freq), False)]
    if report.teacher_series:
        curves.append(("teacher", *_mean_curve(report.teacher_series, freq), True))
    Path(path).write_text(svg_plot(curves, f"{report.label} ({report.spec['env']})"))


def render_report(reports, out_dir, family: str = "summary"):
    """``<family>.csv`` with one row per report, a raw-series CSV and an SVG per run.

    Returns the path of the summary CSV.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("render_report needs at least one report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = out / f"{family}.csv"
    with open(summary, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow(summary_row(r))
    for r in reports:
        write_series(r, out / f"{r.config_hash}_series.csv")
        render_run_plot(r, out / f"{r.config_hash}.svg")
    return summary
