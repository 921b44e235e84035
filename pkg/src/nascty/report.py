"""Static SVG plots and a markdown summary rendered from run CSV logs.

Plots are written by hand rather than through a plotting library so that the
output depends only on the CSV contents: re-rendering gives identical bytes.
Every plotted point carries its CSV values in ``data-x`` / ``data-y``.
"""
from __future__ import annotations

import csv
import math
import os
from html import escape

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=20, top=40, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


class ReportError(Exception):
    pass


def read_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ReportError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise ReportError(f"{path} has no data rows")
    return rows


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 10))
        t += step
    return ticks


def line_plot_svg(series, title, xlabel, ylabel):
    """``series`` is a list of ``(name, [(x_text, y_text), ...])`` with numeric strings."""
    pts = [(float(x), float(y)) for _, data in series for x, y in data]
    if not pts:
        raise ReportError(f"nothing to plot for '{title}'")
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    xt, yt = _nice_ticks(min(xs), max(xs)), _nice_ticks(min(ys), max(ys))
    x0, x1, y0, y1 = xt[0], xt[-1], yt[0], yt[-1]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN["top"] + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
    ]
    for t in xt:
        out.append(f'<line x1="{sx(t):.2f}" y1="{MARGIN["top"]}" x2="{sx(t):.2f}" y2="{MARGIN["top"] + ph}" stroke="#e5e5e5"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{MARGIN["top"] + ph + 16}" text-anchor="middle" font-family="sans-serif" font-size="11">{t:g}</text>')
    for t in yt:
        out.append(f'<line x1="{MARGIN["left"]}" y1="{sy(t):.2f}" x2="{MARGIN["left"] + pw}" y2="{sy(t):.2f}" stroke="#e5e5e5"/>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{sy(t) + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{t:g}</text>')
    out.append(f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text transform="translate(16 {MARGIN["top"] + ph / 2:.1f}) rotate(-90)" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(ylabel)}</text>')

    for k, (name, data) in enumerate(series):
        color = COLORS[k % len(COLORS)]
        coords = " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}" for x, y in data)
        out.append(f'<g class="series" data-name="{escape(name)}">')
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in data:
            out.append(f'<circle cx="{sx(float(x)):.2f}" cy="{sy(float(y)):.2f}" r="2" fill="{color}" data-x="{x}" data-y="{y}"/>')
        out.append("</g>")
        out.append(f'<text x="{MARGIN["left"] + 10}" y="{MARGIN["top"] + 16 + 14 * k}" font-family="sans-serif" font-size="11" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def fitness_series(rows):
    series = []
    for col, name in (("best_so_far", "best so far"), ("best_fitness", "generation best"), ("mean_fitness", "generation mean")):
        data = [(r["generation"], r[col]) for r in rows if col in r and math.isfinite(float(r[col]))]
        if data:
            series.append((name, data))
    return series


def ge_series(rows, name="guessing entropy"):
    return [(name, [(r["n_traces"], r["guessing_entropy"]) for r in rows])]


def find_logs(run_dir):
    gens, curves = [], []
    for root, dirs, files in os.walk(run_dir):
        dirs.sort()
        if "generations.csv" in files:
            gens.append(os.path.join(root, "generations.csv"))
        if "ge_curve.csv" in files:
            curves.append(os.path.join(root, "ge_curve.csv"))
    return sorted(gens), sorted(curves)


def render(run_dir):
    """Write fitness.svg, key_rank.svg and summary.md into ``run_dir``; returns the paths."""
    if not os.path.isdir(run_dir):
        raise ReportError(f"{run_dir} is not a directory")
    gens, curves = find_logs(run_dir)
    if not gens and not curves:
        raise ReportError(f"no logs found in {run_dir}: expected generations.csv (from evolve) "
                          "or ge_curve.csv (from eval-genome / attack)")
    written = []
    summary = ["# Run summary", ""]

    if gens:
        series = []
        summary += ["## Fitness", "", "| log | generations | final best so far |", "|---|---|---|"]
        for path in gens:
            rows = read_csv(path)
            rel = os.path.relpath(path, run_dir)
            label = os.path.dirname(rel) or "."
            for name, data in fitness_series(rows):
                if len(gens) == 1 or name == "best so far":
                    series.append((name if len(gens) == 1 else f"{label}: {name}", data))
            summary.append(f"| {rel} | {len(rows)} | {rows[-1]['best_so_far']} |")
        svg = line_plot_svg(series, "Fitness (validation CCE) per generation", "generation", "fitness")
        written.append(_write(os.path.join(run_dir, "fitness.svg"), svg))
        summary += ["", "![fitness](fitness.svg)", ""]

    if curves:
        series = []
        summary += ["## Key rank", "", "| curve | traces | final GE | traces to rank 0 |", "|---|---|---|---|"]
        for path in curves:
            rows = read_csv(path)
            rel = os.path.relpath(path, run_dir)
            series += ge_series(rows, os.path.dirname(rel) or "guessing entropy")
            ge = [float(r["guessing_entropy"]) for r in rows]
            nz = [i for i, v in enumerate(ge) if v != 0]
            t0 = 1 if not nz else (nz[-1] + 2 if nz[-1] + 1 < len(ge) else "not reached")
            summary.append(f"| {rel} | {len(rows)} | {rows[-1]['guessing_entropy']} | {t0} |")
        svg = line_plot_svg(series, "Mean key rank vs. attack traces", "attack traces", "mean key rank")
        written.append(_write(os.path.join(run_dir, "key_rank.svg"), svg))
        summary += ["", "![key rank](key_rank.svg)", ""]

    written.append(_write(os.path.join(run_dir, "summary.md"), "\n".join(summary)))
    return written


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    return path
