"""Static SVG line charts of cumulative NDCG over test windows.

One chart per dataset: x = window index, y = cumulative NDCG@k, one
polyline per (embedding, state) series read from windows.csv files.  The
SVG is assembled by hand so output bytes depend only on the inputs.
"""

from __future__ import annotations

import json
from pathlib import Path

from .evaluation import read_windows_csv

_PALETTE = (
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2",
    "#59a14f", "#edc948", "#b07aa1", "#9c755f",
)

_W, _H = 760, 460
_ML, _MR, _MT, _MB = 70, 180, 40, 55


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def emit_plot(windows_files: list[str | Path], out: str | Path) -> None:
    """Render the given windows.csv files into one SVG chart.

    All inputs must carry the same dataset stamp and the same number of
    window rows; series labels come from each file's mf.model and
    state.kind stamp entries.
    """
    if not windows_files:
        raise ValueError("no input files given")
    series = []
    for f in windows_files:
        stamp, metrics = read_windows_csv(f)
        if not metrics:
            raise ValueError(f"{f}: no window rows")
        label = f"{stamp.get('mf.model', 'mf')}-{stamp.get('state.kind', 'state')}"
        extra = stamp.get("bandit.policy")
        series.append({
            "file": str(f), "label": label, "policy": extra,
            "stamp": stamp, "metrics": metrics,
        })
    counts = {len(s["metrics"]) for s in series}
    if len(counts) > 1:
        raise ValueError(f"window row counts differ across inputs: {sorted(counts)}")
    datasets = {s["stamp"].get("data.name", "?") for s in series}
    if len(datasets) > 1:
        raise ValueError(f"inputs mix datasets: {sorted(datasets)}")
    dataset = next(iter(datasets))

    n_windows = next(iter(counts))
    ymax = max(m.ndcg_cumulative for s in series for m in s["metrics"])
    ytop = ymax * 1.1 if ymax > 0 else 1.0
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB

    def sx(w: int) -> float:
        if n_windows == 1:
            return _ML + plot_w / 2
        return _ML + (w - 1) * plot_w / (n_windows - 1)

    def sy(v: float) -> float:
        return _MT + plot_h * (1.0 - v / ytop)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        "<!-- sources and seeds:",
    ]
    for s in series:
        meta = {k: s["stamp"].get(k, "") for k in ("mf.seed", "bandit.seed")}
        parts.append(f"  {s['label']} <- {s['file']} {json.dumps(meta, sort_keys=True)}")
    parts.append("-->")
    parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    parts.append(
        f'<text x="{_ML + plot_w / 2:.1f}" y="22" text-anchor="middle" '
        f'font-size="15">{dataset}: cumulative NDCG by window</text>')

    # axes
    x0, y0 = _ML, _MT + plot_h
    parts.append(f'<line x1="{x0}" y1="{_MT}" x2="{x0}" y2="{y0}" stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{_ML + plot_w}" y2="{y0}" stroke="black"/>')
    for w in range(1, n_windows + 1):
        x = sx(w)
        parts.append(f'<line x1="{_fmt(x)}" y1="{y0}" x2="{_fmt(x)}" y2="{y0 + 5}" stroke="black"/>')
        parts.append(f'<text x="{_fmt(x)}" y="{y0 + 20}" text-anchor="middle">{w}</text>')
    parts.append(
        f'<text x="{_ML + plot_w / 2:.1f}" y="{_H - 12}" text-anchor="middle">window</text>')
    for i in range(6):
        v = ytop * i / 5
        y = sy(v)
        parts.append(f'<line x1="{x0 - 5}" y1="{_fmt(y)}" x2="{x0}" y2="{_fmt(y)}" stroke="black"/>')
        parts.append(
            f'<text x="{x0 - 9}" y="{_fmt(y + 4)}" text-anchor="end">{v:.4f}</text>')
    parts.append(
        f'<text x="18" y="{_MT + plot_h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {_MT + plot_h / 2:.1f})">cumulative NDCG</text>')

    # series lines + legend
    for si, s in enumerate(series):
        color = _PALETTE[si % len(_PALETTE)]
        pts = " ".join(
            f"{_fmt(sx(m.window))},{_fmt(sy(m.ndcg_cumulative))}" for m in s["metrics"])
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = _MT + 14 + si * 20
        lx = _ML + plot_w + 16
        parts.append(f'<rect x="{lx}" y="{ly - 9}" width="14" height="14" fill="{color}"/>')
        label = s["label"] + (f" ({s['policy']})" if s.get("policy") else "")
        parts.append(f'<text x="{lx + 20}" y="{ly + 3}">{label}</text>')

    parts.append("</svg>")
    Path(out).write_text("\n".join(parts) + "\n", encoding="utf-8")
