"""Static SVG figures: AP curves per metric and optimization traces."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import atomic_write_bytes  # noqa: E402

_XLABEL = {
    "iou": "3D IoU threshold",
    "rotation_deg": "rotation threshold (deg)",
    "translation_cm": "translation threshold (cm)",
}


def _svg_bytes(fig) -> bytes:
    # Fixed hash salt and no date keep the output byte-stable across runs.
    buf = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": "primpose", "svg.fonttype": "path"}):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def read_curves_csv(path) -> list:
    rows = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            rows.append((float(r["threshold"]), r["category"], r["metric"], float(r["ap"])))
    return rows


def plot_ap_curves(rows, out_dir) -> list:
    """One SVG per metric with a line per category; returns the written paths."""
    out_dir = Path(out_dir)
    by_metric = {}
    for thr, cat, metric, ap in rows:
        by_metric.setdefault(metric, {}).setdefault(cat, []).append((thr, ap))
    written = []
    for metric in sorted(by_metric):
        fig, ax = plt.subplots(figsize=(4.5, 3.4))
        for cat in sorted(by_metric[metric], key=lambda c: (c == "all", c)):
            pts = sorted(by_metric[metric][cat])
            style = {"color": "k", "lw": 2.0} if cat == "all" else {"lw": 1.2}
            ax.plot([p[0] for p in pts], [100 * p[1] for p in pts], label=cat, **style)
        ax.set_xlabel(_XLABEL.get(metric, metric))
        ax.set_ylabel("AP (%)")
        ax.set_ylim(-2, 102)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7, loc="best")
        fig.tight_layout()
        path = out_dir / f"ap_{metric}.svg"
        atomic_write_bytes(path, _svg_bytes(fig))
        written.append(path)
    return written


def read_trace_csv(path) -> dict:
    cols = {"iteration": [], "objective": [], "residual": [], "z_norm": []}
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            for k in cols:
                cols[k].append(float(r[k]))
    return cols


def plot_traces(traces: dict, path) -> Path:
    """Objective and latent norm against iteration for each named trace."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    for name in sorted(traces):
        tr = traces[name]
        a1.plot(tr["iteration"], tr["objective"], lw=1, label=name)
        a2.plot(tr["iteration"], tr["z_norm"], lw=1, label=name)
    a1.set_yscale("log")
    a1.set_xlabel("iteration")
    a1.set_ylabel("objective")
    a2.set_xlabel("iteration")
    a2.set_ylabel("||z||")
    if len(traces) <= 10:
        a1.legend(fontsize=7)
    for a in (a1, a2):
        a.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    atomic_write_bytes(path, _svg_bytes(fig))
    return path
