"""Figures written next to the CSV/JSONL outputs they summarise."""

from __future__ import annotations

import statistics
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def training_curves(log: Sequence[dict], path) -> Path:
    """Reward, baseline and dev F0.5 over training steps."""
    path = Path(path)
    fig, (ax_r, ax_f) = plt.subplots(1, 2, figsize=(10, 3.6))
    pg = [e for e in log if e.get("mean_reward") is not None]
    if pg:
        ax_r.plot([e["step"] for e in pg], [e["mean_reward"] for e in pg], ".", ms=3, alpha=0.5, label="batch reward")
        ax_r.plot([e["step"] for e in pg], [e["baseline"] for e in pg], "-", lw=1.2, label="baseline")
        ax_r.legend(loc="best", fontsize=8)
    else:
        ax_r.text(0.5, 0.5, "no policy-gradient batches", ha="center", va="center", transform=ax_r.transAxes)
    ax_r.set_xlabel("step")
    ax_r.set_ylabel("reward")
    dev = [e for e in log if e.get("dev_f05") is not None]
    ax_f.plot([e["step"] for e in dev], [100 * e["dev_f05"] for e in dev], "o-")
    ax_f.set_xlabel("step")
    ax_f.set_ylabel("dev F0.5 (x100)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def sweep_plot(parameter: str, rows: List[Dict[str, float]], path, baseline: float = None) -> Path:
    """Median and per-seed dev F0.5 against the swept value."""
    path = Path(path)
    values = sorted({r["value"] for r in rows})
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for v in values:
        pts = [100 * r["dev_f05"] for r in rows if r["value"] == v]
        ax.plot([v] * len(pts), pts, "o", color="0.6", ms=4)
    medians = [100 * statistics.median(r["dev_f05"] for r in rows if r["value"] == v) for v in values]
    ax.plot(values, medians, "s-", color="C0", label="median")
    if baseline is not None:
        ax.axhline(100 * baseline, ls="--", color="C3", lw=1, label="pre-trained")
    ax.set_xlabel(parameter)
    ax.set_ylabel("dev F0.5 (x100)")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def variants_plot(rows: List[Dict[str, float]], path) -> Path:
    path = Path(path)
    names = list(dict.fromkeys(r["variant"] for r in rows))
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for i, name in enumerate(names):
        pts = [100 * r["dev_f05"] for r in rows if r["variant"] == name]
        ax.plot([i] * len(pts), pts, "o", color="0.6", ms=4)
        ax.plot([i], [statistics.median(pts)], "s", color="C0", ms=8)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names)
    ax.set_ylabel("dev F0.5 (x100)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path

