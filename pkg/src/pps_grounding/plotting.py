"""Matplotlib renderings of loss traces and metrics tables (Agg backend, files only)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .losses import LossBundle  # noqa: E402


def plot_trace(trace: Sequence[Mapping[str, float]], path: str | Path) -> Path:
    """One line per loss term against epoch, log-scaled."""
    path = Path(path)
    epochs = [rec["epoch"] for rec in trace]
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in LossBundle.NAMES:
        values = [max(rec[name], 1e-12) for rec in trace]
        ax.plot(epochs, values, marker="o", ms=3, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_metrics(table: Mapping[str, float], path: str | Path, baseline: Mapping[str, float] | None = None) -> Path:
    """Bar chart of a metrics table, optionally beside a baseline table."""
    path = Path(path)
    names = list(table)
    xs = range(len(names))
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.4 if baseline else 0.8
    ax.bar([x - width / 2 if baseline else x for x in xs], [table[n] for n in names], width, label="model")
    if baseline:
        ax.bar([x + width / 2 for x in xs], [baseline.get(n, 0.0) for n in names], width, label="baseline")
        ax.legend(fontsize=8)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
