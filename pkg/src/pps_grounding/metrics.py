"""Recall-at-n metrics over temporal IoU, and the metrics report format.

The report is tab-separated text: ``#``-prefixed metadata lines (format,
seed, config hash, sample count) followed by a ``metric<TAB>value`` header
and one row per metric, values printed with six decimals.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import AlignmentError
from .inference import PredictionRecord
from .mask_math import Interval, interval_iou

DEFAULT_N = (1, 5)
DEFAULT_M = (0.1, 0.3, 0.5, 0.7)
REPORT_FORMAT = "pps-metrics/1"


def _gt_map(ground_truths) -> dict[str, Interval]:
    if isinstance(ground_truths, Mapping):
        return dict(ground_truths)
    return {s.sample_id: s.gt for s in ground_truths}


def evaluate(predictions: Sequence[PredictionRecord], ground_truths,
             n_values: Sequence[int] = DEFAULT_N,
             m_values: Sequence[float] = DEFAULT_M) -> dict[str, float]:
    """``R@n,IoU=m`` (any of the top n beats IoU m) and ``R@n,mIoU`` (mean best IoU in top n).

    ``ground_truths`` is a mapping id -> Interval or a sequence of samples.
    """
    gts = _gt_map(ground_truths)
    ids = [p.sample_id for p in predictions]
    if len(set(ids)) != len(ids):
        raise AlignmentError("duplicate sample ids in predictions")
    if set(ids) != set(gts):
        missing = sorted(set(gts) - set(ids))[:3]
        extra = sorted(set(ids) - set(gts))[:3]
        raise AlignmentError(f"prediction/ground-truth ids differ (missing {missing}, extra {extra})")
    if not predictions:
        raise AlignmentError("no predictions to evaluate")

    table = {}
    for n in n_values:
        best = np.array([max(interval_iou(iv, gts[p.sample_id]) for iv, _ in p.ranked[:n])
                         for p in predictions])
        for m in m_values:
            table[f"R@{n},IoU={m:g}"] = float(np.mean(best > m))
        table[f"R@{n},mIoU"] = float(np.mean(best))
    return table


def format_report(table: Mapping[str, float], *, seed: int, config_hash: str, samples: int) -> str:
    lines = [f"# format\t{REPORT_FORMAT}", f"# seed\t{seed}", f"# config_hash\t{config_hash}",
             f"# samples\t{samples}", "metric\tvalue"]
    lines += [f"{name}\t{value:.6f}" for name, value in table.items()]
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> tuple[dict[str, str], dict[str, float]]:
    meta, table = {}, {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("\t")
            meta[key] = value
        elif line != "metric\tvalue":
            name, _, value = line.partition("\t")
            table[name] = float(value)
    return meta, table


def write_report(path: str | Path, text: str) -> None:
    Path(path).write_text(text)


def random_interval_predictions(ids: Sequence[str], K: int, seed: int) -> list[PredictionRecord]:
    """Baseline: K intervals per sample with endpoints drawn uniformly and sorted."""
    rng = np.random.default_rng(seed)
    records = []
    for sid in ids:
        pts = np.sort(rng.uniform(0.0, 1.0, size=(K, 2)), axis=1)
        records.append(PredictionRecord(sid, [(Interval(float(a), float(b)), 0.0) for a, b in pts]))
    return records
