"""Vote-based ranking of proposals and batch prediction."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .data import GroundingSample, collate, iter_batches, unsupervised_view
from .errors import InvalidParam
from .mask_math import Interval, curve_to_interval, interval_iou
from .model import PPSModel


@dataclass
class PredictionRecord:
    sample_id: str
    ranked: list[tuple[Interval, float]]  # best first

    @property
    def top(self) -> Interval:
        return self.ranked[0][0]

    def to_json(self) -> str:
        triples = [[iv.start, iv.end, score] for iv, score in self.ranked]
        return json.dumps({"sample_id": self.sample_id, "ranked": triples})

    @classmethod
    def from_json(cls, line: str) -> "PredictionRecord":
        rec = json.loads(line)
        return cls(rec["sample_id"], [(Interval(s, e), float(v)) for s, e, v in rec["ranked"]])


def vote_select(curves, theta: float = 0.5, sample_id: str = "") -> PredictionRecord:
    """Rank proposals by the summed IoU of their span with every other proposal's span.

    Ties keep the lower proposal index first.
    """
    if len(curves) < 1:
        raise InvalidParam("need at least one proposal")
    intervals = [curve_to_interval(c, theta) for c in curves]
    scores = [sum(interval_iou(a, b) for j, b in enumerate(intervals) if j != k)
              for k, a in enumerate(intervals)]
    order = sorted(range(len(intervals)), key=lambda k: (-scores[k], k))
    return PredictionRecord(sample_id, [(intervals[k], scores[k]) for k in order])


def predict(model: PPSModel, samples: Sequence[GroundingSample], batch_size: int = 64) -> list[PredictionRecord]:
    model.eval()
    records = []
    pairs = [unsupervised_view(s) for s in samples]
    for chunk in iter_batches(pairs, batch_size):
        batch = collate(chunk)
        curves = model.predict_curves(batch)
        for i, sid in enumerate(batch.sample_ids):
            n = int(batch.video_len[i])
            records.append(vote_select(curves[i, :, :n], model.config.theta, sid))
    return records


def write_predictions(path: str | Path, records: Iterable[PredictionRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    with open(path) as fh:
        return [PredictionRecord.from_json(line) for line in fh if line.strip()]
