"""Training loop: weakly supervised, from video/query pairs only."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .config import GroundingConfig
from .data import GroundingSample, collate, iter_batches, unsupervised_view
from .errors import InvalidCorpus, TrainingDiverged
from .losses import LossBundle
from .model import PPSModel
from .reconstructor import hide_batch

logger = logging.getLogger(__name__)

EpochCallback = Callable[[int, PPSModel, dict], None]


@dataclass
class TrainResult:
    model: PPSModel
    trace: list[dict] = field(default_factory=list)
    warmup: list[dict] = field(default_factory=list)

    def trace_lines(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.trace)


def _mean_bundle(bundles: list[dict[str, float]]) -> dict[str, float]:
    return {k: float(np.mean([b[k] for b in bundles])) for k in LossBundle.NAMES}


def _warmup_epoch(model: PPSModel, pairs, config: GroundingConfig, optimizer, rng, epoch: int) -> dict:
    """One pass fitting the reconstructor to whole-video reconstruction."""
    order = rng.permutation(len(pairs))
    values = []
    for b, chunk in enumerate(iter_batches(pairs, config.batch_size, order)):
        batch = collate(chunk)
        hidden = hide_batch(batch.query_len, batch.query.shape[1], config.hide_ratio, rng)
        loss = model.hard_negative_ce(batch, hidden).mean()
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(epoch, b, value)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        values.append(value)
    return {"warmup_epoch": epoch, "batches": len(values), "hard_ce": float(np.mean(values))}


def train(config: GroundingConfig, corpus: Sequence[GroundingSample], *,
          on_epoch_end: EpochCallback | None = None, model: PPSModel | None = None) -> TrainResult:
    """Fit a model with Adam and return it with one loss record per epoch.

    Ground-truth spans are never read: each sample is reduced to its
    unsupervised view before batching.
    """
    if not corpus:
        raise InvalidCorpus("cannot train on an empty corpus")
    pairs = [unsupervised_view(s) for s in corpus]
    for _, _, q in pairs:
        q.check_ids(config.vocab_size)

    model = model or PPSModel(config)
    model.train()
    gen_params = list(model.generator.parameters())
    gen_ids = {id(p) for p in gen_params}
    optimizer = torch.optim.Adam([
        {"params": [p for p in model.parameters() if id(p) not in gen_ids]},
        {"params": gen_params, "lr": config.learning_rate * config.generator_lr_scale},
    ], lr=config.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 17]))
    result = TrainResult(model)

    for epoch in range(1, config.warmup_epochs + 1):
        record = _warmup_epoch(model, pairs, config, optimizer, rng, epoch)
        result.warmup.append(record)
        logger.info("warm-up %d: %s", epoch, record)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pairs))
        bundles = []
        for b, chunk in enumerate(iter_batches(pairs, config.batch_size, order)):
            batch = collate(chunk)
            hidden = hide_batch(batch.query_len, batch.query.shape[1], config.hide_ratio, rng)
            bundle = model.losses(model(batch, hidden))
            value = float(bundle.total.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, b, value)
            optimizer.zero_grad()
            bundle.total.backward()
            optimizer.step()
            bundles.append({k: float(getattr(bundle, k).detach()) for k in LossBundle.NAMES})
        record = {"epoch": epoch, "batches": len(bundles), **_mean_bundle(bundles)}
        result.trace.append(record)
        logger.info("epoch %d: %s", epoch, record)
        if on_epoch_end is not None:
            model.eval()
            on_epoch_end(epoch, model, record)
            model.train()
    model.eval()
    return result
