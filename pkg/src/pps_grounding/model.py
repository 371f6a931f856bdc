"""The full proposal model: generator, importance-weighted mixtures, reconstruction losses.

Checkpoint layout: a NumPy ``.npz`` archive.  Every model parameter is
stored under its dotted module path (e.g. ``generator.center_head.weight``)
with its own shape and dtype.  The entry ``__config__`` is a 0-d unicode
array holding the flat JSON config, and ``__format__`` holds the string
``"pps-checkpoint/1"``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import GroundingConfig
from .data import MASK_ID, Batch
from .generator import ProposalGenerator, ProposalSet, membership, proposal_slices
from .losses import LossBundle, ivc_loss, pull_loss, push_inter_loss, push_intra_loss, rec_loss, total_loss
from .reconstructor import MaskedMultiModal, Reconstructor

CHECKPOINT_FORMAT = "pps-checkpoint/1"


@dataclass
class ForwardOutput:
    proposals: ProposalSet
    log_weights: torch.Tensor  # (B, K, M), -inf outside each proposal
    log_curves: torch.Tensor  # (B, K, T)
    curves: torch.Tensor  # (B, K, T), zero on padding
    ce_pos: torch.Tensor | None = None  # (B, K)
    ce_easy: torch.Tensor | None = None
    ce_hard: torch.Tensor | None = None


class PPSModel(nn.Module):
    def __init__(self, config: GroundingConfig):
        super().__init__()
        self.config = config
        torch.manual_seed(config.seed)
        self.generator = ProposalGenerator(config)
        self.reconstructor = Reconstructor(config)
        self.register_buffer("member", membership(config.K), persistent=False)

    def _mixture(self, h: torch.Tensor, log_masks: torch.Tensor):
        """Per-proposal softmax of mask scores and the log mixture curves."""
        scores = h.unsqueeze(1).masked_fill(~self.member, float("-inf"))  # (B, K, M)
        log_w = torch.log_softmax(scores, dim=-1)
        log_curves = torch.logsumexp(log_w.unsqueeze(-1) + log_masks.unsqueeze(1), dim=2)
        return log_w, log_curves

    def forward(self, batch: Batch, hidden: torch.Tensor, with_ce: bool = True) -> ForwardOutput:
        video, vlen, query, qlen = batch.video, batch.video_len, batch.query, batch.query_len
        # the generator sees the same hidden query; otherwise it can smuggle the
        # hidden words to the reconstructor through the mask positions
        props = self.generator(video, vlen, torch.where(hidden, MASK_ID, query), qlen)
        K = self.config.K
        M = props.log_masks.shape[1]
        rec = self.reconstructor

        first = props.log_masks
        if with_ce:
            first = torch.cat([first, props.easy_log_curves, props.hard_log_curve.unsqueeze(1)], dim=1)
        mm = rec(video, vlen, query, qlen, hidden, first)
        h = rec.importance_logits(mm)[:, :M]
        log_w, log_curves = self._mixture(h, props.log_masks)
        curves = torch.exp(log_curves) * props.valid.unsqueeze(1)
        out = ForwardOutput(props, log_w, log_curves, curves)
        if with_ce:
            neg_ce = rec.reconstruction_ce(_slice(mm, M), query, hidden)
            out.ce_easy, out.ce_hard = neg_ce[:, :K], neg_ce[:, K]
            out.ce_pos = rec.reconstruction_ce(rec(video, vlen, query, qlen, hidden, log_curves), query, hidden)
        return out

    def losses(self, out: ForwardOutput) -> LossBundle:
        cfg = self.config
        props = out.proposals
        slices = proposal_slices(cfg.K)
        rec, k_star = rec_loss(out.ce_pos, out.ce_hard)
        ce_pos_star = out.ce_pos.gather(1, k_star[:, None]).squeeze(1)
        ce_easy_star = out.ce_easy.gather(1, k_star[:, None]).squeeze(1)
        ivc = ivc_loss(ce_pos_star, out.ce_hard, ce_easy_star, cfg.beta1, cfg.beta2)
        pull = pull_loss([props.centers[:, sl] for sl in slices], cfg.pull_strategy)
        masks = props.masks()
        push_intra = push_intra_loss([masks[:, sl] for sl in slices], cfg.lambda1)
        push_inter = push_inter_loss(out.curves, cfg.lambda2)
        return total_loss(rec.mean(), ivc.mean(), pull.mean(), push_intra.mean(), push_inter.mean(),
                          cfg.alphas)

    def hard_negative_ce(self, batch: Batch, hidden: torch.Tensor) -> torch.Tensor:
        """Reconstruction CE ``(B,)`` from the whole video (the hard negative alone)."""
        rec = self.reconstructor
        mm = rec(batch.video, batch.video_len, batch.query, batch.query_len, hidden, None)
        return rec.reconstruction_ce(mm, batch.query, hidden)[:, 0]

    @torch.no_grad()
    def predict_curves(self, batch: Batch) -> torch.Tensor:
        """Positive curves ``(B, K, T)`` with importance from the full (unhidden) query."""
        hidden = torch.zeros_like(batch.query, dtype=torch.bool)
        return self(batch, hidden, with_ce=False).curves

    # checkpoints

    def save(self, path: str | Path) -> None:
        arrays = {name: t.detach().cpu().numpy() for name, t in self.state_dict().items()}
        arrays["__config__"] = np.array(json.dumps(self.config.to_dict(), sort_keys=True))
        arrays["__format__"] = np.array(CHECKPOINT_FORMAT)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "PPSModel":
        with np.load(path, allow_pickle=False) as archive:
            if str(archive["__format__"]) != CHECKPOINT_FORMAT:
                raise ValueError(f"unsupported checkpoint format {archive['__format__']}")
            config = GroundingConfig.from_dict(json.loads(str(archive["__config__"])))
            state = {k: torch.from_numpy(archive[k].copy()) for k in archive.files if not k.startswith("__")}
        model = cls(config)
        model.load_state_dict(state)
        return model


def _slice(mm: MaskedMultiModal, start: int) -> MaskedMultiModal:
    return MaskedMultiModal(mm.per_word[:, start:], mm.cls[:, start:])
