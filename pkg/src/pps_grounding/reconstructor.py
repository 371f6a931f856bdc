"""Importance-based reconstructor built on a mask-conditioned (MC) transformer.

The encoder runs over the video and the decoder over the hidden query plus a
learnable CLS token; every attention whose keys are video segments is
conditioned on the proposal mask.  One instance scores all masks and all
proposals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .attention import Decoder, Encoder, key_bias, safe_log_mask, sinusoid_table
from .config import GroundingConfig
from .data import MASK_ID, FeatureSequence, TokenSequence
from .errors import DegenerateMask, EmptyQuery, InvalidParam, NothingToReconstruct


@dataclass
class MaskedMultiModal:
    per_word: torch.Tensor  # (..., N+1, d_R), CLS last
    cls: torch.Tensor  # (..., d_R)


def _hidden_count(n: int, ratio: float) -> int:
    return max(1, math.ceil(ratio * n - 1e-9))


def hide_query(query: TokenSequence, ratio: float, seed=None) -> TokenSequence:
    """Mark ``ceil(ratio * valid_len)`` distinct valid positions as hidden."""
    if not 0 < ratio < 1:
        raise InvalidParam(f"hide ratio must be in (0, 1), got {ratio}")
    if query.valid_len == 0:
        raise EmptyQuery("cannot hide words of an empty query")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    picks = rng.choice(query.valid_len, size=_hidden_count(query.valid_len, ratio), replace=False)
    hidden = np.zeros(query.N, dtype=bool)
    hidden[picks] = True
    return TokenSequence(query.ids.copy(), query.valid_len, hidden)


def hide_batch(query_len: torch.Tensor, N: int, ratio: float, rng: np.random.Generator) -> torch.Tensor:
    """``(B, N)`` hidden flags, drawn per sample like :func:`hide_query`."""
    hidden = np.zeros((len(query_len), N), dtype=bool)
    for i, n in enumerate(query_len.tolist()):
        if n == 0:
            raise EmptyQuery("cannot hide words of an empty query")
        hidden[i, rng.choice(n, size=_hidden_count(n, ratio), replace=False)] = True
    return torch.from_numpy(hidden)


class Reconstructor(nn.Module):
    def __init__(self, config: GroundingConfig):
        super().__init__()
        self.config = config
        d = config.d_R
        self.video_in = nn.Linear(config.d_V, d)
        self.word_embed = nn.Embedding(config.vocab_size, config.d_Q)
        self.word_in = nn.Linear(config.d_Q, d)
        self.register_buffer("pos", sinusoid_table(max(config.T_max, config.N_max) + 1, d).float(),
                             persistent=False)
        self.q_cls = nn.Parameter(torch.randn(d))
        self.encoder = Encoder(d, config.heads, config.layers, config.ff_mult)
        self.decoder = Decoder(d, config.heads, config.layers, config.ff_mult)
        self.vocab_head = nn.Linear(d, config.vocab_size)
        self.importance_mlp = nn.Sequential(nn.Linear(d, d), nn.ReLU(), nn.Linear(d, 1))

    def forward(self, video, video_len, query, query_len, hidden, log_masks) -> MaskedMultiModal:
        """Run the MC transformer once per mask.

        video ``(B, T, d_V)``, query/hidden ``(B, N)``, log_masks ``(B, S, T)``;
        the output has shape ``(B, S, N+1, d_R)``.  ``log_masks=None`` runs the
        plain (unmasked) transformer with ``S = 1``.
        """
        B, T, _ = video.shape
        S = 1 if log_masks is None else log_masks.shape[1]
        N = query.shape[1]
        pos = self.pos.to(video.dtype)

        segs = (self.video_in(video) + pos[:T]).unsqueeze(1).expand(B, S, T, -1).reshape(B * S, T, -1)
        seg_pad = (torch.arange(T).unsqueeze(0) >= video_len.unsqueeze(1))
        seg_pad = seg_pad.unsqueeze(1).expand(B, S, T).reshape(B * S, T)
        if log_masks is not None:
            bias = key_bias(log_masks.reshape(B * S, T), seg_pad)
        elif bool(seg_pad.any()):
            bias = key_bias(None, seg_pad, video.dtype)
        else:
            bias = None
        memory = self.encoder(segs, bias)

        ids = torch.where(hidden, torch.full_like(query, MASK_ID), query)
        words = self.word_in(self.word_embed(ids)) + pos[:N]
        words = torch.cat([words, self.q_cls.to(video.dtype).expand(B, 1, -1)], dim=1)
        words = words.unsqueeze(1).expand(B, S, N + 1, -1).reshape(B * S, N + 1, -1)
        word_pad = torch.arange(N + 1).unsqueeze(0) >= query_len.unsqueeze(1)
        word_pad[:, N] = False
        word_pad = word_pad.unsqueeze(1).expand(B, S, N + 1).reshape(B * S, N + 1)
        out = self.decoder(words, memory, key_bias(None, word_pad, video.dtype), bias)
        out = out.reshape(B, S, N + 1, -1)
        return MaskedMultiModal(out, out[:, :, N])

    def reconstruction_ce(self, mm: MaskedMultiModal, query: torch.Tensor, hidden: torch.Tensor) -> torch.Tensor:
        """Mean cross-entropy over hidden words, one value per mask: ``(B, S)``."""
        counts = hidden.sum(-1)
        if bool((counts == 0).any()):
            raise NothingToReconstruct("no hidden positions to reconstruct")
        N = query.shape[-1]
        logits = self.vocab_head(mm.per_word[..., :N, :])
        return masked_token_ce(logits, query.unsqueeze(1), hidden.unsqueeze(1))

    def importance_logits(self, mm: MaskedMultiModal) -> torch.Tensor:
        return self.importance_mlp(mm.cls).squeeze(-1)

    # single-sample conveniences

    def mc_transform(self, video: FeatureSequence, hidden_query: TokenSequence, mask=None) -> MaskedMultiModal:
        """Single-sample MC transformer; ``mask=None`` is the unmasked transformer."""
        dtype = next(self.parameters()).dtype
        log_mask = None
        if mask is not None:
            mask = torch.as_tensor(mask, dtype=dtype)
            if mask.shape[-1] != video.T:
                raise InvalidParam(f"mask length {mask.shape[-1]} != T={video.T}")
            if bool(((mask[: video.valid_len] < 0) | (mask[: video.valid_len] > 1)).any()):
                raise InvalidParam("mask values must lie in [0, 1]")
            if not bool((mask[: video.valid_len] > 0).any()):
                raise DegenerateMask("mask is zero over every valid position")
            log_mask = safe_log_mask(mask).reshape(1, 1, -1)
        hidden_query.require_nonempty()
        mm = self(
            torch.as_tensor(video.features, dtype=dtype).unsqueeze(0),
            torch.tensor([video.valid_len]),
            torch.as_tensor(hidden_query.ids).unsqueeze(0),
            torch.tensor([hidden_query.valid_len]),
            torch.as_tensor(hidden_query.hidden).unsqueeze(0),
            log_mask,
        )
        return MaskedMultiModal(mm.per_word[0, 0], mm.cls[0, 0])


def masked_token_ce(logits: torch.Tensor, targets: torch.Tensor, hidden: torch.Tensor) -> torch.Tensor:
    """Cross-entropy averaged over positions where ``hidden`` is set.

    logits ``(..., N, V)``; targets and hidden broadcast to ``(..., N)``.
    """
    logp = F.log_softmax(logits, dim=-1)
    targets = targets.expand(logp.shape[:-1])
    hidden = hidden.expand(logp.shape[:-1])
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    weight = hidden.to(nll.dtype)
    counts = weight.sum(-1)
    if bool((counts == 0).any()):
        raise NothingToReconstruct("no hidden positions to reconstruct")
    return (nll * weight).sum(-1) / counts


def importance_weights(h: torch.Tensor) -> torch.Tensor:
    """Softmax over mask scores ``h``."""
    return torch.softmax(h, dim=-1)
