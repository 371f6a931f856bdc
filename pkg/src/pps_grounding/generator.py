"""Gaussian mixture proposal generator.

A context transformer reads the query (encoder) and the video with an
appended CLS token (decoder).  Affine heads on the CLS feature give the
centers and widths of every Gaussian mask: proposal ``k`` (1-based) owns
``k`` masks, sliced from one head of width ``K(K+1)/2``, and each easy
negative owns ``E_en`` masks from a separate pair of heads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .attention import Decoder, Encoder, key_bias, sinusoid_table
from .config import GroundingConfig
from .errors import EmptyQuery, InvalidParam
from .mask_math import gaussian_log_mask, gaussian_mask, mixture_pool


@dataclass
class GaussianParams:
    centers: torch.Tensor  # (..., E)
    widths: torch.Tensor  # (..., E)

    @property
    def E(self) -> int:
        return self.centers.shape[-1]


@dataclass
class ProposalSet:
    """Proposals for a batch; log-domain curves are kept for the reconstructor."""

    centers: torch.Tensor  # (B, M) all positive-mask centers, proposal-major
    widths: torch.Tensor  # (B, M)
    log_masks: torch.Tensor  # (B, M, T)
    easy_centers: torch.Tensor  # (B, K, E_en)
    easy_widths: torch.Tensor  # (B, K, E_en)
    easy_log_curves: torch.Tensor  # (B, K, T)
    hard_log_curve: torch.Tensor  # (B, T)
    valid: torch.Tensor  # (B, T) bool

    def masks(self) -> torch.Tensor:
        return torch.exp(self.log_masks) * self.valid.unsqueeze(1)

    def easy_curves(self) -> torch.Tensor:
        return torch.exp(self.easy_log_curves) * self.valid.unsqueeze(1)

    def hard_curve(self) -> torch.Tensor:
        return torch.exp(self.hard_log_curve) * self.valid


def proposal_slices(K: int) -> list[slice]:
    """Column ranges of proposal ``k = 1..K`` inside the flat positive-mask axis."""
    return [slice(k * (k - 1) // 2, k * (k + 1) // 2) for k in range(1, K + 1)]


def membership(K: int) -> torch.Tensor:
    """``(K, K(K+1)/2)`` boolean matrix, True where mask ``m`` belongs to proposal ``k``."""
    M = K * (K + 1) // 2
    member = torch.zeros(K, M, dtype=torch.bool)
    for k, sl in enumerate(proposal_slices(K)):
        member[k, sl] = True
    return member


def sequence_positions(lengths: torch.Tensor, T: int, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample normalized positions ``t / (len - 1)`` and the validity flags, both ``(B, T)``."""
    t = torch.arange(T, dtype=dtype).unsqueeze(0)
    denom = (lengths.to(dtype) - 1).clamp_min(1).unsqueeze(1)
    valid = t < lengths.unsqueeze(1)
    return t / denom, valid


def assemble_positive(params: GaussianParams, weights: torch.Tensor, T: int):
    """Masks ``(E, T)`` and their importance-weighted mixture curve ``(T,)``."""
    if weights.shape[-1] != params.E:
        raise InvalidParam(f"{weights.shape[-1]} weights for {params.E} masks")
    masks = gaussian_mask(params.centers, params.widths, T)
    return masks, mixture_pool(masks, weights)


def _init_head(head: nn.Linear, fan_in: int) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    nn.init.uniform_(head.weight, -bound, bound)
    nn.init.zeros_(head.bias)


class ProposalGenerator(nn.Module):
    def __init__(self, config: GroundingConfig):
        super().__init__()
        self.config = config
        d = config.d_G
        self.video_in = nn.Linear(config.d_V, d)
        self.word_embed = nn.Embedding(config.vocab_size, config.d_Q)
        self.word_in = nn.Linear(config.d_Q, d)
        self.register_buffer("pos", sinusoid_table(max(config.T_max, config.N_max) + 1, d).float(),
                             persistent=False)
        self.v_cls = nn.Parameter(torch.randn(d))
        self.text_encoder = Encoder(d, config.heads, config.layers, config.ff_mult)
        self.video_decoder = Decoder(d, config.heads, config.layers, config.ff_mult)
        M = config.num_positive_masks
        self.center_head = nn.Linear(d, M)
        self.width_head = nn.Linear(d, M)
        self.easy_center_head = nn.Linear(d, config.K * config.E_en)
        self.easy_width_head = nn.Linear(d, config.K * config.E_en)
        for head in (self.center_head, self.width_head, self.easy_center_head, self.easy_width_head):
            _init_head(head, d)

    def encode_context(self, video, video_len, query, query_len):
        """Return the ``(B, T+1, d_G)`` context features and the CLS row ``(B, d_G)``."""
        if bool((query_len < 1).any()):
            raise EmptyQuery("query has no valid tokens")
        B, T, _ = video.shape
        N = query.shape[1]
        pos = self.pos.to(video.dtype)
        words = self.word_in(self.word_embed(query)) + pos[:N]
        word_pad = torch.arange(N).unsqueeze(0) >= query_len.unsqueeze(1)
        text = self.text_encoder(words, key_bias(None, word_pad, video.dtype))

        segs = self.video_in(video) + pos[:T]
        cls = self.v_cls.to(video.dtype).expand(B, 1, -1)
        seq = torch.cat([segs, cls], dim=1)
        seg_pad = torch.arange(T + 1).unsqueeze(0) >= video_len.unsqueeze(1)
        seg_pad[:, T] = False
        G = self.video_decoder(seq, text, key_bias(None, seg_pad, video.dtype),
                               key_bias(None, word_pad, video.dtype))
        return G, G[:, T]

    def all_positive_params(self, cls: torch.Tensor) -> GaussianParams:
        centers = torch.sigmoid(self.center_head(cls))
        widths = torch.sigmoid(self.width_head(cls)) / self.config.sigma
        return GaussianParams(centers, widths)

    def positive_params(self, cls: torch.Tensor, k: int) -> GaussianParams:
        """Centers and widths of the ``k``-th (1-based) positive proposal, ``k`` of each."""
        if not 1 <= k <= self.config.K:
            raise InvalidParam(f"proposal index {k} outside [1, {self.config.K}]")
        sl = proposal_slices(self.config.K)[k - 1]
        W_c, b_c = self.center_head.weight[sl], self.center_head.bias[sl]
        W_s, b_s = self.width_head.weight[sl], self.width_head.bias[sl]
        centers = torch.sigmoid(cls @ W_c.T.to(cls.dtype) + b_c.to(cls.dtype))
        widths = torch.sigmoid(cls @ W_s.T.to(cls.dtype) + b_s.to(cls.dtype)) / self.config.sigma
        return GaussianParams(centers, widths)

    def easy_negative_params(self, cls: torch.Tensor) -> GaussianParams:
        shape = cls.shape[:-1] + (self.config.K, self.config.E_en)
        centers = torch.sigmoid(self.easy_center_head(cls)).reshape(shape)
        widths = (torch.sigmoid(self.easy_width_head(cls)) / self.config.sigma).reshape(shape)
        return GaussianParams(centers, widths)

    def mine_negatives(self, cls: torch.Tensor, T: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Easy negative curves ``(..., K, T)`` (unweighted mean of masks) and the all-ones hard negative."""
        p = self.easy_negative_params(cls)
        easy = gaussian_mask(p.centers, p.widths, T).mean(-2)
        hard = torch.ones(cls.shape[:-1] + (T,), dtype=cls.dtype)
        return easy, hard

    def forward(self, video, video_len, query, query_len) -> ProposalSet:
        _, cls = self.encode_context(video, video_len, query, query_len)
        T = video.shape[1]
        positions, valid = sequence_positions(video_len, T, video.dtype)
        pos = self.all_positive_params(cls)
        log_masks = gaussian_log_mask(pos.centers, pos.widths, positions=positions.unsqueeze(1))
        neg = self.easy_negative_params(cls)
        easy_log = gaussian_log_mask(neg.centers, neg.widths, positions=positions[:, None, None, :])
        easy_log = torch.logsumexp(easy_log, dim=-2) - math.log(self.config.E_en)
        hard_log = torch.zeros_like(positions)
        return ProposalSet(pos.centers, pos.widths, log_masks, neg.centers, neg.widths,
                           easy_log, hard_log, valid)
