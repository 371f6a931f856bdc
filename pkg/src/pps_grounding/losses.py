"""Pull/push regularizers, reconstruction and contrastive losses, and the total objective.

Every function broadcasts over leading batch dimensions and returns one value
per batch element; callers reduce over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .errors import InvalidMargins, InvalidParam


def pull_loss(centers: Sequence[torch.Tensor], strategy: str = "distant") -> torch.Tensor:
    """Sum over proposals of the squared gap between the extreme mask centers.

    ``centers[k]`` has shape ``(..., E_k)``.  ``strategy`` selects one of the
    pulling variants: ``"distant"`` pulls the two farthest masks together,
    ``"to_mid"`` pulls both extremes toward the median mask and ``"all"``
    pulls every pair.
    """
    total = 0.0
    for c in centers:
        if c.shape[-1] < 1:
            raise InvalidParam("every proposal needs at least one center")
        if strategy == "distant":
            gap = c.max(-1).values - c.min(-1).values
            term = gap * gap
        elif strategy == "to_mid":
            ordered = c.sort(-1).values
            mid = ordered[..., (c.shape[-1] - 1) // 2]
            term = (ordered[..., 0] - mid) ** 2 + (ordered[..., -1] - mid) ** 2
        elif strategy == "all":
            diff = c.unsqueeze(-1) - c.unsqueeze(-2)
            term = (diff * diff).sum((-1, -2)) / 2
        else:
            raise InvalidParam(f"unknown pull strategy {strategy!r}")
        total = total + term
    return total


def _gram_penalty(rows: torch.Tensor, lam: float) -> torch.Tensor:
    gram = rows @ rows.transpose(-1, -2)
    eye = torch.eye(rows.shape[-2], dtype=rows.dtype, device=rows.device)
    return ((gram - lam * eye) ** 2).sum((-1, -2))


def push_intra_loss(masks: Sequence[torch.Tensor], lambda1: float) -> torch.Tensor:
    """``sum_k ||M_k M_k^T - lambda1 I||_F^2`` over per-proposal mask matrices ``(..., E_k, T)``."""
    if lambda1 <= 0:
        raise InvalidParam("lambda1 must be positive")
    total = 0.0
    for m in masks:
        total = total + _gram_penalty(m, lambda1)
    return total


def push_inter_loss(curves: torch.Tensor, lambda2: float) -> torch.Tensor:
    """``||P P^T - lambda2 I||_F^2`` for the stacked positive curves ``(..., K, T)``."""
    if lambda2 <= 0:
        raise InvalidParam("lambda2 must be positive")
    return _gram_penalty(curves, lambda2)


def rec_loss(ce_pos: torch.Tensor, ce_hard: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Best positive reconstruction plus the hard negative one.

    Returns the loss and ``k_star``, the zero-based index of the best
    positive (first index on ties).  Gradient flows through the selected
    entry only.
    """
    ce_pos = torch.as_tensor(ce_pos)
    ce_hard = torch.as_tensor(ce_hard, dtype=ce_pos.dtype)
    k_star = torch.argmin(ce_pos.detach(), dim=-1)
    best = ce_pos.gather(-1, k_star.unsqueeze(-1)).squeeze(-1)
    return best + ce_hard, k_star


def ivc_loss(ce_pos_star, ce_hard, ce_easy_star, beta1: float, beta2: float) -> torch.Tensor:
    """Triplet hinges against the hard negative (margin beta1) and the paired easy negative (beta2)."""
    if not beta1 < beta2:
        raise InvalidMargins(f"need beta1 < beta2, got {beta1} >= {beta2}")
    ce_pos_star = torch.as_tensor(ce_pos_star, dtype=torch.float64) if not torch.is_tensor(ce_pos_star) else ce_pos_star
    return (torch.clamp(ce_pos_star - ce_hard + beta1, min=0.0)
            + torch.clamp(ce_pos_star - ce_easy_star + beta2, min=0.0))


@dataclass
class LossBundle:
    rec: torch.Tensor
    ivc: torch.Tensor
    pull: torch.Tensor
    push_intra: torch.Tensor
    push_inter: torch.Tensor
    total: torch.Tensor

    NAMES = ("rec", "ivc", "pull", "push_intra", "push_inter", "total")

    def as_floats(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in self.NAMES}


def total_loss(rec, ivc, pull, push_intra, push_inter,
               alphas: Sequence[float]) -> LossBundle:
    a1, a2, a3, a4 = alphas
    if min(alphas) < 0:
        raise InvalidParam("loss weights must be nonnegative")
    parts = [torch.as_tensor(x, dtype=torch.float64) if not torch.is_tensor(x) else x
             for x in (rec, ivc, pull, push_intra, push_inter)]
    rec, ivc, pull, push_intra, push_inter = parts
    total = rec + a1 * ivc + a2 * pull + a3 * push_intra + a4 * push_inter
    return LossBundle(rec, ivc, pull, push_intra, push_inter, total)
