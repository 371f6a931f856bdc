"""Differentiable Gaussian temporal masks, mixture pooling and interval scoring.

Mask functions accept Python floats or torch tensors and broadcast over
leading dimensions, so the same code serves the unit checks and the batched
model.  Interval helpers work on detached values and return plain floats.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import torch

from .errors import DegenerateSequence, InvalidParam, InvalidSimplex

TensorLike = Union[float, Sequence[float], np.ndarray, torch.Tensor]

SIMPLEX_TOL = 1e-6


def _as_tensor(x: TensorLike, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(x, dtype=dtype)


def normalized_positions(T: int, dtype=torch.float64) -> torch.Tensor:
    """Positions ``t / (T - 1)`` for ``t = 0..T-1``."""
    if T < 2:
        raise DegenerateSequence(f"need at least 2 segments, got T={T}")
    return torch.arange(T, dtype=dtype) / (T - 1)


def gaussian_log_mask(center: TensorLike, width: TensorLike, T: int | None = None,
                      positions: torch.Tensor | None = None) -> torch.Tensor:
    """Log of :func:`gaussian_mask`; finite everywhere, so it never underflows.

    ``center`` and ``width`` broadcast together to shape ``S``; the result has
    shape ``S + (T,)``.  Pass ``positions`` (broadcastable to ``S + (T,)``)
    instead of ``T`` for per-sample sequence lengths.
    """
    c = _as_tensor(center)
    s = _as_tensor(width, c)
    if bool(torch.any(s.detach() <= 0)):
        raise InvalidParam("mask width must be positive")
    if positions is None:
        if T is None:
            raise TypeError("either T or positions is required")
        positions = normalized_positions(T, dtype=c.dtype)
    z = (positions - c.unsqueeze(-1)) / s.unsqueeze(-1)
    return -z * z


def gaussian_mask(center: TensorLike, width: TensorLike, T: int | None = None,
                  positions: torch.Tensor | None = None) -> torch.Tensor:
    """``exp(-((t/(T-1) - center) / width)^2)`` evaluated at ``t = 0..T-1``."""
    return torch.exp(gaussian_log_mask(center, width, T, positions))


def check_simplex(weights: torch.Tensor, tol: float = SIMPLEX_TOL) -> None:
    w = weights.detach()
    if bool(torch.any(w < 0)):
        raise InvalidSimplex("weights must be nonnegative")
    total = w.sum(-1)
    if bool(torch.any((total - 1).abs() > tol)):
        raise InvalidSimplex(f"weights must sum to 1 (got {total.tolist()})")


def mixture_pool(masks: TensorLike, weights: TensorLike, validate: bool = True) -> torch.Tensor:
    """Convex combination ``sum_l weights[l] * masks[l]``.

    masks: ``(..., E, T)``; weights: ``(..., E)``.
    """
    m = _as_tensor(masks)
    w = _as_tensor(weights, m)
    if m.dim() < 2:
        raise InvalidParam("masks must have shape (..., E, T)")
    if w.shape[-1] != m.shape[-2]:
        raise InvalidParam(f"{w.shape[-1]} weights for {m.shape[-2]} masks")
    if validate:
        check_simplex(w)
    return (w.unsqueeze(-1) * m).sum(-2)


def log_mixture_pool(log_masks: torch.Tensor, log_weights: torch.Tensor) -> torch.Tensor:
    """``log(mixture_pool(exp(log_masks), exp(log_weights)))`` computed stably."""
    return torch.logsumexp(log_weights.unsqueeze(-1) + log_masks, dim=-2)


@dataclass(frozen=True)
class Interval:
    start: float
    end: float

    def __post_init__(self):
        if not (0.0 <= self.start <= self.end <= 1.0):
            raise InvalidParam(f"invalid interval [{self.start}, {self.end}]")

    @property
    def length(self) -> float:
        return self.end - self.start

    def as_tuple(self) -> tuple[float, float]:
        return (self.start, self.end)


def curve_to_interval(curve: TensorLike, theta: float = 0.5) -> Interval:
    """Span from the first to the last index where ``curve >= theta * max(curve)``.

    Indices are mapped to ``[0, 1]`` by dividing by ``T - 1``; a one-element
    curve maps to ``[0, 0]``.
    """
    if isinstance(curve, torch.Tensor):
        values = curve.detach().cpu().numpy()
    else:
        values = np.asarray(curve, dtype=np.float64)
    values = values.reshape(-1)
    if values.size == 0:
        raise InvalidParam("empty curve")
    if not (0.0 < theta <= 1.0):
        raise InvalidParam(f"theta must be in (0, 1], got {theta}")
    kept = np.flatnonzero(values >= theta * values.max())
    denom = max(values.size - 1, 1)
    return Interval(float(kept[0]) / denom, float(kept[-1]) / denom)


def interval_iou(a: Interval, b: Interval) -> float:
    """Temporal IoU; two identical zero-length intervals score 1."""
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = max(a.end, b.end) - min(a.start, b.start)
    if union <= 0.0:
        return 1.0 if (a.start == b.start and a.end == b.end) else 0.0
    return inter / union
