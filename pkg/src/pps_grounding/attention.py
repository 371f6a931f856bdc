"""Pre-norm transformer blocks whose attention can be conditioned on a temporal mask.

Conditioning multiplies the post-softmax attention map by the mask value of
each key and renormalizes every row.  That is computed as
``softmax(scores + log(mask))``, which is the same quantity but leaves the
scores untouched when the mask is 1 and gives exact zeros where it is 0.
"""
from __future__ import annotations

import math

import torch
from torch import nn
import torch.nn.functional as F

from .errors import DegenerateMask


def safe_log_mask(mask: torch.Tensor) -> torch.Tensor:
    """``log(mask)`` with ``-inf`` (and zero gradient) where the mask is 0."""
    positive = mask > 0
    logged = torch.log(torch.where(positive, mask, torch.ones_like(mask)))
    return torch.where(positive, logged, torch.full_like(mask, float("-inf")))


def key_bias(log_mask: torch.Tensor | None, padding: torch.Tensor | None,
             dtype: torch.dtype | None = None) -> torch.Tensor | None:
    """Combine a log-mask ``(B, L)`` and a padding flag ``(B, L)`` into one additive bias."""
    if log_mask is None and padding is None:
        return None
    if log_mask is None:
        dtype = dtype or torch.get_default_dtype()
        return torch.zeros(padding.shape, dtype=dtype).masked_fill(padding, float("-inf"))
    if padding is None:
        bias = log_mask
    else:
        bias = log_mask.masked_fill(padding, float("-inf"))
    if bool(torch.isneginf(bias).all(dim=-1).any()):
        raise DegenerateMask("mask is zero over every valid position")
    return bias


def sinusoid_table(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    freq = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq)[:, : dim // 2]
    return table


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.keep_attention = False
        self.last_attention: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, memory: torch.Tensor, bias: torch.Tensor | None = None):
        B, Lq, D = x.shape
        Lk = memory.shape[1]
        q = self.q_proj(x).view(B, Lq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(memory).view(B, Lk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(memory).view(B, Lk, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if bias is not None:
            scores = scores + bias[:, None, None, :]
        attn = torch.softmax(scores, dim=-1)
        if self.keep_attention:
            self.last_attention = attn.detach()
        out = (attn @ v).transpose(1, 2).reshape(B, Lq, D)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * mult)
        self.fc2 = nn.Linear(dim * mult, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ff_mult: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_mult)

    def forward(self, x, bias=None):
        h = self.norm1(x)
        x = x + self.attn(h, h, bias)
        return x + self.ff(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ff_mult: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_mult)

    def forward(self, x, memory, self_bias=None, memory_bias=None):
        h = self.norm1(x)
        x = x + self.self_attn(h, h, self_bias)
        x = x + self.cross_attn(self.norm2(x), memory, memory_bias)
        return x + self.ff(self.norm3(x))


class Encoder(nn.Module):
    def __init__(self, dim: int, heads: int, layers: int, ff_mult: int):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(dim, heads, ff_mult) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)

    def forward(self, x, bias=None):
        for layer in self.layers:
            x = layer(x, bias)
        return self.norm(x)


class Decoder(nn.Module):
    def __init__(self, dim: int, heads: int, layers: int, ff_mult: int):
        super().__init__()
        self.layers = nn.ModuleList(DecoderLayer(dim, heads, ff_mult) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)

    def forward(self, x, memory, self_bias=None, memory_bias=None):
        for layer in self.layers:
            x = layer(x, memory, self_bias, memory_bias)
        return self.norm(x)


def attention_modules(module: nn.Module) -> list[MultiHeadAttention]:
    return [m for m in module.modules() if isinstance(m, MultiHeadAttention)]
