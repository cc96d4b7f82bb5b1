"""Shared tensor helpers for masked batched sequence models.

Batched forward passes here are (exactly, not approximately) equivalent to
running each example alone: padded positions are zeroed before every conv so
they act like the zero padding a lone example would see, attention masks
padded keys, and pooled statistics divide by true lengths.
"""

from __future__ import annotations

import math

import torch


def sequence_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    """[B, 1, T] float mask, 1 inside each sequence, 0 on padding."""
    pos = torch.arange(max_len, device=lengths.device)
    return (pos[None, :] < lengths[:, None]).unsqueeze(1).to(torch.get_default_dtype())


def key_padding_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    """[B, T] bool mask for nn.MultiheadAttention, True on padding."""
    pos = torch.arange(max_len, device=lengths.device)
    return pos[None, :] >= lengths[:, None]


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of x [B, F, T] over time using mask [B, 1, T] -> [B, F]."""
    total = (x * mask).sum(dim=-1)
    return total / mask.sum(dim=-1).clamp(min=1.0)


def sinusoid_table(max_len: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """[max_len, dim] sinusoidal position encoding."""
    position = torch.arange(max_len, dtype=torch.float64)[:, None]
    div = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim)
    )
    table = torch.zeros(max_len, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: dim // 2])
    return table.to(dtype)
