"""Text frontend: transformer text encoder, duration predictor, length regulator.

The encoder maps a phoneme id sequence to an [F x L] encoding; the duration
predictor emits per-phoneme log durations (trained against log(d+1) targets,
exported as clamp(round(expm1(.)), 1)); the length regulator expands
phoneme-level columns to frame rate by hard repetition.

All forward passes take [B, *] batches; lengths mark real content, everything
past them is padding and is zeroed/masked so batching never changes values.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ConfigError
from .nnutil import key_padding_mask, sequence_mask, sinusoid_table


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, dim, n_heads, ff_mult=4):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, n_heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, ff_mult * dim),
            nn.ReLU(),
            nn.Linear(ff_mult * dim, dim),
        )

    def forward(self, x, pad_mask=None):
        # x: [B, L, F]; pad_mask: [B, L] bool, True on padding
        h = self.norm1(x)
        attn_out, _ = self.attn(h, h, h, key_padding_mask=pad_mask, need_weights=False)
        x = x + attn_out
        x = x + self.ff(self.norm2(x))
        return x


class TextEncoder(nn.Module):
    """Stacked transformer blocks over embedded phonemes with sinusoidal positions."""

    def __init__(self, vocab_size, dim=256, n_blocks=8, n_heads=4, ff_mult=4, max_len=2000):
        super().__init__()
        self.vocab_size = vocab_size
        self.dim = dim
        self.embedding = nn.Embedding(vocab_size, dim)
        self.register_buffer("positions", sinusoid_table(max_len, dim), persistent=False)
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, n_heads, ff_mult) for _ in range(n_blocks)
        )
        self.out_norm = nn.LayerNorm(dim)

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """ids: [B, L] int -> encoding [B, F, L]."""
        if ids.ndim != 2:
            raise ConfigError(f"expected [B, L] phoneme ids, got shape {tuple(ids.shape)}")
        batch, length = ids.shape
        if length == 0:
            raise ConfigError("empty phoneme sequence")
        if lengths is None:
            lengths = torch.full((batch,), length, dtype=torch.long, device=ids.device)
        if (lengths < 1).any():
            raise ConfigError("empty phoneme sequence in batch")
        valid = sequence_mask(lengths, length).squeeze(1).bool()
        checked = torch.where(valid, ids, torch.zeros_like(ids))
        if (checked < 0).any() or (checked >= self.vocab_size).any():
            raise ConfigError(
                f"phoneme id out of vocabulary (size {self.vocab_size})"
            )
        pad = key_padding_mask(lengths, length)
        x = self.embedding(checked) * (self.dim**0.5)
        x = x + self.positions[:length].to(x.dtype)
        for block in self.blocks:
            x = block(x, pad_mask=pad)
        x = self.out_norm(x)
        x = x * valid.unsqueeze(-1).to(x.dtype)
        return x.transpose(1, 2)


class DurationPredictor(nn.Module):
    """Two conv layers + linear head predicting per-phoneme log durations."""

    def __init__(self, dim=256, hidden=None, kernel=3):
        super().__init__()
        hidden = hidden or dim
        self.conv1 = nn.Conv1d(dim, hidden, kernel, padding=kernel // 2)
        self.norm1 = nn.LayerNorm(hidden)
        self.conv2 = nn.Conv1d(hidden, hidden, kernel, padding=kernel // 2)
        self.norm2 = nn.LayerNorm(hidden)
        self.head = nn.Linear(hidden, 1)

    def forward(self, encoding: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """encoding: [B, F, L] -> log durations [B, L]."""
        batch, _, length = encoding.shape
        if lengths is None:
            lengths = torch.full((batch,), length, dtype=torch.long, device=encoding.device)
        mask = sequence_mask(lengths, length).to(encoding.dtype)
        x = encoding * mask
        x = torch.relu(self.conv1(x)) * mask
        x = self.norm1(x.transpose(1, 2)).transpose(1, 2) * mask
        x = torch.relu(self.conv2(x)) * mask
        x = self.norm2(x.transpose(1, 2)).transpose(1, 2) * mask
        out = self.head(x.transpose(1, 2)).squeeze(-1)
        return out * mask.squeeze(1)


def export_durations(log_durations: torch.Tensor) -> torch.Tensor:
    """Integer durations >= 1 from log(d+1)-domain predictions."""
    return torch.clamp(torch.round(torch.expm1(log_durations)), min=1).long()


def duration_loss(predicted_log: torch.Tensor, true_durations: torch.Tensor,
                  mask: torch.Tensor | None = None) -> torch.Tensor:
    """MSE between predictions and log(d+1) targets, averaged over real positions."""
    if predicted_log.shape != true_durations.shape:
        raise ConfigError(
            f"duration shapes differ: {tuple(predicted_log.shape)} vs "
            f"{tuple(true_durations.shape)}"
        )
    target = torch.log1p(true_durations.to(predicted_log.dtype))
    sq = (predicted_log - target) ** 2
    if mask is None:
        return sq.mean()
    mask = mask.to(predicted_log.dtype)
    return (sq * mask).sum() / mask.sum().clamp(min=1.0)


def length_regulate(encoding: torch.Tensor, durations: torch.Tensor) -> torch.Tensor:
    """Expand [F, L] phoneme columns to [F, sum(durations)] by repetition.

    Column t of the output copies the encoding column of the phoneme whose
    duration interval covers frame t.
    """
    if encoding.ndim != 2:
        raise ConfigError(f"expected [F, L] encoding, got shape {tuple(encoding.shape)}")
    durations = torch.as_tensor(durations, dtype=torch.long, device=encoding.device)
    if durations.ndim != 1 or durations.shape[0] != encoding.shape[1]:
        raise ConfigError(
            f"durations length {tuple(durations.shape)} does not match "
            f"{encoding.shape[1]} phonemes"
        )
    if (durations < 1).any():
        raise ConfigError("durations must be >= 1")
    return torch.repeat_interleave(encoding, durations, dim=1)


def length_regulate_batch(encoding: torch.Tensor, durations: torch.Tensor,
                          lengths: torch.Tensor):
    """Batched expansion with right padding.

    encoding: [B, F, L]; durations: [B, L] (entries past lengths ignored).
    Returns (expanded [B, F, T_max], frame_lengths [B]).
    """
    batch = encoding.shape[0]
    expanded = []
    frame_lengths = []
    for b in range(batch):
        n = int(lengths[b])
        exp = length_regulate(encoding[b, :, :n], durations[b, :n])
        expanded.append(exp)
        frame_lengths.append(exp.shape[1])
    t_max = max(frame_lengths)
    out = encoding.new_zeros(batch, encoding.shape[1], t_max)
    for b, exp in enumerate(expanded):
        out[b, :, : exp.shape[1]] = exp
    return out, torch.tensor(frame_lengths, dtype=torch.long, device=encoding.device)
