"""Text-based timbre cross-attention.

Target-side frame-level text columns query reference-side text columns;
the resulting row-stochastic attention selects fine timbre features from the
reference, and the raw query is added back as a residual:

    scores[t, r] = <q_t, k_r> / sqrt(F)      (row max-subtracted softmax)
    out = attention @ V^T + Q

Scores may be computed from learned linear projections of Q and K
(projections="qk", the default) or from the raw encodings ("none");
"qkv" additionally projects V. The residual always adds the unprojected Q,
so out == Q exactly whenever V is zero.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ConfigError
from .nnutil import key_padding_mask

PROJECTION_MODES = ("none", "qk", "qkv")


class TimbreCrossAttention(nn.Module):
    def __init__(self, dim, projections: str = "qk"):
        super().__init__()
        if projections not in PROJECTION_MODES:
            raise ConfigError(
                f"unknown projections mode {projections!r}, expected one of {PROJECTION_MODES}"
            )
        self.dim = dim
        self.projections = projections
        if projections in ("qk", "qkv"):
            self.q_proj = nn.Linear(dim, dim)
            self.k_proj = nn.Linear(dim, dim)
        if projections == "qkv":
            self.v_proj = nn.Linear(dim, dim)

    def forward(self, q, k, v, key_lengths=None):
        """q: [B, F, T_t], k/v: [B, F, T_r] -> (out [B, F, T_t], attn [B, T_t, T_r]).

        k and v share the reference time axis. key_lengths masks padded
        reference frames out of the softmax.
        """
        if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
            raise ConfigError("tca expects batched [B, F, T] tensors")
        if q.shape[1] != self.dim or k.shape[1] != self.dim or v.shape[1] != self.dim:
            raise ConfigError(
                f"feature dim mismatch: q {q.shape[1]}, k {k.shape[1]}, "
                f"v {v.shape[1]}, expected {self.dim}"
            )
        if k.shape[-1] != v.shape[-1]:
            raise ConfigError(
                f"key/value time axes differ: {k.shape[-1]} vs {v.shape[-1]}"
            )
        if k.shape[-1] == 0:
            raise ConfigError("reference has no frames")

        q_s, k_s, v_s = q, k, v
        if self.projections in ("qk", "qkv"):
            q_s = self.q_proj(q.transpose(1, 2)).transpose(1, 2)
            k_s = self.k_proj(k.transpose(1, 2)).transpose(1, 2)
        if self.projections == "qkv":
            v_s = self.v_proj(v.transpose(1, 2)).transpose(1, 2)

        scores = torch.einsum("bft,bfr->btr", q_s, k_s) / math.sqrt(self.dim)
        if key_lengths is not None:
            pad = key_padding_mask(key_lengths, k.shape[-1])  # [B, T_r]
            scores = scores.masked_fill(pad[:, None, :], float("-inf"))
        scores = scores - scores.max(dim=-1, keepdim=True).values
        attn = torch.softmax(scores, dim=-1)
        out = torch.einsum("btr,bfr->bft", attn, v_s) + q
        return out, attn


def shared_phoneme_attention_score(attn, target_phonemes, target_durations,
                                   reference_phonemes, reference_durations):
    """Fraction of attention mass landing on same-phoneme reference frames.

    For each target frame whose phoneme also occurs in the reference, sum the
    attention it places on reference frames of that phoneme; return the mean
    over those target frames, or None when the phoneme sets are disjoint.
    attn: [T_t, T_r].
    """
    t_labels = _frame_labels(target_phonemes, target_durations)
    r_labels = _frame_labels(reference_phonemes, reference_durations)
    if attn.shape != (len(t_labels), len(r_labels)):
        raise ConfigError(
            f"attention shape {tuple(attn.shape)} does not match frame counts "
            f"({len(t_labels)}, {len(r_labels)})"
        )
    shared = set(t_labels) & set(r_labels)
    if not shared:
        return None
    r_labels_t = torch.as_tensor(r_labels, device=attn.device)
    masses = []
    for t, p in enumerate(t_labels):
        if p in shared:
            masses.append(attn[t, r_labels_t == p].sum())
    return float(torch.stack(masses).mean())


def uniform_attention_base_rate(target_phonemes, target_durations,
                                reference_phonemes, reference_durations):
    """Score a uniform attention matrix would get: the duration-weighted
    share of reference frames carrying each shared phoneme."""
    t_labels = _frame_labels(target_phonemes, target_durations)
    r_labels = _frame_labels(reference_phonemes, reference_durations)
    shared = set(t_labels) & set(r_labels)
    if not shared:
        return None
    total_ref = len(r_labels)
    counts = {}
    for p in r_labels:
        counts[p] = counts.get(p, 0) + 1
    rates = [counts[p] / total_ref for p in t_labels if p in shared]
    return sum(rates) / len(rates)


def _frame_labels(phonemes, durations):
    if len(phonemes) != len(durations):
        raise ConfigError("phoneme and duration sequences differ in length")
    labels = []
    for p, d in zip(phonemes, durations):
        labels.extend([int(p)] * int(d))
    return labels
