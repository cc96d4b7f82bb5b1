"""Dual style encoders over the reference mel, with label and orthogonality losses.

Two architecturally identical (but unshared) encoders map an [80 x T_r] mel
to fine timbre and rhythm features [F x T_r]. Time-mean pooling yields the
global speaker and rhythm vectors fed to linear classifier heads. Two
orthogonality penalties decorrelate the pair:

    coarse: squared dot product of the pooled vectors
    fine:   squared sum over frames of per-frame inner products (default),
            or the squared Frobenius norm of the summed per-frame outer
            products when ort_variant="gram"
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ConfigError
from .nnutil import masked_mean, sequence_mask
from .text import TransformerBlock

ORT_VARIANTS = ("scalar_sum", "gram")


class StyleEncoder(nn.Module):
    """Dilated conv stack + one transformer block; [B, 80, T] -> [B, F, T].

    Dilations grow 4x per layer so the stack's receptive field spans the
    slow temporal structure (tens of frames) that rhythm lives in.
    """

    def __init__(self, n_mels=80, dim=256, n_convs=3, kernel=3, n_heads=4):
        super().__init__()
        convs = []
        norms = []
        in_ch = n_mels
        for i in range(n_convs):
            dilation = 4**i
            convs.append(
                nn.Conv1d(in_ch, dim, kernel, padding=dilation * (kernel // 2),
                          dilation=dilation)
            )
            norms.append(nn.LayerNorm(dim))
            in_ch = dim
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(norms)
        self.block = TransformerBlock(dim, n_heads)
        # final per-frame norm keeps feature scales bounded, so the
        # orthogonality penalties cannot cheat by shrinking magnitudes
        self.out_norm = nn.LayerNorm(dim)

    def forward(self, mel, lengths=None):
        batch, _, frames = mel.shape
        if frames < 1:
            raise ConfigError("reference mel must have at least one frame")
        if lengths is None:
            lengths = torch.full((batch,), frames, dtype=torch.long, device=mel.device)
        mask = sequence_mask(lengths, frames).to(mel.dtype)
        pad = ~mask.squeeze(1).bool()
        x = mel * mask
        for conv, norm in zip(self.convs, self.norms):
            x = torch.relu(conv(x)) * mask
            x = norm(x.transpose(1, 2)).transpose(1, 2) * mask
        x = self.block(x.transpose(1, 2), pad_mask=pad)
        x = self.out_norm(x).transpose(1, 2)
        return x * mask


class ETNet(nn.Module):
    """Timbre/rhythm encoder pair plus speaker and rhythm classifier heads."""

    def __init__(self, n_mels=80, dim=256, n_speakers=8, n_rhythms=4,
                 n_convs=3, n_heads=4):
        super().__init__()
        self.timbre_encoder = StyleEncoder(n_mels, dim, n_convs, n_heads=n_heads)
        self.rhythm_encoder = StyleEncoder(n_mels, dim, n_convs, n_heads=n_heads)
        self.speaker_head = nn.Linear(dim, n_speakers)
        self.rhythm_head = nn.Linear(dim, n_rhythms)
        self.n_speakers = n_speakers
        self.n_rhythms = n_rhythms

    def encode(self, mel, lengths=None):
        """[B, 80, T_r] -> (E_tim [B, F, T_r], E_rhy [B, F, T_r])."""
        return self.timbre_encoder(mel, lengths), self.rhythm_encoder(mel, lengths)

    def forward(self, mel, lengths=None):
        e_tim, e_rhy = self.encode(mel, lengths)
        if lengths is None:
            lengths = torch.full(
                (mel.shape[0],), mel.shape[-1], dtype=torch.long, device=mel.device
            )
        mask = sequence_mask(lengths, mel.shape[-1]).to(mel.dtype)
        return e_tim, e_rhy, pool(e_tim, mask), pool(e_rhy, mask)


def pool(embedding: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Exact arithmetic mean over the time axis.

    embedding: [F, T] or [B, F, T]; mask (batched only): [B, 1, T].
    """
    if embedding.ndim == 2:
        return embedding.mean(dim=-1)
    if mask is None:
        return embedding.mean(dim=-1)
    return masked_mean(embedding, mask)


def classification_losses(e_ase, e_are, speaker_id, rhythm_id, net: ETNet):
    """Cross-entropy of the two heads; speaker loss sees only e_ase, rhythm only e_are."""
    speaker_id = torch.as_tensor(speaker_id, device=e_ase.device)
    rhythm_id = torch.as_tensor(rhythm_id, device=e_are.device)
    if e_ase.ndim == 1:
        e_ase, e_are = e_ase[None], e_are[None]
        speaker_id, rhythm_id = speaker_id.reshape(1), rhythm_id.reshape(1)
    if (speaker_id < 0).any() or (speaker_id >= net.n_speakers).any():
        raise ConfigError(f"speaker label out of range [0, {net.n_speakers})")
    if (rhythm_id < 0).any() or (rhythm_id >= net.n_rhythms).any():
        raise ConfigError(f"rhythm label out of range [0, {net.n_rhythms})")
    l_spk = nn.functional.cross_entropy(net.speaker_head(e_ase), speaker_id)
    l_rhy = nn.functional.cross_entropy(net.rhythm_head(e_are), rhythm_id)
    return l_spk, l_rhy


def coarse_orthogonality(e_ase: torch.Tensor, e_are: torch.Tensor) -> torch.Tensor:
    """Squared dot product of the pooled vectors; [F] -> scalar, [B, F] -> [B]."""
    if e_ase.shape != e_are.shape:
        raise ConfigError(
            f"pooled embedding shapes differ: {tuple(e_ase.shape)} vs {tuple(e_are.shape)}"
        )
    return (e_ase * e_are).sum(dim=-1) ** 2


def fine_orthogonality(e_tim: torch.Tensor, e_rhy: torch.Tensor,
                       variant: str = "scalar_sum") -> torch.Tensor:
    """Fine-grained orthogonality penalty over [.., F, T] frame embeddings.

    scalar_sum: (sum_i <e_tim[:, i], e_rhy[:, i]>)^2, the frame-level analogue
    of the coarse penalty. gram: || sum_i e_tim[:, i] e_rhy[:, i]^T ||_F^2.
    Padded (all-zero) frames contribute nothing to either variant.
    """
    if e_tim.shape != e_rhy.shape:
        raise ConfigError(
            f"fine embedding shapes differ: {tuple(e_tim.shape)} vs {tuple(e_rhy.shape)}"
        )
    if variant == "scalar_sum":
        per_frame = (e_tim * e_rhy).sum(dim=-2)
        return per_frame.sum(dim=-1) ** 2
    if variant == "gram":
        gram = torch.matmul(e_tim, e_rhy.transpose(-1, -2))
        return (gram**2).sum(dim=(-2, -1))
    raise ConfigError(f"unknown ort_variant {variant!r}, expected one of {ORT_VARIANTS}")
