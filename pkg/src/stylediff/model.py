"""Full acoustic model: text frontend + style encoders + cross-attention + diffusion.

Conditioning wiring: the frame-expanded target text queries the
frame-expanded reference text to select fine timbre features (use_tca);
with use_fine_timbre off the pooled speaker vector is simply added to the
expanded target text instead. The pooled rhythm vector conditions every
denoiser layer through SALN. Reference-side expansion always uses the
corpus ground-truth durations so timbre features stay frame-aligned with
the reference text.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import TrainConfig
from .corpus import ToyUtterance
from .diffusion import Denoiser, build_schedule, diffusion_loss, sample
from .errors import ConfigError
from .etnet import (
    ETNet,
    classification_losses,
    coarse_orthogonality,
    fine_orthogonality,
)
from .mel import MelSpectrogram, NormStats, denormalize_array, normalize_array
from .nnutil import sequence_mask
from .tca import TimbreCrossAttention
from .text import (
    DurationPredictor,
    TextEncoder,
    duration_loss,
    export_durations,
    length_regulate,
    length_regulate_batch,
)


@dataclass
class Batch:
    """Padded training batch of (target, reference) same-speaker pairs."""

    target_phonemes: torch.Tensor   # [B, L_t] long
    target_text_lengths: torch.Tensor
    target_durations: torch.Tensor  # [B, L_t] long, ground truth
    target_mel: torch.Tensor        # [B, n_mels, T_t] normalized
    target_frame_lengths: torch.Tensor
    ref_phonemes: torch.Tensor
    ref_text_lengths: torch.Tensor
    ref_durations: torch.Tensor
    ref_mel: torch.Tensor
    ref_frame_lengths: torch.Tensor
    speaker_id: torch.Tensor        # [B]
    rhythm_id: torch.Tensor         # [B]


def collate_pairs(pairs, stats: NormStats) -> Batch:
    """pairs: list of (target ToyUtterance, reference ToyUtterance)."""
    for target, ref in pairs:
        if target.speaker_id != ref.speaker_id:
            raise ConfigError(
                f"pair ({target.utterance_id}, {ref.utterance_id}) mixes speakers "
                f"{target.speaker_id} and {ref.speaker_id}"
            )
        if target.utterance_id == ref.utterance_id:
            raise ConfigError(f"utterance {target.utterance_id} paired with itself")

    def pad_ids(seqs):
        length = max(len(s) for s in seqs)
        out = torch.zeros(len(seqs), length, dtype=torch.long)
        for i, s in enumerate(seqs):
            out[i, : len(s)] = torch.as_tensor(s, dtype=torch.long)
        return out, torch.tensor([len(s) for s in seqs], dtype=torch.long)

    def pad_mels(mels):
        frames = max(m.frame_count for m in mels)
        out = torch.zeros(len(mels), mels[0].n_mels, frames)
        for i, m in enumerate(mels):
            data = normalize_array(m.data, stats)
            out[i, :, : m.frame_count] = torch.from_numpy(data).float()
        return out, torch.tensor([m.frame_count for m in mels], dtype=torch.long)

    targets = [t for t, _ in pairs]
    refs = [r for _, r in pairs]
    t_ph, t_len = pad_ids([t.phonemes for t in targets])
    r_ph, r_len = pad_ids([r.phonemes for r in refs])
    t_dur, _ = pad_ids([t.durations for t in targets])
    r_dur, _ = pad_ids([r.durations for r in refs])
    t_mel, t_frames = pad_mels([t.mel for t in targets])
    r_mel, r_frames = pad_mels([r.mel for r in refs])
    return Batch(
        t_ph, t_len, t_dur, t_mel, t_frames,
        r_ph, r_len, r_dur, r_mel, r_frames,
        torch.tensor([t.speaker_id for t in targets], dtype=torch.long),
        torch.tensor([r.rhythm_id for r in refs], dtype=torch.long),
    )


class AdaptiveStyleTTS(nn.Module):
    def __init__(self, config: TrainConfig):
        super().__init__()
        config.validate()
        self.config = config
        dim = config.feature_dim
        self.text_encoder = TextEncoder(
            config.vocab_size, dim=dim, n_blocks=config.text_blocks,
            n_heads=config.text_heads,
        )
        self.duration_predictor = DurationPredictor(dim)
        self.et_net = ETNet(
            n_mels=config.n_mels, dim=dim, n_speakers=config.n_speakers,
            n_rhythms=config.n_rhythms, n_convs=config.et_convs,
            n_heads=config.text_heads,
        )
        self.tca = (
            TimbreCrossAttention(dim, projections=config.tca_projections)
            if config.use_tca else None
        )
        self.denoiser = Denoiser(
            n_mels=config.n_mels, hidden=config.wavenet_hidden, cond_dim=dim,
            n_layers=config.wavenet_layers, literal_var=config.saln_literal_var,
        )
        self.schedule = build_schedule(
            beta_start=config.beta_start, beta_end=config.beta_end,
            t_steps=config.diffusion_steps, sigma_mode=config.sigma_mode,
        )

    # ------------------------------------------------------------ training

    def conditioning(self, batch: Batch, detach_style: bool = False):
        """Assemble E_mu (plus attention), pooled embeddings, and E_rhy/E_tim.

        With detach_style the style-encoder outputs enter the decoder path as
        constants: the style encoders are supervised by their label and
        orthogonality losses only, while the denoiser (and the attention
        projections) still train against whatever features they settle to.
        """
        t_enc = self.text_encoder(batch.target_phonemes, batch.target_text_lengths)
        q, t_frames = length_regulate_batch(
            t_enc, batch.target_durations, batch.target_text_lengths
        )
        e_tim, e_rhy, e_ase, e_are = self.et_net(batch.ref_mel, batch.ref_frame_lengths)
        timbre_value = e_tim.detach() if detach_style else e_tim
        speaker_vec = e_ase.detach() if detach_style else e_ase
        attn = None
        if self.config.use_tca and self.config.use_fine_timbre:
            r_enc = self.text_encoder(batch.ref_phonemes, batch.ref_text_lengths)
            k, r_frames = length_regulate_batch(
                r_enc, batch.ref_durations, batch.ref_text_lengths
            )
            if not torch.equal(r_frames, batch.ref_frame_lengths):
                raise ConfigError("reference durations disagree with reference mel frames")
            e_mu, attn = self.tca(q, k, timbre_value, key_lengths=r_frames)
        else:
            e_mu = q + speaker_vec[:, :, None]
        mask = sequence_mask(t_frames, e_mu.shape[-1]).to(e_mu.dtype)
        e_mu = e_mu * mask
        return {
            "e_mu": e_mu, "attention": attn, "target_frame_lengths": t_frames,
            "text_encoding": t_enc,
            "e_tim": e_tim, "e_rhy": e_rhy, "e_ase": e_ase, "e_are": e_are,
        }

    def training_losses(self, batch: Batch, generator: torch.Generator | None = None):
        """Raw per-term losses (unweighted); disabled terms are simply absent."""
        cfg = self.config
        cond = self.conditioning(batch, detach_style=True)
        if not torch.equal(cond["target_frame_lengths"], batch.target_frame_lengths):
            raise ConfigError("target durations disagree with target mel frames")

        losses = {}
        frame_mask = sequence_mask(
            batch.target_frame_lengths, batch.target_mel.shape[-1]
        ).to(batch.target_mel.dtype)
        rhythm_cond = cond["e_are"].detach()

        def denoise_fn(m_t, t):
            return self.denoiser(
                m_t, cond["e_mu"], t, rhythm_cond, lengths=batch.target_frame_lengths
            )

        losses["l_diff"] = diffusion_loss(
            denoise_fn, batch.target_mel, self.schedule,
            generator=generator, mask=frame_mask,
        )
        log_d = self.duration_predictor(cond["text_encoding"], batch.target_text_lengths)
        text_mask = sequence_mask(
            batch.target_text_lengths, batch.target_phonemes.shape[1]
        ).squeeze(1)
        losses["l_dur"] = duration_loss(log_d, batch.target_durations, mask=text_mask)
        l_spk, l_rhy = classification_losses(
            cond["e_ase"], cond["e_are"], batch.speaker_id, batch.rhythm_id, self.et_net
        )
        losses["l_spk"] = l_spk
        losses["l_rhy"] = l_rhy
        if cfg.use_aort:
            losses["l_aort"] = coarse_orthogonality(cond["e_ase"], cond["e_are"]).mean()
        if cfg.use_ort:
            losses["l_ort"] = fine_orthogonality(
                cond["e_tim"], cond["e_rhy"], variant=cfg.ort_variant
            ).mean()
        return losses

    # ------------------------------------------------------------ inference

    @torch.no_grad()
    def synthesize(self, target_phonemes, reference: ToyUtterance, stats: NormStats,
                   generator: torch.Generator | None = None,
                   target_durations=None):
        """Full pipeline from phoneme ids and a reference utterance to a mel.

        target_durations overrides the duration predictor (ground-truth
        teacher forcing for diagnostics); otherwise durations are predicted.
        Returns dict with the denormalized mel, durations, and attention.
        """
        self.eval()
        ids = torch.as_tensor(target_phonemes, dtype=torch.long)[None]
        t_enc = self.text_encoder(ids)
        if target_durations is None:
            log_d = self.duration_predictor(t_enc)
            durations = export_durations(log_d)[0]
        else:
            durations = torch.as_tensor(target_durations, dtype=torch.long)
        q = length_regulate(t_enc[0], durations)[None]

        ref_mel = torch.from_numpy(
            normalize_array(reference.mel.data, stats)
        ).float()[None]
        e_tim, e_rhy, e_ase, e_are = self.et_net(ref_mel)
        attn = None
        if self.config.use_tca and self.config.use_fine_timbre:
            r_enc = self.text_encoder(
                torch.as_tensor(reference.phonemes, dtype=torch.long)[None]
            )
            k = length_regulate(r_enc[0], torch.as_tensor(reference.durations))[None]
            if k.shape[-1] != ref_mel.shape[-1]:
                raise ConfigError("reference durations disagree with reference mel frames")
            e_mu, attn = self.tca(q, k, e_tim)
        else:
            e_mu = q + e_ase[:, :, None]

        def denoise_fn(m_t, t):
            return self.denoiser(m_t, e_mu, t, e_are)

        t_frames = int(durations.sum())
        mel_norm = sample(
            denoise_fn, (1, self.config.n_mels, t_frames), self.schedule,
            generator=generator,
        )
        mel = MelSpectrogram(denormalize_array(mel_norm[0].numpy(), stats))
        return {
            "mel": mel,
            "mel_normalized": mel_norm[0].numpy().astype(np.float32),
            "durations": durations.tolist(),
            "attention": None if attn is None else attn[0].numpy(),
        }
