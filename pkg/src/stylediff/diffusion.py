"""Mel-spectrogram diffusion: noise schedule, SALN-conditioned WaveNet denoiser,
noise-prediction loss, and ancestral sampling.

Forward corruption at step t (1-indexed, t in 1..T):

    M_t = sqrt(alpha_bar_t) * M_0 + sqrt(1 - alpha_bar_t) * eps

Reverse update, iterated t = T..1 with z = 0 exactly at t = 1:

    M_{t-1} = (M_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
              + sigma_t * z

SALN normalizes each frame over the feature axis and rescales with a
scale/shift predicted from the global rhythm embedding concatenated with the
time embedding. The stated form divides by the variance; the default here
divides by the standard deviation (sqrt(var + eps)), which preserves scale
equivariance, with the literal variance division available via
literal_var=True.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, NumericalError
from .nnutil import sequence_mask

SALN_EPS = 1e-5
SIGMA_MODES = ("posterior", "beta")


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta / alpha / alpha_bar / sigma sequences (float64).

    Arrays are stored for steps 1..T; accessors take the 1-indexed step.
    alpha_bar(0) == 1 by convention.
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    @property
    def t_steps(self) -> int:
        return len(self.betas)

    def _check(self, t: int):
        if not 1 <= t <= self.t_steps:
            raise ConfigError(f"step {t} outside schedule range 1..{self.t_steps}")

    def alpha(self, t: int) -> float:
        self._check(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alpha_bars[t - 1])

    def sigma(self, t: int) -> float:
        self._check(t)
        return float(self.sigmas[t - 1])


def build_schedule(kind: str = "linear", beta_start: float = 1e-4,
                   beta_end: float = 0.06, t_steps: int = 100,
                   sigma_mode: str = "posterior") -> NoiseSchedule:
    """Linear beta schedule; alpha_bar accumulated in float64.

    beta_start == 0 is allowed as a degenerate no-noise test mode.
    sigma_mode "posterior" uses beta_t * (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)
    (with alpha_bar_0 := 1, so sigma_1 = 0); "beta" uses sigma_t^2 = beta_t.
    """
    if kind != "linear":
        raise ConfigError(f"unknown schedule kind {kind!r}")
    if t_steps < 1:
        raise ConfigError("schedule needs at least one step")
    if not 0.0 <= beta_start <= beta_end < 1.0:
        raise ConfigError(
            f"invalid beta range [{beta_start}, {beta_end}]; need 0 <= start <= end < 1"
        )
    if sigma_mode not in SIGMA_MODES:
        raise ConfigError(f"unknown sigma_mode {sigma_mode!r}, expected {SIGMA_MODES}")
    betas = np.linspace(beta_start, beta_end, t_steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if sigma_mode == "beta":
        sigmas = np.sqrt(betas)
    else:
        prev = np.concatenate([[1.0], alpha_bars[:-1]])
        denom = 1.0 - alpha_bars
        var = np.where(denom > 0, betas * (1.0 - prev) / np.where(denom > 0, denom, 1.0), 0.0)
        sigmas = np.sqrt(var)
    return NoiseSchedule(betas, alphas, alpha_bars, sigmas)


def saln(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor,
         eps: float = SALN_EPS, literal_var: bool = False) -> torch.Tensor:
    """Per-frame feature normalization with conditional scale/shift.

    x: [F, T] or [B, F, T]; gamma/beta: [F] or [B, F], broadcast over time.
    """
    mean = x.mean(dim=-2, keepdim=True)
    var = x.var(dim=-2, keepdim=True, unbiased=False)
    denom = (var + eps) if literal_var else torch.sqrt(var + eps)
    normed = (x - mean) / denom
    return gamma.unsqueeze(-1) * normed + beta.unsqueeze(-1)


class TimeEmbedding(nn.Module):
    """Sinusoidal encoding of the step index followed by a 2-layer map."""

    def __init__(self, dim):
        super().__init__()
        self.dim = dim
        self.net = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        """t: [B] int steps -> [B, F]."""
        half = self.dim // 2
        freqs = torch.exp(
            torch.arange(half, device=t.device, dtype=torch.float64)
            * (-math.log(10000.0) / max(half - 1, 1))
        )
        args = t[:, None].to(torch.float64) * freqs[None, :]
        enc = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
        if enc.shape[-1] < self.dim:
            enc = torch.nn.functional.pad(enc, (0, self.dim - enc.shape[-1]))
        param = next(self.net.parameters())
        return self.net(enc.to(param.dtype))


class ResidualBlock(nn.Module):
    """Dilated gated conv with per-layer conditioning and SALN modulation."""

    def __init__(self, hidden, cond_dim, saln_cond_dim, kernel=3, dilation=1,
                 literal_var=False):
        super().__init__()
        self.dilated = nn.Conv1d(
            hidden, 2 * hidden, kernel, padding=dilation * (kernel // 2), dilation=dilation
        )
        self.cond_proj = nn.Conv1d(cond_dim, 2 * hidden, 1)
        self.out_proj = nn.Conv1d(hidden, 2 * hidden, 1)
        self.saln_affine = nn.Linear(saln_cond_dim, 2 * hidden)
        self.literal_var = literal_var

    def forward(self, x, cond, saln_cond, mask):
        # x: [B, H, T]; cond: [B, C, T]; saln_cond: [B, 2F]
        h = self.dilated(x * mask) + self.cond_proj(cond * mask)
        gate_a, gate_b = h.chunk(2, dim=1)
        h = torch.tanh(gate_a) * torch.sigmoid(gate_b)
        h = self.out_proj(h * mask)
        residual, skip = h.chunk(2, dim=1)
        gamma, beta = self.saln_affine(saln_cond).chunk(2, dim=-1)
        out = saln(x + residual, gamma, beta, literal_var=self.literal_var)
        return out * mask, skip * mask


class Denoiser(nn.Module):
    """Modified WaveNet noise predictor eps_theta(M_t, E_mu, E_t, E_are).

    The frame-aligned conditioner E_mu enters additively through a per-layer
    projection; the global rhythm embedding and the time embedding enter only
    through each layer's SALN scale/shift.
    """

    def __init__(self, n_mels=80, hidden=256, cond_dim=256, n_layers=20,
                 kernel=3, dilation_cycle=4, literal_var=False):
        super().__init__()
        self.n_mels = n_mels
        self.cond_dim = cond_dim
        self.input_proj = nn.Conv1d(n_mels, hidden, 1)
        self.time_embedding = TimeEmbedding(cond_dim)
        self.blocks = nn.ModuleList(
            ResidualBlock(
                hidden,
                cond_dim,
                2 * cond_dim,
                kernel,
                dilation=2 ** (i % dilation_cycle),
                literal_var=literal_var,
            )
            for i in range(n_layers)
        )
        self.skip_proj = nn.Conv1d(hidden, hidden, 1)
        self.output_proj = nn.Conv1d(hidden, n_mels, 1)

    def forward(self, m_t, e_mu, t, e_are, lengths=None):
        """m_t: [B, n_mels, T]; e_mu: [B, F, T]; t: [B] int; e_are: [B, F]."""
        if m_t.shape[0] != e_mu.shape[0] or m_t.shape[-1] != e_mu.shape[-1]:
            raise ConfigError(
                f"conditioner time axis {tuple(e_mu.shape)} does not match "
                f"mel {tuple(m_t.shape)}"
            )
        if m_t.shape[1] != self.n_mels:
            raise ConfigError(f"expected {self.n_mels} mel bins, got {m_t.shape[1]}")
        batch, _, frames = m_t.shape
        if lengths is None:
            lengths = torch.full((batch,), frames, dtype=torch.long, device=m_t.device)
        mask = sequence_mask(lengths, frames).to(m_t.dtype)

        e_t = self.time_embedding(t)
        saln_cond = torch.cat([e_are, e_t], dim=-1)
        x = torch.relu(self.input_proj(m_t * mask)) * mask
        skips = 0.0
        for block in self.blocks:
            x, skip = block(x, e_mu, saln_cond, mask)
            skips = skips + skip
        skips = skips / math.sqrt(len(self.blocks))
        out = torch.relu(self.skip_proj(torch.relu(skips)))
        return self.output_proj(out * mask) * mask


def forward_sample(m0: torch.Tensor, t, eps: torch.Tensor,
                   sched: NoiseSchedule) -> torch.Tensor:
    """Corrupt M_0 to step t. t: int or [B] ints (1-indexed, 1 <= t <= T)."""
    if isinstance(t, int):
        sched._check(t)
        abar = torch.tensor(sched.alpha_bar(t), dtype=m0.dtype, device=m0.device)
    else:
        for ti in t:
            sched._check(int(ti))
        abar = torch.tensor(
            [sched.alpha_bar(int(ti)) for ti in t], dtype=m0.dtype, device=m0.device
        ).view(-1, *([1] * (m0.ndim - 1)))
    return torch.sqrt(abar) * m0 + torch.sqrt(1.0 - abar) * eps


def diffusion_loss(denoise_fn, m0: torch.Tensor, sched: NoiseSchedule,
                   generator: torch.Generator | None = None,
                   mask: torch.Tensor | None = None,
                   t: torch.Tensor | None = None,
                   eps: torch.Tensor | None = None) -> torch.Tensor:
    """Noise-prediction MSE with t ~ U{1..T}, eps ~ N(0, I).

    denoise_fn(m_t, t) -> eps_hat binds all conditioning. Pass t/eps to pin
    the draw (testing); mask [B, 1, T] restricts the mean to real frames.
    """
    batch = m0.shape[0]
    if t is None:
        t = torch.randint(
            1, sched.t_steps + 1, (batch,), generator=generator, device=m0.device
        )
    if eps is None:
        eps = torch.empty_like(m0).normal_(generator=generator)
    m_t = forward_sample(m0, t, eps, sched)
    eps_hat = denoise_fn(m_t, t)
    sq = (eps - eps_hat) ** 2
    if mask is None:
        return sq.mean()
    mask = mask.to(sq.dtype)
    return (sq * mask).sum() / (mask.sum() * m0.shape[1])


def sample(denoise_fn, shape, sched: NoiseSchedule,
           generator: torch.Generator | None = None,
           initial_noise: torch.Tensor | None = None,
           dtype=torch.float32, device="cpu") -> torch.Tensor:
    """Ancestral sampling from white noise down to M_0.

    denoise_fn(m_t, t) -> eps_hat with conditioning bound; t is a [B] tensor.
    z = 0 exactly at t = 1. Raises NumericalError naming the failing step if
    any iterate stops being finite.
    """
    if initial_noise is not None:
        m = initial_noise.clone()
    else:
        m = torch.empty(shape, dtype=dtype, device=device).normal_(generator=generator)
    batch = m.shape[0]
    for step in range(sched.t_steps, 0, -1):
        t = torch.full((batch,), step, dtype=torch.long, device=m.device)
        eps_hat = denoise_fn(m, t)
        alpha = sched.alpha(step)
        abar = sched.alpha_bar(step)
        coef = (1.0 - alpha) / math.sqrt(1.0 - abar)
        m = (m - coef * eps_hat) / math.sqrt(alpha)
        if step > 1:
            z = torch.empty_like(m).normal_(generator=generator)
            m = m + sched.sigma(step) * z
        if not torch.isfinite(m).all():
            raise NumericalError(f"non-finite sample iterate at step t={step}")
    return m
