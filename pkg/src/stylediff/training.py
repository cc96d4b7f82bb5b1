"""Joint training loop: pair sampling, weighted composite loss, checkpoints.

Every source of randomness during training flows through two generators
owned by the trainer (a torch.Generator for noise/timestep draws and a
numpy Generator for pair sampling); both are serialized in checkpoints so
a save/load round-trip continues bit-exactly.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .corpus import CorpusManifest, ToyCorpus
from .errors import ConfigError, DataFormatError
from .mel import NormStats
from .model import AdaptiveStyleTTS, Batch, collate_pairs

CHECKPOINT_VERSION = 1

LOSS_WEIGHTS = {
    "l_diff": "w_diff",
    "l_dur": "w_dur",
    "l_spk": "w_spk",
    "l_rhy": "w_rhy",
    "l_aort": "w_aort",
    "l_ort": "w_ort",
}


class PairSampler:
    """Uniform sampler over ordered (target, reference) same-speaker pairs.

    Never pairs an utterance with itself; speakers with fewer than two
    utterances are skipped with a warning.
    """

    def __init__(self, manifest: CorpusManifest, rng: np.random.Generator):
        self.rng = rng
        by_speaker = {}
        for rec in manifest.records:
            by_speaker.setdefault(rec.speaker_id, []).append(rec)
        self.groups = []
        for speaker, records in sorted(by_speaker.items()):
            if len(records) < 2:
                warnings.warn(
                    f"speaker {speaker} has only {len(records)} utterance(s); skipped"
                )
                continue
            self.groups.append(records)
        if not self.groups:
            raise ConfigError("no speaker has two or more utterances")
        counts = np.array([len(g) * (len(g) - 1) for g in self.groups], dtype=np.float64)
        self.weights = counts / counts.sum()
        self.manifest = manifest

    def sample_pair(self):
        g = self.groups[self.rng.choice(len(self.groups), p=self.weights)]
        i = int(self.rng.integers(len(g)))
        j = int(self.rng.integers(len(g) - 1))
        if j >= i:
            j += 1
        return g[i], g[j]

    def sample_batch(self, batch_size: int):
        return [self.sample_pair() for _ in range(batch_size)]


class Trainer:
    def __init__(self, model: AdaptiveStyleTTS, corpus: ToyCorpus, config: TrainConfig,
                 log_path=None):
        config.validate()
        if corpus.n_speakers != config.n_speakers or corpus.n_rhythms != config.n_rhythms:
            raise ConfigError(
                f"config expects {config.n_speakers} speakers / {config.n_rhythms} "
                f"rhythms but corpus has {corpus.n_speakers} / {corpus.n_rhythms}"
            )
        if corpus.vocab_size != config.vocab_size:
            raise ConfigError(
                f"config vocab_size {config.vocab_size} != corpus {corpus.vocab_size}"
            )
        self.model = model
        self.corpus = corpus
        self.config = config
        self.stats = corpus.stats
        self.optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        self.sampler = PairSampler(
            corpus.train, np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))
        )
        self.generator = torch.Generator().manual_seed(config.seed + 1)
        self.step_count = 0
        self.log_path = Path(log_path) if log_path else None
        self._utterance_cache = {}

    # ------------------------------------------------------------ stepping

    def _load_pair(self, target_rec, ref_rec):
        man = self.corpus.train
        cache = self._utterance_cache
        for rec in (target_rec, ref_rec):
            if rec.utterance_id not in cache:
                cache[rec.utterance_id] = man.utterance(rec)
        return cache[target_rec.utterance_id], cache[ref_rec.utterance_id]

    def make_batch(self) -> Batch:
        pairs = [self._load_pair(t, r) for t, r in self.sampler.sample_batch(self.config.batch_size)]
        return collate_pairs(pairs, self.stats)

    def training_step(self, batch: Batch | None = None) -> dict:
        """One optimizer update; returns the weighted loss breakdown."""
        cfg = self.config
        if batch is None:
            batch = self.make_batch()
        self.model.train()
        lr = cfg.learning_rate * min(1.0, (self.step_count + 1) / max(1, cfg.warmup_steps))
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        losses = self.model.training_losses(batch, generator=self.generator)
        total = None
        breakdown = {}
        for name, weight_name in LOSS_WEIGHTS.items():
            if name in losses:
                weight = getattr(cfg, weight_name)
                term = weight * losses[name]
                total = term if total is None else total + term
                breakdown[name] = float(losses[name].detach())
            else:
                breakdown[name] = 0.0
        self.optimizer.zero_grad()
        total.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.grad_clip)
        self.optimizer.step()
        self.step_count += 1
        # reported total is the float64 weighted sum of the reported terms, so
        # the decomposition identity holds exactly regardless of tensor dtype
        breakdown["total"] = sum(
            getattr(cfg, w) * breakdown[name] for name, w in LOSS_WEIGHTS.items()
        )
        breakdown["step"] = self.step_count
        breakdown["lr"] = lr
        return breakdown

    def train(self, steps: int, log_every: int = 50) -> list:
        history = []
        log_file = None
        if self.log_path:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            log_file = self.log_path.open("a")
        try:
            for _ in range(steps):
                t0 = time.time()
                record = self.training_step()
                record["wall_time"] = time.time() - t0
                history.append(record)
                if log_file and (record["step"] % log_every == 0 or record["step"] == 1):
                    log_file.write(json.dumps(record) + "\n")
                    log_file.flush()
        finally:
            if log_file:
                log_file.close()
        return history


def create_trainer(corpus: ToyCorpus, config: TrainConfig, log_path=None) -> Trainer:
    """Seeded model construction + trainer; the canonical way to start a run."""
    config.validate()
    torch.manual_seed(config.seed)
    model = AdaptiveStyleTTS(config)
    return Trainer(model, corpus, config, log_path=log_path)


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    config: TrainConfig
    model_state: dict
    optimizer_state: dict
    step: int
    stats: NormStats
    torch_rng: torch.Tensor
    sampler_rng: dict
    corpus_digest: str | None


def save_checkpoint(path, trainer: Trainer, corpus_digest: str | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": trainer.config.to_dict(),
        "model_state": trainer.model.state_dict(),
        "optimizer_state": trainer.optimizer.state_dict(),
        "step": trainer.step_count,
        "stats": {"vmin": trainer.stats.vmin, "vmax": trainer.stats.vmax},
        "torch_rng": trainer.generator.get_state(),
        "sampler_rng": trainer.sampler.rng.bit_generator.state,
        "corpus_digest": corpus_digest,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path, expected_config: TrainConfig | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise DataFormatError(f"{path}: corrupt or unreadable checkpoint: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise DataFormatError(f"{path}: not a checkpoint file")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise DataFormatError(
            f"{path}: checkpoint format version {payload['format_version']} "
            f"not supported (expected {CHECKPOINT_VERSION})"
        )
    config = TrainConfig.from_dict(payload["config"])
    if expected_config is not None and expected_config.architecture() != config.architecture():
        raise ConfigError(
            "checkpoint architecture does not match the requested configuration: "
            f"{config.architecture()} vs {expected_config.architecture()}"
        )
    return Checkpoint(
        config=config,
        model_state=payload["model_state"],
        optimizer_state=payload["optimizer_state"],
        step=payload["step"],
        stats=NormStats(payload["stats"]["vmin"], payload["stats"]["vmax"]),
        torch_rng=payload["torch_rng"],
        sampler_rng=payload["sampler_rng"],
        corpus_digest=payload.get("corpus_digest"),
    )


def model_from_checkpoint(checkpoint: Checkpoint) -> AdaptiveStyleTTS:
    model = AdaptiveStyleTTS(checkpoint.config)
    model.load_state_dict(checkpoint.model_state)
    model.eval()
    return model


def restore_trainer(checkpoint: Checkpoint, corpus: ToyCorpus, log_path=None) -> Trainer:
    """Rebuild a trainer that continues bit-exactly from the checkpoint."""
    model = AdaptiveStyleTTS(checkpoint.config)
    model.load_state_dict(checkpoint.model_state)
    trainer = Trainer(model, corpus, checkpoint.config, log_path=log_path)
    trainer.optimizer.load_state_dict(checkpoint.optimizer_state)
    trainer.step_count = checkpoint.step
    trainer.generator.set_state(checkpoint.torch_rng)
    trainer.sampler.rng.bit_generator.state = checkpoint.sampler_rng
    return trainer
