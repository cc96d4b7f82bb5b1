"""Objective toy-scale metrics and reports.

The evaluator is a pair of small mel classifiers trained once on the
ground-truth corpus and then frozen across every checkpoint it scores:

    speaker_cosine   cosine similarity between the speaker embedder's outputs
                     for the synthesized and the reference mel
    rhythm_accuracy  fraction of synthesized utterances classified into the
                     reference's rhythm class

Reports carry per-utterance rows plus aggregates that are exact means of the
rows, the seed, the model config hash, and the evaluator digest, so ablation
tables are auditable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .corpus import ToyCorpus, corpus_digest
from .errors import ConfigError, DataFormatError
from .mel import normalize_array
from .model import AdaptiveStyleTTS
from .nnutil import masked_mean, sequence_mask
from .tca import shared_phoneme_attention_score
from .training import (
    create_trainer,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)

EVALUATOR_VERSION = 1


class MelClassifier(nn.Module):
    """Conv stack + masked mean/std pooling + MLP head over mels.

    embed() returns the l2-normalized penultimate activation; forward()
    returns class logits.
    """

    def __init__(self, n_mels=80, hidden=64, emb_dim=64, n_classes=8):
        super().__init__()
        # dilations widen the receptive field to ~50 frames so the slowest
        # corpus envelope period fits inside it
        self.conv1 = nn.Conv1d(n_mels, hidden, 5, padding=2)
        self.conv2 = nn.Conv1d(hidden, hidden, 5, padding=6, dilation=3)
        self.conv3 = nn.Conv1d(hidden, hidden, 5, padding=18, dilation=9)
        self.project = nn.Linear(2 * hidden, emb_dim)
        self.head = nn.Linear(emb_dim, n_classes)

    def features(self, mel, lengths=None):
        batch, _, frames = mel.shape
        if lengths is None:
            lengths = torch.full((batch,), frames, dtype=torch.long, device=mel.device)
        mask = sequence_mask(lengths, frames).to(mel.dtype)
        x = mel * mask
        x = torch.relu(self.conv1(x)) * mask
        x = torch.relu(self.conv2(x)) * mask
        x = torch.relu(self.conv3(x)) * mask
        mean = masked_mean(x, mask)
        var = masked_mean((x - mean[:, :, None]) ** 2 * mask, mask)
        pooled = torch.cat([mean, torch.sqrt(var + 1e-8)], dim=-1)
        return torch.relu(self.project(pooled))

    def embed(self, mel, lengths=None):
        feat = self.features(mel, lengths)
        return feat / feat.norm(dim=-1, keepdim=True).clamp(min=1e-12)

    def forward(self, mel, lengths=None):
        return self.head(self.features(mel, lengths))


@dataclass
class Evaluator:
    speaker: MelClassifier
    rhythm: MelClassifier
    n_speakers: int
    n_rhythms: int
    corpus_digest: str
    seed: int

    def digest(self) -> str:
        h = hashlib.sha256()
        for net in (self.speaker, self.rhythm):
            for key, value in sorted(net.state_dict().items()):
                h.update(key.encode())
                h.update(value.numpy().tobytes())
        return h.hexdigest()[:16]


def _mel_batches(records, manifest, stats, batch_size, rng):
    order = rng.permutation(len(records))
    for start in range(0, len(order), batch_size):
        chunk = [records[i] for i in order[start : start + batch_size]]
        frames = max(r.frame_count for r in chunk)
        mels = torch.zeros(len(chunk), 80, frames)
        lengths = torch.zeros(len(chunk), dtype=torch.long)
        for i, rec in enumerate(chunk):
            mel = manifest.load_mel(rec)
            mels[i, :, : mel.frame_count] = torch.from_numpy(
                normalize_array(mel.data, stats)
            ).float()
            lengths[i] = mel.frame_count
        speakers = torch.tensor([r.speaker_id for r in chunk], dtype=torch.long)
        rhythms = torch.tensor([r.rhythm_id for r in chunk], dtype=torch.long)
        yield mels, lengths, speakers, rhythms


def train_evaluator(corpus: ToyCorpus, seed: int = 0, epochs: int = 40,
                    batch_size: int = 32, lr: float = 1e-3) -> Evaluator:
    """Fit the frozen speaker/rhythm evaluator on ground-truth train mels."""
    torch.manual_seed(seed)
    speaker_net = MelClassifier(n_classes=corpus.n_speakers)
    rhythm_net = MelClassifier(n_classes=corpus.n_rhythms)
    opt = torch.optim.Adam(
        list(speaker_net.parameters()) + list(rhythm_net.parameters()), lr=lr
    )
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    records = corpus.train.records
    for _ in range(epochs):
        for mels, lengths, speakers, rhythms in _mel_batches(
            records, corpus.train, corpus.stats, batch_size, rng
        ):
            loss = nn.functional.cross_entropy(speaker_net(mels, lengths), speakers)
            loss = loss + nn.functional.cross_entropy(rhythm_net(mels, lengths), rhythms)
            opt.zero_grad()
            loss.backward()
            opt.step()
    speaker_net.eval()
    rhythm_net.eval()
    return Evaluator(
        speaker_net, rhythm_net, corpus.n_speakers, corpus.n_rhythms,
        corpus_digest(corpus.root), seed,
    )


def save_evaluator(path, evaluator: Evaluator) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": EVALUATOR_VERSION,
            "speaker_state": evaluator.speaker.state_dict(),
            "rhythm_state": evaluator.rhythm.state_dict(),
            "n_speakers": evaluator.n_speakers,
            "n_rhythms": evaluator.n_rhythms,
            "corpus_digest": evaluator.corpus_digest,
            "seed": evaluator.seed,
        },
        path,
    )


def load_evaluator(path) -> Evaluator:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(
            f"no evaluator model at {path}; train one first with "
            f"`stylediff train-evaluator`"
        )
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise DataFormatError(f"{path}: corrupt evaluator file: {exc}") from exc
    if payload.get("format_version") != EVALUATOR_VERSION:
        raise DataFormatError(f"{path}: unsupported evaluator format")
    speaker = MelClassifier(n_classes=payload["n_speakers"])
    rhythm = MelClassifier(n_classes=payload["n_rhythms"])
    speaker.load_state_dict(payload["speaker_state"])
    rhythm.load_state_dict(payload["rhythm_state"])
    speaker.eval()
    rhythm.eval()
    return Evaluator(
        speaker, rhythm, payload["n_speakers"], payload["n_rhythms"],
        payload["corpus_digest"], payload["seed"],
    )


@torch.no_grad()
def evaluate_ground_truth(corpus: ToyCorpus, split: str, evaluator: Evaluator) -> dict:
    """Evaluator quality gate: classify ground-truth mels of a split."""
    manifest = corpus.split(split)
    correct_rhythm = 0
    correct_speaker = 0
    for rec in manifest.records:
        mel = manifest.load_mel(rec)
        x = torch.from_numpy(normalize_array(mel.data, corpus.stats)).float()[None]
        if int(evaluator.rhythm(x).argmax()) == rec.rhythm_id:
            correct_rhythm += 1
        if rec.speaker_id < evaluator.n_speakers:
            if int(evaluator.speaker(x).argmax()) == rec.speaker_id:
                correct_speaker += 1
    n = len(manifest.records)
    return {
        "rhythm_accuracy": correct_rhythm / n,
        "speaker_accuracy": correct_speaker / n,
    }


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    split: str
    seed: int
    config_hash: str
    evaluator_digest: str
    rows: list = field(default_factory=list)

    @property
    def aggregates(self) -> dict:
        if not self.rows:
            return {}
        out = {
            "speaker_cosine": float(np.mean([r["speaker_cosine"] for r in self.rows])),
            "rhythm_accuracy": float(np.mean([r["rhythm_correct"] for r in self.rows])),
            "duration_mae": float(np.mean([r["duration_mae"] for r in self.rows])),
        }
        alignment = [r["tca_alignment"] for r in self.rows if r["tca_alignment"] is not None]
        out["tca_alignment"] = float(np.mean(alignment)) if alignment else None
        return out

    def to_jsonl(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            header = {
                "record": "header", "split": self.split, "seed": self.seed,
                "config_hash": self.config_hash,
                "evaluator_digest": self.evaluator_digest,
            }
            fh.write(json.dumps(header) + "\n")
            for row in self.rows:
                fh.write(json.dumps({"record": "row", **row}) + "\n")
            fh.write(json.dumps({"record": "aggregate", **self.aggregates}) + "\n")


def _pick_reference(records, target, rng):
    candidates = [
        r for r in records
        if r.speaker_id == target.speaker_id and r.utterance_id != target.utterance_id
    ]
    if not candidates:
        return None
    return candidates[int(rng.integers(len(candidates)))]


@torch.no_grad()
def evaluate_model(model: AdaptiveStyleTTS, corpus: ToyCorpus, split: str,
                   evaluator: Evaluator, seed: int = 0,
                   limit: int | None = None) -> EvalReport:
    """Synthesize each split utterance against a same-speaker reference and score it."""
    manifest = corpus.split(split)
    stats = corpus.stats
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(9,)))
    report = EvalReport(
        split=split, seed=seed, config_hash=model.config.config_hash(),
        evaluator_digest=evaluator.digest(),
    )
    records = manifest.records[:limit] if limit else manifest.records
    for index, rec in enumerate(records):
        ref_rec = _pick_reference(manifest.records, rec, rng)
        if ref_rec is None:
            continue
        reference = manifest.utterance(ref_rec)
        gen = torch.Generator().manual_seed(
            int(np.random.SeedSequence(seed, spawn_key=(10, index)).generate_state(1)[0])
        )
        out = model.synthesize(rec.phonemes, reference, stats, generator=gen)
        synth = torch.from_numpy(out["mel_normalized"]).float()[None]
        ref_mel = torch.from_numpy(
            normalize_array(reference.mel.data, stats)
        ).float()[None]
        emb_synth = evaluator.speaker.embed(synth)
        emb_ref = evaluator.speaker.embed(ref_mel)
        cosine = float((emb_synth * emb_ref).sum())
        rhythm_pred = int(evaluator.rhythm(synth).argmax())
        predicted = out["durations"]
        true_durations = rec.durations
        n = min(len(predicted), len(true_durations))
        duration_mae = float(
            np.mean(np.abs(np.array(predicted[:n]) - np.array(true_durations[:n])))
        )
        alignment = None
        if out["attention"] is not None:
            alignment = shared_phoneme_attention_score(
                torch.from_numpy(out["attention"]),
                rec.phonemes, predicted,
                reference.phonemes, reference.durations,
            )
        report.rows.append(
            {
                "utterance_id": rec.utterance_id,
                "reference_id": ref_rec.utterance_id,
                "speaker_cosine": cosine,
                "rhythm_correct": int(rhythm_pred == reference.rhythm_id),
                "rhythm_predicted": rhythm_pred,
                "duration_mae": duration_mae,
                "tca_alignment": alignment,
            }
        )
    return report


# ---------------------------------------------------------------- ablation


def format_table(reports: dict) -> str:
    """Side-by-side text table of report aggregates."""
    columns = ["arm", "speaker_cosine", "rhythm_accuracy", "tca_alignment",
               "duration_mae", "config_hash"]
    rows = []
    for name, report in reports.items():
        agg = report.aggregates
        rows.append([
            name,
            f"{agg['speaker_cosine']:.4f}",
            f"{agg['rhythm_accuracy']:.4f}",
            "n/a" if agg["tca_alignment"] is None else f"{agg['tca_alignment']:.4f}",
            f"{agg['duration_mae']:.3f}",
            report.config_hash,
        ])
    widths = [max(len(r[i]) for r in [columns] + rows) for i in range(len(columns))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def ablate(corpus: ToyCorpus, arms: dict, evaluator: Evaluator, *,
           steps: int, seed: int = 0, eval_split: str = "test_seen",
           eval_limit: int | None = None, checkpoint_dir=None,
           log_progress=None) -> dict:
    """Train each arm on the shared corpus and evaluate with the frozen evaluator.

    arms: name -> TrainConfig. With checkpoint_dir set, finished arms are
    reused from <dir>/<name>.pt when the architecture matches and the stored
    corpus digest equals the current one; a digest mismatch is an error.
    """
    if len(arms) < 1:
        raise ConfigError("ablation needs at least one configuration")
    digest = corpus_digest(corpus.root)
    reports = {}
    for name, config in arms.items():
        checkpoint_path = Path(checkpoint_dir) / f"{name}.pt" if checkpoint_dir else None
        model = None
        if checkpoint_path is not None and checkpoint_path.exists():
            ck = load_checkpoint(checkpoint_path, expected_config=config)
            if ck.corpus_digest != digest:
                raise ConfigError(
                    f"arm {name!r} was trained on a different corpus "
                    f"({ck.corpus_digest} != {digest})"
                )
            model = model_from_checkpoint(ck)
        if model is None:
            if log_progress:
                log_progress(f"training arm {name!r} for {steps} steps")
            trainer = create_trainer(corpus, config)
            trainer.train(steps)
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, trainer, corpus_digest=digest)
            model = trainer.model
            model.eval()
        reports[name] = evaluate_model(
            model, corpus, eval_split, evaluator, seed=seed, limit=eval_limit
        )
    return reports
