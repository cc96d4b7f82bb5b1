"""Synthetic toy-speech corpus: generation, manifests, serialization.

Each speaker id maps to a deterministic spectral signature (a per-phoneme
formant-like band pattern), so the same phoneme spoken by the same speaker
yields near-identical local spectra. Each rhythm id maps to a global temporal
envelope: a duration scale plus a periodic energy contour whose period is
class-specific. Speaker and rhythm factors are drawn from independent
generators and assigned on a balanced grid, so the two labels are
uncorrelated over the train split by construction.

Corpus layout on disk:

    <root>/corpus.json        counts, seed, vocab, normalization stats
    <root>/train.tsv          one record per line (see UtteranceRecord)
    <root>/test_seen.tsv      held-out utterances of train speakers
    <root>/test_unseen.tsv    utterances of entirely held-out speaker ids
    <root>/mels/<id>.mel      mel binaries (mel.py format)

Record line: utterance_id, speaker_id, rhythm_id, comma-joined phoneme ids,
comma-joined durations, mel path relative to the manifest. Generation is
reproducible bit-exactly from the seed; per-utterance generators are derived
from (seed, split, speaker, rhythm, index) so records are order-independent.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .mel import MelSpectrogram, NormStats, read_mel, write_mel

CORPUS_FORMAT_VERSION = 1

SPLITS = ("train", "test_seen", "test_unseen")
_SPLIT_CODE = {"train": 0, "test_seen": 1, "test_unseen": 2}

# mel synthesis constants (normalized, dimensionless)
_BASE_LEVEL = -0.9
_BUMP_PEAK = 0.9
_ENV_DEPTH = 0.25
_JITTER_STD = 0.02
_BUMPS_PER_PHONEME = 3
# the rhythm envelope also drives a clean low-band carrier (these bins sit
# below every speaker formant, whose centers start at bin 4); its time-mean
# and variance are period-independent, so pooled statistics stay rhythm-blind
CARRIER_BINS = 3
CARRIER_AMP = 0.7


@dataclass
class UtteranceRecord:
    utterance_id: str
    speaker_id: int
    rhythm_id: int
    phonemes: list
    durations: list
    mel_path: str

    def validate(self):
        if len(self.phonemes) != len(self.durations):
            raise DataFormatError(
                f"{self.utterance_id}: {len(self.phonemes)} phonemes but "
                f"{len(self.durations)} durations"
            )
        if any(d < 1 for d in self.durations):
            raise DataFormatError(f"{self.utterance_id}: non-positive duration")

    @property
    def frame_count(self) -> int:
        return int(sum(self.durations))


@dataclass
class ToyUtterance:
    """A record with its mel loaded; sum(durations) == mel.frame_count."""

    utterance_id: str
    speaker_id: int
    rhythm_id: int
    phonemes: list
    durations: list
    mel: MelSpectrogram


@dataclass
class CorpusManifest:
    split: str
    records: list
    n_speakers: int
    n_rhythms: int
    generator_seed: int
    root: Path

    def load_mel(self, record: UtteranceRecord) -> MelSpectrogram:
        mel = read_mel(self.root / record.mel_path)
        if mel.frame_count != record.frame_count:
            raise DataFormatError(
                f"{record.utterance_id}: mel has {mel.frame_count} frames but "
                f"durations sum to {record.frame_count}"
            )
        return mel

    def utterance(self, record: UtteranceRecord) -> ToyUtterance:
        return ToyUtterance(
            record.utterance_id,
            record.speaker_id,
            record.rhythm_id,
            list(record.phonemes),
            list(record.durations),
            self.load_mel(record),
        )

    def __len__(self):
        return len(self.records)


@dataclass
class ToyCorpus:
    root: Path
    manifests: dict
    stats: NormStats
    n_speakers: int
    n_rhythms: int
    n_unseen_speakers: int
    vocab_size: int
    generator_seed: int

    @property
    def train(self) -> CorpusManifest:
        return self.manifests["train"]

    @property
    def test_seen(self) -> CorpusManifest:
        return self.manifests["test_seen"]

    @property
    def test_unseen(self) -> CorpusManifest:
        return self.manifests["test_unseen"]

    def split(self, name: str) -> CorpusManifest:
        if name not in self.manifests:
            raise ConfigError(f"unknown split {name!r}, expected one of {SPLITS}")
        return self.manifests[name]


@dataclass
class _Factors:
    """Deterministic generative factors shared by every utterance of a corpus."""

    seed: int
    vocab_size: int
    n_rhythms: int
    phoneme_probs: np.ndarray = field(init=False)
    base_durations: np.ndarray = field(init=False)
    _signatures: dict = field(default_factory=dict, init=False)

    def __post_init__(self):
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(100,)))
        # Zipf-like phoneme frequencies so any two utterances share phonemes
        weights = 1.0 / (np.arange(self.vocab_size) + 1.0)
        self.phoneme_probs = weights / weights.sum()
        self.base_durations = rng.integers(2, 7, size=self.vocab_size)

    def signature(self, speaker_id: int) -> np.ndarray:
        """[vocab_size x 80] formant-like bump pattern for one speaker."""
        if speaker_id not in self._signatures:
            rng = np.random.default_rng(
                np.random.SeedSequence(self.seed, spawn_key=(200, speaker_id))
            )
            bins = np.arange(80, dtype=np.float64)
            sig = np.zeros((self.vocab_size, 80))
            for p in range(self.vocab_size):
                centers = rng.uniform(4.0, 76.0, size=_BUMPS_PER_PHONEME)
                widths = rng.uniform(1.5, 3.5, size=_BUMPS_PER_PHONEME)
                amps = rng.uniform(0.5, 1.0, size=_BUMPS_PER_PHONEME)
                prof = np.zeros(80)
                for c, w, a in zip(centers, widths, amps):
                    prof += a * np.exp(-0.5 * ((bins - c) / w) ** 2)
                sig[p] = prof / prof.max() * _BUMP_PEAK
            self._signatures[speaker_id] = sig
        return self._signatures[speaker_id]

    def duration_scale(self, rhythm_id: int) -> float:
        if self.n_rhythms == 1:
            return 1.0
        return 0.85 + 0.45 * rhythm_id / (self.n_rhythms - 1)

    def envelope_period(self, rhythm_id: int) -> float:
        # geometric spacing from 8 to 40 frames: slow enough not to alias
        # with phoneme-scale spectral changes, fast enough that the longest
        # period still completes a cycle on short utterances
        if self.n_rhythms == 1:
            return 16.0
        return 8.0 * ((40.0 / 8.0) ** (rhythm_id / (self.n_rhythms - 1)))


def _synthesize_utterance(factors: _Factors, speaker_id, rhythm_id, rng):
    """Phonemes, durations and a mel for one utterance."""
    length = int(rng.integers(10, 15))
    phonemes = rng.choice(factors.vocab_size, size=length, p=factors.phoneme_probs)
    kappa = factors.duration_scale(rhythm_id)
    jitter = rng.uniform(0.9, 1.1, size=length)
    durations = np.maximum(
        1, np.rint(factors.base_durations[phonemes] * kappa * jitter).astype(np.int64)
    )
    total = int(durations.sum())

    period = factors.envelope_period(rhythm_id)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(total, dtype=np.float64)
    envelope = 1.0 + _ENV_DEPTH * np.sin(2.0 * np.pi * t / period + phase)

    sig = factors.signature(speaker_id)
    mel = np.empty((80, total))
    pos = 0
    for p, d in zip(phonemes, durations):
        span = slice(pos, pos + int(d))
        bump = sig[p][:, None] + rng.normal(0.0, _JITTER_STD, size=(80, int(d)))
        mel[:, span] = _BASE_LEVEL + envelope[span][None, :] * bump
        pos += int(d)

    carrier = _BASE_LEVEL + CARRIER_AMP * (
        1.0 + np.sin(2.0 * np.pi * t / period + phase)
    ) / 2.0
    mel[:CARRIER_BINS, :] = carrier[None, :] + rng.normal(
        0.0, _JITTER_STD, size=(CARRIER_BINS, total)
    )

    return phonemes.tolist(), durations.tolist(), MelSpectrogram(mel)


def _split_plan(n_speakers, n_rhythms, n_unseen, per_pair, test_per_pair, unseen_per_pair):
    plan = {
        "train": (range(n_speakers), per_pair),
        "test_seen": (range(n_speakers), test_per_pair),
        "test_unseen": (range(n_speakers, n_speakers + n_unseen), unseen_per_pair),
    }
    return {k: v for k, v in plan.items()}


def generate_corpus(
    n_speakers: int,
    n_rhythms: int,
    utterances_per_pair: int,
    seed: int,
    out_dir,
    *,
    test_per_pair: int = 2,
    unseen_speakers: int = 2,
    unseen_per_pair: int = 2,
    vocab_size: int = 64,
    overwrite: bool = False,
) -> ToyCorpus:
    """Generate and write a corpus; returns the loaded ToyCorpus.

    Train split holds utterances_per_pair utterances for every
    (speaker, rhythm) pair, i.e. n_speakers * n_rhythms * utterances_per_pair
    records. test_seen holds fresh utterances of the same speakers;
    test_unseen uses speaker ids >= n_speakers never present in train.
    """
    if n_speakers < 2:
        raise ConfigError(f"need at least 2 speakers, got {n_speakers}")
    if n_rhythms < 2:
        raise ConfigError(f"need at least 2 rhythm classes, got {n_rhythms}")
    if utterances_per_pair < 1:
        raise ConfigError("utterances_per_pair must be >= 1")
    if vocab_size < 2:
        raise ConfigError("vocab_size must be >= 2")

    root = Path(out_dir)
    meta_path = root / "corpus.json"
    if meta_path.exists() and not overwrite:
        raise ConfigError(f"{root} already contains a corpus; pass overwrite to replace it")
    (root / "mels").mkdir(parents=True, exist_ok=True)

    factors = _Factors(seed, vocab_size, n_rhythms)
    plan = _split_plan(
        n_speakers, n_rhythms, unseen_speakers, utterances_per_pair, test_per_pair, unseen_per_pair
    )

    manifests = {}
    train_min, train_max = np.inf, -np.inf
    for split, (speakers, count) in plan.items():
        records = []
        for s in speakers:
            for r in range(n_rhythms):
                for i in range(count):
                    sub = np.random.SeedSequence(
                        seed, spawn_key=(_SPLIT_CODE[split], s, r, i)
                    )
                    rng = np.random.default_rng(sub)
                    phonemes, durations, mel = _synthesize_utterance(factors, s, r, rng)
                    uid = f"{split}_s{s:02d}_r{r:02d}_{i:03d}"
                    mel_rel = f"mels/{uid}.mel"
                    write_mel(mel, root / mel_rel)
                    records.append(
                        UtteranceRecord(uid, s, r, phonemes, durations, mel_rel)
                    )
                    if split == "train":
                        train_min = min(train_min, float(mel.data.min()))
                        train_max = max(train_max, float(mel.data.max()))
        manifests[split] = records

    stats = NormStats(train_min, train_max)
    for split, records in manifests.items():
        _write_manifest(root / f"{split}.tsv", records)
    meta = {
        "format_version": CORPUS_FORMAT_VERSION,
        "n_speakers": n_speakers,
        "n_rhythms": n_rhythms,
        "n_unseen_speakers": unseen_speakers,
        "vocab_size": vocab_size,
        "generator_seed": seed,
        "stats": {"vmin": stats.vmin, "vmax": stats.vmax},
        "splits": {split: f"{split}.tsv" for split in plan},
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return load_corpus(root)


def _write_manifest(path: Path, records):
    lines = []
    for rec in records:
        lines.append(
            "\t".join(
                [
                    rec.utterance_id,
                    str(rec.speaker_id),
                    str(rec.rhythm_id),
                    ",".join(str(p) for p in rec.phonemes),
                    ",".join(str(d) for d in rec.durations),
                    rec.mel_path,
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")


def _read_manifest(path: Path):
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise DataFormatError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        uid, spk, rhy, phon, dur, mel_rel = parts
        try:
            rec = UtteranceRecord(
                uid,
                int(spk),
                int(rhy),
                [int(x) for x in phon.split(",")],
                [int(x) for x in dur.split(",")],
                mel_rel,
            )
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
        rec.validate()
        records.append(rec)
    return records


def load_corpus(root) -> ToyCorpus:
    root = Path(root)
    meta_path = root / "corpus.json"
    if not meta_path.exists():
        raise DataFormatError(f"no corpus.json under {root}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{meta_path}: invalid JSON: {exc}") from exc
    if meta.get("format_version") != CORPUS_FORMAT_VERSION:
        raise DataFormatError(
            f"{meta_path}: format version {meta.get('format_version')} "
            f"not supported (expected {CORPUS_FORMAT_VERSION})"
        )
    stats = NormStats(meta["stats"]["vmin"], meta["stats"]["vmax"])
    manifests = {}
    for split, rel in meta["splits"].items():
        manifests[split] = CorpusManifest(
            split=split,
            records=_read_manifest(root / rel),
            n_speakers=meta["n_speakers"],
            n_rhythms=meta["n_rhythms"],
            generator_seed=meta["generator_seed"],
            root=root,
        )
    return ToyCorpus(
        root=root,
        manifests=manifests,
        stats=stats,
        n_speakers=meta["n_speakers"],
        n_rhythms=meta["n_rhythms"],
        n_unseen_speakers=meta["n_unseen_speakers"],
        vocab_size=meta["vocab_size"],
        generator_seed=meta["generator_seed"],
    )


def corpus_digest(root) -> str:
    """SHA-256 over the metadata, manifests, and every mel, in sorted order."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()
