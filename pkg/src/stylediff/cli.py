"""Command-line interface.

Subcommands: gen-corpus, train, train-evaluator, synthesize, evaluate,
ablate, export-attention. Exit codes: 0 success, 1 usage/configuration
error, 2 data/format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from . import audio, viz
from .config import TrainConfig, load_config, save_config
from .corpus import corpus_digest, generate_corpus, load_corpus
from .errors import ConfigError, StyleDiffError
from .evaluate import (
    ablate,
    evaluate_ground_truth,
    evaluate_model,
    format_table,
    load_evaluator,
    save_evaluator,
    train_evaluator,
)
from .training import (
    create_trainer,
    load_checkpoint,
    model_from_checkpoint,
    restore_trainer,
    save_checkpoint,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0, help="master random seed")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def _add_config_args(parser):
    parser.add_argument("--config", type=Path, help="config file (flat key: value)")
    parser.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="config override, repeatable",
    )


def _parse_overrides(pairs):
    overrides = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _resolve_config(args, corpus=None) -> TrainConfig:
    config = load_config(args.config) if args.config else TrainConfig()
    overrides = _parse_overrides(args.override)
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("seed", str(args.seed))
    if getattr(args, "steps", None) is not None:
        overrides.setdefault("max_steps", str(args.steps))
    if corpus is not None:
        overrides.setdefault("vocab_size", str(corpus.vocab_size))
        overrides.setdefault("n_speakers", str(corpus.n_speakers))
        overrides.setdefault("n_rhythms", str(corpus.n_rhythms))
    return config.with_overrides(overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stylediff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic toy corpus")
    _add_common(p)
    p.add_argument("--speakers", type=int, default=8)
    p.add_argument("--rhythms", type=int, default=4)
    p.add_argument("--per-pair", type=int, default=10)
    p.add_argument("--test-per-pair", type=int, default=2)
    p.add_argument("--unseen-speakers", type=int, default=2)
    p.add_argument("--vocab-size", type=int, default=64)
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("train", help="train the acoustic model")
    _add_common(p)
    _add_config_args(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--steps", type=int, help="training steps (overrides max_steps)")
    p.add_argument("--checkpoint", type=Path, help="resume from this checkpoint")
    p.add_argument("--save-every", type=int, default=0, help="also checkpoint every N steps")

    p = sub.add_parser("train-evaluator", help="train the frozen metric models")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=40)

    p = sub.add_parser("synthesize", help="synthesize a mel from text + reference")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--reference", required=True, help="reference utterance id")
    p.add_argument("--text", help="comma-separated phoneme ids (default: target's text)")
    p.add_argument("--target", help="utterance id whose text to synthesize")
    p.add_argument("--wav", action="store_true", help="also render a Griffin-Lim wav")

    p = sub.add_parser("evaluate", help="objective metrics for a checkpoint")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--evaluator", type=Path, required=True)
    p.add_argument("--split", default="test_seen")
    p.add_argument("--limit", type=int)

    p = sub.add_parser("ablate", help="train + evaluate a configuration matrix")
    _add_common(p)
    _add_config_args(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--evaluator", type=Path, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument(
        "--arm", action="append", required=True, metavar="NAME:KEY=V,KEY=V",
        help="ablation arm; repeatable",
    )
    p.add_argument("--split", default="test_seen")
    p.add_argument("--limit", type=int)
    p.add_argument("--cache", type=Path, help="checkpoint cache directory")

    p = sub.add_parser("export-attention", help="mel/attention plots for one pair")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--target", required=True, help="target utterance id")
    p.add_argument("--reference", required=True, help="reference utterance id")
    return parser


# ---------------------------------------------------------------- commands


def _find_record(corpus, utterance_id):
    for manifest in corpus.manifests.values():
        for rec in manifest.records:
            if rec.utterance_id == utterance_id:
                return manifest, rec
    raise ConfigError(f"utterance id {utterance_id!r} not found in any split")


def _check_stats(checkpoint, corpus):
    if (abs(checkpoint.stats.vmin - corpus.stats.vmin) > 1e-9
            or abs(checkpoint.stats.vmax - corpus.stats.vmax) > 1e-9):
        raise ConfigError(
            "checkpoint normalization stats do not match the corpus; "
            "was the model trained on a different corpus?"
        )


def cmd_gen_corpus(args):
    corpus = generate_corpus(
        args.speakers, args.rhythms, args.per_pair, args.seed, args.out,
        test_per_pair=args.test_per_pair, unseen_speakers=args.unseen_speakers,
        vocab_size=args.vocab_size, overwrite=args.overwrite,
    )
    print(f"corpus written to {corpus.root}")
    print(f"train/test_seen/test_unseen: {len(corpus.train)}/"
          f"{len(corpus.test_seen)}/{len(corpus.test_unseen)}")
    print(f"digest: {corpus_digest(corpus.root)}")
    return 0


def cmd_train(args):
    corpus = load_corpus(args.corpus)
    args.out.mkdir(parents=True, exist_ok=True)
    log_path = args.out / "train_log.jsonl"
    if args.checkpoint:
        config = _resolve_config(args, corpus)
        ck = load_checkpoint(args.checkpoint, expected_config=config)
        _check_stats(ck, corpus)
        trainer = restore_trainer(ck, corpus, log_path=log_path)
        steps = max(0, trainer.config.max_steps - trainer.step_count)
        if args.steps is not None:
            steps = args.steps
    else:
        config = _resolve_config(args, corpus)
        trainer = create_trainer(corpus, config, log_path=log_path)
        steps = args.steps if args.steps is not None else config.max_steps
    save_config(trainer.config, args.out / "config.yaml")
    digest = corpus_digest(corpus.root)
    print(f"training {steps} steps (config {trainer.config.config_hash()})")
    done = 0
    chunk = args.save_every if args.save_every > 0 else steps
    while done < steps:
        n = min(chunk, steps - done)
        history = trainer.train(n)
        done += n
        save_checkpoint(args.out / "checkpoint.pt", trainer, corpus_digest=digest)
        if history:
            last = history[-1]
            print(f"step {last['step']}: total {last['total']:.4f}")
    if steps == 0:
        save_checkpoint(args.out / "checkpoint.pt", trainer, corpus_digest=digest)
    print(f"checkpoint: {args.out / 'checkpoint.pt'}")
    return 0


def cmd_train_evaluator(args):
    corpus = load_corpus(args.corpus)
    evaluator = train_evaluator(corpus, seed=args.seed, epochs=args.epochs)
    gates = evaluate_ground_truth(corpus, "test_seen", evaluator)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "evaluator.pt"
    save_evaluator(path, evaluator)
    print(f"evaluator: {path}")
    print(f"ground-truth gates: rhythm {gates['rhythm_accuracy']:.3f}, "
          f"speaker {gates['speaker_accuracy']:.3f}")
    return 0


def cmd_synthesize(args):
    corpus = load_corpus(args.corpus)
    ck = load_checkpoint(args.checkpoint)
    _check_stats(ck, corpus)
    model = model_from_checkpoint(ck)
    ref_manifest, ref_rec = _find_record(corpus, args.reference)
    reference = ref_manifest.utterance(ref_rec)
    if args.text:
        phonemes = [int(x) for x in args.text.split(",")]
    elif args.target:
        _, target_rec = _find_record(corpus, args.target)
        phonemes = target_rec.phonemes
    else:
        raise ConfigError("pass --text or --target")
    gen = torch.Generator().manual_seed(args.seed)
    out = model.synthesize(phonemes, reference, corpus.stats, generator=gen)
    args.out.mkdir(parents=True, exist_ok=True)
    from .mel import write_mel

    mel_path = args.out / "synthesized.mel"
    write_mel(out["mel"], mel_path)
    print(f"mel: {mel_path} ({out['mel'].n_mels}x{out['mel'].frame_count})")
    print(f"durations: {out['durations']}")
    if args.wav:
        wave = audio.mel_to_waveform(out["mel"], seed=args.seed)
        wav_path = args.out / "synthesized.wav"
        audio.write_wav(wav_path, wave)
        print(f"wav: {wav_path}")
    return 0


def cmd_evaluate(args):
    corpus = load_corpus(args.corpus)
    ck = load_checkpoint(args.checkpoint)
    _check_stats(ck, corpus)
    model = model_from_checkpoint(ck)
    evaluator = load_evaluator(args.evaluator)
    report = evaluate_model(
        model, corpus, args.split, evaluator, seed=args.seed, limit=args.limit
    )
    args.out.mkdir(parents=True, exist_ok=True)
    report_path = args.out / f"report_{args.split}.jsonl"
    report.to_jsonl(report_path)
    print(format_table({args.split: report}))
    print(f"report: {report_path}")
    return 0


def _parse_arm(spec: str):
    if ":" in spec:
        name, rest = spec.split(":", 1)
    else:
        name, rest = spec, ""
    name = name.strip()
    if not name:
        raise ConfigError(f"ablation arm {spec!r} has no name")
    overrides = {}
    if rest.strip():
        overrides = _parse_overrides([kv.strip() for kv in rest.split(",") if kv.strip()])
    return name, overrides


def cmd_ablate(args):
    corpus = load_corpus(args.corpus)
    evaluator = load_evaluator(args.evaluator)
    base = _resolve_config(args, corpus)
    arms = {}
    for spec in args.arm:
        name, overrides = _parse_arm(spec)
        if name in arms:
            raise ConfigError(f"duplicate ablation arm {name!r}")
        arms[name] = base.with_overrides(overrides)
    reports = ablate(
        corpus, arms, evaluator, steps=args.steps, seed=args.seed,
        eval_split=args.split, eval_limit=args.limit, checkpoint_dir=args.cache,
        log_progress=lambda msg: print(msg),
    )
    args.out.mkdir(parents=True, exist_ok=True)
    for name, report in reports.items():
        report.to_jsonl(args.out / f"report_{name}.jsonl")
    table = format_table(reports)
    (args.out / "ablation.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_export_attention(args):
    corpus = load_corpus(args.corpus)
    ck = load_checkpoint(args.checkpoint)
    _check_stats(ck, corpus)
    model = model_from_checkpoint(ck)
    if not (model.config.use_tca and model.config.use_fine_timbre):
        raise ConfigError("checkpoint was trained without the cross-attention path")
    _, target_rec = _find_record(corpus, args.target)
    ref_manifest, ref_rec = _find_record(corpus, args.reference)
    reference = ref_manifest.utterance(ref_rec)
    gen = torch.Generator().manual_seed(args.seed)
    out = model.synthesize(target_rec.phonemes, reference, corpus.stats, generator=gen)
    paths = viz.export_attention_plot(
        args.out, f"{args.target}__{args.reference}",
        out["mel"], reference.mel, out["attention"],
        target_rec.phonemes, out["durations"],
        reference.phonemes, reference.durations,
    )
    for key, path in paths.items():
        print(f"{key}: {path}")
    return 0


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "train-evaluator": cmd_train_evaluator,
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "export-attention": cmd_export_attention,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except StyleDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
