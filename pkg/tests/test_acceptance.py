"""Acceptance suite.

Eight criteria, each printing one PASS/FAIL line. Criteria 4-7 need trained
desk-scale checkpoints; those are built once (or loaded) through
tests/trainruns.py, which caches them under .cache/acceptance keyed by
architecture + corpus digest. A cold cache makes this module train for
roughly 45-60 minutes on one CPU core; warm reruns take a couple of minutes.
"""

import math
import statistics

import numpy as np
import pytest
import torch

from stylediff.diffusion import Denoiser, build_schedule, diffusion_loss, forward_sample, sample, saln
from stylediff.etnet import ETNet, classification_losses, coarse_orthogonality, fine_orthogonality
from stylediff.evaluate import evaluate_ground_truth, evaluate_model
from stylediff.mel import normalize_array
from stylediff.tca import (
    TimbreCrossAttention,
    shared_phoneme_attention_score,
    uniform_attention_base_rate,
)
from stylediff.text import TextEncoder, duration_loss
from stylediff.training import create_trainer, load_checkpoint, restore_trainer, save_checkpoint

from oracles import (
    attention_oracle,
    coarse_ort_oracle,
    fine_ort_oracle,
    forward_sample_oracle,
    gradient_check,
    reverse_step_oracle,
    saln_oracle,
)
from probes import (
    collect_embeddings,
    head_accuracy,
    linear_probe_accuracy,
    shared_phoneme_spectral_distances,
)
import trainruns


def report(criterion: str, passed: bool, detail: str):
    marker = "PASS" if passed else "FAIL"
    print(f"[{marker}] {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


# -------------------------------------------------------------------------
# shared trained artifacts (cached across runs)
# -------------------------------------------------------------------------


@pytest.fixture(scope="session")
def corpus():
    return trainruns.acceptance_corpus()


@pytest.fixture(scope="session")
def evaluator(corpus):
    return trainruns.get_evaluator(corpus)


@pytest.fixture(scope="session")
def arm(corpus):
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = trainruns.get_arm(name, corpus)
        return cache[name]

    return get


# -------------------------------------------------------------------------
# criterion 1: equation oracles
# -------------------------------------------------------------------------


def test_criterion_1_equation_oracles():
    rng = np.random.default_rng(42)
    torch.manual_seed(42)
    worst = 0.0

    def rel(got, expect):
        scale = max(abs(np.asarray(expect)).max(), 1e-12)
        return float(abs(np.asarray(got) - np.asarray(expect)).max() / scale)

    for _ in range(20):
        n_feat = int(rng.integers(2, 9))
        frames = int(rng.integers(1, 7))
        # coarse orthogonality
        a, b = rng.normal(size=n_feat), rng.normal(size=n_feat)
        worst = max(worst, rel(
            coarse_orthogonality(torch.tensor(a), torch.tensor(b)).item(),
            coarse_ort_oracle(a, b),
        ))
        # fine orthogonality
        et, er = rng.normal(size=(n_feat, frames)), rng.normal(size=(n_feat, frames))
        worst = max(worst, rel(
            fine_orthogonality(torch.tensor(et), torch.tensor(er)).item(),
            fine_ort_oracle(et, er),
        ))
        # cross attention with query residual (literal, no projections)
        t_tgt = int(rng.integers(1, 7))
        q = rng.normal(size=(n_feat, t_tgt))
        k = rng.normal(size=(n_feat, frames))
        v = rng.normal(size=(n_feat, frames))
        tca = TimbreCrossAttention(n_feat, projections="none")
        out, attn = tca(torch.tensor(q)[None], torch.tensor(k)[None], torch.tensor(v)[None])
        out_o, attn_o = attention_oracle(q, k, v)
        worst = max(worst, rel(out[0].numpy(), out_o), rel(attn[0].numpy(), attn_o))
        # conditional layer norm
        x = rng.normal(size=(n_feat, frames))
        gamma, beta = rng.normal(size=n_feat), rng.normal(size=n_feat)
        worst = max(worst, rel(
            saln(torch.tensor(x), torch.tensor(gamma), torch.tensor(beta)).numpy(),
            saln_oracle(x, gamma, beta),
        ))
        # forward corruption
        sched = build_schedule(t_steps=int(rng.integers(1, 7)))
        t = int(rng.integers(1, sched.t_steps + 1))
        m0 = rng.normal(size=(n_feat, frames))
        eps = rng.normal(size=(n_feat, frames))
        got = forward_sample(torch.tensor(m0), t, torch.tensor(eps), sched).numpy()
        worst = max(worst, rel(got, forward_sample_oracle(m0, sched.alpha_bar(t), eps)))
        # reverse update
        m_t = rng.normal(size=(n_feat, frames))
        eps_hat = rng.normal(size=(n_feat, frames))
        z = rng.normal(size=(n_feat, frames))
        alpha, abar, sigma = sched.alpha(t), sched.alpha_bar(t), sched.sigma(t)
        manual = (torch.tensor(m_t) - (1 - alpha) / math.sqrt(1 - abar) * torch.tensor(eps_hat)) \
            / math.sqrt(alpha) + sigma * torch.tensor(z)
        worst = max(worst, rel(
            manual.numpy(),
            reverse_step_oracle(m_t, eps_hat, alpha, abar, sigma, z),
        ))

    report(
        "criterion 1 (equation oracles)",
        worst < 1e-6,
        f"max relative error {worst:.2e} over random small instances (tol 1e-6)",
    )


# -------------------------------------------------------------------------
# criterion 2: gradient suite
# -------------------------------------------------------------------------


def test_criterion_2_gradient_suite():
    torch.manual_seed(7)
    results = {}

    enc = TextEncoder(8, dim=8, n_blocks=2, n_heads=2).double()
    ids = torch.randint(0, 8, (2, 5))
    target = torch.randn(2, 8, 5, dtype=torch.float64)
    results["text_encoder"] = gradient_check(
        list(enc.parameters()), lambda: ((enc(ids) - target) ** 2).mean(),
        n_coords=60, seed=0,
    )

    net = ETNet(n_mels=6, dim=8, n_speakers=3, n_rhythms=2, n_heads=2).double()
    mel = torch.randn(1, 6, 5, dtype=torch.float64)

    def et_loss():
        e_tim, e_rhy, e_ase, e_are = net(mel)
        l_spk, l_rhy = classification_losses(e_ase[0], e_are[0], 1, 0, net)
        return (
            l_spk + l_rhy
            + coarse_orthogonality(e_ase[0], e_are[0])
            + 0.01 * fine_orthogonality(e_tim[0], e_rhy[0])
        )

    results["et_encoders_and_classifiers"] = gradient_check(
        list(net.parameters()), et_loss, n_coords=80, seed=1
    )

    tca = TimbreCrossAttention(6, projections="qkv").double()
    q = torch.randn(1, 6, 4, dtype=torch.float64)
    k = torch.randn(1, 6, 5, dtype=torch.float64)
    v = torch.randn(1, 6, 5, dtype=torch.float64)
    tgt = torch.randn(1, 6, 4, dtype=torch.float64)
    results["tca"] = gradient_check(
        list(tca.parameters()), lambda: ((tca(q, k, v)[0] - tgt) ** 2).mean(),
        n_coords=40, seed=2,
    )

    sched = build_schedule(t_steps=8)
    den = Denoiser(n_mels=3, hidden=8, cond_dim=4, n_layers=2).double()
    m0 = torch.randn(1, 3, 4, dtype=torch.float64)
    e_mu = torch.randn(1, 4, 4, dtype=torch.float64)
    e_are = torch.randn(1, 4, dtype=torch.float64)
    t = torch.tensor([5])
    eps = torch.randn(1, 3, 4, dtype=torch.float64)
    results["denoiser"] = gradient_check(
        list(den.parameters()),
        lambda: diffusion_loss(
            lambda m, step: den(m, e_mu, step, e_are), m0, sched, t=t, eps=eps
        ),
        n_coords=60, seed=3,
    )

    dur = torch.randint(1, 6, (2, 5))
    from stylediff.text import DurationPredictor

    pred = DurationPredictor(dim=8, hidden=8).double()
    enc_in = torch.randn(2, 8, 5, dtype=torch.float64)
    results["duration_predictor"] = gradient_check(
        list(pred.parameters()), lambda: duration_loss(pred(enc_in), dur),
        n_coords=40, seed=4,
    )

    worst = max(results.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in results.items())
    report("criterion 2 (gradient suite)", worst < 1e-4, f"{detail} (tol 1e-4)")


# -------------------------------------------------------------------------
# criterion 3: diffusion correctness
# -------------------------------------------------------------------------


def test_criterion_3a_inversion_at_t1():
    sched = build_schedule(beta_start=0.25, beta_end=0.25, t_steps=1)
    m0 = torch.randn(1, 5, 7, dtype=torch.float64)
    abar = sched.alpha_bar(1)

    def oracle(m_t, t):
        return (m_t - math.sqrt(abar) * m0) / math.sqrt(1 - abar)

    gen = torch.Generator().manual_seed(0)
    start = torch.randn(1, 5, 7, dtype=torch.float64, generator=gen)
    out = sample(oracle, (1, 5, 7), sched, initial_noise=start, dtype=torch.float64)
    err = (out - m0).abs().max().item()
    report(
        "criterion 3a (reverse-step algebraic inversion at T=1)",
        err < 1e-10,
        f"max abs error {err:.2e}",
    )


def test_criterion_3b_conditional_toy_distribution():
    # scalar diffusion with two conditioning classes at means -0.5 / +0.5
    torch.manual_seed(11)
    class_means = torch.tensor([-0.5, 0.5])
    data_std = 0.05
    cond_dim = 8
    sched = build_schedule(beta_start=1e-4, beta_end=0.2, t_steps=50)
    net = Denoiser(n_mels=1, hidden=24, cond_dim=cond_dim, n_layers=3)
    class_emb = torch.nn.Embedding(2, cond_dim)
    opt = torch.optim.Adam(list(net.parameters()) + list(class_emb.parameters()), lr=2e-3)
    gen = torch.Generator().manual_seed(1)

    batch = 256
    for step in range(1500):
        labels = torch.randint(0, 2, (batch,), generator=gen)
        x0 = class_means[labels] + data_std * torch.randn(batch, generator=gen)
        x0 = x0.view(batch, 1, 1)
        e_are = class_emb(labels)
        e_mu = torch.zeros(batch, cond_dim, 1)
        loss = diffusion_loss(
            lambda m, t: net(m, e_mu, t, e_are), x0, sched, generator=gen
        )
        opt.zero_grad()
        loss.backward()
        opt.step()

    n = 1000
    errors = {}
    with torch.no_grad():
        for label in (0, 1):
            e_are = class_emb(torch.full((n,), label, dtype=torch.long))
            e_mu = torch.zeros(n, cond_dim, 1)
            out = sample(
                lambda m, t: net(m, e_mu, t, e_are), (n, 1, 1), sched,
                generator=torch.Generator().manual_seed(100 + label),
            )
            errors[label] = abs(float(out.mean()) - float(class_means[label]))
    worst = max(errors.values())
    report(
        "criterion 3b (conditional 1-D sampler means)",
        worst < 0.1,
        f"class-mean errors {errors[0]:.3f} / {errors[1]:.3f} over {n} draws (tol 0.1)",
    )


# -------------------------------------------------------------------------
# criterion 4: disentanglement at toy scale
# -------------------------------------------------------------------------


def test_criterion_4_disentanglement(corpus, arm):
    model = arm("main_s0")
    train_emb = collect_embeddings(model, corpus, "train")
    test_emb = collect_embeddings(model, corpus, "test_seen")

    speaker_acc = head_accuracy(model, test_emb, "speaker")
    rhythm_acc = head_accuracy(model, test_emb, "rhythm")
    probe_acc = linear_probe_accuracy(
        train_emb["e_ase"], train_emb["rhythm"], test_emb["e_ase"], test_emb["rhythm"]
    )
    chance = 1.0 / corpus.n_rhythms
    ok = speaker_acc >= 0.9 and probe_acc <= chance + 0.1 and rhythm_acc >= 0.8
    report(
        "criterion 4 (disentanglement)",
        ok,
        f"speaker from pooled timbre {speaker_acc:.3f} (need >= 0.9), "
        f"rhythm probe on pooled timbre {probe_acc:.3f} (chance {chance:.2f}, "
        f"need <= {chance + 0.1:.2f}), rhythm from pooled rhythm {rhythm_acc:.3f} "
        f"(need >= 0.8)",
    )


def test_criterion_4_gate_evaluator(corpus, evaluator):
    gates = evaluate_ground_truth(corpus, "test_seen", evaluator)
    report(
        "criterion 4 gate (frozen evaluator quality)",
        gates["rhythm_accuracy"] >= 0.95,
        f"ground-truth rhythm accuracy {gates['rhythm_accuracy']:.3f} (need >= 0.95)",
    )


# -------------------------------------------------------------------------
# criterion 5: fine-orthogonality ablation trend
# -------------------------------------------------------------------------


def test_criterion_5_ort_ablation_trend(corpus, evaluator, arm):
    with_ort = evaluate_model(
        arm("main_s0"), corpus, "test_unseen", evaluator, seed=0
    ).aggregates["speaker_cosine"]
    without = evaluate_model(
        arm("no_ort_s0"), corpus, "test_unseen", evaluator, seed=0
    ).aggregates["speaker_cosine"]
    report(
        "criterion 5 (fine-orthogonality trend)",
        with_ort >= without - 0.02,
        f"speaker_cosine with {with_ort:.4f} vs without {without:.4f} "
        f"(fail only below without - 0.02)",
    )


# -------------------------------------------------------------------------
# criterion 6: fine vs global timbre on unseen speakers
# -------------------------------------------------------------------------


def test_criterion_6_fine_timbre_trend(corpus, evaluator, arm):
    margins = []
    for seed in trainruns.TREND_SEEDS:
        fine = evaluate_model(
            arm(f"main_s{seed}"), corpus, "test_unseen", evaluator, seed=0
        ).aggregates["speaker_cosine"]
        ase = evaluate_model(
            arm(f"ase_s{seed}"), corpus, "test_unseen", evaluator, seed=0
        ).aggregates["speaker_cosine"]
        margins.append(fine - ase)
    median = statistics.median(margins)
    report(
        "criterion 6 (fine vs global timbre, unseen speakers)",
        median > 0,
        f"median margin {median:+.4f} over seeds {list(trainruns.TREND_SEEDS)} "
        f"(margins {[f'{m:+.4f}' for m in margins]})",
    )


# -------------------------------------------------------------------------
# criterion 7: attention alignment + spectral transfer
# -------------------------------------------------------------------------


def test_criterion_7a_attention_alignment(corpus, arm):
    model = arm("main_s0")
    manifest = corpus.test_seen
    scores, bases = [], []
    for rec in manifest.records[:16]:
        utt = manifest.utterance(rec)
        out = model.synthesize(
            utt.phonemes, utt, corpus.stats,
            generator=torch.Generator().manual_seed(1),
            target_durations=utt.durations,
        )
        score = shared_phoneme_attention_score(
            torch.from_numpy(out["attention"]),
            utt.phonemes, utt.durations, utt.phonemes, utt.durations,
        )
        base = uniform_attention_base_rate(
            utt.phonemes, utt.durations, utt.phonemes, utt.durations
        )
        scores.append(score)
        bases.append(base)
    mean_score = float(np.mean(scores))
    mean_base = float(np.mean(bases))
    report(
        "criterion 7a (shared-phoneme attention mass)",
        mean_score >= 0.5 and mean_score > mean_base,
        f"score {mean_score:.3f} vs duration-weighted base rate {mean_base:.3f} "
        f"(need >= 0.5 and above base)",
    )


def test_criterion_7b_spectral_transfer(corpus, arm):
    fine_model = arm("main_s0")
    ase_model = arm("ase_s0")
    manifest = corpus.test_unseen
    rng = np.random.default_rng(3)
    diffs = {"fine": [], "ase": []}
    records = manifest.records
    for rec in records:
        candidates = [
            r for r in records
            if r.speaker_id == rec.speaker_id and r.utterance_id != rec.utterance_id
        ]
        ref = manifest.utterance(candidates[int(rng.integers(len(candidates)))])
        for name, model in (("fine", fine_model), ("ase", ase_model)):
            out = model.synthesize(
                rec.phonemes, ref, corpus.stats,
                generator=torch.Generator().manual_seed(7),
                target_durations=rec.durations,
            )
            dists = shared_phoneme_spectral_distances(
                out["mel"].data, rec.phonemes, rec.durations,
                ref.mel.data, ref.phonemes, ref.durations,
            )
            diffs[name].extend(dists)
    fine_median = statistics.median(diffs["fine"])
    ase_median = statistics.median(diffs["ase"])
    report(
        "criterion 7b (shared-phoneme spectral distance)",
        fine_median < ase_median,
        f"median L2 with cross-attention {fine_median:.3f} vs additive-global "
        f"{ase_median:.3f} over {len(diffs['fine'])} shared phonemes",
    )


# -------------------------------------------------------------------------
# criterion 8: determinism and robustness
# -------------------------------------------------------------------------


def test_criterion_8a_bit_exact_loss_curves(corpus):
    config = trainruns.desk_config(seed=123)
    a = create_trainer(corpus, config)
    b = create_trainer(corpus, config)
    history_a = [a.training_step() for _ in range(100)]
    history_b = [b.training_step() for _ in range(100)]
    identical = history_a == history_b
    report(
        "criterion 8a (bit-exact 100-step loss curves)",
        identical,
        "two fresh same-seed runs produced identical loss breakdowns"
        if identical else "loss curves diverged",
    )


def test_criterion_8b_checkpoint_roundtrip(corpus, tmp_path):
    config = trainruns.desk_config(seed=321)
    trainer = create_trainer(corpus, config)
    for _ in range(5):
        trainer.training_step()
    path = tmp_path / "ck.pt"
    save_checkpoint(path, trainer)
    direct = trainer.training_step()
    resumed = restore_trainer(load_checkpoint(path), corpus).training_step()
    identical = direct == resumed
    report(
        "criterion 8b (checkpoint round-trip)",
        identical,
        "post-restore step equals uninterrupted step bit-exactly"
        if identical else f"diverged: {direct} vs {resumed}",
    )


def test_criterion_8c_untrained_sampling_finite(corpus):
    torch.manual_seed(9)
    from stylediff.model import AdaptiveStyleTTS

    model = AdaptiveStyleTTS(trainruns.desk_config(seed=9))
    manifest = corpus.test_seen
    ref = manifest.utterance(manifest.records[0])
    out = model.synthesize(
        ref.phonemes, manifest.utterance(manifest.records[1]), corpus.stats,
        generator=torch.Generator().manual_seed(5),
    )
    finite = np.isfinite(out["mel"].data).all()
    report(
        "criterion 8c (100-step sampling with untrained weights)",
        bool(finite),
        f"sampled {out['mel'].n_mels}x{out['mel'].frame_count} mel with no NaN",
    )
