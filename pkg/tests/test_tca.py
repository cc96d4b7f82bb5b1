import numpy as np
import pytest
import torch

from stylediff.errors import ConfigError
from stylediff.tca import (
    TimbreCrossAttention,
    shared_phoneme_attention_score,
    uniform_attention_base_rate,
)

from oracles import attention_oracle, gradient_check


def literal_tca(dim=4, seed=0):
    torch.manual_seed(seed)
    return TimbreCrossAttention(dim, projections="none")


def test_single_key_collapses_to_value_plus_query():
    tca = literal_tca(dim=3)
    q = torch.randn(1, 3, 4, dtype=torch.float64)
    k = torch.randn(1, 3, 1, dtype=torch.float64)
    v = torch.randn(1, 3, 1, dtype=torch.float64)
    out, attn = tca(q, k, v)
    assert torch.allclose(attn, torch.ones(1, 4, 1, dtype=torch.float64))
    assert torch.allclose(out, v + q, atol=1e-12)


def test_identical_keys_average_values():
    tca = literal_tca(dim=3)
    q = torch.randn(1, 3, 2, dtype=torch.float64)
    key = torch.randn(1, 3, 1, dtype=torch.float64)
    k = key.repeat(1, 1, 2)
    v = torch.randn(1, 3, 2, dtype=torch.float64)
    out, attn = tca(q, k, v)
    assert torch.allclose(attn, torch.full((1, 2, 2), 0.5, dtype=torch.float64))
    expect = v.mean(dim=-1, keepdim=True) + q
    assert torch.allclose(out, expect, atol=1e-12)


def test_random_case_vs_loop_oracle():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(4, 3))
    k = rng.normal(size=(4, 5))
    v = rng.normal(size=(4, 5))
    tca = literal_tca(dim=4)
    out, attn = tca(
        torch.tensor(q)[None], torch.tensor(k)[None], torch.tensor(v)[None]
    )
    out_o, attn_o = attention_oracle(q, k, v)
    assert np.max(np.abs(out[0].numpy() - out_o)) < 1e-6 * max(1, np.abs(out_o).max())
    assert np.max(np.abs(attn[0].numpy() - attn_o)) < 1e-12


def test_rows_stochastic():
    tca = TimbreCrossAttention(8, projections="qk").double()
    q = torch.randn(2, 8, 6, dtype=torch.float64) * 10
    k = torch.randn(2, 8, 9, dtype=torch.float64) * 10
    v = torch.randn(2, 8, 9, dtype=torch.float64)
    _, attn = tca(q, k, v)
    assert (attn >= 0).all()
    assert torch.allclose(attn.sum(dim=-1), torch.ones(2, 6, dtype=torch.float64), atol=1e-6)


def test_key_permutation_equivariance():
    tca = TimbreCrossAttention(5, projections="qk").double()
    q = torch.randn(1, 5, 4, dtype=torch.float64)
    k = torch.randn(1, 5, 7, dtype=torch.float64)
    v = torch.randn(1, 5, 7, dtype=torch.float64)
    out, _ = tca(q, k, v)
    perm = torch.randperm(7)
    out_p, _ = tca(q, k[:, :, perm], v[:, :, perm])
    assert torch.allclose(out, out_p, atol=1e-10)


def test_residual_guarantee_zero_values():
    for mode in ("none", "qk"):
        tca = TimbreCrossAttention(6, projections=mode).double()
        q = torch.randn(1, 6, 3, dtype=torch.float64)
        k = torch.randn(1, 6, 5, dtype=torch.float64)
        out, _ = tca(q, k, torch.zeros(1, 6, 5, dtype=torch.float64))
        assert torch.equal(out, q)


def test_softmax_shift_invariance():
    # adding a constant vector to every key shifts all scores in a row equally
    tca = literal_tca(dim=4)
    q = torch.randn(1, 4, 3, dtype=torch.float64)
    k = torch.randn(1, 4, 6, dtype=torch.float64)
    v = torch.randn(1, 4, 6, dtype=torch.float64)
    _, attn = tca(q, k, v)
    # shift scores per row by adding c * q_t to every key's score via k + c*q-direction:
    # instead verify the documented invariance directly on the softmax
    scores = torch.einsum("bft,bfr->btr", q, k) / 2.0
    shifted = torch.softmax(scores + 3.21, dim=-1)
    assert torch.allclose(shifted, torch.softmax(scores, dim=-1), atol=1e-12)
    assert torch.allclose(attn, torch.softmax(scores, dim=-1), atol=1e-12)


def test_extreme_scores_stable():
    tca = literal_tca(dim=2)
    q = torch.full((1, 2, 2), 600.0)
    k = torch.full((1, 2, 3), 600.0)
    v = torch.randn(1, 2, 3)
    out, attn = tca(q, k, v)
    assert torch.isfinite(out).all() and torch.isfinite(attn).all()


def test_masked_keys_get_zero_attention():
    tca = TimbreCrossAttention(4, projections="qk").double()
    q = torch.randn(2, 4, 3, dtype=torch.float64)
    k = torch.randn(2, 4, 6, dtype=torch.float64)
    v = torch.randn(2, 4, 6, dtype=torch.float64)
    out, attn = tca(q, k, v, key_lengths=torch.tensor([6, 2]))
    assert attn[1, :, 2:].abs().max() == 0
    # row 1 must match running with the truncated reference alone
    out_single, attn_single = tca(q[1:2], k[1:2, :, :2], v[1:2, :, :2])
    assert torch.allclose(out[1:2], out_single, atol=1e-12)
    assert torch.allclose(attn[1:2, :, :2], attn_single, atol=1e-12)


def test_dim_mismatch_rejected():
    tca = literal_tca(dim=4)
    with pytest.raises(ConfigError):
        tca(torch.zeros(1, 3, 2), torch.zeros(1, 4, 2), torch.zeros(1, 4, 2))
    with pytest.raises(ConfigError):
        tca(torch.zeros(1, 4, 2), torch.zeros(1, 4, 0), torch.zeros(1, 4, 0))
    with pytest.raises(ConfigError):
        TimbreCrossAttention(4, projections="bad")


def test_full_map_gradient_check():
    torch.manual_seed(1)
    tca = TimbreCrossAttention(5, projections="qkv").double()
    q = torch.randn(1, 5, 3, dtype=torch.float64)
    k = torch.randn(1, 5, 4, dtype=torch.float64)
    v = torch.randn(1, 5, 4, dtype=torch.float64)
    target = torch.randn(1, 5, 3, dtype=torch.float64)

    def loss_fn():
        out, _ = tca(q, k, v)
        return ((out - target) ** 2).mean()

    rel = gradient_check(list(tca.parameters()), loss_fn, n_coords=40, seed=2)
    assert rel < 1e-4, f"relative gradient error {rel:.2e}"


def test_input_gradient_check():
    torch.manual_seed(2)
    tca = literal_tca(dim=4).double()
    q = torch.randn(1, 4, 3, dtype=torch.float64, requires_grad=True)
    k = torch.randn(1, 4, 5, dtype=torch.float64, requires_grad=True)
    v = torch.randn(1, 4, 5, dtype=torch.float64, requires_grad=True)
    target = torch.randn(1, 4, 3, dtype=torch.float64)

    def loss_fn():
        out, _ = tca(q, k, v)
        return ((out - target) ** 2).mean()

    rel = gradient_check([q, k, v], loss_fn, n_coords=36, seed=5)
    assert rel < 1e-4, f"relative gradient error {rel:.2e}"


def test_alignment_score_disjoint_is_none():
    attn = torch.full((3, 4), 0.25)
    score = shared_phoneme_attention_score(attn, [1, 2], [2, 1], [3, 4], [2, 2])
    assert score is None
    assert uniform_attention_base_rate([1], [3], [2], [3]) is None


def test_alignment_score_perfect_diagonal():
    # target == reference, one frame per phoneme, identity attention
    attn = torch.eye(3)
    score = shared_phoneme_attention_score(attn, [5, 6, 7], [1, 1, 1], [5, 6, 7], [1, 1, 1])
    assert score == pytest.approx(1.0)


def test_uniform_attention_equals_base_rate():
    target_ph, target_dur = [1, 2, 9], [2, 1, 3]
    ref_ph, ref_dur = [2, 1, 1], [2, 3, 1]
    t_frames = sum(target_dur)
    r_frames = sum(ref_dur)
    attn = torch.full((t_frames, r_frames), 1.0 / r_frames)
    score = shared_phoneme_attention_score(attn, target_ph, target_dur, ref_ph, ref_dur)
    base = uniform_attention_base_rate(target_ph, target_dur, ref_ph, ref_dur)
    # phoneme 1 covers 4/6 reference frames, phoneme 2 covers 2/6; the target
    # has 2 frames of phoneme 1, 1 of phoneme 2, and 3 of unshared phoneme 9
    expect = (2 * (4 / 6) + 1 * (2 / 6)) / 3
    assert base == pytest.approx(expect)
    assert score == pytest.approx(expect, abs=1e-6)
