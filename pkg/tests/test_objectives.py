import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semdpo.objectives import (
    LossConfig,
    SFTExample,
    batch_grad,
    batch_loss,
    batch_loss_and_grad,
    bt_preference_prob,
    delta_logodds,
    effective_weight,
    hard_filter_pair_loss,
    implicit_reward,
    pair_loss,
    reference_logprobs,
    reweight,
    semantic_weight,
    semdpo_pair_loss,
    sft_nll,
    sft_nll_and_grad,
)
from semdpo.policy import EOS, PolicyParams, relative_error, sequence_logprob

from conftest import random_pairs, random_params

finite = st.floats(-50, 50)


def test_semantic_weight_values():
    assert semantic_weight(0.0, 0.7) == 1.0
    assert semantic_weight(8.0, 0.0) == 1.0
    assert semantic_weight(8.0, 0.5) == math.exp(-4.0)
    with pytest.raises(ValueError):
        semantic_weight(-1.0, 0.1)
    with pytest.raises(ValueError):
        semantic_weight(1.0, -0.1)


@given(st.floats(0, 30), st.floats(0, 2), st.floats(0, 2))
def test_semantic_weight_monotone(alpha, d1, d2):
    lo, hi = sorted((d1, d2))
    w_lo, w_hi = semantic_weight(alpha, lo), semantic_weight(alpha, hi)
    assert 0 < w_hi <= w_lo <= 1 or (w_hi == 0.0 and w_lo >= 0)


def test_pair_loss_values():
    assert pair_loss(0.0) == math.log(2)
    assert abs(pair_loss(3.0) - math.log1p(math.exp(-3.0))) <= 1e-15
    assert pair_loss(800.0) == 0.0
    assert pair_loss(-800.0) == 800.0


@given(finite, finite)
def test_pair_loss_decreasing_and_positive(a, b):
    lo, hi = sorted((a, b))
    assert pair_loss(hi) <= pair_loss(lo)
    assert pair_loss(a) >= 0


def test_delta_logodds():
    assert delta_logodds(0.05, -3.0, -3.0, -4.0, -4.0) == 0.0
    assert abs(delta_logodds(0.5, -1.0, -2.0, -3.0, -2.0) - 1.0) <= 1e-15
    with pytest.raises(ValueError):
        delta_logodds(0.1, float("nan"), 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        delta_logodds(0.1, float("-inf"), 0.0, 0.0, 0.0)


def test_weighted_and_hard_losses():
    assert semdpo_pair_loss(1.0, 0.3) == pair_loss(0.3)
    assert semdpo_pair_loss(0.25, 0.3) == 0.25 * pair_loss(0.3)
    with pytest.raises(ValueError):
        semdpo_pair_loss(1.5, 0.0)
    assert hard_filter_pair_loss(0.5, 0.5, 0.2) == pair_loss(0.2)
    assert hard_filter_pair_loss(0.5, 0.51, 0.2) == 0.0


@given(finite, finite)
def test_bradley_terry_link(rw, rl):
    p = bt_preference_prob(rw, rl)
    assert abs(p + bt_preference_prob(rl, rw) - 1.0) <= 1e-12
    # -log P(y_w > y_l) equals the pair loss of the reward margin
    assert abs(-math.log(max(p, 1e-300)) - pair_loss(rw - rl)) <= 1e-9 * max(1.0, abs(rw - rl))


def test_implicit_reward():
    assert implicit_reward(0.05, -2.0, -4.0) == 0.05 * 2.0


def test_loss_config_validation():
    for kwargs in ({"alpha": -1}, {"beta": 0}, {"tau": 0}, {"tau": 1.5}, {"alpha": float("inf")}):
        with pytest.raises(ValueError):
            LossConfig(**kwargs)


def test_effective_weight_modes(np_rng):
    pair = random_pairs(np_rng, 1, 8, alpha=8.0)[0]
    cfg = LossConfig(tau=0.5)
    assert effective_weight(pair, cfg, "dpo") == 1.0
    assert effective_weight(pair, cfg, "semdpo") == pair.weight
    assert effective_weight(pair, cfg, "hardfilter") == float(pair.drift_d <= 0.5)
    with pytest.raises(ValueError):
        effective_weight(pair, cfg, "ppo")


def test_batch_loss_per_pair_oracle():
    rng = np.random.default_rng(11)
    V = 10
    p, ref = random_params(rng, V), random_params(rng, V)
    data = random_pairs(rng, 3, V)
    cfg = LossConfig(alpha=8.0, beta=0.3, tau=0.5)
    for mode in ("dpo", "semdpo", "hardfilter"):
        expected = 0.0
        for pr in data:
            xe = pr.prompt_embedding()
            d = cfg.beta * (
                (sequence_logprob(p, xe, pr.y_w) - sequence_logprob(ref, xe, pr.y_w))
                - (sequence_logprob(p, xe, pr.y_l) - sequence_logprob(ref, xe, pr.y_l))
            )
            w = {"dpo": 1.0, "semdpo": pr.weight, "hardfilter": float(pr.drift_d <= cfg.tau)}[mode]
            expected += w * math.log1p(math.exp(-d))
        assert abs(batch_loss(data, p, ref, cfg, mode) - expected / 3) <= 1e-10


def test_batch_grad_finite_differences():
    rng = np.random.default_rng(12)
    V = 8
    p, ref = random_params(rng, V), random_params(rng, V)
    data = random_pairs(rng, 4, V)
    cfg = LossConfig(beta=0.7)
    g = batch_grad(data, p, ref, cfg, "semdpo")
    worst = 0.0
    for k in range(20):
        name = "B" if k % 2 else "C"
        arr, garr = (p.B, g.gB) if name == "B" else (p.C, g.gC)
        i, j = int(rng.integers(arr.shape[0])), int(rng.integers(arr.shape[1]))
        orig = arr[i, j]
        arr[i, j] = orig + 1e-5
        up = batch_loss(data, p, ref, cfg, "semdpo")
        arr[i, j] = orig - 1e-5
        down = batch_loss(data, p, ref, cfg, "semdpo")
        arr[i, j] = orig
        worst = max(worst, relative_error(garr[i, j], (up - down) / 2e-5))
    assert worst < 1e-4


def test_reference_takes_no_gradient_and_is_unchanged():
    rng = np.random.default_rng(13)
    p, ref = random_params(rng, 9), random_params(rng, 9)
    before = ref.checksum()
    data = random_pairs(rng, 5, 9)
    l1, g1 = batch_loss_and_grad(data, p, ref, LossConfig(), "dpo")
    l2, g2 = batch_loss_and_grad(data, p, reference_logprobs(data, ref), LossConfig(), "dpo")
    assert l1 == l2 and np.array_equal(g1.gB, g2.gB)
    assert ref.checksum() == before


def test_semdpo_pair_gradient_norm_bounded_by_dpo():
    rng = np.random.default_rng(14)
    p, ref = random_params(rng, 9), random_params(rng, 9)
    for pair in random_pairs(rng, 10, 9):
        g_sem = batch_grad([pair], p, ref, LossConfig(), "semdpo")
        g_dpo = batch_grad([pair], p, ref, LossConfig(), "dpo")
        assert g_sem.norm() <= g_dpo.norm() + 1e-15


def test_alpha_zero_bit_identical(np_rng):
    p, ref = random_params(np_rng, 9), random_params(np_rng, 9)
    data = random_pairs(np_rng, 20, 9)
    zero = reweight(data, 0.0)
    assert all(z.weight == 1.0 for z in zero)
    cfg = LossConfig(alpha=0.0)
    assert batch_loss(zero, p, ref, cfg, "semdpo") == batch_loss(data, p, ref, cfg, "dpo")
    a, b = batch_grad(zero, p, ref, cfg, "semdpo"), batch_grad(data, p, ref, cfg, "dpo")
    assert np.array_equal(a.gB, b.gB) and np.array_equal(a.gC, b.gC)


def test_empty_dataset_rejected():
    p = PolicyParams.zeros(4, 64)
    with pytest.raises(ValueError):
        batch_loss([], p, p, LossConfig(), "dpo")
    with pytest.raises(ValueError):
        sft_nll([], p)


def test_sft_nll_per_example_oracle():
    rng = np.random.default_rng(15)
    p = random_params(rng, 7)
    data = [SFTExample("misty fox", (3, 4, EOS)), SFTExample("neon owl", (5, EOS))]
    expected = -sum(sequence_logprob(p, ex.prompt_embedding(), ex.y) for ex in data) / 2
    assert abs(sft_nll(data, p) - expected) <= 1e-12
    loss, g = sft_nll_and_grad(data, p)
    assert loss == sft_nll(data, p)
    i, j = 3, 4
    p.B[i, j] += 1e-5
    up = sft_nll(data, p)
    p.B[i, j] -= 2e-5
    down = sft_nll(data, p)
    assert relative_error(g.gB[i, j], (up - down) / 2e-5) < 1e-4


def test_sft_zero_params_value():
    p = PolicyParams.zeros(6, 64)
    data = [SFTExample("a", (3, 4, EOS))]
    assert abs(sft_nll(data, p) - 3 * math.log(6)) <= 1e-12
