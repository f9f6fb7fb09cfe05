"""Adaptation machinery: segments, pooling, permutation labels, losses."""

import math
from itertools import permutations as iter_permutations

import numpy as np
import pytest

from adaseg import adapt
from adaseg import autodiff as ad
from adaseg.adapt import (LossWeights, StageDALosses, attention_weights,
                          attentive_entropy_loss, beta_schedule, datp,
                          decode_permutation, encode_permutation,
                          global_domain_loss, local_domain_loss,
                          permutation_count, prediction_loss, segment_bounds,
                          shuffle_and_label, split_segments, total_loss)

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# segmenting


def test_segment_bounds_even_and_remainder():
    assert segment_bounds(8, 2) == [(0, 4), (4, 8)]
    assert segment_bounds(7, 2) == [(0, 4), (4, 7)]
    assert segment_bounds(6, 3) == [(0, 2), (2, 4), (4, 6)]
    with pytest.raises(ValueError):
        segment_bounds(1, 2)


def test_segment_bounds_cover_and_balance(rng):
    for _ in range(50):
        frames = int(rng.integers(1, 60))
        m = int(rng.integers(1, frames + 1))
        bounds = segment_bounds(frames, m)
        assert bounds[0][0] == 0 and bounds[-1][1] == frames
        lengths = [hi - lo for lo, hi in bounds]
        assert all(a == b for (_, a), (b, _) in zip(bounds, bounds[1:]))
        assert max(lengths) - min(lengths) <= 1
        assert sorted(lengths, reverse=True) == lengths  # longer segments first


def test_split_segments_carries_gradients(rng):
    f = ad.Tensor(rng.normal(size=(7, 3)), requires_grad=True)
    segs = split_segments(f, 2)
    ad.backward(ad.sum_all(segs[0]))
    assert np.all(f.grad[:4] == 1.0) and np.all(f.grad[4:] == 0.0)


# ---------------------------------------------------------------------------
# attentive pooling (direct-formula oracles)


def datp_oracle(f, d):
    frames = f.shape[0]
    out = np.zeros(f.shape[1])
    for j in range(frames):
        p = d[j]
        nz = p[p > 0]
        h = -(nz * np.log(nz)).sum()
        out += ((1.0 - h) + 1.0) * f[j]
    return out / frames


def test_attention_weight_range(rng):
    logits = rng.normal(size=(40, 2)) * 3
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    d = e / e.sum(axis=1, keepdims=True)
    w = attention_weights(d)
    assert np.all(w >= 2.0 - LN2 - 1e-12) and np.all(w <= 2.0 + 1e-12)
    with pytest.raises(ValueError):
        attention_weights(np.array([[0.7, 0.7]]))


def test_datp_uniform_domain_probs():
    f = np.array([[1.0, 0.0], [0.0, 1.0]])
    d = np.full((2, 2), 0.5)
    v = datp(ad.Tensor(f), d)
    np.testing.assert_allclose(v.value.ravel(), datp_oracle(f, d), atol=1e-12)
    np.testing.assert_allclose(v.value.ravel(), [0.6534265, 0.6534265], atol=1e-6)


def test_datp_zero_entropy_doubles_mean(rng):
    f = rng.normal(size=(5, 3))
    d = np.tile([1.0, 0.0], (5, 1))
    v = datp(ad.Tensor(f), d)
    np.testing.assert_allclose(v.value.ravel(), 2.0 * f.mean(axis=0), atol=1e-12)


def test_datp_single_frame():
    f = np.array([[4.0, -2.0]])
    d = np.array([[0.5, 0.5]])
    v = datp(ad.Tensor(f), d)
    np.testing.assert_allclose(v.value.ravel(), datp_oracle(f, d), atol=1e-12)
    np.testing.assert_allclose(v.value.ravel(), [5.2274113, -2.6137056], atol=1e-6)


def test_datp_uniform_reduces_to_scaled_mean(rng):
    f = rng.normal(size=(11, 4))
    d = np.full((11, 2), 0.5)
    v = datp(ad.Tensor(f), d)
    np.testing.assert_allclose(v.value.ravel(), (2.0 - LN2) * f.mean(axis=0), atol=1e-6)


def test_datp_length_mismatch():
    with pytest.raises(ValueError):
        datp(ad.Tensor(np.ones((3, 2))), np.full((2, 2), 0.5))


def test_datp_differentiable_attention_matches_constant_forward(rng):
    f = ad.Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    logits = ad.Tensor(rng.normal(size=(6, 2)), requires_grad=True)
    d = ad.softmax_rows(logits)
    fixed = datp(f, d.value)
    live = datp(f, d, differentiate_attention=True)
    np.testing.assert_allclose(fixed.value, live.value, atol=1e-12)
    # live attention lets gradient reach the domain logits
    ad.backward(ad.sum_all(live))
    assert logits.grad is not None and np.any(logits.grad != 0)


# ---------------------------------------------------------------------------
# permutation labels


def balanced_sequences(m):
    return sorted(set(iter_permutations([0] * m + [1] * m)))


def test_permutation_counts():
    assert permutation_count(2) == 6
    assert permutation_count(3) == 20
    assert permutation_count(4) == 70


def test_encode_worked_examples():
    assert encode_permutation([0, 0, 1, 1]) == 0
    assert encode_permutation([0, 1, 1, 0]) == 2
    assert encode_permutation([1, 1, 0, 0]) == 5
    assert encode_permutation([0, 1]) == 0
    assert encode_permutation([1, 0]) == 1


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_encode_is_lexicographic_bijection(m):
    seqs = balanced_sequences(m)
    assert len(seqs) == permutation_count(m)
    for rank, seq in enumerate(seqs):
        assert encode_permutation(seq) == rank
        assert decode_permutation(rank, m) == seq


def test_permutation_validation():
    with pytest.raises(ValueError):
        encode_permutation([0, 1, 1])
    with pytest.raises(ValueError):
        encode_permutation([0, 2, 1, 1])
    with pytest.raises(ValueError):
        decode_permutation(6, 2)
    with pytest.raises(ValueError):
        decode_permutation(-1, 2)


def test_shuffle_preserves_within_domain_order(rng):
    m = 3
    v_s = [ad.Tensor(np.full((1, 2), 10.0 + i)) for i in range(m)]
    v_t = [ad.Tensor(np.full((1, 2), 20.0 + i)) for i in range(m)]
    for _ in range(30):
        pooled, label = shuffle_and_label(v_s, v_t, rng)
        slots = pooled.value.reshape(2 * m, 2)[:, 0]
        src_vals = [v for v in slots if v < 20]
        tgt_vals = [v for v in slots if v >= 20]
        assert src_vals == sorted(src_vals)
        assert tgt_vals == sorted(tgt_vals)
        assert tuple(1 if v >= 20 else 0 for v in slots) == label.domain_seq
        assert encode_permutation(label.domain_seq) == label.class_index


def test_shuffle_label_example_sequence():
    # the order [src_a, tgt_a, tgt_b, src_b] must carry domain_seq [0,1,1,0]
    assert encode_permutation((0, 1, 1, 0)) == 2
    assert decode_permutation(2, 2) == (0, 1, 1, 0)


def test_shuffle_is_uniform(rng):
    m = 2
    v_s = [ad.Tensor(np.zeros((1, 1))) for _ in range(m)]
    v_t = [ad.Tensor(np.ones((1, 1))) for _ in range(m)]
    counts = np.zeros(6)
    for _ in range(10_000):
        _, label = shuffle_and_label(v_s, v_t, rng)
        counts[label.class_index] += 1
    freq = counts / counts.sum()
    assert np.all(np.abs(freq - 1 / 6) < 0.02)


def test_shuffle_rejects_unequal_lists(rng):
    with pytest.raises(ValueError):
        shuffle_and_label([ad.Tensor(np.zeros((1, 1)))], [], rng)


# ---------------------------------------------------------------------------
# loss terms (direct-formula oracles)


def test_prediction_loss_perfect_constant_predictions():
    logits = ad.Tensor(np.tile([100.0, 0.0, 0.0], (6, 1)))
    loss = prediction_loss(logits, np.zeros(6, dtype=int))
    assert loss.item() < 1e-6


def test_prediction_loss_uniform():
    logits = ad.Tensor(np.zeros((5, 4)))
    loss = prediction_loss(logits, np.array([0, 1, 2, 3, 0]))
    assert math.isclose(loss.item(), math.log(4.0), rel_tol=1e-9)  # smoothing is 0


def test_prediction_loss_mask_means_over_retained(rng):
    logits_v = rng.normal(size=(8, 3))
    labels = rng.integers(3, size=8)
    mask = np.array([True, False] * 4)
    loss = prediction_loss(ad.Tensor(logits_v), labels, mask, alpha=0.0)
    # oracle: explicit loop over retained frames
    logp = logits_v - logits_v.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    expect = -np.mean([logp[t, labels[t]] for t in range(8) if mask[t]])
    assert math.isclose(loss.item(), expect, rel_tol=1e-12)
    with pytest.raises(ValueError):
        prediction_loss(ad.Tensor(logits_v), labels, np.zeros(8, dtype=bool))


def test_prediction_loss_smoothing_term(rng):
    logits_v = rng.normal(size=(6, 3)) * 5
    labels = rng.integers(3, size=6)
    alpha, tau = 0.15, 4.0
    loss = prediction_loss(ad.Tensor(logits_v), labels, alpha=alpha, tau=tau)
    base = prediction_loss(ad.Tensor(logits_v), labels, alpha=0.0)
    logp = logits_v - logits_v.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    delta = np.clip(logp[1:] - logp[:-1], -tau, tau)
    assert math.isclose(loss.item() - base.item(), alpha * np.mean(delta ** 2),
                        rel_tol=1e-9)


def test_local_domain_loss_values():
    zeros_s = ad.Tensor(np.zeros((4, 2)))
    zeros_t = ad.Tensor(np.zeros((3, 2)))
    assert math.isclose(local_domain_loss(zeros_s, zeros_t).item(), LN2, rel_tol=1e-12)

    confident_s = ad.Tensor(np.tile([50.0, -50.0], (4, 1)))
    confident_t = ad.Tensor(np.tile([-50.0, 50.0], (3, 1)))
    assert local_domain_loss(confident_s, confident_t).item() < 1e-6

    src = ad.Tensor(np.tile(np.log([0.9, 0.1]), (5, 1)))
    tgt = ad.Tensor(np.tile(np.log([0.2, 0.8]), (7, 1)))
    expect = 0.5 * (-math.log(0.9) - math.log(0.8))
    got = local_domain_loss(src, tgt).item()
    assert math.isclose(got, expect, rel_tol=1e-12)
    assert math.isclose(got, 0.164252, abs_tol=1e-6)


def test_local_domain_loss_invariant_to_frame_order(rng):
    src = rng.normal(size=(9, 2))
    tgt = rng.normal(size=(6, 2))
    base = local_domain_loss(ad.Tensor(src), ad.Tensor(tgt)).item()
    perm = local_domain_loss(ad.Tensor(src[rng.permutation(9)]),
                             ad.Tensor(tgt[rng.permutation(6)])).item()
    assert base == perm


def test_local_domain_loss_rejects_empty():
    with pytest.raises(ValueError):
        local_domain_loss(ad.Tensor(np.zeros((0, 2))), ad.Tensor(np.zeros((3, 2))))


def test_global_domain_loss_values():
    uniform = global_domain_loss(ad.Tensor(np.zeros((1, 6))), 3)
    assert math.isclose(uniform.item(), math.log(6.0), rel_tol=1e-12)
    confident = global_domain_loss(ad.Tensor([[100.0, 0, 0, 0, 0, 0]]), 0)
    assert confident.item() < 1e-6
    # direct evaluation: -log softmax([1,0,0,0,0,0])[0]
    loss = global_domain_loss(ad.Tensor([[1.0, 0, 0, 0, 0, 0]]), 0)
    expect = -math.log(math.e / (math.e + 5.0))
    assert math.isclose(loss.item(), expect, rel_tol=1e-12)
    with pytest.raises(ValueError):
        global_domain_loss(ad.Tensor(np.zeros((1, 6))), 6)


def dae_oracle(y, d):
    total = 0.0
    for j in range(y.shape[0]):
        py, pd = y[j], d[j]
        hy = -(py[py > 0] * np.log(py[py > 0])).sum()
        hd = -(pd[pd > 0] * np.log(pd[pd > 0])).sum()
        total += (hd + 1.0) * hy
    return total / y.shape[0]


def test_attentive_entropy_values():
    onehot = np.tile([1.0, 0.0, 0.0], (4, 1))
    d_uniform = np.full((4, 2), 0.5)
    assert attentive_entropy_loss(ad.Tensor(onehot), d_uniform).item() == 0.0

    y_uniform = np.full((5, 2), 0.5)
    d_uniform = np.full((5, 2), 0.5)
    got = attentive_entropy_loss(ad.Tensor(y_uniform), d_uniform).item()
    expect = (LN2 + 1.0) * LN2
    assert math.isclose(got, expect, rel_tol=1e-12)
    assert math.isclose(got, dae_oracle(y_uniform, d_uniform), rel_tol=1e-12)

    d_onehot = np.tile([1.0, 0.0], (5, 1))
    got = attentive_entropy_loss(ad.Tensor(y_uniform), d_onehot).item()
    assert math.isclose(got, LN2, rel_tol=1e-12)
    assert math.isclose(got, 0.693147, abs_tol=1e-6)


def test_attentive_entropy_random_matches_oracle(rng):
    for _ in range(10):
        y = rng.dirichlet(np.ones(4), size=7)
        d = rng.dirichlet(np.ones(2), size=7)
        got = attentive_entropy_loss(ad.Tensor(y), d).item()
        assert math.isclose(got, dae_oracle(y, d), rel_tol=1e-9)
    with pytest.raises(ValueError):
        attentive_entropy_loss(ad.Tensor(np.full((3, 2), 0.5)), np.full((2, 2), 0.5))


# ---------------------------------------------------------------------------
# schedule and total


def test_beta_schedule_values_and_monotonicity():
    b0 = beta_schedule(0.0)
    assert b0 == (0.0, 0.0, 0.0)
    assert math.isclose(beta_schedule(0.5)[0], 0.986614, abs_tol=1e-6)
    assert math.isclose(beta_schedule(1.0)[0], 0.999909, abs_tol=1e-6)
    assert beta_schedule(-3.0) == beta_schedule(0.0)
    assert beta_schedule(7.0) == beta_schedule(1.0)
    values = [beta_schedule(p)[0] for p in np.linspace(0, 1, 40)]
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert values[-1] < 1.0


def scalar(v):
    return ad.Tensor(np.asarray(float(v)))


def test_total_loss_weights_zero_is_prediction_sum():
    preds = [scalar(1.5), scalar(2.5)]
    da = [StageDALosses(binary=scalar(9.0), entropy=scalar(9.0), order=scalar(9.0))]
    w = LossWeights(beta_l=0.0, beta_g=0.0, mu=0.0)
    assert total_loss(preds, da, w, 2, 1).item() == 4.0


def test_total_loss_unit_weights_arithmetic():
    preds = [scalar(1.0), scalar(1.0)]
    da = [StageDALosses(binary=scalar(1.0), entropy=scalar(1.0), order=scalar(1.0))]
    w = LossWeights(beta_l=1.0, beta_g=1.0, mu=1.0)
    assert total_loss(preds, da, w, 2, 1).item() == 5.0


def test_total_loss_missing_terms_rejected():
    preds = [scalar(1.0)]
    with pytest.raises(ValueError):
        total_loss(preds, [], LossWeights(), 2, 0)
    da_no_order = [StageDALosses(binary=scalar(1.0), entropy=scalar(1.0), order=None)]
    with pytest.raises(ValueError):
        total_loss(preds, da_no_order, LossWeights(beta_g=0.5), 1, 1)
    # beta_g == 0 tolerates the absent order term
    assert total_loss(preds, da_no_order, LossWeights(beta_l=1.0, mu=1.0), 1, 1).item() == 3.0


def test_grl_dual_graph_gradient_identity(rng):
    # gradient of beta_l * L_ld w.r.t. backbone input equals -beta_l * lambda
    # times the gradient without reversal; power-of-two factors keep it exact
    from conftest import tiny_model
    model = tiny_model(seed=21)
    f_value = rng.normal(size=(10, 4))
    beta_l, lam = 0.5, 2.0

    def run(with_grl):
        f = ad.Tensor(f_value, requires_grad=True)
        src = model.frame_domain_logits(2, ad.gradient_reverse(f, lam) if with_grl else f)
        tgt_f = ad.Tensor(rng_fixed, requires_grad=False)
        tgt = model.frame_domain_logits(2, ad.gradient_reverse(tgt_f, lam) if with_grl else tgt_f)
        loss = ad.scale(local_domain_loss(src, tgt), beta_l)
        ad.backward(loss)
        return f.grad

    rng_fixed = rng.normal(size=(8, 4))
    with_grl = run(True)
    without = run(False)
    np.testing.assert_array_equal(with_grl, -lam * without)
