import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from noisyhash import losses
from noisyhash.errors import ConfigError, NumericError
from oracles import max_rel_error, naive_contrastive, naive_cos, numeric_grad


def codes(rng, m, b):
    return rng.normal(size=(m, b))


def test_cosine_identity_and_orthogonal():
    u = np.array([0.3, -2.0, 5.0])
    assert losses.cosine_sim(u, u) == pytest.approx(1.0, abs=1e-15)
    assert losses.cosine_sim([1, 0], [0, 1]) == 0.0
    assert losses.cosine_sim([1, 0], [1, 1]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert losses.cosine_sim([1, 0], [1, 1]) == pytest.approx(0.70711, abs=1e-5)


def test_cosine_zero_vector_names_argument():
    with pytest.raises(NumericError, match="argument 1"):
        losses.cosine_sim([1.0, 2.0], [0.0, 0.0])
    with pytest.raises(NumericError, match="argument 0"):
        losses.cosine_sim([0.0, 0.0], [1.0, 2.0])


def test_sim_exp_cases():
    assert losses.sim_exp([1, 2], [1, 2], 0.25) == pytest.approx(math.exp(4.0))
    assert losses.sim_exp([1, 0], [0, 3], 0.5) == 1.0
    # cos = 0.5 at 60 degrees
    v = [0.5, math.sqrt(3) / 2]
    assert losses.sim_exp([1, 0], v, 0.5) == pytest.approx(math.e, rel=1e-14)
    with pytest.raises(ConfigError):
        losses.sim_exp([1, 0], v, 0.0)


def test_inter_zero_weights_annihilate():
    rng = np.random.default_rng(0)
    hi, ht = codes(rng, 6, 4), codes(rng, 6, 4)
    loss, gi, gt = losses.inter_modal_loss(hi, ht, np.zeros(6), 0.5)
    assert loss == 0.0
    assert not gi.any() and not gt.any()


def test_zero_weight_removes_one_anchor():
    rng = np.random.default_rng(1)
    hi, ht = codes(rng, 5, 3), codes(rng, 5, 3)
    w = np.ones(5)
    w[2] = 0.0
    loss, gi, _ = losses.inter_modal_loss(hi, ht, w, 0.5)
    full = [naive_contrastive(hi, ht, np.eye(5)[j], 0.5) for j in range(5)]
    assert loss == pytest.approx(sum(full) - full[2], rel=1e-12)
    # loss and gradients are linear in w, so the zeroed anchor's share is exactly missing
    w_only2 = np.eye(5)[2]
    _, gi2, _ = losses.inter_modal_loss(hi, ht, w_only2, 0.5)
    _, gi_all, _ = losses.inter_modal_loss(hi, ht, np.ones(5), 0.5)
    np.testing.assert_allclose(gi + gi2, gi_all, atol=1e-14)


def test_inter_matches_hand_oracle_m2_b2():
    hi = np.array([[1.0, 0.0], [0.0, 1.0]])
    ht = np.array([[1.0, 1.0], [-1.0, 1.0]])
    tau = 0.5
    # anchor 0: pos cos 1/sqrt2, negatives: other anchor cos 0, texts cos 1/sqrt2 and -1/sqrt2
    r = 1 / math.sqrt(2)
    a0 = -math.log(math.exp(r / tau) / (math.exp(0) + math.exp(r / tau) + math.exp(-r / tau)))
    # anchor 1: pos cos 1/sqrt2, negatives: other anchor cos 0, texts cos 1/sqrt2 and 1/sqrt2
    a1 = -math.log(math.exp(r / tau) / (1 + 2 * math.exp(r / tau)))
    loss, _, _ = losses.inter_modal_loss(hi, ht, np.ones(2), tau)
    assert loss == pytest.approx((a0 + a1) / 2, rel=1e-14)
    assert loss == pytest.approx(naive_contrastive(hi, ht, [1, 1], tau), rel=1e-14)


@pytest.mark.parametrize("c", [0.5, 2.0, 10.0])
def test_scale_invariance(c):
    rng = np.random.default_rng(2)
    hi, hia, ht, hta = (codes(rng, 6, 8) for _ in range(4))
    w = rng.random(6)
    base_inter = losses.inter_modal_loss(hi, ht, w, 0.5)[0]
    base_intra = losses.intra_modal_loss(hi, hia, 0.7, 0.5)[0]
    for row in range(6):
        for mat in ("hi", "ht", "hia"):
            arrs = {"hi": hi.copy(), "ht": ht.copy(), "hia": hia.copy()}
            arrs[mat][row] *= c
            assert losses.inter_modal_loss(arrs["hi"], arrs["ht"], w, 0.5)[0] == pytest.approx(base_inter, rel=1e-12)
            assert losses.intra_modal_loss(arrs["hi"], arrs["hia"], 0.7, 0.5)[0] == pytest.approx(base_intra, rel=1e-12)


def test_intra_zero_weight_and_identical_views():
    rng = np.random.default_rng(3)
    h = codes(rng, 2, 2)
    assert losses.intra_modal_loss(h, h, 0.0, 0.5)[0] == 0.0
    loss, _, _ = losses.intra_modal_loss(h, h.copy(), 1.0, 0.5)
    assert loss == pytest.approx(naive_contrastive(h, h, [1, 1], 0.5), rel=1e-13)


@pytest.mark.parametrize("m", [2, 5, 16])
def test_batched_matches_naive_summation(m):
    rng = np.random.default_rng(m)
    for _ in range(5):
        hi, ht = codes(rng, m, 8), codes(rng, m, 8)
        w = rng.random(m)
        loss, _, _ = losses.inter_modal_loss(hi, ht, w, 0.5)
        assert abs(loss - naive_contrastive(hi, ht, w, 0.5)) < 1e-10
        loss, _, _ = losses.intra_modal_loss(hi, ht, 0.3, 0.5)
        assert abs(loss - naive_contrastive(hi, ht, [0.3] * m, 0.5)) < 1e-10


def test_naive_cos_agrees():
    rng = np.random.default_rng(4)
    u, v = rng.normal(size=5), rng.normal(size=5)
    assert losses.cosine_sim(u, v) == pytest.approx(naive_cos(u, v), abs=1e-15)


@pytest.mark.parametrize("m,b", [(2, 2), (4, 8), (8, 2)])
def test_contrastive_gradients(m, b):
    rng = np.random.default_rng(10 * m + b)
    hi, ht = codes(rng, m, b), codes(rng, m, b)
    w = rng.uniform(0.2, 1.0, m)
    _, gi, gt = losses.inter_modal_loss(hi, ht, w, 0.5)
    ni = numeric_grad(lambda h: losses.inter_modal_loss(h, ht, w, 0.5)[0], hi)
    nt = numeric_grad(lambda h: losses.inter_modal_loss(hi, h, w, 0.5)[0], ht)
    assert max_rel_error(gi, ni) < 1e-4
    assert max_rel_error(gt, nt) < 1e-4
    _, g1, g2 = losses.intra_modal_loss(hi, ht, 0.6, 0.5)
    assert max_rel_error(g1, numeric_grad(lambda h: losses.intra_modal_loss(h, ht, 0.6, 0.5)[0], hi)) < 1e-4
    assert max_rel_error(g2, numeric_grad(lambda h: losses.intra_modal_loss(hi, h, 0.6, 0.5)[0], ht)) < 1e-4


def test_shape_and_batch_errors():
    with pytest.raises(ConfigError):
        losses.inter_modal_loss(np.ones((3, 2)), np.ones((3, 4)), np.ones(3), 0.5)
    with pytest.raises(ConfigError):
        losses.intra_modal_loss(np.ones((1, 2)), np.ones((1, 2)), 1.0, 0.5)
    with pytest.raises(ConfigError):
        losses.inter_modal_loss(np.ones((3, 2)), np.ones((3, 2)), np.ones(2), 0.5)


def test_average_weight():
    assert losses.average_weight(np.ones(7)) == 1.0
    assert losses.average_weight([0, 1]) == 0.5
    assert losses.average_weight([0, 0, 0]) == 0.0
    with pytest.raises(ConfigError):
        losses.average_weight([])


def test_total_contrastive_loss():
    assert losses.total_contrastive_loss(1.5, 2.0, 3.0, 0.0, 0.0) == 1.5
    assert losses.total_contrastive_loss(1.5, 2.0, 3.0) == 6.5
    assert losses.total_contrastive_loss(0.0, 0.0, 0.0) == 0.0


def test_quantization_cases():
    rng = np.random.default_rng(5)
    b = losses.sign_pm1(rng.normal(size=(3, 4)))
    loss, grads = losses.quantization_loss(b, b, b, b, b)
    assert loss == 0.0 and all(not g.any() for g in grads)
    z = np.zeros((1, 1))
    assert losses.quantization_loss(np.ones((1, 1)), z, z, z, z)[0] == 4.0


def test_quantization_gradient():
    rng = np.random.default_rng(6)
    b = losses.sign_pm1(rng.normal(size=(4, 8)))
    hs = [rng.normal(size=(4, 8)) for _ in range(4)]
    _, grads = losses.quantization_loss(b, *hs)
    for k in range(4):
        def fn(h, k=k):
            args = list(hs)
            args[k] = h
            return losses.quantization_loss(b, *args)[0]
        assert max_rel_error(grads[k], numeric_grad(fn, hs[k])) < 1e-6


def test_total_loss():
    assert losses.total_loss(1.0, 2.0, 0.01) == pytest.approx(1.02, abs=1e-15)
    assert losses.total_loss(3.0, 100.0, 0.0) == 3.0
    with pytest.raises(ConfigError):
        losses.total_loss(1.0, 1.0, -0.1)


def test_binary_code_cases():
    h = np.array([[0.3, -0.2, 0.0]])
    np.testing.assert_array_equal(losses.update_binary_code(h, h, h, h), [[1.0, -1.0, 1.0]])
    b = losses.update_binary_code([[0.9]], [[0.7]], [[-0.1]], [[-0.3]])
    np.testing.assert_array_equal(b, [[1.0]])
    with pytest.raises(ConfigError):
        losses.update_binary_code(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2)))


matrices = arrays(np.float64, (3, 4), elements=st.floats(-1, 1, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(matrices, matrices, matrices, matrices)
def test_binary_code_properties(a, b, c, d):
    code = losses.update_binary_code(a, b, c, d)
    assert set(np.unique(code)) <= {-1.0, 1.0}
    neg = losses.update_binary_code(-a, -b, -c, -d)
    total = (a + b) / 2 + (c + d) / 2
    nonzero = total != 0
    np.testing.assert_array_equal(neg[nonzero], -code[nonzero])
    np.testing.assert_array_equal(losses.update_binary_code(a, a, a, a), losses.sign_pm1(a))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_contrastive_loss_nonnegative_for_unit_weights(m, b, seed):
    # the positive is one of the terms in its own denominator, so each anchor term is > 0
    rng = np.random.default_rng(seed)
    loss, _, _ = losses.inter_modal_loss(codes(rng, m, b), codes(rng, m, b), np.ones(m), 0.5)
    assert loss > 0
