"""Autodiff primitives: hand-computed values and finite-difference gradients."""

import math

import numpy as np
import pytest

from dcsf import autodiff as ad
from dcsf import gradcheck
from dcsf.autodiff import Tensor


def _grad(fn, tensors):
    for t in tensors:
        t.zero_grad()
    fn().backward()
    return [t.grad for t in tensors]


def test_add_mul_chain():
    a = Tensor([2.0], requires_grad=True)
    b = Tensor([3.0], requires_grad=True)
    out = ad.mul(ad.add(a, b), b)  # (a+b)*b = 15
    assert out.data[0] == 15.0
    out.backward()
    assert a.grad[0] == 3.0        # d/da = b
    assert b.grad[0] == 8.0        # d/db = a + 2b


def test_relu_values_and_grad():
    x = Tensor([-2.0, 0.0, 3.0], requires_grad=True)
    y = ad.sum_all(ad.relu(x))
    np.testing.assert_array_equal(ad.relu(x).data, [0.0, 0.0, 3.0])
    y.backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_dense_hand_example():
    # y = x @ w.T + b : [1,2]@[0.5,1.0] + 1 = 3.5
    x = Tensor([[1.0, 2.0]], requires_grad=True)
    w = Tensor([[0.5, 1.0]], requires_grad=True)
    b = Tensor([1.0], requires_grad=True)
    y = ad.dense(x, w, b)
    assert y.data[0, 0] == 3.5
    ad.sum_all(y).backward()
    np.testing.assert_array_equal(x.grad, [[0.5, 1.0]])
    np.testing.assert_array_equal(w.grad, [[1.0, 2.0]])
    np.testing.assert_array_equal(b.grad, [1.0])


def test_bce_at_zero_logit_is_ln2():
    labels = np.array([[0], [1]])
    logits = Tensor(np.zeros((2, 1)), requires_grad=True)
    loss = ad.binary_cross_entropy(labels, logits)
    assert loss.data == pytest.approx(math.log(2.0), rel=1e-12)


def test_bce_softplus_identity():
    # label 0, logit z: loss = softplus(z) = log(1 + e^z)
    z = 2.0
    logits = Tensor([[z]], requires_grad=True)
    loss = ad.mean_all(ad.binary_cross_entropy(np.array([[0]]), logits))
    assert loss.data == pytest.approx(math.log1p(math.exp(z)), rel=1e-12)
    loss.backward()
    assert logits.grad[0, 0] == pytest.approx(1.0 / (1.0 + math.exp(-z)), rel=1e-10)


def test_bce_extreme_logits_finite():
    logits = Tensor(np.array([[50.0], [-50.0]]), requires_grad=True)
    loss = ad.binary_cross_entropy(np.array([[0], [1]]), logits)
    assert np.all(np.isfinite(loss.data))
    assert loss.data == pytest.approx(50.0, rel=1e-12)  # softplus(50) ~ 50
    ad.mean_all(loss).backward()
    assert np.all(np.isfinite(logits.grad))


def test_softmax_ce_uniform_logits():
    logits = Tensor(np.zeros((3, 4)), requires_grad=True)
    loss = ad.softmax_cross_entropy(np.array([0, 1, 3]), logits)
    assert loss.data == pytest.approx(math.log(4.0), rel=1e-12)


def test_softmax_ce_shift_invariance():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((5, 3))
    labels = np.array([0, 1, 2, 1, 0])
    a = ad.softmax_cross_entropy(labels, Tensor(z)).data
    b = ad.softmax_cross_entropy(labels, Tensor(z + 1000.0)).data
    assert a == pytest.approx(b, rel=1e-9)


def test_grad_accumulates_across_backward_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    ad.sum_all(ad.mul(x, x)).backward()
    first = x.grad.copy()
    ad.sum_all(ad.mul(x, x)).backward()
    np.testing.assert_array_equal(x.grad, 2 * first)


def test_apply_mask_zeroes_values_and_grads():
    x = Tensor(np.ones((1, 2, 4)), requires_grad=True)
    mask = np.array([[1.0, 1.0, 0.0, 0.0]])
    y = ad.apply_mask(x, mask)
    np.testing.assert_array_equal(y.data[0, :, 2:], 0.0)
    ad.sum_all(y).backward()
    np.testing.assert_array_equal(x.grad[0, :, 2:], 0.0)
    np.testing.assert_array_equal(x.grad[0, :, :2], 1.0)


def test_gap_ignores_masked_columns():
    x = Tensor(np.array([[[1.0, 2.0, 99.0]]]))
    mask = np.array([[1.0, 1.0, 0.0]])
    y = ad.global_average_pool(x, mask)
    assert y.data[0, 0] == pytest.approx(1.5, rel=1e-15)


def test_cap_prefix_means_and_final_column():
    x = Tensor(np.array([[[1.0, 2.0, 3.0]]]))
    mask = np.array([[1.0, 1.0, 1.0]])
    y = ad.causal_average_pool(x, mask)
    np.testing.assert_allclose(y.data[0, 0], [1.0, 1.5, 2.0], rtol=1e-15)
    gap = ad.global_average_pool(x, mask)
    # last causal column is bit-for-bit the global pool
    assert y.data[0, 0, -1] == gap.data[0, 0]


def test_gap_empty_pool_raises():
    x = Tensor(np.ones((1, 1, 2)))
    with pytest.raises(ad.EmptyPoolError):
        ad.global_average_pool(x, np.zeros((1, 2)))


def test_segment_sum_values():
    x = Tensor(np.array([[1.0], [2.0], [4.0]]), requires_grad=True)
    y = ad.segment_sum(x, np.array([0, 0, 1]), 2)
    np.testing.assert_array_equal(y.data, [[3.0], [4.0]])
    ad.sum_all(ad.mul(y, y)).backward()
    np.testing.assert_array_equal(x.grad, [[6.0], [6.0], [8.0]])


def test_conv1d_same_hand_example():
    x = Tensor(np.array([[[1.0, 2.0, 3.0]]]), requires_grad=True)
    w = Tensor(np.array([[[1.0, 0.0, -1.0]]]), requires_grad=True)
    b = Tensor(np.zeros(1), requires_grad=True)
    y = ad.conv1d(x, w, b, padding="same")
    np.testing.assert_array_equal(y.data[0, 0], [-2.0, -2.0, 2.0])


def test_conv1d_causal_hand_example():
    x = Tensor(np.array([[[1.0, 2.0, 3.0]]]))
    w = Tensor(np.array([[[1.0, 1.0]]]))
    b = Tensor(np.zeros(1))
    y = ad.conv1d(x, w, b, padding="causal")
    np.testing.assert_array_equal(y.data[0, 0], [1.0, 3.0, 5.0])


def test_conv1d_causal_never_reads_future():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 2, 9))
    w = Tensor(rng.standard_normal((3, 2, 5)))
    b = Tensor(rng.standard_normal(3))
    full = ad.conv1d(Tensor(x), w, b, padding="causal").data
    for cut in range(1, 9):
        mangled = x.copy()
        mangled[:, :, cut:] = 777.0
        part = ad.conv1d(Tensor(mangled), w, b, padding="causal").data
        np.testing.assert_array_equal(part[:, :, :cut], full[:, :, :cut])


def test_numeric_error_on_nonfinite():
    x = Tensor(np.array([np.inf]))
    with pytest.raises(ad.NumericError):
        ad.binary_cross_entropy(np.array([1]), ad.reshape(x, (1, 1)))


def test_gradcheck_suite_seeded():
    results = gradcheck.suite(seed=3)
    bad = {k: v for k, v in results.items() if v >= gradcheck.TOLERANCE}
    assert not bad, f"gradient check failures: {bad}"


@pytest.mark.parametrize("op", ["relu", "dense", "conv_same", "conv_causal",
                                "gap", "cap", "bn"])
def test_primitive_gradients(op):
    rng = np.random.default_rng(11)
    x = Tensor(rng.standard_normal((2, 3, 6)) + 0.3, requires_grad=True)
    mask = np.ones((2, 6))
    mask[1, 4:] = 0.0
    if op == "relu":
        fn = lambda: ad.sum_all(ad.relu(x))
        tensors = [x]
    elif op == "dense":
        w = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)
        x2 = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
        fn = lambda: ad.sum_all(ad.mul(ad.dense(x2, w, b), ad.dense(x2, w, b)))
        tensors = [x2, w, b]
    elif op in ("conv_same", "conv_causal"):
        w = Tensor(rng.standard_normal((2, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(2), requires_grad=True)
        pad = "same" if op == "conv_same" else "causal"
        fn = lambda: ad.sum_all(ad.mul(ad.conv1d(x, w, b, pad),
                                       ad.conv1d(x, w, b, pad)))
        tensors = [x, w, b]
    elif op == "gap":
        fn = lambda: ad.sum_all(ad.mul(ad.global_average_pool(x, mask),
                                       ad.global_average_pool(x, mask)))
        tensors = [x]
    elif op == "cap":
        fn = lambda: ad.sum_all(ad.mul(ad.causal_average_pool(x, mask),
                                       ad.causal_average_pool(x, mask)))
        tensors = [x]
    else:
        gamma = Tensor(rng.standard_normal(3) + 1.5, requires_grad=True)
        beta = Tensor(rng.standard_normal(3), requires_grad=True)
        rm, rv = np.zeros(3), np.ones(3)
        fn = lambda: ad.sum_all(ad.mul(
            ad.masked_batch_norm(x, gamma, beta, mask, rm, rv, training=True),
            ad.masked_batch_norm(x, gamma, beta, mask, rm, rv, training=True)))
        tensors = [x, gamma, beta]
    err = gradcheck.check(fn, tensors)
    assert err < gradcheck.TOLERANCE
