import math

import numpy as np
import pytest

from oracles import conv2d_loop, finite_difference
from railwave.errors import BadLabel, DegenerateBatch, MissingGradient, NonPositiveOutputDim, ShapeMismatch
from railwave.nn import (
    SGD,
    BatchNormParams,
    ConvParams,
    LinearParams,
    PoolParams,
    Tensor,
    add,
    batchnorm2d,
    conv2d,
    global_avg_pool,
    grad_check,
    linear,
    pool2d,
    relu,
    reshape,
    sgd_step,
    softmax,
    softmax_cross_entropy,
    step_schedule,
)


def T(a, name=""):
    return Tensor(np.array(a, dtype=np.float64), name=name)


def _randn(rng, *shape, name=""):
    return T(rng.standard_normal(shape), name)


# ---- conv2d ---------------------------------------------------------------


def test_conv_identity_kernel():
    x = T(np.ones((1, 1, 3, 3)))
    out = conv2d(x, ConvParams(T(np.ones((1, 1, 1, 1))), T([0.0])))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv_box_sum():
    x = T(np.arange(1.0, 10.0).reshape(1, 1, 3, 3))
    out = conv2d(x, ConvParams(T(np.ones((1, 1, 2, 2))), T([0.0])))
    np.testing.assert_array_equal(out.data[0, 0], [[12, 16], [24, 28]])
    np.testing.assert_array_equal(out.data, conv2d_loop(x.data, np.ones((1, 1, 2, 2))))


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (2, 0), (3, 2)])
def test_conv_matches_loop_oracle(rng, stride, pad):
    x = rng.standard_normal((2, 3, 9, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = conv2d(T(x), ConvParams(T(w), T(b), stride, pad))
    np.testing.assert_allclose(out.data, conv2d_loop(x, w, stride, pad, b), atol=1e-12)


def test_conv_weight_gradient_against_full_difference(rng):
    x = _randn(rng, 2, 3, 8, 8)
    w = _randn(rng, 4, 3, 3, 3)
    b = _randn(rng, 4)
    p = ConvParams(w, b)
    conv2d(x, p).backward(np.ones((2, 4, 6, 6)))
    numeric = finite_difference(lambda: conv2d(x, p).data.sum(), w.data, 1e-3)
    assert np.max(np.abs(w.grad - numeric) / np.maximum(np.abs(numeric), 1e-8)) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_conv_gradcheck_stride2_pad1(seed):
    rng = np.random.default_rng(seed)
    x, w, b = _randn(rng, 2, 3, 7, 7, name="x"), _randn(rng, 4, 3, 3, 3, name="w"), _randn(rng, 4, name="b")
    p = ConvParams(w, b, stride=2, padding=1)
    rep = grad_check(lambda: conv2d(x, p), [x, w, b], 1e-4, seed=seed)
    assert rep.passed, rep.failures


def test_conv_errors():
    w = T(np.ones((1, 2, 3, 3)))
    with pytest.raises(ShapeMismatch):
        conv2d(T(np.ones((1, 1, 5, 5))), ConvParams(w))
    with pytest.raises(NonPositiveOutputDim):
        conv2d(T(np.ones((1, 2, 2, 2))), ConvParams(w))
    with pytest.raises(ShapeMismatch):
        ConvParams(w, T([1.0, 2.0]))


# ---- pooling --------------------------------------------------------------


def test_pool_examples():
    x = T([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert pool2d(x, PoolParams((2, 2), 2, "max")).data.item() == 4.0
    assert pool2d(x, PoolParams((2, 2), 2, "average")).data.item() == 2.5


def test_pool_constant_input_gradients():
    for mode in ("max", "average"):
        x = T(np.full((1, 1, 4, 4), 3.0))
        out = pool2d(x, PoolParams((2, 2), 2, mode))
        np.testing.assert_array_equal(out.data, 3.0)
        out.backward(np.ones(out.shape))
        assert x.grad.sum() == pytest.approx(4.0)
    # ties go to the first element in row-major order
    assert x.grad[0, 0, 0, 0] == 0.25
    x = T(np.full((1, 1, 2, 2), 1.0))
    pool2d(x, PoolParams((2, 2), 2, "max")).backward(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


@pytest.mark.parametrize("mode,pad", [("max", 0), ("max", 1), ("average", 0)])
def test_pool_gradcheck(rng, mode, pad):
    x = _randn(rng, 2, 2, 7, 7, name="x")
    p = PoolParams((3, 3), 2, mode, pad)
    rep = grad_check(lambda: pool2d(x, p), [x], 1e-4, n_coords=None)
    assert rep.passed, rep.failures


def test_global_avg_pool(rng):
    x = _randn(rng, 3, 4, 5, 6)
    np.testing.assert_allclose(global_avg_pool(x).data, x.data.mean(axis=(2, 3)), atol=1e-15)


# ---- relu / add / reshape --------------------------------------------------


def test_relu():
    x = T([-1.0, 0.0, 2.0])
    out = relu(x)
    np.testing.assert_array_equal(out.data, [0, 0, 2])
    out.backward(np.ones(3))
    np.testing.assert_array_equal(x.grad, [0, 0, 1])
    neg = T(-np.ones(4))
    relu(neg).backward(np.ones(4))
    assert not neg.grad.any()


def test_relu_add_reshape_gradcheck(rng):
    a = rng.standard_normal((3, 4))
    s = rng.choice([-1.0, 1.0], (3, 4)) * rng.uniform(0.1, 2.0, (3, 4))
    # x + y == s, which stays at least 0.1 from the kink
    x, y = T(a, "x"), T(s - a, "y")
    rep = grad_check(lambda: reshape(relu(add(x, y)), (12,)), [x, y], 1e-6, h=1e-4, n_coords=None)
    assert rep.passed, rep.failures


# ---- batch norm ------------------------------------------------------------


def test_batchnorm_training_statistics(rng):
    x = T(rng.normal(3.0, 2.0, (4, 3, 5, 5)))
    p = BatchNormParams.identity(3)
    out = batchnorm2d(x, p, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)
    batch_mean = x.data.mean(axis=(0, 2, 3))
    np.testing.assert_allclose(p.running_mean.data, 0.1 * batch_mean)
    unbiased = x.data.var(axis=(0, 2, 3), ddof=1)
    np.testing.assert_allclose(p.running_var.data, 0.9 + 0.1 * unbiased)


def test_batchnorm_eval_identity(rng):
    x = _randn(rng, 2, 3, 4, 4)
    out = batchnorm2d(x, BatchNormParams.identity(3), training=False)
    np.testing.assert_allclose(out.data, x.data / math.sqrt(1 + 1e-5), atol=1e-12)


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradcheck(rng, training):
    x = _randn(rng, 4, 3, 5, 5, name="x")
    p = BatchNormParams.identity(3)
    p.gamma.data = rng.uniform(0.5, 1.5, 3)
    p.beta.data = rng.standard_normal(3)
    p.gamma.name, p.beta.name = "gamma", "beta"
    # freeze running stats so repeated forwards evaluate the same function
    snapshot = (p.running_mean.data.copy(), p.running_var.data.copy())

    def f():
        p.running_mean.data, p.running_var.data = snapshot[0].copy(), snapshot[1].copy()
        return batchnorm2d(x, p, training)

    rep = grad_check(f, [x, p.gamma, p.beta], 1e-4)
    assert rep.passed, rep.failures


def test_batchnorm_degenerate():
    with pytest.raises(DegenerateBatch):
        batchnorm2d(T(np.ones((1, 2, 1, 1))), BatchNormParams.identity(2), training=True)


# ---- linear / softmax ------------------------------------------------------


def test_linear_examples():
    out = linear(T([[1.0, 1.0]]), LinearParams(T([[1.0, 2.0], [3.0, 4.0]]), T([0.5, -0.5])))
    np.testing.assert_array_equal(out.data, [[3.5, 6.5]])
    x = T([[0.3, -2.0, 7.0]])
    np.testing.assert_array_equal(linear(x, LinearParams(T(np.eye(3)), T(np.zeros(3)))).data, x.data)
    with pytest.raises(ShapeMismatch):
        linear(T(np.ones((1, 4))), LinearParams(T(np.eye(3)), T(np.zeros(3))))


def test_linear_gradcheck(rng):
    x, w, b = _randn(rng, 5, 6, name="x"), _randn(rng, 3, 6, name="w"), _randn(rng, 3, name="b")
    rep = grad_check(lambda: linear(x, LinearParams(w, b)), [x, w, b], 1e-6, n_coords=None)
    assert rep.passed, rep.failures


def test_softmax_examples(rng):
    loss, probs = softmax_cross_entropy(T(np.zeros((1, 17))), np.array([5]))
    np.testing.assert_allclose(probs, 1 / 17, atol=1e-15)
    assert abs(loss.item() - math.log(17)) < 1e-12
    p = softmax(np.array([[1000.0, 1000.0 + math.log(2)]]))
    np.testing.assert_allclose(p, [[1 / 3, 2 / 3]], atol=1e-15)
    z = rng.standard_normal((50, 17)) * 10
    np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax(z + 123.4), softmax(z), atol=1e-12)
    with pytest.raises(BadLabel):
        softmax_cross_entropy(T(np.zeros((2, 3))), np.array([0, 3]))


def test_softmax_ce_gradient(rng):
    z = _randn(rng, 4, 5, name="logits")
    labels = np.array([0, 4, 2, 2])
    loss, probs = softmax_cross_entropy(z, labels)
    loss.backward()
    onehot = np.eye(5)[labels]
    np.testing.assert_allclose(z.grad, (probs - onehot) / 4, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_composite_gradcheck(seed):
    rng = np.random.default_rng(seed)
    x = _randn(rng, 4, 2, 8, 8, name="x")
    w = _randn(rng, 3, 2, 3, 3, name="conv")
    bn = BatchNormParams.identity(3)
    bn.gamma.name, bn.beta.name = "gamma", "beta"
    fw, fb = _randn(rng, 5, 12, name="fc.w"), _randn(rng, 5, name="fc.b")
    labels = rng.integers(0, 5, 4)

    def f():
        bn.running_mean.data, bn.running_var.data = np.zeros(3), np.ones(3)
        h = relu(batchnorm2d(conv2d(x, ConvParams(w, padding=1)), bn, True))
        h = pool2d(h, PoolParams((3, 3), 3, "max"))
        return softmax_cross_entropy(linear(reshape(h, (4, 12)), LinearParams(fw, fb)), labels)[0]

    rep = grad_check(f, [x, w, bn.gamma, bn.beta, fw, fb], 1e-3, h=1e-5, seed=seed)
    assert rep.passed, rep.failures


# ---- optimizer -------------------------------------------------------------


def test_sgd_examples():
    p = T([1.0])
    p.grad = np.array([0.5])
    sgd_step({"p": p}, {}, lr=0.1)
    assert p.data[0] == pytest.approx(0.95, abs=1e-15)
    q = T([1.0, -2.0])
    q.grad = np.array([3.0, 4.0])
    sgd_step({"q": q}, {}, lr=0.0, momentum=0.9, weight_decay=0.1)
    np.testing.assert_array_equal(q.data, [1.0, -2.0])
    with pytest.raises(MissingGradient):
        sgd_step({"r": T([1.0])}, {}, lr=0.1)


def test_sgd_momentum_and_determinism(rng):
    def run():
        p = Tensor(np.ones(3), dtype=np.float32)
        opt = SGD({"p": p}, momentum=0.9, weight_decay=1e-2)
        g = np.random.default_rng(0)
        for _ in range(5):
            p.grad = g.standard_normal(3)
            opt.step(0.1)
        return p.data.copy(), opt.state_dict()

    a, b = run(), run()
    assert a[0].tobytes() == b[0].tobytes()
    # two steps by hand
    p = T([1.0])
    v = {}
    p.grad = np.array([1.0])
    sgd_step({"p": p}, v, 0.1, 0.9, 0.0)
    sgd_step({"p": p}, v, 0.1, 0.9, 0.0)
    assert p.data[0] == pytest.approx(1.0 - 0.1 - 0.19)


def test_step_schedule():
    lr = step_schedule(0.05, 20)
    assert [lr(e) for e in (0, 11, 12, 15, 16, 19)] == pytest.approx([0.05, 0.05, 0.01, 0.01, 0.002, 0.002])


def test_gradcheck_flags_wrong_backward(rng):
    x = _randn(rng, 3, 4, name="x")

    def square_with_bad_grad():
        def backward(g):
            x.accumulate(g * 2.1 * x.data)  # true derivative is 2x

        return Tensor(x.data ** 2, _parents=(x,), _backward=backward)

    rep = grad_check(square_with_bad_grad, [x], 1e-3, n_coords=None)
    assert not rep.passed
    assert rep.max_rel_error == pytest.approx(0.1 / 2.1, rel=1e-3)
