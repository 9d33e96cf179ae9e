import numpy as np
import pytest

from whtnet.errors import ShapeError
from whtnet.gradcheck import max_norm_rel_err, numeric_grad
from whtnet.nn import ops
from whtnet.opcount import OpCounter


def naive_conv3x3(x, k, stride, bias=None):
    """Direct loops over output pixels with TensorFlow-style 'same' padding."""
    n, w, h, c = x.shape
    wo, w0, _ = ops.same_padding(w, 3, stride)
    ho, h0, _ = ops.same_padding(h, 3, stride)
    y = np.zeros((n, wo, ho, k.shape[-1]))
    for a in range(wo):
        for b in range(ho):
            for i in range(3):
                for j in range(3):
                    xi, yj = a * stride + i - w0, b * stride + j - h0
                    if 0 <= xi < w and 0 <= yj < h:
                        y[:, a, b, :] += x[:, xi, yj, :] @ k[i, j]
    return y if bias is None else y + bias


def check_grads(f, inputs, rtol=1e-6):
    """``f(*inputs)`` returns ``(out, backward)``; checks every input gradient."""
    rng = np.random.default_rng(0)
    out, back = f(*inputs)
    probe = rng.normal(size=out.shape)
    grads = back(probe)
    for arr, g in zip(inputs, grads):
        if g is None:
            continue
        num = numeric_grad(lambda: float((f(*inputs)[0] * probe).sum()), arr)
        assert max_norm_rel_err(g, num) < rtol


@pytest.mark.parametrize("shape", [(2, 5, 5, 3), (1, 6, 4, 2), (2, 7, 8, 1)])
@pytest.mark.parametrize("stride", [1, 2])
def test_conv3x3_matches_naive(shape, stride):
    rng = np.random.default_rng(1)
    x = rng.normal(size=shape)
    k = rng.normal(size=(3, 3, shape[-1], 4))
    b = rng.normal(size=4)
    y, _ = ops.conv3x3(x, k, stride, b)
    np.testing.assert_allclose(y, naive_conv3x3(x, k, stride, b), atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv3x3_gradients(stride):
    rng = np.random.default_rng(2)
    x, k, b = rng.normal(size=(2, 5, 4, 2)), rng.normal(size=(3, 3, 2, 3)), rng.normal(size=3)

    def f(x, k, b):
        y, cache = ops.conv3x3(x, k, stride, b)
        return y, lambda dy: ops.conv3x3_backward(dy, cache)

    check_grads(f, [x, k, b])


def test_conv1x1_gradients_and_value():
    rng = np.random.default_rng(3)
    x, k, b = rng.normal(size=(2, 3, 3, 4)), rng.normal(size=(4, 5)), rng.normal(size=5)
    y, _ = ops.conv1x1(x, k, b)
    np.testing.assert_allclose(y, np.einsum("nwhc,cd->nwhd", x, k) + b, atol=1e-12)

    def f(x, k, b):
        y, cache = ops.conv1x1(x, k, b)
        return y, lambda dy: ops.conv1x1_backward(dy, cache)

    check_grads(f, [x, k, b])


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_gradients(training):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 2, 2, 4))
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    rm, rv = rng.normal(size=4), rng.uniform(0.5, 2, 4)

    def f(x, gamma, beta):
        y, cache = ops.batch_norm(x, gamma, beta, rm.copy(), rv.copy(), training)
        return y, lambda dy: ops.batch_norm_backward(dy, cache)

    check_grads(f, [x, gamma, beta])


def test_batch_norm_statistics():
    x = np.random.default_rng(5).normal(3.0, 2.0, size=(64, 2, 2, 3))
    rm, rv = np.zeros(3), np.ones(3)
    y, _ = ops.batch_norm(x, np.ones(3), np.zeros(3), rm, rv, True, momentum=0.9)
    np.testing.assert_allclose(y.mean(axis=(0, 1, 2)), 0, atol=1e-12)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 1, 2)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 1, 2)))


def test_dense_gap_relu_gradients():
    rng = np.random.default_rng(6)

    def f_dense(x, k, b):
        y, cache = ops.dense(x, k, b)
        return y, lambda dy: ops.dense_backward(dy, cache)

    check_grads(f_dense, [rng.normal(size=(3, 4)), rng.normal(size=(4, 2)),
                          rng.normal(size=2)])

    def f_gap(x):
        y, cache = ops.gap(x)
        return y, lambda dy: (ops.gap_backward(dy, cache),)

    check_grads(f_gap, [rng.normal(size=(2, 3, 2, 4))])

    def f_relu(x):
        y, cache = ops.relu(x)
        return y, lambda dy: (ops.relu_backward(dy, cache),)

    x = rng.normal(size=(20,))
    x[np.abs(x) < 1e-3] = 0.5
    check_grads(f_relu, [x])


def test_squeeze_excite_gradients():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 3, 3, 8))
    params = [rng.normal(size=(8, 2)), rng.normal(size=2), rng.normal(size=(2, 8)),
              rng.normal(size=8)]

    def f(x, k1, b1, k2, b2):
        y, cache = ops.squeeze_excite(x, k1, b1, k2, b2)
        return y, lambda dy: ops.squeeze_excite_backward(dy, cache)

    check_grads(f, [x] + params)


def test_softmax_xent_uniform_logits():
    for k in (2, 10, 37):
        loss, _ = ops.softmax_xent(np.zeros((5, k)), np.arange(5) % k)
        assert loss == pytest.approx(np.log(k))


def test_softmax_xent_gradient_and_stability():
    rng = np.random.default_rng(8)
    logits, labels = rng.normal(size=(4, 5)), np.array([0, 3, 4, 1])
    _, grad = ops.softmax_xent(logits, labels)
    num = numeric_grad(lambda: ops.softmax_xent(logits, labels)[0], logits)
    np.testing.assert_allclose(grad, num, atol=1e-8)
    loss, _ = ops.softmax_xent(np.array([[1000.0, 0.0]]), np.array([0]))
    assert np.isfinite(loss) and loss == pytest.approx(0.0)
    np.testing.assert_allclose(ops.softmax(logits).sum(axis=1), 1.0)


def test_same_padding():
    assert ops.same_padding(5, 3, 1) == (5, 1, 1)
    assert ops.same_padding(8, 3, 2) == (4, 0, 1)
    assert ops.same_padding(7, 3, 2) == (4, 1, 1)


def test_conv3x3_op_count_closed_form():
    n, w, h, c = 2, 4, 4, 8
    with OpCounter() as cnt:
        ops.conv3x3(np.ones((n, w, h, c)), np.ones((3, 3, c, c)))
    assert cnt["matmul_mul"] == n * 9 * w * h * c * c


def test_shape_errors():
    with pytest.raises(ShapeError):
        ops.conv3x3(np.ones((1, 4, 4, 2)), np.ones((3, 3, 3, 1)))
    with pytest.raises(ShapeError):
        ops.conv3x3(np.ones((1, 4, 4, 2)), np.ones((3, 3, 2, 1)), stride=3)
    with pytest.raises(ShapeError):
        ops.conv1x1(np.ones((1, 4, 4, 2)), np.ones((3, 1)))
