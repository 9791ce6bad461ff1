import numpy as np
import pytest

from trajshap.core import tensor as T
from trajshap.core.tensor import Tensor, backward, gradient_check, set_debug_numerics
from trajshap.errors import InvalidArgumentError, NumericError, ShapeError


def _param(shape, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def test_shared_node_accumulates_gradient():
    x = Tensor(np.array([1.5, -2.0, 0.25]), requires_grad=True)
    loss = T.reduce_sum(x * x + x)
    grads = backward(loss)
    assert np.allclose(grads[x], 2 * x.data + 1, rtol=0, atol=1e-15)
    assert np.array_equal(x.grad, grads[x])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(InvalidArgumentError):
        backward(x * 2.0)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_logsumexp_is_stable():
    out = T.logsumexp(Tensor(np.array([1000.0, 1000.0])))
    assert out.item() == pytest.approx(1000.0 + np.log(2.0), abs=1e-12)


def test_log_softmax_matches_softmax():
    x = Tensor(np.array([[0.3, -1.2, 2.0], [5.0, 5.0, 5.0]]))
    assert np.allclose(np.exp(T.log_softmax(x).data), T.softmax(x).data, atol=1e-15)


@pytest.mark.parametrize("fn_name", ["tanh", "exp", "softplus", "square", "log_softmax", "softmax"])
def test_elementwise_gradients(fn_name):
    x = _param((3, 4), seed=1)
    fn = getattr(T, fn_name)
    w = Tensor(np.random.default_rng(9).standard_normal((3, 4)))
    assert gradient_check(lambda: T.reduce_sum(T.mul(fn(x), w)), [x]) < 1e-5


def test_log_and_div_gradients():
    x = Tensor(np.random.default_rng(2).uniform(0.5, 2.0, size=(2, 3)), requires_grad=True)
    y = Tensor(np.random.default_rng(3).uniform(0.5, 2.0, size=(2, 3)), requires_grad=True)
    assert gradient_check(lambda: T.reduce_sum(T.div(T.log(x), y)), [x, y]) < 1e-5


def test_relu_gradient_away_from_kink():
    x = Tensor(np.array([[-2.0, -0.5, 0.7, 1.3]]), requires_grad=True)
    assert gradient_check(lambda: T.reduce_sum(T.square(T.relu(x))), [x]) < 1e-5


def test_batched_matmul_and_shape_ops_gradients():
    a = _param((2, 3, 4), seed=4)
    b = _param((4, 5), seed=5)
    c = _param((2, 5, 3), seed=6)

    def fn():
        ab = T.matmul(a, b)                         # (2, 3, 5)
        abc = T.matmul(ab, c)                       # (2, 3, 3)
        flat = T.reshape(T.transpose(abc, (0, 2, 1)), (2, 9))
        picked = T.concat([flat[:, :4], T.expand(flat[:, 4:5], axis=1, n=2)], axis=-1)
        return T.reduce_mean(T.tanh(picked))

    assert gradient_check(fn, [a, b, c]) < 1e-5


def test_mixture_density_gradients():
    y = Tensor(np.random.default_rng(7).standard_normal((2, 3, 4)))
    mu = _param((2, 3, 4), seed=8)
    raw = _param((2, 3, 4), seed=9, scale=0.3)
    logits = _param((2, 3), seed=10)

    def fn():
        sigma = T.add(T.softplus(raw), 0.1)
        per_mode = T.reduce_sum(T.gaussian_log_pdf(y, mu, sigma), axis=-1)
        return T.neg(T.reduce_mean(T.logsumexp(T.add(T.log_softmax(logits), per_mode), axis=-1)))

    assert gradient_check(fn, [mu, raw, logits]) < 1e-5


def test_broadcast_gradient_sums_over_batch():
    x = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    grads = backward(T.reduce_sum(T.add(x, b)))
    assert np.array_equal(grads[b], np.full(3, 4.0))


def test_expand_copies_along_unit_axis():
    x = _param((2, 1, 3), seed=5)
    out = T.expand(x, axis=1, n=4)
    assert out.shape == (2, 4, 3)
    assert np.array_equal(out.numpy()[:, 3], x.data[:, 0])
    grads = backward(T.reduce_sum(out))
    assert np.array_equal(grads[x], np.full(x.shape, 4.0))
    with pytest.raises(ShapeError):
        T.expand(_param((2, 2)), axis=1, n=3)


def test_debug_numerics_trap():
    set_debug_numerics(True)
    try:
        with np.errstate(divide="ignore"):
            with pytest.raises(NumericError):
                T.log(Tensor(np.array([0.0, 1.0])))
    finally:
        set_debug_numerics(False)
