import numpy as np
import pytest

from kwspot.autodiff import (
    Adam,
    Parameter,
    Tensor,
    backward,
    collect_grads,
    grad_check,
    no_grad,
    ops,
    toposort,
    zero_grad,
)

rng = np.random.default_rng(42)


def randt(*shape, grad=True, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=grad)


class TestForwardExamples:
    def test_identity_conv_kernel(self):
        x = randt(2, 5, 6, 1, grad=False)
        ident = np.zeros((3, 3, 1, 1))
        ident[1, 1, 0, 0] = 1.0
        out = ops.conv2d(x, Tensor(ident), stride=(1, 1), padding=(1, 1))
        assert np.allclose(out.data, x.data)

    def test_zero_weight_linear_returns_bias(self):
        x = randt(4, 7, grad=False)
        b = Tensor(rng.standard_normal(3))
        out = ops.linear(x, Tensor(np.zeros((7, 3))), b)
        assert np.allclose(out.data, np.broadcast_to(b.data, (4, 3)))

    def test_mean_reduce_frequency_axis(self):
        x = randt(128, 5, 24, grad=False)
        out = ops.mean_axis(x, axis=1, keepdims=True)
        assert out.data.shape == (128, 1, 24)
        assert np.allclose(out.data[:, 0, :], x.data.mean(axis=1))

    def test_residual_add_shape_enforced(self):
        with pytest.raises(ValueError, match="residual_add"):
            ops.residual_add(randt(2, 3), randt(3, 2))

    def test_shape_error_names_operator(self):
        with pytest.raises(ValueError, match="conv2d"):
            ops.conv2d(randt(1, 4, 4, 2), Tensor(np.zeros((3, 3, 5, 1))))
        with pytest.raises(ValueError, match="matmul"):
            ops.matmul(randt(2, 3), randt(2, 3))

    def test_softmax_rows_sum_to_one(self):
        y = ops.softmax(randt(5, 9, grad=False))
        assert np.allclose(y.data.sum(axis=1), 1.0)


class TestBackwardClosedForms:
    def test_linear_map_outer_product(self):
        x = rng.standard_normal(6)
        w = Parameter("w", rng.standard_normal((6, 4)))
        loss = ops.sum_axis(ops.linear(Tensor(x.reshape(1, -1)), w))
        backward(loss)
        assert np.allclose(w.grad, np.outer(x, np.ones(4)))

    def test_constant_branch_gets_zero_gradient(self):
        w = Parameter("w", rng.standard_normal((3, 3)))
        unused = Parameter("u", rng.standard_normal((3, 3)))
        loss = ops.sum_axis(ops.square(w))
        backward(loss)
        assert unused.grad is None
        grads = collect_grads([w, unused])
        assert set(grads) == {"w"}

    def test_backward_before_forward_errors(self):
        with pytest.raises(RuntimeError, match="backward called before forward"):
            backward(Tensor(np.asarray(1.0)))

    def test_backward_requires_scalar(self):
        x = randt(3)
        with pytest.raises(ValueError, match="scalar"):
            backward(ops.square(x))

    def test_gradient_accumulates_across_reuse(self):
        x = randt(4)
        loss = ops.sum_axis(ops.add(ops.square(x), ops.square(x)))
        backward(loss)
        assert np.allclose(x.grad, 4 * x.data)


class TestReverseOrder:
    def test_toposort_is_dependency_ordered(self):
        x = randt(3)
        a = ops.square(x)
        b = ops.relu(a)
        c = ops.sum_axis(b)
        order = toposort(c)
        pos = {id(t): i for i, t in enumerate(order)}
        assert pos[id(x)] < pos[id(a)] < pos[id(b)] < pos[id(c)]

    def test_no_grad_builds_no_graph(self):
        x = randt(3)
        with no_grad():
            y = ops.square(x)
        assert not y.requires_grad and y._parents == ()


OPERATOR_CASES = []


def case(name):
    def deco(fn):
        OPERATOR_CASES.append((name, fn))
        return fn
    return deco


def _readout(x, seed=0):
    r = Tensor(np.random.default_rng(seed).standard_normal(x.data.shape))
    return ops.sum_axis(ops.mul(x, r))


@case("add")
def _add(ts):
    return _readout(ops.add(ts[0], ts[1]))


@case("mul")
def _mul(ts):
    return _readout(ops.mul(ts[0], ts[1]))


@case("div")
def _div(ts):
    return _readout(ops.div(ts[0], ops.add(ops.square(ts[1]), 1.0)))


@case("relu")
def _relu(ts):
    return _readout(ops.relu(ts[0]))


@case("sigmoid")
def _sigmoid(ts):
    return _readout(ops.sigmoid(ts[0]))


@case("tanh")
def _tanh(ts):
    return _readout(ops.tanh(ts[0]))


@case("softplus")
def _softplus(ts):
    return _readout(ops.softplus(ts[0]))


@case("exp")
def _exp(ts):
    return _readout(ops.exp(ts[0]))


@case("sqrt")
def _sqrt(ts):
    return _readout(ops.sqrt(ops.add(ops.square(ts[0]), 0.5)))


@case("matmul")
def _matmul(ts):
    return _readout(ops.matmul(ts[0], ops.transpose(ts[1])))


@case("softmax")
def _softmax(ts):
    return _readout(ops.softmax(ts[0]))


@case("mean")
def _mean(ts):
    return _readout(ops.mean_axis(ts[0], axis=1, keepdims=True))


@case("masked_logsumexp")
def _mlse(ts):
    mask = np.random.default_rng(1).random(ts[0].data.shape) > 0.4
    mask.flat[0] = True
    return ops.masked_logsumexp(ts[0], mask)


@case("split")
def _split(ts):
    parts = ops.split(ts[0], 2, axis=1)
    return ops.add(_readout(parts[0]), ops.sum_axis(ops.square(parts[1])))


@pytest.mark.parametrize("name,builder", OPERATOR_CASES, ids=[c[0] for c in OPERATOR_CASES])
def test_operator_gradients_random_shapes(name, builder):
    local = np.random.default_rng(hash(name) % 2**32)
    for trial in range(3):
        r, c = int(local.integers(2, 6)), int(local.integers(2, 7)) * 2
        ts = [Tensor(local.standard_normal((r, c)), requires_grad=True) for _ in range(2)]
        err = grad_check(lambda: builder(ts), ts, step=1e-6, samples_per_tensor=20,
                         rng=np.random.default_rng(trial))
        assert err < 1e-6, f"{name}: {err}"


def test_conv2d_gradient():
    x = randt(2, 6, 7, 3, scale=0.7)
    w = randt(3, 3, 3, 4, scale=0.4)
    b = randt(4)

    def loss():
        return _readout(ops.conv2d(x, w, b, stride=(2, 1), padding=(1, 1)))

    assert grad_check(loss, [x, w, b], step=1e-6, samples_per_tensor=32) < 1e-6


def test_batch_norm_gradient_training_mode():
    x = randt(8, 3, 2, 4)
    g = Tensor(rng.standard_normal(4) * 0.4 + 1.0, requires_grad=True)
    be = randt(4, scale=0.2)
    rm, rv = np.zeros(4), np.ones(4)

    def loss():
        return _readout(ops.batch_norm(x, g, be, rm.copy(), rv.copy(), True))

    assert grad_check(loss, [x, g, be], step=1e-6, samples_per_tensor=48) < 1e-4


def test_batch_norm_eval_uses_running_stats():
    x = randt(4, 2, 2, 3, grad=False)
    g = Tensor(np.ones(3))
    b = Tensor(np.zeros(3))
    rm = np.array([1.0, -1.0, 0.5])
    rv = np.array([4.0, 1.0, 0.25])
    out = ops.batch_norm(x, g, b, rm, rv, training=False)
    expected = (x.data - rm) / np.sqrt(rv + 1e-5)
    assert np.allclose(out.data, expected)
    assert np.array_equal(rm, [1.0, -1.0, 0.5])  # eval does not update


def test_lookup_padding_row_never_updated():
    table = Parameter("t", rng.standard_normal((5, 3)))
    table.data[0] = 0.0
    ids = np.array([[1, 2, 0], [3, 0, 0]])
    loss = ops.sum_axis(ops.square(ops.lookup(table, ids)))
    backward(loss)
    assert np.allclose(table.grad[0], 0.0)
    assert not np.allclose(table.grad[1], 0.0)


def test_grad_check_rejects_bad_step():
    x = randt(3, 4)
    with pytest.raises(ValueError):
        grad_check(lambda: ops.sum_axis(ops.square(x)), [x], step=1e-2)


class TestFreezeAndAdam:
    def test_frozen_parameter_bit_identical_across_updates(self):
        w = Parameter("w", rng.standard_normal((4, 4)).astype(np.float32))
        frozen = Parameter("f", rng.standard_normal((4, 4)).astype(np.float32), trainable=False)
        before = frozen.data.tobytes()
        opt = Adam([w, frozen])
        for _ in range(5):
            loss = ops.sum_axis(ops.square(ops.matmul(ops.add(w, frozen), w)))
            backward(loss)
            opt.step(1e-2)
            opt.zero_grad()
        assert frozen.data.tobytes() == before
        assert w.data.tobytes() != before

    def test_adam_moves_toward_minimum(self):
        w = Parameter("w", np.array([5.0]))
        opt = Adam([w])
        for _ in range(300):
            loss = ops.sum_axis(ops.square(w))
            backward(loss)
            opt.step(0.1)
            opt.zero_grad()
        assert abs(w.data[0]) < 1e-2

    def test_zero_grad(self):
        w = Parameter("w", np.ones(3))
        loss = ops.sum_axis(ops.square(w))
        backward(loss)
        assert w.grad is not None
        zero_grad([w])
        assert w.grad is None


def test_forward_bit_deterministic():
    x = Tensor(rng.standard_normal((4, 6)).astype(np.float32))
    w = Tensor(rng.standard_normal((6, 5)).astype(np.float32))
    a = ops.tanh(ops.matmul(x, w)).data.tobytes()
    b = ops.tanh(ops.matmul(x, w)).data.tobytes()
    assert a == b
