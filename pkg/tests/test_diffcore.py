import zlib

import numpy as np
import pytest

from eventsets import diffcore as dc
from eventsets.diffcore import GradCheckError, GraphError, ShapeError, Tensor


def T(x, name=None):
    return Tensor(np.asarray(x, dtype=np.float64), name=name)


def positive(rng, shape):
    return rng.uniform(0.5, 2.0, shape)


# (name, builder(rng) -> (f, tensors)); every op is checked at 10 random points
def _unary(op, gen=None):
    def build(rng):
        x = T(gen(rng, (3, 4)) if gen else rng.normal(size=(3, 4)), "x")
        w = rng.normal(size=(3, 4))
        return (lambda: dc.tsum(op(x) * w)), [x]
    return build


def _binary(op, gen=None):
    def build(rng):
        a = T(rng.normal(size=(3, 4)), "a")
        b = T(gen(rng, (4,)) if gen else rng.normal(size=(4,)), "b")
        w = rng.normal(size=(3, 4))
        return (lambda: dc.tsum(op(a, b) * w)), [a, b]
    return build


def _matmul(rng):
    a, b = T(rng.normal(size=(2, 3, 4)), "a"), T(rng.normal(size=(4, 5)), "b")
    return (lambda: dc.tsum(dc.matmul(a, b) * dc.matmul(a, b))), [a, b]


def _linear(rng):
    x, w, b = T(rng.normal(size=(2, 3, 4)), "x"), T(rng.normal(size=(4, 5)), "w"), T(rng.normal(size=(5,)), "b")
    r = rng.normal(size=(2, 3, 5))
    return (lambda: dc.tsum(dc.linear(x, w, b) * r)), [x, w, b]


def _layer_norm(rng):
    x, g, b = T(rng.normal(size=(3, 6)), "x"), T(rng.normal(size=(6,)), "g"), T(rng.normal(size=(6,)), "b")
    r = rng.normal(size=(3, 6))
    return (lambda: dc.tsum(dc.layer_norm(x, g, b) * r)), [x, g, b]


def _softmax(rng):
    x = T(rng.normal(size=(3, 5)), "x")
    r = rng.normal(size=(3, 5))
    return (lambda: dc.tsum(dc.softmax_last_dim(x) * r)), [x]


def _getitem(rng):
    x = T(rng.normal(size=(4, 5)), "x")
    idx = (np.array([0, 2, 2, 3]), np.array([1, 1, 1, 4]))
    r = rng.normal(size=4)
    return (lambda: dc.tsum(dc.getitem(x, idx) * r) + dc.tsum(x[1:3] * x[1:3])), [x]


def _concat(rng):
    a, b = T(rng.normal(size=(2, 3)), "a"), T(rng.normal(size=(2, 2)), "b")
    r = rng.normal(size=(2, 5))
    return (lambda: dc.tsum(dc.concat([a, b], axis=-1) * r)), [a, b]


def _shape_ops(rng):
    x = T(rng.normal(size=(2, 3, 4)), "x")
    r = rng.normal(size=(4, 3, 2))
    return (lambda: dc.tsum(dc.transpose(dc.reshape(x, (3, 2, 4)), (2, 0, 1)) * r)
            + dc.tsum(dc.swapaxes(x, 0, 2) * dc.swapaxes(x, 0, 2))), [x]


def _reductions(rng):
    x = T(rng.normal(size=(3, 4)), "x")
    r = rng.normal(size=(4,))
    return (lambda: dc.tsum(dc.mean(x, axis=0) * r) + dc.tsum(dc.expand(dc.tsum(x, axis=1, keepdims=True), (3, 4)) * x)), [x]


def _clamp(rng):
    x = T(rng.uniform(-2, 2, (3, 4)), "x")
    x.data[np.abs(np.abs(x.data) - 1) < 1e-3] += 0.01  # keep away from the kinks
    r = rng.normal(size=(3, 4))
    return (lambda: dc.tsum(dc.clamp(x, -1.0, 1.0) * r)), [x]


def _away_from_zero(rng, shape):
    return rng.choice([-1, 1], shape) * rng.uniform(0.2, 2, shape)


OPS = {
    "add": _binary(dc.add),
    "sub": _binary(dc.sub),
    "mul": _binary(dc.mul),
    "div": _binary(dc.div, positive),
    "scale": _unary(lambda x: dc.scale(x, 2.5)),
    "relu": _unary(dc.relu, _away_from_zero),
    "sigmoid": _unary(dc.sigmoid),
    "exp": _unary(dc.exp),
    "log": _unary(dc.log, positive),
    "abs": _unary(dc.tabs, _away_from_zero),
    "minimum": _binary(dc.minimum),
    "maximum": _binary(dc.maximum),
    "clamp": _clamp,
    "matmul": _matmul,
    "linear": _linear,
    "layer_norm": _layer_norm,
    "softmax": _softmax,
    "getitem": _getitem,
    "concat": _concat,
    "shape_ops": _shape_ops,
    "reductions": _reductions,
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_single_op_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(10):
        f, tensors = OPS[name](rng)
        assert dc.check_tensors(f, tensors) < 1e-6, name


def test_attention_gradient(rng):
    d = 8
    p = dc.AttentionParams(*[T(rng.normal(scale=0.4, size=s), n) for n, s in
                             [("wq", (d, d)), ("bq", (d,)), ("wk", (d, d)), ("wv", (d, d)),
                              ("bv", (d,)), ("wo", (d, d)), ("bo", (d,))]])
    q, kv = T(rng.normal(size=(3, d)), "q"), T(rng.normal(size=(5, d)), "kv")
    r = rng.normal(size=(3, d))
    f = lambda: dc.tsum(dc.multi_head_attention(q, kv, kv, 2, p)[0] * r)
    assert dc.check_tensors(f, [q, kv, p.wq, p.bq, p.wk, p.wv, p.wo]) < 1e-6


class TestExamples:
    def test_softmax_uniform(self):
        np.testing.assert_array_equal(dc.softmax_last_dim(T([0, 0, 0, 0])).data, [0.25] * 4)

    def test_layer_norm_constant(self):
        np.testing.assert_array_equal(dc.layer_norm(T([3.0, 3.0, 3.0])).data, [0, 0, 0])

    def test_linear_identity(self, rng):
        x = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(dc.linear(T(x), T(np.eye(3)), T(np.zeros(3))).data, x)

    def test_single_key_attention(self, rng):
        _, w = dc.multi_head_attention(T(rng.normal(size=(4, 8))), T(rng.normal(size=(1, 8))),
                                       T(rng.normal(size=(1, 8))), 2)
        np.testing.assert_array_equal(w, np.ones((2, 4, 1)))

    def test_attention_rows_sum_to_one(self, rng):
        _, w = dc.multi_head_attention(T(rng.normal(size=(4, 8))), T(rng.normal(size=(6, 8))),
                                       T(rng.normal(size=(6, 8))), 4)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
        assert not w.flags.writeable

    def test_attention_hand_value(self):
        # heads=1, no projections: softmax(q k^T / sqrt(2)) v
        q = np.eye(2)
        out, w = dc.multi_head_attention(T(q), T(q), T(np.array([[1.0, 2.0], [3.0, 4.0]])), 1)
        a = np.exp(1 / np.sqrt(2))
        want_w = np.array([[a, 1], [1, a]]) / (a + 1)
        np.testing.assert_allclose(w[0], want_w, atol=1e-15)
        np.testing.assert_allclose(out.data, want_w @ [[1, 2], [3, 4]], atol=1e-14)

    def test_heads_must_divide(self, rng):
        with pytest.raises(dc.AttentionConfigError):
            dc.multi_head_attention(T(np.zeros((2, 6))), T(np.zeros((2, 6))), T(np.zeros((2, 6))), 4)


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        dc.backward(dc.tsum(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 2)))

    def test_dot_gives_2x(self, rng):
        x = Tensor(rng.normal(size=5), requires_grad=True)
        dc.backward(dc.tsum(x * x))
        np.testing.assert_allclose(x.grad, 2 * x.data, rtol=0, atol=1e-15)

    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * x
        dc.backward(dc.tsum(y + y))
        np.testing.assert_allclose(x.grad, [8.0])

    def test_grad_accumulates_across_calls(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        dc.backward(dc.tsum(x))
        dc.backward(dc.tsum(x))
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_non_scalar(self):
        with pytest.raises(ShapeError):
            dc.backward(Tensor(np.ones(3), requires_grad=True) * 2.0)

    def test_second_backward_raises(self):
        x = Tensor(np.ones(2), requires_grad=True)
        loss = dc.tsum(x * 3.0)
        dc.backward(loss)
        with pytest.raises(GraphError):
            dc.backward(loss)

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with dc.no_grad():
            y = dc.tsum(x * 2.0)
        assert not y.requires_grad

    def test_broadcast_mismatch(self):
        with pytest.raises(ShapeError):
            T(np.ones((2, 3))) + T(np.ones((4,)))

    def test_dropout_deterministic(self, rng):
        x = T(rng.normal(size=(50,)))
        a = dc.dropout(x, 0.5, True, key=(1, 2, 3)).data
        b = dc.dropout(x, 0.5, True, key=(1, 2, 3)).data
        np.testing.assert_array_equal(a, b)
        assert dc.dropout(x, 0.5, False).data is x.data


class TestGradCheck:
    def test_sum_of_squares(self, rng):
        assert dc.grad_check(lambda x: dc.tsum(x * x), rng.normal(size=(4, 3))) < 1e-7

    def test_softmax_cross_entropy(self, rng):
        y = np.eye(4)[[0, 2, 3]]
        f = lambda x: -dc.tsum(dc.log(dc.softmax_last_dim(x)) * y)
        assert dc.grad_check(f, rng.normal(size=(3, 4))) < 1e-6

    def test_step_function_flagged(self):
        # the analytic gradient of a step is zero, the central difference at the jump is huge
        f = lambda x: dc.tsum(dc.clamp(x * 1e9, 0.0, 1.0))
        assert dc.grad_check(f, np.array([0.0])) > 0.5

    def test_non_finite_names_coordinate(self):
        x = Tensor(np.array([1.0, 2e-6]), name="x")
        with pytest.raises(GradCheckError, match=r"x\[1\]"), np.errstate(invalid="ignore"):
            dc.check_tensors(lambda: dc.tsum(dc.log(x - 1e-6)), [x])

    def test_rejects_float32(self):
        with pytest.raises(GradCheckError):
            dc.grad_check(lambda x: dc.tsum(x), Tensor(np.ones(2, dtype=np.float32)))

    def test_non_contiguous_input(self, rng):
        x = Tensor(rng.normal(size=(4, 3)).T, name="x")
        assert dc.check_tensors(lambda: dc.tsum(x * x * x), [x]) < 1e-7
