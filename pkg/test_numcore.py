#!/usr/bin/env python3
"""
Autodiff engine tests: op values, invariants and finite-difference gradients.
"""

import numpy as np

from src.exceptions import ConfigError, NumericError, ShapeError
from src.numcore import ops
from src.numcore.functional import linear, mlp2, self_attention, split_heads, merge_heads
from src.numcore.gradcheck import finite_diff_check
from src.numcore.params import ParamStore
from src.numcore.rng import make_rng, truncated_normal
from src.numcore.tensor import Node, Param, backward, constant

TOL = 1e-5


def _store(seed=0, std=0.5):
    return ParamStore(rng=make_rng(seed), init_std=std)


def _check(f, params):
    err = finite_diff_check(f, params, eps=1e-6)
    assert err < TOL, f"gradient mismatch {err:.3e}"
    return err


def test_node_rejects_non_finite():
    try:
        constant([1.0, np.nan])
        assert False, "NaN accepted"
    except NumericError:
        pass
    try:
        ops.log(constant([0.0]))
        assert False, "log(0) accepted"
    except NumericError:
        pass


def test_matmul_identity_and_zeros():
    rng = make_rng(1)
    b = rng.normal(size=(3, 4))
    assert np.array_equal(ops.matmul(constant(np.eye(3)), constant(b)).value, b)
    assert np.array_equal(ops.matmul(constant(np.zeros((2, 3))), constant(b)).value, np.zeros((2, 4)))


def test_matmul_shape_mismatch():
    try:
        ops.matmul(constant(np.ones((2, 3))), constant(np.ones((4, 2))))
        assert False, "mismatched inner dims accepted"
    except ShapeError:
        pass


def test_softmax_rows_and_shift():
    x = make_rng(2).normal(size=(4, 7)) * 5
    y = ops.softmax(constant(x)).value
    assert np.all(y >= 0)
    assert np.max(np.abs(y.sum(axis=-1) - 1.0)) < 1e-12
    assert np.max(np.abs(ops.softmax(constant(x + 123.0)).value - y)) < 1e-12


def test_layer_norm_statistics():
    x = make_rng(3).normal(size=(5, 8)) * 3 + 2
    y = ops.layer_norm(constant(x), constant(np.ones(8)), constant(np.zeros(8)), eps=1e-12).value
    assert np.max(np.abs(y.mean(axis=-1))) < 1e-10
    assert np.max(np.abs(y.var(axis=-1) - 1.0)) < 1e-8


def test_backward_accumulates_on_leaves():
    w = Param("w", [1.0, 2.0])
    loss = ops.sum(ops.mul(w, w))
    backward(loss)
    backward(ops.sum(ops.mul(w, w)))
    assert np.allclose(w.grad, 2 * 2 * np.array([1.0, 2.0]))
    w.zero_grad()
    assert w.grad is None


def test_backward_needs_scalar():
    w = Param("w", np.ones(3))
    try:
        backward(ops.scale(w, 2.0))
        assert False, "non-scalar loss accepted"
    except ShapeError:
        pass


def test_gradcheck_elementwise_ops():
    store = _store()
    a = store.add("a", make_rng(4).normal(size=(3, 4)))
    b = store.add("b", make_rng(5).uniform(0.5, 2.0, size=(3, 4)))
    bias = store.add("bias", make_rng(6).normal(size=(4,)))
    _check(lambda: ops.sum(ops.mul(ops.add(a, bias), ops.sub(b, a))), [a, b, bias])
    _check(lambda: ops.mean(ops.exp(ops.scale(a, 0.5))), [a])
    _check(lambda: ops.sum(ops.log(b)), [b])
    _check(lambda: ops.sum(ops.mul(ops.sigmoid(a), b)), [a, b])
    _check(lambda: ops.sum(ops.add_scalar(ops.neg(a), 3.0)), [a])


def test_gradcheck_activations_away_from_kink():
    values = make_rng(7).normal(size=(4, 5))
    values[np.abs(values) < 0.1] += 0.5
    x = Param("x", values)
    _check(lambda: ops.sum(ops.mul(ops.relu(x), x)), [x])
    _check(lambda: ops.sum(ops.mul(ops.leaky_relu(x), x)), [x])


def test_gradcheck_shape_ops():
    rng = make_rng(8)
    x = Param("x", rng.normal(size=(2, 3, 4)))
    y = Param("y", rng.normal(size=(2, 4, 5)))
    w = Param("w", rng.normal(size=(4, 5)))
    weights = rng.normal(size=(2, 3, 5))
    _check(lambda: ops.sum(ops.mul(ops.matmul(x, y), weights)), [x, y])
    _check(lambda: ops.sum(ops.mul(ops.matmul(x, w), weights)), [x, w])
    _check(lambda: ops.sum(ops.mul(ops.transpose(x, (1, 0, 2)), rng.normal(size=(3, 2, 4)))), [x])
    _check(lambda: ops.sum(ops.mul(ops.reshape(x, (6, 4)), rng.normal(size=(6, 4)))), [x])
    _check(lambda: ops.sum(ops.mul(ops.concat([x, x], axis=1), rng.normal(size=(2, 6, 4)))), [x])
    _check(lambda: ops.sum(ops.mul(ops.sum(x, axis=1), rng.normal(size=(2, 4)))), [x])


def test_gradcheck_gather():
    rng = make_rng(9)
    x = Param("x", rng.normal(size=(5, 3)))
    rows = np.array([0, 2, 2, 4])
    _check(lambda: ops.sum(ops.mul(ops.take_rows(x, rows), rng.normal(size=(4, 3)))), [x])
    col = Param("col", rng.normal(size=(5, 1)))
    _check(lambda: ops.sum(ops.mul(ops.expand_last(col, 3), rng.normal(size=(5, 3)))), [col])


def test_gradcheck_softmax_and_layer_norm():
    rng = make_rng(10)
    x = Param("x", rng.normal(size=(3, 6)))
    gain = Param("gain", rng.normal(size=(6,)))
    bias = Param("bias", rng.normal(size=(6,)))
    weights = rng.normal(size=(3, 6))
    _check(lambda: ops.sum(ops.mul(ops.softmax(x), weights)), [x])
    _check(lambda: ops.sum(ops.mul(ops.layer_norm(x, gain, bias), weights)), [x, gain, bias])


def test_gradcheck_layers():
    store = _store(11)
    x = store.add("x", make_rng(12).normal(size=(4, 8)))
    lin = store.linear("lin", 8, 6)
    mlp = store.mlp2("mlp", 8, 10, 3, "leaky_relu")
    attn = store.attention("attn", 8)
    pos = make_rng(13).normal(size=(4, 8))
    _check(lambda: ops.sum(ops.mul(linear(x, lin), make_rng(14).normal(size=(4, 6)))), list(store))
    _check(lambda: ops.sum(ops.mul(mlp2(x, mlp), make_rng(15).normal(size=(4, 3)))), list(store))
    _check(lambda: ops.sum(ops.mul(self_attention(x, attn, 2, pos=pos)[0], make_rng(16).normal(size=(4, 8)))),
           list(store))


def test_heads_round_trip():
    x = make_rng(17).normal(size=(5, 12))
    split = split_heads(constant(x), 3)
    assert split.shape == (3, 5, 4)
    assert np.array_equal(merge_heads(split).value, x)


def test_gradcheck_eps_range():
    x = Param("x", np.ones(2))
    for eps in (1e-8, 1e-3):
        try:
            finite_diff_check(lambda: ops.sum(x), [x], eps=eps)
            assert False, f"eps {eps} accepted"
        except ValueError:
            pass


def test_rng_streams():
    a = make_rng(3, 1, 2).normal(size=5)
    b = make_rng(3, 1, 2).normal(size=5)
    c = make_rng(3, 2, 1).normal(size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    try:
        make_rng(-1)
        assert False, "negative seed accepted"
    except ValueError:
        pass


def test_truncated_normal_bound():
    values = truncated_normal(make_rng(0), (2000,), std=0.02, bound=2.0)
    assert np.max(np.abs(values)) <= 0.04
    assert abs(values.std() - 0.02) < 0.005


def test_param_store_names_and_state():
    store = _store()
    store.linear("proj", 3, 2)
    store.layer_norm("norm", 2)
    assert store.names() == ["proj.weight", "proj.bias", "norm.gain", "norm.bias"]
    assert store.num_parameters() == 3 * 2 + 2 + 2 + 2
    try:
        store.add("proj.weight", np.zeros(1))
        assert False, "duplicate name accepted"
    except ValueError:
        pass

    state = store.state_dict()
    other = ParamStore(rng=make_rng(99))
    other.linear("proj", 3, 2)
    other.layer_norm("norm", 2)
    other.load_state_dict(state)
    assert all(np.array_equal(other[n].value, store[n].value) for n in store.names())

    state["proj.weight"] = np.zeros((2, 3))
    try:
        other.load_state_dict(state)
        assert False, "shape mismatch accepted"
    except ConfigError:
        pass
    try:
        other.load_state_dict({"proj.weight": np.zeros((3, 2))})
        assert False, "missing names accepted in strict mode"
    except ConfigError:
        pass


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")
