import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcheck import check_gradients
from texvol.autodiff import ParamStore, Tape, Var, concat, stack


def leaf(store, name, arr):
    store.add(name, arr)
    return store


def test_forward_values_match_numpy():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(4, 3))
    tape = Tape()
    va, vb = tape.constant(a), tape.constant(b)
    assert np.array_equal((va + vb).value, a + b)
    assert np.array_equal((va * vb).value, a * b)
    assert np.array_equal((va - vb).value, a - b)
    assert np.array_equal((va / (vb.abs() + 1.0)).value, a / (np.abs(b) + 1.0))
    assert np.array_equal(va.exp().value, np.exp(a))
    assert np.array_equal(va.sigmoid().value, 1.0 / (1.0 + np.exp(-a)))
    assert np.array_equal(va.relu().value, np.maximum(a, 0))
    assert np.allclose(va.norm(-1).value, np.linalg.norm(a, axis=-1), atol=0, rtol=0)


def test_scalar_ops_keep_float32():
    # 0-d float64 coercion of python scalars must not promote f32 graphs
    tape = Tape()
    v = tape.constant(np.ones((3, 2), dtype=np.float32))
    for out in (v * 2.5, v / 3.0, 2.5 * v, 1.0 / (v + 1.0), v - 0.5, v + 0.5):
        assert out.value.dtype == np.float32


def test_ndarray_op_var_defers_to_var():
    tape = Tape()
    v = tape.constant(np.ones(3))
    out = np.array([1.0, 2.0, 3.0]) * v
    assert isinstance(out, Var)
    out2 = np.array([1.0, 2.0, 3.0]) - v
    assert isinstance(out2, Var)
    assert np.array_equal(out2.value, np.array([0.0, 1.0, 2.0]))


def test_gradient_accumulates_until_zero_grad():
    store = ParamStore()
    store.add("w", np.array([2.0]))

    def run():
        tape = Tape()
        w = store.leaf(tape, "w")
        tape.backward((w * w).sum())

    run()
    g1 = store.grads["w"].copy()
    run()
    assert np.array_equal(store.grads["w"], 2 * g1)
    store.zero_grad()
    assert np.array_equal(store.grads["w"], np.zeros(1))


def test_backward_shared_subexpression():
    # y = x*x reused twice: d/dx (x*x + x*x) = 4x
    store = ParamStore()
    store.add("x", np.array([3.0]))
    tape = Tape()
    x = store.leaf(tape, "x")
    sq = x * x
    tape.backward((sq + sq).sum())
    assert np.allclose(store.grads["x"], [12.0], rtol=0, atol=1e-14)


def test_take_rows_pullback_matches_scatter_oracle():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(6, 4))
    idx = np.array([0, 2, 2, 5, 0, 0])
    g = rng.normal(size=(6, 4))
    store = ParamStore()
    store.add("a", a)
    tape = Tape()
    va = store.leaf(tape, "a")
    out = va.take_rows(idx)
    tape.backward((out * g).sum())
    ref = np.zeros_like(a)
    np.add.at(ref, idx, g)                      # independent scatter route
    assert np.allclose(store.grads["a"], ref, rtol=0, atol=1e-14)


@pytest.mark.parametrize("seed", range(6))
def test_op_gradients_fd(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    store.add("A", rng.normal(size=(5, 3)))
    store.add("W", rng.normal(size=(3, 4)))
    store.add("b", rng.normal(size=(4,)))
    idx = rng.integers(0, 5, size=7)

    def build(tape):
        A = store.leaf(tape, "A")
        W = store.leaf(tape, "W")
        b = store.leaf(tape, "b")
        h = (A @ W + b).relu()
        h = h.sigmoid() * h.softplus() + (h * 0.3).sin() + (h * 0.1).cos()
        h = (h + 1.5).log() + (h.abs() + 0.5).sqrt()
        h = h.clamp(-2.0, 2.0)
        g = h.take_rows(idx).cumsum(axis=1)
        n = (A * A).sum(-1, keepdims=True).sqrt()
        return g.sum() + n.sum() + A.norm(-1).sum() + h.mean()

    fails = check_gradients(build, [store], rng, entries_per_block=4)
    assert not fails, fails


def test_norm_zero_row_subgradient_is_finite():
    store = ParamStore()
    store.add("x", np.array([[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]]))
    tape = Tape()
    x = store.leaf(tape, "x")
    tape.backward(x.norm(-1).sum())
    g = store.grads["x"]
    assert np.all(np.isfinite(g))
    assert np.array_equal(g[0], np.zeros(3))
    assert np.allclose(g[1], [0.6, 0.8, 0.0], rtol=0, atol=1e-15)


def test_concat_stack_roundtrip_gradients():
    rng = np.random.default_rng(2)
    store = ParamStore()
    store.add("a", rng.normal(size=(3, 2)))
    store.add("b", rng.normal(size=(3, 5)))

    def build(tape):
        a, b = store.leaf(tape, "a"), store.leaf(tape, "b")
        c = concat([a, b], axis=-1)
        s = stack([a.sum(-1), b.sum(-1)], axis=0)
        return (c * c).sum() + s.mean()

    fails = check_gradients(build, [store], rng, entries_per_block=4)
    assert not fails, fails


@settings(max_examples=30, deadline=None)
@given(rows=st.integers(1, 6), cols=st.integers(1, 5),
       seed=st.integers(0, 2**16))
def test_unbroadcast_row_vector(rows, cols, seed):
    # (rows, cols) + (cols,) broadcast: bias grad must be the column sums
    rng = np.random.default_rng(seed)
    store = ParamStore()
    store.add("b", rng.normal(size=(cols,)))
    x = rng.normal(size=(rows, cols))
    tape = Tape()
    out = store.leaf(tape, "b") + tape.constant(x)
    tape.backward(out.sum())
    assert np.allclose(store.grads["b"], np.full(cols, rows), rtol=0, atol=1e-12)


def test_gate_zeroes_masked_rows():
    store = ParamStore()
    store.add("x", np.arange(6.0).reshape(3, 2))
    mask = np.array([True, False, True])[:, None]
    tape = Tape()
    x = store.leaf(tape, "x")
    out = x.gate(mask)
    assert np.array_equal(out.value[1], np.zeros(2))
    tape.backward(out.sum())
    assert np.array_equal(store.grads["x"][1], np.zeros(2))
    assert np.array_equal(store.grads["x"][0], np.ones(2))


def test_cast_roundtrip_gradient_dtype():
    store = ParamStore(np.float64)
    store.add("x", np.ones(4))
    tape = Tape()
    x = store.leaf(tape, "x")
    y = x.cast(np.float32)
    assert y.value.dtype == np.float32
    tape.backward((y * 2.0).sum())
    assert store.grads["x"].dtype == np.float64
    assert np.allclose(store.grads["x"], 2.0)
