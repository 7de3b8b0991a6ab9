import numpy as np
import pytest

from texvol.autodiff import ParamStore, Tape
from texvol.optim import NanGradient, adam_step, lr_exp_decay


def reference_adam(x0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook bias-corrected Adam, scalar trajectory."""
    x = float(x0)
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        x -= lr * mhat / (np.sqrt(vhat) + eps)
        out.append(x)
    return np.array(out)


def test_adam_matches_reference_100_steps():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=100)
    store = ParamStore()
    store.add("x", np.array([0.7]))
    traj = []
    for g in grads:
        store.grads["x"][:] = g
        adam_step(store, 1e-2)
        traj.append(store.blocks["x"][0])
    ref = reference_adam(0.7, grads, 1e-2)
    assert np.max(np.abs(np.array(traj) - ref)) <= 1e-12


def test_adam_quadratic_converges():
    store = ParamStore()
    store.add("x", np.array([5.0, -3.0]))
    target = np.array([1.0, 2.0])
    for _ in range(2000):
        tape = Tape()
        x = store.leaf(tape, "x")
        tape.backward(((x - target) * (x - target)).sum())
        adam_step(store, 2e-2)
    assert np.max(np.abs(store.blocks["x"] - target)) < 1e-3


def test_adam_nan_gradient_aborts_before_mutation():
    store = ParamStore()
    store.add("ok", np.ones(2))
    store.add("bad", np.ones(2))
    store.grads["ok"][:] = 1.0
    store.grads["bad"][:] = np.nan
    with pytest.raises(NanGradient, match="bad"):
        adam_step(store, 1e-3)
    assert np.array_equal(store.blocks["ok"], np.ones(2))   # nothing moved
    assert store.step == 0


def test_adam_skip_leaves_blocks_untouched():
    store = ParamStore()
    store.add("a", np.ones(2))
    store.add("b", np.ones(2))
    store.grads["a"][:] = 1.0
    store.grads["b"][:] = 1.0
    adam_step(store, 1e-2, skip={"b"})
    assert np.array_equal(store.blocks["b"], np.ones(2))
    assert np.array_equal(store.grads["b"], np.ones(2))
    assert not np.array_equal(store.blocks["a"], np.ones(2))


def test_lr_exp_decay_endpoints_and_monotone():
    assert np.isclose(lr_exp_decay(0, 1000, 5e-4, 5e-5), 5e-4)
    assert np.isclose(lr_exp_decay(1000, 1000, 5e-4, 5e-5), 5e-5)
    vals = [lr_exp_decay(k, 1000, 5e-4, 5e-5) for k in range(0, 1001, 50)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
