import numpy as np
import pytest

from fdcheck import check_gradients
from texvol.autodiff import ParamStore, Tape
from texvol.config import ModelConfig
from texvol.jets import seed_points
from texvol.model import BRANCHES, SceneModel
from texvol.nn import MlpSpec, embed_time, init_embedding, init_mlp, mlp_forward, pe_dim, pe_encode


def small_model(dtype="float64", seed=0, frames=3):
    cfg = ModelConfig(frames=frames, mlp_depth=2, mlp_width=16, mlp_skip=None,
                      pe_pos=2, pe_dir=1, pe_uv=2, time_dim=4, tex_h=8,
                      tex_w=8, dtype=dtype, density_scale=10.0, sigma_bias=-2.0)
    from texvol.deform import Rig, init_radii
    rng = np.random.default_rng(3)
    sp = rng.uniform(-0.8, 0.8, (4, 3))
    rig = Rig.identity(frames, sp, sp + rng.normal(0, 0.05, (4, 3)), init_radii(sp))
    return SceneModel.create(cfg, rig, seed=seed)


def test_pe_encode_values():
    x = np.array([[0.25, -0.5]])
    tape = Tape()
    out = pe_encode(tape.constant(x), 2)
    ref = np.concatenate([x,
                          np.sin(np.pi * x), np.cos(np.pi * x),
                          np.sin(2 * np.pi * x), np.cos(2 * np.pi * x)], axis=-1)
    assert out.value.shape == (1, pe_dim(2, 2))
    assert np.array_equal(out.value, ref)


def test_pe_encode_zero_freqs_is_identity():
    x = np.ones((3, 3))
    tape = Tape()
    assert pe_encode(tape.constant(x), 0).value is not None
    assert np.array_equal(pe_encode(tape.constant(x), 0).value, x)


def test_mlp_shapes_and_skip():
    spec = MlpSpec(10, 3, 4, 16, 2)
    dims = spec.layer_dims()
    assert dims == [(10, 16), (16, 16), (26, 16), (16, 3)]
    store = ParamStore()
    init_mlp(store, "f", spec, np.random.default_rng(0))
    tape = Tape()
    out = mlp_forward(tape, store, "f", spec, tape.constant(np.zeros((5, 10))))
    assert out.value.shape == (5, 3)


def test_embed_time_pinned_blocks_other_rows():
    store = ParamStore()
    init_embedding(store, "emb", 4, 6, np.random.default_rng(0))

    def grads_for(t, pinned):
        store.zero_grad()
        tape = Tape()
        e = embed_time(tape, store, "emb", t, n=5, pinned=pinned)
        tape.backward(e.sum())
        return store.grads["emb"].copy()

    g = grads_for(2, pinned=True)
    assert np.all(g[0] != 0)                 # pinned: row 0 takes the gradient
    assert np.array_equal(g[1:], np.zeros_like(g[1:]))
    g2 = grads_for(2, pinned=False)
    assert np.all(g2[2] != 0)
    assert np.array_equal(g2[0], np.zeros(6))


def test_embed_time_range_check():
    store = ParamStore()
    init_embedding(store, "emb", 2, 4, np.random.default_rng(0))
    tape = Tape()
    with pytest.raises(IndexError):
        embed_time(tape, store, "emb", 5, n=1)


def test_eval_canonical_ranges_and_shapes():
    model = small_model()
    tape = Tape()
    y = tape.constant(np.random.default_rng(0).uniform(-1, 1, (50, 3)))
    u, sigma = model.eval_canonical(tape, y, 1, "fine")
    assert u.value.shape == (50, 2) and sigma.value.shape == (50,)
    assert np.all((u.value > 0) & (u.value < 1))    # sigmoid range
    assert np.all(sigma.value >= 0)                  # softplus * scale


def test_branches_are_independent():
    model = small_model()
    y = np.random.default_rng(1).uniform(-1, 1, (20, 3))
    tape = Tape()
    u_c, s_c = model.eval_canonical(tape, tape.constant(y), 0, "coarse")
    u_f, s_f = model.eval_canonical(tape, tape.constant(y), 0, "fine")
    assert not np.allclose(u_c.value, u_f.value)     # separately initialized
    model.store.zero_grad()
    tape2 = Tape()
    _, s = model.eval_canonical(tape2, tape2.constant(y), 0, "coarse")
    tape2.backward(s.sum())
    for name in model.store.names():
        if ".fine." in f".{name}." or name.endswith(".fine"):
            assert not np.any(model.store.grads[name]), name


def test_inverse_map_lands_in_expanded_box():
    model = small_model()
    tape = Tape()
    u = tape.constant(np.random.default_rng(2).uniform(0, 1, (40, 2)))
    y = model.inverse_map(tape, u, 0, "fine")
    lo, hi = model.box_canon
    assert np.all(y.value > lo - 1e-9) and np.all(y.value < hi + 1e-9)


def test_float32_store_keeps_field_path_float32():
    model = small_model(dtype="float32")
    tape = Tape()
    y = tape.constant(np.random.default_rng(0).uniform(-1, 1, (10, 3)))  # f64 in
    u, sigma = model.eval_canonical(tape, y, 0, "fine")
    assert u.value.dtype == np.float32
    assert sigma.value.dtype == np.float32
    d = tape.constant(np.zeros((10, 3), dtype=np.float32))
    color = model.radiance(tape, u, d, 0, "fine")
    assert color.value.dtype == np.float32


def test_residual_clamped_to_log_range():
    model = small_model()
    tape = Tape()
    u = tape.constant(np.random.default_rng(4).uniform(0, 1, (30, 2)))
    d = tape.constant(np.random.default_rng(5).normal(size=(30, 3)))
    r = model.residual(tape, u, d, 0, "fine")
    assert np.all(r.value >= -5.0) and np.all(r.value <= 5.0)


def test_geometry_jet_gradients_match_fd():
    model = small_model()
    x = np.random.default_rng(6).uniform(-0.5, 0.5, (6, 3))
    tape = Tape()
    u, sigma, gu, gv, gs = model.eval_geometry_jet(tape, x, 0, "fine")
    h = 1e-6
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        tp, tm = Tape(), Tape()
        up, sp_ = model.eval_geometry(tp, tp.constant(x + e), 0, "fine")
        um, sm = model.eval_geometry(tm, tm.constant(x - e), 0, "fine")
        fd_u = (up.value - um.value) / (2 * h)
        fd_s = (sp_.value - sm.value) / (2 * h)
        assert np.max(np.abs(gu.value[:, a] - fd_u[:, 0])) < 1e-6
        assert np.max(np.abs(gv.value[:, a] - fd_u[:, 1])) < 1e-6
        assert np.max(np.abs(gs.value[:, a] - fd_s)) < 1e-5


def test_jet_gradients_stay_differentiable_wrt_params():
    model = small_model()
    x = np.random.default_rng(7).uniform(-0.5, 0.5, (4, 3))
    rng = np.random.default_rng(8)

    def build(tape):
        _, _, gu, gv, gs = model.eval_geometry_jet(tape, x, 0, "fine")
        return (gu * gu).sum() + (gv * gs).sum()

    # restrict to a couple of blocks to keep the FD loop quick
    sub = ParamStore()
    sub.blocks = model.store.blocks
    sub.grads = model.store.grads
    names = [n for n in model.store.names() if n.startswith("vi.fine")][:2]
    sub.names = lambda: names
    fails = check_gradients(build, [sub], rng, entries_per_block=3)
    assert not fails, fails
