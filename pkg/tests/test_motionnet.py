import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headsynth.errors import ContractViolation, ParseError, ValidationError
from headsynth.headmodel import ExpressionCode
from headsynth.motionnet import (
    GATE_OFF,
    GATE_ON,
    MOTION_DIM,
    FeatureGrid,
    MlpParams,
    MotionVector,
    PhiDims,
    attention,
    attention_weights,
    expand_motion,
    finite_diff_jacobian_check,
    init_phi,
    load_phi,
    named_tensors,
    phi_forward,
    phi_jvp,
    replace_tensor,
    save_phi,
    synth_motion_bias,
    synth_motion_vector,
)
from oracles import attention_oracle, expand_oracle

TINY = PhiDims(token_dim=8, motion_tokens=2, heads=2, mlp_hidden=12,
               expand_hidden=10)


def random_motion(rng):
    return MotionVector(rng.normal(size=MOTION_DIM))


def random_grid(rng, n=4, d=8):
    return FeatureGrid(rng.normal(size=(n, d)))


def tiny_setup(seed=0, n=4):
    rng = np.random.default_rng(seed + 100)
    params = init_phi(TINY, seed)
    return params, random_grid(rng, n, TINY.token_dim), random_motion(rng), \
        random_motion(rng)


def activated(params):
    """Copy with every cross-attention output projection made generic."""
    rng = np.random.default_rng(777)
    for name, arr in named_tensors(params).items():
        if "cross.wo" in name or "cross.bo" in name:
            params = replace_tensor(params, name, rng.normal(size=arr.shape) * 0.3)
    return params


# ---------------------------------------------------------------------------
# types


def test_motion_vector_validation():
    with pytest.raises(ValidationError):
        MotionVector(np.zeros(547))
    v = MotionVector(np.arange(MOTION_DIM, dtype=float))
    assert v.expression.shape == (30,)
    assert v.lip.shape == (512,)
    assert v.eye.shape == (6,)
    assert v.eye[0] == 542


def test_feature_grid_validation():
    with pytest.raises(ValidationError):
        FeatureGrid(np.full((4, 8), np.nan))
    with pytest.raises(ValidationError):
        PhiDims(token_dim=10, heads=4)


# ---------------------------------------------------------------------------
# expand_motion


def test_expand_zero_weights_returns_bias(rng):
    d = TINY
    bias = rng.normal(size=d.motion_tokens * d.token_dim)
    prm = MlpParams(np.zeros((d.expand_hidden, MOTION_DIM)),
                    np.zeros(d.expand_hidden),
                    np.zeros((d.motion_tokens * d.token_dim, d.expand_hidden)),
                    bias)
    tokens = expand_motion(prm, random_motion(rng), d)
    assert np.array_equal(tokens, bias.reshape(d.motion_tokens, d.token_dim))


def test_expand_purity(rng):
    params, _, v, _ = tiny_setup()
    a = expand_motion(params.de.expand, v, TINY)
    b = expand_motion(params.de.expand, v, TINY)
    assert np.array_equal(a, b)


def test_expand_matches_loop_oracle(rng):
    params, _, v, _ = tiny_setup(3)
    prm = params.re.expand
    got = expand_motion(prm, v, TINY)
    want = expand_oracle(prm.w1, prm.b1, prm.w2, prm.b2, v.values,
                         TINY.motion_tokens, TINY.token_dim)
    assert np.max(np.abs(got - want)) < 1e-6


def test_expand_dimension_mismatch(rng):
    prm = MlpParams(np.zeros((4, 100)), np.zeros(4), np.zeros((16, 4)),
                    np.zeros(16))
    with pytest.raises(ContractViolation):
        expand_motion(prm, random_motion(rng), TINY)


# ---------------------------------------------------------------------------
# attention


def attn_params(rng, d=8):
    def w():
        return rng.normal(size=(d, d)) / np.sqrt(d)
    def b():
        return rng.normal(size=d) * 0.1
    from headsynth.motionnet import AttentionParams
    return AttentionParams(w(), b(), w(), b(), w(), b(), w(), b())


def test_attention_single_token_broadcasts(rng):
    prm = attn_params(rng)
    q = rng.normal(size=(5, 8))
    kv = rng.normal(size=(1, 8))
    out = attention(q, kv, prm, heads=2)
    expected = (kv @ prm.wv.T + prm.bv) @ prm.wo.T + prm.bo
    assert np.max(np.abs(out - expected)) < 1e-12


def test_attention_kv_permutation_invariant(rng):
    prm = attn_params(rng)
    q = rng.normal(size=(6, 8))
    kv = rng.normal(size=(5, 8))
    perm = rng.permutation(5)
    a = attention(q, kv, prm, heads=4)
    b = attention(q, kv[perm], prm, heads=4)
    assert np.max(np.abs(a - b)) < 1e-12


def test_attention_uniform_logits_average(rng):
    from headsynth.motionnet import AttentionParams
    base = attn_params(rng)
    prm = AttentionParams(np.zeros((8, 8)), np.zeros(8), base.wk, base.bk,
                          base.wv, base.bv, base.wo, base.bo)
    kv = rng.normal(size=(7, 8))
    out = attention(rng.normal(size=(3, 8)), kv, prm, heads=2)
    mean_v = (kv @ prm.wv.T + prm.bv).mean(axis=0)
    expected = mean_v @ prm.wo.T + prm.bo
    assert np.max(np.abs(out - expected)) < 1e-12


def test_attention_matches_loop_oracle(rng):
    prm = attn_params(rng)
    q = rng.normal(size=(6, 8))
    kv = rng.normal(size=(4, 8))
    for heads in (1, 2, 4):
        got = attention(q, kv, prm, heads)
        want = attention_oracle(q, kv, prm, heads)
        assert np.max(np.abs(got - want)) < 1e-10


def test_attention_weight_rows_sum_to_one(rng):
    prm = attn_params(rng)
    w = attention_weights(rng.normal(size=(6, 8)), rng.normal(size=(5, 8)),
                          prm, heads=2)
    assert w.shape == (2, 6, 5)
    assert np.max(np.abs(w.sum(axis=-1) - 1.0)) < 1e-6
    assert np.all(w >= 0)


# ---------------------------------------------------------------------------
# phi_forward


def test_gate_off_ignores_motion(rng):
    params, grid, v1, v2 = tiny_setup(1)
    params = activated(params)
    a = phi_forward(params, grid, v1, v2, GATE_OFF)
    b = phi_forward(params, grid, random_motion(rng), random_motion(rng),
                    GATE_OFF)
    assert np.array_equal(a.tokens, b.tokens)


def test_zero_init_gate_equivalence():
    params, grid, v1, v2 = tiny_setup(2)
    on = phi_forward(params, grid, v1, v2, GATE_ON)
    off = phi_forward(params, grid, v1, v2, GATE_OFF)
    assert np.array_equal(on.tokens, off.tokens)


def test_perturbed_cross_weight_breaks_gate_equivalence(rng):
    params, grid, v1, v2 = tiny_setup(4)
    name = "de.block0.cross.wo"
    bump = np.zeros_like(named_tensors(params)[name])
    bump[0, 0] = 0.5
    params = replace_tensor(params, name, bump)
    on = phi_forward(params, grid, v1, v2, GATE_ON)
    off = phi_forward(params, grid, v1, v2, GATE_OFF)
    assert not np.array_equal(on.tokens, off.tokens)


def test_phi_forward_deterministic():
    params, grid, v1, v2 = tiny_setup(5)
    params = activated(params)
    a = phi_forward(params, grid, v1, v2, GATE_ON)
    b = phi_forward(params, grid, v1, v2, GATE_ON)
    assert np.array_equal(a.tokens, b.tokens)


def test_phi_forward_dim_mismatch(rng):
    params, _, v1, v2 = tiny_setup(6)
    with pytest.raises(ContractViolation):
        phi_forward(params, random_grid(rng, 4, 16), v1, v2)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=10, deadline=None)
def test_gate_off_independence_property(seed):
    rng = np.random.default_rng(seed)
    params, grid, _, _ = tiny_setup(7)
    params = activated(params)
    out = [phi_forward(params, grid, random_motion(rng), random_motion(rng),
                       GATE_OFF).tokens for _ in range(2)]
    assert np.array_equal(out[0], out[1])


# ---------------------------------------------------------------------------
# init


def test_init_deterministic():
    a, b = init_phi(TINY, seed=9), init_phi(TINY, seed=9)
    ta, tb = named_tensors(a), named_tensors(b)
    assert all(np.array_equal(ta[k], tb[k]) for k in ta)
    c = named_tensors(init_phi(TINY, seed=10))
    assert any(not np.array_equal(ta[k], c[k]) for k in ta)


def test_init_cross_output_projections_zero():
    tensors = named_tensors(init_phi(TINY, seed=0))
    zeroed = [k for k in tensors if "cross.wo" in k or "cross.bo" in k]
    assert len(zeroed) == 16  # 2 submodules x 4 blocks x (wo, bo)
    assert all(not tensors[k].any() for k in zeroed)


def test_init_weight_bounds():
    tensors = named_tensors(init_phi(TINY, seed=3))
    for name, arr in tensors.items():
        leaf = name.rsplit(".", 1)[1]
        if leaf.startswith("w") and "cross.wo" not in name:
            fan_in = arr.shape[1]
            assert np.max(np.abs(arr)) <= 1.0 / np.sqrt(fan_in)


# ---------------------------------------------------------------------------
# synthetic motion embedding


def test_synth_zero_codes_give_bias():
    v = synth_motion_vector(ExpressionCode.zeros(10), np.zeros(3), np.zeros(3),
                            seed=4)
    assert np.array_equal(v.values, synth_motion_bias(10, seed=4))
    assert np.any(v.values != 0)


def test_synth_linearity(rng):
    bias = synth_motion_bias(10, seed=0)
    b1, b2 = rng.normal(size=10), rng.normal(size=10)
    a, b = 0.7, -1.3

    def emb(vals):
        code = ExpressionCode(vals)
        return synth_motion_vector(code, np.zeros(3), np.zeros(3), 0).values

    combo = emb(a * b1 + b * b2) - bias
    parts = a * (emb(b1) - bias) + b * (emb(b2) - bias)
    assert np.max(np.abs(combo - parts)) < 1e-9


def test_synth_injective_on_random_pairs(rng):
    for _ in range(100):
        x, y = rng.normal(size=10), rng.normal(size=10)
        vx = synth_motion_vector(ExpressionCode(x), np.zeros(3), np.zeros(3), 1)
        vy = synth_motion_vector(ExpressionCode(y), np.zeros(3), np.zeros(3), 1)
        assert not np.array_equal(vx.values, vy.values)


def test_synth_eye_block_only_tracks_eye(rng):
    base = synth_motion_vector(ExpressionCode.zeros(10), np.zeros(3),
                               np.zeros(3), 2)
    moved = synth_motion_vector(ExpressionCode.zeros(10),
                                np.array([0.1, -0.05, 0.0]), np.zeros(3), 2)
    assert np.array_equal(base.expression, moved.expression)
    assert np.array_equal(base.lip, moved.lip)
    assert not np.array_equal(base.eye, moved.eye)


# ---------------------------------------------------------------------------
# jacobian checks


def test_jvp_linear_tail_weight_exact():
    # the last block's mlp.w2 feeds the output through residuals only, so the
    # probe functional is linear in it and central differences are exact
    params, grid, v1, v2 = tiny_setup(11)
    params = activated(params)
    rng = np.random.default_rng(0)
    name = "re.block3.mlp.w2"
    direction = rng.normal(size=named_tensors(params)[name].shape)
    probe = rng.normal(size=(grid.n_tokens, TINY.token_dim))
    err = finite_diff_jacobian_check(params, grid, v1, v2, probe, name,
                                     direction)
    assert err < 1e-8


@pytest.mark.parametrize("name", [
    "de.expand.w1",
    "de.block0.cross.wq",
    "de.block2.self.wv",
    "re.block1.norm_mlp.gain",
    "re.block0.mlp.w1",
])
def test_jvp_matches_finite_differences(name):
    params, grid, v1, v2 = tiny_setup(12)
    params = activated(params)
    rng = np.random.default_rng(1)
    direction = rng.normal(size=named_tensors(params)[name].shape)
    probe = rng.normal(size=(grid.n_tokens, TINY.token_dim))
    err = finite_diff_jacobian_check(params, grid, v1, v2, probe, name,
                                     direction)
    assert err < 1e-4


def test_jvp_zero_direction_zero_tangent():
    params, grid, v1, v2 = tiny_setup(13)
    params = activated(params)
    name = "de.block1.self.wq"
    zero = np.zeros_like(named_tensors(params)[name])
    _, tangent = phi_jvp(params, grid, v1, v2, name, zero)
    assert not tangent.any()


def test_jvp_gated_cross_weight_is_dead_when_off():
    params, grid, v1, v2 = tiny_setup(14)
    params = activated(params)
    name = "de.block0.cross.wq"
    rng = np.random.default_rng(2)
    direction = rng.normal(size=named_tensors(params)[name].shape)
    _, tangent = phi_jvp(params, grid, v1, v2, name, direction, GATE_OFF)
    assert not tangent.any()


# ---------------------------------------------------------------------------
# serialization


def test_phi1_round_trip(tmp_path):
    params, _, _, _ = tiny_setup(15)
    params = activated(params)
    path = tmp_path / "phi.bin"
    save_phi(params, path)
    loaded = load_phi(path)
    assert loaded.dims == params.dims
    orig, back = named_tensors(params), named_tensors(loaded)
    for k in orig:
        assert np.array_equal(back[k], orig[k].astype(np.float32))
    twice = tmp_path / "phi2.bin"
    save_phi(loaded, twice)
    assert path.read_bytes() == twice.read_bytes()


def test_phi1_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + bytes(64))
    with pytest.raises(ParseError):
        load_phi(p)


def test_phi1_truncation(tmp_path):
    params, _, _, _ = tiny_setup(16)
    p = tmp_path / "phi.bin"
    save_phi(params, p)
    data = p.read_bytes()
    p.write_bytes(data[:len(data) // 2])
    with pytest.raises(ParseError):
        load_phi(p)
