import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irisloc.exceptions import ConfigError, ShapeError
from irisloc.forward import (
    AttentionConfig,
    BatchNorm,
    ConvParams,
    adaptive_avg_pool,
    aspp_attention,
    avg_pool3x3,
    bilinear_resize,
    conv2d,
    decoder_fuse,
    global_avg_pool_branch,
    head_forward,
    psp_attention,
    random_attention_weights,
    random_conv,
    random_decoder_weights,
    random_head_weights,
)
from irisloc.io import load_weight_bundle, save_weight_bundle

from oracles import nested_loop_conv


def _cfg(variant, c=8, bc=4, dilations=(1, 2, 3), bins=(1, 2, 3, 6)):
    return AttentionConfig(variant, input_channels=c, branch_channels=bc, dilations=dilations, psp_bins=bins)


# -- conv2d ------------------------------------------------------------------------------


def test_identity_conv(rng):
    x = rng.normal(size=(3, 5, 6))
    p = ConvParams(np.eye(3)[:, :, None, None], np.zeros(3))
    np.testing.assert_array_equal(conv2d(x, p), x)


def test_dilated_impulse_offsets():
    x = np.zeros((1, 7, 7))
    x[0, 3, 3] = 1.0
    p = ConvParams(np.ones((1, 1, 3, 3)), np.zeros(1), dilation=2)
    out = conv2d(x, p)[0]
    ys, xs = np.nonzero(out)
    assert set(zip(ys - 3, xs - 3)) == {(dy, dx) for dy in (-2, 0, 2) for dx in (-2, 0, 2)}
    np.testing.assert_allclose(out, nested_loop_conv(x, p.weights, p.bias, 2)[0], atol=1e-12)


def test_relu_output_nonnegative(rng):
    p = random_conv(rng, 4, 2, 3, dilation=2)
    assert np.all(conv2d(rng.normal(size=(2, 6, 6)), p) >= 0)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 4), st.integers(1, 3), st.integers(3, 9), st.integers(3, 9),
    st.sampled_from([1, 3, 5]), st.integers(1, 3), st.integers(0, 2**31 - 1),
)
def test_conv_matches_nested_loop(c_in, c_out, h, w, k, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(c_in, h, w))
    p = ConvParams(rng.normal(size=(c_out, c_in, k, k)), rng.normal(size=c_out), dilation=d)
    np.testing.assert_allclose(conv2d(x, p), nested_loop_conv(x, p.weights, p.bias, d), atol=1e-6)


def test_conv_bn_relu_matches_manual(rng):
    x = rng.normal(size=(2, 5, 5))
    p = random_conv(rng, 3, 2, 3)
    raw = nested_loop_conv(x, p.weights, p.bias, 1)
    bn = p.bn
    manual = np.maximum(
        0, bn.scale[:, None, None] * (raw - bn.mean[:, None, None]) / np.sqrt(bn.var[:, None, None] + 1e-5)
        + bn.shift[:, None, None]
    )
    np.testing.assert_allclose(conv2d(x, p), manual, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(np.zeros((2, 4, 4)), ConvParams(np.zeros((1, 3, 1, 1)), np.zeros(1)))


def test_conv_params_validation():
    with pytest.raises(ShapeError):
        ConvParams(np.zeros((1, 1, 2, 2)), np.zeros(1))
    with pytest.raises(ShapeError):
        ConvParams(np.zeros((2, 1, 1, 1)), np.zeros(1))
    with pytest.raises(ConfigError):
        ConvParams(np.zeros((1, 1, 1, 1)), np.zeros(1), dilation=0)


# -- pooling and resizing ------------------------------------------------------------------


def test_avg_pool_constant_preserved():
    np.testing.assert_allclose(avg_pool3x3(np.full((2, 5, 4), 3.5)), 3.5)


def test_avg_pool_corner_excludes_padding():
    x = np.arange(9.0).reshape(1, 3, 3)
    assert avg_pool3x3(x)[0, 0, 0] == pytest.approx((0 + 1 + 3 + 4) / 4)
    assert avg_pool3x3(x)[0, 1, 1] == pytest.approx(4.0)


def test_adaptive_pool_quadrants(rng):
    x = rng.normal(size=(2, 8, 8))
    q = adaptive_avg_pool(x, 2)
    for i in range(2):
        for j in range(2):
            np.testing.assert_allclose(q[:, i, j], x[:, 4 * i : 4 * i + 4, 4 * j : 4 * j + 4].mean(axis=(1, 2)))
    np.testing.assert_allclose(adaptive_avg_pool(x, 1)[:, 0, 0], x.mean(axis=(1, 2)))


def test_adaptive_pool_uneven_bins():
    x = np.arange(5.0).reshape(1, 1, 5)
    x = np.repeat(x, 5, axis=1)
    # 5 columns into 3 bins: [0,2), [1,4), [3,5)
    np.testing.assert_allclose(adaptive_avg_pool(x, 3)[0, 0], [0.5, 2.0, 3.5])


def test_bilinear_constant():
    np.testing.assert_allclose(bilinear_resize(np.full((1, 3, 3), 2.0), 7, 9), 2.0)


def test_bilinear_corners_and_midpoint():
    x = np.array([[[0.0, 1.0], [2.0, 3.0]]])
    y = bilinear_resize(x, 3, 3)
    assert y[0, 0, 0] == 0 and y[0, 2, 2] == 3 and y[0, 1, 1] == pytest.approx(1.5)


# -- global average pooling branch --------------------------------------------------------


def test_gap_branch_constant_input():
    p = ConvParams(np.eye(2)[:, :, None, None], np.zeros(2), bn=BatchNorm.identity(2))
    out = global_avg_pool_branch(np.full((2, 4, 4), 0.7), p)
    np.testing.assert_allclose(out, 0.7 / math.sqrt(1 + 1e-5))


def test_gap_branch_hand_oracle(rng):
    x = rng.normal(size=(2, 4, 4))
    p = random_conv(rng, 3, 2, 1)
    out = global_avg_pool_branch(x, p)
    m0 = sum(x[0].ravel().tolist()) / 16
    m1 = sum(x[1].ravel().tolist()) / 16
    for o in range(3):
        z = p.weights[o, 0, 0, 0] * m0 + p.weights[o, 1, 0, 0] * m1 + p.bias[o]
        z = p.bn.scale[o] * (z - p.bn.mean[o]) / math.sqrt(p.bn.var[o] + 1e-5) + p.bn.shift[o]
        np.testing.assert_allclose(out[o], max(z, 0.0), atol=1e-12)


# -- attention modules -------------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["ASPP", "PSP"])
def test_attention_shape_and_range(variant, rng):
    cfg = _cfg(variant)
    w = random_attention_weights(cfg, rng)
    x = rng.normal(size=(8, 7, 9))
    fn = aspp_attention if variant == "ASPP" else psp_attention
    out, m = fn(x, cfg, w, return_attention=True)
    assert out.shape == (16, 7, 9)
    assert np.all((m > 0) & (m < 1))
    p = out[:8]
    nz = p != 0
    assert np.all(np.abs(out[8:][nz]) < np.abs(p[nz]))
    np.testing.assert_allclose(p, avg_pool3x3(x))


def test_aspp_saturated_attention_zeroes_second_half(rng):
    cfg = _cfg("ASPP")
    w = random_attention_weights(cfg, rng)
    att = w["aspp.att"]
    w["aspp.att"] = ConvParams(np.zeros_like(att.weights), np.full(att.out_channels, -1e3))
    out = aspp_attention(rng.uniform(0, 1, size=(8, 6, 6)), cfg, w)
    np.testing.assert_allclose(out[8:], 0.0, atol=1e-6)


def test_psp_constant_input_is_spatially_constant(rng):
    cfg = _cfg("PSP")
    w = random_attention_weights(cfg, rng)
    x = np.full((8, 6, 6), 0.3)
    for b in cfg.psp_bins:
        y = conv2d(adaptive_avg_pool(x, b), w[f"psp.bin{b}"])
        np.testing.assert_allclose(y, y[:, :1, :1] * np.ones((1, b, b)), atol=1e-12)
    out = psp_attention(x, cfg, w)
    np.testing.assert_allclose(out[:8], 0.3)
    # the attention conv is zero padded, so only the interior is constant
    inner = out[:, 1:-1, 1:-1]
    np.testing.assert_allclose(inner, inner[:, :1, :1] * np.ones((1, 4, 4)), atol=1e-12)


def test_psp_bin1_equals_gap_branch(rng):
    x = rng.normal(size=(8, 5, 5))
    p = random_conv(rng, 2, 8, 1)
    via_pool = bilinear_resize(conv2d(adaptive_avg_pool(x, 1), p), 5, 5)
    np.testing.assert_allclose(via_pool, global_avg_pool_branch(x, p), atol=1e-12)


def test_attention_rejects_wrong_channels(rng):
    cfg = _cfg("ASPP")
    with pytest.raises(ShapeError):
        aspp_attention(np.zeros((4, 5, 5)), cfg, random_attention_weights(cfg, rng))


def test_attention_config_validation():
    with pytest.raises(ConfigError):
        AttentionConfig("PSP", input_channels=6)
    with pytest.raises(ConfigError):
        AttentionConfig("FPN")
    with pytest.raises(ConfigError):
        AttentionConfig("PSP", input_channels=8, psp_bins=(2, 1))


def test_wrong_variant_rejected(rng):
    cfg = _cfg("PSP")
    with pytest.raises(ConfigError):
        aspp_attention(np.zeros((8, 4, 4)), cfg, {})


# -- decoder and head ------------------------------------------------------------------------


def test_decoder_channels(rng):
    w = random_decoder_weights(rng, 64, 64)
    out = decoder_fuse(rng.normal(size=(64, 8, 8)), rng.normal(size=(64, 16, 16)), w)
    assert out.shape == (96, 16, 16)


def test_decoder_zero_input_gives_zero_block(rng):
    half = 4
    ident = BatchNorm.identity(half)
    w = {
        "fuse.conv1": ConvParams(rng.normal(size=(half, 6, 3, 3)), np.zeros(half), bn=ident),
        "fuse.conv2": ConvParams(rng.normal(size=(half, half, 3, 3)), np.zeros(half), bn=ident),
    }
    enc = rng.normal(size=(8, 10, 10))
    out = decoder_fuse(np.zeros((6, 5, 5)), enc, w)
    np.testing.assert_array_equal(out[:half], 0.0)
    np.testing.assert_array_equal(out[half:], enc)


def test_decoder_size_mismatch(rng):
    w = random_decoder_weights(rng, 4, 8)
    with pytest.raises(ShapeError):
        decoder_fuse(np.zeros((4, 5, 5)), np.zeros((8, 12, 12)), w)


def test_head_range(rng):
    maps = head_forward(rng.normal(size=(6, 9, 9)) * 5, random_head_weights(rng, 6))
    arr = maps.as_array()
    assert arr.shape == (4, 9, 9) and np.all((arr > 0) & (arr < 1))


def test_head_zero_weights_gives_half(rng):
    w = random_head_weights(rng, 3)
    w["head.out"] = ConvParams(np.zeros((4, 16, 1, 1)), np.zeros(4))
    np.testing.assert_allclose(head_forward(rng.normal(size=(3, 4, 4)), w).as_array(), 0.5)


def test_head_bias_sigmoid_values(rng):
    w = random_head_weights(rng, 3, hidden=())
    w["head.out"] = ConvParams(np.zeros((4, 3, 1, 1)), np.array([-10.0, 0.0, 10.0, 0.0]))
    maps = head_forward(rng.normal(size=(3, 4, 4)), w)
    expected = [1 / (1 + math.exp(10)), 0.5, 1 / (1 + math.exp(-10)), 0.5]
    assert expected[0] == pytest.approx(4.5398e-5, rel=1e-4)
    assert expected[2] == pytest.approx(0.9999546, rel=1e-7)
    for arr, e in zip(maps.as_array(), expected):
        np.testing.assert_allclose(arr, e, rtol=1e-12)


def test_head_requires_four_outputs(rng):
    w = random_head_weights(rng, 3, hidden=())
    w["head.out"] = ConvParams(np.zeros((3, 3, 1, 1)), np.zeros(3))
    with pytest.raises(ShapeError):
        head_forward(np.zeros((3, 4, 4)), w)


# -- determinism and persistence --------------------------------------------------------------


def test_forward_deterministic(rng):
    cfg = _cfg("ASPP")
    w = random_attention_weights(cfg, rng)
    x = rng.normal(size=(8, 6, 6))
    a = aspp_attention(x, cfg, w)
    b = aspp_attention(x.copy(), cfg, w)
    assert a.tobytes() == b.tobytes()


def test_weight_bundle_round_trip(tmp_path, rng):
    cfg = _cfg("PSP")
    w = random_attention_weights(cfg, rng)
    w32 = {
        k: ConvParams(
            p.weights.astype(np.float32), p.bias.astype(np.float32), p.dilation, p.stride,
            None if p.bn is None else BatchNorm(*(a.astype(np.float32) for a in (p.bn.mean, p.bn.var, p.bn.scale, p.bn.shift))),
        )
        for k, p in w.items()
    }
    save_weight_bundle(tmp_path / "bundle", w32)
    back = load_weight_bundle(tmp_path / "bundle")
    assert set(back) == set(w32)
    for k, p in w32.items():
        q = back[k]
        np.testing.assert_array_equal(q.weights, p.weights)
        np.testing.assert_array_equal(q.bias, p.bias)
        assert (q.dilation, q.stride) == (p.dilation, p.stride)
        assert (q.bn is None) == (p.bn is None)
        if p.bn is not None:
            np.testing.assert_array_equal(q.bn.var, p.bn.var)
            np.testing.assert_array_equal(q.bn.shift, p.bn.shift)
