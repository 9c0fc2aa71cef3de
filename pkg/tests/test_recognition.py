import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from irisloc import IrisEncoder
from irisloc.exceptions import ConfigError, DegenerateGeometryError, NoOverlapError, ShapeError
from irisloc.imaging import Circle
from irisloc.recognition import (
    IrisTemplate,
    NormalizedIris,
    decidability,
    encode,
    equal_error_rate,
    match,
    normalize,
    verification_stats,
)
from irisloc.synth import CorruptionSpec, make_rotated_pair, random_spec

from oracles import brute_force_eer


def _random_template(rng, rows=16, cols=64):
    return IrisTemplate(rng.random((rows, cols, 2)) < 0.5, np.ones((rows, cols, 2), bool))


# -- normalize ---------------------------------------------------------------------------------


def test_normalize_sampling_radii():
    h = w = 60
    xx = np.tile(np.arange(w, dtype=float), (h, 1))
    img = xx / 100.0
    inner, outer = Circle(30, 30, 5), Circle(30, 30, 15)
    norm = normalize(img, np.ones((h, w), bool), inner, outer, rows=4, cols=16)
    radii = np.array([6.25, 8.75, 11.25, 13.75])
    theta = 2 * np.pi * np.arange(16) / 16
    expected = (30 + radii[:, None] * np.cos(theta)[None, :]) / 100.0
    np.testing.assert_allclose(norm.pixels, expected, atol=1e-12)
    assert norm.valid.all()


def test_normalize_constant_image():
    norm = normalize(np.full((50, 50), 0.42), np.ones((50, 50), bool), Circle(25, 25, 5), Circle(25, 25, 20), 8, 32)
    np.testing.assert_allclose(norm.pixels, 0.42)


def test_normalize_radial_gradient():
    yy, xx = np.mgrid[0:101, 0:101]
    img = np.hypot(xx - 50, yy - 50) / 50.0
    norm = normalize(np.clip(img, 0, 1), np.ones_like(img, bool), Circle(50, 50, 10), Circle(50, 50, 40), 8, 64)
    row_means = norm.pixels.mean(axis=1)
    assert np.all(np.diff(row_means) > 0)
    assert np.max(norm.pixels.std(axis=1)) < 0.01


def test_normalize_validity_follows_mask():
    mask = np.ones((50, 50), bool)
    mask[:25] = False
    norm = normalize(np.zeros((50, 50)), mask, Circle(25, 25, 5), Circle(25, 25, 20), 4, 16)
    # angles in (pi, 2pi) point to smaller y, the masked half
    assert not norm.valid[:, 9:16].any() and norm.valid[:, 1:8].all()


def test_normalize_rejects_bad_geometry():
    with pytest.raises(DegenerateGeometryError):
        normalize(np.zeros((20, 20)), np.ones((20, 20), bool), Circle(10, 10, 8), Circle(10, 10, 4))


# -- encode ------------------------------------------------------------------------------------


def test_encode_constant_row_clears_mask():
    pixels = np.random.default_rng(0).random((4, 64))
    pixels[2] = 0.5
    t = encode(NormalizedIris(pixels, np.ones((4, 64), bool)), wavelength=8)
    assert not t.mask[2].any() and t.mask[[0, 1, 3]].any()


def test_encode_cosine_period():
    lam = 16
    j = np.arange(128)
    row = 0.5 + 0.3 * np.cos(2 * np.pi * (j + 0.5) / lam)
    t = encode(NormalizedIris(np.tile(row, (2, 1)), np.ones((2, 128), bool)), wavelength=lam)
    real = t.code[0, :, 0]
    np.testing.assert_array_equal(real, np.roll(real, lam))
    assert real[:lam].sum() == lam // 2
    # oracle: analytic signal of a cosine has the cosine as real part
    np.testing.assert_array_equal(real, np.cos(2 * np.pi * (j + 0.5) / lam) > 0)


def test_encode_template_length():
    t = encode(NormalizedIris(np.random.default_rng(1).random((5, 40)), np.ones((5, 40), bool)), wavelength=10)
    assert len(t) == 2 * 5 * 40 and t.code.shape == (5, 40, 2)


def test_encode_invalid_columns_masked():
    valid = np.ones((3, 64), bool)
    valid[:, 10:20] = False
    t = encode(NormalizedIris(np.random.default_rng(2).random((3, 64)), valid), wavelength=8)
    assert not t.mask[:, 10:20].any()


def test_encode_wavelength_too_large():
    with pytest.raises(ConfigError):
        encode(NormalizedIris(np.zeros((2, 30)), np.ones((2, 30), bool)), wavelength=18)


# -- match -------------------------------------------------------------------------------------


def test_match_self(rng):
    t = _random_template(rng)
    m = match(t, t)
    assert m.hd == 0 and m.shift == 0 and m.valid_bits == len(t)


def test_match_complement(rng):
    t = _random_template(rng)
    tc = t.complement()
    assert tc != t
    assert match(t, tc, max_shift=0).hd == 1.0


def test_match_random_near_half():
    rng = np.random.default_rng(7)
    for _ in range(20):
        hd = match(_random_template(rng), _random_template(rng)).hd
        assert 0.45 <= hd <= 0.55


def test_match_recovers_shift(rng):
    t = _random_template(rng)
    shifted = IrisTemplate(np.roll(t.code, 5, axis=1), t.mask)
    m = match(t, shifted)
    assert m.hd == 0 and m.shift == -5


def test_match_no_overlap():
    rng = np.random.default_rng(3)
    a = IrisTemplate(rng.random((2, 8, 2)) < 0.5, np.zeros((2, 8, 2), bool))
    with pytest.raises(NoOverlapError):
        match(a, a)


def test_match_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        match(_random_template(rng, cols=64), _random_template(rng, cols=32))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(-40, 40))
def test_match_symmetric_and_shift_invariant(seed, s):
    rng = np.random.default_rng(seed)
    a, b = _random_template(rng, 4, 48), _random_template(rng, 4, 48)
    assert match(a, b).hd == match(b, a).hd
    roll = lambda t: IrisTemplate(np.roll(t.code, s, axis=1), np.roll(t.mask, s, axis=1))  # noqa: E731
    assert match(roll(a), roll(b)).hd == match(a, b).hd


def test_rotated_genuine_pairs_match():
    clean = CorruptionSpec.clean()
    for seed in range(50):
        spec = random_spec(seed, corruption=clean)
        (img0, gt0, _), (img1, gt1, _) = make_rotated_pair(spec, 8 * (seed % 3 - 1) + 1)
        t0 = encode(normalize(img0, gt0.mask, gt0.inner, gt0.outer))
        t1 = encode(normalize(img1, gt1.mask, gt1.inner, gt1.outer))
        assert match(t0, t1).hd < 0.3


# -- verification statistics -----------------------------------------------------------------------


def test_eer_perfect_separation():
    assert equal_error_rate(np.full(5, 0.1), np.full(7, 0.9)) == 0.0


def test_eer_identical_distributions():
    s = np.array([0.2, 0.4, 0.6, 0.8])
    assert equal_error_rate(s, s) == pytest.approx(0.5)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.integers(0, 30), min_size=1, max_size=100),
    st.lists(st.integers(0, 30), min_size=1, max_size=100),
)
def test_eer_matches_threshold_scan(g, i):
    g = np.array(g) / 30.0
    i = np.array(i) / 30.0
    assert equal_error_rate(g, i) == pytest.approx(brute_force_eer(g.tolist(), i.tolist()), abs=1e-9)


def test_di_hand_value():
    g = [0.2, 0.3, 0.4]
    i = [0.4, 0.5, 0.6]
    # means 0.3 / 0.5, unbiased std 0.1 each
    assert decidability(g, i) == pytest.approx(2.0, rel=1e-12)


def test_di_zero_spread():
    assert decidability([0.1, 0.1], [0.9, 0.9]) == math.inf


def test_verification_stats_empty():
    with pytest.raises(ValueError):
        verification_stats([], [0.5])


def test_verification_stats_fields():
    v = verification_stats([0.1, 0.2], [0.5, 0.6])
    assert v.eer == 0 and v.di > 0 and len(v.genuine_scores) == 2


# -- estimator API ---------------------------------------------------------------------------


def test_encoder_transform_matches_functions():
    spec = random_spec(5, corruption=CorruptionSpec.clean())
    from irisloc.synth import generate

    img, gt, _ = generate(spec)
    enc = IrisEncoder(rows=16, cols=128, wavelength=12)
    out = enc.fit_transform([(img, gt.mask, gt.inner, gt.outer)])
    direct = encode(normalize(img, gt.mask, gt.inner, gt.outer, 16, 128), 12)
    assert out[0] == direct
    assert clone(enc).get_params() == enc.get_params()
