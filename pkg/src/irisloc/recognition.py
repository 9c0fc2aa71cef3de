"""Recognition tail: rubber-sheet normalisation, 1-D log-Gabor iris codes,
masked fractional Hamming distance and verification statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import ConfigError, DegenerateGeometryError, NoOverlapError, ShapeError
from .imaging import Circle
from .validation import check_binary_mask, check_gray_image, check_same_shape

MAGNITUDE_FLOOR = 1e-9


@dataclass(frozen=True)
class NormalizedIris:
    """Iris texture unwrapped to ``rows`` radial x ``cols`` angular samples."""

    pixels: np.ndarray
    valid: np.ndarray

    @property
    def rows(self) -> int:
        return self.pixels.shape[0]

    @property
    def cols(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class IrisTemplate:
    """Phase-quantised iris code.

    ``code`` and ``mask`` are boolean arrays of shape ``(rows, cols, 2)``; the
    last axis holds the (real, imaginary) sign bits of one filter response.
    """

    code: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.code.shape != self.mask.shape or self.code.ndim != 3 or self.code.shape[2] != 2:
            raise ShapeError("code and mask must share a (rows, cols, 2) shape")

    @property
    def rows(self) -> int:
        return self.code.shape[0]

    @property
    def cols(self) -> int:
        return self.code.shape[1]

    def __len__(self):
        return self.code.size

    def __eq__(self, other):
        if not isinstance(other, IrisTemplate):
            return NotImplemented
        return np.array_equal(self.code, other.code) and np.array_equal(self.mask, other.mask)

    def complement(self) -> "IrisTemplate":
        return IrisTemplate(~self.code, self.mask.copy())


@dataclass(frozen=True)
class MatchScore:
    hd: float
    shift: int
    valid_bits: int


@dataclass(frozen=True)
class VerificationStats:
    eer: float
    di: float
    genuine_scores: np.ndarray
    impostor_scores: np.ndarray


def _boundary_points(circle: Circle, theta):
    return circle.cx + circle.r * np.cos(theta), circle.cy + circle.r * np.sin(theta)


def normalize(img, mask, inner: Circle, outer: Circle, rows=64, cols=512) -> NormalizedIris:
    """Rubber-sheet unwrapping between two (possibly non-concentric) circles.

    Sample ``(i, j)`` lies on the segment joining the inner and outer boundary
    points at angle ``2*pi*j/cols``, at fraction ``(i + 0.5)/rows`` from the
    inner circle. Intensities are bilinear; validity is the mask at the
    nearest pixel (out-of-image samples are invalid).
    """
    img = check_gray_image(img)
    mask = check_binary_mask(mask)
    check_same_shape(img, mask, names=("image", "mask"))
    if rows < 1 or cols < 1:
        raise ConfigError("rows and cols must be positive")
    if inner.r >= outer.r:
        raise DegenerateGeometryError("inner circle must be smaller than the outer circle")
    h, w = img.shape
    for c in (inner, outer):
        if not (0 <= c.cx <= w - 1 and 0 <= c.cy <= h - 1):
            raise DegenerateGeometryError("circle center lies outside the image")
    theta = 2.0 * np.pi * np.arange(cols) / cols
    xi, yi = _boundary_points(inner, theta)
    xo, yo = _boundary_points(outer, theta)
    t = ((np.arange(rows) + 0.5) / rows)[:, None]
    xs = (1 - t) * xi + t * xo
    ys = (1 - t) * yi + t * yo
    pixels = ndimage.map_coordinates(img, [ys, xs], order=1, mode="nearest")
    xr = np.floor(xs + 0.5).astype(int)
    yr = np.floor(ys + 0.5).astype(int)
    inside = (xr >= 0) & (xr < w) & (yr >= 0) & (yr < h)
    valid = np.zeros((rows, cols), dtype=bool)
    valid[inside] = mask[yr[inside], xr[inside]]
    return NormalizedIris(np.clip(pixels, 0.0, 1.0), valid)


def log_gabor_response(signal_rows, wavelength, sigma_ratio) -> np.ndarray:
    """Complex response of each row to a 1-D log-Gabor filter.

    The transfer function is zero at DC and at negative frequencies, so the
    output is an analytic signal.
    """
    x = np.asarray(signal_rows, dtype=np.float64)
    n = x.shape[-1]
    f = np.fft.fftfreq(n)
    gain = np.zeros(n)
    pos = f > 0
    f0 = 1.0 / wavelength
    gain[pos] = np.exp(-(np.log(f[pos] / f0) ** 2) / (2 * math.log(sigma_ratio) ** 2))
    return np.fft.ifft(np.fft.fft(x, axis=-1) * gain, axis=-1)


def encode(norm: NormalizedIris, wavelength=18.0, sigma_ratio=0.5) -> IrisTemplate:
    if wavelength <= 0 or norm.cols < 2 * wavelength:
        raise ConfigError(f"wavelength {wavelength} needs at least {2 * wavelength:g} columns, got {norm.cols}")
    if not 0 < sigma_ratio < 1:
        raise ConfigError("sigma_ratio must lie in (0, 1)")
    resp = log_gabor_response(norm.pixels, wavelength, sigma_ratio)
    code = np.stack([resp.real > 0, resp.imag > 0], axis=-1)
    usable = norm.valid & (np.abs(resp) >= MAGNITUDE_FLOOR)
    mask = np.stack([usable, usable], axis=-1)
    return IrisTemplate(code, mask)


def _packed(t: IrisTemplate):
    # columns first so an angular shift is a roll along axis 0
    code = np.packbits(t.code.transpose(1, 0, 2).reshape(t.cols, -1), axis=1)
    mask = np.packbits(t.mask.transpose(1, 0, 2).reshape(t.cols, -1), axis=1)
    return code, mask


def match(a: IrisTemplate, b: IrisTemplate, max_shift=16) -> MatchScore:
    """Minimum fractional Hamming distance over circular column shifts of ``b``.

    Ties go to the smallest absolute shift, negative first.
    """
    if a.code.shape != b.code.shape:
        raise ShapeError(f"template shapes differ: {a.code.shape} vs {b.code.shape}")
    ca, ma = _packed(a)
    cb, mb = _packed(b)
    best = None
    for s in sorted(range(-max_shift, max_shift + 1), key=lambda s: (abs(s), s)):
        cs = np.roll(cb, s, axis=0)
        ms = np.roll(mb, s, axis=0)
        both = ma & ms
        n = int(np.bitwise_count(both).sum())
        if n == 0:
            continue
        hd = int(np.bitwise_count((ca ^ cs) & both).sum()) / n
        if best is None or hd < best.hd:
            best = MatchScore(hd, s, n)
    if best is None:
        raise NoOverlapError("templates have no mutually valid bits at any shift")
    return best


# -- verification statistics ---------------------------------------------------------


def error_rates(genuine, impostor, thresholds):
    """FAR and FRR for distance scores: accept when ``score <= t``."""
    g = np.sort(np.asarray(genuine, dtype=np.float64))
    i = np.sort(np.asarray(impostor, dtype=np.float64))
    t = np.asarray(thresholds, dtype=np.float64)
    far = np.searchsorted(i, t, side="right") / len(i)
    frr = 1.0 - np.searchsorted(g, t, side="right") / len(g)
    return far, frr


def equal_error_rate(genuine, impostor) -> float:
    """EER from the step FAR/FRR curves sampled at every distinct score.

    The curve starts at threshold -inf (FAR 0, FRR 1). At the first sampled
    threshold where FAR - FRR is no longer negative, the crossing is located
    by linear interpolation with the previous threshold.
    """
    thresholds = np.concatenate([[-np.inf], np.unique(np.concatenate([genuine, impostor]))])
    far, frr = error_rates(genuine, impostor, thresholds)
    diff = far - frr
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        return float(far[k])
    da, db = diff[k - 1], diff[k]
    u = -da / (db - da)
    return float(far[k - 1] + u * (far[k] - far[k - 1]))


def decidability(genuine, impostor) -> float:
    g = np.asarray(genuine, dtype=np.float64)
    i = np.asarray(impostor, dtype=np.float64)
    var_g = g.var(ddof=1) if len(g) > 1 else 0.0
    var_i = i.var(ddof=1) if len(i) > 1 else 0.0
    gap = abs(g.mean() - i.mean())
    spread = math.sqrt((var_g + var_i) / 2.0)
    if spread == 0.0:
        return math.inf if gap > 0 else 0.0
    return float(gap / spread)


def verification_stats(genuine, impostor) -> VerificationStats:
    g = np.asarray(genuine, dtype=np.float64).ravel()
    i = np.asarray(impostor, dtype=np.float64).ravel()
    if len(g) == 0 or len(i) == 0:
        raise ValueError("genuine and impostor score lists must both be non-empty")
    return VerificationStats(equal_error_rate(g, i), decidability(g, i), g, i)
