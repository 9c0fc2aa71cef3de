"""Forward-only reference implementation of the multi-task network blocks.

Tensors are ``(channels, height, width)`` float64 arrays. Layers are described
by :class:`ConvParams` and grouped in plain dicts keyed by layer name, e.g.::

    weights = random_attention_weights(cfg, rng)
    out = aspp_attention(x, cfg, weights)

Only inference is supported: batch normalisation uses fixed statistics and no
gradients are propagated through these layers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .exceptions import ConfigError, ShapeError
from .validation import check_tensor

BN_EPS = 1e-5


@dataclass(frozen=True)
class BatchNorm:
    """Inference-mode batch normalisation: ``scale * (x - mean) / sqrt(var + eps) + shift``."""

    mean: np.ndarray
    var: np.ndarray
    scale: np.ndarray
    shift: np.ndarray
    eps: float = BN_EPS

    @classmethod
    def identity(cls, channels) -> "BatchNorm":
        return cls(np.zeros(channels), np.ones(channels), np.ones(channels), np.zeros(channels))

    def __call__(self, x):
        s = (self.scale / np.sqrt(self.var + self.eps))[:, None, None]
        return (x - self.mean[:, None, None]) * s + self.shift[:, None, None]


@dataclass(frozen=True)
class ConvParams:
    """A 2-D convolution, optionally followed by batch norm and ReLU.

    ``weights`` has shape ``(out_channels, in_channels, k, k)`` with odd ``k``.
    When ``bn`` is set the layer computes ``ReLU(BN(conv(x)))``.
    """

    weights: np.ndarray
    bias: np.ndarray
    dilation: int = 1
    stride: int = 1
    bn: BatchNorm | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", np.asarray(self.bias, dtype=np.float64).reshape(-1))
        if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
            raise ShapeError(f"conv weights must be (out, in, k, k) with odd k, got {w.shape}")
        if self.bias.shape != (w.shape[0],):
            raise ShapeError(f"bias must have {w.shape[0]} entries, got {self.bias.shape}")
        if self.dilation < 1 or self.stride < 1:
            raise ConfigError("dilation and stride must be >= 1")
        if self.bn is not None and len(self.bn.mean) != w.shape[0]:
            raise ShapeError("batch-norm channels do not match conv output channels")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]

    @property
    def followed_by_bn_relu(self) -> bool:
        return self.bn is not None


@dataclass(frozen=True)
class AttentionConfig:
    variant: str = "ASPP"
    input_channels: int = 512
    branch_channels: int = 256
    dilations: tuple[int, ...] = (6, 12, 18)
    psp_bins: tuple[int, ...] = (1, 2, 3, 6)

    def __post_init__(self):
        if self.variant not in ("ASPP", "PSP"):
            raise ConfigError(f"unknown attention variant {self.variant!r}")
        if self.branch_channels < 1 or self.input_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        bins = list(self.psp_bins)
        if any(b < 1 for b in bins) or any(b2 <= b1 for b1, b2 in zip(bins, bins[1:])):
            raise ConfigError("psp_bins must be strictly increasing and >= 1")
        if self.variant == "PSP" and self.input_channels % 4:
            raise ConfigError("PSP attention needs input_channels divisible by 4")


# -- primitives ------------------------------------------------------------------


def conv2d(x, p: ConvParams) -> np.ndarray:
    """Zero-padded 'same' convolution with dilation (cross-correlation, as in CNN frameworks)."""
    x = check_tensor(x)
    if x.shape[0] != p.in_channels:
        raise ShapeError(f"conv expects {p.in_channels} input channels, got {x.shape[0]}")
    c, h, w = x.shape
    k, d = p.kernel, p.dilation
    pad = d * (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((p.out_channels, h, w))
    for i in range(k):
        for j in range(k):
            patch = xp[:, i * d : i * d + h, j * d : j * d + w]
            out += np.tensordot(p.weights[:, :, i, j], patch, axes=(1, 0))
    out += p.bias[:, None, None]
    if p.stride > 1:
        out = out[:, :: p.stride, :: p.stride]
    if p.bn is not None:
        out = np.maximum(p.bn(out), 0.0)
    return out


def avg_pool3x3(x) -> np.ndarray:
    """3x3 stride-1 average pooling; border windows average only in-image pixels."""
    x = check_tensor(x)
    _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ones = np.pad(np.ones((h, w)), 1)
    total = np.zeros_like(x)
    count = np.zeros((h, w))
    for i in range(3):
        for j in range(3):
            total += xp[:, i : i + h, j : j + w]
            count += ones[i : i + h, j : j + w]
    return total / count


def _bin_edges(n, bins):
    starts = np.floor(np.arange(bins) * n / bins).astype(int)
    ends = np.ceil((np.arange(bins) + 1) * n / bins).astype(int)
    return starts, ends


def adaptive_avg_pool(x, bins) -> np.ndarray:
    """Average-pool to a ``bins x bins`` grid using floor/ceil bin edges."""
    x = check_tensor(x)
    c, h, w = x.shape
    ys, ye = _bin_edges(h, bins)
    xs, xe = _bin_edges(w, bins)
    out = np.empty((c, bins, bins))
    for i in range(bins):
        for j in range(bins):
            out[:, i, j] = x[:, ys[i] : ye[i], xs[j] : xe[j]].mean(axis=(1, 2))
    return out


def _interp_axis(n_in, n_out):
    if n_in == 1 or n_out == 1:
        src = np.zeros(n_out)
    else:
        src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.clip(np.floor(src).astype(int), 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_resize(x, height, width) -> np.ndarray:
    """Bilinear resampling with corner alignment (corner pixels map onto corner pixels)."""
    x = check_tensor(x)
    y0, y1, fy = _interp_axis(x.shape[1], height)
    x0, x1, fx = _interp_axis(x.shape[2], width)
    rows = x[:, y0, :] * (1 - fy)[None, :, None] + x[:, y1, :] * fy[None, :, None]
    return rows[:, :, x0] * (1 - fx)[None, None, :] + rows[:, :, x1] * fx[None, None, :]


def sigmoid(x) -> np.ndarray:
    return expit(x)


def global_avg_pool_branch(x, p: ConvParams) -> np.ndarray:
    """Spatial mean, 1x1 conv (+BN+ReLU), then replicate back to the input size."""
    x = check_tensor(x)
    pooled = x.mean(axis=(1, 2), keepdims=True)
    y = conv2d(pooled, p)
    return np.broadcast_to(y, (y.shape[0],) + x.shape[1:]).copy()


# -- attention modules -----------------------------------------------------------


def _attention_tail(x, fused, att: ConvParams, return_attention):
    pooled = avg_pool3x3(x)
    m = sigmoid(conv2d(fused, att))
    if m.shape != pooled.shape:
        raise ShapeError(f"attention map shape {m.shape} does not match features {pooled.shape}")
    out = np.concatenate([pooled, pooled * m], axis=0)
    return (out, m) if return_attention else out


def aspp_attention(x, cfg: AttentionConfig, weights, return_attention=False):
    """ASPP attention block.

    Five parallel branches (1x1 conv, three dilated 3x3 convs, global pooling)
    run on the 3x3-pooled input ``P``; their concatenation is reduced by a 3x3
    conv and squashed into an attention map ``M``. The result is
    ``concat(P, P * M)`` with twice the input channels.
    """
    x = check_tensor(x)
    if cfg.variant != "ASPP":
        raise ConfigError("aspp_attention needs an ASPP config")
    if x.shape[0] != cfg.input_channels:
        raise ShapeError(f"expected {cfg.input_channels} channels, got {x.shape[0]}")
    pooled = avg_pool3x3(x)
    branches = [conv2d(pooled, weights["aspp.b0"])]
    for i, _ in enumerate(cfg.dilations, start=1):
        branches.append(conv2d(pooled, weights[f"aspp.b{i}"]))
    branches.append(global_avg_pool_branch(pooled, weights["aspp.gap"]))
    fused = np.concatenate(branches, axis=0)
    return _attention_tail(x, fused, weights["aspp.att"], return_attention)


def psp_attention(x, cfg: AttentionConfig, weights, return_attention=False):
    """Pyramid-pooling attention block.

    Each bin size pools the input to ``b x b``, projects it to a quarter of
    the input channels and upsamples it back; the pyramid is concatenated with
    the input and fed to the same attention tail as :func:`aspp_attention`.
    """
    x = check_tensor(x)
    if cfg.variant != "PSP":
        raise ConfigError("psp_attention needs a PSP config")
    if x.shape[0] != cfg.input_channels:
        raise ShapeError(f"expected {cfg.input_channels} channels, got {x.shape[0]}")
    _, h, w = x.shape
    pyramid = [x]
    for b in cfg.psp_bins:
        y = conv2d(adaptive_avg_pool(x, b), weights[f"psp.bin{b}"])
        pyramid.append(bilinear_resize(y, h, w))
    fused = np.concatenate(pyramid, axis=0)
    return _attention_tail(x, fused, weights["psp.att"], return_attention)


def decoder_fuse(decoder_prev, encoder_same, weights) -> np.ndarray:
    """Refine the coarser decoder map with two 3x3 conv+BN+ReLU layers, upsample
    it 2x and concatenate it in front of the same-stage encoder map."""
    dec = check_tensor(decoder_prev, "decoder_prev")
    enc = check_tensor(encoder_same, "encoder_same")
    if enc.shape[0] % 2:
        raise ShapeError("encoder channels must be even")
    if (2 * dec.shape[1], 2 * dec.shape[2]) != enc.shape[1:]:
        raise ShapeError(f"decoder {dec.shape[1:]} is not half the encoder size {enc.shape[1:]}")
    y = conv2d(conv2d(dec, weights["fuse.conv1"]), weights["fuse.conv2"])
    if y.shape[0] != enc.shape[0] // 2:
        raise ShapeError(f"refined decoder has {y.shape[0]} channels, expected {enc.shape[0] // 2}")
    y = bilinear_resize(y, enc.shape[1], enc.shape[2])
    return np.concatenate([y, enc], axis=0)


def head_forward(fused, weights):
    """Prediction head: ``head.conv1..N`` (3x3 conv+BN+ReLU), then the 1x1
    ``head.out`` conv to 4 channels and a per-pixel sigmoid."""
    from .localization import ProbMapSet

    y = check_tensor(fused)
    names = sorted((k for k in weights if k.startswith("head.conv")), key=lambda k: int(k[len("head.conv") :]))
    for name in names:
        y = conv2d(y, weights[name])
    out = weights["head.out"]
    if out.out_channels != 4:
        raise ShapeError("prediction head must have 4 output channels")
    return ProbMapSet.from_array(sigmoid(conv2d(y, out)))


# -- seeded random weights -----------------------------------------------------------


def random_conv(rng, out_ch, in_ch, k=1, dilation=1, bn_relu=True, scale=None) -> ConvParams:
    """He-style random conv with a random but well-conditioned batch norm."""
    if scale is None:
        scale = np.sqrt(2.0 / (in_ch * k * k))
    w = rng.normal(0.0, scale, size=(out_ch, in_ch, k, k))
    b = rng.normal(0.0, 0.1, size=out_ch)
    bn = None
    if bn_relu:
        bn = BatchNorm(
            mean=rng.normal(0.0, 0.1, out_ch),
            var=rng.uniform(0.5, 1.5, out_ch),
            scale=rng.uniform(0.5, 1.5, out_ch),
            shift=rng.normal(0.0, 0.1, out_ch),
        )
    return ConvParams(w, b, dilation=dilation, bn=bn)


def random_attention_weights(cfg: AttentionConfig, rng) -> dict[str, ConvParams]:
    c = cfg.input_channels
    if cfg.variant == "ASPP":
        bc = cfg.branch_channels
        weights = {"aspp.b0": random_conv(rng, bc, c, 1)}
        for i, d in enumerate(cfg.dilations, start=1):
            weights[f"aspp.b{i}"] = random_conv(rng, bc, c, 3, dilation=d)
        weights["aspp.gap"] = random_conv(rng, bc, c, 1)
        fused = bc * (len(cfg.dilations) + 2)
        weights["aspp.att"] = random_conv(rng, c, fused, 3, bn_relu=False)
        return weights
    q = c // 4
    weights = {f"psp.bin{b}": random_conv(rng, q, c, 1) for b in cfg.psp_bins}
    weights["psp.att"] = random_conv(rng, c, c + q * len(cfg.psp_bins), 3, bn_relu=False)
    return weights


def random_decoder_weights(rng, decoder_channels, encoder_channels) -> dict[str, ConvParams]:
    half = encoder_channels // 2
    return {
        "fuse.conv1": random_conv(rng, half, decoder_channels, 3),
        "fuse.conv2": random_conv(rng, half, half, 3),
    }


def random_head_weights(rng, in_channels, hidden: Sequence[int] = (16,)) -> dict[str, ConvParams]:
    weights = {}
    ch = in_channels
    for i, h in enumerate(hidden, start=1):
        weights[f"head.conv{i}"] = random_conv(rng, h, ch, 3)
        ch = h
    weights["head.out"] = random_conv(rng, 4, ch, 1, bn_relu=False)
    return weights
