"""Training objectives of the multi-task network with analytic gradients.

All losses are sums over pixels (not means). Probabilities are clamped to
``[eps, 1 - eps]`` before any logarithm; the returned gradient is the
derivative of the clamped expression, so it is exact wherever the input lies
strictly inside the clamp.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import ConfigError
from .imaging import dilate_disk
from .validation import check_binary_mask, check_gray_image, check_same_shape

GT_DILATION_RADIUS = 3


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.95
    gamma: float = 2.0
    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    eps: float = 1e-7

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("task weights must be >= 0")
        if not 0 < self.eps < 0.5:
            raise ConfigError("eps must lie in (0, 0.5)")


@dataclass(frozen=True)
class LossResult:
    """Loss value and one gradient array per input probability map, in argument order."""

    value: float
    grad: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class TargetMaps:
    """Binary ground truth for the four prediction tasks."""

    pupil_center: np.ndarray
    mask: np.ndarray
    inner_boundary: np.ndarray
    outer_boundary: np.ndarray


def prepare_targets(pupil_center, mask, inner_boundary, outer_boundary, radius=GT_DILATION_RADIUS) -> TargetMaps:
    """Thicken the thin point/edge annotations with a disk; the region mask is left alone."""
    return TargetMaps(
        dilate_disk(pupil_center, radius),
        check_binary_mask(mask),
        dilate_disk(inner_boundary, radius),
        dilate_disk(outer_boundary, radius),
    )


def _inputs(p, gt, cfg, name):
    p = check_gray_image(p, name)
    g = check_binary_mask(gt, f"{name} ground truth")
    check_same_shape(p, g, names=(name, f"{name} ground truth"))
    inside = (p > cfg.eps) & (p < 1 - cfg.eps)
    return np.clip(p, cfg.eps, 1 - cfg.eps), g, inside


def focal_loss(p, gt, cfg: LossConfig = LossConfig()) -> LossResult:
    pc, g, inside = _inputs(p, gt, cfg, "pupil map")
    q = np.where(g, pc, 1.0 - pc)
    one_minus = 1.0 - q
    log_q = np.log(q)
    value = np.sum(-cfg.alpha * one_minus**cfg.gamma * log_q)
    if cfg.gamma == 0:
        dq = -cfg.alpha / q
    else:
        dq = cfg.alpha * (cfg.gamma * one_minus ** (cfg.gamma - 1) * log_q - one_minus**cfg.gamma / q)
    grad = np.where(g, dq, -dq) * inside
    return LossResult(float(value), (grad,))


def _weighted_bce(pc, g, w_pos, w_neg):
    value = np.sum(-(w_pos * g * np.log(pc) + w_neg * (1 - g) * np.log(1 - pc)))
    grad = -w_pos * g / pc + w_neg * (1 - g) / (1 - pc)
    return value, grad


def seg_bce_loss(s, gt, cfg: LossConfig = LossConfig()) -> LossResult:
    pc, g, inside = _inputs(s, gt, cfg, "mask map")
    value, grad = _weighted_bce(pc, g.astype(np.float64), 1.0, 1.0)
    return LossResult(float(value), (grad * inside,))


def non_edge_fraction(gt) -> float:
    g = check_binary_mask(gt)
    return float(np.count_nonzero(~g)) / g.size


def edge_balanced_loss(e1, e2, gt1, gt2, cfg: LossConfig = LossConfig()) -> LossResult:
    """Class-balanced cross entropy over the inner (k=1) and outer (k=2) edge maps.

    The balance weight is the non-edge fraction of each map's own ground truth.
    """
    total = 0.0
    grads = []
    for k, (e, g) in enumerate(((e1, gt1), (e2, gt2)), start=1):
        pc, gb, inside = _inputs(e, g, cfg, f"edge map {k}")
        beta = non_edge_fraction(gb)
        value, grad = _weighted_bce(pc, gb.astype(np.float64), beta, 1.0 - beta)
        total += value
        grads.append(grad * inside)
    check_same_shape(e1, e2, names=("edge map 1", "edge map 2"))
    return LossResult(float(total), tuple(grads))


def joint_loss(maps, targets: TargetMaps, cfg: LossConfig = LossConfig()) -> LossResult:
    """Weighted sum ``lambda1 * pupil + lambda2 * seg + lambda3 * edge``.

    Gradients come back ordered (pupil center, mask, inner, outer).
    """
    check_same_shape(maps.pupil_center, maps.mask, maps.inner_boundary, maps.outer_boundary)
    lp = focal_loss(maps.pupil_center, targets.pupil_center, cfg)
    ls = seg_bce_loss(maps.mask, targets.mask, cfg)
    le = edge_balanced_loss(maps.inner_boundary, maps.outer_boundary, targets.inner_boundary, targets.outer_boundary, cfg)
    value = cfg.lambda1 * lp.value + cfg.lambda2 * ls.value + cfg.lambda3 * le.value
    grad = (
        cfg.lambda1 * lp.grad[0],
        cfg.lambda2 * ls.grad[0],
        cfg.lambda3 * le.grad[0],
        cfg.lambda3 * le.grad[1],
    )
    return LossResult(float(value), grad)


# -- finite-difference verification --------------------------------------------------


def numeric_grad(fn: Callable[[list[np.ndarray]], float], maps: list[np.ndarray], h=1e-4) -> list[np.ndarray]:
    """Central differences of ``fn`` with respect to every pixel of every map."""
    grads = []
    for m_idx, m in enumerate(maps):
        g = np.zeros_like(m)
        for idx in np.ndindex(m.shape):
            plus = [a.copy() for a in maps]
            minus = [a.copy() for a in maps]
            plus[m_idx][idx] += h
            minus[m_idx][idx] -= h
            g[idx] = (fn(plus) - fn(minus)) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def _adapters(cfg):
    from .localization import ProbMapSet

    def focal(maps, gts):
        return focal_loss(maps[0], gts[0], cfg)

    def bce(maps, gts):
        return seg_bce_loss(maps[0], gts[0], cfg)

    def edge(maps, gts):
        return edge_balanced_loss(maps[0], maps[1], gts[0], gts[1], cfg)

    def joint(maps, gts):
        return joint_loss(ProbMapSet(*maps), TargetMaps(*gts), cfg)

    return {"focal": (focal, 1), "seg_bce": (bce, 1), "edge_balanced": (edge, 2), "joint": (joint, 4)}


def gradcheck(seed=0, n_instances=20, size=8, h=1e-4, cfg: LossConfig = LossConfig(), losses=None) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients per loss.

    Probabilities are drawn from [0.05, 0.95] and ground truths uniformly at
    random. ``losses`` maps a name to ``(fn(maps, gts) -> LossResult, n_maps)``
    and defaults to the four training objectives.
    """
    losses = losses if losses is not None else _adapters(cfg)
    rng = np.random.default_rng(seed)
    errors = {}
    for name, (fn, n_maps) in losses.items():
        worst = 0.0
        for _ in range(n_instances):
            maps = [rng.uniform(0.05, 0.95, size=(size, size)) for _ in range(n_maps)]
            gts = [rng.random((size, size)) < 0.3 for _ in range(n_maps)]
            analytic = fn(maps, gts).grad
            numeric = numeric_grad(lambda ms: fn(ms, gts).value, maps, h)
            worst = max(worst, max_relative_error(analytic, numeric))
        errors[name] = worst
    return errors
