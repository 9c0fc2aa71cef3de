"""Segmentation and localization evaluation protocols and report aggregation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import ShapeError
from .imaging import Circle
from .validation import check_binary_mask, check_points

DEFAULT_THRESHOLDS = tuple(np.arange(0, 61) * 0.5)
CIRCLE_SAMPLES = 360


def confusion(gt, pred) -> tuple[int, int, int, int]:
    """``(tp, fp, fn, tn)`` with iris as the positive class."""
    g = check_binary_mask(gt, "gt")
    p = check_binary_mask(pred, "pred")
    if g.shape != p.shape:
        raise ShapeError(f"gt {g.shape} and pred {p.shape} differ in shape")
    tp = int(np.count_nonzero(g & p))
    fp = int(np.count_nonzero(~g & p))
    fn = int(np.count_nonzero(g & ~p))
    tn = g.size - tp - fp - fn
    return tp, fp, fn, tn


def e1(gt, pred) -> float:
    tp, fp, fn, tn = confusion(gt, pred)
    return (fp + fn) / (tp + fp + fn + tn)


def e2(gt, pred) -> float:
    """Mean of the false-positive and false-negative rates; an undefined rate counts as 0."""
    tp, fp, fn, tn = confusion(gt, pred)
    fpr = fp / (fp + tn) if fp + tn else 0.0
    fnr = fn / (fn + tp) if fn + tp else 0.0
    return (fpr + fnr) / 2


def f1(gt, pred) -> float:
    tp, fp, fn, _ = confusion(gt, pred)
    if tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def _iou(inter, union):
    return inter / union if union else 1.0


def miou(gt, pred) -> float:
    """Mean of the iris and non-iris IoU; a class absent from both masks scores 1."""
    tp, fp, fn, tn = confusion(gt, pred)
    return (_iou(tp, tp + fp + fn) + _iou(tn, tn + fp + fn)) / 2


def batch_e1(pairs) -> float:
    rates = [e1(g, p) for g, p in pairs]
    if not rates:
        raise ValueError("no image pairs given")
    return float(np.mean(rates))


def batch_e2(pairs) -> float:
    rates = [e2(g, p) for g, p in pairs]
    if not rates:
        raise ValueError("no image pairs given")
    return float(np.mean(rates))


def _directed(a, b):
    _, idx = cKDTree(b).query(a)
    d = a - b[idx]
    return float(np.max(np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])))


def hausdorff(g_points, d_points) -> float:
    """Symmetric Hausdorff distance between two finite point sets."""
    g = check_points(g_points, name="g_points")
    d = check_points(d_points, name="d_points")
    return max(_directed(g, d), _directed(d, g))


def circle_hausdorff(gt: Circle, detected: Circle, n=CIRCLE_SAMPLES) -> float:
    """Hausdorff distance between two circles each sampled at ``n`` angles."""
    return hausdorff(gt.points(n), detected.points(n))


def success_curve(errors, thresholds=DEFAULT_THRESHOLDS) -> list[tuple[float, float]]:
    """Fraction of errors ``<= t`` for each threshold; NaN errors never count as detected."""
    e = np.asarray(errors, dtype=np.float64)
    t = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(t) < 0):
        raise ValueError("thresholds must be sorted ascending")
    if len(e) == 0:
        return [(float(x), 0.0) for x in t]
    finite = np.sort(e[~np.isnan(e)])
    hits = np.searchsorted(finite, t, side="right")
    return [(float(x), float(h) / len(e)) for x, h in zip(t, hits)]


# -- reports ------------------------------------------------------------------------


@dataclass(frozen=True)
class ImageScores:
    id: str
    e1: float
    e2: float
    f1: float
    iou: float
    hd_inner: float = math.nan
    hd_outer: float = math.nan


@dataclass(frozen=True)
class SegScores:
    e1: float
    e2: float
    f1_mean: float
    f1_std: float
    miou: float


@dataclass(frozen=True)
class LocScores:
    mhdis_inner: float
    mhdis_outer: float
    mhdis_overall: float
    success_curve_inner: list = field(default_factory=list)
    success_curve_outer: list = field(default_factory=list)


@dataclass(frozen=True)
class EvalReport:
    n: int
    per_image: list
    segmentation: SegScores
    localization: LocScores

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "per_image": [asdict(r) for r in self.per_image],
            "segmentation": asdict(self.segmentation),
            "localization": asdict(self.localization),
        }


def score_image(image_id, gt_mask, pred_mask, gt_inner=None, gt_outer=None, inner=None, outer=None) -> ImageScores:
    hd_in = circle_hausdorff(gt_inner, inner) if gt_inner is not None and inner is not None else math.nan
    hd_out = circle_hausdorff(gt_outer, outer) if gt_outer is not None and outer is not None else math.nan
    return ImageScores(
        str(image_id), e1(gt_mask, pred_mask), e2(gt_mask, pred_mask), f1(gt_mask, pred_mask), miou(gt_mask, pred_mask),
        hd_in, hd_out,
    )


def _nanmean(values):
    v = np.asarray(values, dtype=np.float64)
    v = v[~np.isnan(v)]
    return float(v.mean()) if len(v) else math.nan


def aggregate(rows, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    """Aggregate per-image scores in input order.

    Localization failures (NaN distances) are left out of the mean distances
    but count as misses in the success curves.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("cannot aggregate an empty set of images")
    f1s = np.array([r.f1 for r in rows])
    seg = SegScores(
        e1=float(np.mean([r.e1 for r in rows])),
        e2=float(np.mean([r.e2 for r in rows])),
        f1_mean=float(f1s.mean()),
        f1_std=float(f1s.std()),
        miou=float(np.mean([r.iou for r in rows])),
    )
    hin = [r.hd_inner for r in rows]
    hout = [r.hd_outer for r in rows]
    m_in, m_out = _nanmean(hin), _nanmean(hout)
    loc = LocScores(
        m_in, m_out, (m_in + m_out) / 2, success_curve(hin, thresholds), success_curve(hout, thresholds)
    )
    return EvalReport(len(rows), rows, seg, loc)
