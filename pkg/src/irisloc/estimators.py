"""scikit-learn style wrappers around the localization and encoding chains.

Both estimators are stateless: ``fit`` only validates its input, so they can
sit in a :class:`sklearn.pipeline.Pipeline` or be cloned and grid-searched
through ``get_params``/``set_params`` like any other estimator.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import IrisError, ShapeError
from .imaging import Circle
from .localization import LocalizationParams, ProbMapSet, localize
from .metrics import circle_hausdorff
from .recognition import NormalizedIris, encode, normalize


def check_map_stack(X) -> list[ProbMapSet]:
    """Accept one ProbMapSet, a sequence of them, or arrays shaped (4, H, W) / (n, 4, H, W)."""
    if isinstance(X, ProbMapSet):
        return [X]
    if isinstance(X, np.ndarray):
        if X.ndim == 3:
            return [ProbMapSet.from_array(X)]
        if X.ndim == 4:
            return [ProbMapSet.from_array(a) for a in X]
        raise ShapeError(f"expected (4, H, W) or (n, 4, H, W) maps, got {X.shape}")
    out = []
    for item in X:
        out.append(item if isinstance(item, ProbMapSet) else ProbMapSet.from_array(item))
    return out


def circles_to_row(inner: Circle, outer: Circle) -> np.ndarray:
    return np.array([inner.cx, inner.cy, inner.r, outer.cx, outer.cy, outer.r])


class IrisLocalizer(BaseEstimator):
    """Turn probability maps into inner/outer iris circles.

    ``predict`` returns an ``(n, 6)`` array of
    ``[inner_cx, inner_cy, inner_r, outer_cx, outer_cy, outer_r]``. With
    ``on_error="nan"`` a failed image yields a row of NaN instead of raising.
    """

    def __init__(
        self,
        mask_window=(200, 255),
        center_window=(150, 255),
        boundary_window=(150, 255),
        n_angles=360,
        delta=2,
        ring_tolerance=1.0,
        on_error="raise",
    ):
        self.mask_window = mask_window
        self.center_window = center_window
        self.boundary_window = boundary_window
        self.n_angles = n_angles
        self.delta = delta
        self.ring_tolerance = ring_tolerance
        self.on_error = on_error

    def _localization_params(self) -> LocalizationParams:
        return LocalizationParams(
            mask_window=tuple(self.mask_window),
            center_window=tuple(self.center_window),
            boundary_window=tuple(self.boundary_window),
            n_angles=self.n_angles,
            delta=self.delta,
            ring_tolerance=self.ring_tolerance,
        )

    def __sklearn_is_fitted__(self):
        return True

    def fit(self, X, y=None):
        check_map_stack(X)
        self._localization_params()
        return self

    def localize(self, maps):
        """Full :class:`LocalizationResult` for one map set."""
        return localize(check_map_stack(maps)[0], self._localization_params())

    def predict(self, X) -> np.ndarray:
        params = self._localization_params()
        rows = []
        for maps in check_map_stack(X):
            try:
                res = localize(maps, params)
            except IrisError:
                if self.on_error != "nan":
                    raise
                rows.append(np.full(6, np.nan))
                continue
            rows.append(circles_to_row(res.inner, res.outer))
        return np.vstack(rows)

    def score(self, X, y) -> float:
        """Negative mean circle Hausdorff distance (higher is better); failures score -inf."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=np.float64).reshape(-1, 6)
        dists = []
        for p, t in zip(pred, y):
            if np.any(np.isnan(p)):
                return -math.inf
            dists.append(circle_hausdorff(Circle(*t[:3]), Circle(*p[:3])))
            dists.append(circle_hausdorff(Circle(*t[3:]), Circle(*p[3:])))
        return -float(np.mean(dists))


class IrisEncoder(TransformerMixin, BaseEstimator):
    """Rubber-sheet normalisation followed by log-Gabor phase encoding.

    ``transform`` takes either :class:`NormalizedIris` objects or
    ``(image, mask, inner_circle, outer_circle)`` tuples and returns a list of
    :class:`IrisTemplate`.
    """

    def __init__(self, rows=64, cols=512, wavelength=18.0, sigma_ratio=0.5):
        self.rows = rows
        self.cols = cols
        self.wavelength = wavelength
        self.sigma_ratio = sigma_ratio

    def __sklearn_is_fitted__(self):
        return True

    def fit(self, X=None, y=None):
        return self

    def _normalized(self, item) -> NormalizedIris:
        if isinstance(item, NormalizedIris):
            return item
        img, mask, inner, outer = item
        return normalize(img, mask, inner, outer, self.rows, self.cols)

    def transform(self, X):
        return [encode(self._normalized(item), self.wavelength, self.sigma_ratio) for item in X]
