"""Post-processing of the four probability maps into iris inner/outer circles.

The chain is::

    locate_pupil_center -> denoise_and_range -> viterbi_contour -> fit_circle

and :func:`localize` runs it for both boundaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import (
    ConfigError,
    DegenerateGeometryError,
    InconsistentGeometryError,
    NoIrisError,
    ShapeError,
)
from .imaging import Circle, connected_components, max_area_region, min_enclosing_circle, threshold_window
from .validation import check_gray_image, check_points

EMISSION_FLOOR = 1e-6
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class ProbMapSet:
    """The network's four aligned probability maps."""

    pupil_center: np.ndarray
    mask: np.ndarray
    inner_boundary: np.ndarray
    outer_boundary: np.ndarray

    def __post_init__(self):
        maps = [check_gray_image(getattr(self, n), n) for n in self.names]
        if len({m.shape for m in maps}) != 1:
            raise ShapeError(f"probability maps differ in shape: {[m.shape for m in maps]}")
        for n, m in zip(self.names, maps):
            object.__setattr__(self, n, m)

    names = ("pupil_center", "mask", "inner_boundary", "outer_boundary")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def as_array(self) -> np.ndarray:
        return np.stack([self.pupil_center, self.mask, self.inner_boundary, self.outer_boundary])

    @classmethod
    def from_array(cls, arr) -> "ProbMapSet":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 4:
            raise ShapeError(f"expected a (4, H, W) stack, got {arr.shape}")
        return cls(*arr)


@dataclass(frozen=True)
class BoundaryRange:
    center: tuple[float, float]
    r_min: float
    r_max: float

    def __post_init__(self):
        if not 0 < self.r_min <= self.r_max:
            raise ValueError(f"invalid boundary range [{self.r_min}, {self.r_max}]")


@dataclass(frozen=True)
class PolarContour:
    """Per-angle radii around ``center``; angle ``k`` is ``2*pi*k/n_angles``."""

    center: tuple[float, float]
    radii: np.ndarray

    @property
    def n_angles(self) -> int:
        return len(self.radii)

    def points(self) -> np.ndarray:
        theta = 2.0 * np.pi * np.arange(self.n_angles) / self.n_angles
        cx, cy = self.center
        return np.column_stack([cx + self.radii * np.cos(theta), cy + self.radii * np.sin(theta)])


@dataclass(frozen=True)
class LocalizationParams:
    mask_window: tuple[int, int] = (200, 255)
    center_window: tuple[int, int] = (150, 255)
    boundary_window: tuple[int, int] = (150, 255)
    n_angles: int = 360
    delta: int = 2
    ring_tolerance: float = 1.0

    def __post_init__(self):
        if self.n_angles < 8:
            raise ConfigError("n_angles must be >= 8")
        if self.delta < 1:
            raise ConfigError("delta must be >= 1")
        if self.ring_tolerance < 0:
            raise ConfigError("ring_tolerance must be >= 0")


@dataclass(frozen=True)
class LocalizationResult:
    pupil_center: tuple[float, float]
    inner: Circle
    outer: Circle
    inner_contour: PolarContour
    outer_contour: PolarContour
    denoised_inner: np.ndarray = field(repr=False)
    denoised_outer: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "pupil_center": [float(v) for v in self.pupil_center],
            "inner": self.inner.to_dict(),
            "outer": self.outer.to_dict(),
            "inner_contour": [float(r) for r in self.inner_contour.radii],
            "outer_contour": [float(r) for r in self.outer_contour.radii],
        }


# -- pupil center -----------------------------------------------------------------


def _iris_region(maps: ProbMapSet, params: LocalizationParams):
    regions = connected_components(threshold_window(maps.mask, *params.mask_window))
    if not regions:
        raise NoIrisError("mask map has no pixel inside the confidence window")
    return max_area_region(regions)


def locate_pupil_center(maps: ProbMapSet, params: LocalizationParams = LocalizationParams()) -> tuple[float, float]:
    """Centroid of the pupil-center blob nearest to the circumcircle center of the
    largest confident iris-mask region.

    Falls back to the circumcircle center itself when the pupil-center map has
    no candidate blob.
    """
    circ = min_enclosing_circle(_iris_region(maps, params).pixels)
    candidates = connected_components(threshold_window(maps.pupil_center, *params.center_window))
    if not candidates:
        return (circ.cx, circ.cy)
    best = min(candidates, key=lambda reg: math.hypot(reg.centroid[0] - circ.cx, reg.centroid[1] - circ.cy))
    return best.centroid


# -- denoising and range estimation ---------------------------------------------------


def enclosing_radius(maps: ProbMapSet, center, params: LocalizationParams = LocalizationParams()) -> float:
    """Largest distance from ``center`` to a pixel of the main iris-mask region."""
    px = _iris_region(maps, params).pixels
    return float(np.max(np.hypot(px[:, 0] - center[0], px[:, 1] - center[1])))


def _filter_edges(prob, center, radius, params, drop_inside):
    keep = np.zeros(prob.shape, dtype=bool)
    tol = params.ring_tolerance
    for reg in connected_components(threshold_window(prob, *params.boundary_window)):
        d = np.hypot(reg.pixels[:, 0] - center[0], reg.pixels[:, 1] - center[1])
        if d.min() > radius + tol:
            continue
        if drop_inside and d.max() < radius - tol:
            continue
        keep[reg.pixels[:, 1], reg.pixels[:, 0]] = True
    return np.where(keep, prob, 0.0)


def _edge_range(denoised, center, fallback):
    ys, xs = np.nonzero(denoised)
    if len(xs) == 0:
        lo, hi = fallback
    else:
        d = np.hypot(xs - center[0], ys - center[1])
        lo, hi = float(d.min()), float(d.max())
    lo = max(lo, 1.0)
    return BoundaryRange((float(center[0]), float(center[1])), lo, max(hi, lo))


def denoise_and_range(maps: ProbMapSet, pupil_center, params: LocalizationParams = LocalizationParams()):
    """Remove edge components that cannot be iris boundaries and measure the
    radial extent of what remains.

    The reference circle is centered on ``pupil_center`` and reaches the
    farthest pixel of the main iris-mask region. Outer-boundary components
    lying wholly inside or wholly outside it are deleted; inner-boundary
    components are deleted only when wholly outside. "Wholly" is judged with
    ``params.ring_tolerance`` pixels of slack.

    Returns ``(denoised_inner, denoised_outer, inner_range, outer_range)``.
    """
    radius = enclosing_radius(maps, pupil_center, params)
    den_inner = _filter_edges(maps.inner_boundary, pupil_center, radius, params, drop_inside=False)
    den_outer = _filter_edges(maps.outer_boundary, pupil_center, radius, params, drop_inside=True)
    inner_range = _edge_range(den_inner, pupil_center, (2.0, 0.8 * radius))
    outer_range = _edge_range(den_outer, pupil_center, (0.5 * radius, 1.2 * radius))
    return den_inner, den_outer, inner_range, outer_range


# -- polar dynamic programming ---------------------------------------------------------


def polar_emissions(boundary, center, radii, n_angles) -> np.ndarray:
    """Bilinear samples of ``boundary`` on the polar grid, shape ``(n_angles, len(radii))``."""
    theta = 2.0 * np.pi * np.arange(n_angles) / n_angles
    xs = center[0] + np.outer(np.cos(theta), radii)
    ys = center[1] + np.outer(np.sin(theta), radii)
    return ndimage.map_coordinates(boundary, [ys.ravel(), xs.ravel()], order=1, mode="grid-constant", cval=0.0).reshape(
        xs.shape
    )


def _offsets(delta):
    out = [0]
    for d in range(1, delta + 1):
        out += [-d, d]
    return np.array(out)


def best_closed_path(scores, delta) -> np.ndarray:
    """Index path maximising ``sum_k scores[k, path[k]]`` subject to
    ``|path[k+1] - path[k]| <= delta`` for every k, including the step from the
    last angle back to the first.

    One DP is run per start index (all vectorised together) with the start
    pinned, and the wrap-around step checked at the end. Ties prefer the
    smallest radius change, then the smaller start/end index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    k_count, n = scores.shape
    offs = _offsets(delta)
    dp = np.full((n, n), -np.inf)
    dp[np.arange(n), np.arange(n)] = scores[0]
    back = np.zeros((k_count, n, n), dtype=np.int32)
    cols = np.arange(n)
    for k in range(1, k_count):
        cand = np.full((len(offs), n, n), -np.inf)
        for oi, o in enumerate(offs):
            src = cols + o
            ok = (src >= 0) & (src < n)
            cand[oi][:, ok] = dp[:, src[ok]]
        pick = np.argmax(cand, axis=0)
        dp = np.take_along_axis(cand, pick[None], axis=0)[0] + scores[k]
        back[k] = cols[None, :] + offs[pick]
    close = np.abs(cols[:, None] - cols[None, :]) <= delta
    final = np.where(close, dp, -np.inf)
    start = int(np.argmax(final.max(axis=1)))
    end = int(np.argmax(final[start]))
    path = np.empty(k_count, dtype=np.int64)
    path[-1] = end
    for k in range(k_count - 1, 0, -1):
        path[k - 1] = back[k, start, path[k]]
    return path


def viterbi_contour(boundary, rng: BoundaryRange, n_angles=360, delta=2) -> PolarContour:
    """Smooth closed contour through the brightest ring of ``boundary``.

    Candidate radii are the integers in ``[r_min, r_max]``; the emission score
    of a radius is ``log(p + 1e-6)`` of the bilinearly sampled map and
    consecutive angles may differ by at most ``delta`` pixels.
    """
    boundary = check_gray_image(boundary, "boundary map")
    if n_angles < 8:
        raise ConfigError("n_angles must be >= 8")
    if delta < 1:
        raise ConfigError("delta must be >= 1")
    if rng.r_max - rng.r_min < 1:
        r = 0.5 * (rng.r_min + rng.r_max)
        return PolarContour(rng.center, np.full(n_angles, r))
    radii = np.arange(math.ceil(rng.r_min), math.floor(rng.r_max) + 1, dtype=np.float64)
    scores = np.log(polar_emissions(boundary, rng.center, radii, n_angles) + EMISSION_FLOOR)
    path = best_closed_path(scores, delta)
    return PolarContour(rng.center, radii[path])


# -- circle fitting ----------------------------------------------------------------


def fit_circle_points(points) -> Circle:
    """Algebraic (Kasa) least-squares circle through ``points``.

    Minimises ``sum (x^2 + y^2 + A x + B y + C)^2``; coordinates are centered
    and scaled first so the 3x3 normal equations stay well conditioned.
    """
    pts = check_points(points, min_points=3)
    mean = pts.mean(axis=0)
    u = pts - mean
    scale = math.sqrt(float(np.mean(np.sum(u * u, axis=1))))
    if scale == 0.0:
        raise DegenerateGeometryError("all points coincide")
    u = u / scale
    design = np.column_stack([u, np.ones(len(u))])
    rhs = -np.sum(u * u, axis=1)
    normal = design.T @ design
    if np.linalg.cond(normal) > MAX_CONDITION:
        raise DegenerateGeometryError("points are collinear; circle fit is singular")
    a, b, c = np.linalg.solve(normal, design.T @ rhs)
    r2 = (a * a + b * b) / 4.0 - c
    if r2 <= 0:
        raise DegenerateGeometryError("circle fit produced a non-positive radius")
    return Circle(float(mean[0] - scale * a / 2.0), float(mean[1] - scale * b / 2.0), float(scale * math.sqrt(r2)))


def fit_circle(contour: PolarContour) -> Circle:
    return fit_circle_points(contour.points())


# -- full chain -------------------------------------------------------------------


def localize(maps: ProbMapSet, params: LocalizationParams = LocalizationParams()) -> LocalizationResult:
    center = locate_pupil_center(maps, params)
    den_inner, den_outer, inner_range, outer_range = denoise_and_range(maps, center, params)
    inner_contour = viterbi_contour(den_inner, inner_range, params.n_angles, params.delta)
    outer_contour = viterbi_contour(den_outer, outer_range, params.n_angles, params.delta)
    inner = fit_circle(inner_contour)
    outer = fit_circle(outer_contour)
    if inner.r >= outer.r:
        raise InconsistentGeometryError(f"inner radius {inner.r:.2f} >= outer radius {outer.r:.2f}")
    h, w = maps.shape
    for circ in (inner, outer):
        if not (0 <= circ.cx <= w - 1 and 0 <= circ.cy <= h - 1):
            raise DegenerateGeometryError(f"fitted center ({circ.cx:.1f}, {circ.cy:.1f}) lies outside the image")
    return LocalizationResult(
        (float(center[0]), float(center[1])), inner, outer, inner_contour, outer_contour, den_inner, den_outer
    )
