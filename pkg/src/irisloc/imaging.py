"""Pixel-grid primitives: thresholding, connected components, morphology and
enclosing circles.

Gray images are 2-D float arrays with values in [0, 1]; binary masks are 2-D
boolean arrays. Points are ``(x, y)`` with ``x`` the column index and ``y`` the
row index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .exceptions import ConfigError, NoForegroundError
from .validation import check_binary_mask, check_gray_image, check_points

MIN_RADIUS = 1e-9

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"circle radius must be positive, got {self.r}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    def points(self, n=360) -> np.ndarray:
        """Sample ``n`` points on the circle, starting at angle 0."""
        theta = 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([self.cx + self.r * np.cos(theta), self.cy + self.r * np.sin(theta)])

    def to_dict(self) -> dict:
        return {"cx": float(self.cx), "cy": float(self.cy), "r": float(self.r)}

    @classmethod
    def from_dict(cls, d) -> "Circle":
        return cls(float(d["cx"]), float(d["cy"]), float(d["r"]))


@dataclass(frozen=True)
class Region:
    """An 8-connected foreground component.

    ``pixels`` is an ``(area, 2)`` integer array of (x, y) coordinates in
    row-major scan order, so ``pixels[0]`` is the top-left pixel.
    """

    label: int
    pixels: np.ndarray

    @property
    def area(self) -> int:
        return len(self.pixels)

    @property
    def centroid(self) -> tuple[float, float]:
        c = self.pixels.mean(axis=0)
        return (float(c[0]), float(c[1]))

    @property
    def top_left(self) -> tuple[int, int]:
        x, y = self.pixels[0]
        return (int(x), int(y))


def to_uint8(img) -> np.ndarray:
    """8-bit view of a probability image, ``round(255 * p)`` with halves rounded up."""
    img = check_gray_image(img)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def threshold_window(img, lo, hi) -> np.ndarray:
    """Pixels whose 8-bit value falls inside the closed window ``[lo, hi]``."""
    if not (0 <= lo <= 255 and 0 <= hi <= 255):
        raise ConfigError(f"threshold window must lie in [0, 255], got [{lo}, {hi}]")
    if lo > hi:
        raise ConfigError(f"invalid threshold window: lo={lo} > hi={hi}")
    v = to_uint8(img)
    return (v >= lo) & (v <= hi)


def connected_components(mask) -> list[Region]:
    """Label the 8-connected components of ``mask``.

    Regions come back sorted by decreasing area; equal areas are ordered by
    the (y, x) scan position of their top-left pixel. Labels are 1..n in that
    order.
    """
    mask = check_binary_mask(mask)
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    flat = labels.ravel()
    fg = np.flatnonzero(flat)
    # stable sort keeps row-major scan order inside each label
    order = fg[np.argsort(flat[fg], kind="stable")]
    counts = np.bincount(flat[order], minlength=n + 1)[1:]
    width = mask.shape[1]
    chunks = np.split(order, np.cumsum(counts)[:-1])
    regions = []
    for idx in chunks:
        pixels = np.column_stack([idx % width, idx // width]).astype(np.int64)
        regions.append(pixels)
    # first pixel index of each chunk is its scan-order rank
    regions.sort(key=lambda p: (-len(p), int(p[0, 1]), int(p[0, 0])))
    return [Region(label=i + 1, pixels=p) for i, p in enumerate(regions)]


def max_area_region(regions) -> Region:
    if not regions:
        raise NoForegroundError("no regions to choose from")
    best = regions[0]
    for reg in regions[1:]:
        if reg.area > best.area or (
            reg.area == best.area and (reg.top_left[1], reg.top_left[0]) < (best.top_left[1], best.top_left[0])
        ):
            best = reg
    return best


def label_image(regions, shape) -> np.ndarray:
    """Paint regions back into an integer label image."""
    out = np.zeros(shape, dtype=np.int32)
    for reg in regions:
        out[reg.pixels[:, 1], reg.pixels[:, 0]] = reg.label
    return out


# -- minimum enclosing circle (Welzl, iterative form) ----------------------------

_MEC_EPS = 1e-12


def _in_circle(c, p):
    return c is not None and math.hypot(p[0] - c[0], p[1] - c[1]) <= c[2] * (1 + _MEC_EPS) + _MEC_EPS


def _diameter(a, b):
    cx, cy = (a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0
    return (cx, cy, max(math.hypot(cx - a[0], cy - a[1]), math.hypot(cx - b[0], cy - b[1])))


def _circumcircle(a, b, c):
    ox = (min(a[0], b[0], c[0]) + max(a[0], b[0], c[0])) / 2.0
    oy = (min(a[1], b[1], c[1]) + max(a[1], b[1], c[1])) / 2.0
    ax, ay = a[0] - ox, a[1] - oy
    bx, by = b[0] - ox, b[1] - oy
    cx, cy = c[0] - ox, c[1] - oy
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if d == 0.0:
        return None
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    x = ox + (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    y = oy + (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    r = max(math.hypot(x - a[0], y - a[1]), math.hypot(x - b[0], y - b[1]), math.hypot(x - c[0], y - c[1]))
    return (x, y, r)


def _circle_two_points(pts, p, q):
    circ = _diameter(p, q)
    left = right = None
    px, py = p
    qx, qy = q
    for r in pts:
        if _in_circle(circ, r):
            continue
        cross = (qx - px) * (r[1] - py) - (qy - py) * (r[0] - px)
        c = _circumcircle(p, q, r)
        if c is None:
            continue
        side = (qx - px) * (c[1] - py) - (qy - py) * (c[0] - px)
        if cross > 0 and (left is None or side > (qx - px) * (left[1] - py) - (qy - py) * (left[0] - px)):
            left = c
        elif cross < 0 and (right is None or side < (qx - px) * (right[1] - py) - (qy - py) * (right[0] - px)):
            right = c
    if left is None and right is None:
        return circ
    if left is None:
        return right
    if right is None:
        return left
    return left if left[2] <= right[2] else right


def _circle_one_point(pts, p):
    c = (p[0], p[1], 0.0)
    for i, q in enumerate(pts):
        if not _in_circle(c, q):
            if c[2] == 0.0:
                c = _diameter(p, q)
            else:
                c = _circle_two_points(pts[: i + 1], p, q)
    return c


def min_enclosing_circle(points) -> Circle:
    """Smallest circle containing every point.

    Large inputs are first reduced to their convex hull vertices; the points
    are then visited in a fixed pseudo-random order so the result is
    deterministic.
    """
    pts = np.unique(check_points(points, min_points=1), axis=0)
    if len(pts) > 16:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            # collinear input: the extreme pair already defines the circle
            pass
    pts = pts[np.random.default_rng(0).permutation(len(pts))]
    plist = [(float(x), float(y)) for x, y in pts]
    c = None
    for i, p in enumerate(plist):
        if c is None or not _in_circle(c, p):
            c = _circle_one_point(plist[: i + 1], p)
    return Circle(c[0], c[1], max(c[2], MIN_RADIUS))


def disk(radius) -> np.ndarray:
    """Boolean structuring element {(dx, dy): dx^2 + dy^2 <= radius^2}."""
    if radius < 0:
        raise ConfigError(f"disk radius must be >= 0, got {radius}")
    k = int(math.floor(radius))
    yy, xx = np.mgrid[-k : k + 1, -k : k + 1]
    return xx * xx + yy * yy <= radius * radius


def dilate_disk(mask, radius) -> np.ndarray:
    mask = check_binary_mask(mask)
    if radius < 0:
        raise ConfigError(f"dilation radius must be >= 0, got {radius}")
    if radius < 1:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=disk(radius))
