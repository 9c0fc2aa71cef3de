"""Synthetic eyes with exact ground truth and controllably corrupted probability maps."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigError
from .imaging import Circle, dilate_disk
from .localization import ProbMapSet
from .losses import GT_DILATION_RADIUS, TargetMaps

TEXTURE_COMPONENTS = 32
PUPIL_LEVEL = 0.08
SCLERA_LEVEL = 0.75
ACQUISITION_NOISE = 0.01


@dataclass(frozen=True)
class CorruptionSpec:
    edge_width: int = 3
    blob_count: int = 5
    blob_intensity: float = 0.9
    map_noise_sigma: float = 0.05
    occlusion_fraction: float = 0.0

    def __post_init__(self):
        if self.edge_width < 0 or self.blob_count < 0:
            raise ConfigError("edge_width and blob_count must be >= 0")
        if not 0 <= self.blob_intensity <= 1:
            raise ConfigError("blob_intensity must lie in [0, 1]")
        if self.map_noise_sigma < 0:
            raise ConfigError("map_noise_sigma must be >= 0")
        if not 0 <= self.occlusion_fraction <= 1:
            raise ConfigError("occlusion_fraction must lie in [0, 1]")

    @classmethod
    def clean(cls, edge_width=3) -> "CorruptionSpec":
        return cls(edge_width=edge_width, blob_count=0, blob_intensity=0.0, map_noise_sigma=0.0)


@dataclass(frozen=True)
class SynthSpec:
    width: int
    height: int
    pupil_center: tuple[float, float]
    inner_r: float
    outer_r: float
    texture_seed: int = 0
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    sample_seed: int | None = None
    rotation_deg: float = 0.0

    def __post_init__(self):
        if not 0 < self.inner_r < self.outer_r:
            raise ConfigError("need 0 < inner_r < outer_r")
        cx, cy = self.pupil_center
        margin = 2
        if (
            cx - self.outer_r < margin
            or cy - self.outer_r < margin
            or cx + self.outer_r > self.width - 1 - margin
            or cy + self.outer_r > self.height - 1 - margin
        ):
            raise ConfigError("iris must lie inside the image with a 2 px margin")

    @property
    def seed(self) -> int:
        return self.texture_seed if self.sample_seed is None else self.sample_seed


@dataclass(frozen=True)
class Blob:
    x: float
    y: float
    r: float
    inside: bool

    def pixels(self, shape) -> np.ndarray:
        yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
        return (xx - self.x) ** 2 + (yy - self.y) ** 2 <= self.r**2


@dataclass(frozen=True)
class GroundTruth:
    mask: np.ndarray
    inner: Circle
    outer: Circle
    pupil_center: tuple[float, float]
    spurious_blobs: tuple[Blob, ...] = ()

    def boundary_pixels(self, which) -> np.ndarray:
        """One-pixel-wide rasterisation of the inner or outer circle as (x, y) rows."""
        circ = self.inner if which == "inner" else self.outer
        ys, xs = np.nonzero(ring_raster(self.mask.shape, circ))
        return np.column_stack([xs, ys])

    def targets(self, radius=GT_DILATION_RADIUS) -> TargetMaps:
        shape = self.mask.shape
        point = np.zeros(shape, dtype=bool)
        cx, cy = self.pupil_center
        point[int(math.floor(cy + 0.5)), int(math.floor(cx + 0.5))] = True
        return TargetMaps(
            dilate_disk(point, radius),
            self.mask.copy(),
            dilate_disk(ring_raster(shape, self.inner), radius),
            dilate_disk(ring_raster(shape, self.outer), radius),
        )


def _polar(shape, center):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    dx, dy = xx - center[0], yy - center[1]
    return np.hypot(dx, dy), np.arctan2(dy, dx)


def ring_raster(shape, circle: Circle) -> np.ndarray:
    rho, _ = _polar(shape, circle.center)
    return np.abs(rho - circle.r) <= 0.5


def iris_texture(rho_norm, theta, seed) -> np.ndarray:
    """Seeded band-limited texture over normalised radius and angle, roughly unit variance."""
    rng = np.random.default_rng(seed)
    n = rng.integers(4, 49, size=TEXTURE_COMPONENTS)
    k = rng.uniform(0.5, 4.0, size=TEXTURE_COMPONENTS)
    amp = rng.uniform(0.5, 1.0, size=TEXTURE_COMPONENTS)
    phase = rng.uniform(0, 2 * np.pi, size=TEXTURE_COMPONENTS)
    tex = np.zeros_like(rho_norm)
    for m in range(TEXTURE_COMPONENTS):
        tex += amp[m] * np.sin(2 * np.pi * k[m] * rho_norm + n[m] * theta + phase[m])
    return tex / math.sqrt(np.sum(amp**2) / 2)


def _edge_map(rho, radius, width):
    band = dilate_disk(np.abs(rho - radius) <= 0.5, width)
    s = max(width, 1) / 2.0
    d = rho - radius
    # floor 0.6 keeps the whole band inside the default [150, 255] boundary window
    return np.where(band, 0.6 + 0.4 * np.exp(-(d * d) / (2 * s * s)), 0.0)


def _place_blobs(spec: SynthSpec, rng) -> list[Blob]:
    cx, cy = spec.pupil_center
    w = spec.corruption.edge_width
    blobs = []
    for _ in range(spec.corruption.blob_count):
        for _attempt in range(100):
            r = float(rng.uniform(2.0, 4.0))
            theta = float(rng.uniform(0, 2 * np.pi))
            inside_hi = spec.inner_r - w - r - 3
            inside_lo = r + 6
            if inside_hi > inside_lo and rng.random() < 0.3:
                d = float(rng.uniform(inside_lo, inside_hi))
                inside = True
            else:
                d = float(rng.uniform(spec.outer_r + w + r + 4, spec.outer_r + w + r + 30))
                inside = False
            x, y = cx + d * math.cos(theta), cy + d * math.sin(theta)
            if r + 1 <= x <= spec.width - 2 - r and r + 1 <= y <= spec.height - 2 - r:
                blobs.append(Blob(x, y, r, inside))
                break
    return blobs


def generate(spec: SynthSpec):
    """Render ``(image, ground_truth, maps)`` for ``spec``; identical specs give identical arrays."""
    shape = (spec.height, spec.width)
    corr = spec.corruption
    rng = np.random.default_rng(spec.seed)
    rho, theta = _polar(shape, spec.pupil_center)
    cx, cy = spec.pupil_center

    annulus = (rho > spec.inner_r) & (rho <= spec.outer_r)
    yy = np.arange(shape[0])[:, None]
    lid = cy - spec.outer_r + 2 * spec.outer_r * corr.occlusion_fraction
    occluded = np.broadcast_to(yy < lid, shape) if corr.occlusion_fraction > 0 else np.zeros(shape, dtype=bool)
    mask = annulus & ~occluded

    rho_norm = (rho - spec.inner_r) / (spec.outer_r - spec.inner_r)
    tex = iris_texture(rho_norm, theta - math.radians(spec.rotation_deg), spec.texture_seed)
    image = np.full(shape, SCLERA_LEVEL)
    image[annulus] = 0.45 + 0.12 * tex[annulus]
    image[rho <= spec.inner_r] = PUPIL_LEVEL
    image[occluded & (rho <= spec.outer_r)] = SCLERA_LEVEL
    image = np.clip(image + rng.normal(0.0, ACQUISITION_NOISE, shape), 0.0, 1.0)

    center = rho <= GT_DILATION_RADIUS
    maps = np.stack(
        [
            center.astype(np.float64),
            mask.astype(np.float64),
            _edge_map(rho, spec.inner_r, corr.edge_width),
            _edge_map(rho, spec.outer_r, corr.edge_width),
        ]
    )
    blobs = _place_blobs(spec, rng)
    for b in blobs:
        px = b.pixels(shape)
        targets = (2, 3) if b.inside else (0, 2, 3)
        for c in targets:
            maps[c][px] = np.maximum(maps[c][px], corr.blob_intensity)
    if corr.map_noise_sigma > 0:
        maps = np.clip(maps + rng.normal(0.0, corr.map_noise_sigma, maps.shape), 0.0, 1.0)

    gt = GroundTruth(
        mask=mask,
        inner=Circle(cx, cy, spec.inner_r),
        outer=Circle(cx, cy, spec.outer_r),
        pupil_center=(cx, cy),
        spurious_blobs=tuple(blobs),
    )
    return image, gt, ProbMapSet.from_array(maps)


def make_rotated_pair(spec: SynthSpec, degrees):
    """The case as specified and the same case with its texture rotated by ``degrees``."""
    if abs(degrees) > 20:
        raise ConfigError("rotation must be within +-20 degrees")
    return generate(spec), generate(replace(spec, rotation_deg=spec.rotation_deg + degrees))


def random_spec(seed, width=200, height=200, corruption: CorruptionSpec | None = None, **overrides) -> SynthSpec:
    """Draw a valid random geometry; ``seed`` also seeds the texture and corruption."""
    rng = np.random.default_rng(seed)
    inner_r = float(rng.uniform(14.0, 28.0))
    outer_r = float(rng.uniform(inner_r + 18.0, min(inner_r + 40.0, 62.0)))
    cx = float(width / 2 + rng.uniform(-8, 8))
    cy = float(height / 2 + rng.uniform(-8, 8))
    kwargs = dict(
        width=width,
        height=height,
        pupil_center=(cx, cy),
        inner_r=inner_r,
        outer_r=outer_r,
        texture_seed=int(seed),
        corruption=corruption if corruption is not None else CorruptionSpec(),
    )
    kwargs.update(overrides)
    return SynthSpec(**kwargs)
