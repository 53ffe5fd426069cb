#!/usr/bin/env python3
"""
Synthetic Weather Degradation
=============================
Paired (clean, degraded) image generation with a continuous, known severity
for four weather kinds. Severity maps linearly onto generator parameters so a
fixed seed gives a controllable severity ladder.

Key properties:
- severity 0 is the identity for every kind
- (clean, spec) -> degraded is a pure function; randomness comes from a
  counter-based Philox stream keyed by (seed, kind), never global state
- each generator draws a fixed pool of elements and severity selects a prefix
  of it, so the distortion grows pointwise with severity
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

from .errors import DataError, InvalidSpecError
from .imaging import check_image, list_images, load_image, save_image
from .manifest import MANIFEST_NAME, DatasetManifest, ManifestRow

logger = logging.getLogger(__name__)

HAZE_AIRLIGHT = 0.9
HAZE_MAX_DENSITY = 0.9
STREAK_MAX_OPACITY = 0.5
SNOW_MAX_OPACITY = 0.9
DROP_BRIGHTNESS_GAIN = 1.1
DROP_BRIGHTNESS_SHIFT = 0.08

SeveritySampler = Callable[[np.random.Generator], float]


class WeatherKind(str, Enum):
    RAIN_STREAK = "rain_streak"
    HAZE = "haze"
    SNOW = "snow"
    RAINDROP = "raindrop"

    @property
    def code(self) -> int:
        return list(WeatherKind).index(self)


@dataclass(frozen=True)
class DegradationSpec:
    """Weather kind, severity in [0, 1] and the 64-bit seed of its random stream"""
    kind: WeatherKind
    severity: float
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", WeatherKind(self.kind))
        except ValueError as exc:
            raise InvalidSpecError(f"Unknown weather kind: {self.kind}") from exc
        if not 0.0 <= float(self.severity) <= 1.0:
            raise InvalidSpecError(f"Severity {self.severity} outside [0, 1]")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidSpecError(f"Seed {self.seed} is not a 64-bit unsigned integer")
        object.__setattr__(self, "severity", float(self.severity))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class PairedSample:
    clean: np.ndarray
    degraded: np.ndarray
    spec: DegradationSpec

    def __post_init__(self):
        if self.clean.shape != self.degraded.shape:
            raise InvalidSpecError(f"Shape mismatch: {self.clean.shape} vs {self.degraded.shape}")


def weather_stream(seed: int, kind: WeatherKind, index: int = 0) -> np.random.Generator:
    """Counter-based random stream keyed by (seed, kind, index)"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, kind.code, index])))


def _require(spec: DegradationSpec, kind: WeatherKind, clean: np.ndarray) -> None:
    if spec.kind != kind:
        raise InvalidSpecError(f"Generator for {kind.value} got a {spec.kind.value} spec")
    check_image(clean)


def element_count(kind: WeatherKind, shape: Tuple[int, int], severity: float) -> int:
    """Number of streaks / flakes / drops placed at a severity (linear in severity)"""
    kind = WeatherKind(kind)
    return int(round(severity * _pool_size(kind, shape)))


def _pool_size(kind: WeatherKind, shape: Tuple[int, int]) -> int:
    area = shape[0] * shape[1]
    per_pixel = {
        WeatherKind.RAIN_STREAK: 1 / 96,
        WeatherKind.SNOW: 1 / 48,
        WeatherKind.RAINDROP: 1 / 1200,
        WeatherKind.HAZE: 0.0,
    }[kind]
    return max(1, int(round(area * per_pixel))) if per_pixel else 0


def apply_haze(clean: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Atmospheric scattering with uniform transmission t = 1 - 0.9 * severity"""
    _require(spec, WeatherKind.HAZE, clean)
    transmission = 1.0 - HAZE_MAX_DENSITY * spec.severity
    hazy = clean.astype(np.float64) * transmission + HAZE_AIRLIGHT * (1.0 - transmission)
    return np.clip(hazy, 0.0, 1.0).astype(np.float32)


def apply_rain_streak(clean: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Additive field of oriented bright segments; count and opacity scale with severity"""
    _require(spec, WeatherKind.RAIN_STREAK, clean)
    height, width, _ = clean.shape
    rng = weather_stream(spec.seed, spec.kind)
    pool = _pool_size(spec.kind, (height, width))
    # the whole pool is drawn up front so a severity only picks a prefix of it
    tilt = np.deg2rad(rng.uniform(-25.0, 25.0))
    starts = rng.uniform(-0.1, 1.1, size=(pool, 2)) * np.array([width, height])
    lengths = rng.uniform(0.04, 0.12, size=pool) * max(height, width) + 3.0
    angles = tilt + np.deg2rad(rng.normal(0.0, 3.0, size=pool))

    count = element_count(spec.kind, (height, width), spec.severity)
    canvas = np.zeros((height, width), dtype=np.float32)
    for (x0, y0), length, angle in zip(starts[:count], lengths[:count], angles[:count]):
        x1 = x0 + length * np.sin(angle)
        y1 = y0 + length * np.cos(angle)
        cv2.line(canvas, (int(round(x0)), int(round(y0))), (int(round(x1)), int(round(y1))), 1.0, 1)
    if count:
        canvas = cv2.GaussianBlur(canvas, (3, 3), 0.8)
    logger.debug(f"rain_streak severity={spec.severity:.3f}: {count}/{pool} streaks")

    streaks = STREAK_MAX_OPACITY * spec.severity * canvas
    return np.clip(clean + streaks[..., None], 0.0, 1.0).astype(np.float32)


def apply_snow(clean: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """White flake overlay; flake count, size and opacity scale with severity"""
    _require(spec, WeatherKind.SNOW, clean)
    height, width, _ = clean.shape
    rng = weather_stream(spec.seed, spec.kind)
    pool = _pool_size(spec.kind, (height, width))
    centers = rng.uniform(0.0, 1.0, size=(pool, 2)) * np.array([width, height])
    base_radii = rng.uniform(0.4, 2.2, size=pool) * max(1.0, min(height, width) / 128.0)

    count = element_count(spec.kind, (height, width), spec.severity)
    growth = 0.5 + 0.5 * spec.severity
    mask = np.zeros((height, width), dtype=np.float32)
    for (x, y), radius in zip(centers[:count], base_radii[:count]):
        cv2.circle(mask, (int(x), int(y)), int(round(radius * growth)), 1.0, -1)
    if count:
        mask = cv2.GaussianBlur(mask, (3, 3), 0.6)
    logger.debug(f"snow severity={spec.severity:.3f}: {count}/{pool} flakes")

    alpha = (SNOW_MAX_OPACITY * (0.5 + 0.5 * spec.severity) * mask)[..., None]
    snowy = clean * (1.0 - alpha) + alpha
    return np.clip(snowy, 0.0, 1.0).astype(np.float32)


def apply_raindrop(clean: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Elliptical drops whose pixels are replaced by blurred, brightened content.

    Degradation is local: pixels outside the drop mask are returned untouched.
    """
    _require(spec, WeatherKind.RAINDROP, clean)
    height, width, _ = clean.shape
    rng = weather_stream(spec.seed, spec.kind)
    pool = _pool_size(spec.kind, (height, width))
    centers = rng.uniform(0.0, 1.0, size=(pool, 2)) * np.array([width, height])
    axes = rng.uniform(0.02, 0.06, size=(pool, 2)) * min(height, width) + 2.0
    tilts = rng.uniform(0.0, 180.0, size=pool)

    count = element_count(spec.kind, (height, width), spec.severity)
    mask = np.zeros((height, width), dtype=np.uint8)
    for (x, y), (a, b), tilt in zip(centers[:count], axes[:count], tilts[:count]):
        cv2.ellipse(mask, (int(x), int(y)), (int(round(a)), int(round(b))), float(tilt), 0.0, 360.0, 1, -1)
    logger.debug(f"raindrop severity={spec.severity:.3f}: {count}/{pool} drops")
    if not count:
        return clean.astype(np.float32, copy=True)

    sigma = max(1.5, 0.015 * min(height, width))
    blurred = cv2.GaussianBlur(clean.astype(np.float32), (0, 0), sigma)
    drops = np.clip(blurred * DROP_BRIGHTNESS_GAIN + DROP_BRIGHTNESS_SHIFT, 0.0, 1.0)
    return np.where(mask[..., None].astype(bool), drops, clean).astype(np.float32)


GENERATORS: Dict[WeatherKind, Callable[[np.ndarray, DegradationSpec], np.ndarray]] = {
    WeatherKind.RAIN_STREAK: apply_rain_streak,
    WeatherKind.HAZE: apply_haze,
    WeatherKind.SNOW: apply_snow,
    WeatherKind.RAINDROP: apply_raindrop,
}


def degrade(clean: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Dispatch to the generator for ``spec.kind``"""
    return GENERATORS[spec.kind](clean, spec)


def compose(clean: np.ndarray, specs: Sequence[DegradationSpec]) -> np.ndarray:
    """Apply several degradations in order (combined weather, e.g. haze then rain)"""
    check_image(clean)
    image = clean.astype(np.float32, copy=True)
    for spec in specs:
        image = degrade(image, spec)
    return image


def severity_ladder(
    clean: np.ndarray, kind: Union[str, WeatherKind], severities: Sequence[float], seed: int = 0
) -> List[PairedSample]:
    """One scene degraded at each severity with a shared seed"""
    samples = []
    for severity in severities:
        spec = DegradationSpec(WeatherKind(kind), severity, seed)
        samples.append(PairedSample(clean, degrade(clean, spec), spec))
    return samples


def make_clean_scenes(count: int, size: Union[int, Tuple[int, int]] = 64, seed: int = 0) -> List[np.ndarray]:
    """Procedural clean scenes: gradient sky, flat shapes and mild texture"""
    height, width = (size, size) if isinstance(size, int) else size
    scenes = []
    for index in range(count):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 99, index])))
        top, bottom = rng.uniform(0.1, 0.9, size=(2, 3))
        ramp = np.linspace(0.0, 1.0, height, dtype=np.float32)[:, None, None]
        scene = (top * (1 - ramp) + bottom * ramp) * np.ones((1, width, 1), dtype=np.float32)
        scene = np.ascontiguousarray(scene, dtype=np.float32)
        for _ in range(int(rng.integers(3, 7))):
            color = tuple(float(c) for c in rng.uniform(0.05, 0.95, size=3))
            x0, y0 = int(rng.integers(0, width)), int(rng.integers(0, height))
            if rng.random() < 0.5:
                x1, y1 = int(rng.integers(0, width)), int(rng.integers(0, height))
                cv2.rectangle(scene, (x0, y0), (x1, y1), color, -1)
            else:
                radius = int(rng.integers(2, max(3, min(height, width) // 4)))
                cv2.circle(scene, (x0, y0), radius, color, -1)
        texture = cv2.GaussianBlur(rng.normal(0.0, 1.0, size=(height, width)).astype(np.float32), (0, 0), 1.5)
        scene = scene + 0.04 * texture[..., None]
        scenes.append(np.clip(scene, 0.0, 1.0).astype(np.float32))
    return scenes


def uniform_severity(rng: np.random.Generator) -> float:
    return float(rng.uniform(0.0, 1.0))


def generate_corpus(
    clean_dir: str,
    out_dir: str,
    counts: Optional[Mapping[str, int]] = None,
    severity_sampler: Optional[SeveritySampler] = None,
    seed: int = 0,
    workers: int = 1,
) -> DatasetManifest:
    """Degrade the clean images in ``clean_dir`` and write a manifest under ``out_dir``.

    ``counts`` maps weather kind -> number of degraded samples; sample i of a kind
    uses clean image i modulo the number of clean images. Default: every kind,
    one sample per clean image.
    """
    clean_paths = list_images(clean_dir)
    if not clean_paths:
        raise DataError(f"No clean images found in {clean_dir}")
    counts = counts or {kind.value: len(clean_paths) for kind in WeatherKind}
    sampler = severity_sampler or uniform_severity
    out_dir = os.path.abspath(out_dir)
    degraded_dir = os.path.join(out_dir, "degraded")
    os.makedirs(degraded_dir, exist_ok=True)

    jobs = []
    for kind_name, count in counts.items():
        kind = WeatherKind(kind_name)
        for index in range(count):
            sequence = np.random.SeedSequence([seed, kind.code, index])
            sample_seed = int(sequence.generate_state(1, np.uint64)[0])
            severity = float(sampler(np.random.Generator(np.random.Philox(sequence))))
            spec = DegradationSpec(kind, severity, sample_seed)
            name = f"{kind.value}_{index:04d}.png"
            jobs.append((clean_paths[index % len(clean_paths)], os.path.join(degraded_dir, name), spec))

    def render(job):
        clean_path, degraded_path, spec = job
        save_image(degraded_path, degrade(load_image(clean_path), spec))
        return ManifestRow(
            os.path.relpath(degraded_path, out_dir),
            os.path.relpath(clean_path, out_dir),
            spec.kind.value,
            spec.severity,
            spec.seed,
        )

    logger.info(f"🔄 Rendering {len(jobs)} degraded images from {len(clean_paths)} clean images")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(render, jobs))

    manifest = DatasetManifest(root=out_dir, rows=rows)
    manifest.save(os.path.join(out_dir, MANIFEST_NAME))
    return manifest


__all__ = [
    "WeatherKind",
    "DegradationSpec",
    "PairedSample",
    "weather_stream",
    "element_count",
    "apply_haze",
    "apply_rain_streak",
    "apply_snow",
    "apply_raindrop",
    "degrade",
    "compose",
    "severity_ladder",
    "make_clean_scenes",
    "generate_corpus",
]
