import os

import numpy as np
import pytest

from utility_ir.errors import DataError, InvalidSpecError
from utility_ir.manifest import load_manifest
from utility_ir.metrics import psnr
from utility_ir.weather_synth import (
    DegradationSpec,
    WeatherKind,
    apply_haze,
    apply_rain_streak,
    apply_raindrop,
    apply_snow,
    compose,
    degrade,
    element_count,
    generate_corpus,
    make_clean_scenes,
    severity_ladder,
)


@pytest.fixture
def scene():
    return make_clean_scenes(1, 64, seed=3)[0]


@pytest.mark.parametrize("kind", list(WeatherKind))
def test_zero_severity_is_identity(kind, scene):
    out = degrade(scene, DegradationSpec(kind, 0.0, 7))
    assert np.array_equal(out, scene)


@pytest.mark.parametrize("kind", list(WeatherKind))
def test_deterministic_and_in_range(kind, scene):
    spec = DegradationSpec(kind, 0.5, 11)
    first, second = degrade(scene, spec), degrade(scene, spec)
    assert np.array_equal(first, second)
    assert first.dtype == np.float32
    assert first.min() >= 0.0 and first.max() <= 1.0


@pytest.mark.parametrize("kind", list(WeatherKind))
def test_psnr_non_increasing_in_severity(kind, scene):
    ladder = severity_ladder(scene, kind, np.linspace(0.1, 1.0, 10), seed=5)
    values = [float(psnr(sample.degraded, sample.clean)) for sample in ladder]
    assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))


def test_haze_substitution():
    clean = np.full((4, 4, 3), 0.5, dtype=np.float32)
    out = apply_haze(clean, DegradationSpec("haze", 1.0))
    assert out[0, 0, 0] == pytest.approx(0.86, abs=1e-6)


def test_haze_matches_scalar_loop(scene):
    out = apply_haze(scene, DegradationSpec("haze", 0.5))
    t = 1.0 - 0.9 * 0.5
    for y in range(0, 64, 9):
        for x in range(0, 64, 7):
            for c in range(3):
                expected = min(max(float(scene[y, x, c]) * t + 0.9 * (1 - t), 0.0), 1.0)
                assert out[y, x, c] == pytest.approx(expected, abs=1e-6)


def test_wrong_kind_is_rejected(scene):
    with pytest.raises(InvalidSpecError):
        apply_haze(scene, DegradationSpec("snow", 0.3))
    with pytest.raises(InvalidSpecError):
        apply_rain_streak(scene, DegradationSpec("haze", 0.3))


@pytest.mark.parametrize("severity", [-0.1, 1.5])
def test_severity_outside_unit_interval(severity):
    with pytest.raises(InvalidSpecError):
        DegradationSpec("haze", severity)


def test_unknown_kind():
    with pytest.raises(InvalidSpecError):
        DegradationSpec("fog", 0.2)


def test_rain_mean_brightening_grows(gray):
    means = [
        float((apply_rain_streak(gray, DegradationSpec("rain_streak", s, 2)) - gray).mean()) for s in (0.2, 0.5, 0.8)
    ]
    assert means[0] < means[1] < means[2]


def test_snow_occlusion_grows(gray):
    fractions = [
        float((np.abs(apply_snow(gray, DegradationSpec("snow", s, 4)) - gray).max(axis=2) > 1e-3).mean())
        for s in (0.2, 0.5, 0.8)
    ]
    assert fractions[0] < fractions[1] < fractions[2]


def test_raindrop_is_local(scene):
    out = apply_raindrop(scene, DegradationSpec("raindrop", 0.4, 9))
    untouched = np.all(out == scene, axis=2)
    assert 0.5 < untouched.mean() < 1.0


def test_raindrop_count_grows():
    shape = (256, 256)
    assert element_count("raindrop", shape, 0.9) > element_count("raindrop", shape, 0.1)


def test_compose_order_matters(scene):
    haze = DegradationSpec("haze", 0.5, 1)
    rain = DegradationSpec("rain_streak", 0.7, 1)
    assert np.array_equal(compose(scene, []), scene)
    assert not np.array_equal(compose(scene, [haze, rain]), compose(scene, [rain, haze]))


def test_generate_corpus_rows_and_hash(tmp_path, write_corpus):
    first = write_corpus(str(tmp_path / "a"), kinds=("haze", "snow", "raindrop"), per_kind=4)
    second = write_corpus(str(tmp_path / "b"), kinds=("haze", "snow", "raindrop"), per_kind=4)
    assert len(first) == 12
    assert first.digest() == second.digest()
    reloaded = load_manifest(os.path.join(first.root, "manifest.csv"))
    assert reloaded.digest() == first.digest()


def test_generate_corpus_empty_dir(tmp_path):
    (tmp_path / "clean").mkdir()
    with pytest.raises(DataError):
        generate_corpus(str(tmp_path / "clean"), str(tmp_path / "out"))
