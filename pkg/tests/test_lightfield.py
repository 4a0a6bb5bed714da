import json

import numpy as np
import pytest

from lfqa.lightfield import (
    DepthMap,
    LayerSpec,
    LightField,
    LightFieldError,
    Manifest,
    SceneSpec,
    extract_epi,
    generate_scene,
    load_depth_map,
    load_light_field,
    load_manifest,
    save_light_field,
    save_manifest,
    subsample_angular,
    wrap_shift,
)
from conftest import make_lf, make_manifest, noise_lf
from oracles import circular_xcorr_peak, epi_slope


# ---------------------------------------------------------------- validation

def test_views_outside_unit_interval_rejected():
    views = np.zeros((2, 4, 4, 3))
    views[0, 0, 0, 0] = 1.5
    with pytest.raises(LightFieldError):
        make_lf(views)


def test_non_finite_views_rejected():
    views = np.zeros((2, 4, 4, 3))
    views[1, 2, 3, 1] = np.nan
    with pytest.raises(LightFieldError):
        make_lf(views)


def test_shape_mismatch_with_manifest_rejected():
    with pytest.raises(LightFieldError):
        LightField(views=np.zeros((2, 4, 4, 3)), manifest=make_manifest(v=3, w=4, h=4))


def test_views_are_immutable():
    lf = noise_lf()
    with pytest.raises(ValueError):
        lf.views[0, 0, 0, 0] = 0.0


def test_manifest_requires_positive_max_step_disparity():
    with pytest.raises(LightFieldError):
        make_manifest(maxd=0.0)


def test_manifest_positions_default_uniform():
    m = make_manifest(v=5)
    assert np.allclose(m.positions(), [0.0, 0.25, 0.5, 0.75, 1.0])


# ------------------------------------------------------------------ disk I/O

def test_save_load_round_trip_is_identity_after_first_quantization(tmp_path):
    lf = noise_lf(seed=1)
    save_light_field(lf, tmp_path / "a")
    lf2 = load_light_field(tmp_path / "a")
    save_light_field(lf2, tmp_path / "b")
    lf3 = load_light_field(tmp_path / "b")
    assert np.array_equal(lf2.views, lf3.views)
    # already-quantized values survive untouched
    assert np.array_equal(
        np.rint(lf.views * 255), np.rint(lf2.views * 255)
    )


def test_capture_scale_manifest_round_trips_bit_exactly(tmp_path):
    m = Manifest(
        name="capturescale", angular_count=101, width=960, height=720,
        max_step_disparity=1.0, source="external",
    )
    save_manifest(m, tmp_path / "manifest.json")
    assert load_manifest(tmp_path / "manifest.json") == m


def test_loader_rejects_view_count_mismatch(tmp_path):
    lf = noise_lf(seed=2, v=4)
    save_light_field(lf, tmp_path / "lf")
    (tmp_path / "lf" / "view_0003.png").unlink()
    with pytest.raises(LightFieldError, match="missing"):
        load_light_field(tmp_path / "lf")


def test_loader_rejects_extra_views(tmp_path):
    lf = noise_lf(seed=3, v=3)
    save_light_field(lf, tmp_path / "lf")
    src = tmp_path / "lf" / "view_0000.png"
    (tmp_path / "lf" / "view_0003.png").write_bytes(src.read_bytes())
    with pytest.raises(LightFieldError, match="beyond"):
        load_light_field(tmp_path / "lf")


def test_loader_rejects_corrupt_manifest(tmp_path):
    d = tmp_path / "lf"
    d.mkdir()
    (d / "manifest.json").write_text("{not json")
    with pytest.raises(LightFieldError, match="JSON"):
        load_light_field(d)


def test_depth_round_trip_within_quantization(tmp_path):
    spec = SceneSpec(
        name="d", view_count=3, width=16, height=8,
        layers=(LayerSpec(disparity=0.0, texture_seed=1),
                LayerSpec(disparity=2.0, texture_seed=2, coverage=0.5)),
    )
    lf, depth = generate_scene(spec)
    save_light_field(lf, tmp_path / "lf", depth=depth)
    back = load_depth_map(tmp_path / "lf")
    assert np.max(np.abs(back.values - depth.values)) <= 2.0 / 65535 * 2.0


# ---------------------------------------------------------------------- EPI

def test_extract_epi_shape_and_row_bounds():
    lf = noise_lf(v=4, h=6, w=10)
    epi = extract_epi(lf, 3)
    assert epi.data.shape == (4, 10, 3)
    assert epi.row == 3
    with pytest.raises(LightFieldError):
        extract_epi(lf, 6)
    with pytest.raises(LightFieldError):
        extract_epi(lf, -1)


def test_epi_is_pure_reindexing():
    lf = noise_lf(seed=5, v=4, h=6, w=10)
    total = sum(extract_epi(lf, r).data.sum() for r in range(6))
    assert total == pytest.approx(lf.views.sum(), abs=1e-9)


def test_epi_slope_matches_generator_disparity():
    spec = SceneSpec(
        name="slope", view_count=7, width=64, height=16,
        layers=(LayerSpec(disparity=1.5, texture_seed=21),),
    )
    lf, _ = generate_scene(spec)
    epi = extract_epi(lf, 8)
    gray = epi.data.mean(axis=2)
    assert epi_slope(gray) == pytest.approx(1.5, abs=0.5)


# ------------------------------------------------------------------ generator

def test_single_layer_views_are_exact_integer_shifts():
    spec = SceneSpec(
        name="shift", view_count=3, width=32, height=8,
        layers=(LayerSpec(disparity=1.0, texture_seed=9),),
    )
    lf, _ = generate_scene(spec)
    assert np.allclose(lf.views[2], np.roll(lf.views[0], 2, axis=1), atol=1e-12)


def test_two_layer_depth_map_reports_frontmost_opaque():
    spec = SceneSpec(
        name="front", view_count=5, width=64, height=32,
        layers=(
            LayerSpec(disparity=0.0, texture_seed=3),
            LayerSpec(disparity=2.0, texture_seed=7, coverage=0.4, mask_seed=13),
        ),
    )
    _, depth = generate_scene(spec)
    vals = np.unique(depth.values)
    assert set(vals.tolist()) == {0.0, 2.0}
    assert (depth.values == 2.0).mean() == pytest.approx(0.4, abs=0.08)


def test_generator_is_deterministic():
    spec = SceneSpec(
        name="det", view_count=3, width=16, height=8,
        layers=(LayerSpec(disparity=1.0, texture_seed=4),),
    )
    a, da = generate_scene(spec)
    b, db = generate_scene(spec)
    assert np.array_equal(a.views, b.views)
    assert np.array_equal(da.values, db.values)


def test_generator_consecutive_view_xcorr_peak_equals_disparity():
    for d in (0.0, 1.0, 2.0):
        spec = SceneSpec(
            name="xc", view_count=3, width=64, height=16,
            layers=(LayerSpec(disparity=d, texture_seed=31),),
        )
        lf, _ = generate_scene(spec)
        peak = circular_xcorr_peak(
            lf.views[0].mean(axis=2), lf.views[1].mean(axis=2)
        )
        assert peak == pytest.approx(d, abs=0.5)


def test_wrap_shift_integer_equals_roll():
    rng = np.random.default_rng(8)
    img = rng.random((6, 12, 3))
    assert np.allclose(wrap_shift(img, 3.0), np.roll(img, 3, axis=1), atol=1e-12)
    assert np.allclose(wrap_shift(img, -2.0), np.roll(img, -2, axis=1), atol=1e-12)


# ----------------------------------------------------------------- subsample

def test_subsample_counts_with_forced_endpoint():
    lf = noise_lf(v=101, h=4, w=4)
    expected = {2: 51, 5: 21, 8: 14, 11: 11, 18: 7, 25: 5}
    for k, n in expected.items():
        assert subsample_angular(lf, k).view_count == n


def test_subsample_identity_at_k1():
    lf = noise_lf(v=7)
    sub = subsample_angular(lf, 1)
    assert sub is lf


def test_subsample_rejects_k_leaving_too_few_views():
    lf = noise_lf(v=5)
    with pytest.raises(LightFieldError):
        subsample_angular(lf, 5)


def test_subsample_records_positions():
    lf = noise_lf(v=11)
    sub = subsample_angular(lf, 4)  # keeps 0,4,8,10
    assert sub.view_count == 4
    assert np.allclose(sub.manifest.positions(), [0.0, 0.4, 0.8, 1.0])
    assert np.array_equal(sub.views[1], lf.views[4])
    assert np.array_equal(sub.views[3], lf.views[10])
