import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from lfqa.distort import DistortionSpec, apply
from lfqa.lightfield import LayerSpec, SceneSpec, generate_scene
from lfqa.metrics import (
    METRIC_IDS,
    MetricConfig,
    MetricInputError,
    gmsd,
    mp_psnr,
    msssim,
    psnr,
    run_battery,
    ssim2d,
    ssim3d,
    ssim_2dx1d,
    swim3d,
    swim_block_scores,
)
from conftest import make_lf, noise_lf
from oracles import ssim_constant_pair


def const_lf(value, v=3, h=24, w=24):
    return make_lf(np.full((v, h, w, 3), value))


def gray_lf(field_2d, v=3):
    # replicate a 2D field across channels and views
    stack = np.repeat(field_2d[None, :, :, None], 3, axis=3)
    return make_lf(np.repeat(stack, v, axis=0))


@pytest.fixture(scope="module")
def textured_pair():
    spec = SceneSpec(
        name="tex", view_count=9, width=64, height=32,
        layers=(
            LayerSpec(disparity=0.0, texture_seed=2),
            LayerSpec(disparity=1.0, texture_seed=5, coverage=0.5),
        ),
    )
    lf, _ = generate_scene(spec)
    rng = np.random.default_rng(99)
    noisy = np.clip(lf.views + rng.normal(0, 0.05, lf.views.shape), 0, 1)
    return lf, make_lf(noisy, name="tex-noisy")


# ------------------------------------------------------------------ identity

def test_identity_scores():
    lf = noise_lf(seed=3, v=4, h=32, w=32)
    for score in run_battery(lf, lf):
        if score.metric_id in ("PSNR", "MPPSNR"):
            assert score.unbounded and score.pooled == np.inf
        elif score.metric_id == "GMSD":
            assert abs(score.pooled) < 1e-12
        else:
            assert abs(score.pooled - 1.0) < 1e-9, score.metric_id


def test_dimension_mismatch_raises():
    with pytest.raises(MetricInputError):
        psnr(noise_lf(v=3), noise_lf(v=4))


# ---------------------------------------------------------------------- PSNR

def test_psnr_uniform_offset_is_twenty_db():
    ref = const_lf(0.5)
    test = const_lf(0.6)
    score = psnr(ref, test)
    assert score.pooled == pytest.approx(20.0, abs=1e-9)
    assert not score.unbounded


def test_psnr_excludes_unbounded_views_from_mean():
    views_ref = np.full((3, 8, 8, 3), 0.5)
    views_test = views_ref.copy()
    views_test[1] += 0.1  # only the middle view differs
    score = psnr(make_lf(views_ref), make_lf(views_test))
    assert not score.unbounded
    assert score.pooled == pytest.approx(20.0, abs=1e-9)
    assert np.isinf(score.per_view[0]) and np.isinf(score.per_view[2])
    assert "excluded" in score.note


def test_pooled_is_mean_of_finite_per_view():
    rng = np.random.default_rng(11)
    for seed in range(3):
        a = noise_lf(seed=seed, v=5)
        b = noise_lf(seed=seed + 50, v=5)
        for score in run_battery(a, b):
            finite = [s for s in score.per_view if np.isfinite(s)]
            assert score.pooled == pytest.approx(np.mean(finite), abs=1e-12)


def test_view_permutation_leaves_per_view_metrics_unchanged():
    a = noise_lf(seed=20, v=6)
    b = noise_lf(seed=21, v=6)
    perm = np.array([3, 0, 5, 1, 4, 2])
    pa = make_lf(a.views[perm])
    pb = make_lf(b.views[perm])
    for mid in ("PSNR", "SSIM2D", "MSSSIM", "GMSD", "MPPSNR", "SWIM3D"):
        s1 = run_battery(a, b, metric_ids=(mid,))[0]
        s2 = run_battery(pa, pb, metric_ids=(mid,))[0]
        assert s1.pooled == pytest.approx(s2.pooled, abs=1e-12), mid


# -------------------------------------------------------------- SSIM family

def test_ssim2d_constant_pair_matches_closed_form():
    score = ssim2d(const_lf(0.5), const_lf(0.6))
    assert score.pooled == pytest.approx(ssim_constant_pair(0.5, 0.6), abs=1e-9)


def test_ssim_2dx1d_single_view_degenerates_to_ssim2d():
    a = noise_lf(seed=7, v=1, h=32, w=32)
    b = noise_lf(seed=8, v=1, h=32, w=32)
    assert ssim_2dx1d(a, b).pooled == pytest.approx(ssim2d(a, b).pooled, abs=1e-12)


def test_angular_extensions_match_ssim2d_on_constant_view_axis():
    rng = np.random.default_rng(13)
    frame_a = rng.random((32, 32, 3))
    frame_b = np.clip(frame_a + rng.normal(0, 0.1, frame_a.shape), 0, 1)
    a = make_lf(np.repeat(frame_a[None], 7, axis=0))
    b = make_lf(np.repeat(frame_b[None], 7, axis=0))
    base = ssim2d(a, b).pooled
    assert ssim_2dx1d(a, b).pooled == pytest.approx(base, abs=1e-9)
    assert ssim3d(a, b).pooled == pytest.approx(base, abs=1e-9)


def test_angular_ssim_penalizes_view_cloning():
    spec = SceneSpec(
        name="clone", view_count=26, width=64, height=32,
        layers=(LayerSpec(disparity=1.0, texture_seed=3),),
    )
    lf, _ = generate_scene(spec)
    out = apply(DistortionSpec(kind="NN", k=25), lf)
    assert ssim_2dx1d(lf, out).pooled < ssim2d(lf, out).pooled


def test_ssim3d_per_view_entries_are_slice_means():
    a = noise_lf(seed=30, v=5)
    b = noise_lf(seed=31, v=5)
    score = ssim3d(a, b)
    assert len(score.per_view) == 5
    assert score.pooled == pytest.approx(np.mean(score.per_view), abs=1e-12)


# -------------------------------------------------------------------- MSSSIM

def test_msssim_single_scale_equals_ssim2d():
    cfg = MetricConfig(msssim_weights=(1.0,))
    a = noise_lf(seed=40, v=2, h=48, w=48)
    b = noise_lf(seed=41, v=2, h=48, w=48)
    assert msssim(a, b, cfg).pooled == pytest.approx(ssim2d(a, b, cfg).pooled, abs=1e-9)


def test_msssim_reduces_scales_for_small_images():
    a = noise_lf(seed=42, v=2, h=64, w=96)
    score = msssim(a, noise_lf(seed=43, v=2, h=64, w=96))
    assert "reduced" in score.note


def test_msssim_decreases_with_blur_strength():
    spec = SceneSpec(
        name="blur", view_count=2, width=96, height=96,
        layers=(LayerSpec(disparity=0.0, texture_seed=12),),
    )
    lf, _ = generate_scene(spec)
    scores = []
    for sigma in (0.5, 1.5, 3.0):
        blurred = gaussian_filter(lf.views, sigma=(0, sigma, sigma, 0))
        scores.append(msssim(lf, make_lf(np.clip(blurred, 0, 1))).pooled)
    assert scores[0] > scores[1] > scores[2]


# ---------------------------------------------------------------------- GMSD

def test_gmsd_zero_for_identical():
    lf = noise_lf(seed=50, v=3)
    assert gmsd(lf, lf).pooled < 1e-12


def test_gmsd_contrast_scale_yields_constant_map():
    # period-4 vertical stripes after the internal 2x downsample; gradient
    # magnitude is uniform, so scaling contrast shifts GMS globally and the
    # deviation stays at zero
    t = np.tile([1.0, 0.0, 0.0, 1.0], 8)          # post-downsample target, W=32
    pre = np.roll(np.repeat(t, 2), 1)             # aligned for the 2x2 mean
    field = np.tile(pre, (16, 1))
    ref = gray_lf(field, v=2)
    test = gray_lf(0.5 * field, v=2)
    score = gmsd(ref, test)
    assert score.pooled < 1e-3
    assert score.pooled > 0  # the map is constant but away from 1


def test_gmsd_grows_with_noise():
    lf = noise_lf(seed=60, v=2, h=64, w=64)
    rng = np.random.default_rng(61)
    vals = []
    for amp in (0.02, 0.08, 0.2):
        noisy = np.clip(lf.views + rng.normal(0, amp, lf.views.shape), 0, 1)
        vals.append(gmsd(lf, make_lf(noisy)).pooled)
    assert vals[0] < vals[1] < vals[2]


# -------------------------------------------------------------------- MPPSNR

def test_mp_psnr_degenerates_to_psnr_with_identity_morphology():
    cfg = MetricConfig(mp_levels=1, mp_top_levels=1, mp_se=1)
    rng = np.random.default_rng(70)
    field_a = rng.random((32, 32))
    field_b = rng.random((32, 32))
    a = gray_lf(field_a, v=2)
    b = gray_lf(field_b, v=2)
    assert mp_psnr(a, b, cfg).pooled == pytest.approx(psnr(a, b).pooled, abs=1e-9)


def test_mp_psnr_identical_is_unbounded():
    lf = noise_lf(seed=71, v=2)
    score = mp_psnr(lf, lf)
    assert score.unbounded


def test_mp_psnr_decreases_with_structural_damage():
    spec = SceneSpec(
        name="mp", view_count=2, width=64, height=64,
        layers=(LayerSpec(disparity=0.0, texture_seed=72),),
    )
    lf, _ = generate_scene(spec)
    rng = np.random.default_rng(73)
    small = np.clip(lf.views + rng.normal(0, 0.02, lf.views.shape), 0, 1)
    large = np.clip(lf.views + rng.normal(0, 0.15, lf.views.shape), 0, 1)
    assert mp_psnr(lf, make_lf(small)).pooled > mp_psnr(lf, make_lf(large)).pooled


# -------------------------------------------------------------------- SWIM3D

def test_swim3d_forgives_global_shift():
    rng = np.random.default_rng(80)
    base = gaussian_filter(rng.random((48, 96)), 2.0)
    base = (base - base.min()) / (base.max() - base.min())
    shifted = np.roll(base, 4, axis=1)
    ref = gray_lf(base, v=2)
    test = gray_lf(shifted, v=2)
    score = swim3d(ref, test)
    assert score.pooled >= 0.95
    # blocks whose matched window lies fully inside the frame compensate
    # the shift exactly
    grid = swim_block_scores(
        0.299 * base + 0.587 * base + 0.114 * base,
        0.299 * shifted + 0.587 * shifted + 0.114 * shifted,
        MetricConfig(),
    )
    assert grid[:, 1:-1].min() >= 0.99


def test_swim3d_detects_noise():
    rng = np.random.default_rng(81)
    base = gaussian_filter(rng.random((48, 96)), 2.0)
    base = (base - base.min()) / (base.max() - base.min())
    ref = gray_lf(base, v=2)
    noisy = np.clip(base + rng.normal(0, 0.2, base.shape), 0, 1)
    test = gray_lf(noisy, v=2)
    clean = swim3d(ref, ref).pooled
    assert clean == pytest.approx(1.0, abs=1e-12)
    assert swim3d(ref, test).pooled < clean - 0.05


def test_swim3d_rejects_views_smaller_than_block():
    with pytest.raises(MetricInputError):
        swim3d(noise_lf(v=2, h=8, w=8), noise_lf(v=2, h=8, w=8))


# ------------------------------------------------------------------- battery

def test_battery_runs_all_metrics_in_order(textured_pair):
    ref, test = textured_pair
    scores = run_battery(ref, test)
    assert tuple(s.metric_id for s in scores) == METRIC_IDS
    for s in scores:
        assert np.isfinite(s.pooled)
        assert len(s.per_view) == ref.view_count


def test_battery_rejects_unknown_ids():
    lf = noise_lf()
    with pytest.raises(MetricInputError):
        run_battery(lf, lf, metric_ids=("PSNR", "VMAF"))


def test_battery_scores_degrade_with_distortion_severity(textured_pair):
    ref, _ = textured_pair
    mild = apply(DistortionSpec(kind="GAUSS", k=2), ref)
    harsh = apply(DistortionSpec(kind="GAUSS", k=8), ref)
    for mid in ("PSNR", "SSIM2D", "SSIM2Dx1D", "SSIM3D", "MSSSIM"):
        s_mild = run_battery(ref, mild, metric_ids=(mid,))[0].pooled
        s_harsh = run_battery(ref, harsh, metric_ids=(mid,))[0].pooled
        assert s_mild > s_harsh, mid
    assert gmsd(ref, mild).pooled < gmsd(ref, harsh).pooled
