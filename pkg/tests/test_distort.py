import numpy as np
import pytest

from lfqa.distort import (
    DQ_LEVELS_LADDER,
    DistortionError,
    DistortionSpec,
    K_LADDER,
    apply,
    distort_dq,
    distort_gauss,
    estimate_disparity,
    fill_holes_nearest,
    forward_warp,
    gauss_weights,
    quantize_disparity,
    reconstruct_linear,
    reconstruct_nn,
    reconstruct_opt,
)
from lfqa.lightfield import (
    DepthMap,
    LayerSpec,
    LightFieldError,
    SceneSpec,
    generate_scene,
    subsample_angular,
)
from conftest import make_lf, noise_lf
from oracles import circular_xcorr_peak


def _mse(a, b):
    return float(np.mean((a - b) ** 2))


# -------------------------------------------------------------- spec parsing

def test_spec_level_ladder():
    assert K_LADDER == (2, 5, 8, 11, 18, 25)
    for level, k in enumerate(K_LADDER, start=1):
        assert DistortionSpec(kind="NN", level=level).resolved_k == k


def test_spec_json_round_trip():
    spec = DistortionSpec(kind="DQ", level=4, quantization_levels=8)
    again = DistortionSpec.from_json(spec.to_json())
    assert again == spec


def test_spec_rejects_unknown_kind_and_bad_level():
    with pytest.raises(DistortionError):
        DistortionSpec(kind="WOBBLE")
    with pytest.raises(DistortionError):
        DistortionSpec(kind="NN", level=7)
    with pytest.raises(DistortionError):
        DistortionSpec(kind="DQ", quantization_levels=1)


def test_external_is_not_synthesized():
    lf = noise_lf()
    with pytest.raises(DistortionError, match="load_light_field"):
        apply(DistortionSpec(kind="EXTERNAL"), lf)


# ------------------------------------------------------------ reconstruction

def test_nn_clones_nearest_with_ties_to_lower_index():
    views = np.stack([np.full((4, 4, 3), v) for v in (0.0, 1.0)])
    sparse = make_lf(views)  # positions 0 and 1 normalized
    dense = reconstruct_nn(sparse, 3)  # positions 0, 1, 2; sample at 0 and 2
    assert np.array_equal(dense.views[0], views[0])
    assert np.array_equal(dense.views[2], views[1])
    # position 1 is equidistant; the tie goes to the lower index
    assert np.array_equal(dense.views[1], views[0])


def test_reconstruction_exact_at_sample_positions():
    lf = noise_lf(seed=4, v=21, h=8, w=16)
    for k in (2, 5, 8):
        sparse = subsample_angular(lf, k)
        pos = np.rint(sparse.manifest.positions() * 20).astype(int)
        for recon in (reconstruct_nn, reconstruct_linear, reconstruct_opt):
            dense = recon(sparse, 21)
            for s_idx, d_idx in enumerate(pos):
                assert np.array_equal(dense.views[d_idx], sparse.views[s_idx]), (
                    recon.__name__, k, d_idx)


def test_linear_blends_flanks():
    views = np.stack([np.full((4, 4, 3), 0.2), np.full((4, 4, 3), 0.8)])
    sparse = make_lf(views)
    dense = reconstruct_linear(sparse, 5)
    assert np.allclose(dense.views[1], 0.2 * 0.75 + 0.8 * 0.25)
    assert np.allclose(dense.views[2], 0.5)
    assert np.allclose(dense.views[3], 0.2 * 0.25 + 0.8 * 0.75)


def test_nn_epi_has_staircase_runs():
    # NN cloning makes EPI rows piecewise constant along the view axis with
    # run length k (up to the forced endpoint)
    lf, _ = generate_scene(SceneSpec(
        name="stair", view_count=13, width=48, height=8,
        layers=(LayerSpec(disparity=1.0, texture_seed=5),),
    ))
    out = apply(DistortionSpec(kind="NN", k=4), lf)
    stack = out.views
    runs = []
    start = 0
    for v in range(1, 13):
        if not np.array_equal(stack[v], stack[start]):
            runs.append(v - start)
            start = v
    runs.append(13 - start)
    assert max(runs) <= 4 + 1  # endpoint group may absorb the forced view
    assert sorted(set(runs))[-1] >= 3


def test_linear_ghosting_is_the_two_image_average():
    # a step edge moving across views: blended intermediates are exactly the
    # average of the flanks, i.e. double-exposed ghosting
    views = np.zeros((2, 4, 8, 3))
    views[0, :, 0:2] = 1.0
    views[1, :, 4:6] = 1.0
    sparse = make_lf(views)
    dense = reconstruct_linear(sparse, 3)
    assert np.array_equal(dense.views[1], 0.5 * views[0] + 0.5 * views[1])


def test_linear_error_zero_at_samples_positive_between():
    lf, _ = generate_scene(SceneSpec(
        name="lin", view_count=9, width=48, height=12,
        layers=(LayerSpec(disparity=1.0, texture_seed=6),),
    ))
    out = apply(DistortionSpec(kind="LINEAR", k=4), lf)
    errs = [_mse(out.views[v], lf.views[v]) for v in range(9)]
    assert errs[0] == 0.0 and errs[4] == 0.0 and errs[8] == 0.0
    assert min(errs[1:4]) > 0.0 and min(errs[5:8]) > 0.0


# --------------------------------------------------------------- disparity

def test_estimate_disparity_recovers_known_shift():
    rng = np.random.default_rng(12)
    a = np.repeat(rng.random((24, 64))[:, :, None], 3, axis=2)
    b = np.roll(a, 3, axis=1)
    disp, conf = estimate_disparity(a, b, max_disp=6)
    interior = np.zeros((24, 64), dtype=bool)
    interior[6:-6, 10:-10] = True
    good = interior & conf
    assert good.mean() > 0.2
    assert np.median(np.abs(disp[good] - 3.0)) <= 0.5


def test_estimate_disparity_flags_untextured():
    a = np.full((16, 32, 3), 0.5)
    b = np.full((16, 32, 3), 0.5)
    disp, conf = estimate_disparity(a, b, max_disp=4)
    assert not conf.any()
    assert np.all(disp == 0.0)


def test_estimate_disparity_between_generator_views(two_layer_scene):
    lf, depth = two_layer_scene
    disp, conf = estimate_disparity(lf.views[4], lf.views[5], max_disp=5)
    truth = depth.values[4]
    # away from layer boundaries the estimate matches the generator
    from scipy.ndimage import minimum_filter, maximum_filter
    stable = (minimum_filter(truth, size=9) == maximum_filter(truth, size=9))
    ok = stable & conf
    ok[:, :8] = False
    ok[:, -8:] = False
    assert ok.mean() > 0.15
    assert np.median(np.abs(disp[ok] - truth[ok])) <= 0.5


# ------------------------------------------------------------ forward warp

def test_forward_warp_shifts_and_reports_holes():
    img = np.zeros((2, 6, 3))
    img[:, 2] = 1.0
    shift = np.full((2, 6), 2.0)
    out, filled = forward_warp(img, shift)
    assert np.all(out[:, 4] == 1.0)
    assert filled[:, 2:].all()
    assert not filled[:, :2].any()


def test_forward_warp_larger_disparity_wins_collisions():
    img = np.zeros((1, 6, 3))
    img[0, 1] = 0.25  # moves by +2 to x=3
    img[0, 3] = 0.75  # stays at x=3
    shift = np.zeros((1, 6))
    shift[0, 1] = 2.0
    out, _ = forward_warp(img, shift)
    assert np.all(out[0, 3] == 0.25)  # |2| beats |0|


def test_fill_holes_takes_nearest_in_row():
    img = np.zeros((1, 5, 3))
    img[0, 0] = 0.2
    img[0, 4] = 0.8
    filled = np.array([[True, False, False, False, True]])
    out = fill_holes_nearest(img, filled)
    assert np.all(out[0, 1] == 0.2)
    assert np.all(out[0, 3] == 0.8)


# ---------------------------------------------------------------------- OPT

def test_opt_beats_nn_on_textured_scene():
    spec = SceneSpec(
        name="optwin", view_count=17, width=64, height=24,
        layers=(LayerSpec(disparity=1.0, texture_seed=40),),
    )
    lf, _ = generate_scene(spec)
    nn = apply(DistortionSpec(kind="NN", k=4), lf)
    opt = apply(DistortionSpec(kind="OPT", k=4), lf)
    # compare away from the non-wrapping borders
    sl = (slice(None), slice(None), slice(8, -8))
    assert _mse(opt.views[sl], lf.views[sl]) < _mse(nn.views[sl], lf.views[sl])


# ----------------------------------------------------------------------- DQ

def test_quantize_disparity_preserves_extremes():
    vals = np.array([0.0, 0.1, 1.0, 1.9, 2.0])
    q = quantize_disparity(vals, 8)
    assert q[0] == 0.0 and q[-1] == 2.0
    assert len(np.unique(quantize_disparity(np.linspace(0, 2, 100), 2))) == 2


def test_quantize_constant_field_is_exact():
    vals = np.full((3, 4), 0.7)
    assert np.array_equal(quantize_disparity(vals, 5), vals)


def test_dq_constant_depth_equals_exact_warp(flat_scene):
    lf, depth = flat_scene
    a = distort_dq(lf, depth, 8)
    b = distort_dq(lf, depth, 2)
    assert np.array_equal(a.views, b.views)


def test_dq_two_layer_interiors_reproduced(two_layer_scene):
    lf, depth = two_layer_scene
    out = apply(DistortionSpec(kind="DQ", quantization_levels=8), lf, depth)
    center = 4
    assert np.array_equal(out.views[center], lf.views[center])
    # interiors: stay away from layer boundaries and the non-wrap borders
    from scipy.ndimage import minimum_filter, maximum_filter
    for omega in (2, 6):
        truth = depth.values[omega]
        stable = minimum_filter(depth.values[center], size=13) == maximum_filter(
            depth.values[center], size=13
        )
        max_shift = int(np.ceil(2.0 * abs(omega - center))) + 1
        stable[:, :max_shift] = False
        stable[:, -max_shift:] = False
        err = np.abs(out.views[omega] - lf.views[omega]).mean(axis=2)
        assert err[stable].mean() <= 2.0 / 255.0


def test_dq_level_ladder_monotone_enough():
    assert DQ_LEVELS_LADDER == (32, 16, 12, 8, 4, 2)
    assert all(a > b for a, b in zip(DQ_LEVELS_LADDER, DQ_LEVELS_LADDER[1:]))


def test_dq_two_quantization_levels_collapse_epi_slopes():
    # flat texture stack (no parallax) re-rendered with a two-level ramp
    # depth: the output EPI must show exactly the two quantized slopes
    spec = SceneSpec(
        name="ramp", view_count=9, width=64, height=16,
        layers=(LayerSpec(disparity=0.0, texture_seed=17),),
    )
    lf, _ = generate_scene(spec)
    ramp = np.linspace(0.0, 2.0, 64)[None, :].repeat(16, axis=0)
    depth = DepthMap(values=np.repeat(ramp[None], 9, axis=0))
    out = distort_dq(lf, depth, 2)
    q = quantize_disparity(depth.values, 2)
    assert set(np.unique(q).tolist()) == {0.0, 2.0}
    # probe a column in each half: slope 0 content stays put, slope 2 moves
    left = out.views[:, :, 8:24, :].mean(axis=3)
    shift_left = circular_xcorr_peak(left[4], left[5])
    assert abs(shift_left - 0.0) <= 0.5


def test_dq_requires_depth():
    lf = noise_lf()
    with pytest.raises(DistortionError, match="depth"):
        apply(DistortionSpec(kind="DQ"), lf)


# --------------------------------------------------------------------- GAUSS

def test_gauss_weights_are_normalized():
    w = gauss_weights(101, 5, 0.5)
    assert w.shape == (101, 21)
    assert np.max(np.abs(w.sum(axis=1) - 1.0)) < 1e-12


def test_gauss_k1_tiny_sigma_is_near_identity():
    lf = noise_lf(seed=9, v=7)
    out = distort_gauss(lf, 1, sigma_views=0.05)
    assert np.max(np.abs(out.views - lf.views)) < 1e-6


def test_gauss_single_bright_view_profile_matches_kernel():
    views = np.zeros((9, 4, 4, 3))
    views[4] = 1.0
    lf = make_lf(views)
    out = distort_gauss(lf, 1, sigma_views=1.0)
    profile = out.views[:, 0, 0, 0]
    w = gauss_weights(9, 1, 1.0)
    expected = w[:, 4]
    assert np.max(np.abs(profile - expected)) < 1e-6


def test_gauss_rejects_k_wiping_out_views():
    lf = noise_lf(v=5)
    with pytest.raises(LightFieldError):
        distort_gauss(lf, 5)


# ------------------------------------------------------------- monotonicity

def test_mse_monotone_in_k_for_nn_linear_gauss():
    for seed in (0, 1, 2):
        spec = SceneSpec(
            name=f"mono{seed}", view_count=21, width=48, height=16,
            layers=(
                LayerSpec(disparity=0.0, texture_seed=seed * 10 + 1),
                LayerSpec(disparity=1.0, texture_seed=seed * 10 + 2, coverage=0.5),
            ),
        )
        lf, _ = generate_scene(spec)
        for kind in ("NN", "LINEAR", "GAUSS"):
            errs = []
            for k in (2, 5, 8):
                out = apply(DistortionSpec(kind=kind, k=k), lf)
                errs.append(_mse(out.views, lf.views))
            assert errs[0] <= errs[1] <= errs[2], (kind, seed, errs)
