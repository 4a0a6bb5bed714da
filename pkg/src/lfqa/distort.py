"""Distortion synthesis for dense light fields.

Five families, all full-reference testable against the dense original:

  NN      subsample the view axis, clone the nearest surviving view
  LINEAR  subsample, blend the two flanking surviving views
  OPT     subsample, disparity-compensated forward warping of both flanks
  DQ      quantize the disparity field, re-render every view from the center
  GAUSS   angular crosstalk: each view becomes a Gaussian mix of the
          surviving views (display-like ghosting)

EXTERNAL marks conditions coded elsewhere (e.g. video codecs); they are
ingested from disk, never synthesized here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace

import numpy as np
from scipy.ndimage import uniform_filter

from .lightfield import DepthMap, LightField, LightFieldError, subsample_angular

KINDS = ("NN", "LINEAR", "OPT", "DQ", "GAUSS", "EXTERNAL")

# severity level 1..6 -> angular subsampling step
K_LADDER = (2, 5, 8, 11, 18, 25)
# severity level 1..6 -> disparity quantization levels (level 4 = 8 is the
# classic setting; fewer levels is coarser and therefore worse)
DQ_LEVELS_LADDER = (32, 16, 12, 8, 4, 2)
# severity level 1..6 -> codec QP for externally coded conditions (bookkeeping
# only; the coding itself happens outside this package)
EXTERNAL_QP_LADDER = (25, 29, 33, 37, 41, 45)

_POSITION_EPS = 1e-9


class DistortionError(ValueError):
    """Bad distortion parameters or inapplicable inputs."""


@dataclass(frozen=True)
class DistortionSpec:
    """Parameter block for one distorted condition.

    level indexes the severity ladder (1..6). k overrides the ladder's
    subsampling step when given. quantization_levels applies to DQ,
    sigma_views to GAUSS (kernel sigma = sigma_views * k).
    """

    kind: str
    level: int = 1
    k: int | None = None
    quantization_levels: int | None = None
    sigma_views: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DistortionError(f"unknown distortion kind {self.kind!r}")
        if not (1 <= self.level <= len(K_LADDER)):
            raise DistortionError(f"level must be in 1..{len(K_LADDER)}, got {self.level}")
        if self.k is not None and self.k < 1:
            raise DistortionError("k must be >= 1")
        if self.quantization_levels is not None and self.quantization_levels < 2:
            raise DistortionError("quantization_levels must be >= 2")
        if self.sigma_views <= 0:
            raise DistortionError("sigma_views must be > 0")

    @property
    def resolved_k(self) -> int:
        return self.k if self.k is not None else K_LADDER[self.level - 1]

    @property
    def resolved_quantization_levels(self) -> int:
        if self.quantization_levels is not None:
            return self.quantization_levels
        return DQ_LEVELS_LADDER[self.level - 1]

    @property
    def label(self) -> str:
        return f"{self.kind}-{self.level}"

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DistortionSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise DistortionError(f"bad distortion spec JSON: {e}") from None
        if "kind" not in d:
            raise DistortionError("distortion spec needs a 'kind'")
        return cls(**d)


# ---------------------------------------------------------------------------
# View interpolation from a sparse stack
# ---------------------------------------------------------------------------

def _dense_positions(sparse: LightField, target_views: int) -> np.ndarray:
    """Sample positions in dense view units (0 .. target_views-1)."""
    if target_views < 2:
        raise DistortionError("target view count must be >= 2")
    return sparse.manifest.positions() * (target_views - 1)


def _snap_index(pos: np.ndarray, j: int) -> int:
    """Index of the sample sitting at dense position j, or -1."""
    i = int(np.searchsorted(pos, j))
    for c in (i, i - 1):
        if 0 <= c < len(pos) and abs(pos[c] - j) < _POSITION_EPS:
            return c
    return -1


def reconstruct_nn(sparse: LightField, target_views: int) -> LightField:
    """Clone the nearest sample for every dense position; ties go low."""
    pos = _dense_positions(sparse, target_views)
    views = np.empty((target_views,) + sparse.views.shape[1:])
    for j in range(target_views):
        dist = np.abs(pos - j)
        views[j] = sparse.views[int(np.argmin(dist))]
    return _dense_result(sparse, views)


def reconstruct_linear(sparse: LightField, target_views: int) -> LightField:
    """Linearly blend the flanking samples at every dense position."""
    pos = _dense_positions(sparse, target_views)
    views = np.empty((target_views,) + sparse.views.shape[1:])
    for j in range(target_views):
        snap = _snap_index(pos, j)
        if snap >= 0:
            views[j] = sparse.views[snap]
            continue
        i_hi = min(int(np.searchsorted(pos, j)), len(pos) - 1)
        i_lo = max(i_hi - 1, 0)
        t = (j - pos[i_lo]) / (pos[i_hi] - pos[i_lo])
        views[j] = (1.0 - t) * sparse.views[i_lo] + t * sparse.views[i_hi]
    return _dense_result(sparse, views)


def _dense_result(sparse: LightField, views: np.ndarray) -> LightField:
    manifest = replace(
        sparse.manifest, angular_count=views.shape[0], view_positions=None
    )
    return LightField(views=np.clip(views, 0.0, 1.0), manifest=manifest)


# ---------------------------------------------------------------------------
# Disparity estimation: 1-D block matching with parabolic sub-pixel refinement
# ---------------------------------------------------------------------------

def _luma(img: np.ndarray) -> np.ndarray:
    return img @ np.array([0.299, 0.587, 0.114])


def _shift_columns(img: np.ndarray, d: int) -> np.ndarray:
    """img sampled at x+d with edge replication; works on (H, W)."""
    if d == 0:
        return img
    out = np.empty_like(img)
    if d > 0:
        out[:, :-d] = img[:, d:]
        out[:, -d:] = img[:, -1:]
    else:
        out[:, -d:] = img[:, :d]
        out[:, : -d] = img[:, :1]
    return out


def estimate_disparity(
    view_a: np.ndarray,
    view_b: np.ndarray,
    max_disp: int,
    block: int = 8,
    texture_floor: float = 1e-3,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel horizontal displacement a -> b and a confidence mask.

    Block-SAD over integer candidates in [-max_disp, max_disp], then a
    parabolic fit over the three costs around the winner. Pixels whose
    local contrast falls below texture_floor get disparity 0 and
    confidence False.

    Returns (disparity, confidence) float64/bool arrays shaped (H, W).
    """
    if view_a.shape != view_b.shape:
        raise DistortionError("views must share dimensions")
    a = _luma(view_a) if view_a.ndim == 3 else np.asarray(view_a, dtype=np.float64)
    b = _luma(view_b) if view_b.ndim == 3 else np.asarray(view_b, dtype=np.float64)
    h, w = a.shape
    max_disp = int(min(max(1, max_disp), max(1, w // 3)))

    candidates = np.arange(-max_disp, max_disp + 1)
    costs = np.empty((len(candidates), h, w))
    for idx, d in enumerate(candidates):
        costs[idx] = uniform_filter(np.abs(a - _shift_columns(b, int(d))), size=block, mode="nearest")

    best = np.argmin(costs, axis=0)
    disp = candidates[best].astype(np.float64)

    # parabolic refinement where the winner is interior
    interior = (best > 0) & (best < len(candidates) - 1)
    yy, xx = np.nonzero(interior)
    if yy.size:
        c0 = costs[best[yy, xx] - 1, yy, xx]
        c1 = costs[best[yy, xx], yy, xx]
        c2 = costs[best[yy, xx] + 1, yy, xx]
        # c1 is the smallest of the three, so the curvature is >= 0
        denom = c0 - 2.0 * c1 + c2
        frac = np.where(denom > 1e-12, 0.5 * (c0 - c2) / np.maximum(denom, 1e-12), 0.0)
        disp[yy, xx] += np.clip(frac, -0.5, 0.5)

    mean = uniform_filter(a, size=block, mode="nearest")
    var = uniform_filter(a * a, size=block, mode="nearest") - mean * mean
    confidence = np.sqrt(np.maximum(var, 0.0)) > texture_floor
    disp[~confidence] = 0.0
    return disp, confidence


# ---------------------------------------------------------------------------
# Forward warping with disparity z-ordering
# ---------------------------------------------------------------------------

def forward_warp(image: np.ndarray, shift: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Splat image pixels to x + shift(y, x), rounded to the pixel grid.

    Collisions resolve toward larger |shift| (nearer content wins); holes are
    reported, not filled. Returns (warped, filled_mask).
    """
    h, w = image.shape[:2]
    x = np.arange(w)[None, :].repeat(h, axis=0)
    tx = np.rint(x + shift).astype(np.int64)
    valid = (tx >= 0) & (tx < w)

    rows = np.nonzero(valid)[0]
    src_x = x[valid]
    targets = np.nonzero(valid)[0] * w + tx[valid]
    weight = np.abs(shift[valid])

    # sort by (target, |shift|, source x); the last entry of each target group
    # is the nearest (deterministic tie-break on source column)
    order = np.lexsort((src_x, weight, targets))
    targets_sorted = targets[order]
    last = np.ones(len(targets_sorted), dtype=bool)
    last[:-1] = targets_sorted[:-1] != targets_sorted[1:]

    out = np.zeros_like(image)
    filled = np.zeros(h * w, dtype=bool)
    chosen_targets = targets_sorted[last]
    chosen_rows = rows[order][last]
    chosen_x = src_x[order][last]
    filled[chosen_targets] = True
    out.reshape(h * w, -1)[chosen_targets] = image[chosen_rows, chosen_x]
    return out, filled.reshape(h, w)


def fill_holes_nearest(image: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Fill unfilled pixels from the nearest filled pixel in the same row."""
    h, w = filled.shape
    cols = np.arange(w)[None, :].repeat(h, axis=0)
    left = np.where(filled, cols, -1)
    left = np.maximum.accumulate(left, axis=1)
    right = np.where(filled, cols, 2 * w)
    right = np.minimum.accumulate(right[:, ::-1], axis=1)[:, ::-1]

    dl = np.where(left >= 0, cols - left, np.iinfo(np.int64).max)
    dr = np.where(right < w, right - cols, np.iinfo(np.int64).max)
    pick = np.where(dl <= dr, left, right)
    ok = pick >= 0
    pick = np.clip(pick, 0, w - 1)

    out = image.copy()
    ys = np.arange(h)[:, None].repeat(w, axis=1)
    out[~filled & ok] = image[ys[~filled & ok], pick[~filled & ok]]
    return out


def reconstruct_opt(sparse: LightField, target_views: int) -> LightField:
    """Disparity-compensated interpolation between flanking samples.

    For each gap the two flank views are matched in both directions; each
    in-between view is synthesized by forward-splatting both flanks toward
    it, resolving collisions by disparity magnitude, cross-filling holes
    from the opposite warp and blending by angular distance.
    """
    pos = _dense_positions(sparse, target_views)
    maxd = sparse.manifest.max_step_disparity
    views = np.empty((target_views,) + sparse.views.shape[1:])

    gap_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def gap_fields(i_lo: int) -> tuple[np.ndarray, np.ndarray]:
        if i_lo not in gap_cache:
            gap = pos[i_lo + 1] - pos[i_lo]
            radius = int(np.ceil(maxd * gap * 2.0)) + 1
            d_ab, _ = estimate_disparity(sparse.views[i_lo], sparse.views[i_lo + 1], radius)
            d_ba, _ = estimate_disparity(sparse.views[i_lo + 1], sparse.views[i_lo], radius)
            gap_cache[i_lo] = (d_ab, d_ba)
        return gap_cache[i_lo]

    for j in range(target_views):
        snap = _snap_index(pos, j)
        if snap >= 0:
            views[j] = sparse.views[snap]
            continue
        i_hi = min(int(np.searchsorted(pos, j)), len(pos) - 1)
        i_lo = i_hi - 1
        t = (j - pos[i_lo]) / (pos[i_hi] - pos[i_lo])
        d_ab, d_ba = gap_fields(i_lo)

        warp_a, fill_a = forward_warp(sparse.views[i_lo], t * d_ab)
        warp_b, fill_b = forward_warp(sparse.views[i_hi], (1.0 - t) * d_ba)

        both = fill_a & fill_b
        frame = np.zeros_like(warp_a)
        frame[both] = (1.0 - t) * warp_a[both] + t * warp_b[both]
        only_a = fill_a & ~fill_b
        only_b = fill_b & ~fill_a
        frame[only_a] = warp_a[only_a]
        frame[only_b] = warp_b[only_b]
        frame = fill_holes_nearest(frame, fill_a | fill_b)
        views[j] = frame
    return _dense_result(sparse, views)


# ---------------------------------------------------------------------------
# Depth quantization and angular crosstalk
# ---------------------------------------------------------------------------

def quantize_disparity(values: np.ndarray, levels: int) -> np.ndarray:
    """Snap to `levels` evenly spaced values spanning min..max inclusive.

    A constant field quantizes to itself regardless of `levels`.
    """
    if levels < 2:
        raise DistortionError("quantization needs at least 2 levels")
    lo = float(values.min())
    hi = float(values.max())
    if hi <= lo:
        return values.copy()
    step = (hi - lo) / (levels - 1)
    return lo + np.rint((values - lo) / step) * step


def distort_dq(lf: LightField, depth: DepthMap, levels: int) -> LightField:
    """Re-render every view from the center view using quantized disparity."""
    if depth.values.shape != lf.views.shape[:3]:
        raise DistortionError("depth shape disagrees with light field")
    v_count = lf.view_count
    center = (v_count - 1) // 2
    q = quantize_disparity(depth.values, levels)[center]
    views = np.empty_like(lf.views)
    for omega in range(v_count):
        shift = q * (omega - center)
        warped, filled = forward_warp(lf.views[center], shift)
        views[omega] = fill_holes_nearest(warped, filled)
    return LightField(views=np.clip(views, 0.0, 1.0), manifest=lf.manifest)


def distort_gauss(lf: LightField, k: int, sigma_views: float = 0.5) -> LightField:
    """Angular crosstalk: every output view is a normalized Gaussian mixture
    of the views surviving a step-k subsampling (endpoints kept), with
    sigma = sigma_views * k in dense view units.
    """
    if k < 1:
        raise DistortionError("k must be >= 1")
    if sigma_views <= 0:
        raise DistortionError("sigma_views must be > 0")
    v_count = lf.view_count
    if v_count == 1:
        return lf
    if k >= v_count:
        raise LightFieldError(f"k={k} leaves fewer than 2 of {v_count} views")
    kept = list(range(0, v_count, k))
    if kept[-1] != v_count - 1:
        kept.append(v_count - 1)
    sigma = sigma_views * k
    omega = np.arange(v_count)[:, None]
    centers = np.asarray(kept)[None, :]
    weights = np.exp(-((omega - centers) ** 2) / (2.0 * sigma * sigma))
    weights /= weights.sum(axis=1, keepdims=True)

    flat = lf.views[kept].reshape(len(kept), -1)
    mixed = (weights @ flat).reshape(lf.views.shape)
    return LightField(views=np.clip(mixed, 0.0, 1.0), manifest=lf.manifest)


def gauss_weights(v_count: int, k: int, sigma_views: float = 0.5) -> np.ndarray:
    """The (V, kept) mixing matrix distort_gauss applies; rows sum to 1."""
    kept = list(range(0, v_count, k))
    if kept[-1] != v_count - 1:
        kept.append(v_count - 1)
    sigma = sigma_views * k
    omega = np.arange(v_count)[:, None]
    centers = np.asarray(kept)[None, :]
    weights = np.exp(-((omega - centers) ** 2) / (2.0 * sigma * sigma))
    return weights / weights.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def apply(spec: DistortionSpec, lf: LightField, depth: DepthMap | None = None) -> LightField:
    """Produce the distorted light field for spec.

    NN/LINEAR/OPT run the subsample -> reconstruct pipeline; DQ and GAUSS
    transform the dense stack directly. EXTERNAL is not synthesizable:
    ingest externally coded views via load_light_field instead.
    """
    if spec.kind == "EXTERNAL":
        raise DistortionError(
            "EXTERNAL conditions are not synthesized; "
            "ingest externally coded views via load_light_field instead"
        )
    if spec.kind in ("NN", "LINEAR", "OPT"):
        sparse = subsample_angular(lf, spec.resolved_k)
        recon = {
            "NN": reconstruct_nn,
            "LINEAR": reconstruct_linear,
            "OPT": reconstruct_opt,
        }[spec.kind]
        return recon(sparse, lf.view_count)
    if spec.kind == "DQ":
        if depth is None:
            raise DistortionError("DQ requires a depth map")
        return distort_dq(lf, depth, spec.resolved_quantization_levels)
    if spec.kind == "GAUSS":
        return distort_gauss(lf, spec.resolved_k, spec.sigma_views)
    raise DistortionError(f"unhandled kind {spec.kind!r}")
