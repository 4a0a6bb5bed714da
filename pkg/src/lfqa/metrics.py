"""Full-reference quality metrics for light fields.

Every metric compares a reference and a test light field of identical
dimensions and returns per-view scores plus their arithmetic mean. Views with
infinite scores (zero error under a PSNR-family metric) are flagged unbounded
and excluded from the mean.

Image-plane metrics (PSNR, SSIM2D, MSSSIM, GMSD, MPPSNR, SWIM3D) treat views
independently. The angular extensions couple views:

  SSIM2Dx1D  the 2D Gaussian window's center weight is spread along a 1D
             angular segment through the same pixel, so angular ghosting
             and staircase artifacts depress the local statistics
  SSIM3D     statistics over separable 3D windows (Gaussian in the image
             plane, uniform along the view axis), scored per angular slice

Color: PSNR uses all three channels; everything else works on luma
(0.299 R + 0.587 G + 0.114 B).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import correlate1d, grey_dilation, grey_erosion, uniform_filter
from scipy.signal import convolve2d

from .lightfield import LightField

METRIC_IDS = (
    "PSNR",
    "SSIM2D",
    "SSIM2Dx1D",
    "SSIM3D",
    "MSSSIM",
    "GMSD",
    "MPPSNR",
    "SWIM3D",
)

_LUMA = np.array([0.299, 0.587, 0.114])


class MetricInputError(ValueError):
    """Mismatched or unusable metric inputs."""


@dataclass(frozen=True)
class MetricConfig:
    """Knobs shared by the battery; defaults follow common practice."""

    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2
    angular_window_1d: int = 32
    angular_window_3d: int = 64
    msssim_weights: tuple[float, ...] = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
    gmsd_c: float = 170.0 / 255.0 ** 2
    mp_levels: int = 5
    mp_top_levels: int = 2
    mp_se: int = 2
    swim_block: int = 16
    swim_search: int = 8
    swim_bins: int = 32

    def __post_init__(self):
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise MetricInputError("ssim_window must be odd and >= 3")
        if self.ssim_sigma <= 0:
            raise MetricInputError("ssim_sigma must be > 0")
        if self.angular_window_1d < 1 or self.angular_window_3d < 1:
            raise MetricInputError("angular windows must be >= 1")
        if not self.msssim_weights or any(w <= 0 for w in self.msssim_weights):
            raise MetricInputError("msssim_weights must be positive")
        if self.mp_levels < 1 or not (1 <= self.mp_top_levels <= self.mp_levels):
            raise MetricInputError("mp_top_levels must be in 1..mp_levels")
        if self.mp_se < 1:
            raise MetricInputError("mp_se must be >= 1")
        if self.swim_block < 4 or self.swim_search < 0 or self.swim_bins < 2:
            raise MetricInputError("bad block-similarity parameters")


@dataclass(frozen=True)
class MetricScore:
    metric_id: str
    per_view: tuple[float, ...]
    pooled: float
    unbounded: bool = False
    note: str = ""


def _pool(metric_id: str, per_view: np.ndarray, note: str = "") -> MetricScore:
    per_view = np.asarray(per_view, dtype=np.float64)
    finite = np.isfinite(per_view)
    if finite.all():
        pooled = float(per_view.mean())
        unbounded = False
    elif finite.any():
        pooled = float(per_view[finite].mean())
        unbounded = False
        note = (note + "; " if note else "") + f"{int((~finite).sum())} unbounded views excluded"
    else:
        pooled = float("inf")
        unbounded = True
    return MetricScore(
        metric_id=metric_id,
        per_view=tuple(float(x) for x in per_view),
        pooled=pooled,
        unbounded=unbounded,
        note=note,
    )


def _check_pair(ref: LightField, test: LightField) -> None:
    if ref.views.shape != test.views.shape:
        raise MetricInputError(
            f"reference {ref.views.shape} and test {test.views.shape} differ in shape"
        )


def _luma_stack(lf: LightField) -> np.ndarray:
    return lf.views @ _LUMA


# ---------------------------------------------------------------------- PSNR

def psnr(ref: LightField, test: LightField, cfg: MetricConfig | None = None) -> MetricScore:
    """Peak signal-to-noise ratio per view over all three channels, dB."""
    _check_pair(ref, test)
    diff = ref.views - test.views
    mse = np.mean(diff * diff, axis=(1, 2, 3))
    with np.errstate(divide="ignore"):
        scores = 10.0 * np.log10(1.0 / mse)
    return _pool("PSNR", scores)


# -------------------------------------------------------------------- SSIM2D

def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _ssim_map_from_stats(mu_x, mu_y, exx, eyy, exy, c1, c2):
    var_x = exx - mu_x * mu_x
    var_y = eyy - mu_y * mu_y
    cov = exy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def _spatial_blur(volume: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = correlate1d(volume, kernel, axis=-1, mode="reflect")
    return correlate1d(out, kernel, axis=-2, mode="reflect")


def _ssim2d_map(x: np.ndarray, y: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    g = _gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma)
    blur = lambda a: _spatial_blur(a, g)
    return _ssim_map_from_stats(
        blur(x), blur(y), blur(x * x), blur(y * y), blur(x * y),
        cfg.ssim_c1, cfg.ssim_c2,
    )


def ssim2d(ref: LightField, test: LightField, cfg: MetricConfig | None = None) -> MetricScore:
    """Structural similarity on luma, Gaussian window, per view."""
    cfg = cfg or MetricConfig()
    _check_pair(ref, test)
    m = _ssim2d_map(_luma_stack(ref), _luma_stack(test), cfg)
    return _pool("SSIM2D", m.mean(axis=(1, 2)))


# ----------------------------------------------------------------- SSIM2Dx1D

def ssim_2dx1d(ref: LightField, test: LightField, cfg: MetricConfig | None = None) -> MetricScore:
    """SSIM over a 2D spatial window extended by a 1D angular segment.

    Statistics are weighted: the spatial Gaussian window keeps its weights
    except at the center, whose weight is spread uniformly over an angular
    segment of length min(angular_window_1d, V) through that pixel. With a
    single view, or when all views are identical, this reduces exactly to
    ssim2d.
    """
    cfg = cfg or MetricConfig()
    _check_pair(ref, test)
    x = _luma_stack(ref)
    y = _luma_stack(test)
    v_count = x.shape[0]

    g = _gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma)
    center_w = float(g[len(g) // 2] ** 2)  # 2D center weight of the separable kernel
    n_angular = int(min(cfg.angular_window_1d, v_count))
    angular_kernel = np.full(n_angular, 1.0 / n_angular)

    def stats(a: np.ndarray) -> np.ndarray:
        spatial = _spatial_blur(a, g)
        segment = correlate1d(a, angular_kernel, axis=0, mode="reflect")
        return spatial + center_w * (segment - a)

    m = _ssim_map_from_stats(
        stats(x), stats(y), stats(x * x), stats(y * y), stats(x * y),
        cfg.ssim_c1, cfg.ssim_c2,
    )
    return _pool("SSIM2Dx1D", m.mean(axis=(1, 2)))


# -------------------------------------------------------------------- SSIM3D

def ssim3d(ref: LightField, test: LightField, cfg: MetricConfig | None = None) -> MetricScore:
    """SSIM over 3D windows: Gaussian in-plane, uniform along the view axis.

    Per-view entries are the mean of the 3D SSIM map over each angular
    slice. Identical views reduce exactly to ssim2d.
    """
    cfg = cfg or MetricConfig()
    _check_pair(ref, test)
    x = _luma_stack(ref)
    y = _luma_stack(test)
    v_count = x.shape[0]
    g = _gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma)
    m_angular = int(min(cfg.angular_window_3d, v_count))
    u = np.full(m_angular, 1.0 / m_angular)

    def blur(a: np.ndarray) -> np.ndarray:
        return correlate1d(_spatial_blur(a, g), u, axis=0, mode="reflect")

    m = _ssim_map_from_stats(
        blur(x), blur(y), blur(x * x), blur(y * y), blur(x * y),
        cfg.ssim_c1, cfg.ssim_c2,
    )
    return _pool("SSIM3D", m.mean(axis=(1, 2)))


# -------------------------------------------------------------------- MSSSIM

def _downsample2(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    a = a[: h - h % 2, : w - w % 2]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def msssim(ref: LightField, test: LightField, cfg: MetricConfig | None = None) -> MetricScore:
    """Multi-scale SSIM per view.

    Contrast-structure terms at every scale, the full SSIM at the coarsest,
    combined as a weighted geometric mean. If the image is too small for the
    configured scale count, scales are dropped and the weights renormalized;
    the score carries a note.
    """
    cfg = cfg or MetricConfig()
    _check_pair(ref, test)
    x_stack = _luma_stack(ref)
    y_stack = _luma_stack(test)
    h, w = x_stack.shape[1:]

    n_scales = len(cfg.msssim_weights)
    while n_scales > 1 and 2 ** (n_scales - 1) * cfg.ssim_window > min(h, w):
        n_scales -= 1
    weights = np.asarray(cfg.msssim_weights[:n_scales])
    weights = weights / weights.sum()
    note = "" if n_scales == len(cfg.msssim_weights) else f"reduced to {n_scales} scales"

    g = _gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma)
    scores = np.empty(x_stack.shape[0])
    for v in range(x_stack.shape[0]):
        x, y = x_stack[v], y_stack[v]
        value = 1.0
        for s in range(n_scales):
            mu_x = _spatial_blur(x, g)
            mu_y = _spatial_blur(y, g)
            var_x = _spatial_blur(x * x, g) - mu_x * mu_x
            var_y = _spatial_blur(y * y, g) - mu_y * mu_y
            cov = _spatial_blur(x * y, g) - mu_x * mu_y
            cs = (2.0 * cov + cfg.ssim_c2) / (var_x + var_y + cfg.ssim_c2)
            if s < n_scales - 1:
                value *= max(float(cs.mean()), 0.0) ** weights[s]
                x, y = _downsample2(x), _downsample2(y)
            else:
                lum = (2.0 * mu_x * mu_y + cfg.ssim_c1) / (
                    mu_x * mu_x + mu_y * mu_y + cfg.ssim_c1
                )
                value *= max(float((lum * cs).mean()), 0.0) ** weights[s]
        scores[v] = value
    return _pool("MSSSIM", scores, note)


# ---------------------------------------------------------------------- GMSD

_PREWITT_X = np.array([[1.0, 0.0, -1.0]] * 3) / 3.0


def gmsd(ref: LightField, test: LightField, cfg: MetricConfig | None = None) -> MetricScore:
    """Gradient-magnitude similarity deviation per view (0 = identical).

    Luma is 2x downsampled by 2x2 averaging, Prewitt gradients are compared
    through a similarity map, and the score is the map's standard deviation.
    """
    cfg = cfg or MetricConfig()
    _check_pair(ref, test)
    x_stack = _luma_stack(ref)
    y_stack = _luma_stack(test)
    avg = np.ones((2, 2)) / 4.0
    scores = np.empty(x_stack.shape[0])
    # circular boundaries keep the gradient magnitude defined up to the frame
    # edge; mirrored ones would null the normal component there
    for v in range(x_stack.shape[0]):
        x = convolve2d(x_stack[v], avg, mode="same", boundary="wrap")[0::2, 0::2]
        y = convolve2d(y_stack[v], avg, mode="same", boundary="wrap")[0::2, 0::2]
        gx = np.hypot(
            convolve2d(x, _PREWITT_X, mode="same", boundary="wrap"),
            convolve2d(x, _PREWITT_X.T, mode="same", boundary="wrap"),
        )
        gy = np.hypot(
            convolve2d(y, _PREWITT_X, mode="same", boundary="wrap"),
            convolve2d(y, _PREWITT_X.T, mode="same", boundary="wrap"),
        )
        gms = (2.0 * gx * gy + cfg.gmsd_c) / (gx * gx + gy * gy + cfg.gmsd_c)
        scores[v] = gms.std()
    return _pool("GMSD", scores)


# -------------------------------------------------------------------- MPPSNR

def _mp_bands(img: np.ndarray, levels: int, se: int) -> list[np.ndarray]:
    """Morphological pyramid bands, fine to coarse.

    reduce = erosion + 2x decimation, expand = 2x nearest upsample +
    dilation. Bands are the per-level details plus the coarsest level
    itself, so a 1-level pyramid is just the image.
    """
    pyr = [img]
    for _ in range(levels - 1):
        top = pyr[-1]
        if min(top.shape) < 2:
            break
        eroded = grey_erosion(top, size=(se, se), mode="nearest")
        pyr.append(eroded[0::2, 0::2])
    bands = []
    for l in range(len(pyr) - 1):
        up = np.repeat(np.repeat(pyr[l + 1], 2, axis=0), 2, axis=1)
        up = grey_dilation(up, size=(se, se), mode="nearest")
        up = up[: pyr[l].shape[0], : pyr[l].shape[1]]
        bands.append(pyr[l] - up)
    bands.append(pyr[-1])
    return bands


def mp_psnr(ref: LightField, test: LightField, cfg: MetricConfig | None = None) -> MetricScore:
    """Morphological-pyramid PSNR per view on luma.

    MSE is accumulated over the mp_top_levels coarsest bands of the
    erosion/dilation pyramid and mapped to dB. Identical inputs are
    unbounded.
    """
    cfg = cfg or MetricConfig()
    _check_pair(ref, test)
    x_stack = _luma_stack(ref)
    y_stack = _luma_stack(test)
    scores = np.empty(x_stack.shape[0])
    note = ""
    for v in range(x_stack.shape[0]):
        bx = _mp_bands(x_stack[v], cfg.mp_levels, cfg.mp_se)
        by = _mp_bands(y_stack[v], cfg.mp_levels, cfg.mp_se)
        if len(bx) < cfg.mp_levels and not note:
            note = f"pyramid reduced to {len(bx)} bands"
        take = min(cfg.mp_top_levels, len(bx))
        sq = 0.0
        count = 0
        for bxl, byl in zip(bx[-take:], by[-take:]):
            d = bxl - byl
            sq += float((d * d).sum())
            count += d.size
        mse = sq / count
        with np.errstate(divide="ignore"):
            scores[v] = 10.0 * np.log10(1.0 / mse) if mse > 0 else np.inf
    return _pool("MPPSNR", scores, note)


# -------------------------------------------------------------------- SWIM3D

def _haar_horizontal_detail(block: np.ndarray) -> np.ndarray:
    """Level-1 orthonormal Haar horizontal-detail subband of a 2D block."""
    a = block[0::2, 0::2]
    b = block[0::2, 1::2]
    c = block[1::2, 0::2]
    d = block[1::2, 1::2]
    return 0.5 * ((a - b) + (c - d))


def swim_block_scores(x: np.ndarray, y: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    """Per-block similarity grid (1 - KS distance) for one luma view pair."""
    h, w = x.shape
    bs = cfg.swim_block
    edges = np.linspace(-0.5, 0.5, cfg.swim_bins + 1)
    grid = np.empty(((h - bs) // bs + 1, (w - bs) // bs + 1))
    for gy, by in enumerate(range(0, h - bs + 1, bs)):
        for gx, bx in enumerate(range(0, w - bs + 1, bs)):
            t_block = y[by : by + bs, bx : bx + bs]
            lo = max(-cfg.swim_search, -bx)
            hi = min(cfg.swim_search, w - bs - bx)
            best = None
            best_cost = None
            for s in range(lo, hi + 1):
                r_block = x[by : by + bs, bx + s : bx + s + bs]
                cost = float(np.abs(r_block - t_block).sum())
                if best_cost is None or cost < best_cost:
                    best_cost = cost
                    best = r_block
            ht = np.histogram(
                np.clip(_haar_horizontal_detail(t_block), -0.5, 0.5), bins=edges
            )[0]
            hr = np.histogram(
                np.clip(_haar_horizontal_detail(best), -0.5, 0.5), bins=edges
            )[0]
            cum_t = np.cumsum(ht) / ht.sum()
            cum_r = np.cumsum(hr) / hr.sum()
            grid[gy, gx] = 1.0 - float(np.max(np.abs(cum_t - cum_r)))
    return grid


def swim3d(ref: LightField, test: LightField, cfg: MetricConfig | None = None) -> MetricScore:
    """Shift-compensated block similarity per view.

    Each test block is matched to the reference under a horizontal search,
    then both blocks are compared through histograms of their Haar
    horizontal-detail coefficients; the view score is one minus the mean
    Kolmogorov-Smirnov distance, so pure parallax shifts are forgiven while
    structural damage is not.
    """
    cfg = cfg or MetricConfig()
    _check_pair(ref, test)
    x_stack = _luma_stack(ref)
    y_stack = _luma_stack(test)
    v_count, h, w = x_stack.shape
    bs = cfg.swim_block
    if h < bs or w < bs:
        raise MetricInputError(f"views smaller than one {bs}x{bs} block")
    scores = np.empty(v_count)
    for v in range(v_count):
        scores[v] = float(swim_block_scores(x_stack[v], y_stack[v], cfg).mean())
    return _pool("SWIM3D", scores)


# ------------------------------------------------------------------- battery

_DISPATCH = {
    "PSNR": psnr,
    "SSIM2D": ssim2d,
    "SSIM2Dx1D": ssim_2dx1d,
    "SSIM3D": ssim3d,
    "MSSSIM": msssim,
    "GMSD": gmsd,
    "MPPSNR": mp_psnr,
    "SWIM3D": swim3d,
}


def run_battery(
    ref: LightField,
    test: LightField,
    cfg: MetricConfig | None = None,
    metric_ids: tuple[str, ...] = METRIC_IDS,
) -> list[MetricScore]:
    """Run the requested metrics in the requested order."""
    cfg = cfg or MetricConfig()
    unknown = [m for m in metric_ids if m not in _DISPATCH]
    if unknown:
        raise MetricInputError(f"unknown metric ids: {unknown}")
    return [_DISPATCH[m](ref, test, cfg) for m in metric_ids]


@dataclass(frozen=True)
class MeasurementRow:
    """One pooled score for one (scene, condition, metric) triple.

    ``level`` 0 marks the undistorted reference condition.
    """

    scene: str
    distortion_kind: str
    level: int
    metric_id: str
    pooled: float
    unbounded: bool

    @property
    def condition_id(self) -> str:
        if self.level == 0:
            return "ref"
        return f"{self.distortion_kind}_L{self.level}"


def write_metric_csv(path: str | Path, rows: Sequence[MeasurementRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scene", "distortion_kind", "level", "metric_id", "pooled", "unbounded_flag"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.scene,
                    row.distortion_kind,
                    row.level,
                    row.metric_id,
                    f"{row.pooled:.9g}",
                    int(row.unbounded),
                ]
            )


def read_metric_csv(path: str | Path) -> list[MeasurementRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {
            "scene", "distortion_kind", "level", "metric_id", "pooled", "unbounded_flag",
        }
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise MetricInputError(f"metric CSV must have columns {sorted(required)}")
        for raw in reader:
            rows.append(
                MeasurementRow(
                    scene=raw["scene"],
                    distortion_kind=raw["distortion_kind"],
                    level=int(raw["level"]),
                    metric_id=raw["metric_id"],
                    pooled=float(raw["pooled"]),
                    unbounded=raw["unbounded_flag"] not in ("0", "", "False", "false"),
                )
            )
    return rows
