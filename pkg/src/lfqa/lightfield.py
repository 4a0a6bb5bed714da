"""Light-field data model, disk format, EPI slicing and a procedural scene generator.

A light field here is a dense horizontal-parallax stack: V views of H x W RGB
pixels taken along a horizontal baseline, values in [0, 1]. An EPI
(epipolar-plane image) is the slice at a fixed image row: a V x W x 3 array in
which a scene point traces a line whose slope in pixels per view equals its
disparity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

MANIFEST_NAME = "manifest.json"
VIEW_NAME = "view_%04d.png"
DEPTH_NAME = "depth_%04d.png"

_DEPTH_SCALE = 65535  # 16-bit grayscale


class LightFieldError(ValueError):
    """Malformed light field, manifest, or out-of-range access."""


@dataclass(frozen=True)
class Manifest:
    """Sidecar metadata for a light field stored on disk.

    max_step_disparity is the largest on-screen displacement, in pixels,
    of any scene point between two consecutive views. view_positions, when
    present, gives each view's normalized position in [0, 1] along the
    baseline (None means uniformly spaced); subsampling with a forced last
    view makes the spacing non-uniform, and reconstruction needs to know.
    """

    name: str
    angular_count: int
    width: int
    height: int
    max_step_disparity: float
    source: str = "synthetic"
    depth_available: bool = False
    view_positions: tuple[float, ...] | None = None
    depth_min: float = 0.0
    depth_max: float = 0.0

    def __post_init__(self):
        if not self.name:
            raise LightFieldError("manifest name must be non-empty")
        if self.angular_count < 1:
            raise LightFieldError("angular_count must be >= 1")
        if self.width < 1 or self.height < 1:
            raise LightFieldError("width and height must be >= 1")
        if not (self.max_step_disparity > 0):
            raise LightFieldError("max_step_disparity must be > 0")
        if self.source not in ("synthetic", "external"):
            raise LightFieldError("source must be 'synthetic' or 'external'")
        if self.view_positions is not None:
            pos = self.view_positions
            if len(pos) != self.angular_count:
                raise LightFieldError("view_positions length must match angular_count")
            if any(b <= a for a, b in zip(pos, pos[1:])):
                raise LightFieldError("view_positions must be strictly increasing")
            if pos[0] < 0.0 or pos[-1] > 1.0:
                raise LightFieldError("view_positions must lie in [0, 1]")

    def positions(self) -> np.ndarray:
        """Normalized view positions in [0, 1], uniform when unset."""
        if self.view_positions is not None:
            return np.asarray(self.view_positions, dtype=np.float64)
        if self.angular_count == 1:
            return np.zeros(1)
        return np.arange(self.angular_count) / (self.angular_count - 1)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "angular_count": self.angular_count,
            "width": self.width,
            "height": self.height,
            "max_step_disparity": self.max_step_disparity,
            "source": self.source,
            "depth_available": self.depth_available,
        }
        if self.view_positions is not None:
            d["view_positions"] = list(self.view_positions)
        if self.depth_available:
            d["depth_min"] = self.depth_min
            d["depth_max"] = self.depth_max
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        try:
            return cls(
                name=d["name"],
                angular_count=int(d["angular_count"]),
                width=int(d["width"]),
                height=int(d["height"]),
                max_step_disparity=float(d["max_step_disparity"]),
                source=d.get("source", "synthetic"),
                depth_available=bool(d.get("depth_available", False)),
                view_positions=tuple(d["view_positions"]) if d.get("view_positions") else None,
                depth_min=float(d.get("depth_min", 0.0)),
                depth_max=float(d.get("depth_max", 0.0)),
            )
        except KeyError as e:
            raise LightFieldError(f"manifest missing field {e.args[0]!r}") from None


@dataclass(frozen=True)
class LightField:
    """V x H x W x 3 float64 view stack in [0, 1]. Views are immutable."""

    views: np.ndarray
    manifest: Manifest

    def __post_init__(self):
        v = np.array(self.views, dtype=np.float64, copy=True)
        if v.ndim != 4 or v.shape[3] != 3:
            raise LightFieldError(f"views must be (V, H, W, 3), got {v.shape}")
        if v.shape[0] < 1:
            raise LightFieldError("light field needs at least one view")
        if not np.all(np.isfinite(v)):
            raise LightFieldError("views contain non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise LightFieldError("view values must lie in [0, 1]")
        m = self.manifest
        if v.shape[:3] != (m.angular_count, m.height, m.width):
            raise LightFieldError(
                f"views shape {v.shape[:3]} disagrees with manifest "
                f"({m.angular_count}, {m.height}, {m.width})"
            )
        v.setflags(write=False)
        object.__setattr__(self, "views", v)

    @property
    def view_count(self) -> int:
        return self.views.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.views.shape[:3]


@dataclass(frozen=True)
class DepthMap:
    """Per-view disparity field (V, H, W), pixels per unit view step."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 3:
            raise LightFieldError(f"depth values must be (V, H, W), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise LightFieldError("depth contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Epi:
    """Epipolar-plane image: the light field sliced at one fixed row."""

    data: np.ndarray  # (V, W, 3)
    row: int


def extract_epi(lf: LightField, row: int) -> Epi:
    if not (0 <= row < lf.manifest.height):
        raise LightFieldError(f"row {row} out of range [0, {lf.manifest.height})")
    return Epi(data=np.array(lf.views[:, row, :, :]), row=row)


# ---------------------------------------------------------------------------
# Disk format: manifest.json + one lossless 8-bit RGB PNG per view, plus
# optional 16-bit grayscale depth PNGs linearly mapped via manifest min/max.
# ---------------------------------------------------------------------------

def save_manifest(manifest: Manifest, path: Path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")

def load_manifest(path: Path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise LightFieldError(f"manifest not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise LightFieldError(f"manifest is not valid JSON: {path} ({e})") from None
    return Manifest.from_dict(d)


def save_light_field(lf: LightField, directory: Path, depth: DepthMap | None = None) -> None:
    """Write manifest + views (+ depth) into directory, creating it if needed."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = lf.manifest
    if depth is not None:
        if depth.values.shape != lf.views.shape[:3]:
            raise LightFieldError("depth shape disagrees with views")
        dmin = float(depth.values.min())
        dmax = float(depth.values.max())
        manifest = replace(manifest, depth_available=True, depth_min=dmin, depth_max=dmax)
    save_manifest(manifest, directory / MANIFEST_NAME)
    for i in range(lf.view_count):
        arr = np.clip(np.rint(lf.views[i] * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(directory / (VIEW_NAME % i))
    if depth is not None:
        dmin, dmax = manifest.depth_min, manifest.depth_max
        span = dmax - dmin
        for i in range(lf.view_count):
            if span > 0:
                raw = np.rint((depth.values[i] - dmin) / span * _DEPTH_SCALE)
            else:
                raw = np.zeros_like(depth.values[i])
            Image.fromarray(raw.astype(np.uint16)).save(directory / (DEPTH_NAME % i))


def load_light_field(directory: Path) -> LightField:
    directory = Path(directory)
    manifest = load_manifest(directory / MANIFEST_NAME)
    views = []
    for i in range(manifest.angular_count):
        p = directory / (VIEW_NAME % i)
        if not p.is_file():
            raise LightFieldError(
                f"manifest promises {manifest.angular_count} views but {p.name} is missing"
            )
        arr = np.asarray(Image.open(p))
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise LightFieldError(f"{p.name} is not an 8-bit RGB image")
        if arr.shape[0] != manifest.height or arr.shape[1] != manifest.width:
            raise LightFieldError(
                f"{p.name} is {arr.shape[1]}x{arr.shape[0]}, manifest says "
                f"{manifest.width}x{manifest.height}"
            )
        views.append(arr.astype(np.float64) / 255.0)
    extra = directory / (VIEW_NAME % manifest.angular_count)
    if extra.is_file():
        raise LightFieldError(f"found {extra.name} beyond the manifest's angular_count")
    return LightField(views=np.stack(views), manifest=manifest)


def load_depth_map(directory: Path) -> DepthMap:
    directory = Path(directory)
    manifest = load_manifest(directory / MANIFEST_NAME)
    if not manifest.depth_available:
        raise LightFieldError(f"no depth stored in {directory}")
    span = manifest.depth_max - manifest.depth_min
    fields = []
    for i in range(manifest.angular_count):
        p = directory / (DEPTH_NAME % i)
        if not p.is_file():
            raise LightFieldError(f"depth image {p.name} is missing")
        raw = np.asarray(Image.open(p)).astype(np.float64)
        fields.append(manifest.depth_min + raw / _DEPTH_SCALE * span)
    return DepthMap(values=np.stack(fields))


# ---------------------------------------------------------------------------
# Procedural scenes: textured planes at fixed disparities, composited back to
# front. Layers wrap horizontally, which keeps integer-disparity view
# synthesis exact and EPI statistics stationary.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """One fronto-parallel plane.

    disparity: horizontal shift in pixels per unit view step (positive moves
    content right as the view index grows).
    coverage: opaque fraction; 1.0 is a full plane, lower values punch the
    plane into smooth seeded blobs.
    """

    disparity: float
    texture_seed: int
    coverage: float = 1.0
    mask_seed: int | None = None

    def __post_init__(self):
        if not (0.0 < self.coverage <= 1.0):
            raise LightFieldError("layer coverage must be in (0, 1]")


@dataclass(frozen=True)
class SceneSpec:
    """Procedural scene: layers ordered back to front."""

    name: str
    view_count: int
    width: int
    height: int
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if self.view_count < 1:
            raise LightFieldError("view_count must be >= 1")
        if not self.layers:
            raise LightFieldError("scene needs at least one layer")
        if any(not math.isfinite(l.disparity) for l in self.layers):
            raise LightFieldError("layer disparity must be finite")


def wrap_shift(arr: np.ndarray, shift: float) -> np.ndarray:
    """Shift columns right by `shift` pixels with wrap-around, linear interp.

    Integer shifts reduce to an exact roll.
    """
    w = arr.shape[1]
    x = np.arange(w, dtype=np.float64)
    src = (x - shift) % w
    x0 = np.floor(src).astype(np.intp) % w
    x1 = (x0 + 1) % w
    frac = src - np.floor(src)
    if arr.ndim == 3:
        frac = frac[:, None]
    return arr[:, x0] * (1.0 - frac) + arr[:, x1] * frac


def _layer_texture(seed: int, height: int, width: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = rng.random((height, width, 3))
    tex = gaussian_filter(base, sigma=(1.5, 1.5, 0.0), mode="wrap")
    lo, hi = tex.min(), tex.max()
    return 0.08 + 0.84 * (tex - lo) / max(hi - lo, 1e-12)


def _layer_alpha(layer: LayerSpec, height: int, width: int) -> np.ndarray:
    if layer.coverage >= 1.0:
        return np.ones((height, width))
    seed = layer.mask_seed if layer.mask_seed is not None else layer.texture_seed + 1
    rng = np.random.default_rng(seed)
    field = gaussian_filter(rng.random((height, width)), sigma=4.0, mode="wrap")
    threshold = np.quantile(field, 1.0 - layer.coverage)
    return (field > threshold).astype(np.float64)


def generate_scene(spec: SceneSpec) -> tuple[LightField, DepthMap]:
    """Render the layered scene into a light field plus its true disparity.

    Returns (light field, depth map); the depth map holds, per view and
    pixel, the disparity of the front-most layer whose opacity exceeds 1/2.
    """
    v_count, h, w = spec.view_count, spec.height, spec.width
    center = (v_count - 1) / 2.0
    textures = [_layer_texture(l.texture_seed, h, w) for l in spec.layers]
    alphas = [_layer_alpha(l, h, w) for l in spec.layers]

    views = np.zeros((v_count, h, w, 3))
    depth = np.zeros((v_count, h, w))
    for omega in range(v_count):
        frame = np.zeros((h, w, 3))
        disp = np.zeros((h, w))
        for layer, tex, alpha in zip(spec.layers, textures, alphas):
            offset = layer.disparity * (omega - center)
            tex_s = wrap_shift(tex, offset)
            a_s = wrap_shift(alpha[:, :, None], offset)[:, :, 0] if layer.coverage < 1.0 else alpha
            frame = tex_s * a_s[:, :, None] + frame * (1.0 - a_s[:, :, None])
            disp = np.where(a_s > 0.5, layer.disparity, disp)
        views[omega] = frame
        depth[omega] = disp

    manifest = Manifest(
        name=spec.name,
        angular_count=v_count,
        width=w,
        height=h,
        max_step_disparity=max(1.0, max(abs(l.disparity) for l in spec.layers)),
        source="synthetic",
        depth_available=True,
    )
    return LightField(views=np.clip(views, 0.0, 1.0), manifest=manifest), DepthMap(values=depth)


def subsample_angular(lf: LightField, k: int) -> LightField:
    """Keep every k-th view starting at 0, always keeping the last view.

    The manifest of the result records the surviving views' normalized
    positions so reconstruction can honor the shorter final gap.
    """
    if k < 1:
        raise LightFieldError("subsampling step k must be >= 1")
    v = lf.view_count
    if v == 1 or k == 1:
        return lf
    if k >= v:
        raise LightFieldError(f"k={k} leaves fewer than 2 of {v} views")
    indices = list(range(0, v, k))
    if indices[-1] != v - 1:
        indices.append(v - 1)
    old_pos = lf.manifest.positions()
    new_pos = tuple(float(old_pos[i]) for i in indices)
    manifest = replace(
        lf.manifest, angular_count=len(indices), view_positions=new_pos
    )
    return LightField(views=lf.views[indices], manifest=manifest)
