"""Full-reference quality assessment for dense horizontal-parallax light fields."""

__version__ = "0.1.0"

from .lightfield import (
    DepthMap,
    Epi,
    LayerSpec,
    LightField,
    LightFieldError,
    Manifest,
    SceneSpec,
    extract_epi,
    generate_scene,
    load_light_field,
    load_depth_map,
    save_light_field,
    subsample_angular,
)

__all__ = [
    "DepthMap",
    "Epi",
    "LayerSpec",
    "LightField",
    "LightFieldError",
    "Manifest",
    "SceneSpec",
    "extract_epi",
    "generate_scene",
    "load_light_field",
    "load_depth_map",
    "save_light_field",
    "subsample_angular",
    "__version__",
]
