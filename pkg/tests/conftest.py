import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lfqa.lightfield import LayerSpec, LightField, Manifest, SceneSpec, generate_scene


def make_manifest(name="test", v=5, w=32, h=16, maxd=1.0, **kw):
    return Manifest(
        name=name, angular_count=v, width=w, height=h, max_step_disparity=maxd, **kw
    )


def make_lf(views: np.ndarray, name="test", maxd=1.0, **kw) -> LightField:
    v, h, w = views.shape[:3]
    return LightField(views=views, manifest=make_manifest(name, v, w, h, maxd, **kw))


def noise_lf(seed=0, v=5, h=16, w=32, name="noise") -> LightField:
    rng = np.random.default_rng(seed)
    return make_lf(rng.random((v, h, w, 3)), name=name)


def make_condition_tree(
    root,
    n_scenes=2,
    view_count=9,
    width=24,
    height=16,
    kinds=("NN", "LINEAR"),
    levels=(1, 2),
    seed0=50,
    front_disparity=1.0,
):
    """Generate scenes and materialize a small distorted-condition tree."""
    from lfqa.tree import build_condition_tree

    scenes = {}
    for i in range(n_scenes):
        spec = SceneSpec(
            name=f"scene{i}",
            view_count=view_count,
            width=width,
            height=height,
            layers=(
                LayerSpec(disparity=0.0, texture_seed=seed0 + i, coverage=1.0),
                LayerSpec(
                    disparity=front_disparity,
                    texture_seed=seed0 + 100 + i,
                    coverage=0.4,
                    mask_seed=seed0 + 200 + i,
                ),
            ),
        )
        scenes[spec.name] = generate_scene(spec)
    entries, skipped = build_condition_tree(root, scenes, kinds=kinds, levels=levels)
    return entries, skipped


@pytest.fixture
def flat_scene():
    """Single full plane at disparity 1, small and fast."""
    spec = SceneSpec(
        name="flat", view_count=9, width=48, height=24,
        layers=(LayerSpec(disparity=1.0, texture_seed=11),),
    )
    return generate_scene(spec)


@pytest.fixture
def two_layer_scene():
    """Opaque background at d=0, blobby foreground at d=2."""
    spec = SceneSpec(
        name="twolayer", view_count=9, width=64, height=32,
        layers=(
            LayerSpec(disparity=0.0, texture_seed=3),
            LayerSpec(disparity=2.0, texture_seed=7, coverage=0.4, mask_seed=13),
        ),
    )
    return generate_scene(spec)
