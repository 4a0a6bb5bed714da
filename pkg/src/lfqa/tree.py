"""Layout of a distorted-condition dataset on disk.

A condition tree holds, per scene, the undistorted reference plus one
directory per (distortion kind, severity level), each saved with the usual
manifest + numbered view images.  ``index.json`` at the root enumerates every
materialized condition so downstream stages (measurement, study server) never
guess at paths.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .distort import KINDS, DistortionSpec, DistortionError, apply
from .lightfield import (
    DepthMap,
    LightField,
    LightFieldError,
    load_light_field,
    load_manifest,
    save_light_field,
    MANIFEST_NAME,
)

__all__ = [
    "INDEX_NAME",
    "REF_CONDITION",
    "ConditionEntry",
    "TreeError",
    "condition_id",
    "write_index",
    "read_index",
    "build_condition_tree",
    "load_condition",
    "view_counts",
]

INDEX_NAME = "index.json"
REF_CONDITION = "ref"


class TreeError(ValueError):
    """Malformed or inconsistent condition tree."""


def condition_id(kind: str, level: int) -> str:
    if level == 0:
        return REF_CONDITION
    return f"{kind}_L{level}"


@dataclass(frozen=True)
class ConditionEntry:
    """One materialized light field inside the tree."""

    scene: str
    condition_id: str
    kind: str  # "REF" for the reference
    level: int  # 0 for the reference
    path: str  # directory relative to the tree root

    def absolute(self, root: str | Path) -> Path:
        return Path(root) / self.path


def write_index(
    root: str | Path, entries: Sequence[ConditionEntry], meta: dict | None = None
) -> None:
    payload = {
        "version": 1,
        "conditions": [asdict(e) for e in entries],
        "meta": meta or {},
    }
    with open(Path(root) / INDEX_NAME, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_index(root: str | Path) -> tuple[list[ConditionEntry], dict]:
    path = Path(root) / INDEX_NAME
    if not path.exists():
        raise TreeError(f"no {INDEX_NAME} under {root}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise TreeError(f"corrupt {INDEX_NAME}: {e}") from None
    if payload.get("version") != 1:
        raise TreeError(f"unsupported index version {payload.get('version')!r}")
    entries = []
    for raw in payload.get("conditions", []):
        try:
            entry = ConditionEntry(**raw)
        except TypeError as e:
            raise TreeError(f"bad index entry {raw!r}: {e}") from None
        if not (Path(root) / entry.path / MANIFEST_NAME).exists():
            raise TreeError(f"index entry {entry.condition_id!r} of scene "
                            f"{entry.scene!r} points at a missing directory")
        entries.append(entry)
    return entries, payload.get("meta", {})


def load_condition(root: str | Path, entry: ConditionEntry) -> LightField:
    return load_light_field(entry.absolute(root))


def build_condition_tree(
    root: str | Path,
    scenes: dict[str, tuple[LightField, DepthMap | None]],
    kinds: Sequence[str] = ("NN", "LINEAR", "OPT", "DQ"),
    levels: Sequence[int] = (1, 2, 3, 4, 5, 6),
) -> tuple[list[ConditionEntry], list[str]]:
    """Materialize reference + distorted conditions and write the index.

    Returns the index entries and a list of human-readable skip notes
    (conditions that could not be produced, e.g. DQ without a depth map).
    """
    root = Path(root)
    unknown = [k for k in kinds if k not in KINDS]
    if unknown:
        raise TreeError(f"unknown distortion kinds {unknown}")
    entries: list[ConditionEntry] = []
    skipped: list[str] = []
    for scene in sorted(scenes):
        lf, depth = scenes[scene]
        ref_dir = root / scene / REF_CONDITION
        ref_dir.mkdir(parents=True, exist_ok=True)
        save_light_field(lf, ref_dir, depth)
        entries.append(
            ConditionEntry(scene, REF_CONDITION, "REF", 0, f"{scene}/{REF_CONDITION}")
        )
        for kind in kinds:
            for level in levels:
                cid = condition_id(kind, level)
                try:
                    distorted = apply(DistortionSpec(kind, level), lf, depth)
                except (DistortionError, LightFieldError) as exc:
                    skipped.append(f"{scene}/{cid}: {exc}")
                    continue
                cond_dir = root / scene / kind / f"level_{level}"
                cond_dir.mkdir(parents=True, exist_ok=True)
                save_light_field(distorted, cond_dir)
                entries.append(
                    ConditionEntry(
                        scene, cid, kind, level, f"{scene}/{kind}/level_{level}"
                    )
                )
    write_index(root, entries, meta={"skipped": skipped})
    return entries, skipped


def view_counts(root: str | Path, entries: Sequence[ConditionEntry]) -> dict[str, int]:
    """Angular view count per scene, validated consistent across conditions."""
    counts: dict[str, int] = {}
    for entry in entries:
        manifest = load_manifest(entry.absolute(root) / MANIFEST_NAME)
        v = manifest.angular_count
        if counts.setdefault(entry.scene, v) != v:
            raise TreeError(
                f"scene {entry.scene!r} mixes view counts "
                f"({counts[entry.scene]} vs {v} in {entry.condition_id!r})"
            )
    return counts
