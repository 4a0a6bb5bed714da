"""Command-line pipeline for the toolkit.

Subcommands chain into the usual workflow::

    generate -> distort -> measure -> scale -> evaluate

plus ``serve`` for running a pairwise-comparison study over HTTP.  Every
command accepts ``--config FILE`` (JSON object whose keys mirror the long
option names); explicit flags win over config values.  Commands are
deterministic given identical inputs and seeds, validate their inputs before
writing anything, and exit nonzero with a single ``error: ...`` line on
stderr when misconfigured.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

from .distort import KINDS, DistortionError, DistortionSpec, apply
from .evaluation import (
    EvaluationError,
    assemble_points,
    cross_validate,
    make_folds,
    sparse_reference_study,
    write_goodness_csv,
    write_sparse_csv,
    write_summary_json,
)
from .figures import plot_goodness_bars, plot_jod_curves, plot_sparse_bars
from .lightfield import (
    LayerSpec,
    LightFieldError,
    SceneSpec,
    generate_scene,
    load_depth_map,
    load_light_field,
    save_light_field,
    MANIFEST_NAME,
)
from .metrics import (
    METRIC_IDS,
    MeasurementRow,
    MetricInputError,
    read_metric_csv,
    run_battery,
    write_metric_csv,
)
from .scaling import (
    ScalingError,
    bootstrap_ci,
    read_comparison_csv,
    read_jod_csv,
    scale_jod,
    write_jod_csv,
)
from .server import ProtocolError, StudyDataset, StudyServer, export_comparisons, make_http_server
from .tree import TreeError, load_condition, read_index, build_condition_tree

__all__ = ["main", "CliError", "PROFILES", "profile_scene_specs"]


class CliError(Exception):
    """Configuration problem reported as a one-line error, exit code 2."""


@dataclass(frozen=True)
class Profile:
    scene_count: int
    view_count: int
    width: int
    height: int
    levels: tuple[int, ...]
    front_disparity: float


# "desk" keeps the subsampling step at <= 8 views so the whole pipeline runs
# in minutes; "full" runs the entire six-level ladder, which needs 27 views,
# and trades spatial resolution to stay tractable.
PROFILES = {
    "desk": Profile(14, 21, 96, 64, (1, 2, 3), 1.4),
    "full": Profile(14, 27, 48, 32, (1, 2, 3, 4, 5, 6), 0.5),
}

DEFAULT_KINDS = ("NN", "LINEAR", "OPT", "DQ")


def profile_scene_specs(
    profile: str, scene_count: int | None = None, seed: int = 0
) -> list[SceneSpec]:
    """Deterministic two-layer scene family for a named profile."""
    try:
        prof = PROFILES[profile]
    except KeyError:
        raise CliError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    n = prof.scene_count if scene_count is None else int(scene_count)
    if n < 1:
        raise CliError("scene count must be >= 1")
    specs = []
    for i in range(n):
        t = i / max(n - 1, 1)
        back = LayerSpec(
            disparity=round(0.1 + 0.3 * t, 3),
            texture_seed=seed + 31 * i,
        )
        front = LayerSpec(
            disparity=round(prof.front_disparity * (0.6 + 0.4 * t), 3),
            texture_seed=seed + 31 * i + 7,
            coverage=0.45,
            mask_seed=seed + 31 * i + 13,
        )
        specs.append(
            SceneSpec(f"scene{i:02d}", prof.view_count, prof.width, prof.height, (back, front))
        )
    return specs


# ------------------------------------------------------------------- helpers


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise CliError("config must be a JSON object")
    return cfg


def _opt(args: argparse.Namespace, cfg: dict, name: str, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _req(value, flag: str):
    if value is None:
        raise CliError(f"missing required option {flag}")
    return value


def _as_str_list(value) -> list[str]:
    if isinstance(value, str):
        return [s.strip() for s in value.split(",") if s.strip()]
    return [str(s) for s in value]


def _as_int_list(value) -> list[int]:
    try:
        return [int(s) for s in _as_str_list(value)]
    except ValueError:
        raise CliError(f"expected comma-separated integers, got {value!r}")


def _scene_specs_from_config(cfg: dict) -> list[SceneSpec]:
    scenes = cfg.get("scenes")
    if not isinstance(scenes, list) or not scenes:
        raise CliError("config must contain a non-empty 'scenes' list")
    specs = []
    for raw in scenes:
        try:
            layers = tuple(LayerSpec(**layer) for layer in raw["layers"])
            specs.append(
                SceneSpec(
                    name=raw["name"],
                    view_count=int(raw["view_count"]),
                    width=int(raw["width"]),
                    height=int(raw["height"]),
                    layers=layers,
                )
            )
        except (KeyError, TypeError) as exc:
            raise CliError(f"bad scene entry {raw.get('name', '?')!r}: {exc}")
    return specs


def _collect_scene_dirs(root: Path, names: list[str] | None) -> dict[str, Path]:
    if not root.is_dir():
        raise CliError(f"scene root is not a directory: {root}")
    found = {
        p.name: p for p in sorted(root.iterdir()) if (p / MANIFEST_NAME).is_file()
    }
    if names:
        missing = [n for n in names if n not in found]
        if missing:
            raise CliError(f"scenes not found under {root}: {missing}")
        found = {n: found[n] for n in names}
    if not found:
        raise CliError(f"no scene directories under {root}")
    return found


def _group_index(entries):
    by_scene: dict[str, dict[str, object]] = {}
    for e in entries:
        by_scene.setdefault(e.scene, {})[e.condition_id] = e
    return by_scene


# ------------------------------------------------------------------ commands


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    out = Path(_req(_opt(args, cfg, "out"), "--out"))
    seed = int(_opt(args, cfg, "seed", 0))
    profile = _opt(args, cfg, "profile")
    if profile:
        specs = profile_scene_specs(profile, _opt(args, cfg, "scene_count"), seed)
    else:
        specs = _scene_specs_from_config(cfg)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise CliError("duplicate scene names in configuration")
    # all specs validated above; per-scene writes go through a temp dir so an
    # interrupted run never leaves a half-written scene behind
    out.mkdir(parents=True, exist_ok=True)
    for spec in specs:
        lf, depth = generate_scene(spec)
        tmp = out / f".tmp-{spec.name}"
        final = out / spec.name
        if tmp.exists():
            shutil.rmtree(tmp)
        try:
            save_light_field(lf, tmp, depth)
            if final.exists():
                shutil.rmtree(final)
            tmp.replace(final)
        finally:
            if tmp.exists():
                shutil.rmtree(tmp)
    print(f"generated {len(specs)} scenes -> {out}")
    return 0


def cmd_distort(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    scenes_root = Path(_req(_opt(args, cfg, "scenes"), "--scenes"))
    out = Path(_req(_opt(args, cfg, "out"), "--out"))
    profile = _opt(args, cfg, "profile", "desk")
    if profile not in PROFILES:
        raise CliError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    kinds = tuple(_as_str_list(_opt(args, cfg, "kinds", list(DEFAULT_KINDS))))
    unknown = [k for k in kinds if k not in KINDS]
    if unknown:
        raise CliError(f"unknown distortion kinds {unknown}; choose from {list(KINDS)}")
    levels = tuple(_as_int_list(_opt(args, cfg, "levels", list(PROFILES[profile].levels))))
    names = _opt(args, cfg, "scene_names")
    names = _as_str_list(names) if names is not None else None

    dirs = _collect_scene_dirs(scenes_root, names)
    scenes = {}
    for name, path in dirs.items():
        lf = load_light_field(path)
        depth = load_depth_map(path) if lf.manifest.depth_available else None
        scenes[name] = (lf, depth)

    entries, skipped = build_condition_tree(out, scenes, kinds=kinds, levels=levels)
    for note in skipped:
        print(f"warning: skipped {note}", file=sys.stderr)
    print(f"wrote {len(entries)} conditions ({len(skipped)} skipped) -> {out}")
    return 0


def cmd_measure(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    root = Path(_req(_opt(args, cfg, "tree"), "--tree"))
    out_csv = Path(_req(_opt(args, cfg, "out"), "--out"))
    metric_ids = tuple(_as_str_list(_opt(args, cfg, "metrics", list(METRIC_IDS))))
    external = _opt(args, cfg, "external")

    entries, _meta = read_index(root)
    by_scene = _group_index(entries)
    rows: list[MeasurementRow] = []
    for scene in sorted(by_scene):
        conditions = by_scene[scene]
        if "ref" not in conditions:
            raise CliError(f"scene {scene!r} has no reference condition")
        ref_lf = load_condition(root, conditions["ref"])
        for cid in sorted(conditions):
            if cid == "ref":
                continue
            entry = conditions[cid]
            test_lf = load_condition(root, entry)
            for score in run_battery(ref_lf, test_lf, metric_ids=metric_ids):
                rows.append(
                    MeasurementRow(
                        scene=scene,
                        distortion_kind=entry.kind,
                        level=entry.level,
                        metric_id=score.metric_id,
                        pooled=score.pooled,
                        unbounded=score.unbounded,
                    )
                )
    if external:
        rows.extend(read_metric_csv(external))
    rows.sort(key=lambda r: (r.scene, r.distortion_kind, r.level, r.metric_id))
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    write_metric_csv(out_csv, rows)
    print(f"measured {len(rows)} rows -> {out_csv}")
    return 0


def _collect_log_files(paths: list[str]) -> list[Path]:
    files: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files.extend(sorted(p.glob("session-*.jsonl")))
        elif p.is_file():
            files.append(p)
        else:
            raise CliError(f"log path does not exist: {p}")
    return files


def cmd_scale(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    out_csv = Path(_req(_opt(args, cfg, "out"), "--out"))
    b = int(_opt(args, cfg, "bootstrap", 500))
    seed = int(_opt(args, cfg, "seed", 0))
    logs = _opt(args, cfg, "logs")
    responses = _opt(args, cfg, "responses")
    if (logs is None) == (responses is None):
        raise CliError("pass exactly one of --logs or --responses")

    if logs is not None:
        files = _collect_log_files(_as_str_list(logs))
        if not files:
            raise CliError("no session logs found")
        matrices, skipped_lines = export_comparisons(files)
        if skipped_lines:
            print(f"warning: skipped {skipped_lines} corrupt log lines", file=sys.stderr)
    else:
        matrices = read_comparison_csv(responses)
    if not matrices:
        raise CliError("no responses to scale")

    scales: dict[str, JodScale] = {}
    for scene in sorted(matrices):
        cm = matrices[scene]
        cm.ensure_connected()
        scales[scene] = bootstrap_ci(cm, b=b, seed=seed) if b > 0 else scale_jod(cm)

    out_csv.parent.mkdir(parents=True, exist_ok=True)
    write_jod_csv(out_csv, scales)
    fig = out_csv.parent / "jod_curves.png"
    plot_jod_curves(scales, fig)
    print(f"scaled {len(scales)} scenes -> {out_csv} (+ {fig.name})")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    measurements = _req(_opt(args, cfg, "measurements"), "--measurements")
    jod_path = _req(_opt(args, cfg, "jod"), "--jod")
    out_dir = Path(_req(_opt(args, cfg, "out_dir"), "--out-dir"))
    seed = int(_opt(args, cfg, "seed", 0))
    loss = _opt(args, cfg, "loss", "mse")
    metric_filter = _opt(args, cfg, "metrics")

    rows = read_metric_csv(measurements)
    if metric_filter is not None:
        wanted = set(_as_str_list(metric_filter))
        rows = [r for r in rows if r.metric_id in wanted]
    if not rows:
        raise CliError(f"no usable measurement rows in {measurements}")
    scales = read_jod_csv(jod_path)
    points_by_metric = assemble_points(rows, scales)
    if not points_by_metric:
        raise CliError("no finite measurement rows joined against the JOD table")

    scene_sets = [set(per_scene) for per_scene in points_by_metric.values()]
    scenes = sorted(set.intersection(*scene_sets))
    if not scenes:
        raise CliError("metrics share no scenes after the join")
    folds = make_folds(scenes, seed=seed)
    cv_by_metric = {
        mid: cross_validate(points_by_metric[mid], folds, loss=loss)
        for mid in sorted(points_by_metric)
    }

    # compute the optional degraded-reference study before writing anything so
    # a bad sparse tree never leaves a half-filled report directory
    sparse_tree = _opt(args, cfg, "sparse_ref")
    study = None
    if sparse_tree:
        study = _run_sparse_study(args, cfg, Path(sparse_tree), scales, seed, loss)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_goodness_csv(out_dir / "goodness.csv", cv_by_metric)
    write_summary_json(
        out_dir / "summary.json",
        cv_by_metric,
        extra={"seed": seed, "loss": loss, "folds": [list(f) for f in folds]},
    )
    plot_goodness_bars(cv_by_metric, out_dir / "goodness_bars.png")
    outputs = ["goodness.csv", "summary.json", "goodness_bars.png"]
    if study is not None:
        write_sparse_csv(out_dir / "sparse_study.csv", study)
        plot_sparse_bars(study, out_dir / "sparse_bars.png")
        outputs += ["sparse_study.csv", "sparse_bars.png"]

    print(f"evaluated {len(cv_by_metric)} metrics -> {out_dir} ({', '.join(outputs)})")
    return 0


def _run_sparse_study(args, cfg, tree_root: Path, scales, seed: int, loss: str):
    sparse_level = int(_opt(args, cfg, "sparse_level", 2))
    metric_ids = tuple(
        _as_str_list(_opt(args, cfg, "sparse_metrics", ["PSNR", "SSIM2D"]))
    )
    entries, _meta = read_index(tree_root)
    by_scene = _group_index(entries)
    dense: dict[str, object] = {}
    sparse: dict[str, object] = {}
    approx: dict[str, object] = {}
    tests: dict[str, dict[str, object]] = {}
    for scene in sorted(by_scene):
        conditions = by_scene[scene]
        if "ref" not in conditions:
            raise CliError(f"scene {scene!r} has no reference condition")
        ref_lf = load_condition(tree_root, conditions["ref"])
        dense[scene] = ref_lf
        sparse[scene] = apply(DistortionSpec("NN", sparse_level), ref_lf)
        approx[scene] = apply(DistortionSpec("OPT", sparse_level), ref_lf)
        above = {
            cid: load_condition(tree_root, e)
            for cid, e in conditions.items()
            if cid != "ref" and e.level > sparse_level
        }
        if not above:
            raise CliError(
                f"scene {scene!r} has no conditions above severity level {sparse_level}"
            )
        tests[scene] = above
    return sparse_reference_study(
        {"dense": dense, "sparse": sparse, "approx": approx},
        tests,
        scales,
        metric_ids=metric_ids,
        seed=seed,
        loss=loss,
        sparse_level=sparse_level,
    )


def cmd_serve(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    root = Path(_req(_opt(args, cfg, "tree"), "--tree"))
    logs = Path(_req(_opt(args, cfg, "logs"), "--logs"))
    host = _opt(args, cfg, "host", "127.0.0.1")
    port = int(_opt(args, cfg, "port", 8321))
    seed = int(_opt(args, cfg, "seed", 0))
    static = _opt(args, cfg, "static")

    dataset = StudyDataset(root)
    study = StudyServer(
        dataset, logs, seed=seed, static_dir=Path(static) if static else None
    )
    try:
        httpd = make_http_server(study, host=host, port=port)
    except OSError as exc:
        raise CliError(f"cannot bind {host}:{port}: {exc.strerror or exc}")
    actual_port = httpd.server_address[1]
    print(f"serving study on http://{host}:{actual_port} (logs -> {logs})", flush=True)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfqa",
        description="Quality assessment pipeline for dense horizontal-parallax light fields.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file with defaults for this command")
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "synthesize procedural scenes to disk")
    p.add_argument("--out", help="output directory for scene folders")
    p.add_argument("--profile", choices=sorted(PROFILES), help="built-in scene family")
    p.add_argument("--scene-count", dest="scene_count", type=int, help="override profile scene count")
    p.add_argument("--seed", type=int, help="base texture seed (default 0)")

    p = add("distort", cmd_distort, "apply the distortion ladder to scenes")
    p.add_argument("--scenes", help="directory of generated scenes")
    p.add_argument("--out", help="output condition tree root")
    p.add_argument("--kinds", help="comma list (default NN,LINEAR,OPT,DQ)")
    p.add_argument("--levels", help="comma list of severity levels")
    p.add_argument("--profile", choices=sorted(PROFILES), help="level ladder preset (default desk)")
    p.add_argument("--scene-names", dest="scene_names", help="comma list restricting scenes")

    p = add("measure", cmd_measure, "run the metric battery over a condition tree")
    p.add_argument("--tree", help="condition tree root")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--metrics", help="comma list of metric ids (default all)")
    p.add_argument("--external", help="CSV of externally computed rows to merge")

    p = add("scale", cmd_scale, "fit JOD scores from pairwise responses")
    p.add_argument("--logs", nargs="+", help="session log files or directories")
    p.add_argument("--responses", help="comparison CSV instead of logs")
    p.add_argument("--out", help="output JOD CSV path")
    p.add_argument("--bootstrap", type=int, help="bootstrap replicates (default 500, 0 disables)")
    p.add_argument("--seed", type=int, help="bootstrap seed (default 0)")

    p = add("evaluate", cmd_evaluate, "cross-validate metrics against JOD scores")
    p.add_argument("--measurements", help="metric CSV from `measure`")
    p.add_argument("--jod", help="JOD CSV from `scale`")
    p.add_argument("--out-dir", dest="out_dir", help="report output directory")
    p.add_argument("--metrics", help="comma list restricting metric ids")
    p.add_argument("--seed", type=int, help="fold shuffle seed (default 0)")
    p.add_argument("--loss", choices=("mse", "mae"), help="fit loss (default mse)")
    p.add_argument("--sparse-ref", dest="sparse_ref", help="condition tree for the degraded-reference study")
    p.add_argument("--sparse-level", dest="sparse_level", type=int, help="reference severity level (default 2)")
    p.add_argument("--sparse-metrics", dest="sparse_metrics", help="metrics for the degraded-reference study")

    p = add("serve", cmd_serve, "serve the pairwise study over HTTP")
    p.add_argument("--tree", help="condition tree root")
    p.add_argument("--logs", help="directory for session logs")
    p.add_argument("--host", help="bind host (default 127.0.0.1)")
    p.add_argument("--port", type=int, help="bind port (default 8321)")
    p.add_argument("--seed", type=int, help="session scheduling seed (default 0)")
    p.add_argument("--static", help="directory of static frontend files")

    return parser


_DOMAIN_ERRORS = (
    LightFieldError,
    DistortionError,
    MetricInputError,
    ScalingError,
    EvaluationError,
    TreeError,
    ProtocolError,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _DOMAIN_ERRORS as exc:
        print(f"error: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
