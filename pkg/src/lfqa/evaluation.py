"""Agreement between metric outputs and subjective JOD scores.

A five-parameter logistic map

    q(o) = a1 * (1/2 - 1/(1 + exp(a2 (o - a3)))) + a4 o + a5

is fitted per metric, then goodness is quantified with reduced chi-square
(residuals weighted by inverse JOD variance), Pearson correlation of the
fitted predictions, and Spearman rank correlation of the raw outputs.
Everything runs under scene-wise cross-validation; the sparse-reference
study repeats the pipeline with degraded references and bootstrap-tests the
drop in correlation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import rankdata

from .lightfield import LightField
from .metrics import MeasurementRow, MetricConfig, run_battery
from .scaling import JodScale

__all__ = [
    "VAR_FLOOR",
    "EvaluationError",
    "FitParams",
    "GoodnessReport",
    "CrossValidation",
    "SparseStudyRow",
    "SparseStudy",
    "logistic",
    "logistic_is_monotone",
    "multistart_params",
    "fit_loss",
    "fit_logistic",
    "chi2_red",
    "correlations",
    "make_folds",
    "cross_validate",
    "effective_variance",
    "assemble_points",
    "paired_bootstrap_p",
    "sparse_reference_study",
    "write_goodness_csv",
    "write_summary_json",
    "write_sparse_csv",
]

# scores scaled from unanimous pairs carry zero replicate variance; the floor
# keeps chi-square weights finite
VAR_FLOOR = 1e-4

_N_PARAMS = 5


class EvaluationError(ValueError):
    """Raised for unusable evaluation inputs."""


@dataclass(frozen=True)
class FitParams:
    a1: float
    a2: float
    a3: float
    a4: float
    a5: float

    def __post_init__(self) -> None:
        values = [self.a1, self.a2, self.a3, self.a4, self.a5]
        if not all(math.isfinite(v) for v in values):
            raise EvaluationError(f"fit parameters must be finite, got {values}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3, self.a4, self.a5])

    @staticmethod
    def from_array(x: Sequence[float]) -> "FitParams":
        return FitParams(float(x[0]), float(x[1]), float(x[2]), float(x[3]), float(x[4]))


def logistic(o, p: FitParams):
    """Five-parameter logistic map from metric output to predicted JOD.

    The sigmoid bracket saturates to +1/2 above the midpoint and -1/2 below
    it as a2 grows; expit keeps the tails finite for any magnitude of a2.
    """
    o = np.asarray(o, dtype=float)
    bracket = 0.5 - expit(-p.a2 * (o - p.a3))
    out = p.a1 * bracket + p.a4 * o + p.a5
    return float(out) if out.ndim == 0 else out


def logistic_is_monotone(p: FitParams) -> bool:
    """True when q(o) cannot change direction.

    q'(o) = a1 a2 s(1-s) + a4 with s(1-s) in (0, 1/4], so q' sweeps the
    interval between a4 and a4 + a1 a2 / 4; monotonicity is exactly the two
    endpoints not straddling zero.
    """
    return p.a4 * (p.a4 + p.a1 * p.a2 / 4.0) >= 0.0


Point = tuple[float, float, float]  # (metric output, jod, jod variance)


def _split_points(points: Sequence[Point]):
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise EvaluationError("points must be (output, jod, var) triples")
    if not np.isfinite(arr[:, :2]).all():
        raise EvaluationError("points must be finite")
    return arr[:, 0], arr[:, 1], arr[:, 2]


def _theil_sen_slope(o: np.ndarray, jod: np.ndarray) -> float:
    do = o[:, None] - o[None, :]
    dj = jod[:, None] - jod[None, :]
    mask = np.triu(np.abs(do) > 1e-12, k=1)
    if not mask.any():
        return 0.0
    return float(np.median(dj[mask] / do[mask]))


def multistart_params(o: np.ndarray, jod: np.ndarray) -> list[FitParams]:
    """The eight deterministic simplex starts used by fit_logistic."""
    o = np.asarray(o, dtype=float)
    jod = np.asarray(jod, dtype=float)
    sigma_o = float(o.std())
    if sigma_o <= 0:
        raise EvaluationError("metric output constant")
    a3 = float(np.median(o))
    slope = _theil_sen_slope(o, jod)
    starts = []
    for a1 in (0.0, float(np.ptp(jod))):
        for a2 in (1.0 / sigma_o, -1.0 / sigma_o):
            for a4 in (slope, 0.0):
                a5 = float(np.median(jod - a4 * o))
                starts.append(FitParams(a1, a2, a3, a4, a5))
    return starts


def fit_loss(points: Sequence[Point], p: FitParams, loss: str = "mse") -> float:
    """Weighted squared-residual loss used by the fit."""
    o, jod, var = _split_points(points)
    residual = logistic(o, p) - jod
    if loss == "chi2":
        if (var <= 0).any() or not np.isfinite(var).all():
            raise EvaluationError("chi2 loss needs positive finite variances")
        return float((residual ** 2 / var).sum())
    if loss == "mse":
        return float((residual ** 2).sum())
    raise EvaluationError(f"unknown loss {loss!r}")


def fit_logistic(points: Sequence[Point], loss: str = "mse") -> FitParams:
    """Least-weighted-squares logistic fit via multi-start simplex descent.

    Eight deterministic starts span flat/steep sigmoids and both slope signs;
    the winner is polished with a second simplex run.  The returned loss is
    never worse than the best start's initial loss.
    """
    o, jod, var = _split_points(points)
    if len(o) < _N_PARAMS + 1:
        raise EvaluationError(
            f"need at least {_N_PARAMS + 1} points to fit, got {len(o)}"
        )
    if loss == "chi2" and ((var <= 0).any() or not np.isfinite(var).all()):
        raise EvaluationError("chi2 loss needs positive finite variances")
    weights = 1.0 / var if loss == "chi2" else np.ones_like(o)

    def objective(x: np.ndarray) -> float:
        bracket = 0.5 - expit(-x[1] * (o - x[2]))
        residual = x[0] * bracket + x[3] * o + x[4] - jod
        return float((weights * residual ** 2).sum())

    options = {"maxiter": 4000, "xatol": 1e-10, "fatol": 1e-12, "adaptive": True}
    best_x = None
    best_value = np.inf
    for start in multistart_params(o, jod):
        result = minimize(
            objective, start.as_array(), method="Nelder-Mead", options=options
        )
        value = min(float(result.fun), objective(start.as_array()))
        x = result.x if result.fun <= value else start.as_array()
        if value < best_value:
            best_value = value
            best_x = x
    polished = minimize(objective, best_x, method="Nelder-Mead", options=options)
    if float(polished.fun) < best_value:
        best_x = polished.x
    return FitParams.from_array(best_x)


def chi2_red(points: Sequence[Point], p: FitParams) -> float:
    """Variance-weighted mean squared residual per degree of freedom."""
    o, jod, var = _split_points(points)
    n = len(o)
    if n <= _N_PARAMS:
        raise EvaluationError(
            f"reduced chi-square needs more than {_N_PARAMS} points, got {n}"
        )
    if (var <= 0).any() or not np.isfinite(var).all():
        raise EvaluationError("reduced chi-square needs positive finite variances")
    residual = logistic(o, p) - jod
    return float((residual ** 2 / var).sum() / (n - _N_PARAMS))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xd = x - x.mean()
    yd = y - y.mean()
    denom = math.sqrt(float((xd ** 2).sum()) * float((yd ** 2).sum()))
    if denom == 0.0:
        return float("nan")  # undefined for a constant series
    return float((xd * yd).sum() / denom)


def correlations(points: Sequence[Point], p: FitParams) -> tuple[float, float]:
    """(Pearson of fitted predictions vs JOD, Spearman of raw outputs vs JOD).

    Spearman deliberately ranks the raw metric outputs, making it exactly
    invariant to any strictly monotone transform of the metric.  Undefined
    correlations (zero variance) come back as NaN.
    """
    o, jod, _ = _split_points(points)
    if len(o) < 3:
        raise EvaluationError("correlations need at least 3 points")
    pearson = _pearson(np.asarray(logistic(o, p)), jod)
    spearman = _pearson(rankdata(o), rankdata(jod))
    return pearson, spearman


@dataclass(frozen=True)
class GoodnessReport:
    fold_id: int
    n_points: int
    chi2_red: float
    pearson: float
    spearman: float
    mse: float


@dataclass(frozen=True)
class CrossValidation:
    per_fold: tuple[GoodnessReport, ...]
    mean: dict[str, float]
    stderr: dict[str, float]


_SUMMARY_FIELDS = ("chi2_red", "pearson", "spearman", "mse")


def make_folds(scenes: Sequence[str], seed: int = 0, fold_size: int = 2) -> list[tuple[str, ...]]:
    """Seeded shuffle of the scenes chunked into test folds."""
    scenes = list(scenes)
    if len(set(scenes)) != len(scenes):
        raise EvaluationError("scene names must be unique")
    if fold_size < 1:
        raise EvaluationError("fold_size must be >= 1")
    order = np.random.default_rng(seed).permutation(len(scenes))
    shuffled = [scenes[i] for i in order]
    return [
        tuple(shuffled[i : i + fold_size]) for i in range(0, len(shuffled), fold_size)
    ]


def cross_validate(
    points_by_scene: dict[str, Sequence[Point]],
    folds: Sequence[Sequence[str]],
    loss: str = "mse",
) -> CrossValidation:
    """Fit on the training scenes of each fold, score the held-out scenes."""
    known = set(points_by_scene)
    seen: set[str] = set()
    for fold in folds:
        for scene in fold:
            if scene not in known:
                raise EvaluationError(f"fold references unknown scene {scene!r}")
            if scene in seen:
                raise EvaluationError(f"scene {scene!r} appears in more than one fold")
            seen.add(scene)
    if seen != known:
        missing = sorted(known - seen)
        raise EvaluationError(f"scenes missing from folds: {missing}")

    reports = []
    for fold_id, fold in enumerate(folds):
        train: list[Point] = []
        test: list[Point] = []
        for scene, pts in points_by_scene.items():
            (test if scene in fold else train).extend(pts)
        if not train:
            raise EvaluationError("cross-validation fold leaves no training scenes")
        params = fit_logistic(train, loss=loss)
        o, jod, var = _split_points(test)
        residual = np.asarray(logistic(o, params)) - jod
        mse = float((residual ** 2).mean())
        chi2 = (
            chi2_red(test, params)
            if len(o) > _N_PARAMS and (var > 0).all()
            else float("nan")
        )
        pearson, spearman = correlations(test, params)
        reports.append(
            GoodnessReport(fold_id, len(o), chi2, pearson, spearman, mse)
        )
    table = {
        name: np.array([getattr(r, name) for r in reports]) for name in _SUMMARY_FIELDS
    }
    mean = {name: float(vals.mean()) for name, vals in table.items()}
    stderr = {
        name: float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        for name, vals in table.items()
    }
    return CrossValidation(tuple(reports), mean, stderr)


# ------------------------------------------------------------------ pipelines

def effective_variance(scale: JodScale, index: int, floor: float = VAR_FLOOR) -> float:
    """Bootstrap replicate variance, falling back to the CI width, floored."""
    var = float(scale.var[index])
    if var <= 0:
        width = float(scale.ci_high[index] - scale.ci_low[index])
        if width > 0:
            var = (width / 3.92) ** 2  # 95% interval of a normal
    return max(var, floor)


def assemble_points(
    rows: Sequence[MeasurementRow], jod_by_scene: dict[str, JodScale]
) -> dict[str, dict[str, list[Point]]]:
    """Join measurements with JOD scales: metric -> scene -> points.

    Rows flagged unbounded (typically the reference measured against itself)
    are excluded; every remaining row must resolve to a scaled condition.
    """
    out: dict[str, dict[str, list[Point]]] = {}
    for row in rows:
        if row.unbounded:
            continue
        if row.scene not in jod_by_scene:
            raise EvaluationError(f"no JOD scale for scene {row.scene!r}")
        scale = jod_by_scene[row.scene]
        cid = row.condition_id
        if cid not in scale.condition_ids:
            raise EvaluationError(
                f"condition {cid!r} of scene {row.scene!r} has no JOD score"
            )
        k = scale.condition_ids.index(cid)
        point = (row.pooled, float(scale.jod[k]), effective_variance(scale, k))
        out.setdefault(row.metric_id, {}).setdefault(row.scene, []).append(point)
    return out


def paired_bootstrap_p(
    better: Sequence[float], worse: Sequence[float], b: int = 2000, seed: int = 0
) -> float:
    """One-tailed bootstrap p-value for mean(better - worse) > 0."""
    diffs = np.asarray(better, dtype=float) - np.asarray(worse, dtype=float)
    if diffs.size == 0:
        raise EvaluationError("bootstrap needs at least one paired value")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, diffs.size, size=(b, diffs.size))
    means = diffs[idx].mean(axis=1)
    return float((means <= 0.0).mean())


@dataclass(frozen=True)
class SparseStudyRow:
    metric_id: str
    mode: str
    fold_pearson: tuple[float, ...]
    mean_pearson: float
    se_pearson: float
    mean_chi2_red: float
    p_vs_dense: float | None
    worse_than_dense: bool | None
    note: str = ""


@dataclass(frozen=True)
class SparseStudy:
    rows: tuple[SparseStudyRow, ...]
    measurements: dict


def _condition_level(condition_id: str) -> int:
    if condition_id == "ref":
        return 0
    _, _, tail = condition_id.rpartition("_L")
    try:
        return int(tail)
    except ValueError:
        raise EvaluationError(f"cannot parse severity level from {condition_id!r}")


def sparse_reference_study(
    references: dict[str, dict[str, LightField]],
    tests: dict[str, dict[str, LightField]],
    jod_by_scene: dict[str, JodScale],
    metric_ids: Sequence[str] = ("PSNR", "SSIM2D"),
    folds: Sequence[Sequence[str]] | None = None,
    seed: int = 0,
    loss: str = "mse",
    sparse_level: int = 2,
    cfg: MetricConfig | None = None,
    bootstrap_b: int = 2000,
) -> SparseStudy:
    """Side-by-side goodness table for dense vs degraded references.

    ``references`` maps mode name ('dense' plus any degraded variants) to a
    per-scene reference light field; every test condition must sit strictly
    above ``sparse_level`` so the degraded references never score themselves.
    Each mode runs the full battery + cross-validation; degraded modes get a
    one-tailed bootstrap p-value for the drop in mean fold Pearson vs dense.
    """
    if "dense" not in references:
        raise EvaluationError("references must include a 'dense' mode")
    scenes = sorted(tests)
    for mode, refs in references.items():
        missing = [s for s in scenes if s not in refs]
        if missing:
            raise EvaluationError(f"mode {mode!r} lacks references for {missing}")
    for scene, conds in tests.items():
        for cid in conds:
            if _condition_level(cid) <= sparse_level:
                raise EvaluationError(
                    f"test condition {cid!r} is not above severity level {sparse_level}"
                )
    if folds is None:
        folds = make_folds(scenes, seed=seed)

    measurements: dict[str, dict[str, dict[str, dict[str, float]]]] = {}
    cv_results: dict[tuple[str, str], CrossValidation | None] = {}
    notes: dict[tuple[str, str], str] = {}
    modes = ["dense"] + sorted(m for m in references if m != "dense")
    for mode in modes:
        rows: list[MeasurementRow] = []
        table: dict[str, dict[str, dict[str, float]]] = {}
        for scene in scenes:
            ref = references[mode][scene]
            for cid, lf in sorted(tests[scene].items()):
                kind, _, level = cid.rpartition("_L")
                for score in run_battery(ref, lf, cfg, tuple(metric_ids)):
                    rows.append(
                        MeasurementRow(
                            scene, kind, int(level), score.metric_id,
                            score.pooled, score.unbounded,
                        )
                    )
                    table.setdefault(score.metric_id, {}).setdefault(scene, {})[
                        cid
                    ] = score.pooled
        measurements[mode] = table
        points = assemble_points(rows, jod_by_scene)
        for mid in metric_ids:
            try:
                cv_results[(mode, mid)] = cross_validate(
                    points.get(mid, {}), folds, loss=loss
                )
                notes[(mode, mid)] = ""
            except EvaluationError as exc:
                cv_results[(mode, mid)] = None
                notes[(mode, mid)] = f"evaluation failed: {exc}"

    out_rows = []
    for mid in metric_ids:
        dense_cv = cv_results[("dense", mid)]
        for mode in modes:
            cv = cv_results[(mode, mid)]
            if cv is None:
                out_rows.append(
                    SparseStudyRow(mid, mode, (), float("nan"), float("nan"),
                                   float("nan"), None, None, notes[(mode, mid)])
                )
                continue
            fold_pearson = tuple(r.pearson for r in cv.per_fold)
            p_value = None
            worse = None
            if mode != "dense" and dense_cv is not None:
                dense_folds = [r.pearson for r in dense_cv.per_fold]
                p_value = paired_bootstrap_p(
                    dense_folds, fold_pearson, b=bootstrap_b, seed=seed
                )
                worse = p_value < 0.05
            out_rows.append(
                SparseStudyRow(
                    mid, mode, fold_pearson,
                    cv.mean["pearson"], cv.stderr["pearson"], cv.mean["chi2_red"],
                    p_value, worse, notes[(mode, mid)],
                )
            )
    return SparseStudy(tuple(out_rows), measurements)


# -------------------------------------------------------------------- reports

def write_goodness_csv(path: str | Path, cv_by_metric: dict[str, CrossValidation]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["metric_id", "fold_id", "n_points", "chi2_red", "pearson", "spearman", "mse"]
        )
        for mid in sorted(cv_by_metric):
            for r in cv_by_metric[mid].per_fold:
                writer.writerow(
                    [mid, r.fold_id, r.n_points, f"{r.chi2_red:.9g}",
                     f"{r.pearson:.9g}", f"{r.spearman:.9g}", f"{r.mse:.9g}"]
                )


def write_summary_json(
    path: str | Path,
    cv_by_metric: dict[str, CrossValidation],
    extra: dict | None = None,
) -> None:
    payload: dict = {"metrics": {}}
    for mid, cv in sorted(cv_by_metric.items()):
        payload["metrics"][mid] = {
            "folds": [
                {
                    "fold_id": r.fold_id,
                    "n_points": r.n_points,
                    "chi2_red": r.chi2_red,
                    "pearson": r.pearson,
                    "spearman": r.spearman,
                    "mse": r.mse,
                }
                for r in cv.per_fold
            ],
            "mean": cv.mean,
            "stderr": cv.stderr,
        }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def write_sparse_csv(path: str | Path, study: SparseStudy) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["metric_id", "mode", "mean_pearson", "se_pearson", "mean_chi2_red",
             "p_vs_dense", "worse_than_dense", "note"]
        )
        for r in study.rows:
            writer.writerow(
                [r.metric_id, r.mode, f"{r.mean_pearson:.9g}", f"{r.se_pearson:.9g}",
                 f"{r.mean_chi2_red:.9g}",
                 "" if r.p_vs_dense is None else f"{r.p_vs_dense:.9g}",
                 "" if r.worse_than_dense is None else int(r.worse_than_dense),
                 r.note]
            )
