"""Pairwise-comparison scaling to just-objectionable-difference (JOD) scores.

Two-alternative forced-choice outcomes are modeled with Thurstone Case V:
an observer prefers condition i over condition j with probability
Phi((q_i - q_j) / sigma), where sigma is chosen so that a one-unit quality
gap corresponds to a 75% preference rate.  Scores are estimated by maximum
likelihood with the reference condition pinned at zero and a weak Gaussian
prior that keeps unanimously decided pairs finite.  Confidence intervals
come from bootstrapping observers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.stats import norm

__all__ = [
    "SIGMA_JOD",
    "PRIOR_STD",
    "REFERENCE_ID",
    "REFERENCE",
    "Condition",
    "ScalingError",
    "ComparisonMatrix",
    "JodScale",
    "scale_jod",
    "bootstrap_ci",
    "schedule_pairs",
    "simulate_comparisons",
    "read_comparison_csv",
    "write_jod_csv",
    "read_jod_csv",
]

# Delta q = 1 <=> 75% preference rate under the Case V model.
SIGMA_JOD = 1.0 / float(norm.ppf(0.75))

# Weak zero-mean prior on non-reference scores; negligible for mixed pairs,
# bounds the estimate when a pair is decided unanimously.
PRIOR_STD = 10.0

REFERENCE_ID = "ref"

Condition = tuple[str, int]

# Shared reference condition: severity level 0 of every distortion kind.
REFERENCE: Condition = (REFERENCE_ID, 0)

_GRAD_TOL = 1e-6


class ScalingError(ValueError):
    """Raised for malformed comparison data or scaling failures."""


Record = tuple[str, int, int, int]  # (observer_id, i, j, winner index)


def _aggregate(n: int, records: Sequence[Record]) -> np.ndarray:
    counts = np.zeros((n, n), dtype=np.int64)
    for _, i, j, winner in records:
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise ScalingError(f"record compares invalid condition pair ({i}, {j})")
        if winner == i:
            counts[i, j] += 1
        elif winner == j:
            counts[j, i] += 1
        else:
            raise ScalingError(f"winner {winner} is neither side of pair ({i}, {j})")
    return counts


@dataclass(frozen=True)
class ComparisonMatrix:
    """Aggregated 2AFC outcomes for one scene.

    ``condition_ids[0]`` is the reference; ``counts[i, j]`` is the number of
    trials in which condition i was preferred over condition j.  When the raw
    per-observer records are kept they must aggregate to exactly ``counts``;
    they are what the bootstrap resamples.
    """

    condition_ids: tuple[str, ...]
    counts: np.ndarray
    observer_records: tuple[Record, ...] | None = None

    def __post_init__(self) -> None:
        ids = tuple(self.condition_ids)
        object.__setattr__(self, "condition_ids", ids)
        if len(ids) < 1:
            raise ScalingError("need at least the reference condition")
        if len(set(ids)) != len(ids):
            raise ScalingError("condition ids must be unique")
        counts = np.asarray(self.counts)
        if counts.shape != (len(ids), len(ids)):
            raise ScalingError(
                f"counts shape {counts.shape} does not match {len(ids)} conditions"
            )
        if not np.issubdtype(counts.dtype, np.integer):
            rounded = np.rint(counts)
            if not np.array_equal(rounded, counts):
                raise ScalingError("counts must be integers")
            counts = rounded.astype(np.int64)
        counts = counts.astype(np.int64)
        if (counts < 0).any():
            raise ScalingError("counts must be non-negative")
        if np.diagonal(counts).any():
            raise ScalingError("diagonal of counts must be zero")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if self.observer_records is not None:
            records = tuple(tuple(r) for r in self.observer_records)
            object.__setattr__(self, "observer_records", records)
            if not np.array_equal(_aggregate(len(ids), records), counts):
                raise ScalingError("observer records do not aggregate to counts")

    @classmethod
    def from_records(
        cls, condition_ids: Sequence[str], records: Sequence[Record]
    ) -> "ComparisonMatrix":
        ids = tuple(condition_ids)
        return cls(ids, _aggregate(len(ids), records), tuple(records))

    @property
    def n(self) -> int:
        return len(self.condition_ids)

    def ensure_connected(self) -> None:
        """Every condition must reach the reference through compared pairs."""
        n = self.n
        adjacency = (self.counts + self.counts.T) > 0
        reached = np.zeros(n, dtype=bool)
        reached[0] = True
        frontier = [0]
        while frontier:
            node = frontier.pop()
            for other in np.nonzero(adjacency[node])[0]:
                if not reached[other]:
                    reached[other] = True
                    frontier.append(int(other))
        if not reached.all():
            orphans = [self.condition_ids[i] for i in np.nonzero(~reached)[0]]
            raise ScalingError(
                "comparison graph is disconnected: "
                f"{orphans} have no path to reference {self.condition_ids[0]!r}"
            )


@dataclass(frozen=True)
class JodScale:
    """Per-condition JOD scores with 95% confidence bounds.

    The reference is pinned at exactly 0.  ``var`` holds the bootstrap
    replicate variance of each score (zeros when no bootstrap was run) and
    feeds the chi-square weighting downstream.
    """

    condition_ids: tuple[str, ...]
    jod: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    var: np.ndarray
    n_failed_replicates: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "condition_ids", tuple(self.condition_ids))
        n = len(self.condition_ids)
        for name in ("jod", "ci_low", "ci_high", "var"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ScalingError(f"{name} must have one entry per condition")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.jod[0] != 0.0:
            raise ScalingError("reference JOD must be exactly 0")
        if (self.ci_low > self.jod).any() or (self.ci_high < self.jod).any():
            raise ScalingError("confidence interval must bracket the score")


def _negative_log_posterior(
    x: np.ndarray, counts: np.ndarray, sigma: float, prior_var: float
) -> tuple[float, np.ndarray]:
    q = np.concatenate(([0.0], x))
    z = (q[:, None] - q[None, :]) / sigma
    log_p = norm.logcdf(z)
    value = -float((counts * log_p).sum()) + 0.5 * float(x @ x) / prior_var
    # d/dz log Phi(z) = phi(z)/Phi(z), computed in log space so unanimous
    # pairs far in the tail stay finite
    hazard = np.exp(norm.logpdf(z) - log_p)
    flow = counts * hazard
    grad_q = -(flow.sum(axis=1) - flow.sum(axis=0)) / sigma
    return value, grad_q[1:] + x / prior_var


def _newton_polish(
    x: np.ndarray, counts: np.ndarray, sigma: float, prior_var: float
) -> np.ndarray:
    """Damped Newton steps on the strictly convex posterior.

    L-BFGS-B occasionally stalls with the gradient a hair above tolerance;
    the analytic Hessian is a graph Laplacian plus the prior, so a couple of
    Newton steps from there reach machine precision.
    """
    value, grad = _negative_log_posterior(x, counts, sigma, prior_var)
    for _ in range(50):
        if float(np.abs(grad).max()) < _GRAD_TOL * 1e-2:
            break
        q = np.concatenate(([0.0], x))
        z = (q[:, None] - q[None, :]) / sigma
        log_p = norm.logcdf(z)
        hazard = np.exp(norm.logpdf(z) - log_p)
        # -(log Phi)''(z) = h(z) (z + h(z)) >= 0, so this is PSD + prior
        curv = counts * hazard * (z + hazard)
        sym = curv + curv.T
        lap = np.diag(sym.sum(axis=1)) - sym
        hess = lap[1:, 1:] / sigma**2 + np.eye(x.size) / prior_var
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            break
        # this close to the optimum the value change sits below float noise,
        # so accept on gradient-norm progress rather than an Armijo test
        gnorm = float(np.abs(grad).max())
        t = 1.0
        for _ in range(30):
            cand = x + t * step
            cand_value, cand_grad = _negative_log_posterior(
                cand, counts, sigma, prior_var
            )
            if float(np.abs(cand_grad).max()) < gnorm or cand_value < value:
                x, value, grad = cand, cand_value, cand_grad
                break
            t *= 0.5
        else:
            break
    return x


def scale_jod(
    cm: ComparisonMatrix,
    sigma: float = SIGMA_JOD,
    prior_std: float = PRIOR_STD,
    start: np.ndarray | None = None,
) -> JodScale:
    """Maximum-likelihood JOD scores under Thurstone Case V.

    The posterior is strictly convex (log-concave likelihood plus Gaussian
    prior), so the quasi-Newton ascent from any start reaches the unique
    optimum; convergence is declared at gradient infinity-norm < 1e-6.
    """
    cm.ensure_connected()
    n = cm.n
    if n == 1:
        zero = np.zeros(1)
        return JodScale(cm.condition_ids, zero, zero, zero, zero)
    counts = cm.counts.astype(float)
    prior_var = float(prior_std) ** 2
    x0 = np.zeros(n - 1) if start is None else np.asarray(start, dtype=float).copy()
    args = (counts, float(sigma), prior_var)
    result = optimize.minimize(
        _negative_log_posterior,
        x0,
        args=args,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-8},
    )
    x = result.x
    if float(np.abs(result.jac).max()) >= _GRAD_TOL:
        x = _newton_polish(x, counts, float(sigma), prior_var)
        _, grad = _negative_log_posterior(x, counts, float(sigma), prior_var)
        if float(np.abs(grad).max()) >= _GRAD_TOL:
            raise ScalingError(
                "scaling did not converge: gradient infinity-norm "
                f"{float(np.abs(grad).max()):.3g}"
            )
    jod = np.concatenate(([0.0], x))
    return JodScale(cm.condition_ids, jod, jod, jod, np.zeros(n))


def bootstrap_ci(
    cm: ComparisonMatrix,
    b: int = 500,
    seed: int = 0,
    sigma: float = SIGMA_JOD,
    prior_std: float = PRIOR_STD,
) -> JodScale:
    """Percentile confidence intervals from resampling observers.

    Observers are drawn with replacement ``b`` times; each replicate is
    rescaled from scratch (warm-started at the point estimate).  Replicates
    whose comparison graph falls apart are skipped and counted.
    """
    if b < 2:
        raise ScalingError("bootstrap needs B >= 2")
    if not cm.observer_records:
        raise ScalingError("bootstrap needs per-observer records")
    point = scale_jod(cm, sigma=sigma, prior_std=prior_std)

    observer_ids = sorted({r[0] for r in cm.observer_records})
    index = {oid: k for k, oid in enumerate(observer_ids)}
    per_observer = np.zeros((len(observer_ids), cm.n, cm.n), dtype=np.int64)
    for oid, i, j, winner in cm.observer_records:
        loser = j if winner == i else i
        per_observer[index[oid], winner, loser] += 1

    rng = np.random.default_rng(seed)
    replicates = []
    failed = 0
    for _ in range(b):
        draw = rng.integers(0, len(observer_ids), size=len(observer_ids))
        counts = per_observer[draw].sum(axis=0)
        replicate = ComparisonMatrix(cm.condition_ids, counts)
        try:
            replicate.ensure_connected()
        except ScalingError:
            failed += 1
            continue
        replicates.append(
            scale_jod(
                replicate, sigma=sigma, prior_std=prior_std, start=point.jod[1:]
            ).jod
        )
    if not replicates:
        raise ScalingError("every bootstrap replicate was disconnected")
    stack = np.vstack(replicates)
    ci_low = np.percentile(stack, 2.5, axis=0)
    ci_high = np.percentile(stack, 97.5, axis=0)
    # percentile intervals are widened, if needed, to bracket the point
    # estimate so the interval invariant holds on extreme resamples
    ci_low = np.minimum(ci_low, point.jod)
    ci_high = np.maximum(ci_high, point.jod)
    var = stack.var(axis=0, ddof=1)
    return JodScale(cm.condition_ids, point.jod, ci_low, ci_high, var, failed)


def schedule_pairs(
    conditions: Sequence[Condition], seed: int = 0
) -> list[tuple[Condition, Condition]]:
    """Neighboring-severity pair schedule for one scene.

    Each distortion kind contributes a chain reference -> level 1 -> ... ->
    top level, one pair per neighboring step.  Presentation order and screen
    sides are shuffled deterministically from ``seed``.
    """
    by_kind: dict[str, list[int]] = {}
    for kind, level in conditions:
        if level < 1:
            raise ScalingError(
                "conditions must have severity level >= 1; the reference is implicit"
            )
        by_kind.setdefault(kind, []).append(level)
    pairs: list[tuple[Condition, Condition]] = []
    for kind in sorted(by_kind):
        levels = sorted(by_kind[kind])
        if len(set(levels)) != len(levels):
            raise ScalingError(f"duplicate severity level for kind {kind!r}")
        chain: list[Condition] = [REFERENCE] + [(kind, level) for level in levels]
        pairs.extend(zip(chain[:-1], chain[1:]))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    swap = rng.random(len(pairs)) < 0.5
    shuffled = [pairs[k] for k in order]
    return [(b, a) if s else (a, b) for (a, b), s in zip(shuffled, swap)]


def simulate_comparisons(
    true_jod: Sequence[float],
    pair_indices: Sequence[tuple[int, int]],
    n_observers: int,
    repeats: int = 1,
    seed: int = 0,
    sigma: float = SIGMA_JOD,
) -> list[Record]:
    """Sample 2AFC records from known scores under the Case V model."""
    true_jod = np.asarray(true_jod, dtype=float)
    rng = np.random.default_rng(seed)
    records: list[Record] = []
    for o in range(n_observers):
        oid = f"sim{o:03d}"
        for i, j in pair_indices:
            p_i = float(norm.cdf((true_jod[i] - true_jod[j]) / sigma))
            for _ in range(repeats):
                winner = i if rng.random() < p_i else j
                records.append((oid, i, j, winner))
    return records


def read_comparison_csv(
    path: str | Path, reference_id: str = REFERENCE_ID
) -> dict[str, ComparisonMatrix]:
    """Load per-scene comparison matrices from a response CSV.

    Expected columns: observer_id, scene, cond_i, cond_j, winner; ``winner``
    must equal one of the two condition ids.  Within each scene the reference
    is placed at index 0 and the remaining conditions are sorted.
    """
    rows_by_scene: dict[str, list[tuple[str, str, str, str]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"observer_id", "scene", "cond_i", "cond_j", "winner"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ScalingError(f"comparison CSV must have columns {sorted(required)}")
        for row in reader:
            rows_by_scene.setdefault(row["scene"], []).append(
                (row["observer_id"], row["cond_i"], row["cond_j"], row["winner"])
            )
    out: dict[str, ComparisonMatrix] = {}
    for scene, rows in sorted(rows_by_scene.items()):
        names = {c for _, ci, cj, _ in rows for c in (ci, cj)}
        if reference_id not in names:
            raise ScalingError(
                f"scene {scene!r} has no {reference_id!r} condition in its responses"
            )
        ids = [reference_id] + sorted(names - {reference_id})
        which = {cid: k for k, cid in enumerate(ids)}
        records = []
        for oid, ci, cj, winner in rows:
            if winner not in (ci, cj):
                raise ScalingError(
                    f"winner {winner!r} is neither {ci!r} nor {cj!r} in scene {scene!r}"
                )
            records.append((oid, which[ci], which[cj], which[winner]))
        out[scene] = ComparisonMatrix.from_records(ids, records)
    return out


def write_jod_csv(path: str | Path, scales: dict[str, JodScale]) -> None:
    """Emit one row per (scene, condition) with scores, CIs and variance."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene", "condition", "jod", "ci_low", "ci_high", "var"])
        for scene in sorted(scales):
            scale = scales[scene]
            for k, cid in enumerate(scale.condition_ids):
                writer.writerow(
                    [
                        scene,
                        cid,
                        f"{scale.jod[k]:.9g}",
                        f"{scale.ci_low[k]:.9g}",
                        f"{scale.ci_high[k]:.9g}",
                        f"{scale.var[k]:.9g}",
                    ]
                )


def read_jod_csv(path: str | Path) -> dict[str, JodScale]:
    rows_by_scene: dict[str, list[tuple[str, float, float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"scene", "condition", "jod", "ci_low", "ci_high"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ScalingError(f"JOD CSV must have columns {sorted(required)}")
        has_var = "var" in reader.fieldnames
        for row in reader:
            rows_by_scene.setdefault(row["scene"], []).append(
                (
                    row["condition"],
                    float(row["jod"]),
                    float(row["ci_low"]),
                    float(row["ci_high"]),
                    float(row["var"]) if has_var else 0.0,
                )
            )
    out: dict[str, JodScale] = {}
    for scene, rows in rows_by_scene.items():
        rows = sorted(rows, key=lambda r: r[0] != REFERENCE_ID)
        ids = tuple(r[0] for r in rows)
        arr = np.array([r[1:] for r in rows], dtype=float)
        out[scene] = JodScale(ids, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    return out
