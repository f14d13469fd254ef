"""Quantitative evaluation: coverage, precision, precision-coverage curves
with trapezoidal AUC, pose-error statistics, optimal-assignment EMD between
grasp sets, binary-classification AUC, and the inference tuning sweep.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidInput
from .grasp_oracle import label_grasp, dense_surface_samples

COVERAGE_RADIUS = 0.01  # meters, nearest-neighbour matching distance


def _translations(grasps) -> np.ndarray:
    if hasattr(grasps, "translations"):
        return np.asarray(grasps.translations, dtype=np.float64).reshape(-1, 3)
    return np.array([g.translation for g in grasps], dtype=np.float64).reshape(-1, 3)


def _rotations(grasps) -> np.ndarray:
    if hasattr(grasps, "rotations"):
        return np.asarray(grasps.rotations, dtype=np.float64).reshape(-1, 3, 3)
    return np.array([g.rotation for g in grasps], dtype=np.float64).reshape(-1, 3, 3)


def _pairwise_geodesic(ra: np.ndarray, rb: np.ndarray) -> np.ndarray:
    """Geodesic angles via the chordal form ||Ra - Rb||_F = 2 sqrt(2)
    sin(t/2); exactly zero for identical rows (the trace formula is not)."""
    diff = ra[:, None, :, :] - rb[None, :, :, :]
    chord = np.sqrt(np.einsum("abkl,abkl->ab", diff, diff))
    return 2.0 * np.arcsin(np.minimum(1.0, chord / (2.0 * np.sqrt(2.0))))


def pairwise_pose_cost(set_a, set_b) -> np.ndarray:
    """Cost matrix d(g_i, g_j) = ||t_i - t_j|| + geodesic angle (the norm of
    the relative rotation's log map)."""
    ta, tb = _translations(set_a), _translations(set_b)
    ra, rb = _rotations(set_a), _rotations(set_b)
    dt = np.linalg.norm(ta[:, None, :] - tb[None, :, :], axis=2)
    return dt + _pairwise_geodesic(ra, rb)


def pairwise_translation_dist(set_a, set_b) -> np.ndarray:
    ta, tb = _translations(set_a), _translations(set_b)
    return np.linalg.norm(ta[:, None, :] - tb[None, :, :], axis=2)


def coverage(predicted, gt_positives, radius: float = COVERAGE_RADIUS) -> float:
    """Fraction of ground-truth positives whose nearest prediction lies
    within `radius` in translation. Matching is non-injective: each ground
    truth grasp matches independently."""
    gt = _translations(gt_positives)
    if gt.shape[0] == 0:
        raise InvalidInput("coverage needs a non-empty ground-truth positive set")
    pred = (
        _translations(predicted)
        if (hasattr(predicted, "__len__") and len(predicted) > 0)
        else np.zeros((0, 3))
    )
    if pred.shape[0] == 0:
        return 0.0
    d = np.linalg.norm(gt[:, None, :] - pred[None, :, :], axis=2)
    return float(np.mean(d.min(axis=1) <= radius))


def coverage_with_rotation(predicted, gt_positives, radius, max_angle) -> float:
    """Rotation-aware variant: a ground-truth grasp counts as matched when
    some prediction is within `radius` AND within `max_angle` of it."""
    gt_t, gt_r = _translations(gt_positives), _rotations(gt_positives)
    if gt_t.shape[0] == 0:
        raise InvalidInput("coverage needs a non-empty ground-truth positive set")
    if not hasattr(predicted, "__len__") or len(predicted) == 0:
        return 0.0
    pr_t, pr_r = _translations(predicted), _rotations(predicted)
    dt = np.linalg.norm(gt_t[:, None, :] - pr_t[None, :, :], axis=2)
    dr = _pairwise_geodesic(gt_r, pr_r)
    ok = (dt <= radius) & (dr <= max_angle)
    return float(np.mean(ok.any(axis=1)))


def precision(grasps, mesh, gripper) -> float:
    """Oracle success rate of a grasp list."""
    poses = grasps.poses() if hasattr(grasps, "poses") else list(grasps)
    if len(poses) == 0:
        raise InvalidInput("precision needs a non-empty grasp set")
    surface = dense_surface_samples(mesh, gripper.cup_radius) if gripper.kind == "suction" else None
    hits = sum(label_grasp(mesh, g, gripper, surface=surface) for g in poses)
    return hits / len(poses)


def pose_errors(predicted, gt_positives):
    """(mean translation error, mean rotation error): each prediction is
    matched to its nearest ground truth under the combined pose distance and
    the matched pair's two error terms are averaged over predictions."""
    pred_t = _translations(predicted)
    gt_t = _translations(gt_positives)
    if pred_t.shape[0] == 0 or gt_t.shape[0] == 0:
        raise InvalidInput("pose_errors needs non-empty sets")
    cost = pairwise_pose_cost(predicted, gt_positives)
    nearest = np.argmin(cost, axis=1)
    dt = np.linalg.norm(pred_t - gt_t[nearest], axis=1)
    pred_r, gt_r = _rotations(predicted), _rotations(gt_positives)
    diff = pred_r - gt_r[nearest]
    chord = np.sqrt(np.einsum("akl,akl->a", diff, diff))
    dr = 2.0 * np.arcsin(np.minimum(1.0, chord / (2.0 * np.sqrt(2.0))))
    return float(dt.mean()), float(dr.mean())


# ---------------------------------------------------------------------------
# Precision-coverage curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrecisionCoverageCurve:
    points: tuple  # ordered (threshold, precision, coverage) triples
    auc: float

    def __post_init__(self):
        for _, p, c in self.points:
            if not (0.0 <= p <= 1.0 and 0.0 <= c <= 1.0):
                raise InvalidInput("curve values must lie in [0, 1]")


def curve_auc(points) -> float:
    """Trapezoidal integral of precision over coverage.

    The curve is sorted by coverage and anchored at coverage zero with the
    lowest-coverage precision, so a single point contributes its
    precision x coverage rectangle. Duplicate coverage points add zero-width
    segments and leave the integral unchanged.
    """
    cov = np.array([c for _, _, c in points])
    prec = np.array([p for _, p, _ in points])
    order = np.argsort(cov, kind="stable")
    cov, prec = cov[order], prec[order]
    if cov.shape[0] == 0:
        return 0.0
    if cov[0] > 0.0:
        cov = np.concatenate([[0.0], cov])
        prec = np.concatenate([[prec[0]], prec])
    return float(np.trapezoid(prec, cov))


def precision_coverage_curve(
    scored, gt_positives, mesh, gripper, thresholds
) -> PrecisionCoverageCurve:
    """Sweep score thresholds; at each, filter and measure precision and
    coverage. Empty filtered sets contribute (precision 0, coverage 0)."""
    thresholds = list(thresholds)
    if sorted(thresholds) != thresholds:
        raise InvalidInput("thresholds must be sorted ascending")
    surface = dense_surface_samples(mesh, gripper.cup_radius) if gripper.kind == "suction" else None
    poses = scored.grasps
    scores = np.asarray(scored.scores)
    labels = np.array(
        [label_grasp(mesh, g, gripper, surface=surface) for g in poses], dtype=bool
    )
    pts = []
    for tau in thresholds:
        keep = scores >= tau
        if not keep.any():
            pts.append((tau, 0.0, 0.0))
            continue
        kept_poses = [g for g, k in zip(poses, keep) if k]
        prec = float(labels[keep].mean())
        cov = coverage(kept_poses, gt_positives)
        pts.append((tau, prec, cov))
    return PrecisionCoverageCurve(tuple(pts), curve_auc(pts))


# ---------------------------------------------------------------------------
# Earth mover's distance
# ---------------------------------------------------------------------------


def solve_assignment(cost: np.ndarray):
    """Exact linear sum assignment (scipy's Jonker-Volgenant implementation);
    returns (row_idx, col_idx)."""
    cost = np.asarray(cost, dtype=np.float64)
    return linear_sum_assignment(cost)


def emd(set_a, set_b, n_sub: int = 500, repeats: int = 5, seed: int = 0) -> float:
    """Mean optimal one-to-one matching cost between two grasp sets.

    Per repeat both sets are subsampled (without replacement) to n_sub
    (clipped to the smaller set size), the pairwise pose-cost matrix is
    solved exactly, and the mean assigned cost recorded; the result averages
    the repeats.
    """
    na, nb = len(_translations(set_a)), len(_translations(set_b))
    if na < 1 or nb < 1:
        raise InvalidInput("emd needs non-empty sets")
    n = min(n_sub, na, nb)
    rng = np.random.default_rng(seed)
    ta, ra = _translations(set_a), _rotations(set_a)
    tb, rb = _translations(set_b), _rotations(set_b)
    vals = []
    for _ in range(repeats):
        ia = rng.choice(na, size=n, replace=False) if na > n else np.arange(na)
        ib = rng.choice(nb, size=n, replace=False) if nb > n else np.arange(nb)
        sub_a = _ArrayGrasps(ra[ia], ta[ia])
        sub_b = _ArrayGrasps(rb[ib], tb[ib])
        cost = pairwise_pose_cost(sub_a, sub_b)
        rows, cols = solve_assignment(cost)
        vals.append(float(cost[rows, cols].mean()))
    return float(np.mean(vals))


@dataclass(frozen=True)
class _ArrayGrasps:
    rotations: np.ndarray
    translations: np.ndarray


@dataclass(frozen=True)
class EmdReport:
    per_object: dict
    n_sub: int
    repeats: int
    aggregate_mean: float = field(init=False)

    def __post_init__(self):
        vals = list(self.per_object.values())
        if any(v < 0 for v in vals):
            raise InvalidInput("EMD values must be non-negative")
        object.__setattr__(self, "aggregate_mean", float(np.mean(vals)) if vals else 0.0)


def emd_report(sets_a: dict, sets_b: dict, n_sub=500, repeats=5, seed=0) -> EmdReport:
    """Per-object EMD between two dict-of-grasp-set collections sharing ids."""
    per_object = {}
    ids = sorted(set(sets_a) & set(sets_b))
    if not ids:
        raise InvalidInput("no shared object ids between the two collections")
    for i, oid in enumerate(ids):
        per_object[oid] = emd(sets_a[oid], sets_b[oid], n_sub, repeats, seed + i)
    return EmdReport(per_object, n_sub, repeats)


# ---------------------------------------------------------------------------
# Classifier quality
# ---------------------------------------------------------------------------


def binary_auc(scores, labels) -> float:
    """ROC AUC via the rank statistic; ties share rank."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise InvalidInput("binary_auc needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty_like(scores)
    ranks[order] = np.arange(1, len(scores) + 1, dtype=np.float64)
    # average ranks over tied scores
    sorted_scores = scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# Inference tuning sweep
# ---------------------------------------------------------------------------

UNDEFINED = "undefined"  # CSV sentinel: zero grasps retained, precision has no value


def tuning_sweep(sample_fn, score_fn, objects, gripper, batch_sizes, thresholds, seed: int = 0):
    """Cartesian sweep over sampling batch size and score threshold.

    `sample_fn(obj, batch, seed) -> list[GraspPose]`,
    `score_fn(obj, grasps) -> np.ndarray of scores`. Returns rows of
    (batch, threshold, retained, precision-or-None) averaged over objects
    (retained summed, precision averaged over objects with retained > 0).
    """
    if not batch_sizes or not thresholds:
        raise InvalidInput("sweep needs non-empty grids")
    rows = []
    for batch in batch_sizes:
        per_object = []
        for i, obj in enumerate(objects):
            grasps = sample_fn(obj, batch, seed + i)
            scores = np.asarray(score_fn(obj, grasps))
            surface = (
                dense_surface_samples(obj.mesh, gripper.cup_radius)
                if gripper.kind == "suction"
                else None
            )
            labels = np.array(
                [label_grasp(obj.mesh, g, gripper, surface=surface) for g in grasps], dtype=bool
            )
            per_object.append((scores, labels))
        for tau in thresholds:
            retained = 0
            precisions = []
            for scores, labels in per_object:
                keep = scores >= tau
                retained += int(keep.sum())
                if keep.any():
                    precisions.append(float(labels[keep].mean()))
            rows.append(
                {
                    "batch": batch,
                    "threshold": tau,
                    "retained": retained,
                    "precision": float(np.mean(precisions)) if precisions else None,
                }
            )
    return rows


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["batch", "threshold", "retained", "precision"])
        for r in rows:
            prec = UNDEFINED if r["precision"] is None else f"{r['precision']:.6f}"
            w.writerow([r["batch"], f"{r['threshold']:.6f}", r["retained"], prec])


def write_metric_csv(path, records):
    """records: iterable of (metric, object_id, value); value None writes the
    undefined sentinel."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "object_id", "value"])
        for metric, oid, value in records:
            w.writerow([metric, oid, UNDEFINED if value is None else f"{value:.9g}"])


def write_curve_svg(path, curve: PrecisionCoverageCurve, title="precision-coverage"):
    """Line plot of the curve; deterministic SVG output."""
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "graspkit"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    cov = [c for _, _, c in curve.points]
    prec = [p for _, p, _ in curve.points]
    order = np.argsort(cov)
    ax.plot(np.array(cov)[order], np.array(prec)[order], marker="o")
    ax.set_xlabel("coverage")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.05)
    ax.set_title(f"{title} (AUC={curve.auc:.3f})")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def write_histogram_svg(path, values, title="EMD", bins=20):
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "graspkit"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.hist(list(values), bins=bins)
    ax.set_xlabel(title)
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
