import itertools
import math

import numpy as np
import pytest

from graspkit.errors import InvalidInput
from graspkit.eval_metrics import (
    binary_auc,
    coverage,
    coverage_with_rotation,
    curve_auc,
    emd,
    emd_report,
    pairwise_pose_cost,
    pose_errors,
    precision,
    precision_coverage_curve,
    solve_assignment,
    tuning_sweep,
    write_metric_csv,
    write_sweep_csv,
)
from graspkit.discriminator import ScoredGrasps
from graspkit.grasp_oracle import GripperModel, LabeledGraspSet, annotate, sample_candidate_grasps
from graspkit.se3_core import GraspPose, log_map_so3, random_rotation
from graspkit.shape_lab import make_primitive

JAW = GripperModel("parallel_jaw")
SIDE_R = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def random_set(n, seed, spread=0.1):
    rng = np.random.default_rng(seed)
    rots = np.stack([random_rotation(rng) for _ in range(n)])
    trans = rng.uniform(-spread, spread, size=(n, 3))
    return LabeledGraspSet("s", "parallel_jaw", rots, trans, np.zeros(n, dtype=bool))


def brute_force_coverage(pred_t, gt_t, radius):
    hit = 0
    for g in gt_t:
        best = min(float(np.linalg.norm(g - p)) for p in pred_t)
        if best <= radius:
            hit += 1
    return hit / len(gt_t)


def brute_force_pose_errors(pred, gt):
    terrs, rerrs = [], []
    for i in range(len(pred.translations)):
        best, bt, br = None, None, None
        for j in range(len(gt.translations)):
            dt = float(np.linalg.norm(pred.translations[i] - gt.translations[j]))
            dr = float(np.linalg.norm(log_map_so3(pred.rotations[i].T @ gt.rotations[j])))
            if best is None or dt + dr < best:
                best, bt, br = dt + dr, dt, dr
        terrs.append(bt)
        rerrs.append(br)
    return float(np.mean(terrs)), float(np.mean(rerrs))


def brute_force_assignment(cost):
    n = cost.shape[0]
    best = math.inf
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i, p] for i, p in enumerate(perm))
        best = min(best, total)
    return best


def test_coverage_trivials():
    gt = random_set(10, 1)
    assert coverage(gt, gt) == 1.0
    assert coverage([], gt) == 0.0
    with pytest.raises(InvalidInput):
        coverage(gt, LabeledGraspSet("g", "parallel_jaw", np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0, dtype=bool)))


def test_coverage_partial_match_counts():
    rng = np.random.default_rng(2)
    gt = random_set(10, 3, spread=0.5)
    # predictions matching exactly 4 ground-truth grasps within 1 cm
    pred_t = gt.translations[:4] + rng.uniform(-0.004, 0.004, size=(4, 3))
    pred = LabeledGraspSet(
        "p", "parallel_jaw", gt.rotations[:4], pred_t, np.zeros(4, dtype=bool)
    )
    c = coverage(pred, gt)
    assert c == 0.4
    assert c == brute_force_coverage(pred_t, gt.translations, 0.01)


def test_coverage_matches_brute_force_exactly():
    pred = random_set(300, 7, spread=0.05)
    gt = random_set(200, 8, spread=0.05)
    fast = coverage(pred, gt, radius=0.02)
    slow = brute_force_coverage(pred.translations, gt.translations, 0.02)
    assert abs(fast - slow) <= 1e-12


def test_coverage_with_rotation_gate():
    gt = random_set(20, 11)
    assert coverage_with_rotation(gt, gt, 0.01, 0.1) == 1.0
    # rotating every prediction by 0.3 rad kills matches at max_angle=0.1
    from graspkit.se3_core import exp_map_so3

    spun = LabeledGraspSet(
        "p",
        "parallel_jaw",
        np.einsum("nij,jk->nik", gt.rotations, exp_map_so3([0, 0, 0.3])),
        gt.translations,
        gt.labels,
    )
    assert coverage_with_rotation(spun, gt, 0.01, 0.1) == 0.0


def test_precision_counts():
    mesh = make_primitive("cylinder", {"radius": 0.03, "height": 0.1}, resolution=32)
    good = GraspPose(SIDE_R, [0, 0, 0])
    bad = GraspPose(SIDE_R, [0.10, 0, 0])
    assert precision([good, good, good], mesh, JAW) == 1.0
    assert precision([bad, bad], mesh, JAW) == 0.0
    assert precision([good, good, good, bad], mesh, JAW) == 0.75
    with pytest.raises(InvalidInput):
        precision([], mesh, JAW)


def test_pose_errors_trivials_and_brute_force():
    gt = random_set(50, 4)
    assert pose_errors(gt, gt) == (0.0, 0.0)
    shifted = LabeledGraspSet(
        "p", "parallel_jaw", gt.rotations[:1], gt.translations[:1] + [0.02, 0, 0], gt.labels[:1]
    )
    te, re = pose_errors(shifted, gt.subset(np.arange(len(gt)) == 0))
    assert abs(te - 0.02) < 1e-12 and re < 1e-9
    pred = random_set(40, 5)
    fast = pose_errors(pred, gt)
    slow = brute_force_pose_errors(pred, gt)
    assert abs(fast[0] - slow[0]) <= 1e-12
    assert abs(fast[1] - slow[1]) <= 1e-9


def test_curve_constant_precision_full_span():
    pts = [(0.1 * i, 1.0, c) for i, c in enumerate(np.linspace(1.0, 0.0, 11))]
    assert abs(curve_auc(pts) - 1.0) < 1e-12


def test_curve_single_point_rectangle():
    assert abs(curve_auc([(0.5, 0.8, 0.6)]) - 0.8 * 0.6) < 1e-12


def test_curve_refinement_invariance():
    rng = np.random.default_rng(9)
    base = [(t, float(p), float(c)) for t, p, c in zip(np.linspace(0, 1, 8), rng.uniform(0.2, 1, 8), np.sort(rng.uniform(0, 1, 8))[::-1])]
    refined = base + [(t + 1e-4, p, c) for t, p, c in base]  # duplicate curve points
    assert abs(curve_auc(base) - curve_auc(refined)) < 1e-12


def test_precision_coverage_curve_end_to_end():
    mesh = make_primitive("cylinder", {"radius": 0.03, "height": 0.1}, resolution=32)
    labeled = annotate("c", mesh, sample_candidate_grasps(mesh, 2500, JAW, seed=1), JAW, "offline")
    gt = labeled.positives()
    assert len(gt) >= 2
    # oracle-score upper bound: scores equal labels
    oracle_scored = ScoredGrasps(tuple(labeled.poses()), labeled.labels.astype(float))
    rng = np.random.default_rng(3)
    random_scored = ScoredGrasps(tuple(labeled.poses()), rng.uniform(size=len(labeled)))
    taus = list(np.linspace(0.0, 1.0, 6))
    oracle_curve = precision_coverage_curve(oracle_scored, gt, mesh, JAW, taus)
    random_curve = precision_coverage_curve(random_scored, gt, mesh, JAW, taus)
    assert 0.0 <= random_curve.auc <= oracle_curve.auc <= 1.0
    for _, p, c in oracle_curve.points:
        assert 0.0 <= p <= 1.0 and 0.0 <= c <= 1.0
    with pytest.raises(InvalidInput):
        precision_coverage_curve(oracle_scored, gt, mesh, JAW, [0.5, 0.1])


def test_assignment_3x3_enumerated_case():
    cost = np.array([[1.0, 2.0, 3.0], [2.0, 1.0, 3.0], [3.0, 3.0, 1.0]])
    rows, cols = solve_assignment(cost)
    total = float(cost[rows, cols].sum())
    assert total == 3.0
    assert total == brute_force_assignment(cost)
    assert total / 3.0 == 1.0


def test_assignment_matches_enumeration_on_random_matrices():
    rng = np.random.default_rng(12)
    for n in (2, 3, 4, 5, 6, 7):
        cost = rng.uniform(0, 10, size=(n, n))
        rows, cols = solve_assignment(cost)
        assert abs(float(cost[rows, cols].sum()) - brute_force_assignment(cost)) < 1e-9


def test_emd_identity_is_zero():
    s = random_set(60, 21)
    assert emd(s, s, n_sub=60, repeats=2, seed=0) == 0.0


def test_emd_translated_set():
    s = random_set(80, 22)
    shifted = LabeledGraspSet(
        "t", "parallel_jaw", s.rotations, s.translations + [0.05, 0, 0], s.labels
    )
    val = emd(s, shifted, n_sub=80, repeats=1, seed=0)
    assert abs(val - 0.05) < 1e-9


def test_emd_symmetric_at_full_subsample():
    a, b = random_set(50, 23), random_set(50, 24)
    ab = emd(a, b, n_sub=50, repeats=1, seed=5)
    ba = emd(b, a, n_sub=50, repeats=1, seed=5)
    assert abs(ab - ba) < 1e-12
    assert ab >= 0.0


def test_emd_subsample_clipping_and_validation():
    a, b = random_set(30, 25), random_set(10, 26)
    v = emd(a, b, n_sub=500, repeats=2, seed=1)
    assert v > 0
    with pytest.raises(InvalidInput):
        emd(a, LabeledGraspSet("e", "parallel_jaw", np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0, dtype=bool)))


def test_emd_report_aggregates():
    a = {"o1": random_set(20, 27), "o2": random_set(20, 28)}
    b = {"o1": random_set(20, 29), "o2": random_set(20, 30)}
    rep = emd_report(a, b, n_sub=20, repeats=2, seed=0)
    assert set(rep.per_object) == {"o1", "o2"}
    assert abs(rep.aggregate_mean - np.mean(list(rep.per_object.values()))) < 1e-12


def test_pairwise_cost_agrees_with_pose_distance():
    from graspkit.se3_core import pose_distance

    a, b = random_set(12, 31), random_set(15, 32)
    cost = pairwise_pose_cost(a, b)
    for i in (0, 5, 11):
        for j in (0, 7, 14):
            assert abs(cost[i, j] - pose_distance(a.pose(i), b.pose(j))) < 1e-12


def test_binary_auc_against_pair_counting():
    rng = np.random.default_rng(40)
    scores = rng.uniform(size=200)
    labels = rng.uniform(size=200) < 0.3
    fast = binary_auc(scores, labels)
    pos = scores[labels]
    neg = scores[~labels]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    slow = wins / (len(pos) * len(neg))
    assert abs(fast - slow) < 1e-12
    assert binary_auc([0.9, 0.8, 0.1, 0.2], [True, True, False, False]) == 1.0
    with pytest.raises(InvalidInput):
        binary_auc([0.5, 0.6], [True, True])


class _FakeObj:
    def __init__(self, mesh, object_id="f0"):
        self.mesh = mesh
        self.object_id = object_id


def test_tuning_sweep_rows_and_sentinel(tmp_path):
    mesh = make_primitive("cylinder", {"radius": 0.03, "height": 0.1}, resolution=16)
    obj = _FakeObj(mesh)
    good = GraspPose(SIDE_R, [0, 0, 0])
    rng = np.random.default_rng(50)

    def sample_fn(o, batch, seed):
        return [good] * batch

    def score_fn(o, grasps):
        return np.linspace(0.1, 0.9, len(grasps))

    rows = tuning_sweep(sample_fn, score_fn, [obj], JAW, [4, 8], [0.0, 0.5, 0.95, 1.0])
    by_key = {(r["batch"], r["threshold"]): r for r in rows}
    assert by_key[(4, 0.0)]["retained"] == 4
    assert by_key[(8, 0.0)]["retained"] == 8
    assert by_key[(4, 1.0)]["retained"] == 0 and by_key[(4, 1.0)]["precision"] is None
    # monotone retained counts at fixed batch
    for b in (4, 8):
        retained = [by_key[(b, t)]["retained"] for t in (0.0, 0.5, 0.95, 1.0)]
        assert retained == sorted(retained, reverse=True)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(path, rows)
    text = path.read_text()
    assert "undefined" in text
    assert text.splitlines()[0] == "batch,threshold,retained,precision"
    with pytest.raises(InvalidInput):
        tuning_sweep(sample_fn, score_fn, [obj], JAW, [], [0.5])


def test_metric_csv_sentinel(tmp_path):
    path = tmp_path / "m.csv"
    write_metric_csv(path, [("coverage", "o1", 0.5), ("precision", "o1", None)])
    lines = path.read_text().splitlines()
    assert lines[1] == "coverage,o1,0.5"
    assert lines[2] == "precision,o1,undefined"
