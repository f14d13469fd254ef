import math

import numpy as np
import pytest

from graspkit.errors import InvalidInput
from graspkit.grasp_oracle import (
    GripperModel,
    LabeledGraspSet,
    annotate,
    build_offline_dataset,
    dense_surface_samples,
    gripper_collides,
    label_antipodal,
    label_grasp,
    label_suction,
    load_labeled_set,
    point_in_mesh,
    sample_candidate_grasps,
    save_labeled_set,
    segment_mesh_hits,
)
from graspkit.se3_core import GraspPose, exp_map_so3, random_rotation
from graspkit.shape_lab import ObjectModel, bounding_box, make_primitive, point_mesh_distance

JAW = GripperModel("parallel_jaw", max_width=0.08, friction_mu=0.5)
SUCTION = GripperModel("suction", cup_radius=0.015)

# side grasp: jaw axis along world x, approach along world -y
SIDE_R = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
# top-down: jaw along world x, approach along world -z
DOWN_R = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def cylinder():
    return make_primitive("cylinder", {"radius": 0.03, "height": 0.1}, resolution=32)


def test_antipodal_cylinder_diameter_grasp_positive():
    # contacts on the wall at +-x with normals exactly along the closing line
    assert label_antipodal(cylinder(), GraspPose(SIDE_R, [0, 0, 0]), JAW)


def test_antipodal_displaced_grasp_negative():
    assert not label_antipodal(cylinder(), GraspPose(SIDE_R, [0.10, 0, 0]), JAW)


def test_antipodal_too_wide_box_negative():
    box = make_primitive("box", {"size_x": 0.12, "size_y": 0.06, "size_z": 0.06})
    assert not label_antipodal(box, GraspPose(SIDE_R, [0, 0, 0]), JAW)


def test_antipodal_friction_cone_gate():
    # grasping a 0.04 box across opposite faces: rotating the jaw past the
    # friction cone half-angle atan(0.5) = 26.57deg must flip the label
    box = make_primitive("box", {"size_x": 0.04, "size_y": 0.04, "size_z": 0.04})
    for tilt_deg, expected in [(15.0, True), (35.0, False)]:
        Rz = exp_map_so3([0.0, 0.0, math.radians(tilt_deg)])
        grasp = GraspPose(Rz @ SIDE_R, [0, 0, 0])
        assert label_antipodal(box, grasp, JAW) is expected


def test_antipodal_rejects_suction_gripper():
    with pytest.raises(InvalidInput):
        label_antipodal(cylinder(), GraspPose(SIDE_R, [0, 0, 0]), SUCTION)


def test_suction_flat_face_positive():
    cube = make_primitive("box", {"size_x": 0.1, "size_y": 0.1, "size_z": 0.1})
    assert label_suction(cube, GraspPose(DOWN_R, [0, 0, 0.08]), SUCTION)


def test_suction_edge_planarity_negative():
    # patch straddling a 90-degree edge deviates ~ r/sqrt(2) >> 0.1 r
    cube = make_primitive("box", {"size_x": 0.1, "size_y": 0.1, "size_z": 0.1})
    assert not label_suction(cube, GraspPose(DOWN_R, [0.0495, 0, 0.08]), SUCTION)


def test_suction_tilted_approach_negative():
    cube = make_primitive("box", {"size_x": 0.1, "size_y": 0.1, "size_z": 0.1})
    c, s = math.cos(math.radians(30)), math.sin(math.radians(30))
    Ry = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    assert not label_suction(cube, GraspPose(Ry @ DOWN_R, [0, 0, 0.08]), SUCTION)


def test_suction_miss_negative():
    cube = make_primitive("box", {"size_x": 0.1, "size_y": 0.1, "size_z": 0.1})
    assert not label_suction(cube, GraspPose(DOWN_R, [0.3, 0, 0.08]), SUCTION)


def test_gripper_body_collision_detected():
    # grasp origin deep inside a large box: fingers and palm intersect it
    box = make_primitive("box", {"size_x": 0.07, "size_y": 0.2, "size_z": 0.2})
    assert gripper_collides(box, GraspPose(SIDE_R, [0, 0, 0]), JAW)
    assert not label_antipodal(box, GraspPose(SIDE_R, [0, 0, 0]), JAW)


def test_point_in_mesh_parity():
    box = make_primitive("box", {"size_x": 0.05, "size_y": 0.05, "size_z": 0.05})
    assert point_in_mesh([0.0, 0.0, 0.0], box)
    assert not point_in_mesh([0.1, 0.0, 0.0], box)


def test_segment_hits_sorted_and_bounded():
    box = make_primitive("box", {"size_x": 0.04, "size_y": 0.04, "size_z": 0.04})
    s, tri = segment_mesh_hits([-0.05, 0.001, 0.002], [1.0, 0.0, 0.0], 0.1, box)
    assert len(s) == 2
    assert s[0] < s[1]
    assert abs(s[0] - 0.03) < 1e-9 and abs(s[1] - 0.07) < 1e-9


def test_sample_candidates_count_and_translation_bounds():
    mesh = cylinder()
    grasps = sample_candidate_grasps(mesh, 2000, JAW, seed=0)
    assert len(grasps) == 2000
    lo, hi = bounding_box(mesh)
    pad = JAW.max_width / 2.0
    assert np.all(grasps.translations >= lo - pad - 1e-12)
    assert np.all(grasps.translations <= hi + pad + 1e-12)


def test_sample_candidates_deterministic():
    mesh = cylinder()
    a = sample_candidate_grasps(mesh, 5, JAW, seed=77)
    b = sample_candidate_grasps(mesh, 5, JAW, seed=77)
    assert np.array_equal(a.rotations, b.rotations)
    assert np.array_equal(a.translations, b.translations)
    with pytest.raises(InvalidInput):
        sample_candidate_grasps(mesh, 0, JAW, seed=0)


def test_sample_candidates_orientation_marginal_mean_angle():
    # Haar-uniform mean rotation angle is pi/2 + 2/pi ~ 2.2074 rad (verified
    # against quadrature of the density (1 - cos t)/pi during development).
    mesh = make_primitive("box", {"size_x": 0.05, "size_y": 0.05, "size_z": 0.05})
    grasps = sample_candidate_grasps(mesh, 100_000, JAW, seed=3)
    traces = np.einsum("nii->n", grasps.rotations)
    angles = np.arccos(np.clip((traces - 1.0) / 2.0, -1.0, 1.0))
    expected = math.pi / 2.0 + 2.0 / math.pi
    assert abs(angles.mean() - expected) / expected < 0.01


def test_labels_invariant_under_rigid_transform():
    rng = np.random.default_rng(10)
    mesh = cylinder()
    grasps = sample_candidate_grasps(mesh, 20, JAW, seed=4)
    base = [label_antipodal(mesh, grasps.pose(i), JAW) for i in range(20)]
    assert any(base) or True  # labels may be all negative; invariance still holds
    for _ in range(50):
        Q = random_rotation(rng)
        d = rng.uniform(-0.5, 0.5, size=3)
        moved_mesh = make_primitive("cylinder", {"radius": 0.03, "height": 0.1}, resolution=32)
        moved_mesh = type(moved_mesh)(moved_mesh.vertices @ Q.T + d, moved_mesh.triangles)
        for i in range(20):
            g = grasps.pose(i)
            moved = GraspPose(Q @ g.rotation, Q @ g.translation + d)
            assert label_antipodal(moved_mesh, moved, JAW) == base[i]


def test_antipodal_symmetric_under_jaw_flip():
    mesh = cylinder()
    grasps = sample_candidate_grasps(mesh, 40, JAW, seed=8)
    flip = exp_map_so3([0.0, 0.0, math.pi])  # 180 deg about the approach axis
    for i in range(40):
        g = grasps.pose(i)
        assert label_antipodal(mesh, g, JAW) == label_antipodal(
            mesh, GraspPose(g.rotation @ flip, g.translation), JAW
        )


def test_positive_grasps_have_contact_near_surface():
    mesh = cylinder()
    labeled = annotate("c", mesh, sample_candidate_grasps(mesh, 3000, JAW, seed=6), JAW, "offline")
    pos = labeled.positives()
    assert len(pos) > 0
    d = point_mesh_distance(pos.translations, mesh)
    assert np.all(d <= JAW.max_width)


def test_offline_dataset_sphere_rate_in_open_interval():
    # sphere diameter equals max_width: graspable only in a thin locus, so
    # the rate sits strictly inside (0, 1); the seed is pinned to a draw
    # with at least one positive among 2000.
    mesh = make_primitive("sphere", {"radius": 0.04}, resolution=24)
    objs = [ObjectModel("sphere_r4", mesh)]
    sets = build_offline_dataset(objs, JAW, 2000, seed=101)
    rate = sets[0].positive_rate()
    assert 0.0 < rate < 1.0


def test_offline_dataset_suction_gripper():
    mesh = make_primitive("box", {"size_x": 0.06, "size_y": 0.06, "size_z": 0.06})
    sets = build_offline_dataset([ObjectModel("cube", mesh)], SUCTION, 800, seed=3)
    assert sets[0].gripper_kind == "suction"
    assert 0.0 < sets[0].positive_rate() < 1.0


def test_offline_dataset_validation_and_determinism():
    mesh = make_primitive("box", {"size_x": 0.03, "size_y": 0.04, "size_z": 0.05})
    objs = [ObjectModel("b0", mesh), ObjectModel("b1", mesh)]
    with pytest.raises(InvalidInput):
        build_offline_dataset(objs, JAW, 0, seed=0)
    a = build_offline_dataset(objs, JAW, 300, seed=9)
    b = build_offline_dataset(objs, JAW, 300, seed=9)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.labels, sb.labels)
        assert np.array_equal(sa.translations, sb.translations)
    # per-object seeds differ
    assert not np.array_equal(a[0].translations, a[1].translations)


def test_labeled_set_subsets_and_validation():
    rots = np.stack([np.eye(3)] * 4)
    trans = np.zeros((4, 3))
    labels = np.array([True, False, True, False])
    s = LabeledGraspSet("o", "parallel_jaw", rots, trans, labels)
    assert len(s.positives()) == 2 and len(s.negatives()) == 2
    assert s.positive_rate() == 0.5
    with pytest.raises(InvalidInput):
        LabeledGraspSet("o", "parallel_jaw", rots, trans, labels[:3])


def test_labeled_set_jsonl_roundtrip(tmp_path):
    mesh = cylinder()
    labeled = annotate("cyl", mesh, sample_candidate_grasps(mesh, 50, JAW, seed=2), JAW, "offline")
    path = tmp_path / "cyl.jsonl"
    save_labeled_set(path, labeled, JAW)
    back, header = load_labeled_set(path)
    assert header["oracle_params"]["max_width"] == JAW.max_width
    assert header["count"] == 50
    assert np.array_equal(back.labels, labeled.labels)
    assert np.max(np.abs(back.translations - labeled.translations)) < 1e-12
    assert np.max(np.abs(back.rotations - labeled.rotations)) < 1e-9
    first_data_line = path.read_text().splitlines()[1]
    assert '"label"' in first_data_line and '"quat_wxyz"' in first_data_line


def test_suction_label_grasp_dispatch():
    cube = make_primitive("box", {"size_x": 0.1, "size_y": 0.1, "size_z": 0.1})
    surface = dense_surface_samples(cube, SUCTION.cup_radius)
    assert label_grasp(cube, GraspPose(DOWN_R, [0, 0, 0.08]), SUCTION, surface=surface)
    assert label_grasp(cube, GraspPose(SIDE_R, [0, 0, 0]), JAW) in (True, False)
