"""Analytic grasp labeling and uniform candidate sampling.

Parallel-jaw labels follow the antipodal + friction-cone + body-clearance
test; suction labels follow a seal-quality test (ray hit, local planarity,
approach/normal alignment). Both are deterministic, so the same oracle
serves offline dataset construction and on-generator annotation.

Gripper frame convention: the closing line runs along +x through the origin
(the point midway between the fingertips), the approach direction is +z
(the gripper moves toward the object along it), fingers occupy
z in [-finger_depth, 0].
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InvalidInput
from .se3_core import GraspPose, pose_from_record, pose_to_record, random_rotation
from .shape_lab import (
    PointCloud,
    TriangleMesh,
    bounding_box,
    sample_surface,
    surface_area,
    triangle_corners,
    triangle_normals,
)

log = logging.getLogger(__name__)

# fixed finger/palm body dimensions for the clearance check (meters)
FINGER_THICKNESS = 0.010
FINGER_BREADTH = 0.020
PALM_DEPTH = 0.020
COLLISION_INFLATION = 0.001  # conservative 1 mm

SUCTION_MAX_TILT_DEG = 15.0
SUCTION_PLANARITY_FACTOR = 0.1  # max deviation <= factor * cup_radius
_SUCTION_MIN_PATCH_POINTS = 8


@dataclass(frozen=True)
class GripperModel:
    kind: str = "parallel_jaw"
    max_width: float = 0.08
    finger_depth: float = 0.05
    friction_mu: float = 0.5
    cup_radius: float = 0.015
    approach_axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("parallel_jaw", "suction"):
            raise InvalidInput(f"unknown gripper kind {self.kind!r}")
        if self.kind == "parallel_jaw" and self.max_width <= 0:
            raise InvalidInput("max_width must be positive")
        if self.kind == "suction" and self.cup_radius <= 0:
            raise InvalidInput("cup_radius must be positive")
        if self.friction_mu <= 0:
            raise InvalidInput("friction_mu must be positive")


@dataclass
class LabeledGraspSet:
    """Per-object grasp poses with binary success labels.

    Stored as stacked arrays: rotations (N, 3, 3), translations (N, 3),
    labels (N,) bool with True = positive.
    """

    object_id: str
    gripper_kind: str
    rotations: np.ndarray = field(repr=False)
    translations: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    provenance: str = "offline"

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 3, 3)
        self.translations = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=bool).reshape(-1)
        n = len(self.rotations)
        if len(self.translations) != n or len(self.labels) != n:
            raise InvalidInput("grasps and labels must have equal lengths")

    def __len__(self):
        return len(self.labels)

    def pose(self, i: int) -> GraspPose:
        return GraspPose(self.rotations[i], self.translations[i])

    def poses(self):
        return [self.pose(i) for i in range(len(self))]

    def subset(self, mask) -> "LabeledGraspSet":
        mask = np.asarray(mask)
        return LabeledGraspSet(
            self.object_id,
            self.gripper_kind,
            self.rotations[mask],
            self.translations[mask],
            self.labels[mask],
            self.provenance,
        )

    def positives(self) -> "LabeledGraspSet":
        return self.subset(self.labels)

    def negatives(self) -> "LabeledGraspSet":
        return self.subset(~self.labels)

    def positive_rate(self) -> float:
        return float(self.labels.mean()) if len(self) else 0.0


# ---------------------------------------------------------------------------
# Geometry helpers
# ---------------------------------------------------------------------------


def segment_mesh_hits(origin, direction, length, mesh: TriangleMesh):
    """All intersections of a segment with the mesh: returns (s, tri_idx)
    sorted by distance along the segment, s in [0, length]."""
    a, b, c = triangle_corners(mesh)
    e1, e2 = b - a, c - a
    d = np.asarray(direction, dtype=np.float64)
    o = np.asarray(origin, dtype=np.float64)
    p = np.cross(d, e2)
    det = np.einsum("tk,tk->t", p, e1)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s_vec = o - a
    u = np.einsum("tk,tk->t", s_vec, p) * inv
    q = np.cross(s_vec, e1)
    v = (q @ d) * inv
    t = np.einsum("tk,tk->t", q, e2) * inv
    ok &= (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1.0 + 1e-12)
    ok &= (t >= -1e-12) & (t <= length + 1e-12)
    idx = np.nonzero(ok)[0]
    order = np.argsort(t[idx])
    return t[idx][order], idx[order]


def point_in_mesh(point, mesh: TriangleMesh) -> bool:
    """Crossing-parity containment test along a fixed generic direction."""
    direction = np.array([0.57735026919, 0.57735026919, 0.57735026919])
    lo, hi = bounding_box(mesh)
    length = float(np.linalg.norm(hi - lo)) * 2.0 + 1.0
    s, _ = segment_mesh_hits(point, direction, length, mesh)
    # collapse duplicate hits at shared edges
    if len(s) > 1:
        s = s[np.concatenate([[True], np.diff(s) > 1e-12])]
    return len(s) % 2 == 1


def triangles_intersecting_aabb(va, vb, vc, lo, hi) -> np.ndarray:
    """Separating-axis triangle/AABB overlap test, vectorized over triangles."""
    center = (lo + hi) / 2.0
    h = (hi - lo) / 2.0
    a, b, c = va - center, vb - center, vc - center
    sep = np.zeros(len(a), dtype=bool)

    # box face axes
    for ax in range(3):
        mn = np.minimum(np.minimum(a[:, ax], b[:, ax]), c[:, ax])
        mx = np.maximum(np.maximum(a[:, ax], b[:, ax]), c[:, ax])
        sep |= (mn > h[ax]) | (mx < -h[ax])

    # triangle normal axis
    n = np.cross(b - a, c - a)
    r = np.abs(n) @ h
    d = np.einsum("tk,tk->t", n, a)
    sep |= (d > r) | (d < -r)

    # nine edge cross products
    units = np.eye(3)
    for f in (b - a, c - b, a - c):
        for u in units:
            axis = np.cross(np.broadcast_to(u, f.shape), f)
            r = np.abs(axis) @ h
            pa = np.einsum("tk,tk->t", axis, a)
            pb = np.einsum("tk,tk->t", axis, b)
            pc = np.einsum("tk,tk->t", axis, c)
            mn = np.minimum(np.minimum(pa, pb), pc)
            mx = np.maximum(np.maximum(pa, pb), pc)
            sep |= (mn > r) | (mx < -r)
    return ~sep


def _gripper_body_boxes(gripper: GripperModel):
    w2 = gripper.max_width / 2.0
    ft, fb, fd, pd = FINGER_THICKNESS, FINGER_BREADTH, gripper.finger_depth, PALM_DEPTH
    return (
        (np.array([w2, -fb / 2, -fd]), np.array([w2 + ft, fb / 2, 0.0])),
        (np.array([-w2 - ft, -fb / 2, -fd]), np.array([-w2, fb / 2, 0.0])),
        (np.array([-w2 - ft, -fb / 2, -fd - pd]), np.array([w2 + ft, fb / 2, -fd])),
    )


def gripper_collides(mesh: TriangleMesh, grasp: GraspPose, gripper: GripperModel) -> bool:
    """True when any body box (fingers open, palm) touches the mesh, with a
    1 mm conservative inflation. Containment of a box fully inside the mesh
    counts as collision."""
    local = (mesh.vertices - grasp.translation) @ grasp.rotation
    local_mesh_tris = mesh.triangles
    va, vb, vc = (
        local[local_mesh_tris[:, 0]],
        local[local_mesh_tris[:, 1]],
        local[local_mesh_tris[:, 2]],
    )
    for lo, hi in _gripper_body_boxes(gripper):
        lo_inf, hi_inf = lo - COLLISION_INFLATION, hi + COLLISION_INFLATION
        if triangles_intersecting_aabb(va, vb, vc, lo_inf, hi_inf).any():
            return True
        box_center_world = grasp.rotation @ ((lo + hi) / 2.0) + grasp.translation
        if point_in_mesh(box_center_world, mesh):
            return True
    return False


# ---------------------------------------------------------------------------
# Labeling oracles
# ---------------------------------------------------------------------------


def label_antipodal(mesh: TriangleMesh, grasp: GraspPose, gripper: GripperModel) -> bool:
    """Parallel-jaw success test.

    Positive iff the closing segment (length max_width, centered on the
    grasp origin, along the jaw axis) crosses the surface in an opposing
    contact pair, both contact normals lie inside the friction cone of the
    closing direction, and the gripper body stays clear of the mesh.
    Assumes outward-consistent winding (all primitive generators guarantee
    it).
    """
    if gripper.kind != "parallel_jaw":
        raise InvalidInput("label_antipodal requires a parallel_jaw gripper")
    jaw_dir = grasp.rotation[:, 0]
    half = gripper.max_width / 2.0
    start = grasp.translation - half * jaw_dir
    s, tri = segment_mesh_hits(start, jaw_dir, gripper.max_width, mesh)
    if len(s) < 2:
        return False
    normals = triangle_normals(mesh)
    n_lo = normals[tri[0]]
    n_hi = normals[tri[-1]]
    separation = s[-1] - s[0]
    if separation <= 1e-9 or separation > gripper.max_width + 1e-12:
        return False
    # outer contacts must face the fingers
    cos_cone = math.cos(math.atan(gripper.friction_mu))
    if float(n_lo @ jaw_dir) > -cos_cone:  # must point towards -x finger
        return False
    if float(n_hi @ jaw_dir) < cos_cone:  # must point towards +x finger
        return False
    return not gripper_collides(mesh, grasp, gripper)


def label_suction(
    mesh: TriangleMesh,
    grasp: GraspPose,
    gripper: GripperModel,
    surface: PointCloud | None = None,
) -> bool:
    """Suction seal test.

    Positive iff the approach ray hits the mesh, the surface patch within
    cup_radius of the hit deviates from its best-fit plane by at most
    0.1 * cup_radius, and the approach axis is within 15 degrees of the
    surface normal. `surface` may carry precomputed dense surface samples
    (otherwise a deterministic sampling is drawn per call).
    """
    if gripper.kind != "suction":
        raise InvalidInput("label_suction requires a suction gripper")
    approach = grasp.rotation @ np.asarray(gripper.approach_axis, dtype=np.float64)
    lo, hi = bounding_box(mesh)
    length = float(np.linalg.norm(hi - lo)) + 2.0 * float(
        np.linalg.norm(grasp.translation - (lo + hi) / 2.0)
    )
    s, tri = segment_mesh_hits(grasp.translation, approach, length, mesh)
    if len(s) == 0:
        return False
    hit = grasp.translation + s[0] * approach
    normal = triangle_normals(mesh)[tri[0]]
    if float(normal @ (-approach)) < math.cos(math.radians(SUCTION_MAX_TILT_DEG)):
        return False
    if surface is None:
        surface = dense_surface_samples(mesh, gripper.cup_radius)
    patch = surface.points[
        np.linalg.norm(surface.points - hit, axis=1) <= gripper.cup_radius
    ]
    if len(patch) < _SUCTION_MIN_PATCH_POINTS:
        return False
    centered = patch - patch.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    deviation = np.abs(centered @ vt[-1])
    return float(deviation.max()) <= SUCTION_PLANARITY_FACTOR * gripper.cup_radius


def dense_surface_samples(mesh: TriangleMesh, cup_radius: float) -> PointCloud:
    """Deterministic dense sampling sized so a cup-radius disk holds a few
    hundred points."""
    area = surface_area(mesh)
    disk = math.pi * cup_radius**2
    n = int(min(200_000, max(4096, math.ceil(area / disk) * 256)))
    return sample_surface(mesh, n, seed=714025)


def label_grasp(
    mesh: TriangleMesh,
    grasp: GraspPose,
    gripper: GripperModel,
    surface: PointCloud | None = None,
) -> bool:
    if gripper.kind == "parallel_jaw":
        return label_antipodal(mesh, grasp, gripper)
    return label_suction(mesh, grasp, gripper, surface=surface)


# ---------------------------------------------------------------------------
# Candidate sampling and dataset construction
# ---------------------------------------------------------------------------


def proposal_inflation(gripper: GripperModel) -> float:
    """Total bounding-box growth per axis for proposal sampling.

    max_width for a jaw (half of it per side: any grasp whose contacts fall
    inside the closing segment has its origin within max_width/2 of the
    surface), 2 * cup_radius for suction.
    """
    return gripper.max_width if gripper.kind == "parallel_jaw" else 2.0 * gripper.cup_radius


def sample_candidate_grasps(
    mesh: TriangleMesh, n: int, gripper: GripperModel, seed: int
) -> LabeledGraspSet:
    """n proposals: translations uniform in the inflated bounding box,
    orientations uniform on SO(3). Labels are left all-negative; callers
    annotate with the oracle."""
    if n < 1:
        raise InvalidInput("candidate count must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = bounding_box(mesh)
    pad = proposal_inflation(gripper) / 2.0
    translations = rng.uniform(lo - pad, hi + pad, size=(n, 3))
    rotations = np.stack([random_rotation(rng) for _ in range(n)])
    return LabeledGraspSet(
        "candidates", gripper.kind, rotations, translations, np.zeros(n, dtype=bool), "proposal"
    )


def annotate(
    object_id: str,
    mesh: TriangleMesh,
    candidates: LabeledGraspSet,
    gripper: GripperModel,
    provenance: str,
) -> LabeledGraspSet:
    surface = dense_surface_samples(mesh, gripper.cup_radius) if gripper.kind == "suction" else None
    labels = np.zeros(len(candidates), dtype=bool)
    for i in range(len(candidates)):
        labels[i] = label_grasp(mesh, candidates.pose(i), gripper, surface=surface)
    return LabeledGraspSet(
        object_id, gripper.kind, candidates.rotations, candidates.translations, labels, provenance
    )


def build_offline_dataset(objects, gripper: GripperModel, n_per_object: int, seed: int):
    """One labeled set per object with per-object derived seeds; objects with
    zero positives are flagged in the log and retained."""
    if n_per_object < 1:
        raise InvalidInput("n_per_object must be >= 1")
    sets = []
    for i, obj in enumerate(objects):
        child_seed = int(np.random.SeedSequence((seed, i)).generate_state(1)[0])
        candidates = sample_candidate_grasps(obj.mesh, n_per_object, gripper, child_seed)
        labeled = annotate(obj.object_id, obj.mesh, candidates, gripper, "offline")
        rate = labeled.positive_rate()
        log.info("object %s: positive rate %.4f", obj.object_id, rate)
        if rate == 0.0:
            log.warning("object %s has zero positive grasps (retained)", obj.object_id)
        sets.append(labeled)
    return sets


# ---------------------------------------------------------------------------
# Line-delimited JSON persistence
# ---------------------------------------------------------------------------

GRASP_SET_FORMAT_VERSION = 1


def save_labeled_set(path, grasp_set: LabeledGraspSet, gripper: GripperModel):
    header = {
        "format_version": GRASP_SET_FORMAT_VERSION,
        "kind": "labeled_grasp_set",
        "object_id": grasp_set.object_id,
        "gripper": grasp_set.gripper_kind,
        "provenance": grasp_set.provenance,
        "count": len(grasp_set),
        "oracle_params": asdict(gripper),
    }
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(len(grasp_set)):
            rec = {
                "object_id": grasp_set.object_id,
                "gripper": grasp_set.gripper_kind,
                **pose_to_record(grasp_set.pose(i)),
                "label": "positive" if grasp_set.labels[i] else "negative",
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_labeled_set(path):
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("kind") != "labeled_grasp_set":
            raise InvalidInput(f"{path}: not a labeled grasp set file")
        if header.get("format_version") != GRASP_SET_FORMAT_VERSION:
            raise InvalidInput(f"{path}: unsupported format version")
        rotations, translations, labels = [], [], []
        for line in f:
            rec = json.loads(line)
            pose = pose_from_record(rec)
            rotations.append(pose.rotation)
            translations.append(pose.translation)
            labels.append(rec["label"] == "positive")
    grasp_set = LabeledGraspSet(
        header["object_id"],
        header["gripper"],
        np.array(rotations),
        np.array(translations),
        np.array(labels),
        header.get("provenance", "offline"),
    )
    return grasp_set, header
