"""Parametric object meshes, surface/single-view point cloud sampling, and
the training-time cloud augmentations (mean centering, random orientation,
subsampling, segmentation-overshoot outliers).

All randomized operations are pure functions of (inputs, seed).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyView, InvalidInput
from .se3_core import random_rotation

DEGENERATE_AREA = 1e-12


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if v.shape[0] < 3 or t.shape[0] < 1:
            raise InvalidInput("mesh needs at least 3 vertices and 1 triangle")
        if not np.all(np.isfinite(v)):
            raise InvalidInput("mesh vertices contain non-finite values")
        if t.min() < 0 or t.max() >= v.shape[0]:
            raise InvalidInput("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if np.any(triangle_areas(self) <= DEGENERATE_AREA):
            raise InvalidInput("mesh contains degenerate (zero-area) triangles")


def triangle_corners(mesh: TriangleMesh):
    v, t = mesh.vertices, mesh.triangles
    return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]


def triangle_areas(mesh: TriangleMesh) -> np.ndarray:
    a, b, c = triangle_corners(mesh)
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def triangle_normals(mesh: TriangleMesh) -> np.ndarray:
    a, b, c = triangle_corners(mesh)
    n = np.cross(b - a, c - a)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def surface_area(mesh: TriangleMesh) -> float:
    return float(triangle_areas(mesh).sum())


def mesh_volume(mesh: TriangleMesh) -> float:
    """Signed volume via the divergence theorem (positive for outward
    winding)."""
    a, b, c = triangle_corners(mesh)
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def is_watertight(mesh: TriangleMesh) -> bool:
    """Every undirected edge shared by exactly two triangles, with opposite
    directions (consistent winding)."""
    t = mesh.triangles
    directed = {}
    for tri in t:
        for e in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (int(e[0]), int(e[1]))
            directed[key] = directed.get(key, 0) + 1
    for (i, j), count in directed.items():
        if count != 1 or directed.get((j, i), 0) != 1:
            return False
    return True


def bounding_box(mesh: TriangleMesh):
    return mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)


def bounding_sphere(mesh: TriangleMesh):
    lo, hi = bounding_box(mesh)
    center = (lo + hi) / 2.0
    radius = float(np.max(np.linalg.norm(mesh.vertices - center, axis=1)))
    return center, radius


# ---------------------------------------------------------------------------
# Primitive generators
# ---------------------------------------------------------------------------


def _center_at_bbox(vertices, triangles) -> TriangleMesh:
    mesh = TriangleMesh(np.asarray(vertices, dtype=np.float64), triangles)
    lo, hi = bounding_box(mesh)
    return TriangleMesh(mesh.vertices - (lo + hi) / 2.0, mesh.triangles)


def _box(sx, sy, sz) -> TriangleMesh:
    hx, hy, hz = sx / 2.0, sy / 2.0, sz / 2.0
    v = np.array(
        [
            [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
            [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
        ]
    )
    t = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom (-z)
            [4, 5, 6], [4, 6, 7],  # top (+z)
            [0, 1, 5], [0, 5, 4],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [1, 2, 6], [1, 6, 5],  # +x
            [3, 0, 4], [3, 4, 7],  # -x
        ]
    )
    return _center_at_bbox(v, t)


def _cylinder(radius, height, segments) -> TriangleMesh:
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(segments, -height / 2.0)])
    top = np.column_stack([ring, np.full(segments, height / 2.0)])
    v = np.vstack([bottom, top, [[0.0, 0.0, -height / 2.0]], [[0.0, 0.0, height / 2.0]]])
    cb, ct = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris.append([i, j, segments + i])          # side lower
        tris.append([j, segments + j, segments + i])  # side upper
        tris.append([cb, j, i])                     # bottom cap (faces -z)
        tris.append([ct, segments + i, segments + j])  # top cap (faces +z)
    return _center_at_bbox(v, np.array(tris))


def _sphere(radius, segments) -> TriangleMesh:
    stacks = max(4, segments // 2)
    verts = [[0.0, 0.0, radius]]
    for s in range(1, stacks):
        phi = np.pi * s / stacks
        for m in range(segments):
            th = 2.0 * np.pi * m / segments
            verts.append(
                [
                    radius * math.sin(phi) * math.cos(th),
                    radius * math.sin(phi) * math.sin(th),
                    radius * math.cos(phi),
                ]
            )
    verts.append([0.0, 0.0, -radius])
    north, south = 0, len(verts) - 1

    def ring(s, m):
        return 1 + (s - 1) * segments + (m % segments)

    tris = []
    for m in range(segments):
        tris.append([north, ring(1, m), ring(1, m + 1)])
        tris.append([south, ring(stacks - 1, m + 1), ring(stacks - 1, m)])
    for s in range(1, stacks - 1):
        for m in range(segments):
            a, b = ring(s, m), ring(s, m + 1)
            c, d = ring(s + 1, m), ring(s + 1, m + 1)
            tris.append([a, d, b])
            tris.append([a, c, d])
    return _center_at_bbox(np.array(verts), np.array(tris))


def _capsule(radius, height, segments) -> TriangleMesh:
    """Cylinder of the given body height with hemispherical end caps."""
    cap_stacks = max(2, segments // 4)
    half = height / 2.0
    verts = [[0.0, 0.0, half + radius]]
    rings = []
    # upper hemisphere rings (top down), then lower hemisphere rings
    zs_and_rads = []
    for s in range(1, cap_stacks + 1):
        phi = (np.pi / 2.0) * s / cap_stacks
        zs_and_rads.append((half + radius * math.cos(phi), radius * math.sin(phi)))
    for s in range(cap_stacks - 1, -1, -1):
        phi = (np.pi / 2.0) * s / cap_stacks
        zs_and_rads.append((-half - radius * math.cos(phi), radius * math.sin(phi)))
    # the final entry has radius ~0 at the south pole; replace with the pole
    zs_and_rads = zs_and_rads[:-1]
    for z, r in zs_and_rads:
        base = len(verts)
        for m in range(segments):
            th = 2.0 * np.pi * m / segments
            verts.append([r * math.cos(th), r * math.sin(th), z])
        rings.append(base)
    verts.append([0.0, 0.0, -half - radius])
    north, south = 0, len(verts) - 1

    tris = []
    for m in range(segments):
        tris.append([north, rings[0] + m, rings[0] + (m + 1) % segments])
        tris.append([south, rings[-1] + (m + 1) % segments, rings[-1] + m])
    for r0, r1 in zip(rings[:-1], rings[1:]):
        for m in range(segments):
            a, b = r0 + m, r0 + (m + 1) % segments
            c, d = r1 + m, r1 + (m + 1) % segments
            tris.append([a, d, b])
            tris.append([a, c, d])
    return _center_at_bbox(np.array(verts), np.array(tris))


PRIMITIVE_KINDS = ("box", "cylinder", "sphere", "capped_composite")


def make_primitive(kind: str, params: dict, resolution: int = 32) -> TriangleMesh:
    """Watertight primitive centered at its bounding-box center.

    params by kind: box {size_x, size_y, size_z}; cylinder {radius, height};
    sphere {radius}; capped_composite {radius, height} (cylinder body height
    plus hemispherical caps).
    """
    if resolution < 8:
        raise InvalidInput("resolution must be >= 8 segments")
    if any(v <= 0 for v in params.values()):
        raise InvalidInput(f"{kind} dimensions must be positive: {params}")
    if kind == "box":
        return _box(params["size_x"], params["size_y"], params["size_z"])
    if kind == "cylinder":
        return _cylinder(params["radius"], params["height"], resolution)
    if kind == "sphere":
        return _sphere(params["radius"], resolution)
    if kind == "capped_composite":
        return _capsule(params["radius"], params["height"], resolution)
    raise InvalidInput(f"unknown primitive kind {kind!r}")


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray = field(repr=False)
    centroid: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if p.shape[0] < 1:
            raise InvalidInput("point cloud must contain at least one point")
        if not np.all(np.isfinite(p)):
            raise InvalidInput("point cloud contains non-finite values")
        c = self.centroid
        c = np.zeros(3) if c is None else np.asarray(c, dtype=np.float64).reshape(3)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "centroid", c)

    def __len__(self):
        return self.points.shape[0]


def mean_center(cloud: PointCloud) -> PointCloud:
    """Shift points to zero mean; the accumulated offset is kept in
    `centroid` so repeated centering is a no-op beyond float round-off."""
    mean = cloud.points.mean(axis=0)
    return PointCloud(cloud.points - mean, cloud.centroid + mean)


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> PointCloud:
    """Area-weighted uniform surface samples, deterministic per seed."""
    if n < 1:
        raise InvalidInput("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    areas = triangle_areas(mesh)
    tri_idx = rng.choice(len(areas), size=n, p=areas / areas.sum())
    a, b, c = triangle_corners(mesh)
    u = rng.uniform(size=(n, 1))
    v = rng.uniform(size=(n, 1))
    flip = (u + v) > 1.0
    u = np.where(flip, 1.0 - u, u)
    v = np.where(flip, 1.0 - v, v)
    pts = (1.0 - u - v) * a[tri_idx] + u * b[tri_idx] + v * c[tri_idx]
    return PointCloud(pts)


def ray_hits(origins, dirs, mesh: TriangleMesh, t_min=1e-9):
    """First intersection per ray against all triangles (Moller-Trumbore).

    Returns (hit_mask, hit_points, hit_t, tri_idx). Vectorized over rays and
    triangles; fine at desk scale.
    """
    a, b, c = triangle_corners(mesh)
    e1 = b - a
    e2 = c - a
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    R, T = origins.shape[0], a.shape[0]
    best_t = np.full(R, np.inf)
    best_tri = np.full(R, -1, dtype=np.int64)
    chunk = max(1, int(2_000_000 // max(T, 1)))
    for lo in range(0, R, chunk):
        o = origins[lo : lo + chunk][:, None, :]  # (r,1,3)
        d = dirs[lo : lo + chunk][:, None, :]
        p = np.cross(d, e2[None, :, :])
        det = np.einsum("rtk,tk->rt", p, e1)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = o - a[None, :, :]
        u = np.einsum("rtk,rtk->rt", s, p) * inv
        q = np.cross(s, e1[None, :, :])
        v = np.einsum("rtk,rk->rt", q, dirs[lo : lo + chunk]) * inv
        t = np.einsum("rtk,tk->rt", q, e2) * inv
        ok &= (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1.0 + 1e-12) & (t > t_min)
        t = np.where(ok, t, np.inf)
        idx = np.argmin(t, axis=1)
        rows = np.arange(t.shape[0])
        tbest = t[rows, idx]
        hit = np.isfinite(tbest)
        best_t[lo + rows[hit]] = tbest[hit]
        best_tri[lo + rows[hit]] = idx[hit]
    mask = best_tri >= 0
    pts = origins + best_t[:, None] * dirs
    return mask, pts, best_t, best_tri


def render_partial(mesh: TriangleMesh, camera_position, image_grid=(64, 64)) -> PointCloud:
    """Single-view cloud: a pinhole camera at `camera_position` looks at the
    mesh center; one point per grid ray that hits the mesh (nearest
    intersection), so every returned point is visible from the camera."""
    cam = np.asarray(camera_position, dtype=np.float64).reshape(3)
    center, radius = bounding_sphere(mesh)
    dist = float(np.linalg.norm(cam - center))
    if dist <= radius:
        raise InvalidInput("camera must be outside the mesh bounding sphere")
    W, H = image_grid
    fwd = (center - cam) / dist
    up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ up) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    up = np.cross(right, fwd)
    half_tan = math.tan(math.asin(min(1.0, radius / dist))) * 1.15
    xs = (np.arange(W) + 0.5) / W * 2.0 - 1.0
    ys = (np.arange(H) + 0.5) / H * 2.0 - 1.0
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    dirs = (
        fwd[None, :]
        + half_tan * (gx.reshape(-1, 1) * right[None, :] + gy.reshape(-1, 1) * up[None, :])
    )
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(cam, dirs.shape)
    mask, pts, _, _ = ray_hits(origins, dirs, mesh)
    if not mask.any():
        raise EmptyView("no grid ray hit the mesh")
    return PointCloud(pts[mask])


def point_mesh_distance(points, mesh: TriangleMesh) -> np.ndarray:
    """Unsigned distance from each point to the closest triangle."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    a, b, c = triangle_corners(mesh)
    best = np.full(pts.shape[0], np.inf)
    chunk = max(1, int(2_000_000 // max(a.shape[0], 1)))
    for lo in range(0, pts.shape[0], chunk):
        p = pts[lo : lo + chunk]
        d = _point_triangle_distance_block(p, a, b, c)
        best[lo : lo + chunk] = d.min(axis=1)
    return best


def _point_triangle_distance_block(p, a, b, c):
    # Ericson's closest-point-on-triangle, vectorized over (points, triangles)
    p = p[:, None, :]
    ab = (b - a)[None, :, :]
    ac = (c - a)[None, :, :]
    ap = p - a[None, :, :]
    d1 = np.einsum("ptk,ptk->pt", ab, ap)
    d2 = np.einsum("ptk,ptk->pt", ac, ap)
    bp = p - b[None, :, :]
    d3 = np.einsum("ptk,ptk->pt", ab, bp)
    d4 = np.einsum("ptk,ptk->pt", ac, bp)
    cp = p - c[None, :, :]
    d5 = np.einsum("ptk,ptk->pt", ab, cp)
    d6 = np.einsum("ptk,ptk->pt", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    # vertex a
    cond_a = (d1 <= 0) & (d2 <= 0)
    # vertex b
    cond_b = (d3 >= 0) & (d4 <= d3)
    # vertex c
    cond_c = (d6 >= 0) & (d5 <= d6)
    # edge ab
    v_ab = np.divide(d1, d1 - d3, out=np.zeros_like(d1), where=(d1 - d3) != 0)
    cond_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    # edge ac
    w_ac = np.divide(d2, d2 - d6, out=np.zeros_like(d2), where=(d2 - d6) != 0)
    cond_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    # edge bc
    w_bc = np.divide(
        d4 - d3, (d4 - d3) + (d5 - d6), out=np.zeros_like(d4), where=((d4 - d3) + (d5 - d6)) != 0
    )
    cond_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    # interior
    denom = va + vb + vc
    v_in = np.divide(vb, denom, out=np.zeros_like(vb), where=denom != 0)
    w_in = np.divide(vc, denom, out=np.zeros_like(vc), where=denom != 0)

    an, bn, cn = a[None, :, :], b[None, :, :], c[None, :, :]
    closest = an + v_in[..., None] * ab + w_in[..., None] * ac
    closest = np.where(cond_bc[..., None], bn + w_bc[..., None] * (cn - bn), closest)
    closest = np.where(cond_ac[..., None], an + w_ac[..., None] * ac, closest)
    closest = np.where(cond_ab[..., None], an + v_ab[..., None] * ab, closest)
    closest = np.where(cond_c[..., None], cn, closest)
    closest = np.where(cond_b[..., None], bn, closest)
    closest = np.where(cond_a[..., None], an, closest)
    return np.linalg.norm(p - closest, axis=2)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    random_so3: bool = False
    subsample_n: int | None = None
    viewpoint_count: int = 1
    outlier_fraction: float = 0.0
    outlier_offset: float = 0.02

    def __post_init__(self):
        if not (0.0 <= self.outlier_fraction <= 0.2):
            raise InvalidInput("outlier_fraction must be in [0, 0.2]")
        if self.subsample_n is not None and self.subsample_n < 1:
            raise InvalidInput("subsample_n must be >= 1 when set")
        if self.viewpoint_count < 1:
            raise InvalidInput("viewpoint_count must be >= 1")


def augment(cloud: PointCloud, cfg: AugmentConfig, mesh: TriangleMesh, seed: int) -> PointCloud:
    """Mean-center, optionally rotate by a uniform random rotation, subsample,
    then inject segmentation-overshoot outliers.

    Outliers sit on a support plane of the (identically transformed) mesh,
    pushed outward along the support direction, which guarantees each one is
    at least `outlier_offset` from the mesh surface.
    """
    rng = np.random.default_rng(seed)
    centered = mean_center(cloud)
    pts = centered.points
    shift = centered.centroid
    Q = np.eye(3)
    if cfg.random_so3:
        Q = random_rotation(rng)
        pts = pts @ Q.T
    if cfg.subsample_n is not None:
        if cfg.subsample_n > pts.shape[0]:
            raise InvalidInput("subsample_n exceeds source cloud size")
        pts = pts[rng.choice(pts.shape[0], size=cfg.subsample_n, replace=False)]
    n_out = math.ceil(cfg.outlier_fraction * pts.shape[0])
    if n_out > 0:
        # mesh vertices in the augmented cloud frame: `shift` is the total
        # accumulated offset from the mesh frame
        mv = (mesh.vertices - shift) @ Q.T
        dirs = rng.normal(size=(n_out, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        support = (mv @ dirs.T).max(axis=0)  # support function per direction
        anchors = pts[rng.integers(0, pts.shape[0], size=n_out)]
        lift = support + cfg.outlier_offset * (1.0 + 0.2 * rng.uniform(size=n_out))
        outliers = anchors + (lift - np.einsum("ij,ij->i", anchors, dirs))[:, None] * dirs
        pts = np.vstack([pts, outliers])
    return PointCloud(pts, shift)


@dataclass(frozen=True)
class ObjectModel:
    """A mesh plus the point-cloud variants used for training/eval."""

    object_id: str
    mesh: TriangleMesh
    clouds: tuple = ()


def make_object_suite(
    counts: dict,
    seed: int,
    size_range=(0.03, 0.07),
    cloud_points: int = 256,
    clouds_per_object: int = 8,
    cloud_mix_ratio: float = 0.5,
    resolution: int = 24,
    outlier_fraction: float = 0.0,
    outlier_offset: float = 0.02,
) -> list:
    """Deterministic desk-scale object suite.

    `counts` maps primitive kind to how many objects of that kind to create;
    sizes are drawn from `size_range` (meters). Each object carries
    `clouds_per_object` mean-centered training clouds of `cloud_points`
    points, of which a `cloud_mix_ratio` fraction are complete surface
    samples and the rest single-view renders from random upper-hemisphere
    viewpoints.
    """
    rng = np.random.default_rng(seed)
    objects = []
    idx = 0
    for kind, count in sorted(counts.items()):
        if kind not in PRIMITIVE_KINDS:
            raise InvalidInput(f"unknown primitive kind {kind!r}")
        for _ in range(count):
            lo, hi = size_range
            if kind == "box":
                params = {k: rng.uniform(lo, hi) for k in ("size_x", "size_y", "size_z")}
            elif kind == "cylinder":
                params = {"radius": rng.uniform(lo, hi) / 2.0, "height": rng.uniform(lo, hi) * 1.5}
            elif kind == "sphere":
                params = {"radius": rng.uniform(lo, hi) / 2.0}
            else:
                params = {"radius": rng.uniform(lo, hi) / 2.5, "height": rng.uniform(lo, hi)}
            mesh = make_primitive(kind, params, resolution=resolution)
            object_id = f"{kind}_{idx:03d}"
            clouds = _training_clouds(
                mesh,
                rng,
                n_points=cloud_points,
                n_clouds=clouds_per_object,
                mix_ratio=cloud_mix_ratio,
                outlier_fraction=outlier_fraction,
                outlier_offset=outlier_offset,
            )
            objects.append(ObjectModel(object_id, mesh, tuple(clouds)))
            idx += 1
    return objects


def _training_clouds(mesh, rng, n_points, n_clouds, mix_ratio, outlier_fraction, outlier_offset):
    """Complete/partial cloud pool, all mean-centered, mixing at the stated
    ratio (complete first, then partial views)."""
    n_complete = int(round(mix_ratio * n_clouds))
    _, radius = bounding_sphere(mesh)
    cfg = AugmentConfig(
        subsample_n=n_points, outlier_fraction=outlier_fraction, outlier_offset=outlier_offset
    )
    clouds = []
    for _ in range(n_complete):
        dense = sample_surface(mesh, n_points * 4, seed=int(rng.integers(2**63)))
        clouds.append(augment(dense, cfg, mesh, seed=int(rng.integers(2**63))))
    attempts = 0
    while len(clouds) < n_clouds and attempts < n_clouds * 20:
        attempts += 1
        # random viewpoint on the upper hemisphere at 3x the bounding radius
        az = rng.uniform(0.0, 2.0 * np.pi)
        el = rng.uniform(np.pi / 12.0, np.pi / 2.0)
        cam = 3.0 * radius * np.array(
            [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
        )
        try:
            view = render_partial(mesh, cam, image_grid=(48, 48))
        except EmptyView:
            continue
        if len(view) < n_points:
            continue
        clouds.append(augment(view, cfg, mesh, seed=int(rng.integers(2**63))))
    if len(clouds) < n_clouds:
        raise InvalidInput("could not render enough partial views for the cloud pool")
    return clouds


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

CLOUD_MAGIC = b"GGPC"
CLOUD_VERSION = 1


def save_mesh_off(path, mesh: TriangleMesh):
    with open(path, "w") as f:
        f.write("OFF\n")
        f.write(f"{len(mesh.vertices)} {len(mesh.triangles)} 0\n")
        for v in mesh.vertices:
            f.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def load_mesh_off(path) -> TriangleMesh:
    with open(path) as f:
        tokens = f.read().split()
    if tokens[0] != "OFF":
        raise InvalidInput("not an OFF file")
    nv, nt = int(tokens[1]), int(tokens[2])
    cursor = 4
    verts = np.array(tokens[cursor : cursor + 3 * nv], dtype=np.float64).reshape(nv, 3)
    cursor += 3 * nv
    tris = []
    for _ in range(nt):
        k = int(tokens[cursor])
        if k != 3:
            raise InvalidInput("only triangle faces supported")
        tris.append([int(x) for x in tokens[cursor + 1 : cursor + 4]])
        cursor += 4
    return TriangleMesh(verts, np.array(tris))


def save_cloud(path, cloud: PointCloud):
    """16-byte header (magic, version u32, N u64), centroid 3xf64, points."""
    with open(path, "wb") as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack("<IQ", CLOUD_VERSION, len(cloud)))
        f.write(np.asarray(cloud.centroid, dtype="<f8").tobytes())
        f.write(np.asarray(cloud.points, dtype="<f8", order="C").tobytes())


def load_cloud(path) -> PointCloud:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CLOUD_MAGIC:
            raise InvalidInput(f"bad cloud magic {magic!r}")
        version, n = struct.unpack("<IQ", f.read(12))
        if version != CLOUD_VERSION:
            raise InvalidInput(f"unsupported cloud version {version}")
        centroid = np.frombuffer(f.read(24), dtype="<f8").copy()
        pts = np.frombuffer(f.read(24 * n), dtype="<f8").reshape(n, 3).copy()
    return PointCloud(pts, centroid)
