"""Command-line orchestration of the full training recipe and evaluation.

Stages (gen-data, train-gen, build-ongen, train-disc, sample, eval, emd,
sweep, ablate-kappa, ablate-repr) read one INI config; each stage's output
directory is content-addressed by a hash of the config sections it depends
on plus its upstream stage hashes, so stale mixes of artifacts cannot be
loaded silently. A manifest records every stage's hash, artifacts, versions
and timestamps (the manifest is run metadata: it is the one file whose bytes
legitimately differ between identical reruns).

Exit codes: 0 ok, 2 config error, 3 missing upstream stage, 4 numeric
failure. All randomness flows from explicit config/CLI seeds. `GG_OUT_DIR`
overrides the configured output directory.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .diffusion_generator import (
    GeneratorConfig,
    load_generator,
    sample_grasps,
    save_generator,
    train_generator,
)
from .discriminator import (
    DiscriminatorConfig,
    build_on_generator_dataset,
    filter_grasps,
    load_discriminator,
    save_discriminator,
    score_grasps,
    train_discriminator,
)
from .errors import GraspKitError
from .eval_metrics import (
    coverage,
    curve_auc,
    emd,
    pose_errors,
    precision_coverage_curve,
    tuning_sweep,
    write_curve_svg,
    write_histogram_svg,
    write_metric_csv,
    write_sweep_csv,
)
from .grasp_oracle import (
    GripperModel,
    build_offline_dataset,
    dense_surface_samples,
    label_grasp,
    load_labeled_set,
    save_labeled_set,
)
from .se3_core import pose_to_record
from .shape_lab import (
    ObjectModel,
    load_cloud,
    load_mesh_off,
    make_object_suite,
    mean_center,
    sample_surface,
    save_cloud,
    save_mesh_off,
)

log = logging.getLogger(__name__)

STAGE_DATA = "data"
STAGE_GEN = "gen"
STAGE_ONGEN = "ongen"
STAGE_DISC = "disc"


class ConfigError(GraspKitError):
    pass


class MissingStage(GraspKitError):
    pass


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    path: Path
    sections: dict
    out_dir: Path
    gripper: GripperModel
    generator: GeneratorConfig
    discriminator: DiscriminatorConfig

    def section(self, name: str) -> dict:
        return self.sections.get(name, {})

    def canonical(self, names) -> str:
        return json.dumps({n: self.sections.get(n, {}) for n in sorted(names)}, sort_keys=True)


def _parse_tuple(raw: str, cast=float) -> tuple:
    return tuple(cast(v.strip()) for v in raw.split(",") if v.strip() != "")


def _get(section, key, cast, default=None, where=""):
    if key not in section:
        if default is not None:
            return default
        raise ConfigError(f"missing key {key!r} in section [{where}]")
    try:
        return cast(section[key])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {where}.{key}: {e}") from None


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as e:
        # configparser errors carry line numbers for syntax problems
        raise ConfigError(str(e)) from None
    sections = {name: dict(parser.items(name)) for name in parser.sections()}

    g = sections.get("gripper", {})
    kind = g.get("kind", "parallel_jaw")
    if kind not in ("parallel_jaw", "suction"):
        raise ConfigError(f"gripper.kind must be parallel_jaw or suction, got {kind!r}")
    gripper = GripperModel(
        kind=kind,
        max_width=_get(g, "max_width", float, 0.08, "gripper"),
        finger_depth=_get(g, "finger_depth", float, 0.05, "gripper"),
        friction_mu=_get(g, "friction_mu", float, 0.5, "gripper"),
        cup_radius=_get(g, "cup_radius", float, 0.015, "gripper"),
    )

    gen_s = sections.get("generator", {})
    try:
        generator = GeneratorConfig(
            T=_get(gen_s, "t", int, 10, "generator"),
            beta_trans=_parse_tuple(gen_s.get("beta_trans", "0.02,0.5")),
            beta_rot=_parse_tuple(gen_s.get("beta_rot", "0.02,0.5")),
            repr_kind=gen_s.get("repr", "lie_algebra"),
            kappa_mode=gen_s.get("kappa_mode", "computed"),
            kappa_axis_reduction=gen_s.get("kappa_axis_reduction", "mean"),
            embedding_dim=_get(gen_s, "embedding_dim", int, 128, "generator"),
            hidden=_parse_tuple(gen_s.get("hidden", "256,256,256,256"), int),
            time_dims=_get(gen_s, "time_dims", int, 32, "generator"),
            steps=_get(gen_s, "steps", int, 20000, "generator"),
            lr=_get(gen_s, "lr", float, 1e-3, "generator"),
            lr_min=_get(gen_s, "lr_min", float, 1e-5, "generator"),
            batch=_get(gen_s, "batch", int, 64, "generator"),
            seed=_get(gen_s, "seed", int, 0, "generator"),
            cloud_mix_ratio=_get(gen_s, "cloud_mix_ratio", float, 0.5, "generator"),
        )
    except GraspKitError as e:
        raise ConfigError(f"[generator]: {e}") from None

    d = sections.get("discriminator", {})
    try:
        discriminator = DiscriminatorConfig(
            hidden=_parse_tuple(d.get("hidden", "256,256"), int),
            steps=_get(d, "steps", int, 4000, "discriminator"),
            lr=_get(d, "lr", float, 1e-3, "discriminator"),
            lr_min=_get(d, "lr_min", float, 1e-5, "discriminator"),
            batch=_get(d, "batch", int, 128, "discriminator"),
            seed=_get(d, "seed", int, 0, "discriminator"),
            provenance=d.get("provenance", "on_generator"),
        )
    except GraspKitError as e:
        raise ConfigError(f"[discriminator]: {e}") from None

    out_dir = Path(os.environ.get("GG_OUT_DIR", sections.get("output", {}).get("dir", "runs")))
    return PipelineConfig(path, sections, out_dir, gripper, generator, discriminator)


# ---------------------------------------------------------------------------
# Stage addressing and manifest
# ---------------------------------------------------------------------------

STAGE_SECTIONS = {
    STAGE_DATA: ("suite", "gripper", "dataset"),
    STAGE_GEN: ("generator",),
    STAGE_ONGEN: ("ongen",),
    STAGE_DISC: ("discriminator",),
}
STAGE_UPSTREAM = {
    STAGE_DATA: (),
    STAGE_GEN: (STAGE_DATA,),
    STAGE_ONGEN: (STAGE_DATA, STAGE_GEN),
    STAGE_DISC: (STAGE_DATA, STAGE_GEN, STAGE_ONGEN),
}


def stage_hash(cfg: PipelineConfig, stage: str) -> str:
    payload = cfg.canonical(STAGE_SECTIONS[stage])
    upstream = "".join(stage_hash(cfg, up) for up in STAGE_UPSTREAM[stage])
    return hashlib.sha256((stage + payload + upstream).encode()).hexdigest()[:12]


def stage_dir(cfg: PipelineConfig, stage: str) -> Path:
    return cfg.out_dir / f"{stage}-{stage_hash(cfg, stage)}"


def require_stage(cfg: PipelineConfig, stage: str) -> Path:
    d = stage_dir(cfg, stage)
    if not d.exists():
        raise MissingStage(
            f"stage {stage!r} not found at {d}; run the corresponding command first"
        )
    return d


def atomic_write_bytes(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_via_temp(path: Path, writer):
    """Run `writer(tmp_path)` then atomically rename onto `path`.

    The temp file keeps the target suffix: writers that dispatch on the
    extension (matplotlib savefig) must see the right format.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def update_manifest(cfg: PipelineConfig, stage: str, artifacts):
    manifest_path = cfg.out_dir / "manifest.json"
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    manifest.setdefault("versions", {})
    manifest["versions"].update(
        {
            "graspkit": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        }
    )
    manifest.setdefault("stages", {})
    manifest["stages"][stage] = {
        "hash": stage_hash(cfg, stage) if stage in STAGE_SECTIONS else None,
        "path": str(stage_dir(cfg, stage)) if stage in STAGE_SECTIONS else None,
        "artifacts": [str(a) for a in artifacts],
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    manifest["config_hash"] = hashlib.sha256(
        cfg.canonical(sorted(cfg.sections)).encode()
    ).hexdigest()[:12]
    atomic_write_bytes(manifest_path, json.dumps(manifest, indent=2, sort_keys=True).encode())


# ---------------------------------------------------------------------------
# Suite construction and stage I/O
# ---------------------------------------------------------------------------


def build_suite(cfg: PipelineConfig):
    s = cfg.section("suite")
    counts = {}
    for kind in ("box", "cylinder", "sphere", "capped_composite"):
        if kind in s:
            counts[kind] = _get(s, kind, int, where="suite")
    if not counts:
        raise ConfigError("[suite] must name at least one primitive kind count")
    try:
        return make_object_suite(
            counts,
            seed=_get(s, "seed", int, 7, "suite"),
            size_range=(
                _get(s, "size_min", float, 0.025, "suite"),
                _get(s, "size_max", float, 0.055, "suite"),
            ),
            cloud_points=_get(s, "cloud_points", int, 256, "suite"),
            clouds_per_object=_get(s, "clouds_per_object", int, 8, "suite"),
            cloud_mix_ratio=_get(s, "cloud_mix_ratio", float, cfg.generator.cloud_mix_ratio, "suite"),
            resolution=_get(s, "resolution", int, 24, "suite"),
            outlier_fraction=_get(s, "outlier_fraction", float, 0.0, "suite"),
            outlier_offset=_get(s, "outlier_offset", float, 0.02, "suite"),
        )
    except GraspKitError as e:
        raise ConfigError(f"[suite]: {e}") from None


def cmd_gen_data(cfg: PipelineConfig) -> int:
    objects = build_suite(cfg)
    ds = cfg.section("dataset")
    n_per_object = _get(ds, "n_per_object", int, 2000, "dataset")
    seed = _get(ds, "seed", int, 11, "dataset")
    sets = build_offline_dataset(objects, cfg.gripper, n_per_object, seed)
    out = stage_dir(cfg, STAGE_DATA)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    suite_index = []
    for obj, grasp_set in zip(objects, sets):
        mesh_path = out / f"{obj.object_id}.off"
        write_via_temp(mesh_path, lambda p, m=obj.mesh: save_mesh_off(p, m))
        artifacts.append(mesh_path)
        cloud_paths = []
        for k, cloud in enumerate(obj.clouds):
            cp = out / f"{obj.object_id}.cloud{k:02d}.ggpc"
            write_via_temp(cp, lambda p, c=cloud: save_cloud(p, c))
            cloud_paths.append(cp.name)
            artifacts.append(cp)
        set_path = out / f"{obj.object_id}.jsonl"
        write_via_temp(set_path, lambda p, s=grasp_set: save_labeled_set(p, s, cfg.gripper))
        artifacts.append(set_path)
        suite_index.append(
            {"object_id": obj.object_id, "mesh": mesh_path.name, "clouds": cloud_paths,
             "grasps": set_path.name, "positive_rate": grasp_set.positive_rate()}
        )
    index_path = out / "suite.json"
    atomic_write_bytes(index_path, json.dumps(suite_index, indent=2, sort_keys=True).encode())
    artifacts.append(index_path)
    update_manifest(cfg, STAGE_DATA, artifacts)
    print(f"gen-data: {len(objects)} objects x {n_per_object} grasps -> {out}")
    return 0


def load_data_stage(cfg: PipelineConfig):
    out = require_stage(cfg, STAGE_DATA)
    index = json.loads((out / "suite.json").read_text())
    objects, sets = [], []
    for entry in index:
        mesh = load_mesh_off(out / entry["mesh"])
        clouds = tuple(load_cloud(out / name) for name in entry["clouds"])
        grasp_set, _ = load_labeled_set(out / entry["grasps"])
        objects.append(ObjectModel(entry["object_id"], mesh, clouds))
        sets.append(grasp_set)
    return objects, sets


def cmd_train_gen(cfg: PipelineConfig) -> int:
    objects, sets = load_data_stage(cfg)
    ckpt = train_generator(sets, objects, cfg.generator)
    out = stage_dir(cfg, STAGE_GEN)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "generator.ggck"
    write_via_temp(path, lambda p: save_generator(p, ckpt))
    update_manifest(cfg, STAGE_GEN, [path])
    print(
        f"train-gen: kappa={ckpt.normalization.kappa:.4f} ({ckpt.normalization.mode}), "
        f"final loss {ckpt.loss_curve[-50:].mean():.5f} -> {path}"
    )
    return 0


def load_generator_stage(cfg: PipelineConfig):
    out = require_stage(cfg, STAGE_GEN)
    return load_generator(out / "generator.ggck")


def cmd_build_ongen(cfg: PipelineConfig) -> int:
    objects, _ = load_data_stage(cfg)
    gen = load_generator_stage(cfg)
    s = cfg.section("ongen")
    b_per_object = _get(s, "b_per_object", int, 500, "ongen")
    seed = _get(s, "seed", int, 13, "ongen")
    sets = build_on_generator_dataset(gen, objects, cfg.gripper, b_per_object, seed)
    out = stage_dir(cfg, STAGE_ONGEN)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for grasp_set in sets:
        path = out / f"{grasp_set.object_id}.jsonl"
        write_via_temp(path, lambda p, gs=grasp_set: save_labeled_set(p, gs, cfg.gripper))
        artifacts.append(path)
    update_manifest(cfg, STAGE_ONGEN, artifacts)
    rates = [s_.positive_rate() for s_ in sets]
    print(
        f"build-ongen: {len(sets)} objects x {b_per_object} samples, "
        f"mean positive rate {np.mean(rates):.3f} -> {out}"
    )
    return 0


def load_ongen_stage(cfg: PipelineConfig):
    out = require_stage(cfg, STAGE_ONGEN)
    sets = []
    for path in sorted(out.glob("*.jsonl")):
        grasp_set, _ = load_labeled_set(path)
        sets.append(grasp_set)
    return sets


def cmd_train_disc(cfg: PipelineConfig) -> int:
    objects, offline_sets = load_data_stage(cfg)
    gen = load_generator_stage(cfg)
    datasets = {"offline": offline_sets}
    if cfg.discriminator.provenance in ("on_generator", "mixed"):
        datasets["on_generator"] = load_ongen_stage(cfg)
    disc = train_discriminator(
        datasets,
        objects,
        gen.encoder,
        gen.normalization,
        gen.repr_kind,
        cfg.discriminator,
        gen.config,
    )
    out = stage_dir(cfg, STAGE_DISC)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "discriminator.ggck"
    write_via_temp(path, lambda p: save_discriminator(p, disc))
    update_manifest(cfg, STAGE_DISC, [path])
    print(f"train-disc ({disc.provenance}): final loss {disc.loss_curve[-50:].mean():.5f} -> {path}")
    return 0


def load_disc_stage(cfg: PipelineConfig):
    out = require_stage(cfg, STAGE_DISC)
    return load_discriminator(out / "discriminator.ggck")


# ---------------------------------------------------------------------------
# Inference and evaluation commands
# ---------------------------------------------------------------------------


def eval_cloud_for(obj: ObjectModel, n_points: int, seed: int):
    """Held-out observation: a fresh complete surface cloud, mean-centered."""
    return mean_center(sample_surface(obj.mesh, n_points, seed=seed))


def cmd_sample(cfg: PipelineConfig, args) -> int:
    objects, _ = load_data_stage(cfg)
    by_id = {o.object_id: o for o in objects}
    if args.object not in by_id:
        raise ConfigError(f"unknown object id {args.object!r}; have {sorted(by_id)}")
    obj = by_id[args.object]
    gen = load_generator_stage(cfg)
    disc = load_disc_stage(cfg)
    e = cfg.section("eval")
    cloud = eval_cloud_for(obj, _get(e, "cloud_points", int, 512, "eval"), args.seed)
    grasps = sample_grasps(cloud, gen, args.batch, args.seed)
    scored = score_grasps(cloud, grasps, disc)
    kept = filter_grasps(scored, args.threshold, args.top_k)
    surface = (
        dense_surface_samples(obj.mesh, cfg.gripper.cup_radius)
        if cfg.gripper.kind == "suction"
        else None
    )
    out_path = Path(args.out) if args.out else stage_dir(cfg, STAGE_DISC) / f"samples_{obj.object_id}.jsonl"

    def writer(p):
        with open(p, "w") as f:
            header = {
                "kind": "scored_grasps",
                "object_id": obj.object_id,
                "gripper": cfg.gripper.kind,
                "batch": args.batch,
                "threshold": args.threshold,
                "top_k": args.top_k,
                "count": len(kept),
            }
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for pose, score in zip(kept.grasps, kept.scores):
                rec = {
                    "object_id": obj.object_id,
                    "gripper": cfg.gripper.kind,
                    **pose_to_record(pose),
                    "label": "positive" if label_grasp(obj.mesh, pose, cfg.gripper, surface=surface) else "negative",
                    "score": float(score),
                }
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    write_via_temp(out_path, writer)
    update_manifest(cfg, "sample", [out_path])
    print(
        f"sample: {args.batch} drawn, {len(kept)} kept at threshold {args.threshold} -> {out_path}"
    )
    return 0


def _eval_thresholds(cfg: PipelineConfig):
    e = cfg.section("eval")
    return list(_parse_tuple(e.get("thresholds", "0.0,0.2,0.4,0.5,0.6,0.7,0.8,0.9")))


def cmd_eval(cfg: PipelineConfig) -> int:
    objects, offline_sets = load_data_stage(cfg)
    gen = load_generator_stage(cfg)
    disc = load_disc_stage(cfg)
    e = cfg.section("eval")
    batch = _get(e, "sample_batch", int, 512, "eval")
    seed = _get(e, "seed", int, 123, "eval")
    cloud_points = _get(e, "cloud_points", int, 512, "eval")
    thresholds = _eval_thresholds(cfg)
    sets_by_id = {s.object_id: s for s in offline_sets}

    precision_rows = []  # exactly one row per (threshold, object)
    summary_rows = []
    all_points = []
    for i, obj in enumerate(sorted(objects, key=lambda o: o.object_id)):
        gt = sets_by_id[obj.object_id].positives()
        cloud = eval_cloud_for(obj, cloud_points, seed + i)
        grasps = sample_grasps(cloud, gen, batch, seed + 1000 + i)
        scored = score_grasps(cloud, grasps, disc)
        if len(gt) == 0:
            for tau in thresholds:
                precision_rows.append((f"precision@{tau:.4f}", obj.object_id, None))
            summary_rows.append(("auc", obj.object_id, None))
            continue
        curve = precision_coverage_curve(scored, gt, obj.mesh, cfg.gripper, thresholds)
        for tau, prec, cov in curve.points:
            precision_rows.append((f"precision@{tau:.4f}", obj.object_id, prec))
            summary_rows.append((f"coverage@{tau:.4f}", obj.object_id, cov))
        te, re_ = pose_errors(grasps, gt)
        summary_rows.append(("auc", obj.object_id, curve.auc))
        summary_rows.append(("coverage_raw", obj.object_id, coverage(grasps, gt)))
        summary_rows.append(("translation_error_m", obj.object_id, te))
        summary_rows.append(("rotation_error_rad", obj.object_id, re_))
        all_points.extend(curve.points)

    out = cfg.out_dir / f"eval-{stage_hash(cfg, STAGE_DISC)}"
    out.mkdir(parents=True, exist_ok=True)
    eval_csv = out / "eval.csv"
    write_via_temp(eval_csv, lambda p: write_metric_csv(p, precision_rows))
    summary_csv = out / "eval_summary.csv"
    write_via_temp(summary_csv, lambda p: write_metric_csv(p, summary_rows))
    # aggregate curve: mean precision/coverage per threshold over evaluable objects
    agg_points = []
    for tau in thresholds:
        ps = [p for t, p, _ in all_points if t == tau]
        cs = [c for t, _, c in all_points if t == tau]
        if ps:
            agg_points.append((tau, float(np.mean(ps)), float(np.mean(cs))))
    svg = out / "curve.svg"
    artifacts = [eval_csv, summary_csv]
    if agg_points:
        from .eval_metrics import PrecisionCoverageCurve

        write_via_temp(
            svg,
            lambda p: write_curve_svg(
                p, PrecisionCoverageCurve(tuple(agg_points), curve_auc(agg_points)), "aggregate"
            ),
        )
        artifacts.append(svg)
    update_manifest(cfg, "eval", artifacts)
    print(f"eval: {len(precision_rows)} precision rows over {len(objects)} objects -> {out}")
    return 0


def cmd_emd(cfg: PipelineConfig) -> int:
    _, offline_sets = load_data_stage(cfg)
    ongen_sets = load_ongen_stage(cfg)
    e = cfg.section("eval")
    n_sub = _get(e, "emd_n_sub", int, 500, "eval")
    repeats = _get(e, "emd_repeats", int, 5, "eval")
    seed = _get(e, "emd_seed", int, 17, "eval")
    offline_by_id = {s.object_id: s for s in offline_sets}
    rows = []
    shift_vals, baseline_vals = [], []
    for grasp_set in sorted(ongen_sets, key=lambda s: s.object_id):
        offline = offline_by_id.get(grasp_set.object_id)
        if offline is None:
            continue
        on_neg = grasp_set.negatives()
        off_neg = offline.negatives()
        if len(on_neg) < 2 or len(off_neg) < 4:
            rows.append(("emd_negatives_shift", grasp_set.object_id, None))
            continue
        shift = emd(on_neg, off_neg, n_sub, repeats, seed)
        # within-offline baseline: EMD between two disjoint halves
        half = len(off_neg) // 2
        base = emd(off_neg.subset(np.arange(half)), off_neg.subset(np.arange(half, 2 * half)),
                   n_sub, repeats, seed + 1)
        rows.append(("emd_negatives_shift", grasp_set.object_id, shift))
        rows.append(("emd_offline_split_baseline", grasp_set.object_id, base))
        shift_vals.append(shift)
        baseline_vals.append(base)
    out = cfg.out_dir / f"emd-{stage_hash(cfg, STAGE_ONGEN)}"
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "emd.csv"
    write_via_temp(csv_path, lambda p: write_metric_csv(p, rows))
    svg = out / "emd_hist.svg"
    artifacts = [csv_path]
    if shift_vals:
        write_via_temp(svg, lambda p: write_histogram_svg(p, shift_vals, "EMD shift"))
        artifacts.append(svg)
    update_manifest(cfg, "emd", artifacts)
    if shift_vals:
        print(
            f"emd: mean shift {np.mean(shift_vals):.4f} vs baseline {np.mean(baseline_vals):.4f} -> {csv_path}"
        )
    else:
        print(f"emd: no evaluable objects -> {csv_path}")
    return 0


def cmd_sweep(cfg: PipelineConfig) -> int:
    objects, _ = load_data_stage(cfg)
    gen = load_generator_stage(cfg)
    disc = load_disc_stage(cfg)
    s = cfg.section("sweep")
    batch_sizes = list(_parse_tuple(s.get("batch_sizes", "32,64,128"), int))
    thresholds = list(_parse_tuple(s.get("thresholds", "0.0,0.3,0.5,0.7,0.9")))
    seed = _get(s, "seed", int, 19, "sweep")
    cloud_points = _get(cfg.section("eval"), "cloud_points", int, 512, "eval")

    cloud_cache = {}

    def cloud_for(obj, seed_):
        key = obj.object_id
        if key not in cloud_cache:
            cloud_cache[key] = eval_cloud_for(obj, cloud_points, seed_)
        return cloud_cache[key]

    def sample_fn(obj, batch, seed_):
        return sample_grasps(cloud_for(obj, seed_), gen, batch, seed_)

    def score_fn(obj, grasps):
        return score_grasps(cloud_for(obj, seed), grasps, disc).scores

    rows = tuning_sweep(sample_fn, score_fn, objects, cfg.gripper, batch_sizes, thresholds, seed)
    out = cfg.out_dir / f"sweep-{stage_hash(cfg, STAGE_DISC)}"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    write_via_temp(path, lambda p: write_sweep_csv(p, rows))
    update_manifest(cfg, "sweep", [path])
    print(f"sweep: {len(rows)} rows -> {path}")
    return 0


# ---------------------------------------------------------------------------
# Ablation harnesses
# ---------------------------------------------------------------------------


def _ablation_params(cfg: PipelineConfig):
    a = cfg.section("ablation")
    return {
        "steps": _get(a, "steps", int, 4000, "ablation"),
        "batch": _get(a, "batch", int, 64, "ablation"),
        "seeds": list(_parse_tuple(a.get("seeds", "0,1,2"), int)),
        "eval_batch": _get(a, "eval_batch", int, 256, "ablation"),
        "cloud_points": _get(a, "cloud_points", int, 256, "ablation"),
    }


def _train_eval_coverage(cfg, objects, sets, gen_cfg, eval_batch, cloud_points, eval_seed):
    """Train one generator variant and measure mean coverage / pose errors
    against the offline positives."""
    ckpt = train_generator(sets, objects, gen_cfg)
    sets_by_id = {s.object_id: s for s in sets}
    covs, terrs, rerrs = [], [], []
    for i, obj in enumerate(sorted(objects, key=lambda o: o.object_id)):
        gt = sets_by_id[obj.object_id].positives()
        if len(gt) == 0:
            continue
        cloud = eval_cloud_for(obj, cloud_points, eval_seed + i)
        grasps = sample_grasps(cloud, ckpt, eval_batch, eval_seed + 500 + i)
        covs.append(coverage(grasps, gt))
        te, re_ = pose_errors(grasps, gt)
        terrs.append(te)
        rerrs.append(re_)
    return float(np.mean(covs)), float(np.mean(terrs)), float(np.mean(rerrs)), ckpt


def cmd_ablate_kappa(cfg: PipelineConfig) -> int:
    from dataclasses import replace
    from .diffusion_generator import compute_kappa

    objects, sets = load_data_stage(cfg)
    p = _ablation_params(cfg)
    kappa_star = compute_kappa(sets, cfg.generator.kappa_axis_reduction).kappa
    multipliers = [0.5, 1.0, 2.0, 8.0]
    rows = []
    for m in multipliers:
        for seed in p["seeds"]:
            gen_cfg = replace(
                cfg.generator,
                kappa_mode=f"fixed:{m * kappa_star}",
                steps=p["steps"],
                batch=p["batch"],
                seed=seed,
            )
            cov, te, re_, _ = _train_eval_coverage(
                cfg, objects, sets, gen_cfg, p["eval_batch"], p["cloud_points"], 9000 + seed
            )
            rows.append(
                {"kappa_multiplier": m, "kappa": m * kappa_star, "seed": seed,
                 "coverage": cov, "translation_error_m": te, "rotation_error_rad": re_}
            )
            log.info("kappa ablation m=%.2f seed=%d coverage=%.3f", m, seed, cov)
    out = cfg.out_dir / f"ablate-kappa-{stage_hash(cfg, STAGE_DATA)}"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "kappa_ablation.csv"

    def writer(pth):
        import csv as _csv

        with open(pth, "w", newline="") as f:
            w = _csv.DictWriter(
                f, fieldnames=["kappa_multiplier", "kappa", "seed", "coverage",
                               "translation_error_m", "rotation_error_rad"]
            )
            w.writeheader()
            for r in rows:
                w.writerow(r)

    write_via_temp(path, writer)
    update_manifest(cfg, "ablate-kappa", [path])
    print(f"ablate-kappa: kappa*={kappa_star:.3f}, {len(rows)} rows -> {path}")
    return 0


def cmd_ablate_repr(cfg: PipelineConfig) -> int:
    from dataclasses import replace

    objects, sets = load_data_stage(cfg)
    p = _ablation_params(cfg)
    rows = []
    for kind in ("lie_algebra", "euler", "sixd"):
        for seed in p["seeds"]:
            gen_cfg = replace(
                cfg.generator, repr_kind=kind, steps=p["steps"], batch=p["batch"], seed=seed
            )
            cov, te, re_, _ = _train_eval_coverage(
                cfg, objects, sets, gen_cfg, p["eval_batch"], p["cloud_points"], 9500 + seed
            )
            rows.append(
                {"repr": kind, "seed": seed, "coverage": cov,
                 "translation_error_m": te, "rotation_error_rad": re_}
            )
            log.info("repr ablation %s seed=%d coverage=%.3f", kind, seed, cov)
    out = cfg.out_dir / f"ablate-repr-{stage_hash(cfg, STAGE_DATA)}"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "repr_ablation.csv"

    def writer(pth):
        import csv as _csv

        with open(pth, "w", newline="") as f:
            w = _csv.DictWriter(
                f, fieldnames=["repr", "seed", "coverage", "translation_error_m",
                               "rotation_error_rad"]
            )
            w.writeheader()
            for r in rows:
                w.writerow(r)

    write_via_temp(path, writer)
    update_manifest(cfg, "ablate-repr", [path])
    print(f"ablate-repr: {len(rows)} rows -> {path}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graspkit",
        description="diffusion grasp generation pipeline: data, training, evaluation",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="INI config file")
        return p

    add("gen-data", "build the object suite and oracle-labeled offline datasets")
    add("train-gen", "compute kappa and train the diffusion generator")
    add("build-ongen", "sample the generator and annotate with the oracle")
    add("train-disc", "train the scoring head on the configured provenance")
    ps = add("sample", "sample, score and filter grasps for one object")
    ps.add_argument("--object", required=True)
    ps.add_argument("--batch", type=int, default=512)
    ps.add_argument("--threshold", type=float, default=0.7)
    ps.add_argument("--top-k", type=int, default=100)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", default=None)
    add("eval", "precision/coverage curves and pose errors per object")
    add("emd", "distribution-shift EMD between on-generator and offline sets")
    add("sweep", "batch-size x threshold tuning sweep")
    add("ablate-kappa", "train at scaled kappa values and record coverage")
    add("ablate-repr", "train each rotation representation and record coverage")
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-gen": cmd_train_gen,
    "build-ongen": cmd_build_ongen,
    "train-disc": cmd_train_disc,
    "eval": cmd_eval,
    "emd": cmd_emd,
    "sweep": cmd_sweep,
    "ablate-kappa": cmd_ablate_kappa,
    "ablate-repr": cmd_ablate_repr,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        if args.command == "sample":
            return cmd_sample(cfg, args)
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except MissingStage as e:
        print(f"missing dependency: {e}", file=sys.stderr)
        return 3
    except (GraspKitError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
