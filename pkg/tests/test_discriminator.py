import math

import numpy as np
import pytest

from graspkit.autodiff_core import Tensor, bce
from graspkit.diffusion_generator import (
    GeneratorCheckpoint,
    GeneratorConfig,
    NormalizationStats,
    linear_schedule,
    _build_model,
)
from graspkit.discriminator import (
    DiscriminatorConfig,
    ScoredGrasps,
    build_on_generator_dataset,
    filter_grasps,
    load_discriminator,
    save_discriminator,
    score_grasps,
    train_discriminator,
)
from graspkit.errors import DegenerateLabels, InvalidInput
from graspkit.eval_metrics import binary_auc
from graspkit.grasp_oracle import GripperModel, LabeledGraspSet
from graspkit.se3_core import ReprKind, random_rotation
from graspkit.shape_lab import ObjectModel, make_primitive, mean_center, sample_surface

JAW = GripperModel("parallel_jaw")


def tiny_object(object_id="obj0", seed=0):
    mesh = make_primitive("cylinder", {"radius": 0.025, "height": 0.08}, resolution=16)
    cloud = mean_center(sample_surface(mesh, 64, seed=seed))
    return ObjectModel(object_id, mesh, (cloud,))


def make_generator(hidden=(32, 32), seed=0):
    cfg = GeneratorConfig(hidden=hidden, time_dims=8, kappa_mode="fixed:10.0", seed=seed)
    rng = np.random.default_rng(seed)
    encoder, head = _build_model(cfg, rng)
    return GeneratorCheckpoint(
        encoder,
        head,
        linear_schedule(cfg.T, cfg.beta_trans, cfg.beta_rot),
        NormalizationStats(10.0, "fixed"),
        ReprKind("lie_algebra"),
        cfg,
    )


def plane_separable_set(object_id, n=400, seed=5):
    """Positives are grasps above the z=0 plane: linearly separable in the
    translation coordinates the head sees."""
    rng = np.random.default_rng(seed)
    rots = np.stack([random_rotation(rng) for _ in range(n)])
    trans = rng.uniform(-0.05, 0.05, size=(n, 3))
    labels = trans[:, 2] > 0.0
    return LabeledGraspSet(object_id, "parallel_jaw", rots, trans, labels)


def disc_config(**kw):
    defaults = dict(hidden=(32, 32), steps=300, batch=64, seed=0, provenance="offline")
    defaults.update(kw)
    return DiscriminatorConfig(**defaults)


def test_zero_weight_head_scores_half_and_bce_ln2():
    obj = tiny_object()
    gen = make_generator()
    disc = train_discriminator(
        {"offline": [plane_separable_set("obj0")]},
        [obj],
        gen.encoder,
        gen.normalization,
        gen.repr_kind,
        disc_config(steps=1),
        gen.config,
    )
    for p in disc.head.parameters().values():
        p.data = np.zeros_like(p.data)
    grasps = plane_separable_set("obj0", n=16, seed=9)
    scored = score_grasps(obj.clouds[0], grasps, disc)
    assert np.array_equal(scored.scores, np.full(16, 0.5))
    loss = bce(Tensor(scored.scores), Tensor(grasps.labels.astype(float)))
    assert abs(float(loss.data) - math.log(2.0)) < 1e-12


def test_linearly_separable_training_auc():
    obj = tiny_object()
    gen = make_generator()
    train_set = plane_separable_set("obj0", n=600, seed=1)
    disc = train_discriminator(
        {"offline": [train_set]},
        [obj],
        gen.encoder,
        gen.normalization,
        gen.repr_kind,
        disc_config(steps=2000, batch=64, lr=2e-3),
        gen.config,
    )
    scored = score_grasps(obj.clouds[0], train_set, disc)
    auc = binary_auc(scored.scores, train_set.labels)
    assert auc > 0.99


def test_encoder_frozen_bit_identical():
    obj = tiny_object()
    gen = make_generator()
    before = {k: p.data.copy() for k, p in gen.encoder.parameters().items()}
    train_discriminator(
        {"offline": [plane_separable_set("obj0")]},
        [obj],
        gen.encoder,
        gen.normalization,
        gen.repr_kind,
        disc_config(steps=100),
        gen.config,
    )
    after = gen.encoder.parameters()
    for k in before:
        assert np.array_equal(before[k], after[k].data)


def test_single_class_raises():
    obj = tiny_object()
    gen = make_generator()
    s = plane_separable_set("obj0")
    all_pos = LabeledGraspSet("obj0", "parallel_jaw", s.rotations, s.translations, np.ones(len(s), dtype=bool))
    with pytest.raises(DegenerateLabels):
        train_discriminator(
            {"offline": [all_pos]},
            [obj],
            gen.encoder,
            gen.normalization,
            gen.repr_kind,
            disc_config(),
            gen.config,
        )


def test_mixed_provenance_training():
    obj = tiny_object()
    gen = make_generator()
    offline = plane_separable_set("obj0", n=200, seed=1)
    ongen = plane_separable_set("obj0", n=200, seed=2)
    disc = train_discriminator(
        {"offline": [offline], "on_generator": [ongen]},
        [obj],
        gen.encoder,
        gen.normalization,
        gen.repr_kind,
        disc_config(steps=120, provenance="mixed"),
        gen.config,
    )
    assert disc.provenance == "mixed"
    scored = score_grasps(obj.clouds[0], offline, disc)
    assert len(scored) == 200


def test_missing_source_raises():
    obj = tiny_object()
    gen = make_generator()
    with pytest.raises(InvalidInput):
        train_discriminator(
            {"offline": [plane_separable_set("obj0")]},
            [obj],
            gen.encoder,
            gen.normalization,
            gen.repr_kind,
            disc_config(provenance="on_generator"),
            gen.config,
        )


def trained_disc(obj, gen, steps=200):
    return train_discriminator(
        {"offline": [plane_separable_set(obj.object_id)]},
        [obj],
        gen.encoder,
        gen.normalization,
        gen.repr_kind,
        disc_config(steps=steps),
        gen.config,
    )


def test_scores_in_unit_interval_and_batch_independent():
    obj = tiny_object()
    gen = make_generator()
    disc = trained_disc(obj, gen)
    grasps = plane_separable_set("obj0", n=32, seed=3)
    scored = score_grasps(obj.clouds[0], grasps, disc)
    assert np.all(scored.scores >= 0.0) and np.all(scored.scores <= 1.0)
    # permuting grasp order permutes scores identically
    perm = np.random.default_rng(0).permutation(32)
    permuted = LabeledGraspSet(
        "obj0", "parallel_jaw", grasps.rotations[perm], grasps.translations[perm], grasps.labels[perm]
    )
    scored_perm = score_grasps(obj.clouds[0], permuted, disc)
    assert np.array_equal(scored_perm.scores, scored.scores[perm])
    # a grasp's score does not depend on the rest of the batch
    solo = score_grasps(obj.clouds[0], grasps.subset(np.arange(32) == 7), disc)
    assert np.allclose(solo.scores[0], scored.scores[7], atol=1e-12)
    # duplicated grasp scores identically (pure function: bit-identical
    # across calls; within one batch BLAS row blocking may shift the last ulp)
    dup_idx = np.array([0, 1, 0])
    dup = LabeledGraspSet(
        "obj0", "parallel_jaw", grasps.rotations[dup_idx], grasps.translations[dup_idx], grasps.labels[dup_idx]
    )
    sd = score_grasps(obj.clouds[0], dup, disc)
    assert abs(sd.scores[0] - sd.scores[2]) < 1e-12
    again = score_grasps(obj.clouds[0], dup, disc)
    assert np.array_equal(sd.scores, again.scores)


def test_filter_grasps_cases():
    grasps = plane_separable_set("o", n=3, seed=4).poses()
    scored = ScoredGrasps(tuple(grasps), np.array([0.9, 0.4, 0.8]))
    out = filter_grasps(scored, 0.5, 2)
    assert np.array_equal(out.scores, [0.9, 0.8])
    assert out.grasps[0] is grasps[0] and out.grasps[1] is grasps[2]
    # threshold zero keeps top_k highest scored
    out0 = filter_grasps(scored, 0.0, 1)
    assert np.array_equal(out0.scores, [0.9])
    # threshold 1 with no perfect scores: empty result is valid
    empty = filter_grasps(scored, 1.0, 2)
    assert len(empty) == 0
    with pytest.raises(InvalidInput):
        filter_grasps(scored, 1.5, 2)
    with pytest.raises(InvalidInput):
        filter_grasps(scored, 0.5, 0)


def test_filter_monotone_in_threshold():
    rng = np.random.default_rng(8)
    grasps = plane_separable_set("o", n=40, seed=6).poses()
    scored = ScoredGrasps(tuple(grasps), rng.uniform(size=40))
    sizes = [len(filter_grasps(scored, t, 40)) for t in np.linspace(0, 1, 11)]
    assert sizes == sorted(sizes, reverse=True)


def test_filter_tie_break_stable():
    grasps = plane_separable_set("o", n=4, seed=7).poses()
    scored = ScoredGrasps(tuple(grasps), np.array([0.7, 0.9, 0.7, 0.9]))
    out = filter_grasps(scored, 0.0, 3)
    assert out.grasps[0] is grasps[1]  # first 0.9
    assert out.grasps[1] is grasps[3]  # second 0.9
    assert out.grasps[2] is grasps[0]  # first 0.7


def test_build_on_generator_dataset_counts_and_provenance():
    gen = make_generator()
    objects = [tiny_object(f"obj{i}", seed=i) for i in range(3)]
    sets = build_on_generator_dataset(gen, objects, JAW, 20, seed=5)
    assert len(sets) == 3
    for s, obj in zip(sets, objects):
        assert len(s) == 20
        assert s.provenance == "on_generator"
        assert s.object_id == obj.object_id
    # 3 objects x 20 = 60 labeled grasps in total
    assert sum(len(s) for s in sets) == 60


def test_scored_grasps_validation():
    grasps = plane_separable_set("o", n=2, seed=1).poses()
    with pytest.raises(InvalidInput):
        ScoredGrasps(tuple(grasps), np.array([0.5]))
    with pytest.raises(InvalidInput):
        ScoredGrasps(tuple(grasps), np.array([0.5, 1.5]))


def test_discriminator_checkpoint_roundtrip(tmp_path):
    obj = tiny_object()
    gen = make_generator()
    disc = trained_disc(obj, gen, steps=150)
    path = tmp_path / "disc.ck"
    save_discriminator(path, disc)
    loaded = load_discriminator(path)
    grasps = plane_separable_set("obj0", n=10, seed=11)
    a = score_grasps(obj.clouds[0], grasps, disc)
    b = score_grasps(obj.clouds[0], grasps, loaded)
    assert np.array_equal(a.scores, b.scores)
    assert loaded.provenance == disc.provenance
