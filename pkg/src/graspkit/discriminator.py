"""Grasp scoring head trained on top of the generator's frozen encoder.

The head consumes concat(object embedding, grasp coordinates) where grasp
coordinates use the same kappa-scaled translation and rotation
representation as the generator, and emits a sigmoid success score.
Training data can come from the offline oracle dataset, from annotated
generator samples (on-generator), or an equal mix.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff_core import (
    AdamState,
    EncoderWeights,
    Mlp,
    MlpSpec,
    Tensor,
    bce,
    encode_cloud,
    load_tensors,
    save_tensors,
    string_to_floats,
    floats_to_string,
    train_step,
)
from .diffusion_generator import (
    GeneratorCheckpoint,
    GeneratorConfig,
    NormalizationStats,
    _build_model,
    normalize_translations,
    rotations_to_coords,
    sample_grasps,
)
from .errors import DegenerateLabels, InvalidInput
from .grasp_oracle import GripperModel, LabeledGraspSet, annotate
from .se3_core import REPR_WIDTH, ReprKind

log = logging.getLogger(__name__)

PROVENANCE_MODES = ("offline", "on_generator", "mixed")


@dataclass(frozen=True)
class ScoredGrasps:
    grasps: tuple
    scores: np.ndarray = field(repr=False)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        grasps = tuple(self.grasps)
        if len(grasps) != len(scores):
            raise InvalidInput("grasps and scores must have equal lengths")
        if len(scores) and (scores.min() < 0.0 or scores.max() > 1.0):
            raise InvalidInput("scores must lie in [0, 1]")
        object.__setattr__(self, "grasps", grasps)
        object.__setattr__(self, "scores", scores)

    def __len__(self):
        return len(self.scores)


@dataclass(frozen=True)
class DiscriminatorConfig:
    hidden: tuple = (256, 256)
    steps: int = 4000
    lr: float = 1e-3
    lr_min: float = 1e-5
    batch: int = 128
    seed: int = 0
    provenance: str = "on_generator"  # one of PROVENANCE_MODES

    def __post_init__(self):
        if self.provenance not in PROVENANCE_MODES:
            raise InvalidInput(f"provenance must be one of {PROVENANCE_MODES}")

    def fingerprint(self) -> str:
        payload = json.dumps(
            {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class DiscriminatorCheckpoint:
    encoder: EncoderWeights  # frozen, shared with the generator
    head: Mlp
    normalization: NormalizationStats
    repr_kind: ReprKind
    provenance: str
    config: DiscriminatorConfig
    generator_config: GeneratorConfig
    loss_curve: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.provenance not in PROVENANCE_MODES:
            raise InvalidInput(f"unknown provenance {self.provenance!r}")
        expect_in = self.encoder.embedding_dim + 3 + REPR_WIDTH[ReprKind(self.repr_kind)]
        if self.head.spec.widths[0] != expect_in:
            raise InvalidInput(
                f"head input width {self.head.spec.widths[0]} != embedding + grasp width {expect_in}"
            )


def build_on_generator_dataset(
    gen: GeneratorCheckpoint, objects, gripper: GripperModel, b_per_object: int, seed: int
):
    """Sample b_per_object grasps per object from the generator and annotate
    each with the oracle; sets carry provenance 'on_generator'."""
    sets = []
    for i, obj in enumerate(objects):
        if not obj.clouds:
            raise InvalidInput(f"object {obj.object_id} has no clouds to condition on")
        child_seed = int(np.random.SeedSequence((seed, i)).generate_state(1)[0])
        cloud = obj.clouds[0]
        samples = sample_grasps(cloud, gen, b_per_object, child_seed)
        rotations = np.stack([g.rotation for g in samples])
        translations = np.stack([g.translation for g in samples])
        candidates = LabeledGraspSet(
            obj.object_id,
            gripper.kind,
            rotations,
            translations,
            np.zeros(len(samples), dtype=bool),
            "on_generator",
        )
        labeled = annotate(obj.object_id, obj.mesh, candidates, gripper, "on_generator")
        log.info(
            "on-generator %s: positive rate %.4f", obj.object_id, labeled.positive_rate()
        )
        sets.append(labeled)
    return sets


def _grasp_coords(grasp_set: LabeledGraspSet, centroid, kappa: float, kind: ReprKind):
    trans = normalize_translations(grasp_set.translations, centroid, kappa)
    rot = rotations_to_coords(grasp_set.rotations, kind)
    return np.concatenate([trans, rot], axis=1)


def train_discriminator(
    datasets,
    objects,
    encoder: EncoderWeights,
    normalization: NormalizationStats,
    repr_kind: ReprKind,
    config: DiscriminatorConfig,
    generator_config: GeneratorConfig | None = None,
) -> DiscriminatorCheckpoint:
    """Binary cross entropy on sigmoid scores; only the head trains.

    Embeddings are precomputed per (object, cloud) pair outside the loop, so
    no gradient can reach the encoder. Batches are class-balanced by
    resampling (positives are rare in offline data). For 'mixed' provenance,
    batches draw half from each source.

    `datasets` maps provenance -> list[LabeledGraspSet] (keys 'offline'
    and/or 'on_generator'); only the sources named by config.provenance are
    used.
    """
    kind = ReprKind(repr_kind)
    sources = (
        ["offline", "on_generator"] if config.provenance == "mixed" else [config.provenance]
    )
    for s in sources:
        if s not in datasets or not datasets[s]:
            raise InvalidInput(f"missing {s!r} datasets for provenance {config.provenance!r}")

    obj_by_id = {o.object_id: o for o in objects}
    rng = np.random.default_rng(config.seed)

    # precompute embeddings (frozen encoder) and grasp coordinates per source
    emb_cache = {}
    for obj in objects:
        for ci, cloud in enumerate(obj.clouds):
            emb_cache[(obj.object_id, ci)] = encode_cloud(cloud.points, encoder).data

    pool = {}  # source -> list of (object_id, coords per cloud variant, labels)
    total_pos = total_neg = 0
    for s in sources:
        entries = []
        for grasp_set in datasets[s]:
            obj = obj_by_id.get(grasp_set.object_id)
            if obj is None:
                raise InvalidInput(f"no object model for grasp set {grasp_set.object_id!r}")
            coords_per_cloud = [
                _grasp_coords(grasp_set, cloud.centroid, normalization.kappa, kind)
                for cloud in obj.clouds
            ]
            entries.append((grasp_set.object_id, coords_per_cloud, grasp_set.labels))
            total_pos += int(grasp_set.labels.sum())
            total_neg += int((~grasp_set.labels).sum())
        pool[s] = entries
    if total_pos == 0 or total_neg == 0:
        raise DegenerateLabels("training data contains a single label class")

    emb_dim = next(iter(emb_cache.values())).shape[1]
    d = 3 + REPR_WIDTH[kind]
    head = Mlp(
        MlpSpec((emb_dim + d, *config.hidden, 1), activation="relu", output_activation="sigmoid"),
        rng,
        name="disc_head",
    )
    params = head.parameters()
    state = AdamState()
    losses = np.zeros(config.steps)

    def draw_rows(entry, k):
        object_id, coords_per_cloud, labels = entry
        ci = rng.integers(len(coords_per_cloud))
        pos_idx = np.flatnonzero(labels)
        neg_idx = np.flatnonzero(~labels)
        rows = np.empty(k, dtype=np.int64)
        half = k // 2
        if len(pos_idx) and len(neg_idx):
            rows[:half] = pos_idx[rng.integers(0, len(pos_idx), size=half)]
            rows[half:] = neg_idx[rng.integers(0, len(neg_idx), size=k - half)]
        else:
            src = pos_idx if len(pos_idx) else neg_idx
            rows[:] = src[rng.integers(0, len(src), size=k)]
        emb = emb_cache[(object_id, ci)]
        return (
            np.repeat(emb, k, axis=0),
            coords_per_cloud[ci][rows],
            labels[rows].astype(np.float64),
        )

    for step in range(config.steps):
        per_source = config.batch // len(sources)
        xs, ys = [], []
        for s in sources:
            entries = pool[s]
            entry = entries[rng.integers(len(entries))]
            emb_rows, coords, labels = draw_rows(entry, per_source)
            xs.append(np.concatenate([emb_rows, coords], axis=1))
            ys.append(labels)
        x = np.concatenate(xs, axis=0)
        y = np.concatenate(ys, axis=0)[:, None]
        pred = head(Tensor(x))
        loss = bce(pred, Tensor(y))
        lr = config.lr_min + 0.5 * (config.lr - config.lr_min) * (
            1.0 + np.cos(np.pi * step / max(1, config.steps - 1))
        )
        losses[step] = train_step(loss, params, state, lr)
        if step % max(1, config.steps // 10) == 0:
            log.info("discriminator step %d/%d loss %.5f", step, config.steps, losses[step])

    return DiscriminatorCheckpoint(
        encoder,
        head,
        normalization,
        kind,
        config.provenance,
        config,
        generator_config or GeneratorConfig(),
        losses,
    )


def score_grasps(cloud, grasps, disc: DiscriminatorCheckpoint) -> ScoredGrasps:
    """Score grasps against one cloud; the embedding is computed once and
    reused across the whole batch."""
    poses = list(grasps.poses()) if hasattr(grasps, "poses") else list(grasps)
    if not poses:
        return ScoredGrasps((), np.zeros(0))
    emb = encode_cloud(cloud.points, disc.encoder).data
    rotations = np.stack([g.rotation for g in poses])
    translations = np.stack([g.translation for g in poses])
    trans = normalize_translations(translations, cloud.centroid, disc.normalization.kappa)
    rot = rotations_to_coords(rotations, disc.repr_kind)
    x = np.concatenate([np.repeat(emb, len(poses), axis=0), trans, rot], axis=1)
    scores = disc.head(Tensor(x)).data.reshape(-1)
    return ScoredGrasps(tuple(poses), scores)


def filter_grasps(scored: ScoredGrasps, threshold: float, top_k: int) -> ScoredGrasps:
    """Keep scores >= threshold, then the top_k by score; ties keep the
    earlier original index. An empty result is valid (flagged in the log)."""
    if not (0.0 <= threshold <= 1.0):
        raise InvalidInput("threshold must lie in [0, 1]")
    if top_k < 1:
        raise InvalidInput("top_k must be >= 1")
    keep = np.flatnonzero(scored.scores >= threshold)
    if keep.size == 0:
        log.warning("filter_grasps: nothing passed threshold %.3f", threshold)
        return ScoredGrasps((), np.zeros(0))
    # stable sort on negated score preserves original order among ties
    order = keep[np.argsort(-scored.scores[keep], kind="stable")][:top_k]
    return ScoredGrasps(
        tuple(scored.grasps[i] for i in order), scored.scores[order]
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_discriminator(path, disc: DiscriminatorCheckpoint):
    tensors = {name: p.data for name, p in disc.encoder.parameters().items()}
    tensors.update({name: p.data for name, p in disc.head.parameters().items()})
    tensors["meta/kappa"] = np.array(disc.normalization.kappa)
    tensors["meta/kappa_mode"] = string_to_floats(disc.normalization.mode)
    tensors["meta/repr"] = string_to_floats(disc.repr_kind.value)
    tensors["meta/provenance"] = string_to_floats(disc.provenance)
    tensors["meta/config"] = string_to_floats(
        json.dumps(
            {k: (list(v) if isinstance(v, tuple) else v) for k, v in disc.config.__dict__.items()},
            sort_keys=True,
        )
    )
    tensors["meta/gen_config"] = string_to_floats(
        json.dumps(
            {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in disc.generator_config.__dict__.items()
            },
            sort_keys=True,
        )
    )
    tensors["meta/config_hash"] = string_to_floats(disc.config.fingerprint())
    tensors["meta/loss_curve"] = disc.loss_curve
    save_tensors(path, tensors)


def load_discriminator(path) -> DiscriminatorCheckpoint:
    tensors = load_tensors(path)
    config = DiscriminatorConfig(
        **{
            k: (tuple(v) if isinstance(v, list) else v)
            for k, v in json.loads(floats_to_string(tensors["meta/config"])).items()
        }
    )
    gen_config = GeneratorConfig(
        **{
            k: (tuple(v) if isinstance(v, list) else v)
            for k, v in json.loads(floats_to_string(tensors["meta/gen_config"])).items()
        }
    )
    rng = np.random.default_rng(0)
    encoder, _ = _build_model(gen_config, rng)
    kind = ReprKind(floats_to_string(tensors["meta/repr"]))
    d = 3 + REPR_WIDTH[kind]
    head = Mlp(
        MlpSpec(
            (gen_config.embedding_dim + d, *config.hidden, 1),
            activation="relu",
            output_activation="sigmoid",
        ),
        rng,
        name="disc_head",
    )
    for name, p in {**encoder.parameters(), **head.parameters()}.items():
        if name not in tensors:
            raise InvalidInput(f"checkpoint missing tensor {name!r}")
        p.data = tensors[name].reshape(p.data.shape)
    norm = NormalizationStats(
        float(tensors["meta/kappa"]), floats_to_string(tensors["meta/kappa_mode"])
    )
    return DiscriminatorCheckpoint(
        encoder,
        head,
        norm,
        kind,
        floats_to_string(tensors["meta/provenance"]),
        config,
        gen_config,
        tensors.get("meta/loss_curve", np.zeros(0)),
    )
