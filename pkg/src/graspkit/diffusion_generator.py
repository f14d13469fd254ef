"""Denoising-diffusion grasp generator over factorized rotation/translation
coordinates, conditioned on point-cloud embeddings.

Translation channel: kappa-scaled offsets from the cloud centroid.
Rotation channel: [-1, 1]-scaled rotation coordinates (lie_algebra, euler,
or sixd), treated as Euclidean for noising and denoised back to a valid
rotation only at the end of sampling.

The two channels run their own beta schedules; the reverse process is the
standard ancestral DDPM update with sigma_t^2 = beta_t and no noise on the
final step.
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
    broadcast_rows,
    concat,
    encode_cloud,
    load_tensors,
    make_encoder,
    mse,
    positional_encoding,
    save_tensors,
    string_to_floats,
    floats_to_string,
    train_step,
)
from .errors import DegenerateExtent, InvalidInput
from .se3_core import (
    REPR_WIDTH,
    GraspPose,
    ReprKind,
    RotationRepr,
    repr_to_rotation,
    rotation_to_repr,
)
from .shape_lab import PointCloud

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NormalizationStats:
    kappa: float
    mode: str = "computed"  # 'computed' or 'fixed'
    objects_used: int = 0
    objects_skipped: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise InvalidInput("kappa must be positive and finite")


def compute_kappa(dataset, axis_reduction: str = "mean") -> NormalizationStats:
    """Reciprocal of the dataset-mean translation extent of positive grasps.

    Per object the extent is the per-axis max-min of positive-grasp
    translations reduced over the three axes (mean by default, max behind
    the switch). Objects without positives are skipped and counted.
    """
    if axis_reduction not in ("mean", "max"):
        raise InvalidInput("axis_reduction must be 'mean' or 'max'")
    extents = []
    skipped = 0
    for grasp_set in dataset:
        pos = grasp_set.positives()
        if len(pos) == 0:
            skipped += 1
            continue
        span = pos.translations.max(axis=0) - pos.translations.min(axis=0)
        extents.append(span.mean() if axis_reduction == "mean" else span.max())
    if not extents:
        raise DegenerateExtent("no object contributed positive grasps")
    mean_extent = float(np.mean(extents))
    if mean_extent <= 1e-12:
        raise DegenerateExtent("positive-grasp translations have zero spatial extent")
    return NormalizationStats(1.0 / mean_extent, "computed", len(extents), skipped)


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas_trans: np.ndarray = field(repr=False)
    betas_rot: np.ndarray = field(repr=False)

    def __post_init__(self):
        bt = np.asarray(self.betas_trans, dtype=np.float64).reshape(-1)
        br = np.asarray(self.betas_rot, dtype=np.float64).reshape(-1)
        if self.T < 1 or len(bt) != self.T or len(br) != self.T:
            raise InvalidInput("schedule length must equal T")
        for b in (bt, br):
            if np.any(b <= 0.0) or np.any(b >= 1.0):
                raise InvalidInput("betas must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas_trans", bt)
        object.__setattr__(self, "betas_rot", br)
        object.__setattr__(self, "alphas_trans", 1.0 - bt)
        object.__setattr__(self, "alphas_rot", 1.0 - br)
        object.__setattr__(self, "alpha_bars_trans", np.cumprod(1.0 - bt))
        object.__setattr__(self, "alpha_bars_rot", np.cumprod(1.0 - br))


def linear_schedule(T: int, beta_trans: tuple, beta_rot: tuple) -> NoiseSchedule:
    return NoiseSchedule(
        T,
        np.linspace(beta_trans[0], beta_trans[1], T),
        np.linspace(beta_rot[0], beta_rot[1], T),
    )


# ---------------------------------------------------------------------------
# Coordinate mapping
# ---------------------------------------------------------------------------


def normalize_translations(translations, centroid, kappa: float) -> np.ndarray:
    return kappa * (np.asarray(translations, dtype=np.float64) - centroid)


def denormalize_translations(coords, centroid, kappa: float) -> np.ndarray:
    return np.asarray(coords, dtype=np.float64) / kappa + centroid


def rotations_to_coords(rotations, kind: ReprKind) -> np.ndarray:
    """Stack of [-1, 1]-scaled rotation coordinates, one row per rotation."""
    return np.stack([rotation_to_repr(R, kind).values for R in rotations])


def coords_to_rotations(coords, kind: ReprKind) -> np.ndarray:
    return np.stack([repr_to_rotation(RotationRepr(kind, row)) for row in coords])


def forward_noise(grasp_coords, t: int, schedule: NoiseSchedule, seed: int):
    """Noise normalized grasp coordinates at step t.

    `grasp_coords` is (translation_coords (..., 3), rotation_coords (..., w));
    returns ((noisy_trans, noisy_rot), (eps_trans, eps_rot)). Each channel
    uses its own alpha-bar: sqrt(ab) * x + sqrt(1 - ab) * eps.
    """
    if not (0 <= t < schedule.T):
        raise InvalidInput(f"step {t} outside [0, {schedule.T})")
    trans, rot = grasp_coords
    trans = np.asarray(trans, dtype=np.float64)
    rot = np.asarray(rot, dtype=np.float64)
    rng = np.random.default_rng(seed)
    eps_t = rng.standard_normal(trans.shape)
    eps_r = rng.standard_normal(rot.shape)
    ab_t = schedule.alpha_bars_trans[t]
    ab_r = schedule.alpha_bars_rot[t]
    noisy_t = np.sqrt(ab_t) * trans + np.sqrt(1.0 - ab_t) * eps_t
    noisy_r = np.sqrt(ab_r) * rot + np.sqrt(1.0 - ab_r) * eps_r
    return (noisy_t, noisy_r), (eps_t, eps_r)


# ---------------------------------------------------------------------------
# Generator model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    # default betas chosen so alpha_bar_T ~ 0.04: the forward process must
    # end close to the unit normal the sampler starts from
    T: int = 10
    beta_trans: tuple = (0.02, 0.5)
    beta_rot: tuple = (0.02, 0.5)
    repr_kind: str = "lie_algebra"
    kappa_mode: str = "computed"  # 'computed' or 'fixed:<value>'
    kappa_axis_reduction: str = "mean"
    embedding_dim: int = 128
    hidden: tuple = (256, 256, 256, 256)
    time_dims: int = 32
    steps: int = 20000
    lr: float = 1e-3
    lr_min: float = 1e-5
    batch: int = 64
    seed: int = 0
    cloud_mix_ratio: float = 0.5

    def grasp_dim(self) -> int:
        return 3 + REPR_WIDTH[ReprKind(self.repr_kind)]

    def fingerprint(self) -> str:
        payload = json.dumps(
            {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class GeneratorCheckpoint:
    encoder: EncoderWeights
    head: Mlp
    schedule: NoiseSchedule
    normalization: NormalizationStats
    repr_kind: ReprKind
    config: GeneratorConfig
    loss_curve: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        d = 3 + REPR_WIDTH[ReprKind(self.repr_kind)]
        expect_in = self.config.embedding_dim + d + self.config.time_dims
        widths = self.head.spec.widths
        if widths[0] != expect_in or widths[-1] != d:
            raise InvalidInput(
                f"head widths {widths} inconsistent with repr {self.repr_kind} "
                f"(expect in={expect_in}, out={d})"
            )

    def parameters(self) -> dict:
        return {**self.encoder.parameters(), **self.head.parameters()}


def resolve_kappa(config: GeneratorConfig, dataset) -> NormalizationStats:
    if config.kappa_mode == "computed":
        return compute_kappa(dataset, config.kappa_axis_reduction)
    if config.kappa_mode.startswith("fixed:"):
        return NormalizationStats(float(config.kappa_mode.split(":", 1)[1]), "fixed")
    raise InvalidInput(f"unknown kappa_mode {config.kappa_mode!r}")


def _build_model(config: GeneratorConfig, rng: np.random.Generator):
    encoder = make_encoder(rng, config.embedding_dim)
    d = config.grasp_dim()
    head_spec = MlpSpec(
        (config.embedding_dim + d + config.time_dims, *config.hidden, d), activation="relu"
    )
    head = Mlp(head_spec, rng, name="head")
    return encoder, head


def _noise_prediction(ckpt_or_parts, emb_rows: Tensor, noisy: np.ndarray, t_rows: np.ndarray,
                      time_table: np.ndarray) -> Tensor:
    encoder, head = ckpt_or_parts
    time_feats = Tensor(time_table[t_rows])
    x = concat([emb_rows, Tensor(noisy), time_feats], axis=1)
    return head(x)


def train_generator(dataset, objects, config: GeneratorConfig) -> GeneratorCheckpoint:
    """Fit the noise-prediction network on the positive grasps.

    Each step draws one object, one of its training clouds, a batch of its
    positives, per-sample timesteps and noise, and minimizes the mean squared
    error between predicted and true noise across both channels.
    """
    positives = {s.object_id: s.positives() for s in dataset}
    usable = [o for o in objects if len(positives.get(o.object_id, [])) > 0]
    if not usable:
        raise InvalidInput("no object has positive grasps to train on")
    for obj in usable:
        if not obj.clouds:
            raise InvalidInput(f"object {obj.object_id} has no training clouds")
    norm = resolve_kappa(config, dataset)
    schedule = linear_schedule(config.T, config.beta_trans, config.beta_rot)
    kind = ReprKind(config.repr_kind)
    rng = np.random.default_rng(config.seed)
    encoder, head = _build_model(config, rng)
    params = {**encoder.parameters(), **head.parameters()}
    state = AdamState()
    time_table = np.stack(
        [positional_encoding(t, config.time_dims) for t in range(config.T)]
    )

    # precompute per-object positive coordinates (rotation coords are fixed;
    # translations are kappa-scaled and offset per cloud centroid at use)
    rot_coords = {}
    kt = {}
    for obj in usable:
        pos = positives[obj.object_id]
        rot_coords[obj.object_id] = rotations_to_coords(pos.rotations, kind)
        kt[obj.object_id] = norm.kappa * pos.translations

    losses = np.zeros(config.steps)
    sqrt_ab_t = np.sqrt(schedule.alpha_bars_trans)
    sqrt_1m_ab_t = np.sqrt(1.0 - schedule.alpha_bars_trans)
    sqrt_ab_r = np.sqrt(schedule.alpha_bars_rot)
    sqrt_1m_ab_r = np.sqrt(1.0 - schedule.alpha_bars_rot)

    for step in range(config.steps):
        obj = usable[rng.integers(len(usable))]
        cloud = obj.clouds[rng.integers(len(obj.clouds))]
        pos_rows = rng.integers(0, len(rot_coords[obj.object_id]), size=config.batch)
        t_rows = rng.integers(0, config.T, size=config.batch)
        g_trans = kt[obj.object_id][pos_rows] - norm.kappa * cloud.centroid
        g_rot = rot_coords[obj.object_id][pos_rows]
        eps = rng.standard_normal((config.batch, g_trans.shape[1] + g_rot.shape[1]))
        noisy = np.empty_like(eps)
        noisy[:, :3] = (
            sqrt_ab_t[t_rows, None] * g_trans + sqrt_1m_ab_t[t_rows, None] * eps[:, :3]
        )
        noisy[:, 3:] = (
            sqrt_ab_r[t_rows, None] * g_rot + sqrt_1m_ab_r[t_rows, None] * eps[:, 3:]
        )
        emb = encode_cloud(cloud.points, encoder)
        emb_rows = broadcast_rows(emb, config.batch)
        pred = _noise_prediction((encoder, head), emb_rows, noisy, t_rows, time_table)
        loss = mse(pred, Tensor(eps))
        # cosine decay from lr to lr_min
        lr = config.lr_min + 0.5 * (config.lr - config.lr_min) * (
            1.0 + np.cos(np.pi * step / max(1, config.steps - 1))
        )
        losses[step] = train_step(loss, params, state, lr)
        if step % max(1, config.steps // 10) == 0:
            log.info("generator step %d/%d loss %.5f", step, config.steps, losses[step])

    return GeneratorCheckpoint(encoder, head, schedule, norm, kind, config, losses)


def denoising_loss(ckpt: GeneratorCheckpoint, cloud: PointCloud, grasp_set, seed: int) -> float:
    """Held-out denoising loss of a checkpoint on one object's positives."""
    pos = grasp_set.positives()
    if len(pos) == 0:
        raise InvalidInput("loss evaluation needs positive grasps")
    cfg = ckpt.config
    rng = np.random.default_rng(seed)
    kind = ckpt.repr_kind
    g_rot = rotations_to_coords(pos.rotations, kind)
    g_trans = normalize_translations(pos.translations, cloud.centroid, ckpt.normalization.kappa)
    t_rows = rng.integers(0, cfg.T, size=len(pos))
    eps = rng.standard_normal((len(pos), g_trans.shape[1] + g_rot.shape[1]))
    noisy = np.empty_like(eps)
    noisy[:, :3] = (
        np.sqrt(ckpt.schedule.alpha_bars_trans[t_rows, None]) * g_trans
        + np.sqrt(1.0 - ckpt.schedule.alpha_bars_trans[t_rows, None]) * eps[:, :3]
    )
    noisy[:, 3:] = (
        np.sqrt(ckpt.schedule.alpha_bars_rot[t_rows, None]) * g_rot
        + np.sqrt(1.0 - ckpt.schedule.alpha_bars_rot[t_rows, None]) * eps[:, 3:]
    )
    time_table = np.stack([positional_encoding(t, cfg.time_dims) for t in range(cfg.T)])
    emb = encode_cloud(cloud.points, ckpt.encoder)
    emb_rows = broadcast_rows(emb, len(pos))
    pred = _noise_prediction((ckpt.encoder, ckpt.head), emb_rows, noisy, t_rows, time_table)
    return float(mse(pred, Tensor(eps)).data)


def sample_grasps(cloud: PointCloud, ckpt: GeneratorCheckpoint, B: int, seed: int):
    """Ancestral reverse diffusion conditioned on one mean-centered cloud.

    The object embedding is computed once and reused across the batch and
    all steps. Outputs are de-normalized by 1/kappa and re-offset by the
    cloud centroid; rotation coordinates are decoded to matrices only after
    the final step.
    """
    if B < 1:
        raise InvalidInput("batch size must be >= 1")
    cfg = ckpt.config
    sched = ckpt.schedule
    kind = ckpt.repr_kind
    d = cfg.grasp_dim()
    rng = np.random.default_rng(seed)
    time_table = np.stack([positional_encoding(t, cfg.time_dims) for t in range(cfg.T)])
    emb = encode_cloud(cloud.points, ckpt.encoder)
    emb_rows = broadcast_rows(emb, B)

    x = rng.standard_normal((B, d))
    for t in range(sched.T - 1, -1, -1):
        t_rows = np.full(B, t)
        pred = _noise_prediction((ckpt.encoder, ckpt.head), emb_rows, x, t_rows, time_table).data
        for sl, betas, alphas, abars in (
            (slice(0, 3), sched.betas_trans, sched.alphas_trans, sched.alpha_bars_trans),
            (slice(3, d), sched.betas_rot, sched.alphas_rot, sched.alpha_bars_rot),
        ):
            mean = (x[:, sl] - betas[t] / np.sqrt(1.0 - abars[t]) * pred[:, sl]) / np.sqrt(
                alphas[t]
            )
            if t > 0:
                mean = mean + np.sqrt(betas[t]) * rng.standard_normal(mean.shape)
            x[:, sl] = mean

    translations = denormalize_translations(x[:, :3], cloud.centroid, ckpt.normalization.kappa)
    rotations = coords_to_rotations(x[:, 3:], kind)
    return [GraspPose(R, t) for R, t in zip(rotations, translations)]


# ---------------------------------------------------------------------------
# Checkpoint persistence
# ---------------------------------------------------------------------------


def save_generator(path, ckpt: GeneratorCheckpoint):
    tensors = {name: p.data for name, p in ckpt.parameters().items()}
    tensors["meta/kappa"] = np.array(ckpt.normalization.kappa)
    tensors["meta/kappa_mode"] = string_to_floats(ckpt.normalization.mode)
    tensors["meta/T"] = np.array(float(ckpt.schedule.T))
    tensors["meta/betas_trans"] = ckpt.schedule.betas_trans
    tensors["meta/betas_rot"] = ckpt.schedule.betas_rot
    tensors["meta/repr"] = string_to_floats(ckpt.repr_kind.value)
    tensors["meta/config"] = string_to_floats(
        json.dumps(
            {k: (list(v) if isinstance(v, tuple) else v) for k, v in ckpt.config.__dict__.items()},
            sort_keys=True,
        )
    )
    tensors["meta/config_hash"] = string_to_floats(ckpt.config.fingerprint())
    tensors["meta/loss_curve"] = ckpt.loss_curve
    save_tensors(path, tensors)


def load_generator(path) -> GeneratorCheckpoint:
    tensors = load_tensors(path)
    raw_cfg = json.loads(floats_to_string(tensors["meta/config"]))
    config = GeneratorConfig(
        **{k: (tuple(v) if isinstance(v, list) else v) for k, v in raw_cfg.items()}
    )
    rng = np.random.default_rng(0)
    encoder, head = _build_model(config, rng)
    for name, p in {**encoder.parameters(), **head.parameters()}.items():
        if name not in tensors:
            raise InvalidInput(f"checkpoint missing tensor {name!r}")
        p.data = tensors[name].reshape(p.data.shape)
    schedule = NoiseSchedule(
        int(tensors["meta/T"]), tensors["meta/betas_trans"], tensors["meta/betas_rot"]
    )
    norm = NormalizationStats(
        float(tensors["meta/kappa"]), floats_to_string(tensors["meta/kappa_mode"])
    )
    return GeneratorCheckpoint(
        encoder,
        head,
        schedule,
        norm,
        ReprKind(floats_to_string(tensors["meta/repr"])),
        config,
        tensors.get("meta/loss_curve", np.zeros(0)),
    )
