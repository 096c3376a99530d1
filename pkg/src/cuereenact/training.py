"""Progressive 3D-to-2D adapter training on procedural motion.

Stages:

- ``base``: pretrain the toy generator on masked reconstruction (text dropout
  keeps an unconditional pathway for guidance).
- ``3d``: base frozen; train the 3D local adapter and the global trajectory
  adapter on L_base + lambda1 * L_O.
- ``2d``: base and 3D local adapter frozen; train the 2D local adapter and the
  global adapter on L_base + lambda1 * L_O + lambda2 * L_3D, where L_3D pulls
  2D-cue features toward the frozen 3D teacher.
"""
from __future__ import annotations

import csv
import hashlib
import math
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .errors import ValidationError
from .losses import loss_3d_align, loss_base, loss_ortho
from .model import (
    DTYPE,
    KIND_GA3D,
    KIND_LA2D,
    KIND_LA3D,
    PATTERN_PROMPT,
    Adapter,
    BaseGenerator,
    Checkpoint,
    GeneratorConfig,
    freeze,
    init_adapter,
    init_base,
    weight_hash,
)
from .motion import anchor_and_normalize, extract_cues_3d, root_trajectory
from .projection import AugmentConfig, CameraRanges, augment, project, sample_camera, subject_centroid
from .synth import synth_motion

STAGES = ("base", "3d", "2d")
ABLATIONS = ("no_3dga", "no_Lo", "no_L3d", "freeze_3dga", "use_3d_input")
LOSS_COLUMNS = ("step", "epoch", "L_base", "L_O", "L_3D", "total")

# roles under which adapters live in a training state / checkpoint
ROLE_LA3D = "la3d"
ROLE_LA2D = "la2d"
ROLE_GA = "ga"
ROLE_LA3D_INPUT = "la3d_input"

# per-pattern parameter ranges for the procedural training corpus
CORPUS_RANGES = {
    "walk": {"amplitude": (0.5, 1.0), "period": (0.8, 1.3)},
    "jump": {"amplitude": (0.15, 0.45), "period": (0.6, 1.0)},
    "sway": {"amplitude": (0.04, 0.12), "period": (1.5, 2.5)},
    "static": {"amplitude": (0.0, 0.0), "period": (1.0, 1.0)},
}


def substream(seed: int, *names) -> np.random.Generator:
    """Independent generator for a named purpose derived from the run seed."""
    key = [zlib.crc32(str(n).encode()) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


def substream_seed(seed: int, *names) -> int:
    return int(substream(seed, *names).integers(0, 2**31 - 1))


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 0.01
    lambda2: float = 10.0
    learning_rate: float = 2e-4
    batch_size: int = 64
    epochs: int = 30
    mask_ratio: float = 0.5  # per-sample masking ratio is drawn from [mask_ratio, 1]
    seed: int = 0
    stage: str = "3d"
    no_3dga: bool = False
    no_Lo: bool = False
    no_L3d: bool = False
    freeze_3dga: bool = False
    use_3d_input: bool = False
    allow_cold_start: bool = False
    text_dropout: float = 0.1
    ga_dropout: float = 0.5  # per-sample chance the global adapter is not injected
    n_clips: int = 256
    n_val: int = 32
    clip_seconds: float = 2.0
    fps: float = 20.0
    model: GeneratorConfig = field(default_factory=GeneratorConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    camera: CameraRanges = field(default_factory=CameraRanges)

    def validate(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValidationError("loss weights must be non-negative")
        if not self.learning_rate >= 0:
            raise ValidationError("learning rate must be non-negative")
        if self.stage not in STAGES:
            raise ValidationError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.n_clips < 1 or self.n_val < 1:
            raise ValidationError("batch_size, n_clips and n_val must be positive, epochs non-negative")
        if not 0 <= self.mask_ratio <= 1:
            raise ValidationError("mask_ratio must lie in [0, 1]")
        if not 0 <= self.text_dropout <= 1 or not 0 <= self.ga_dropout <= 1:
            raise ValidationError("text_dropout and ga_dropout must lie in [0, 1]")
        if self.n_frames < 2 or self.n_frames > self.model.n_max:
            raise ValidationError(f"clip length {self.n_frames} frames outside [2, {self.model.n_max}]")
        self.augment.validate()
        self.camera.validate()

    @property
    def n_frames(self) -> int:
        return int(round(self.clip_seconds * self.fps))

    @property
    def lambda1_effective(self) -> float:
        return 0.0 if (self.no_Lo or self.no_3dga) else self.lambda1

    @property
    def lambda2_effective(self) -> float:
        return 0.0 if self.no_L3d else self.lambda2

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["model"] = self.model.to_dict()
        d["augment"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.augment.to_dict().items()}
        d["camera"] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.camera).items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config key(s): {sorted(unknown)}")
        d = dict(d)
        if "model" in d:
            d["model"] = GeneratorConfig(**d["model"])
        if "augment" in d:
            d["augment"] = AugmentConfig.from_dict(d["augment"])
        if "camera" in d:
            d["camera"] = CameraRanges.from_dict(d["camera"])
        return cls(**d)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------------- data


@dataclass
class ClipSet:
    motions: list
    text: torch.Tensor  # (C,) prompt ids
    poses: torch.Tensor  # (C, N, P)
    cues3d: torch.Tensor  # (C, N, 40)
    traj: torch.Tensor  # (C, N, 3)

    def __len__(self):
        return len(self.motions)


def make_clips(n: int, seed: int, seconds: float = 2.0, fps: float = 20.0, tag: str = "train") -> ClipSet:
    """Procedural corpus cycling through the motion patterns with per-clip random parameters."""
    patterns = list(CORPUS_RANGES)
    motions, text = [], []
    for i in range(n):
        rng = substream(seed, "corpus", tag, i)
        pattern = patterns[i % len(patterns)]
        r = CORPUS_RANGES[pattern]
        m = synth_motion(
            pattern,
            amplitude=rng.uniform(*r["amplitude"]),
            period=rng.uniform(*r["period"]),
            duration=seconds,
            fps=fps,
            seed=int(rng.integers(0, 2**31 - 1)),
            heading_deg=0.0,  # corpus clips start canonically facing +Z
        )
        motions.append(m)
        text.append(PATTERN_PROMPT[pattern])
    poses = torch.as_tensor(np.stack([m.frames.reshape(m.n_frames, -1) for m in motions]))
    c3 = torch.as_tensor(np.stack([extract_cues_3d(m).flat() for m in motions]))
    tr = torch.as_tensor(np.stack([root_trajectory(m).positions for m in motions]))
    return ClipSet(motions, torch.as_tensor(text), poses, c3, tr)


def cues_2d_for(motions, seed: int, cfg: TrainConfig, *names) -> torch.Tensor:
    """Fresh camera + augmentation per clip; (B, N, 30)."""
    out = []
    for i, m in enumerate(motions):
        cam = sample_camera(m.n_frames, m.fps, substream_seed(seed, "camera", *names, i), cfg.camera,
                            centroid=subject_centroid(m))
        cues = augment(project(m, cam), cfg.augment, substream_seed(seed, "augment", *names, i))
        out.append(cues.flat())
    return torch.as_tensor(np.stack(out))


def noisy_cues_3d(motions, seed: int, sigma: float, *names) -> torch.Tensor:
    """3D cues with Gaussian perturbation, the input of the 3D-joint-input ablation."""
    out = []
    for i, m in enumerate(motions):
        c = extract_cues_3d(m)
        rng = substream(seed, "noise3d", *names, i)
        x = c.cues + rng.standard_normal(c.cues.shape) * sigma
        x = anchor_and_normalize(x, c.valid)
        out.append(np.concatenate([x.reshape(len(x), -1), c.valid.astype(float)], axis=1))
    return torch.as_tensor(np.stack(out))


def sample_masks(batch: int, n_frames: int, min_ratio: float, rng: np.random.Generator) -> torch.Tensor:
    mask = np.zeros((batch, n_frames), dtype=bool)
    for b in range(batch):
        k = max(1, int(round(rng.uniform(min_ratio, 1.0) * n_frames)))
        mask[b, rng.permutation(n_frames)[:k]] = True
    return torch.as_tensor(mask)


# --------------------------------------------------------------------- state


@dataclass
class TrainState:
    base: BaseGenerator
    adapters: dict
    config: TrainConfig
    stage: str
    history: list = field(default_factory=list)  # one row per optimizer step
    val_history: list = field(default_factory=list)  # one row per epoch
    step: int = 0
    epoch: int = 0
    optimizer_state: dict | None = None
    weights: dict = field(default_factory=dict)  # objective weight of each loss term

    @property
    def inference_adapter(self) -> str | None:
        for role in (ROLE_LA2D, ROLE_LA3D_INPUT, ROLE_LA3D):
            if role in self.adapters:
                return role
        return None

    def hashes(self) -> dict:
        out = {"base": weight_hash(self.base)}
        out.update({k: weight_hash(a) for k, a in self.adapters.items()})
        return out

    def checkpoint(self) -> Checkpoint:
        meta = {
            "stage": self.stage,
            "config": self.config.to_dict(),
            "step": self.step,
            "epoch": self.epoch,
            "inference_adapter": self.inference_adapter,
            "objective_weights": self.weights,
        }
        return Checkpoint(self.base, dict(self.adapters), meta)


def state_from_checkpoint(ckpt: Checkpoint, cfg: TrainConfig) -> TrainState:
    return TrainState(ckpt.base, dict(ckpt.adapters), cfg, ckpt.meta.get("stage", "base"))


# ------------------------------------------------------------------- loops


def _text_ids(text: torch.Tensor, dropout: float, null_id: int, rng: np.random.Generator) -> torch.Tensor:
    drop = torch.as_tensor(rng.uniform(size=len(text)) < dropout)
    return torch.where(drop, torch.full_like(text, null_id), text)


def _stage_batch(state: TrainState, clips: ClipSet, idx: np.ndarray, names: tuple, train: bool):
    """Compute every loss term for a batch of clip indices; returns dict of tensors."""
    cfg = state.config
    seed = cfg.seed
    base = state.base
    idx_t = torch.as_tensor(idx)
    poses = clips.poses[idx_t]
    rng = substream(seed, "batch", *names)
    mask = sample_masks(len(idx), poses.shape[1], cfg.mask_ratio, rng)
    text = clips.text[idx_t]
    if train:
        text = _text_ids(text, cfg.text_dropout, base.cfg.null_text, rng)
    nan = torch.tensor(float("nan"), dtype=DTYPE)

    if state.stage == "base":
        pred = base(poses, mask, text)
        return {"L_base": loss_base(pred, poses, mask), "L_O": nan, "L_3D": nan}

    ga = state.adapters.get(ROLE_GA)
    f_ga = ga(clips.traj[idx_t]) if ga is not None else None
    motions = [clips.motions[i] for i in idx]
    if state.stage == "3d":
        f_local = state.adapters[ROLE_LA3D](clips.cues3d[idx_t])
        l3d = nan
    else:
        if cfg.use_3d_input:
            student = state.adapters[ROLE_LA3D_INPUT]
            f_local = student(noisy_cues_3d(motions, seed, cfg.augment.noise_sigma, *names))
        else:
            f_local = state.adapters[ROLE_LA2D](cues_2d_for(motions, seed, cfg, *names))
        teacher = state.adapters.get(ROLE_LA3D)
        if teacher is not None:
            with torch.no_grad():
                f_teacher = teacher(clips.cues3d[idx_t])
            l3d = loss_3d_align(f_teacher, f_local)
        else:
            l3d = nan
    if f_ga is None:
        feats = f_local
    else:
        # inference keeps only the local adapter; train it to stand on its own too
        keep = torch.ones(len(idx), dtype=DTYPE)
        if train:
            keep = torch.as_tensor((rng.uniform(size=len(idx)) >= cfg.ga_dropout).astype(float))
        feats = f_local + f_ga * keep[None, :, None, None]
    pred = base(poses, mask, text, feats)
    lo = loss_ortho(f_ga, f_local) if f_ga is not None else nan
    return {"L_base": loss_base(pred, poses, mask), "L_O": lo, "L_3D": l3d}


def _objective(terms: dict, weights: dict) -> torch.Tensor:
    total = terms["L_base"]
    for k in ("L_O", "L_3D"):
        if weights[k] != 0.0:
            total = total + weights[k] * terms[k]
    return total


def _trainable(state: TrainState) -> list:
    cfg = state.config
    if state.stage == "base":
        modules = [state.base]
    elif state.stage == "3d":
        modules = [state.adapters[ROLE_LA3D]]
        if ROLE_GA in state.adapters:
            modules.append(state.adapters[ROLE_GA])
    else:
        modules = [state.adapters[ROLE_LA3D_INPUT if cfg.use_3d_input else ROLE_LA2D]]
        if ROLE_GA in state.adapters and not cfg.freeze_3dga:
            modules.append(state.adapters[ROLE_GA])
    return modules


def run_stage(state: TrainState, clips: ClipSet, val: ClipSet, log=None) -> TrainState:
    """Optimize the stage's trainable modules for cfg.epochs epochs in place."""
    cfg = state.config
    trainable = _trainable(state)
    for module in [state.base, *state.adapters.values()]:
        freeze(module)
    params = []
    for module in trainable:
        for p in module.parameters():
            p.requires_grad_(True)
            params.append(p)
    state.weights = {
        "L_base": 1.0,
        "L_O": cfg.lambda1_effective if state.stage != "base" else 0.0,
        "L_3D": cfg.lambda2_effective if state.stage == "2d" else 0.0,
    }
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    n = len(clips)
    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, "shuffle", state.stage, epoch).permutation(n)
        epoch_rows = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            terms = _stage_batch(state, clips, idx, (state.stage, epoch, start), train=True)
            total = _objective(terms, state.weights)
            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            row = {"step": state.step, "epoch": epoch}
            row.update({k: v.item() for k, v in terms.items()})
            row["total"] = total.item()
            state.history.append(row)
            epoch_rows.append(row)
            state.step += 1
        state.epoch = epoch + 1
        vrow = {"epoch": epoch + 1}
        vrow.update(validate(state, val))
        for k in ("L_base", "L_O", "L_3D", "total"):
            vrow[f"train_{k}"] = float(np.mean([r[k] for r in epoch_rows]))
        state.val_history.append(vrow)
        if log is not None:
            log(vrow)
    state.optimizer_state = opt.state_dict()
    for module in [state.base, *state.adapters.values()]:
        freeze(module)
    return state


def validate(state: TrainState, val: ClipSet) -> dict:
    """Loss terms on the fixed held-out batch (fixed masks, cameras and augmentations)."""
    with torch.no_grad():
        terms = _stage_batch(state, val, np.arange(len(val)), ("val",), train=False)
    return {f"val_{k}": float(v) for k, v in terms.items()}


def make_datasets(cfg: TrainConfig):
    clips = make_clips(cfg.n_clips, cfg.seed, cfg.clip_seconds, cfg.fps, "train")
    val = make_clips(cfg.n_val, cfg.seed, cfg.clip_seconds, cfg.fps, "val")
    return clips, val


def pretrain_base(cfg: TrainConfig, data=None, log=None) -> TrainState:
    cfg = cfg.with_(stage="base")
    cfg.validate()
    clips, val = data or make_datasets(cfg)
    base = init_base(cfg.model, substream_seed(cfg.seed, "init", "base"))
    state = TrainState(base, {}, cfg, "base")
    return run_stage(state, clips, val, log)


def train_stage_3d(base: BaseGenerator, cfg: TrainConfig, data=None, log=None) -> TrainState:
    cfg = cfg.with_(stage="3d")
    cfg.validate()
    clips, val = data or make_datasets(cfg)
    freeze(base)
    adapters = {ROLE_LA3D: init_adapter(base, KIND_LA3D, substream_seed(cfg.seed, "init", ROLE_LA3D))}
    if not cfg.no_3dga:
        adapters[ROLE_GA] = init_adapter(base, KIND_GA3D, substream_seed(cfg.seed, "init", ROLE_GA))
    state = TrainState(base, adapters, cfg, "3d")
    return run_stage(state, clips, val, log)


def train_stage_2d(base: BaseGenerator, state3d: TrainState | None, cfg: TrainConfig, data=None,
                   log=None) -> TrainState:
    cfg = cfg.with_(stage="2d")
    cfg.validate()
    if state3d is None or ROLE_LA3D not in state3d.adapters:
        if not (cfg.no_L3d and cfg.allow_cold_start):
            raise ValidationError("stage 2d needs a trained stage-3d state (3D local adapter)")
    clips, val = data or make_datasets(cfg)
    freeze(base)
    adapters = {}
    if state3d is not None:
        if ROLE_LA3D in state3d.adapters:
            adapters[ROLE_LA3D] = freeze(state3d.adapters[ROLE_LA3D])
        if ROLE_GA in state3d.adapters and not cfg.no_3dga:
            adapters[ROLE_GA] = state3d.adapters[ROLE_GA]
    if ROLE_GA not in adapters and not cfg.no_3dga:
        adapters[ROLE_GA] = init_adapter(base, KIND_GA3D, substream_seed(cfg.seed, "init", ROLE_GA))
    if cfg.use_3d_input:
        adapters[ROLE_LA3D_INPUT] = init_adapter(base, KIND_LA3D, substream_seed(cfg.seed, "init", ROLE_LA3D_INPUT))
    else:
        adapters[ROLE_LA2D] = init_adapter(base, KIND_LA2D, substream_seed(cfg.seed, "init", ROLE_LA2D))
    state = TrainState(base, adapters, cfg, "2d")
    return run_stage(state, clips, val, log)


# ---------------------------------------------------------------- reporting


def objective_residual(row: dict, weights: dict) -> float:
    """|total - weighted sum of the reported terms| for one history row."""
    s = row["L_base"]
    for k in ("L_O", "L_3D"):
        if weights.get(k, 0.0) != 0.0:
            s += weights[k] * row[k]
    return abs(row["total"] - s)


def write_loss_table(history: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for row in history:
            w.writerow([row["step"], row["epoch"]] + [repr(row[k]) for k in LOSS_COLUMNS[2:]])


def read_loss_table(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {k: (int(v) if k in ("step", "epoch") else float(v)) for k, v in row.items()}
        for row in rows
    ]
