"""Toy masked-reconstruction motion generator with ControlNet-like adapter branches.

The base network embeds a partially masked pose sequence, runs it through
residual temporal blocks and predicts every frame. An adapter is a trainable
copy of those blocks driven by a condition sequence; after each block its
state passes through a zero-initialized projection and is added to the base
residual stream at the same depth.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ParseError, ValidationError
from .motion import MotionSequence, RootTrajectory, SparseCue2D, SparseCue3D, SparseCues
from .skeleton import N_SLOTS, Skeleton, default_skeleton

DTYPE = torch.float64

PROMPTS = ("walk forward", "jump forward", "sway in place", "stand still")
PATTERN_PROMPT = {"walk": 0, "jump": 1, "sway": 2, "static": 3}

KIND_LA3D = "3d-la"
KIND_LA2D = "2d-la"
KIND_GA3D = "3d-ga"
ADAPTER_KINDS = (KIND_LA3D, KIND_LA2D, KIND_GA3D)
COND_DIMS = {
    KIND_LA3D: N_SLOTS * 3 + N_SLOTS,
    KIND_LA2D: N_SLOTS * 2 + N_SLOTS,
    KIND_GA3D: 3,
}

CHECKPOINT_FORMAT = "cuereenact-checkpoint/1"


@dataclass(frozen=True)
class GeneratorConfig:
    n_joints: int = 22
    d: int = 64
    n_blocks: int = 4
    n_max: int = 240
    kernel: int = 5
    prompts: tuple[str, ...] = PROMPTS

    def __post_init__(self):
        object.__setattr__(self, "prompts", tuple(self.prompts))
        if self.d < 1 or self.n_blocks < 1:
            raise ValidationError("generator width and depth must be >= 1")
        if self.kernel % 2 != 1:
            raise ValidationError("temporal kernel must be odd")

    @property
    def pose_dim(self) -> int:
        return self.n_joints * 3

    @property
    def null_text(self) -> int:
        return len(self.prompts)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prompts"] = list(self.prompts)
        return d


class TemporalBlock(nn.Module):
    def __init__(self, d: int, kernel: int):
        super().__init__()
        self.mix = nn.Conv1d(d, d, kernel, padding=kernel // 2, groups=d)
        self.fc1 = nn.Linear(d, 2 * d)
        self.fc2 = nn.Linear(2 * d, d)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        h = h + self.mix(h.transpose(1, 2)).transpose(1, 2)
        return h + self.fc2(torch.tanh(self.fc1(h)))


class BaseGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d
        self.in_proj = nn.Linear(cfg.pose_dim + 1, d)
        self.pos = nn.Parameter(torch.zeros(cfg.n_max, d))
        self.text = nn.Embedding(len(cfg.prompts) + 1, d)
        self.blocks = nn.ModuleList(TemporalBlock(d, cfg.kernel) for _ in range(cfg.n_blocks))
        self.out = nn.Linear(d, cfg.pose_dim)
        self.to(DTYPE)

    def forward(self, x, mask, text_id, features=None):
        """x: (B, N, P) poses, masked frames ignored; mask: (B, N) bool, True = to predict;
        text_id: (B,) long; features: optional (L, B, N, d) residual injections."""
        n = x.shape[1]
        if n > self.cfg.n_max:
            raise ValidationError(f"sequence length {n} exceeds n_max {self.cfg.n_max}")
        m = mask.to(x.dtype).unsqueeze(-1)
        h = self.in_proj(torch.cat([x * (1 - m), m], dim=-1))
        h = h + self.pos[:n] + self.text(text_id).unsqueeze(1)
        for b, block in enumerate(self.blocks):
            h = block(h)
            if features is not None:
                h = h + features[b]
        return self.out(h)


class Adapter(nn.Module):
    def __init__(self, base: BaseGenerator, kind: str):
        super().__init__()
        if kind not in ADAPTER_KINDS:
            raise ValidationError(f"unknown adapter kind {kind!r}")
        self.kind = kind
        cfg = base.cfg
        self.cond = nn.Sequential(
            nn.Linear(COND_DIMS[kind], 2 * cfg.d), nn.Tanh(), nn.Linear(2 * cfg.d, cfg.d)
        )
        self.pos = nn.Parameter(base.pos.detach().clone())
        self.blocks = copy.deepcopy(base.blocks)
        self.zero_out = nn.ModuleList(nn.Linear(cfg.d, cfg.d) for _ in range(cfg.n_blocks))
        for lin in self.zero_out:
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)
        for p in self.parameters():  # the copy is trainable even when the base is frozen
            p.requires_grad_(True)
        self.to(DTYPE)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        """c: (B, N, cond_dim) -> FeatureSeq (L, B, N, d)."""
        n = c.shape[1]
        if n > self.pos.shape[0]:
            raise ValidationError(f"sequence length {n} exceeds n_max {self.pos.shape[0]}")
        if self.kind != KIND_GA3D:
            # sequence-normalized cues shrink like 1/sqrt(N * slots); restore O(1) entries
            n_coord = COND_DIMS[self.kind] - N_SLOTS
            gain = math.sqrt(n * (N_SLOTS - 1))
            c = torch.cat([c[..., :n_coord] * gain, c[..., n_coord:]], dim=-1)
        a = self.cond(c) + self.pos[:n]
        feats = []
        for block, proj in zip(self.blocks, self.zero_out):
            a = block(a)
            feats.append(proj(a))
        return torch.stack(feats)


def _seeded_init(module: nn.Module, seed: int) -> None:
    g = torch.Generator().manual_seed(seed)
    for name, p in module.named_parameters():
        with torch.no_grad():
            if name.endswith("bias"):
                p.zero_()
            elif name == "pos" or name.endswith("text.weight"):
                p.copy_(0.02 * torch.randn(p.shape, generator=g, dtype=DTYPE))
            else:
                fan_in = p.shape[1] * (p.shape[2] if p.ndim == 3 else 1) if p.ndim > 1 else p.shape[0]
                p.copy_(torch.randn(p.shape, generator=g, dtype=DTYPE) / math.sqrt(fan_in))


def init_base(cfg: GeneratorConfig | None = None, seed: int = 0) -> BaseGenerator:
    base = BaseGenerator(cfg or GeneratorConfig())
    _seeded_init(base, seed)
    return base


def init_adapter(base: BaseGenerator, kind: str, seed: int = 0) -> Adapter:
    """Copy the base blocks, zero the output projections, randomly init the condition encoder."""
    adapter = Adapter(base, kind)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in (adapter.cond[0], adapter.cond[2]):
            w = layer.weight
            w.copy_(torch.randn(w.shape, generator=g, dtype=DTYPE) / math.sqrt(w.shape[1]))
            layer.bias.zero_()
    return adapter


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module


# ------------------------------------------------------------ condition tensors


def condition_array(condition) -> tuple[str, np.ndarray]:
    """Adapter kind and (N, cond_dim) per-frame features for a condition value."""
    if isinstance(condition, SparseCue2D):
        return KIND_LA2D, condition.flat()
    if isinstance(condition, SparseCue3D):
        return KIND_LA3D, condition.flat()
    if isinstance(condition, RootTrajectory):
        return KIND_GA3D, np.asarray(condition.positions, dtype=float)
    raise ValidationError(f"unsupported condition type {type(condition).__name__}")


def adapter_forward(adapter: Adapter, condition) -> np.ndarray:
    """FeatureSeq (L, N, d) for one condition sequence."""
    kind, arr = condition_array(condition)
    if kind != adapter.kind:
        raise ValidationError(f"{kind} condition given to a {adapter.kind} adapter")
    with torch.no_grad():
        return adapter(torch.as_tensor(arr)[None])[:, 0].numpy()


def pose_tensor(motion: MotionSequence) -> torch.Tensor:
    return torch.as_tensor(motion.frames.reshape(motion.n_frames, -1))


def _single(motion_in, mask, text_id, null_text):
    x = torch.as_tensor(np.asarray(motion_in, dtype=float))[None]
    m = torch.as_tensor(np.asarray(mask, dtype=bool))[None]
    t = torch.tensor([null_text if text_id is None else int(text_id)])
    return x, m, t


def base_forward(base: BaseGenerator, motion_in, text_id, mask) -> np.ndarray:
    """Predicted (N, P) pose frames for one masked input sequence (N, P)."""
    x, m, t = _single(motion_in, mask, text_id, base.cfg.null_text)
    if x.shape[-1] != base.cfg.pose_dim:
        raise ValidationError(f"pose dim {x.shape[-1]} does not match generator {base.cfg.pose_dim}")
    with torch.no_grad():
        return base(x, m, t)[0].numpy()


def conditioned_forward(base: BaseGenerator, adapters, conditions, motion_in, text_id, mask) -> np.ndarray:
    """Base forward with the summed per-block features of every (adapter, condition) pair injected."""
    adapters, conditions = list(adapters), list(conditions)
    if len(adapters) != len(conditions):
        raise ValidationError("adapters and conditions must align")
    x, m, t = _single(motion_in, mask, text_id, base.cfg.null_text)
    feats = None
    for adapter, cond in zip(adapters, conditions):
        f = torch.as_tensor(adapter_forward(adapter, cond))[:, None]
        if f.shape[2] != x.shape[1]:
            raise ValidationError(f"condition length {f.shape[2]} does not match motion length {x.shape[1]}")
        feats = f if feats is None else feats + f
    with torch.no_grad():
        return base(x, m, t, feats)[0].numpy()


# ------------------------------------------------------------------ sampling


def combine_guidance(p_uu, p_tu, p_tc, s_motion: float, s_text: float):
    """Nested classifier-free guidance: text delta inside, motion delta outside."""
    out = p_uu + s_text * (p_tu - p_uu)
    if s_motion != 0:
        out = out + s_motion * (p_tc - p_tu)
    return out


def unmask_schedule(n_frames: int, steps: int, seed: int) -> list[np.ndarray]:
    """Frames revealed at each in-filling step: a seeded permutation cut into equal chunks."""
    order = np.random.default_rng(seed).permutation(n_frames)
    return [c for c in np.array_split(order, steps) if len(c)]


def _infill(predict, n_frames: int, pose_dim: int, steps: int, seed: int) -> torch.Tensor:
    x = torch.zeros(1, n_frames, pose_dim, dtype=DTYPE)
    mask = torch.ones(1, n_frames, dtype=torch.bool)
    for frames in unmask_schedule(n_frames, steps, seed):
        p = predict(x, mask)
        idx = torch.as_tensor(frames)
        x[0, idx] = p[0, idx]
        mask[0, idx] = False
    return x[0]


def _prepare_sampling(base, la, cues, text_id, n_frames):
    if cues is not None:
        n = cues.n_frames
        if n > base.cfg.n_max:
            raise ValidationError(f"sequence length {n} exceeds n_max {base.cfg.n_max}")
        if la is None:
            raise ValidationError("cues given but no local adapter")
        kind, arr = condition_array(cues)
        if kind != la.kind:
            raise ValidationError(f"{kind} cues given to a {la.kind} adapter")
        with torch.no_grad():
            feats = la(torch.as_tensor(arr)[None])
    else:
        if n_frames is None:
            raise ValidationError("n_frames is required when sampling without cues")
        n = int(n_frames)
        feats = None
    if n > base.cfg.n_max:
        raise ValidationError(f"sequence length {n} exceeds n_max {base.cfg.n_max}")
    null = torch.tensor([base.cfg.null_text])
    text = null if text_id is None else torch.tensor([int(text_id)])
    return n, feats, null, text


def _to_motion(x: torch.Tensor, fps: float, skeleton: Skeleton | None) -> MotionSequence:
    skeleton = skeleton or default_skeleton()
    return MotionSequence(skeleton, fps, x.numpy().reshape(x.shape[0], -1, 3))


def cfg_sample(base: BaseGenerator, la: Adapter | None, cues: SparseCues | None, text_id: int | None,
               s_motion: float = 2.0, s_text: float = 4.0, seed: int = 0, steps: int = 4,
               n_frames: int | None = None, fps: float | None = None,
               skeleton: Skeleton | None = None) -> MotionSequence:
    """Iterative masked in-filling with multi-condition classifier-free guidance.

    Only the local adapter takes part. Missing text makes the text pathway the
    unconditional one; missing cues make the motion delta vanish.
    """
    n, feats, null, text = _prepare_sampling(base, la, cues, text_id, n_frames)
    fps = cues.fps if cues is not None else (fps or 20.0)

    def predict(x, mask):
        with torch.no_grad():
            p_uu = base(x, mask, null)
            p_tu = p_uu if text_id is None else base(x, mask, text)
            if feats is None or s_motion == 0:
                p_tc = p_tu
            else:
                p_tc = base(x, mask, text, feats)
        return combine_guidance(p_uu, p_tu, p_tc, s_motion, s_text)

    return _to_motion(_infill(predict, n, base.cfg.pose_dim, steps, seed), fps, skeleton)


def conditional_sample(base: BaseGenerator, la: Adapter | None, cues: SparseCues | None, text_id: int | None,
                       seed: int = 0, steps: int = 4, n_frames: int | None = None,
                       fps: float | None = None, skeleton: Skeleton | None = None) -> MotionSequence:
    """In-filling driven by the fully conditioned prediction alone (no guidance)."""
    n, feats, null, text = _prepare_sampling(base, la, cues, text_id, n_frames)
    fps = cues.fps if cues is not None else (fps or 20.0)

    def predict(x, mask):
        with torch.no_grad():
            return base(x, mask, text, feats)

    return _to_motion(_infill(predict, n, base.cfg.pose_dim, steps, seed), fps, skeleton)


# ---------------------------------------------------------------- checkpoints


def weight_hash(module: nn.Module) -> str:
    """SHA-256 over parameter names, shapes and raw float64 bytes."""
    import hashlib

    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        arr = t.detach().cpu().numpy()
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    base: BaseGenerator
    adapters: dict = field(default_factory=dict)  # role name -> Adapter
    meta: dict = field(default_factory=dict)

    def hashes(self) -> dict:
        out = {"base": weight_hash(self.base)}
        out.update({k: weight_hash(a) for k, a in self.adapters.items()})
        return out


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """npz container: one array per named weight (`<module>/<param>`) plus a
    JSON manifest stored under `__manifest__`."""
    arrays = {}
    for prefix, module in [("base", ckpt.base)] + sorted(ckpt.adapters.items()):
        for name, t in module.state_dict().items():
            arrays[f"{prefix}/{name}"] = t.detach().cpu().numpy()
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "generator": ckpt.base.cfg.to_dict(),
        "adapters": {k: a.kind for k, a in sorted(ckpt.adapters.items())},
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "hashes": ckpt.hashes(),
        "meta": ckpt.meta,
    }
    arrays["__manifest__"] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Checkpoint:
    try:
        data = np.load(Path(path), allow_pickle=False)
    except (ValueError, OSError) as e:
        if isinstance(e, FileNotFoundError):
            raise
        raise ParseError(f"{path}: not a checkpoint container ({e})") from None
    if "__manifest__" not in data:
        raise ParseError(f"{path}: checkpoint has no manifest")
    manifest = json.loads(bytes(data["__manifest__"]).decode())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
    cfg = GeneratorConfig(**manifest["generator"])
    base = BaseGenerator(cfg)
    base.load_state_dict(_prefixed(data, "base"))
    adapters = {}
    for role, kind in manifest["adapters"].items():
        a = Adapter(base, kind)
        a.load_state_dict(_prefixed(data, role))
        adapters[role] = a
    return Checkpoint(base, adapters, manifest.get("meta", {}))


def _prefixed(data, prefix: str) -> dict:
    p = prefix + "/"
    return {k[len(p):]: torch.as_tensor(data[k]) for k in data.files if k.startswith(p)}
