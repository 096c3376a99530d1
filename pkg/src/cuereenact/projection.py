"""Virtual camera sampling, pinhole projection of cue joints and 2D cue augmentation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCameraError, ValidationError
from .motion import MotionSequence, SparseCue2D, anchor_and_normalize
from .skeleton import CUE_SLOTS, LIMB_PAIRS, ROOT_SLOT

WORLD_UP = np.array([0.0, 1.0, 0.0])
MAX_DRIFT_TILT_DEG = 30.0


@dataclass(frozen=True)
class CameraRanges:
    azimuth_deg: tuple[float, float] = (0.0, 360.0)
    elevation_deg: tuple[float, float] = (-10.0, 30.0)
    distance: tuple[float, float] = (2.0, 6.0)
    drift_speed: tuple[float, float] = (0.0, 0.5)  # m/s
    focal: float = 1.0

    def validate(self) -> None:
        for name in ("azimuth_deg", "elevation_deg", "distance", "drift_speed"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValidationError(f"camera range {name} is not ordered: [{lo}, {hi}]")
        if self.distance[0] <= 0:
            raise ValidationError("camera distance must be positive")
        if self.drift_speed[0] < 0:
            raise ValidationError("drift speed must be non-negative")
        if not (-90 < self.elevation_deg[0] and self.elevation_deg[1] < 90):
            raise ValidationError("elevation must stay inside (-90, 90) degrees")
        if not self.focal > 0:
            raise ValidationError("focal length must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "CameraRanges":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True, eq=False)
class CameraTrack:
    fps: float
    positions: np.ndarray  # (N, 3) world
    quaternions: np.ndarray  # (N, 4) w, x, y, z; rotates camera axes into world
    focal: float = 1.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        quat = np.asarray(self.quaternions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or quat.shape != (len(pos), 4):
            raise ValidationError("camera track needs (N,3) positions and (N,4) quaternions")
        if np.any(np.abs(np.linalg.norm(quat, axis=1) - 1.0) > 1e-9):
            raise ValidationError("camera quaternions must be unit-norm")
        if not self.focal > 0:
            raise ValidationError("focal length must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "quaternions", quat)

    @property
    def n_frames(self) -> int:
        return len(self.positions)

    def rotations(self) -> np.ndarray:
        """World-from-camera rotation matrices, (N, 3, 3); columns are right, up, forward."""
        q = self.quaternions
        return Rotation.from_quat(np.concatenate([q[:, 1:], q[:, :1]], axis=1)).as_matrix()

    def to_dict(self) -> dict:
        return {
            "fps": self.fps,
            "focal": self.focal,
            "positions": self.positions.tolist(),
            "quaternions": self.quaternions.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraTrack":
        return cls(d["fps"], d["positions"], d["quaternions"], d.get("focal", 1.0))

    def __eq__(self, other):
        if not isinstance(other, CameraTrack):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.focal == other.focal
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.quaternions, other.quaternions)
        )


@dataclass(frozen=True)
class AugmentConfig:
    limb_scale_range: tuple[float, float] = (0.7, 1.3)
    rotation_range_deg: tuple[float, float] = (-20.0, 20.0)
    noise_sigma: float = 0.01
    scale: bool = True
    rotate: bool = True
    noise: bool = True

    def validate(self) -> None:
        lo, hi = self.limb_scale_range
        if not 0 < lo <= hi:
            raise ValidationError(f"limb_scale_range must satisfy 0 < lo <= hi, got {self.limb_scale_range}")
        rlo, rhi = self.rotation_range_deg
        if not rlo <= rhi:
            raise ValidationError(f"rotation_range_deg is not ordered: {self.rotation_range_deg}")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be non-negative")

    @property
    def enabled(self) -> bool:
        return self.scale or self.rotate or self.noise

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(scale=False, rotate=False, noise=False)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def subject_centroid(motion: MotionSequence) -> np.ndarray:
    return motion.frames.reshape(-1, 3).mean(axis=0)


def look_at(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-from-camera rotations for cameras at `position` (N,3) looking at `target`."""
    fwd = target - position
    fwd /= np.linalg.norm(fwd, axis=-1, keepdims=True)
    right = np.cross(WORLD_UP, fwd)
    rn = np.linalg.norm(right, axis=-1, keepdims=True)
    # straight up/down views: pick any horizontal right vector
    right = np.where(rn > 1e-9, right / np.maximum(rn, 1e-12), np.array([1.0, 0.0, 0.0]))
    up = np.cross(fwd, right)
    return np.stack([right, up, fwd], axis=-1)


def _to_quat_wxyz(R: np.ndarray) -> np.ndarray:
    q = Rotation.from_matrix(R).as_quat()  # x, y, z, w
    q = np.concatenate([q[:, 3:], q[:, :3]], axis=1)
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q


def sample_camera(n_frames: int, fps: float, seed: int, ranges: CameraRanges | None = None,
                  centroid=None) -> CameraTrack:
    """Random viewpoint on a sphere around `centroid` drifting at bounded speed.

    The start is drawn in spherical coordinates; the drift is a constant-rate
    rotation of the camera offset about a near-vertical axis through the
    centroid, so the distance never changes and the per-frame displacement is
    at most drift_speed / fps.
    """
    ranges = ranges or CameraRanges()
    ranges.validate()
    if n_frames < 2:
        raise ValidationError(f"camera track needs at least 2 frames, got {n_frames}")
    if not fps > 0:
        raise ValidationError("fps must be positive")
    centroid = np.zeros(3) if centroid is None else np.asarray(centroid, dtype=float)
    rng = np.random.default_rng(seed)
    az = math.radians(rng.uniform(*ranges.azimuth_deg))
    el = math.radians(rng.uniform(*ranges.elevation_deg))
    dist = rng.uniform(*ranges.distance)
    speed = rng.uniform(*ranges.drift_speed)
    tilt = math.radians(rng.uniform(0.0, MAX_DRIFT_TILT_DEG))
    tilt_dir = rng.uniform(0.0, 2 * math.pi)
    direction = rng.choice([-1.0, 1.0])

    offset0 = dist * np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
    if speed == 0.0:
        offsets = np.broadcast_to(offset0, (n_frames, 3)).copy()
    else:
        axis = np.array([math.sin(tilt) * math.cos(tilt_dir), math.cos(tilt), math.sin(tilt) * math.sin(tilt_dir)])
        omega = direction * speed / dist
        angles = omega * np.arange(n_frames) / fps
        offsets = Rotation.from_rotvec(angles[:, None] * axis).apply(offset0)
    positions = centroid + offsets
    R = look_at(positions, np.broadcast_to(centroid, positions.shape))
    return CameraTrack(fps, positions, _to_quat_wxyz(R), ranges.focal)


def camera_coordinates(points: np.ndarray, cam: CameraTrack) -> np.ndarray:
    """World points (N, K, 3) expressed in per-frame camera coordinates."""
    R = cam.rotations()
    return np.einsum("nij,nki->nkj", R, points - cam.positions[:, None, :])


def project_raw(motion: MotionSequence, cam: CameraTrack) -> np.ndarray:
    """Pinhole image-plane coordinates (u, v) of the 10 cue joints, (N, 10, 2)."""
    if cam.n_frames != motion.n_frames:
        raise ValidationError(f"camera has {cam.n_frames} frames, motion has {motion.n_frames}")
    pts = motion.frames[:, motion.skeleton.slot_indices()]
    pc = camera_coordinates(pts, cam)
    depth = pc[..., 2]
    bad = np.argwhere(depth <= 0)
    if bad.size:
        f, s = bad[0]
        raise BehindCameraError(int(f), CUE_SLOTS[s], float(depth[f, s]))
    return cam.focal * pc[..., :2] / depth[..., None]


def project(motion: MotionSequence, cam: CameraTrack) -> SparseCue2D:
    uv = project_raw(motion, cam)
    valid = np.ones(uv.shape[:2], dtype=bool)
    return SparseCue2D(motion.fps, anchor_and_normalize(uv, valid), valid)


def to_pixels(uv: np.ndarray, width: int = 1920, height: int = 1080, scale: float | None = None) -> np.ndarray:
    """Image-plane (u, v) to pixel coordinates with a top-left origin and Y down."""
    scale = float(max(width, height)) if scale is None else scale
    px = np.empty_like(uv)
    px[..., 0] = width / 2 + scale * uv[..., 0]
    px[..., 1] = height / 2 - scale * uv[..., 1]
    return px


def augment(cues: SparseCue2D, cfg: AugmentConfig, seed: int) -> SparseCue2D:
    """Symmetric limb scaling, then in-plane rotation, then Gaussian noise, then
    re-normalization. Random draws happen in a fixed order regardless of which
    augmentations are enabled, so toggling one never reshuffles the others."""
    cfg.validate()
    if not cfg.enabled:
        return cues
    rng = np.random.default_rng(seed)
    limb_scales = {name: rng.uniform(*cfg.limb_scale_range) for name in LIMB_PAIRS}
    angle = math.radians(rng.uniform(*cfg.rotation_range_deg))
    noise = rng.standard_normal(cues.cues.shape) * cfg.noise_sigma

    x = cues.cues.copy()
    valid = cues.valid
    if cfg.scale:
        for name, pairs in LIMB_PAIRS.items():
            for slots in pairs:
                x[:, list(slots)] *= limb_scales[name]
    if cfg.rotate:
        c, s = math.cos(angle), math.sin(angle)
        u, v = x[..., 0].copy(), x[..., 1].copy()
        x[..., 0] = c * u - s * v
        x[..., 1] = s * u + c * v
    if cfg.noise:
        mask = valid.copy()
        mask[:, ROOT_SLOT] = False
        x[mask] += noise[mask]
    x[~valid] = 0.0
    x[:, ROOT_SLOT] = 0.0
    # entries are already root-relative; anchor_and_normalize only rescales here
    return SparseCue2D(cues.fps, anchor_and_normalize(x, valid), valid)
