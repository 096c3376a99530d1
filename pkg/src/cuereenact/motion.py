"""Motion sequences, root trajectories and canonical sparse cues, plus their file formats."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .skeleton import CUE_SLOTS, N_SLOTS, ROOT_SLOT, Skeleton

# below this global norm a cue sequence counts as degenerate and stays all-zero
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True, eq=False)
class MotionSequence:
    skeleton: Skeleton
    fps: float
    frames: np.ndarray  # (N, J, 3) meters, Y-up

    def __post_init__(self):
        frames = np.array(self.frames, dtype=float)
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", float(self.fps))
        self.validate()

    def validate(self) -> None:
        if not (math.isfinite(self.fps) and self.fps > 0):
            raise ValidationError(f"fps must be positive, got {self.fps}")
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ValidationError(f"frames must have shape (N, J, 3), got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise ValidationError(f"need at least 2 frames, got {self.frames.shape[0]}")
        if self.frames.shape[1] != self.skeleton.n_joints:
            raise ValidationError(
                f"frames have {self.frames.shape[1]} joints, skeleton has {self.skeleton.n_joints}"
            )
        if not np.all(np.isfinite(self.frames)):
            bad = np.argwhere(~np.isfinite(self.frames))[0]
            raise ValidationError(f"non-finite coordinate at frame {bad[0]}, joint {bad[1]}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return self.n_frames / self.fps

    def with_frames(self, frames: np.ndarray) -> "MotionSequence":
        return MotionSequence(self.skeleton, self.fps, frames)

    def joint(self, name: str) -> np.ndarray:
        return self.frames[:, self.skeleton.index(name)]

    def __eq__(self, other):
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (
            self.skeleton == other.skeleton
            and self.fps == other.fps
            and np.array_equal(self.frames, other.frames)
        )


@dataclass(frozen=True, eq=False)
class RootTrajectory:
    fps: float
    positions: np.ndarray  # (N, 3)


@dataclass(frozen=True, eq=False)
class SparseCues:
    """Root-anchored, globally normalized cue slots with a validity mask."""

    fps: float
    cues: np.ndarray  # (N, 10, dim)
    valid: np.ndarray  # (N, 10) bool

    dim = 0

    def __post_init__(self):
        cues = np.array(self.cues, dtype=float)
        valid = np.array(self.valid, dtype=bool)
        if cues.ndim != 3 or cues.shape[1:] != (N_SLOTS, self.dim):
            raise ValidationError(f"cues must have shape (N, {N_SLOTS}, {self.dim}), got {cues.shape}")
        if valid.shape != cues.shape[:2]:
            raise ValidationError(f"valid mask shape {valid.shape} does not match cues {cues.shape[:2]}")
        if not np.all(np.isfinite(cues)):
            raise ValidationError("non-finite cue value")
        cues.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "cues", cues)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def n_frames(self) -> int:
        return self.cues.shape[0]

    def global_norm(self) -> float:
        nonroot = self.cues[:, 1:][self.valid[:, 1:]]
        return float(np.sqrt(np.sum(nonroot**2)))

    def flat(self) -> np.ndarray:
        """Per-frame feature vector: cue coordinates followed by the validity mask."""
        n = self.n_frames
        return np.concatenate([self.cues.reshape(n, -1), self.valid.astype(float)], axis=1)

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return (
            self.fps == other.fps
            and np.array_equal(self.cues, other.cues)
            and np.array_equal(self.valid, other.valid)
        )


class SparseCue3D(SparseCues):
    dim = 3


class SparseCue2D(SparseCues):
    dim = 2


def anchor_and_normalize(points: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Subtract the per-frame root, zero invalid slots and scale all valid
    non-root entries of the sequence by one shared L2 norm.

    points: (N, 10, D); valid: (N, 10). Sequences whose non-root norm is
    below DEGENERATE_NORM come back all-zero instead of being divided.
    """
    pts = np.asarray(points, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    rel = pts - pts[:, ROOT_SLOT : ROOT_SLOT + 1]
    rel[:, ROOT_SLOT] = 0.0
    rel[~valid] = 0.0
    norm = np.sqrt(np.sum(rel[:, 1:][valid[:, 1:]] ** 2))
    if norm < DEGENERATE_NORM:
        return np.zeros_like(rel)
    return rel / norm


def root_trajectory(motion: MotionSequence) -> RootTrajectory:
    return RootTrajectory(motion.fps, motion.frames[:, motion.skeleton.root].copy())


def extract_cues_3d(motion: MotionSequence) -> SparseCue3D:
    pts = motion.frames[:, motion.skeleton.slot_indices()]
    valid = np.ones(pts.shape[:2], dtype=bool)
    return SparseCue3D(motion.fps, anchor_and_normalize(pts, valid), valid)


def check_cue_invariants(cues: SparseCues, tol: float = 1e-9) -> list[str]:
    """Return human-readable invariant violations (empty when the cues are canonical)."""
    problems = []
    root = cues.cues[:, ROOT_SLOT]
    bad_root = np.flatnonzero(cues.valid[:, ROOT_SLOT] & np.any(root != 0.0, axis=1))
    if bad_root.size:
        problems.append(f"root slot not anchored at 0 in {bad_root.size} frame(s), first at {bad_root[0]}")
    invalid_nonzero = np.argwhere(~cues.valid & np.any(cues.cues != 0.0, axis=2))
    if invalid_nonzero.size:
        f, s = invalid_nonzero[0]
        problems.append(
            f"{len(invalid_nonzero)} invalid slot(s) carry nonzero values, first at frame {f} slot {CUE_SLOTS[s]}"
        )
    norm = cues.global_norm()
    if norm != 0.0 and abs(norm - 1.0) > tol:
        problems.append(f"global L2 norm {norm:.12g} differs from 1")
    return problems


# ---------------------------------------------------------------- file formats


def _read_json(path) -> dict:
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: malformed JSON at line {e.lineno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    return data


def write_json(path, data: dict) -> None:
    # shortest round-trip float repr keeps load(save(x)) bit-exact
    Path(path).write_text(json.dumps(data, indent=None, separators=(",", ":")) + "\n")


def motion_to_dict(motion: MotionSequence) -> dict:
    return {
        "fps": motion.fps,
        "skeleton": motion.skeleton.to_dict(),
        "frames": motion.frames.tolist(),
    }


def motion_from_dict(data: dict, source: str = "<dict>") -> MotionSequence:
    for key in ("fps", "skeleton", "frames"):
        if key not in data:
            raise ParseError(f"{source}: missing key '{key}'")
    sk = data["skeleton"]
    if not isinstance(sk, dict):
        raise ParseError(f"{source}: 'skeleton' must be an object")
    skeleton = Skeleton(
        sk.get("joint_names", []),
        sk.get("parents", []),
        sk.get("cue_slots", {}),
    )
    try:
        frames = np.array(data["frames"], dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{source}: 'frames' is not a rectangular numeric array") from None
    return MotionSequence(skeleton, data["fps"], frames)


def load_motion(path) -> MotionSequence:
    return motion_from_dict(_read_json(path), str(path))


def save_motion(motion: MotionSequence, path) -> None:
    write_json(path, motion_to_dict(motion))


def cues_to_dict(cues: SparseCues) -> dict:
    return {
        "fps": cues.fps,
        "dim": cues.dim,
        "slots": list(CUE_SLOTS),
        "cues": cues.cues.tolist(),
        "valid": cues.valid.tolist(),
    }


def cues_from_dict(data: dict, source: str = "<dict>") -> SparseCues:
    for key in ("fps", "dim", "cues", "valid"):
        if key not in data:
            raise ParseError(f"{source}: missing key '{key}'")
    if list(data.get("slots", CUE_SLOTS)) != list(CUE_SLOTS):
        raise ParseError(f"{source}: slot order must be {list(CUE_SLOTS)}")
    cls = {2: SparseCue2D, 3: SparseCue3D}.get(data["dim"])
    if cls is None:
        raise ParseError(f"{source}: dim must be 2 or 3")
    try:
        arr = np.array(data["cues"], dtype=float)
        valid = np.array(data["valid"], dtype=bool)
    except (TypeError, ValueError):
        raise ParseError(f"{source}: cue arrays are not rectangular") from None
    if arr.ndim != 3:
        raise ParseError(f"{source}: 'cues' must be [N][10][dim]")
    return cls(data["fps"], arr, valid)


def load_cues(path) -> SparseCues:
    return cues_from_dict(_read_json(path), str(path))


def save_cues(cues: SparseCues, path) -> None:
    write_json(path, cues_to_dict(cues))
