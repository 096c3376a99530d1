"""File-based ingest of externally estimated 2D keypoints into canonical sparse cues."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .motion import SparseCue2D, SparseCues, anchor_and_normalize, check_cue_invariants, write_json
from .skeleton import CUE_SLOTS, ROOT_SLOT

DEFAULT_CONFIDENCE_FLOOR = 0.3
DEFAULT_JUMP_THRESHOLD = 0.25
BUILTIN_MAPPINGS = ("coco17_human", "ap10k_quadruped")


@dataclass(frozen=True, eq=False)
class RawKeypointTrack:
    fps: float
    names: tuple[str, ...]
    points: np.ndarray  # (N, K, 2) pixels, top-left origin, Y down
    confidence: np.ndarray  # (N, K) in [0, 1]

    def __post_init__(self):
        names = tuple(self.names)
        pts = np.asarray(self.points, dtype=float)
        n_k = len(names)
        if n_k < 1:
            raise ValidationError("keypoint track needs at least one keypoint name")
        if len(set(names)) != n_k:
            raise ValidationError("duplicate keypoint names")
        if pts.ndim != 3 or pts.shape[1:] != (n_k, 2):
            raise ValidationError(f"points must have shape (N, {n_k}, 2), got {pts.shape}")
        conf = np.ones(pts.shape[:2]) if self.confidence is None else np.asarray(self.confidence, dtype=float)
        if conf.shape != pts.shape[:2]:
            raise ValidationError(f"confidence shape {conf.shape} does not match points {pts.shape[:2]}")
        if np.any((conf < 0) | (conf > 1)) or not np.all(np.isfinite(conf)):
            raise ValidationError("confidence values must lie in [0, 1]")
        if not self.fps > 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        bad = np.argwhere((conf > 0) & ~np.all(np.isfinite(pts), axis=2))
        if bad.size:
            f, k = bad[0]
            raise ValidationError(
                f"frame {f}: keypoint {names[k]!r} has a non-finite coordinate at confidence {conf[f, k]:g}"
            )
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def n_frames(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class MappingConfig:
    # canonical slot -> source keypoint name, or a list of names whose midpoint is used
    entries: dict = field(default_factory=dict)
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR

    def __post_init__(self):
        unknown = [s for s in self.entries if s not in CUE_SLOTS]
        if unknown:
            raise ValidationError(f"unknown canonical slot(s) in mapping: {unknown}")
        if "root" not in self.entries or not self.entries["root"]:
            raise ValidationError("mapping must assign the root slot")
        if not 0 <= self.confidence_floor <= 1:
            raise ValidationError("confidence_floor must lie in [0, 1]")

    def sources(self, slot: str) -> list[str]:
        src = self.entries.get(slot)
        if src is None:
            return []
        return [src] if isinstance(src, str) else list(src)

    def to_dict(self) -> dict:
        return {"slots": dict(self.entries), "confidence_floor": self.confidence_floor}

    @classmethod
    def from_dict(cls, d: dict, source: str = "<dict>") -> "MappingConfig":
        if "slots" not in d:
            raise ParseError(f"{source}: mapping missing key 'slots'")
        return cls(dict(d["slots"]), float(d.get("confidence_floor", DEFAULT_CONFIDENCE_FLOOR)))

    @classmethod
    def identity(cls, confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR) -> "MappingConfig":
        """Every canonical slot read from the keypoint of the same name."""
        return cls({s: s for s in CUE_SLOTS}, confidence_floor)

    @classmethod
    def builtin(cls, name: str) -> "MappingConfig":
        if name not in BUILTIN_MAPPINGS:
            raise ValidationError(f"unknown built-in mapping {name!r}; choose from {BUILTIN_MAPPINGS}")
        text = resources.files("cuereenact").joinpath(f"data/{name}.json").read_text()
        return cls.from_dict(json.loads(text), name)


def load_mapping(path_or_name) -> MappingConfig:
    if str(path_or_name) == "identity":
        return MappingConfig.identity()
    if str(path_or_name) in BUILTIN_MAPPINGS:
        return MappingConfig.builtin(str(path_or_name))
    path = Path(path_or_name)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: malformed JSON at line {e.lineno}: {e.msg}") from None
    return MappingConfig.from_dict(data, str(path))


def keypoints_to_dict(track: RawKeypointTrack) -> dict:
    return {
        "fps": track.fps,
        "names": list(track.names),
        "points": track.points.tolist(),
        "confidence": track.confidence.tolist(),
    }


def save_keypoints(track: RawKeypointTrack, path) -> None:
    write_json(path, keypoints_to_dict(track))


def load_keypoints(path) -> RawKeypointTrack:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: malformed JSON at line {e.lineno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    for key in ("fps", "names", "points"):
        if key not in data:
            raise ParseError(f"{path}: missing key '{key}'")
    try:
        # null coordinates are allowed for undetected keypoints
        pts = np.array(
            [[[np.nan if c is None else c for c in p] for p in frame] for frame in data["points"]],
            dtype=float,
        )
    except (TypeError, ValueError):
        raise ParseError(f"{path}: 'points' must be [N][K][2] numbers") from None
    conf = data.get("confidence")
    if conf is not None:
        conf = np.array(conf, dtype=float)
    if pts.ndim != 3:
        raise ParseError(f"{path}: 'points' must be [N][K][2] numbers")
    return RawKeypointTrack(data["fps"], data["names"], pts, conf)


def map_to_canonical(track: RawKeypointTrack, mapping: MappingConfig) -> SparseCue2D:
    n = track.n_frames
    index = {name: k for k, name in enumerate(track.names)}
    pts = np.zeros((n, len(CUE_SLOTS), 2))
    valid = np.zeros((n, len(CUE_SLOTS)), dtype=bool)
    for s, slot in enumerate(CUE_SLOTS):
        srcs = mapping.sources(slot)
        if not srcs:
            continue
        missing = [name for name in srcs if name not in index]
        if missing:
            raise ValidationError(f"mapping for slot {slot!r} names unknown keypoint(s) {missing}")
        ks = [index[name] for name in srcs]
        conf = track.confidence[:, ks].min(axis=1)
        ok = conf >= mapping.confidence_floor
        xy = track.points[:, ks].mean(axis=1)
        ok &= np.all(np.isfinite(xy), axis=1)
        pts[ok, s, 0] = xy[ok, 0]
        pts[ok, s, 1] = -xy[ok, 1]  # pixel rows grow downward
        valid[:, s] = ok
    bad_root = np.flatnonzero(~valid[:, ROOT_SLOT])
    if bad_root.size:
        raise ValidationError(
            f"root keypoint below confidence floor {mapping.confidence_floor} at frame {bad_root[0]}"
            f" ({bad_root.size} frame(s) total); cannot anchor"
        )
    return SparseCue2D(track.fps, anchor_and_normalize(pts, valid), valid)


def validate_cues(cues: SparseCues, jump_threshold: float = DEFAULT_JUMP_THRESHOLD) -> dict:
    """Diagnostic report: invariant violations, per-slot validity rate and the
    largest frame-to-frame displacement per slot (tracking-failure screen)."""
    violations = check_cue_invariants(cues)
    both = cues.valid[1:] & cues.valid[:-1]
    step = np.linalg.norm(np.diff(cues.cues, axis=0), axis=2)
    step = np.where(both, step, 0.0)
    max_disp = step.max(axis=0) if len(step) else np.zeros(len(CUE_SLOTS))
    outliers = []
    for s, slot in enumerate(CUE_SLOTS):
        if max_disp[s] > jump_threshold:
            f = int(np.argmax(step[:, s])) + 1
            outliers.append({"slot": slot, "frame": f, "displacement": float(max_disp[s])})
    return {
        "ok": not violations and not outliers,
        "violations": violations,
        "validity_rate": {slot: float(cues.valid[:, s].mean()) for s, slot in enumerate(CUE_SLOTS)},
        "max_displacement": {slot: float(max_disp[s]) for s, slot in enumerate(CUE_SLOTS)},
        "jump_threshold": jump_threshold,
        "outliers": outliers,
        "global_norm": cues.global_norm(),
    }
