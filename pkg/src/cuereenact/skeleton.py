from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

CUE_SLOTS = (
    "root",
    "head",
    "left_elbow",
    "right_elbow",
    "left_hand",
    "right_hand",
    "left_knee",
    "right_knee",
    "left_foot",
    "right_foot",
)
N_SLOTS = len(CUE_SLOTS)
ROOT_SLOT = 0

# left/right slot pairs sharing a limb scale during augmentation
LIMB_PAIRS = {
    "arm": ((2, 4), (3, 5)),  # (elbow, hand) per side
    "leg": ((6, 8), (7, 9)),  # (knee, foot) per side
}
HEAD_SLOT = 1


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple[str, ...]
    parents: tuple[int, ...]
    cue_slots: dict[str, int] = field(hash=False)

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "cue_slots", {k: int(v) for k, v in self.cue_slots.items()})
        self.validate()

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    @property
    def root(self) -> int:
        return self.parents.index(-1)

    def index(self, name: str) -> int:
        return self.joint_names.index(name)

    def slot_indices(self) -> np.ndarray:
        """Joint index of every canonical cue slot, in CUE_SLOTS order."""
        return np.array([self.cue_slots[s] for s in CUE_SLOTS], dtype=int)

    def validate(self) -> None:
        J = len(self.joint_names)
        if J == 0:
            raise ValidationError("skeleton has no joints")
        if len(set(self.joint_names)) != J:
            raise ValidationError("duplicate joint names")
        if len(self.parents) != J:
            raise ValidationError(f"{len(self.parents)} parents for {J} joints")
        roots = [j for j, p in enumerate(self.parents) if p == -1]
        if len(roots) != 1:
            raise ValidationError(f"expected exactly one root joint, found {len(roots)}")
        for j, p in enumerate(self.parents):
            if p != -1 and not 0 <= p < J:
                raise ValidationError(f"joint {j} has out-of-range parent {p}")
        # every joint must reach the root without revisiting a joint
        for j in range(J):
            seen = set()
            k = j
            while k != -1:
                if k in seen:
                    raise ValidationError(f"parent cycle through joint {self.joint_names[k]!r}")
                seen.add(k)
                k = self.parents[k]
        missing = [s for s in CUE_SLOTS if s not in self.cue_slots]
        extra = [s for s in self.cue_slots if s not in CUE_SLOTS]
        if missing or extra:
            raise ValidationError(f"cue_slots mismatch: missing={missing} unknown={extra}")
        for s, j in self.cue_slots.items():
            if not 0 <= j < J:
                raise ValidationError(f"cue slot {s!r} points at invalid joint {j}")
        if self.cue_slots["root"] != roots[0]:
            raise ValidationError("cue slot 'root' must be the skeleton root")

    def to_dict(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "parents": list(self.parents),
            "cue_slots": dict(self.cue_slots),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        try:
            return cls(d["joint_names"], d["parents"], d["cue_slots"])
        except KeyError as e:
            raise ValidationError(f"skeleton missing key {e}") from None


# 22-joint humanoid, Y-up, facing +Z, left side on +X.
_JOINTS = [
    # name, parent, rest position (m)
    ("root", None, (0.0, 0.95, 0.0)),
    ("spine1", "root", (0.0, 1.05, 0.0)),
    ("spine2", "spine1", (0.0, 1.17, 0.0)),
    ("spine3", "spine2", (0.0, 1.30, 0.0)),
    ("neck", "spine3", (0.0, 1.50, 0.0)),
    ("head", "neck", (0.0, 1.65, 0.02)),
    ("left_collar", "spine3", (0.08, 1.42, 0.0)),
    ("left_shoulder", "left_collar", (0.18, 1.42, 0.0)),
    ("left_elbow", "left_shoulder", (0.22, 1.15, 0.03)),
    ("left_wrist", "left_elbow", (0.25, 0.90, 0.07)),
    ("right_collar", "spine3", (-0.08, 1.42, 0.0)),
    ("right_shoulder", "right_collar", (-0.18, 1.42, 0.0)),
    ("right_elbow", "right_shoulder", (-0.22, 1.15, 0.03)),
    ("right_wrist", "right_elbow", (-0.25, 0.90, 0.07)),
    ("left_hip", "root", (0.09, 0.90, 0.0)),
    ("left_knee", "left_hip", (0.09, 0.50, 0.01)),
    ("left_ankle", "left_knee", (0.09, 0.08, 0.0)),
    ("left_toe", "left_ankle", (0.09, 0.02, 0.14)),
    ("right_hip", "root", (-0.09, 0.90, 0.0)),
    ("right_knee", "right_hip", (-0.09, 0.50, 0.01)),
    ("right_ankle", "right_knee", (-0.09, 0.08, 0.0)),
    ("right_toe", "right_ankle", (-0.09, 0.02, 0.14)),
]

_DEFAULT_SLOTS = {
    "root": "root",
    "head": "head",
    "left_elbow": "left_elbow",
    "right_elbow": "right_elbow",
    "left_hand": "left_wrist",
    "right_hand": "right_wrist",
    "left_knee": "left_knee",
    "right_knee": "right_knee",
    "left_foot": "left_toe",
    "right_foot": "right_toe",
}


def default_skeleton() -> Skeleton:
    names = [j[0] for j in _JOINTS]
    parents = [-1 if p is None else names.index(p) for _, p, _ in _JOINTS]
    slots = {s: names.index(j) for s, j in _DEFAULT_SLOTS.items()}
    return Skeleton(names, parents, slots)


def rest_pose() -> np.ndarray:
    """Rest positions of the default skeleton, shape (22, 3)."""
    return np.array([j[2] for j in _JOINTS], dtype=float)
