"""Trajectory-free edits applied to generated motion."""
from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .motion import MotionSequence

UP = np.array([0.0, 1.0, 0.0])


def edit_root_vertical(motion: MotionSequence, scale: float) -> MotionSequence:
    """Scale each frame's root height above the sequence minimum by `scale`.

    The whole pose follows the root rigidly, so local pose is preserved.
    """
    if not scale > 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    if scale == 1:
        return motion
    root_y = motion.frames[:, motion.skeleton.root, 1]
    offset = root_y - root_y.min()
    frames = motion.frames.copy()
    frames[:, :, 1] += ((scale - 1.0) * offset)[:, None]
    return motion.with_frames(frames)


def _body_axes(motion: MotionSequence):
    """Per-frame horizontal forward and left unit vectors from the hips."""
    sk = motion.skeleton
    lh = motion.frames[:, sk.index("left_hip")]
    rh = motion.frames[:, sk.index("right_hip")]
    left = lh - rh
    left[:, 1] = 0.0
    left /= np.maximum(np.linalg.norm(left, axis=1, keepdims=True), 1e-12)
    forward = np.cross(left, UP)
    return forward, left


def arm_angles(motion: MotionSequence, side: str) -> np.ndarray:
    """Horizontal angle (degrees) of shoulder-to-wrist from the forward axis,
    positive toward the arm's own side. NaN where the arm has no horizontal extent."""
    sk = motion.skeleton
    forward, left = _body_axes(motion)
    outward = left if side == "left" else -left
    v = motion.frames[:, sk.index(f"{side}_wrist")] - motion.frames[:, sk.index(f"{side}_shoulder")]
    a = np.sum(v * forward, axis=1)
    b = np.sum(v * outward, axis=1)
    ang = np.degrees(np.arctan2(b, a))
    ang[np.hypot(a, b) < 1e-9] = np.nan
    return ang


def edit_arm_spread(motion: MotionSequence, angle_deg: float) -> MotionSequence:
    """Rotate each arm (elbow and wrist) about the shoulder's vertical axis so the
    shoulder-to-wrist direction sits `angle_deg` from the forward axis."""
    if abs(angle_deg) > 180:
        raise ValidationError(f"|angle_deg| must be <= 180, got {angle_deg}")
    sk = motion.skeleton
    frames = motion.frames.copy()
    forward, left = _body_axes(motion)
    for side in ("left", "right"):
        current = arm_angles(motion, side)
        delta = np.radians(np.where(np.isnan(current), 0.0, angle_deg - np.nan_to_num(current)))
        outward = left if side == "left" else -left
        sh = frames[:, sk.index(f"{side}_shoulder")]
        c, s = np.cos(delta)[:, None], np.sin(delta)[:, None]
        for name in (f"{side}_elbow", f"{side}_wrist"):
            j = sk.index(name)
            v = frames[:, j] - sh
            a = np.sum(v * forward, axis=1, keepdims=True)
            b = np.sum(v * outward, axis=1, keepdims=True)
            vert = v - a * forward - b * outward
            a2 = c * a - s * b
            b2 = s * a + c * b
            frames[:, j] = sh + vert + a2 * forward + b2 * outward
    return motion.with_frames(frames)
