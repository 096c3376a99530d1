"""Procedural humanoid motion used as training data and test fixtures."""
from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError
from .motion import MotionSequence
from .skeleton import default_skeleton, rest_pose

PATTERNS = ("walk", "jump", "sway", "static")

DEFAULT_PARAMS = {
    "walk": {"amplitude": 0.8, "period": 1.0},  # stride length per gait cycle (m), cycle time (s)
    "jump": {"amplitude": 0.3, "period": 0.8},  # hop height (m), hop period (s)
    "sway": {"amplitude": 0.08, "period": 2.0},  # lateral root sway (m), sway period (s)
    "static": {"amplitude": 0.0, "period": 1.0},
}

THIGH = 0.40
SHIN = 0.42
STANCE_FRACTION = 0.6
GROUND_TOE = 0.02
SWING_LIFT_FLOOR = 0.04
SWING_HEIGHT = 0.12

_SK = default_skeleton()
_REST = rest_pose()
_J = {name: i for i, name in enumerate(_SK.joint_names)}
_TOE_FROM_ANKLE = _REST[_J["left_toe"]] - _REST[_J["left_ankle"]]


def _leg_ik(hip: np.ndarray, ankle: np.ndarray, forward: np.ndarray) -> np.ndarray:
    """Knee positions for a two-bone leg bending toward `forward`; (N, 3) inputs."""
    d = ankle - hip
    L = np.linalg.norm(d, axis=1, keepdims=True)
    dhat = d / np.maximum(L, 1e-12)
    n = forward - np.sum(forward * dhat, axis=1, keepdims=True) * dhat
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    Lc = np.clip(L, abs(THIGH - SHIN) + 1e-6, THIGH + SHIN)
    a = (THIGH**2 - SHIN**2 + Lc**2) / (2 * Lc)
    h = np.sqrt(np.maximum(THIGH**2 - a**2, 0.0))
    return hip + a * dhat + h * n


def _rotate_x(v: np.ndarray, angle: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    out = v.copy()
    out[:, 1] = v[:, 1] * c - v[:, 2] * s
    out[:, 2] = v[:, 1] * s + v[:, 2] * c
    return out


def _upper_body(frames, root, arm_angle_left, arm_angle_right, arm_raise=None):
    """Place spine, head and arms rigidly on the root, swinging arms about the shoulders."""
    offsets = _REST - _REST[_J["root"]]
    for name in ("spine1", "spine2", "spine3", "neck", "head",
                 "left_collar", "left_shoulder", "right_collar", "right_shoulder"):
        frames[:, _J[name]] = root + offsets[_J[name]]
    for side, ang in (("left", arm_angle_left), ("right", arm_angle_right)):
        sh = _J[f"{side}_shoulder"]
        for name in (f"{side}_elbow", f"{side}_wrist"):
            rel = np.broadcast_to(_REST[_J[name]] - _REST[sh], (len(root), 3))
            rel = _rotate_x(rel, ang)
            if arm_raise is not None:
                # lift the chain sideways about the shoulder's forward axis
                sign = 1.0 if side == "left" else -1.0
                c, s = np.cos(arm_raise), np.sin(arm_raise)
                x, y = rel[:, 0].copy(), rel[:, 1].copy()
                rel = rel.copy()
                rel[:, 0] = c * x - sign * s * y
                rel[:, 1] = sign * s * x + c * y
            frames[:, _J[name]] = frames[:, sh] + rel


def _yaw(frames: np.ndarray, heading: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    R = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return frames @ R.T


def _walk(t, amplitude, period, rng):
    n = len(t)
    phase0 = rng.uniform(0.0, 1.0)
    arm_swing = rng.uniform(0.2, 0.4)
    speed = amplitude / period
    frames = np.zeros((n, _SK.n_joints, 3))
    cyc = t / period + phase0
    root = np.stack([np.zeros(n), 0.92 + 0.015 * np.cos(4 * math.pi * cyc), speed * t], axis=1)
    frames[:, _J["root"]] = root
    stance = np.zeros((n, 2), dtype=bool)
    fwd = np.broadcast_to(np.array([0.0, 0.0, 1.0]), (n, 3))
    for k, (side, offset) in enumerate((("left", 0.0), ("right", 0.5))):
        p_all = cyc + offset
        cycle = np.floor(p_all)
        p = p_all - cycle
        in_stance = p < STANCE_FRACTION
        stance[:, k] = in_stance
        # toe z at mid-stance sits under the root at that instant
        t_mid = period * (cycle + STANCE_FRACTION / 2 - phase0 - offset)
        plant_z = speed * t_mid
        s = np.clip((p - STANCE_FRACTION) / (1 - STANCE_FRACTION), 0.0, 1.0)
        smooth = s * s * (3 - 2 * s)
        toe = np.zeros((n, 3))
        toe[:, 0] = _REST[_J[f"{side}_toe"], 0]
        toe[:, 2] = np.where(in_stance, plant_z, plant_z + amplitude * smooth)
        toe[:, 1] = np.where(in_stance, GROUND_TOE,
                             GROUND_TOE + SWING_LIFT_FLOOR + SWING_HEIGHT * np.sin(math.pi * s))
        ankle = toe - _TOE_FROM_ANKLE
        hip = root + (_REST[_J[f"{side}_hip"]] - _REST[_J["root"]])
        frames[:, _J[f"{side}_hip"]] = hip
        frames[:, _J[f"{side}_ankle"]] = ankle
        frames[:, _J[f"{side}_toe"]] = toe
        frames[:, _J[f"{side}_knee"]] = _leg_ik(hip, ankle, fwd)
    swing = arm_swing * np.sin(2 * math.pi * cyc)
    _upper_body(frames, root, swing, -swing)
    return frames, stance


def _jump(t, amplitude, period, rng):
    n = len(t)
    phase0 = rng.uniform(0.0, 1.0)
    hop_forward = rng.uniform(0.0, 0.3)
    g = np.maximum(0.0, np.sin(2 * math.pi * (t / period + phase0)))
    if g.max() > 0:
        g = g / g.max()
    airborne = g > 0
    # forward travel accrues only while airborne so grounded feet never slide
    dz = np.where(airborne, hop_forward / (0.5 * period), 0.0) * np.diff(t, prepend=t[0])
    z = np.cumsum(dz)
    root = np.stack([np.zeros(n), 0.92 + amplitude * g, z], axis=1)
    frames = np.zeros((n, _SK.n_joints, 3))
    offsets = _REST - _REST[_J["root"]]
    lift = np.stack([np.zeros(n), amplitude * g, z], axis=1)
    for name in ("left_ankle", "left_toe", "right_ankle", "right_toe"):
        frames[:, _J[name]] = _REST[_J[name]] + lift
    frames[:, _J["root"]] = root
    fwd = np.broadcast_to(np.array([0.0, 0.0, 1.0]), (n, 3))
    for side in ("left", "right"):
        hip = root + offsets[_J[f"{side}_hip"]]
        frames[:, _J[f"{side}_hip"]] = hip
        frames[:, _J[f"{side}_knee"]] = _leg_ik(hip, frames[:, _J[f"{side}_ankle"]], fwd)
    raise_angle = 0.9 * g
    _upper_body(frames, root, np.zeros(n), np.zeros(n), arm_raise=raise_angle)
    return frames, ~airborne[:, None].repeat(2, axis=1)


def _sway(t, amplitude, period, rng):
    n = len(t)
    phase0 = rng.uniform(0.0, 2 * math.pi)
    x = amplitude * np.sin(2 * math.pi * t / period + phase0)
    root = np.stack([x, np.full(n, 0.92), np.zeros(n)], axis=1)
    frames = np.zeros((n, _SK.n_joints, 3))
    frames[:, _J["root"]] = root
    fwd = np.broadcast_to(np.array([0.0, 0.0, 1.0]), (n, 3))
    offsets = _REST - _REST[_J["root"]]
    for side in ("left", "right"):
        hip = root + offsets[_J[f"{side}_hip"]]
        frames[:, _J[f"{side}_hip"]] = hip
        for name in (f"{side}_ankle", f"{side}_toe"):
            frames[:, _J[name]] = _REST[_J[name]]
        frames[:, _J[f"{side}_knee"]] = _leg_ik(hip, frames[:, _J[f"{side}_ankle"]], fwd)
    lean = 0.3 * np.sin(2 * math.pi * t / period + phase0)
    _upper_body(frames, root, lean * 0.5, -lean * 0.5, arm_raise=0.2 + 0.1 * lean)
    return frames, np.ones((n, 2), dtype=bool)


def _static(t, amplitude, period, rng):
    n = len(t)
    frames = np.broadcast_to(_REST, (n, _SK.n_joints, 3)).copy()
    return frames, np.ones((n, 2), dtype=bool)


_BUILDERS = {"walk": _walk, "jump": _jump, "sway": _sway, "static": _static}


def synth_with_stance(pattern: str, amplitude=None, period=None, duration: float = 2.0,
                      fps: float = 20.0, seed: int = 0, heading_deg: float | None = None):
    """Like :func:`synth_motion` but also returns the (N, 2) left/right stance schedule."""
    if pattern not in _BUILDERS:
        raise ValidationError(f"unknown pattern {pattern!r}; choose from {', '.join(PATTERNS)}")
    defaults = DEFAULT_PARAMS[pattern]
    amplitude = defaults["amplitude"] if amplitude is None else float(amplitude)
    period = defaults["period"] if period is None else float(period)
    if not duration > 0:
        raise ValidationError(f"duration must be positive, got {duration}")
    if not period > 0:
        raise ValidationError(f"period must be positive, got {period}")
    if not fps > 0:
        raise ValidationError(f"fps must be positive, got {fps}")
    if amplitude < 0:
        raise ValidationError(f"amplitude must be non-negative, got {amplitude}")
    n = int(round(duration * fps))
    if n < 2:
        raise ValidationError(f"duration {duration}s at {fps} fps yields {n} frame(s); need at least 2")
    rng = np.random.default_rng(seed)
    heading = rng.uniform(-math.pi, math.pi)
    if heading_deg is not None:
        heading = math.radians(heading_deg)
    t = np.arange(n) / fps
    frames, stance = _BUILDERS[pattern](t, amplitude, period, rng)
    frames = _yaw(frames, heading)
    return MotionSequence(_SK, fps, frames), stance


def synth_motion(pattern: str, amplitude=None, period=None, duration: float = 2.0,
                 fps: float = 20.0, seed: int = 0, heading_deg: float | None = None) -> MotionSequence:
    """Deterministic procedural motion for one of PATTERNS.

    `amplitude` and `period` default per pattern (see DEFAULT_PARAMS). The seed
    picks gait phase, small style variations and, unless `heading_deg` fixes
    it, the facing direction (0 faces +Z).
    """
    return synth_with_stance(pattern, amplitude, period, duration, fps, seed, heading_deg)[0]
