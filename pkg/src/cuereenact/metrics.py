"""Physical motion-quality metrics: jitter, foot skating, foot floating, foot sliding.

Formula identifiers are embedded in every report so numbers stay comparable:

- jitter: mean over joints and interior frames of |third central difference| * fps^3
- fsr: fraction of frames where some foot is in contact and moves horizontally faster than skate_speed
- ffl: fraction of frames where both feet are above float_height
- fsd: horizontal displacement accumulated by feet in contact, per second of motion
- relative: |method - baseline| / max(baseline, 1e-9)
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError
from .motion import MotionSequence

FOOT_SLOTS = ("left_foot", "right_foot")
RELATIVE_EPS = 1e-9
FORMULAS = {
    "jitter": "mean_j_n |p[n+2]-3p[n+1]+3p[n]-p[n-1]| * fps^3",
    "fsr": "frames(any foot: height<contact_height and horiz_speed>skate_speed) / N",
    "ffl": "frames(all feet: height>float_height) / N",
    "fsd": "sum_{n>=1, feet in contact at n} |dx_horiz| / (N/fps)",
    "relative": "|x - x_baseline| / max(x_baseline, 1e-9)",
}
TABLE_COLUMNS = ("name", "R-Jitter", "R-FSR", "R-FFL", "R-FSD")


@dataclass(frozen=True)
class ContactModel:
    contact_height: float = 0.05  # m
    skate_speed: float = 0.10  # m/s
    float_height: float = 0.05  # m

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValidationError(f"contact model threshold {k} must be positive, got {v}")


@dataclass(frozen=True)
class MetricReport:
    jitter: float
    fsr: float
    ffl: float
    fsd: float
    fps: float
    contact_model: ContactModel
    relative: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "jitter": self.jitter,
            "fsr": self.fsr,
            "ffl": self.ffl,
            "fsd": self.fsd,
            "units": {"jitter": "m/s^3", "fsr": "fraction", "ffl": "fraction", "fsd": "m/s"},
            "fps": self.fps,
            "contact_model": asdict(self.contact_model),
            "formulas": dict(FORMULAS),
        }
        if self.relative is not None:
            d["relative"] = dict(self.relative)
        return d


def _foot_positions(motion: MotionSequence) -> np.ndarray:
    sk = motion.skeleton
    try:
        idx = [sk.cue_slots[s] for s in FOOT_SLOTS]
    except KeyError as e:
        raise ValidationError(f"skeleton lacks foot cue slot {e}") from None
    return motion.frames[:, idx]  # (N, 2, 3)


def _horizontal_speed(feet: np.ndarray, fps: float) -> np.ndarray:
    """Per-frame horizontal speed of each foot, (N, 2); central differences inside, one-sided at ends."""
    horiz = feet[..., [0, 2]]
    vel = np.gradient(horiz, axis=0) * fps
    return np.linalg.norm(vel, axis=-1)


def jitter_positions(positions: np.ndarray, fps: float) -> float:
    """Jitter of raw (N, J, D) or (N, D) positions."""
    p = np.asarray(positions, dtype=np.float64)
    if p.ndim == 2:
        p = p[:, None]
    if len(p) < 4:
        raise ValidationError(f"jitter needs at least 4 frames, got {len(p)}")
    d3 = (p[3:] - p[:-3]) - 3 * (p[2:-1] - p[1:-2])  # exact zero on repeated frames
    return float(np.mean(np.linalg.norm(d3, axis=-1)) * fps**3)


def jitter(motion: MotionSequence) -> float:
    return jitter_positions(motion.frames, motion.fps)


def foot_contacts(motion: MotionSequence, model: ContactModel | None = None) -> np.ndarray:
    """(N, 2) boolean contact mask for the left and right foot extremities."""
    model = model or ContactModel()
    return _foot_positions(motion)[..., 1] < model.contact_height


def fsr(motion: MotionSequence, model: ContactModel | None = None) -> float:
    model = model or ContactModel()
    feet = _foot_positions(motion)
    contact = feet[..., 1] < model.contact_height
    skating = contact & (_horizontal_speed(feet, motion.fps) > model.skate_speed)
    return float(np.mean(np.any(skating, axis=1)))


def ffl(motion: MotionSequence, model: ContactModel | None = None) -> float:
    model = model or ContactModel()
    feet = _foot_positions(motion)
    return float(np.mean(np.all(feet[..., 1] > model.float_height, axis=1)))


def fsd(motion: MotionSequence, model: ContactModel | None = None) -> float:
    model = model or ContactModel()
    feet = _foot_positions(motion)
    contact = feet[..., 1] < model.contact_height
    step = np.linalg.norm(np.diff(feet[..., [0, 2]], axis=0), axis=-1)  # (N-1, 2)
    return float(np.sum(step[contact[1:]]) / motion.duration)


def evaluate(motion: MotionSequence, model: ContactModel | None = None) -> MetricReport:
    model = model or ContactModel()
    return MetricReport(
        jitter=jitter(motion),
        fsr=fsr(motion, model),
        ffl=ffl(motion, model),
        fsd=fsd(motion, model),
        fps=motion.fps,
        contact_model=model,
    )


def relative_report(method: MetricReport, baseline: MetricReport) -> MetricReport:
    if method.contact_model != baseline.contact_model:
        raise ValidationError("method and baseline were evaluated with different contact models")
    if method.fps != baseline.fps:
        raise ValidationError(f"fps mismatch: method {method.fps}, baseline {baseline.fps}")
    rel = {}
    for key in ("jitter", "fsr", "ffl", "fsd"):
        x, b = getattr(method, key), getattr(baseline, key)
        rel[f"r_{key}"] = abs(x - b) / max(b, RELATIVE_EPS)
    rel["mode"] = "magnitude"
    return MetricReport(method.jitter, method.fsr, method.ffl, method.fsd, method.fps,
                        method.contact_model, rel)


def write_table(rows: list[tuple[str, MetricReport]], path) -> None:
    """CSV with one row per method and the relative-metric columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for name, rep in rows:
            if rep.relative is None:
                raise ValidationError(f"row {name!r} has no relative block")
            r = rep.relative
            w.writerow([name, repr(r["r_jitter"]), repr(r["r_fsr"]), repr(r["r_ffl"]), repr(r["r_fsd"])])
