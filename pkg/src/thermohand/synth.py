"""Procedural binary hand silhouettes with exact keypoint ground truth.

A hand is drawn in a local frame with the wrist midpoint at the origin, the
fingers pointing along +v and the forearm along -v: an elliptical palm, one
capsule per visible finger and a forearm band running off the image. The
right hand is drawn with its thumb on the image left (back of the hand
facing the camera); a left hand is the horizontal mirror image.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .domain import (FINGERS, INPUT_SIZE, GestureVocabulary, Handedness, KeypointSet, Point2,
                     Sample, validate_sample)
from .heatmap import HeatmapConfig, heatmap_cell
from .preprocess import DEFAULT_FOREARM_FRACTIONS, augment_forearm
from .refine import finger_angles, select_origin_wrist

MIN_ANGLE_GAP = 5.0
MIN_HEATMAP_ANGLE_GAP = 2.0
MAX_RETRIES = 200
MIN_HEATMAP_WRIST_GAP = 6.0
# wrists are stored thumb side first
THUMB_SIDE_WRIST = 0

# polar angle of each finger base on the palm ellipse, finger direction, length
_BASE_ANGLES = (200.0, 118.0, 96.0, 74.0, 54.0)
_DIRECTIONS = (148.0, 102.0, 90.0, 78.0, 62.0)
_LENGTHS = (20.0, 24.0, 26.0, 24.0, 18.0)


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class UserParams:
    palm_half_width: float = 14.0
    palm_half_height: float = 14.0
    wrist_width: float = 20.0
    finger_scale: float = 1.0
    finger_width: float = 6.0
    angle_jitter: float = 4.0
    length_jitter: float = 0.08

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "UserParams":
        hw = rng.uniform(12.5, 15.0)
        return cls(
            palm_half_width=hw,
            palm_half_height=rng.uniform(12.5, 15.0),
            wrist_width=rng.uniform(1.35, 1.55) * hw,
            finger_scale=rng.uniform(0.85, 1.1),
            finger_width=rng.uniform(5.0, 7.0),
        )


@dataclass(frozen=True)
class HandGeometry:
    """Local-frame hand description; all coordinates are (u, v) with v up."""

    palm_center: Tuple[float, float]
    palm_axes: Tuple[float, float]
    wrists: Tuple[Tuple[float, float], Tuple[float, float]]
    fingers: Tuple[Optional[Tuple[Tuple[float, float], Tuple[float, float]]], ...]
    finger_width: float


def hand_geometry(mask: Sequence[bool], user: UserParams, rng: np.random.Generator) -> HandGeometry:
    a, b = user.palm_half_width, user.palm_half_height
    half_w = min(user.wrist_width / 2.0, 0.95 * a)
    v_w = b - b * math.sqrt(1.0 - (half_w / a) ** 2)
    fingers = []
    for i, visible in enumerate(mask):
        if not visible:
            fingers.append(None)
            continue
        base_t = math.radians(_BASE_ANGLES[i] + rng.normal(0, user.angle_jitter / 2))
        base = (a * math.cos(base_t), b + b * math.sin(base_t))
        direction = math.radians(_DIRECTIONS[i] + rng.normal(0, user.angle_jitter))
        length = _LENGTHS[i] * user.finger_scale * (1.0 + rng.normal(0, user.length_jitter))
        tip = (base[0] + length * math.cos(direction), base[1] + length * math.sin(direction))
        fingers.append((base, tip))
    return HandGeometry((0.0, b), (a, b), ((-half_w, v_w), (half_w, v_w)), tuple(fingers),
                        user.finger_width)


def _placement(theta: float, anchor: Tuple[float, float]):
    c, s = math.cos(theta), math.sin(theta)

    def to_image(u, v):
        # v up in the local frame, y down in the image
        return anchor[0] + c * u + s * v, anchor[1] + s * u - c * v

    def to_local(x, y):
        dx, dy = x - anchor[0], y - anchor[1]
        return c * dx + s * dy, s * dx - c * dy

    return to_image, to_local


def _segment_distance(pu, pv, a, b):
    au, av = a
    du, dv = b[0] - au, b[1] - av
    t = np.clip(((pu - au) * du + (pv - av) * dv) / (du * du + dv * dv), 0.0, 1.0)
    return np.hypot(pu - au - t * du, pv - av - t * dv)


def render(geom: HandGeometry, to_local, size: int = INPUT_SIZE) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u, v = to_local(xx, yy)
    (cu, cv), (a, b) = geom.palm_center, geom.palm_axes
    fg = ((u - cu) / a) ** 2 + ((v - cv) / b) ** 2 <= 1.0
    half_w = geom.wrists[1][0]
    fg |= (np.abs(u) <= half_w) & (v <= geom.wrists[0][1])
    for finger in geom.fingers:
        if finger is not None:
            fg |= _segment_distance(u, v, *finger) <= geom.finger_width / 2.0
    return fg.astype(np.uint8)


def _ordering_ok(kp: KeypointSet, hand: Handedness, min_gap: float) -> bool:
    tips = [p for p in kp.fingertips if p is not None]
    try:
        origin = select_origin_wrist(kp.wrists, tips, hand)
        angles = finger_angles(kp.wrists[origin], kp.wrists[1 - origin], tips)
    except ValueError:
        return False
    if origin != THUMB_SIDE_WRIST:
        return False
    return all(a - b >= min_gap for a, b in zip(angles, angles[1:])) and all(0 < a < 180 for a in angles)


def mirror(s: Sample) -> Sample:
    """Horizontal mirror image; swaps handedness."""
    w = s.image.shape[1]
    kp = s.keypoints.map(lambda p: Point2(w - 1 - p.x, p.y))
    hand = Handedness.LEFT if s.handedness == Handedness.RIGHT else Handedness.RIGHT
    return Sample(s.image[:, ::-1].copy(), s.gesture, hand, kp, {**s.meta, "mirrored": True})


def generate_sample(gesture: int, hand: Handedness, user: UserParams, rng: np.random.Generator,
                    vocab: Optional[GestureVocabulary] = None,
                    rotation_range: Tuple[float, float] = (-45.0, 45.0),
                    forearm_fraction: Optional[float] = None,
                    min_angle_gap: float = MIN_ANGLE_GAP) -> Sample:
    """Render one sample; jitters that break the finger-angle ordering are resampled."""
    vocab = vocab or GestureVocabulary.default()
    mask = vocab.mask(gesture)
    hand = Handedness.parse(hand)
    margin = 3.0
    hm_cfg = HeatmapConfig()
    for _ in range(MAX_RETRIES):
        geom = hand_geometry(mask, user, rng)
        theta = math.radians(rng.uniform(*rotation_range))
        local_pts = [geom.wrists[0], geom.wrists[1], geom.palm_center]
        local_pts += [f[1] for f in geom.fingers if f is not None]
        to_image0, _ = _placement(theta, (0.0, 0.0))
        img_pts = np.array([to_image0(*p) for p in local_pts])
        lo, hi = img_pts.min(axis=0), img_pts.max(axis=0)
        center = (lo + hi) / 2.0
        jitter = rng.uniform(-4.0, 4.0, size=2)
        anchor = (INPUT_SIZE - 1) / 2.0 - center + jitter
        to_image, to_local = _placement(theta, (float(anchor[0]), float(anchor[1])))

        def pt(uv):
            x, y = to_image(*uv)
            return Point2(float(round(x)), float(round(y)))

        tips = tuple(pt(f[1]) if f is not None else None for f in geom.fingers)
        kp = KeypointSet(tips, (pt(geom.wrists[0]), pt(geom.wrists[1])))
        if not all(margin <= c <= INPUT_SIZE - 1 - margin for p in kp.points() for c in p):
            continue
        if Point2(*heatmap_cell(kp.wrists[0], hm_cfg)).distance(
                Point2(*heatmap_cell(kp.wrists[1], hm_cfg))) <= MIN_HEATMAP_WRIST_GAP:
            continue
        if not _ordering_ok(kp, Handedness.RIGHT, min_angle_gap):
            continue
        hm_kp = kp.map(lambda p: Point2(*heatmap_cell(p, hm_cfg)))
        if sum(p is not None for p in tips) > 1 and not _ordering_ok(hm_kp, Handedness.RIGHT,
                                                                     MIN_HEATMAP_ANGLE_GAP):
            continue
        s = Sample(render(geom, to_local), gesture, Handedness.RIGHT, kp,
                   {"rotation": math.degrees(theta)})
        if hand == Handedness.LEFT:
            s = mirror(s)
            s.meta.pop("mirrored")
        if forearm_fraction is not None:
            s = augment_forearm(s, forearm_fraction)
        if validate_sample(s, vocab):
            continue
        return s
    raise GenerationError(f"could not place G{gesture} within {MAX_RETRIES} attempts")


@dataclass
class GeneratorSpec:
    seed: int = 0
    users: int = 24
    samples_per_gesture_per_hand: int = 10
    test_users: Optional[int] = None
    rotation_range: Tuple[float, float] = (-45.0, 45.0)
    forearm_fractions: Tuple[float, ...] = DEFAULT_FOREARM_FRACTIONS

    def __post_init__(self):
        if self.users < 1:
            raise ValueError("users must be >= 1")
        if self.samples_per_gesture_per_hand < 1:
            raise ValueError("samples_per_gesture_per_hand must be >= 1")
        if self.test_users is None:
            self.test_users = max(1, round(self.users / 6)) if self.users > 1 else 0
        if not 0 <= self.test_users < self.users or (self.users > 1 and self.test_users == 0):
            raise ValueError("test_users must leave at least one training user")
        lo, hi = self.rotation_range
        if lo > hi:
            raise ValueError("rotation_range must be (low, high)")
        if not self.forearm_fractions or any(not 0 <= f <= 1 for f in self.forearm_fractions):
            raise ValueError("forearm_fractions must be non-empty fractions in [0, 1]")
        self.rotation_range = (float(lo), float(hi))
        self.forearm_fractions = tuple(float(f) for f in self.forearm_fractions)

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown generator spec keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rotation_range"] = list(self.rotation_range)
        d["forearm_fractions"] = list(self.forearm_fractions)
        return d

    def split_of(self, user: int) -> str:
        return "test" if user > self.users - self.test_users else "train"


def user_params(seed: int, user: int) -> UserParams:
    return UserParams.sample(np.random.default_rng([seed, user, 1]))


def sample_id(user: int, gesture: int, hand: Handedness, index: int) -> str:
    return f"u{user:02d}_g{gesture:02d}_{Handedness(hand).label[0]}_{index:03d}"


def iter_samples(spec: GeneratorSpec, vocab: Optional[GestureVocabulary] = None):
    """Yield ``(id, user, split, Sample)`` in a fixed order; per-sample seeds are derived."""
    vocab = vocab or GestureVocabulary.default()
    for user in range(1, spec.users + 1):
        params = user_params(spec.seed, user)
        for gesture in range(1, 11):
            for hand in (Handedness.LEFT, Handedness.RIGHT):
                for i in range(spec.samples_per_gesture_per_hand):
                    rng = np.random.default_rng([spec.seed, user, gesture, int(hand), i, 2])
                    fraction = spec.forearm_fractions[int(rng.integers(len(spec.forearm_fractions)))]
                    s = generate_sample(gesture, hand, params, rng, vocab, spec.rotation_range,
                                        fraction)
                    sid = sample_id(user, gesture, hand, i)
                    s.meta.update({"id": sid, "user": user, "seed": spec.seed})
                    yield sid, user, spec.split_of(user), s


def generate_dataset(spec: GeneratorSpec, out_dir, vocab: Optional[GestureVocabulary] = None) -> dict:
    """Write ``images/<id>.png``, ``annotations/<id>.json`` and ``manifest.json``."""
    from .dataset import write_manifest, write_sample

    vocab = vocab or GestureVocabulary.default()
    out_dir = Path(out_dir)
    entries = []
    for sid, user, split, s in iter_samples(spec, vocab):
        write_sample(out_dir, sid, s)
        entries.append({"id": sid, "user": user, "gesture": s.gesture,
                        "handedness": s.handedness.label, "split": split,
                        "meta": {k: v for k, v in s.meta.items() if k not in ("id", "user")}})
    return write_manifest(out_dir, entries, spec=spec.to_dict(), vocab=vocab)
