"""Shared value types, coordinate conventions and the gesture vocabulary.

Coordinates are pixels with ``x`` along columns (rightward) and ``y`` along
rows (downward); integer coordinates sit on pixel centers and the origin is
the top-left pixel.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

FINGERS: Tuple[str, ...] = ("thumb", "index", "middle", "ring", "little")
N_FINGERS = len(FINGERS)
N_GESTURES = 10
INPUT_SIZE = 100


class Point2(NamedTuple):
    x: float
    y: float

    def distance(self, other: "Point2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


class Handedness(enum.IntEnum):
    LEFT = 0
    RIGHT = 1

    @classmethod
    def parse(cls, value) -> "Handedness":
        if isinstance(value, Handedness):
            return value
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))

    @property
    def label(self) -> str:
        return self.name.lower()


def check_gesture(gesture: int) -> int:
    gesture = int(gesture)
    if not 1 <= gesture <= N_GESTURES:
        raise ValueError(f"gesture id must be in [1, {N_GESTURES}], got {gesture}")
    return gesture


Mask = Tuple[bool, bool, bool, bool, bool]

_DEFAULT_SETS = {
    1: {"thumb"},
    2: {"index"},
    3: {"index", "middle"},
    4: {"index", "middle", "ring"},
    5: set(FINGERS),
    6: {"thumb", "index"},
    7: {"thumb", "little"},
    8: {"index", "little"},
    9: {"thumb", "index", "middle"},
    10: {"index", "middle", "ring", "little"},
}


class GestureVocabulary:
    """Maps each gesture id to the fingers visible in that gesture."""

    def __init__(self, masks: Dict[int, Sequence[bool]]):
        parsed: Dict[int, Mask] = {}
        for gesture, mask in masks.items():
            gesture = check_gesture(gesture)
            mask = tuple(bool(m) for m in mask)
            if len(mask) != N_FINGERS:
                raise ValueError(f"G{gesture}: mask must have {N_FINGERS} entries")
            if not any(mask):
                raise ValueError(f"G{gesture}: at least one finger must be visible")
            parsed[gesture] = mask  # type: ignore[assignment]
        missing = set(range(1, N_GESTURES + 1)) - set(parsed)
        if missing:
            raise ValueError(f"vocabulary is missing gestures {sorted(missing)}")
        if len(set(parsed.values())) != N_GESTURES:
            raise ValueError("vocabulary masks must be distinct")
        self.masks = dict(sorted(parsed.items()))

    @classmethod
    def default(cls) -> "GestureVocabulary":
        return cls({g: [f in s for f in FINGERS] for g, s in _DEFAULT_SETS.items()})

    def mask(self, gesture: int) -> Mask:
        return self.masks[check_gesture(gesture)]

    def visible(self, gesture: int) -> List[int]:
        return [i for i, v in enumerate(self.mask(gesture)) if v]

    def to_dict(self) -> Dict[str, List[bool]]:
        return {f"G{g}": list(m) for g, m in self.masks.items()}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[bool]]) -> "GestureVocabulary":
        masks = {}
        for key, value in data.items():
            if not (isinstance(key, str) and key.startswith("G")):
                raise ValueError(f"bad vocabulary key {key!r}")
            masks[int(key[1:])] = value
        return cls(masks)

    @classmethod
    def load(cls, path) -> "GestureVocabulary":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def __eq__(self, other) -> bool:
        return isinstance(other, GestureVocabulary) and self.masks == other.masks

    def __repr__(self) -> str:
        return f"GestureVocabulary({self.to_dict()})"


@dataclass(frozen=True)
class KeypointSet:
    """Fingertips in anatomical order (``None`` when hidden) plus two wrists."""

    fingertips: Tuple[Optional[Point2], ...]
    wrists: Tuple[Point2, Point2]
    width: int = INPUT_SIZE
    height: int = INPUT_SIZE

    def __post_init__(self):
        tips = tuple(None if p is None else Point2(float(p[0]), float(p[1]))
                     for p in self.fingertips)
        if len(tips) != N_FINGERS:
            raise ValueError(f"expected {N_FINGERS} fingertip slots, got {len(tips)}")
        wrists = tuple(Point2(float(p[0]), float(p[1])) for p in self.wrists)
        if len(wrists) != 2:
            raise ValueError("expected exactly two wrist points")
        object.__setattr__(self, "fingertips", tips)
        object.__setattr__(self, "wrists", wrists)

    @property
    def mask(self) -> Mask:
        return tuple(p is not None for p in self.fingertips)  # type: ignore[return-value]

    def points(self) -> List[Point2]:
        return [p for p in self.fingertips if p is not None] + list(self.wrists)

    def map(self, fn) -> "KeypointSet":
        """Apply ``fn(Point2) -> Point2`` to every point."""
        return KeypointSet(
            tuple(None if p is None else fn(p) for p in self.fingertips),
            (fn(self.wrists[0]), fn(self.wrists[1])),
            self.width,
            self.height,
        )


@dataclass(frozen=True)
class Annotation:
    gesture: int
    handedness: Handedness
    keypoints: KeypointSet

    def to_json(self) -> dict:
        def pt(p):
            return None if p is None else [_num(p.x), _num(p.y)]

        return {
            "gesture": int(self.gesture),
            "handedness": Handedness(self.handedness).label,
            "fingertips": {f: pt(p) for f, p in zip(FINGERS, self.keypoints.fingertips)},
            "wrists": [pt(w) for w in self.keypoints.wrists],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Annotation":
        expected = {"gesture", "handedness", "fingertips", "wrists"}
        if set(data) != expected:
            raise ValueError(f"annotation keys must be {sorted(expected)}, got {sorted(data)}")
        if set(data["fingertips"]) != set(FINGERS):
            raise ValueError("annotation fingertips must name all five fingers")
        tips = tuple(None if data["fingertips"][f] is None else Point2(*data["fingertips"][f])
                     for f in FINGERS)
        wrists = data["wrists"]
        if len(wrists) != 2:
            raise ValueError("annotation must hold two wrists")
        return cls(
            check_gesture(data["gesture"]),
            Handedness.parse(data["handedness"]),
            KeypointSet(tips, (Point2(*wrists[0]), Point2(*wrists[1]))),
        )


def _num(v: float):
    return int(v) if float(v).is_integer() else float(v)


@dataclass
class Sample:
    image: np.ndarray
    gesture: int
    handedness: Handedness
    keypoints: KeypointSet
    meta: dict = field(default_factory=dict)

    @property
    def annotation(self) -> Annotation:
        return Annotation(self.gesture, Handedness(self.handedness), self.keypoints)


def _in_bounds(p: Point2, width: int, height: int) -> bool:
    return (math.isfinite(p.x) and math.isfinite(p.y)
            and 0 <= p.x <= width - 1 and 0 <= p.y <= height - 1)


def validate_sample(s: Sample, vocab: GestureVocabulary, bbox_tolerance: float = 1.0) -> List[str]:
    """Return the list of violated invariants; an empty list means valid.

    Keypoints must lie inside the foreground bounding box, widened by
    ``bbox_tolerance`` pixels to absorb nearest-neighbor resampling.
    """
    problems: List[str] = []
    image = np.asarray(s.image)
    kp = s.keypoints
    if image.shape != (kp.height, kp.width):
        problems.append(f"image shape {image.shape} != ({kp.height}, {kp.width})")
    if not np.isin(image, (0, 1)).all():
        problems.append("non-binary pixel")
    try:
        mask = vocab.mask(s.gesture)
    except (ValueError, KeyError) as exc:
        problems.append(f"invalid gesture: {exc}")
        mask = None
    if mask is not None and kp.mask != mask:
        problems.append(f"visibility mismatch: keypoints {kp.mask} vs gesture mask {mask}")
    for p in kp.points():
        if not _in_bounds(p, kp.width, kp.height):
            problems.append(f"out of bounds: ({p.x}, {p.y})")
    if kp.wrists[0] == kp.wrists[1]:
        problems.append("wrist points coincide")
    ys, xs = np.nonzero(image == 1) if image.ndim == 2 else ((), ())
    if len(xs) == 0:
        problems.append("empty foreground")
    elif not any(m.startswith(("out of bounds", "image shape")) for m in problems):
        t = bbox_tolerance
        for p in kp.points():
            if not (xs.min() - t <= p.x <= xs.max() + t and ys.min() - t <= p.y <= ys.max() + t):
                problems.append(f"keypoint ({p.x}, {p.y}) outside foreground bounding box")
    return problems
