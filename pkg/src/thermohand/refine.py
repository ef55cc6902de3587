"""Turn network outputs into a final gesture, handedness and keypoint set.

Fingertip channels are read only for the fingers the predicted gesture
shows, then relabeled by their angle to the wrist line: seen from the
thumb-side wrist, the thumb makes the widest angle with the line to the
other wrist and the little finger the narrowest.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .domain import N_FINGERS, GestureVocabulary, Handedness, KeypointSet, Point2, check_gesture
from .heatmap import (DecodeConfig, HeatmapConfig, decode_fingertips, decode_wrists,
                      to_input_coords)

logger = logging.getLogger(__name__)

CROSS_EPS = 1e-6


class DegenerateGeometryError(ValueError):
    """Fingertip centroid lies on the wrist line, so the thumb side is undefined."""


@dataclass(frozen=True)
class RawDetections:
    fingertips: Tuple[Optional[Tuple[Point2, float]], ...]
    wrists: Tuple[Point2, Point2]
    gesture: int
    handedness: Handedness
    degenerate: bool = False

    def points(self) -> List[Optional[Point2]]:
        return [None if d is None else d[0] for d in self.fingertips]


def _cross(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return a[0] * b[1] - a[1] * b[0]


def select_origin_wrist(wrists: Sequence[Point2], fingertips: Sequence[Point2],
                        hand: Handedness, eps: float = CROSS_EPS) -> int:
    """Index of the thumb-side wrist.

    With ``d`` the offset from the wrist midpoint to the fingertip centroid,
    the thumb side is where ``cross(d, w - mid)`` is negative for a right hand
    and positive for a left hand (image axes, y down).
    """
    if not fingertips:
        raise ValueError("need at least one fingertip")
    mx = (wrists[0].x + wrists[1].x) / 2.0
    my = (wrists[0].y + wrists[1].y) / 2.0
    cx = sum(p.x for p in fingertips) / len(fingertips)
    cy = sum(p.y for p in fingertips) / len(fingertips)
    d = (cx - mx, cy - my)
    crosses = [_cross(d, (w.x - mx, w.y - my)) for w in wrists]
    if all(abs(c) <= eps for c in crosses):
        raise DegenerateGeometryError("fingertip centroid is collinear with the wrist line")
    sign = -1.0 if Handedness(hand) == Handedness.RIGHT else 1.0
    return 0 if sign * crosses[0] > sign * crosses[1] else 1


def finger_angles(origin: Point2, other_wrist: Point2, fingertips: Sequence[Point2]) -> List[float]:
    """Unsigned angle in degrees between the wrist line and each finger line."""
    wx, wy = other_wrist.x - origin.x, other_wrist.y - origin.y
    wn = math.hypot(wx, wy)
    if wn == 0:
        raise ValueError("wrist line has zero length")
    angles = []
    for t in fingertips:
        fx, fy = t.x - origin.x, t.y - origin.y
        fn = math.hypot(fx, fy)
        if fn == 0:
            raise ValueError("fingertip coincides with the origin wrist")
        # atan2 of (|cross|, dot) stays accurate near 0 and 180 degrees
        angles.append(math.degrees(math.atan2(abs(_cross((wx, wy), (fx, fy))), wx * fx + wy * fy)))
    return angles


def correct_misorder(raw: RawDetections, vocab: GestureVocabulary) -> RawDetections:
    """Reassign visible fingertip points to fingers by descending wrist-line angle.

    The point set is unchanged; only labels move. On degenerate geometry the
    input comes back untouched with ``degenerate=True``.
    """
    visible = vocab.visible(raw.gesture)
    present = [i for i, d in enumerate(raw.fingertips) if d is not None]
    if present != visible:
        raise ValueError(f"detections {present} do not match gesture G{raw.gesture} fingers {visible}")
    if not present:
        raise ValueError("need at least one visible fingertip")
    if len(present) == 1:
        return raw
    dets = [raw.fingertips[i] for i in present]
    pts = [d[0] for d in dets]
    try:
        origin = select_origin_wrist(raw.wrists, pts, raw.handedness)
        angles = finger_angles(raw.wrists[origin], raw.wrists[1 - origin], pts)
    except ValueError:
        logger.warning("misorder correction skipped: degenerate wrist/fingertip geometry")
        return replace(raw, degenerate=True)
    # stable sort: equal angles keep their current labels
    order = sorted(range(len(dets)), key=lambda k: -angles[k])
    tips: List[Optional[Tuple[Point2, float]]] = [None] * N_FINGERS
    for finger, k in zip(present, order):
        tips[finger] = dets[k]
    return replace(raw, fingertips=tuple(tips))


def predict_labels(gesture_probs, handedness_prob: float) -> Tuple[int, Handedness]:
    probs = np.asarray(gesture_probs, dtype=np.float64)
    if probs.shape != (10,):
        raise ValueError("gesture_probs must be a 10-vector")
    if abs(probs.sum() - 1.0) > 1e-5:
        raise ValueError(f"gesture_probs must sum to 1, got {probs.sum()}")
    if not 0.0 <= handedness_prob <= 1.0:
        raise ValueError("handedness_prob must lie in [0, 1]")
    gesture = int(np.argmax(probs)) + 1
    hand = Handedness.RIGHT if handedness_prob >= 0.5 else Handedness.LEFT
    return gesture, hand


def refine(stack, gesture_probs, handedness_prob: float, vocab: GestureVocabulary,
           heatmap_cfg: HeatmapConfig = HeatmapConfig(),
           decode_cfg: DecodeConfig = DecodeConfig()) -> Tuple[int, Handedness, KeypointSet]:
    gesture, hand = predict_labels(gesture_probs, float(handedness_prob))
    mask = vocab.mask(gesture)
    tips: List[Optional[Tuple[Point2, float]]] = [None] * N_FINGERS
    for finger, pt, score in decode_fingertips(stack, mask):
        tips[finger] = (pt, score)
    wrists = decode_wrists(stack, decode_cfg)
    raw = correct_misorder(RawDetections(tuple(tips), wrists, gesture, hand), vocab)
    kp = KeypointSet(
        tuple(None if d is None else to_input_coords(d[0], heatmap_cfg) for d in raw.fingertips),
        (to_input_coords(raw.wrists[0], heatmap_cfg), to_input_coords(raw.wrists[1], heatmap_cfg)),
    )
    return gesture, hand, kp
