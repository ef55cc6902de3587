"""Frame segmentation into 100x100 binary hand samples, plus training augmentations."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.cluster import KMeans
from sklearn.utils.validation import check_is_fitted

from .domain import KeypointSet, Point2, Sample

FRAME_SHAPE = (480, 640)
ROI_SHAPE = (440, 640)
DEFAULT_FOREARM_FRACTIONS = tuple(i / 10 for i in range(10))
DEFAULT_ROTATIONS = tuple(range(-90, 91, 15))


class AugmentationError(ValueError):
    """An augmentation would push a keypoint outside the image."""


class InsufficientForegroundError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentationConfig:
    roi_offset: int = 0
    roi_height: int = 440
    diff_threshold: Union[float, str] = "otsu"
    k: int = 1
    min_blob_area: int = 400
    output_size: int = 100

    def __post_init__(self):
        if self.k not in (1, 2):
            raise ValueError("k must be 1 or 2")
        if self.min_blob_area <= 0:
            raise ValueError("min_blob_area must be positive")
        if isinstance(self.diff_threshold, str) and self.diff_threshold != "otsu":
            raise ValueError("diff_threshold must be a number or 'otsu'")


@dataclass(frozen=True)
class AugmentationSpec:
    rotation_angles: Tuple[float, ...] = DEFAULT_ROTATIONS
    forearm_lengths: Tuple[float, ...] = DEFAULT_FOREARM_FRACTIONS

    def __post_init__(self):
        if len(self.forearm_lengths) != 10:
            raise ValueError("exactly 10 forearm lengths are required")
        if any(not 0.0 <= f <= 1.0 for f in self.forearm_lengths):
            raise ValueError("forearm lengths must be fractions in [0, 1]")


def read_frame(path) -> np.ndarray:
    """Load a single-channel 16-bit TIFF or PNG frame."""
    from PIL import Image

    with Image.open(Path(path)) as img:
        arr = np.array(img)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel image, got shape {arr.shape}")
    return arr.astype(np.uint16) if arr.dtype != np.uint16 else arr


def crop_roi(frame: np.ndarray, cfg: SegmentationConfig = SegmentationConfig()) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.shape != FRAME_SHAPE:
        raise ValueError(f"frame must be 640x480 (shape {FRAME_SHAPE}), got {frame.shape}")
    stop = cfg.roi_offset + cfg.roi_height
    if stop > FRAME_SHAPE[0]:
        raise ValueError("roi extends past the frame")
    return frame[cfg.roi_offset:stop, :]


def otsu_threshold(values: np.ndarray) -> float:
    from skimage.filters import threshold_otsu

    # histogram over the distinct values: exact, unlike the default 256 bins
    levels, counts = np.unique(np.asarray(values, dtype=np.float64), return_counts=True)
    if len(levels) == 1:
        return float(levels[0])
    return float(threshold_otsu(hist=(counts, levels)))


def background_subtract(frame: np.ndarray, background: np.ndarray,
                        cfg: SegmentationConfig = SegmentationConfig()) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if frame.shape != background.shape:
        raise ValueError(f"frame {frame.shape} and background {background.shape} differ in size")
    diff = np.abs(frame - background)
    if cfg.diff_threshold == "otsu":
        if diff.max() == diff.min():
            return np.zeros(diff.shape, dtype=np.uint8)
        threshold = otsu_threshold(diff)
    else:
        threshold = float(cfg.diff_threshold)
    return (diff > threshold).astype(np.uint8)


def principal_axis_extremes(coords: np.ndarray) -> np.ndarray:
    """The two foreground pixels at either end of the principal axis."""
    centered = coords - coords.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[0]
    return coords[[int(np.argmin(proj)), int(np.argmax(proj))]].astype(np.float64)


def isolate_hands(mask: np.ndarray, cfg: SegmentationConfig = SegmentationConfig()) -> List[np.ndarray]:
    """Split foreground pixels into ``cfg.k`` clusters of ``(x, y)`` coordinates.

    Clusters below ``min_blob_area`` are dropped; the rest come back ordered by
    centroid x.
    """
    ys, xs = np.nonzero(np.asarray(mask))
    coords = np.column_stack([xs, ys])
    if len(coords) < cfg.k * cfg.min_blob_area:
        raise InsufficientForegroundError(
            f"{len(coords)} foreground pixels < {cfg.k} x {cfg.min_blob_area}")
    if cfg.k == 1:
        clusters = [coords]
    else:
        km = KMeans(n_clusters=2, init=principal_axis_extremes(coords), n_init=1,
                    max_iter=100, tol=0.0, algorithm="lloyd")
        labels = km.fit_predict(coords.astype(np.float64))
        clusters = [coords[labels == c] for c in range(2)]
    clusters = [c for c in clusters if len(c) >= cfg.min_blob_area]
    return sorted(clusters, key=lambda c: (c[:, 0].mean(), c[:, 1].mean()))


@dataclass(frozen=True)
class CropTransform:
    """Square crop placed at ``offset`` in the frame and scaled by ``1/scale``."""

    offset_x: float
    offset_y: float
    scale: float

    def to_output(self, p: Point2) -> Point2:
        return Point2((p.x - self.offset_x + 0.5) / self.scale - 0.5,
                      (p.y - self.offset_y + 0.5) / self.scale - 0.5)

    def to_frame(self, p: Point2) -> Point2:
        return Point2((p.x + 0.5) * self.scale - 0.5 + self.offset_x,
                      (p.y + 0.5) * self.scale - 0.5 + self.offset_y)


def tight_crop_resize(mask: np.ndarray, cluster: np.ndarray,
                      out: int = 100) -> Tuple[np.ndarray, CropTransform]:
    cluster = np.asarray(cluster)
    if len(cluster) == 0:
        raise ValueError("cluster is empty")
    xs, ys = cluster[:, 0].astype(int), cluster[:, 1].astype(int)
    x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    w, h = x1 - x0 + 1, y1 - y0 + 1
    side = max(w, h)
    sx = x0 - (side - w) // 2
    sy = y0 - (side - h) // 2
    canvas = np.zeros((side, side), dtype=np.uint8)
    canvas[ys - sy, xs - sx] = 1
    idx = np.minimum(((np.arange(out) + 0.5) * side / out).astype(int), side - 1)
    image = canvas[np.ix_(idx, idx)]
    return image, CropTransform(float(sx), float(sy), side / out)


def _rotate_point(p: Point2, angle: float, cx: float, cy: float) -> Point2:
    c, s = math.cos(math.radians(angle)), math.sin(math.radians(angle))
    dx, dy = p.x - cx, p.y - cy
    return Point2(cx + c * dx + s * dy, cy - s * dx + c * dy)


def rotate_image(image: np.ndarray, angle: float) -> np.ndarray:
    """Nearest-neighbor rotation about the center, counterclockwise as displayed."""
    h, w = image.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    c, s = math.cos(math.radians(angle)), math.sin(math.radians(angle))
    yy, xx = np.mgrid[0:h, 0:w]
    dx, dy = xx - cx, yy - cy
    src_x = np.rint(cx + c * dx - s * dy).astype(int)
    src_y = np.rint(cy + s * dx + c * dy).astype(int)
    ok = (src_x >= 0) & (src_x < w) & (src_y >= 0) & (src_y < h)
    out = np.zeros_like(image)
    out[ok] = image[src_y[ok], src_x[ok]]
    return out


def augment_rotation(s: Sample, angle: float) -> Sample:
    if angle == 0:
        return replace(s, image=s.image.copy(), meta={**s.meta})
    h, w = s.image.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    kp = s.keypoints.map(lambda p: _rotate_point(p, angle, cx, cy))
    for p in kp.points():
        if not (0 <= p.x <= w - 1 and 0 <= p.y <= h - 1):
            raise AugmentationError(f"rotation by {angle} moves keypoint to ({p.x:.2f}, {p.y:.2f})")
    meta = {**s.meta, "augment": [*s.meta.get("augment", []), {"rotation": float(angle)}]}
    return replace(s, image=rotate_image(s.image, angle), keypoints=kp, meta=meta)


def forearm_depth(shape: Tuple[int, int], kp: KeypointSet) -> np.ndarray:
    """Per-pixel distance past the wrist line on the side away from the fingertips.

    Pixels on the fingertip side get negative values.
    """
    w0, w1 = kp.wrists
    lx, ly = w1.x - w0.x, w1.y - w0.y
    norm = math.hypot(lx, ly)
    nx, ny = -ly / norm, lx / norm
    tips = [p for p in kp.fingertips if p is not None]
    cx = sum(p.x for p in tips) / len(tips)
    cy = sum(p.y for p in tips) / len(tips)
    if nx * (cx - w0.x) + ny * (cy - w0.y) > 0:
        nx, ny = -nx, -ny
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    return nx * (xx - w0.x) + ny * (yy - w0.y)


def augment_forearm(s: Sample, fraction: float) -> Sample:
    """Cut the forearm to ``fraction`` of its visible extent past the wrist line."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    depth = forearm_depth(s.image.shape, s.keypoints)
    fg = s.image == 1
    extent = float(depth[fg].max()) if fg.any() else 0.0
    image = s.image.copy()
    if extent > 0:
        image[fg & (depth > fraction * extent)] = 0
    meta = {**s.meta, "augment": [*s.meta.get("augment", []), {"forearm": float(fraction)}]}
    return replace(s, image=image, meta=meta)


def augment(s: Sample, spec: AugmentationSpec = AugmentationSpec()) -> List[Sample]:
    """Every rotation x forearm-length combination that keeps keypoints in frame."""
    out = []
    for angle in spec.rotation_angles:
        try:
            rotated = augment_rotation(s, angle)
        except AugmentationError:
            continue
        out.extend(augment_forearm(rotated, f) for f in spec.forearm_lengths)
    return out


class HandSegmenter(TransformerMixin, BaseEstimator):
    """Frames in, 100x100 binary hand crops out.

    ``fit`` learns the empty-table background as the per-pixel median of the
    given frames unless a ``background`` frame is supplied. ``transform``
    returns, per frame, a list of ``(image, CropTransform)`` pairs; transforms
    map crop coordinates back to the cropped 640x440 region.
    """

    def __init__(self, background=None, diff_threshold="otsu", k=1, min_blob_area=400,
                 roi_offset=0, output_size=100):
        self.background = background
        self.diff_threshold = diff_threshold
        self.k = k
        self.min_blob_area = min_blob_area
        self.roi_offset = roi_offset
        self.output_size = output_size

    def _cfg(self) -> SegmentationConfig:
        return SegmentationConfig(roi_offset=self.roi_offset, diff_threshold=self.diff_threshold,
                                  k=self.k, min_blob_area=self.min_blob_area,
                                  output_size=self.output_size)

    def fit(self, X=None, y=None):
        cfg = self._cfg()
        if self.background is not None:
            self.background_ = crop_roi(self.background, cfg).astype(np.float64)
        else:
            if X is None or len(X) == 0:
                raise ValueError("need background frames or an explicit background")
            self.background_ = np.median(np.stack([crop_roi(f, cfg) for f in X]), axis=0)
        return self

    def transform(self, X) -> List[List[Tuple[np.ndarray, CropTransform]]]:
        check_is_fitted(self, "background_")
        cfg = self._cfg()
        results = []
        for frame in X:
            mask = background_subtract(crop_roi(frame, cfg), self.background_, cfg)
            try:
                clusters = isolate_hands(mask, cfg)
            except InsufficientForegroundError:
                clusters = []
            results.append([tight_crop_resize(mask, c, cfg.output_size) for c in clusters])
        return results
