"""Gaussian heatmap encoding and argmax decoding of hand keypoints.

Stacks are ``(6, 50, 50)`` float arrays (channel-first, as the network emits
them). Channels 0-4 hold the fingertips in anatomical order and channel 5
holds both wrists.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .domain import N_FINGERS, KeypointSet, Point2

N_CHANNELS = N_FINGERS + 1
WRIST_CHANNEL = N_FINGERS


class DegenerateHeatmapError(ValueError):
    """Raised when a wrist channel does not contain two separable peaks."""


@dataclass(frozen=True)
class HeatmapConfig:
    map_size: int = 50
    channels: int = N_CHANNELS
    gaussian_variance: float = 1.5
    peak_amplitude: float = 1.0
    scale_factor: float = 0.5
    truncate_sigmas: float = 4.0

    def __post_init__(self):
        if self.gaussian_variance <= 0:
            raise ValueError("gaussian_variance must be positive")
        if self.channels != N_CHANNELS:
            raise ValueError(f"channels must be {N_CHANNELS}")
        if not math.isclose(self.map_size / self.scale_factor, round(self.map_size / self.scale_factor)):
            raise ValueError("map_size / scale_factor must be an integer input size")

    @property
    def input_size(self) -> int:
        return int(round(self.map_size / self.scale_factor))


@dataclass(frozen=True)
class DecodeConfig:
    wrist_min_separation: float = 5.0
    baseline_threshold: Optional[float] = None

    def __post_init__(self):
        if self.wrist_min_separation <= 0:
            raise ValueError("wrist_min_separation must be positive")
        if self.baseline_threshold is not None and not 0 < self.baseline_threshold < 1:
            raise ValueError("baseline_threshold must lie in (0, 1)")


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def heatmap_cell(p: Point2, cfg: HeatmapConfig = HeatmapConfig()) -> Tuple[int, int]:
    """Heatmap cell ``(x, y)`` whose input-pixel block contains ``p``.

    Input pixel centers map to ``s*x + (s - 1)/2`` so that cell ``h`` covers
    input pixels ``2h`` and ``2h + 1`` at the default scale of one half.
    """
    s = cfg.scale_factor
    offset = (s - 1.0) / 2.0
    hx = _round_half_up(s * p.x + offset)
    hy = _round_half_up(s * p.y + offset)
    n = cfg.map_size - 1
    return min(max(hx, 0), n), min(max(hy, 0), n)


def to_input_coords(pt: Point2, cfg: HeatmapConfig = HeatmapConfig()) -> Point2:
    """Center of the input-pixel block covered by heatmap location ``pt``."""
    if not (0 <= pt.x <= cfg.map_size - 1 and 0 <= pt.y <= cfg.map_size - 1):
        raise ValueError(f"heatmap point {tuple(pt)} outside {cfg.map_size}x{cfg.map_size}")
    inv = 1.0 / cfg.scale_factor
    offset = (inv - 1.0) / 2.0
    return Point2(inv * pt.x + offset, inv * pt.y + offset)


def gaussian(center: Tuple[int, int], cfg: HeatmapConfig = HeatmapConfig()) -> np.ndarray:
    """Unnormalized Gaussian blob on the heatmap grid, zero beyond the truncation radius."""
    yy, xx = np.mgrid[0:cfg.map_size, 0:cfg.map_size]
    d2 = (xx - center[0]) ** 2 + (yy - center[1]) ** 2
    g = cfg.peak_amplitude * np.exp(-d2 / (2.0 * cfg.gaussian_variance))
    radius = cfg.truncate_sigmas * math.sqrt(cfg.gaussian_variance)
    g[d2 > radius * radius] = 0.0
    return g


def encode(kp: KeypointSet, mask: Sequence[bool], cfg: HeatmapConfig = HeatmapConfig()) -> np.ndarray:
    mask = tuple(bool(m) for m in mask)
    if kp.mask != mask:
        raise ValueError(f"keypoint visibility {kp.mask} disagrees with mask {mask}")
    stack = np.zeros((cfg.channels, cfg.map_size, cfg.map_size), dtype=np.float64)
    for i, tip in enumerate(kp.fingertips):
        if tip is not None:
            stack[i] = gaussian(heatmap_cell(tip, cfg), cfg)
    w0, w1 = (gaussian(heatmap_cell(w, cfg), cfg) for w in kp.wrists)
    stack[WRIST_CHANNEL] = np.maximum(w0, w1)
    return stack


def _check_stack(stack) -> np.ndarray:
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] != N_CHANNELS:
        raise ValueError(f"expected a ({N_CHANNELS}, H, W) stack, got {stack.shape}")
    return stack


def argmax2d(channel: np.ndarray) -> Tuple[Point2, float]:
    """Row-major first maximum of a 2-D map."""
    flat = int(np.argmax(channel))
    y, x = divmod(flat, channel.shape[1])
    return Point2(float(x), float(y)), float(channel[y, x])


Detection = Tuple[int, Point2, float]


def decode_fingertips(stack, mask: Sequence[bool]) -> List[Detection]:
    stack = _check_stack(stack)
    out = []
    for i in range(N_FINGERS):
        if mask[i]:
            pt, score = argmax2d(stack[i])
            out.append((i, pt, score))
    return out


def decode_fingertips_threshold(stack, p: float) -> List[Detection]:
    """Fixed-threshold baseline: a finger is detected when its peak reaches ``p``."""
    if not 0 < p < 1:
        raise ValueError("threshold must lie in (0, 1)")
    stack = _check_stack(stack)
    out = []
    for i in range(N_FINGERS):
        pt, score = argmax2d(stack[i])
        if score >= p:
            out.append((i, pt, score))
    return out


def decode_wrists(stack, cfg: DecodeConfig = DecodeConfig()) -> Tuple[Point2, Point2]:
    stack = _check_stack(stack)
    channel = stack[WRIST_CHANNEL]
    first, top = argmax2d(channel)
    if top <= 0:
        raise DegenerateHeatmapError("wrist channel is identically zero")
    yy, xx = np.mgrid[0:channel.shape[0], 0:channel.shape[1]]
    far = (xx - first.x) ** 2 + (yy - first.y) ** 2 > cfg.wrist_min_separation ** 2
    candidates = np.where(far, channel, -np.inf)
    second, value = argmax2d(candidates)
    if not value > 0:
        raise DegenerateHeatmapError(
            f"no second wrist: no positive pixel farther than {cfg.wrist_min_separation} px")
    return first, second


def dump_pngs(stack, out_dir, sample_id: str) -> List[Path]:
    """Write one grayscale PNG per channel, mapping [0, 1] linearly onto [0, 255]."""
    from PIL import Image

    stack = _check_stack(stack)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(stack.shape[0]):
        img = np.round(np.clip(stack[k], 0.0, 1.0) * 255.0).astype(np.uint8)
        path = out_dir / f"{sample_id}_ch{k + 1}.png"
        Image.fromarray(img, mode="L").save(path)
        paths.append(path)
    return paths


class HeatmapEncoder(TransformerMixin, BaseEstimator):
    """Stateless transformer from annotations to target heatmap stacks.

    ``inverse_transform`` recovers keypoints with the true visibility masks,
    which is only meaningful on stacks that came out of ``transform``.
    """

    def __init__(self, gaussian_variance=1.5, peak_amplitude=1.0, map_size=50,
                 wrist_min_separation=5.0):
        self.gaussian_variance = gaussian_variance
        self.peak_amplitude = peak_amplitude
        self.map_size = map_size
        self.wrist_min_separation = wrist_min_separation

    def _cfg(self) -> HeatmapConfig:
        return HeatmapConfig(map_size=self.map_size, gaussian_variance=self.gaussian_variance,
                             peak_amplitude=self.peak_amplitude,
                             scale_factor=self.map_size / 100.0)

    def fit(self, X, y=None):
        self.config_ = self._cfg()
        return self

    def transform(self, X):
        cfg = self._cfg()
        return np.stack([encode(a.keypoints, a.keypoints.mask, cfg) for a in X])

    def inverse_transform(self, X, masks=None):
        cfg = self._cfg()
        dcfg = DecodeConfig(self.wrist_min_separation)
        out = []
        for i, stack in enumerate(np.asarray(X)):
            mask = masks[i] if masks is not None else [stack[c].max() > 0 for c in range(N_FINGERS)]
            tips: List[Optional[Point2]] = [None] * N_FINGERS
            for f, pt, _ in decode_fingertips(stack, mask):
                tips[f] = to_input_coords(pt, cfg)
            w = decode_wrists(stack, dcfg)
            out.append(KeypointSet(tuple(tips), (to_input_coords(w[0], cfg), to_input_coords(w[1], cfg))))
        return out
