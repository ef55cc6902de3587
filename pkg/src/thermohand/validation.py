"""Input checks in the spirit of ``sklearn.utils.check_array``."""
from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .domain import INPUT_SIZE, Annotation, Sample


def check_images(X, size: int = INPUT_SIZE) -> np.ndarray:
    """Coerce ``X`` to a float32 ``(N, 1, size, size)`` array with values in [0, 1].

    Accepts ``(N, H, W)``, ``(N, H, W, 1)``, ``(N, 1, H, W)``, a single
    ``(H, W)`` image, or a sequence of :class:`Sample`.
    """
    if isinstance(X, Sample):
        X = [X]
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], Sample):
        X = [s.image for s in X]
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim == 4 and arr.shape[-1] == 1 and arr.shape[1] != 1:
        arr = np.moveaxis(arr, -1, 1)
    if arr.ndim == 3:
        arr = arr[:, None]
    if arr.ndim != 4 or arr.shape[1:] != (1, size, size):
        raise ValueError(f"expected images of shape (N, {size}, {size}), got {np.shape(X)}")
    if arr.shape[0] == 0:
        raise ValueError("found an empty image batch")
    if not np.isfinite(arr).all():
        raise ValueError("images contain NaN or infinity")
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def check_annotations(y, n: int) -> List[Annotation]:
    if isinstance(y, (list, tuple)) and y and isinstance(y[0], Sample):
        y = [s.annotation for s in y]
    y = list(y)
    if len(y) != n:
        raise ValueError(f"got {len(y)} annotations for {n} images")
    out = []
    for a in y:
        if isinstance(a, dict):
            a = Annotation.from_json(a)
        if not isinstance(a, Annotation):
            raise TypeError(f"annotations must be Annotation objects or dicts, got {type(a).__name__}")
        out.append(a)
    return out


def split_samples(samples: Sequence[Sample]):
    """``(X, y)`` pair from a list of samples."""
    return check_images([s.image for s in samples]), [s.annotation for s in samples]
