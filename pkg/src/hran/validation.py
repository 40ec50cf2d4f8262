"""Input checks shared by the estimator API and the command line."""

from __future__ import annotations

from typing import List, Sequence

import numpy as np
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .data import quantize

__all__ = ["check_image", "check_images", "check_image_pairs", "check_is_fitted", "NotFittedError"]


def check_image(img, name: str = "image", min_size: int = 1) -> np.ndarray:
    """Return ``img`` as a contiguous ``(h, w, 3)`` uint8 array.

    Accepts uint8 RGB, grayscale (replicated to three channels), RGBA (alpha
    dropped), integer arrays within 0..255 and float arrays within [0, 1].
    """
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise ValueError(f"{name}: expected an (h, w, 3) RGB array, got shape {arr.shape}")
    arr = arr[..., :3]
    if arr.shape[0] < min_size or arr.shape[1] < min_size:
        raise ValueError(f"{name}: {arr.shape[1]}x{arr.shape[0]} is smaller than {min_size}x{min_size}")
    if arr.dtype == np.uint8:
        return np.ascontiguousarray(arr)
    if np.issubdtype(arr.dtype, np.integer):
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError(f"{name}: integer pixel values must lie in 0..255")
        return arr.astype(np.uint8)
    if np.issubdtype(arr.dtype, np.floating):
        if not np.isfinite(arr).all():
            raise ValueError(f"{name}: contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"{name}: float pixel values must lie in [0, 1]")
        return quantize(arr)
    raise ValueError(f"{name}: unsupported dtype {arr.dtype}")


def check_images(images, name: str = "X", min_size: int = 1) -> List[np.ndarray]:
    """Validate a single image or a sequence of images; always returns a list."""
    if isinstance(images, np.ndarray) and images.ndim in (2, 3):
        images = [images]
    elif isinstance(images, np.ndarray) and images.ndim == 4:
        images = list(images)
    if not isinstance(images, (list, tuple)) and not isinstance(images, np.ndarray):
        images = list(images)
    if len(images) == 0:
        raise ValueError(f"{name}: no images given")
    return [check_image(im, f"{name}[{i}]", min_size) for i, im in enumerate(images)]


def check_image_pairs(lr: Sequence, hr: Sequence, scale: int):
    """Validate aligned LR/HR lists: same length and HR exactly ``scale`` times LR."""
    lr, hr = check_images(lr, "X"), check_images(hr, "y")
    if len(lr) != len(hr):
        raise ValueError(f"X has {len(lr)} images but y has {len(hr)}")
    for i, (a, b) in enumerate(zip(lr, hr)):
        if b.shape[:2] != (a.shape[0] * scale, a.shape[1] * scale):
            raise ValueError(f"pair {i}: HR {b.shape[1]}x{b.shape[0]} is not x{scale} of LR {a.shape[1]}x{a.shape[0]}")
    return lr, hr
