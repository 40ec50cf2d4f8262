"""Image I/O, colour conversion, degradation models, patch sampling and augmentation.

RGB images at the file boundary are ``uint8`` arrays of shape ``(h, w, 3)``;
float images are ``(h, w, 3)`` float64 in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .config import DegradationSpec

CUBIC_A = -0.5


# -- conversions ---------------------------------------------------------------

def quantize(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8, rounding half away from zero."""
    return np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def to_float(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 255.0


def images_to_batch(images: Sequence[np.ndarray], dtype=np.float32) -> np.ndarray:
    """Stack ``(h, w, 3)`` uint8 images into an ``(n, 3, h, w)`` batch in [0, 1]."""
    arr = np.stack([np.asarray(im) for im in images])
    scale = 255.0 if arr.dtype == np.uint8 else 1.0
    return (arr.transpose(0, 3, 1, 2).astype(np.float64) / scale).astype(dtype)


def batch_to_images(batch: np.ndarray) -> List[np.ndarray]:
    return [quantize(b.transpose(1, 2, 0)) for b in np.asarray(batch)]


def rgb_to_ycbcr_y(img: np.ndarray) -> np.ndarray:
    """Studio-swing BT.601 luma of an 8-bit RGB image, as float64 in [16, 235]."""
    rgb = np.asarray(img, dtype=np.float64) / 255.0
    return 16.0 + (65.481 * rgb[..., 0] + 128.553 * rgb[..., 1] + 24.966 * rgb[..., 2])


# -- file I/O ------------------------------------------------------------------

def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path, img: np.ndarray) -> None:
    from PIL import Image

    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = quantize(arr)
    Image.fromarray(arr, mode="RGB" if arr.ndim == 3 else "L").save(path, format="PNG")


def list_pngs(directory) -> List[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")


# -- resampling ----------------------------------------------------------------

def cubic_kernel(x, a: float = CUBIC_A) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def resize_weights(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """Dense ``(out_len, in_len)`` resampling matrix along one axis.

    Output pixel centres map to ``u = (x + 0.5) / scale - 0.5`` in input
    coordinates. On downscaling with ``antialias`` the kernel is stretched by
    ``1 / scale``. Taps outside the image are clamped to the edge pixel, and
    each row is normalized to sum to 1.
    """
    scale = out_len / in_len
    stretch = antialias and scale < 1
    width = 4.0 / scale if stretch else 4.0
    u = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2).astype(np.int64)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = u[:, None] - idx
    w = scale * cubic_kernel(scale * dist) if stretch else cubic_kernel(dist)
    w = w / w.sum(axis=1, keepdims=True)
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, np.clip(idx, 0, in_len - 1).ravel()), w.ravel())
    return mat


def bicubic_resize(img: np.ndarray, out_w: int, out_h: int, antialias: bool = True) -> np.ndarray:
    """Separable cubic-convolution resize (a = -0.5) of a float image, clamped to [0, 1]."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    h, w = img.shape[:2]
    wh = resize_weights(h, out_h, antialias)
    ww = resize_weights(w, out_w, antialias)
    out = np.einsum("ih,hwc->iwc", wh, img)
    out = np.einsum("jw,iwc->ijc", ww, out)
    out = np.clip(out, 0.0, 1.0)
    return out[..., 0] if squeeze else out


# -- degradation ---------------------------------------------------------------

def gaussian_kernel(size: int = 7, sigma: float = 1.6) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, size: int = 7, sigma: float = 1.6) -> np.ndarray:
    """Blur a float ``(h, w, c)`` image with a normalized Gaussian, reflect-padded."""
    img = np.asarray(img, dtype=np.float64)
    k = gaussian_kernel(size, sigma)
    p = size // 2
    padded = np.pad(img, ((p, p), (p, p), (0, 0)), mode="reflect")
    h, w = img.shape[:2]
    out = np.zeros_like(img)
    for di in range(size):
        for dj in range(size):
            out += k[di, dj] * padded[di:di + h, dj:dj + w]
    return out


def mod_crop(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[:2]
    return img[: h - h % scale, : w - w % scale]


def degrade_float(hr: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Float-domain degradation of a float image whose sides are multiples of ``spec.scale``."""
    h, w = hr.shape[:2]
    s = spec.scale
    if h % s or w % s:
        raise ValueError(f"image {w}x{h} is not divisible by scale {s}; mod_crop it first")
    src = gaussian_blur(hr, spec.blur_size, spec.blur_sigma) if spec.kind == "BD" else hr
    return bicubic_resize(src, w // s, h // s, antialias=True)


def degrade(hr: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """BI or BD degradation of an 8-bit RGB image; returns the 8-bit LR image.

    The input is first cropped to the largest multiple of the scale.
    """
    hr = mod_crop(np.asarray(hr), spec.scale)
    return quantize(degrade_float(to_float(hr), spec))


def bicubic_upscale(lr: np.ndarray, scale: int) -> np.ndarray:
    """8-bit bicubic upscaling baseline."""
    h, w = lr.shape[:2]
    return quantize(bicubic_resize(to_float(lr), w * scale, h * scale, antialias=True))


# -- patches and augmentation --------------------------------------------------

def sample_patch_pair(hr: np.ndarray, lr: np.ndarray, lr_patch: int, scale: int, rng: np.random.Generator):
    """Uniformly placed aligned patches: LR ``lr_patch`` square, HR ``scale`` times larger."""
    lh, lw = lr.shape[:2]
    if lh < lr_patch or lw < lr_patch:
        raise ValueError(f"LR image {lw}x{lh} is smaller than the {lr_patch}x{lr_patch} patch; "
                         f"HR images must be at least {lr_patch * scale}x{lr_patch * scale}")
    if hr.shape[0] < lh * scale or hr.shape[1] < lw * scale:
        raise ValueError(f"HR image {hr.shape[1]}x{hr.shape[0]} does not cover LR {lw}x{lh} at x{scale}")
    y = int(rng.integers(0, lh - lr_patch + 1))
    x = int(rng.integers(0, lw - lr_patch + 1))
    hp = lr_patch * scale
    return (lr[y:y + lr_patch, x:x + lr_patch],
            hr[y * scale:y * scale + hp, x * scale:x * scale + hp])


def flip_h(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1]


def rot90(img: np.ndarray, k: int = 1) -> np.ndarray:
    """Rotate clockwise by ``k`` quarter turns: pixel (i, j) moves to (j, H - 1 - i)."""
    if k % 2 and img.shape[0] != img.shape[1]:
        raise ValueError(f"rotation needs a square patch, got {img.shape[1]}x{img.shape[0]}")
    return np.rot90(img, -k, axes=(0, 1))


def augment(lr_patch: np.ndarray, hr_patch: np.ndarray, rng: np.random.Generator):
    """Apply one random horizontal flip (p=0.5) and k*90 degree rotation to both patches."""
    flip = bool(rng.random() < 0.5)
    k = int(rng.integers(0, 4))
    out = []
    for p in (lr_patch, hr_patch):
        if flip:
            p = flip_h(p)
        out.append(np.ascontiguousarray(rot90(p, k)))
    return out[0], out[1]


# -- datasets ------------------------------------------------------------------

@dataclass
class SRDataset:
    """Aligned HR/LR image pairs held in memory."""

    hr: List[np.ndarray]
    lr: List[np.ndarray]
    names: List[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.hr) != len(self.lr):
            raise ValueError("hr and lr lists differ in length")
        if not self.names:
            self.names = [f"img{i:04d}" for i in range(len(self.hr))]

    def __len__(self):
        return len(self.hr)

    @classmethod
    def from_images(cls, hr_images: Sequence[np.ndarray], spec: DegradationSpec, names=None) -> "SRDataset":
        hr = [mod_crop(np.asarray(im), spec.scale) for im in hr_images]
        return cls(hr, [degrade(im, spec) for im in hr], list(names or []))

    @classmethod
    def from_dir(cls, hr_dir, spec: DegradationSpec) -> "SRDataset":
        """Load HR PNGs; LR comes from a sibling ``LR_{kind}_x{s}`` directory if present."""
        hr_dir = Path(hr_dir)
        if not hr_dir.is_dir():
            raise FileNotFoundError(f"data directory not found: {hr_dir}")
        paths = list_pngs(hr_dir)
        if not paths:
            raise FileNotFoundError(f"no PNG images in {hr_dir}")
        lr_dir = hr_dir.parent / f"LR_{spec.kind}_x{spec.scale}"
        hr, lr = [], []
        for path in paths:
            img = mod_crop(read_png(path), spec.scale)
            hr.append(img)
            lr_path = lr_dir / path.name
            lr.append(read_png(lr_path) if lr_path.exists() else degrade(img, spec))
        return cls(hr, lr, [p.name for p in paths])

    def sample_batch(self, batch_size: int, lr_patch: int, scale: int, rng: np.random.Generator,
                     augment_patches: bool = True, dtype=np.float32):
        """Draw a ``(lr, hr)`` float batch; image choice, placement and transform all come from ``rng``."""
        lrs, hrs = [], []
        for _ in range(batch_size):
            i = int(rng.integers(0, len(self)))
            lp, hp = sample_patch_pair(self.hr[i], self.lr[i], lr_patch, scale, rng)
            if augment_patches:
                lp, hp = augment(lp, hp, rng)
            lrs.append(lp)
            hrs.append(hp)
        return images_to_batch(lrs, dtype), images_to_batch(hrs, dtype)
