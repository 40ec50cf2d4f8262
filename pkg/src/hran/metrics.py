"""PSNR and SSIM on the luma channel, with border shaving."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import rgb_to_ycbcr_y

DATA_RANGE = 255.0
K1, K2 = 0.01, 0.03
WINDOW, SIGMA = 11, 1.5


@dataclass(frozen=True)
class EvalProtocol:
    shave: int = 0
    data_range: float = DATA_RANGE

    @classmethod
    def for_scale(cls, scale: int) -> "EvalProtocol":
        return cls(shave=scale)


def _luma_pair(sr, hr, protocol: EvalProtocol):
    sr, hr = np.asarray(sr), np.asarray(hr)
    if sr.shape != hr.shape:
        raise ValueError(f"image size mismatch: {sr.shape} vs {hr.shape}")
    ys = sr if sr.ndim == 2 else rgb_to_ycbcr_y(sr)
    yh = hr if hr.ndim == 2 else rgb_to_ycbcr_y(hr)
    s = protocol.shave
    h, w = ys.shape
    if s < 0 or 2 * s >= min(h, w):
        raise ValueError(f"shave {s} leaves nothing of a {w}x{h} image")
    if s:
        ys, yh = ys[s:h - s, s:w - s], yh[s:h - s, s:w - s]
    return np.asarray(ys, dtype=np.float64), np.asarray(yh, dtype=np.float64)


def psnr_y(sr, hr, protocol: Optional[EvalProtocol] = None) -> float:
    """PSNR in dB on float Y; identical images give ``math.inf``.

    2-d inputs are taken to be Y already.
    """
    ys, yh = _luma_pair(sr, hr, protocol or EvalProtocol())
    mse = float(np.mean((ys - yh) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10((protocol or EvalProtocol()).data_range ** 2 / mse)


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img, win):
    k = win.shape[0]
    return np.einsum("ijab,ab->ij", sliding_window_view(img, (k, k)), win)


def ssim_y(sr, hr, protocol: Optional[EvalProtocol] = None) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows of the shaved Y channel."""
    protocol = protocol or EvalProtocol()
    x, y = _luma_pair(sr, hr, protocol)
    if min(x.shape) < WINDOW:
        raise ValueError(f"image {x.shape[1]}x{x.shape[0]} after shaving is smaller than the {WINDOW}x{WINDOW} window")
    win = gaussian_window()
    c1 = (K1 * protocol.data_range) ** 2
    c2 = (K2 * protocol.data_range) ** 2
    mx, my = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))
