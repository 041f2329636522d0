"""Image quality metrics on float images in [0, 1]."""

from __future__ import annotations

import numpy as np

from .tensor import ContractError

PSNR_CAP = 99.0  # reported for identical images instead of +inf


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) in dB, capped at PSNR_CAP for identical inputs."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP
    return min(float(10.0 * np.log10(1.0 / mse)), PSNR_CAP)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r ** 2) / (2 * sigma ** 2))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def _filter2(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode 2D correlation of a single-channel image."""
    from numpy.lib.stride_tricks import sliding_window_view

    kh, kw = kernel.shape
    win = sliding_window_view(img, (kh, kw))
    return np.einsum("hwij,ij->hw", win, kernel, optimize=True)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM with an 11x11 Gaussian window, averaged over channels."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ContractError(f"image smaller than the {window}x{window} ssim window")
    kern = _gaussian_kernel(window, sigma)
    c1, c2 = k1 ** 2, k2 ** 2

    vals = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mx, my = _filter2(x, kern), _filter2(y, kern)
        mx2, my2, mxy = mx * mx, my * my, mx * my
        sx = _filter2(x * x, kern) - mx2
        sy = _filter2(y * y, kern) - my2
        sxy = _filter2(x * y, kern) - mxy
        num = (2 * mxy + c1) * (2 * sxy + c2)
        den = (mx2 + my2 + c1) * (sx + sy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def mean_adjacent_frame_diff(frames: np.ndarray) -> float:
    """Mean absolute pixel change between consecutive frames; (T, ...) input."""
    if len(frames) < 2:
        return 0.0
    return float(np.mean(np.abs(np.diff(np.asarray(frames, dtype=np.float64), axis=0))))
