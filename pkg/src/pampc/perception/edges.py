"""Canny edge detection on [0, 1] intensity images."""

from __future__ import annotations

import cv2
import numpy as np

# gradients are quantized to int16 with this scale before hysteresis
_GRAD_SCALE = 1000.0


def canny(image, low: float, high: float, sigma: float = 1.4) -> np.ndarray:
    """Binary edge map (uint8, 0/1) of an intensity image in [0, 1].

    Smoothing is a 5x5 Gaussian; ``low``/``high`` are hysteresis thresholds
    on the L2 magnitude of the 3x3 Sobel gradient of the smoothed image, so a
    unit intensity step has magnitude 4.
    """
    if not 0 <= low < high:
        raise ValueError("thresholds must satisfy 0 <= low < high")
    I = np.asarray(getattr(image, "intensity", image), dtype=np.float32)
    blurred = cv2.GaussianBlur(I, (5, 5), sigma, borderType=cv2.BORDER_REPLICATE)
    gx = cv2.Sobel(blurred, cv2.CV_32F, 1, 0, ksize=3, borderType=cv2.BORDER_REPLICATE)
    gy = cv2.Sobel(blurred, cv2.CV_32F, 0, 1, ksize=3, borderType=cv2.BORDER_REPLICATE)
    dx = np.clip(np.rint(gx * _GRAD_SCALE), -32767, 32767).astype(np.int16)
    dy = np.clip(np.rint(gy * _GRAD_SCALE), -32767, 32767).astype(np.int16)
    edges = cv2.Canny(dx, dy, low * _GRAD_SCALE, high * _GRAD_SCALE, L2gradient=True)
    return (edges > 0).astype(np.uint8)
