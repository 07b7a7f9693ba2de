"""
Synthetic images and masks shared by the tests
"""
import numpy as np

from imaging.containers import LabelMask


def smooth_image(height: int = 32, width: int = 32, seed: int = 0) -> np.ndarray:
    """Sum of a few Gaussian blobs plus a ramp, values roughly in [0, 2]"""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    image = 0.3 * xs / width + 0.2 * ys / height
    for _ in range(4):
        cx, cy = rng.uniform(0.2 * width, 0.8 * width), rng.uniform(0.2 * height, 0.8 * height)
        sigma = rng.uniform(3.0, 6.0)
        image += rng.uniform(0.5, 1.0) * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma ** 2))
    return image


def disk_mask(height: int, width: int, cx: float, cy: float, radius: float) -> LabelMask:
    ys, xs = np.mgrid[0:height, 0:width]
    return LabelMask(labels=((xs - cx) ** 2 + (ys - cy) ** 2 <= radius ** 2).astype(np.uint8))
