"""Image pyramid, bilinear warping, and derivative stencils for the flow solver."""

import numpy as np
from scipy.ndimage import correlate1d, gaussian_filter

from ..errors import ConfigError, ShapeError

# 4th-order central difference, offsets -2..+2.
_DERIV_STENCIL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0

MIN_LEVEL_DIM = 8


def deriv_x(img: np.ndarray) -> np.ndarray:
    return correlate1d(img, _DERIV_STENCIL, axis=1, mode="nearest")


def deriv_y(img: np.ndarray) -> np.ndarray:
    return correlate1d(img, _DERIV_STENCIL, axis=0, mode="nearest")


def resize_bilinear(img: np.ndarray, out_shape) -> np.ndarray:
    """Pixel-center-aligned bilinear resampling of a 2-D array."""
    h, w = img.shape
    h2, w2 = out_shape
    if h2 < 1 or w2 < 1:
        raise ShapeError(f"target dims must be positive, got {h2}x{w2}")
    ys = np.clip((np.arange(h2) + 0.5) * (h / h2) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(w2) + 0.5) * (w / w2) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def pyramid_level_count(shape, scale: float, requested=None) -> int:
    """Number of levels so the coarsest keeps min(H, W) >= 8.

    `requested` overrides the automatic choice; it is validated against the
    same floor so a too-deep explicit pyramid fails loudly.
    """
    min_dim = min(shape)
    auto = 1
    while round(min_dim * scale ** auto) >= MIN_LEVEL_DIM:
        auto += 1
    if requested is None:
        return auto
    if requested < 1:
        raise ConfigError(f"pyramid needs at least one level, got {requested}")
    if requested > 1 and round(min_dim * scale ** (requested - 1)) < MIN_LEVEL_DIM:
        raise ConfigError(
            f"{requested} levels at scale={scale} would shrink a {min_dim}px "
            f"side below {MIN_LEVEL_DIM}px")
    return requested


def build_pyramid(image: np.ndarray, scale: float, levels: int) -> list[np.ndarray]:
    """Coarsest-first list of `levels` images; level l has dims ~ scale**l.

    Each level is produced by Gaussian smoothing of the previous (finer) level
    followed by bilinear downsampling. Target dims come from the original
    shape so rounding does not compound. levels=1 returns the original image.
    """
    # Inclusive lower bound: halving pyramids (scale 0.5) are the common case.
    if not 0.5 <= scale < 0.95:
        raise ConfigError(f"scale must lie in [0.5, 0.95), got {scale}")
    if levels < 1:
        raise ConfigError(f"levels must be >= 1, got {levels}")
    h, w = image.shape
    out = [image]
    sigma = 0.5 * np.sqrt(1.0 / scale ** 2 - 1.0)
    for lvl in range(1, levels):
        target = (max(int(round(h * scale ** lvl)), 1),
                  max(int(round(w * scale ** lvl)), 1))
        smoothed = gaussian_filter(out[-1], sigma, mode="nearest")
        out.append(resize_bilinear(smoothed, target))
    out.reverse()
    return out


def warp_bilinear(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample image at (i + v, j + u) with bilinear interpolation.

    Sample positions outside the image clamp to the border (edge replication).
    """
    if image.shape != u.shape or u.shape != v.shape:
        raise ShapeError(f"image {image.shape}, u {u.shape} and v {v.shape} "
                         "must share dims")
    h, w = image.shape
    ii, jj = np.mgrid[0:h, 0:w]
    ys = np.clip(ii + v, 0, h - 1)
    xs = np.clip(jj + u, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    return ((1 - fy) * (1 - fx) * image[y0, x0]
            + (1 - fy) * fx * image[y0, x1]
            + fy * (1 - fx) * image[y1, x0]
            + fy * fx * image[y1, x1])
