"""Image loading and preprocessing: border crop, max-dimension resize,
Otsu binarization, projection-profile rotation correction.

Grayscale images are 2-D uint8 numpy arrays (row-major). Binary images are
2-D bool arrays where True marks foreground ink (dark pixels).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from PIL import Image
from scipy import ndimage

DEFAULT_CROP_MARGIN = 42
DEFAULT_MAX_DIM = 2000

DESKEW_RANGE_DEG = 10.0
DESKEW_STEP_DEG = 0.1


class ImageError(ValueError):
    """Raised for unreadable or undecodable image files."""


def load_gray(path) -> np.ndarray:
    """Load an image as 8-bit grayscale (ITU-R 601 luminance for color input)."""
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                im = im.convert("L")
            return np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ImageError(f"cannot load image {path}: {exc}") from exc


def crop_border(img: np.ndarray, margin: int = DEFAULT_CROP_MARGIN) -> np.ndarray:
    """Remove ``margin`` pixels from every border; interior pixels unchanged."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if margin == 0:
        return img
    h, w = img.shape
    if w <= 2 * margin or h <= 2 * margin:
        raise ValueError(f"image {w}x{h} too small for border margin {margin}")
    return img[margin : h - margin, margin : w - margin]


def resize_max_dim(img: np.ndarray, target: int = DEFAULT_MAX_DIM) -> np.ndarray:
    """Downscale so the larger dimension becomes ``target``; never upscale.

    Area-averaging resampling; the minor dimension rounds to nearest, min 1.
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    h, w = img.shape
    longest = max(h, w)
    if longest <= target:
        return img
    scale = target / longest
    new_h = target if h == longest else max(1, round(h * scale))
    new_w = target if w == longest else max(1, round(w * scale))
    resized = Image.fromarray(img, mode="L").resize(
        (new_w, new_h), resample=Image.Resampling.BOX
    )
    return np.asarray(resized, dtype=np.uint8)


class OtsuResult(NamedTuple):
    threshold: int
    foreground: np.ndarray  # bool mask, True = ink
    degenerate: bool


def otsu_binarize(img: np.ndarray) -> OtsuResult:
    """Otsu threshold over the 256-bin histogram; pixels <= threshold are ink.

    The threshold maximizes between-class variance, ties broken toward the
    smallest value. A constant image is flagged degenerate with an empty
    foreground so downstream masked pooling cannot divide by zero silently.
    """
    hist = np.bincount(img.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    lo, hi = int(img.min()), int(img.max())
    if lo == hi:
        return OtsuResult(lo, np.zeros(img.shape, dtype=bool), True)

    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)  # class {<= t}
    sum0 = np.cumsum(levels * hist)
    w1 = total - w0
    mu_total = sum0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = sum0 / w0
        mu1 = (mu_total - sum0) / w1
    between = w0 * w1 * (mu0 - mu1) ** 2
    between[(w0 == 0) | (w1 == 0)] = 0.0
    threshold = int(np.argmax(between))  # argmax takes the first maximum
    return OtsuResult(threshold, img <= threshold, False)


def _profile_variance(ys: np.ndarray, xs: np.ndarray, angle_deg: float, nrows: int) -> float:
    """Variance of the row-sum profile of foreground points rotated by angle."""
    a = np.deg2rad(angle_deg)
    # Row coordinate after rotating the image content by angle_deg (CCW,
    # matching scipy.ndimage.rotate on array coordinates).
    y_rot = ys * np.cos(a) - xs * np.sin(a)
    rows = np.rint(y_rot).astype(np.int64)
    rows -= rows.min()
    profile = np.bincount(rows, minlength=nrows)
    return float(np.var(profile))


def deskew_projection(img: np.ndarray):
    """Find the rotation in +-10 deg (0.1 deg step) that maximizes the variance
    of the horizontal projection profile of the binarized image, and return
    (angle, rotated image). Blank or constant input comes back unchanged.
    """
    otsu = otsu_binarize(img)
    if otsu.degenerate or not otsu.foreground.any():
        return 0.0, img

    ys, xs = np.nonzero(otsu.foreground)
    # Subsample for speed; the profile variance criterion is robust to it.
    if ys.size > 200_000:
        step = ys.size // 200_000 + 1
        ys, xs = ys[::step], xs[::step]
    ys = ys - ys.mean()
    xs = xs - xs.mean()

    angles = np.arange(
        -DESKEW_RANGE_DEG, DESKEW_RANGE_DEG + DESKEW_STEP_DEG / 2, DESKEW_STEP_DEG
    )
    nrows = img.shape[0] + img.shape[1]
    best_angle = 0.0
    best_var = -1.0
    for angle in angles:
        v = _profile_variance(ys, xs, angle, nrows)
        if v > best_var:
            best_var = v
            best_angle = float(round(angle, 1))

    if best_angle == 0.0:
        return 0.0, img
    fill = float(np.median(img))
    rotated = ndimage.rotate(
        img.astype(np.float64), best_angle, reshape=False, order=1, mode="constant", cval=fill
    )
    return best_angle, np.clip(np.rint(rotated), 0, 255).astype(np.uint8)
