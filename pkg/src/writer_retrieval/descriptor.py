"""Multi-radius LBP texture embedding.

Per radius, every interior pixel gets an 8-bit code from comparing 8
circularly sampled neighbors against the center; codes are globally pooled
into a 256-bin L1-normalized histogram, and per-radius histograms are
concatenated (3072 dimensions at the default radii 1..12).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

DESC_MAGIC = b"WRDESC1"

_TIE_EPS = 1e-6  # absorbs bilinear rounding so exact ties threshold as >=


@dataclass(frozen=True)
class LbpConfig:
    radii: tuple = tuple(range(1, 13))
    neighbors: int = 8
    bins: int = 256
    use_mask: bool = False
    mask_dilation: int = 3
    interpolation: str = "bilinear"  # or "nearest", for ablation

    def __post_init__(self):
        if self.bins != 2 ** self.neighbors:
            raise ValueError("bins must equal 2**neighbors")
        radii = tuple(self.radii)
        if not radii or any(r < 1 for r in radii):
            raise ValueError("radii must all be >= 1")
        if list(radii) != sorted(set(radii)):
            raise ValueError("radii must be strictly increasing")
        if self.interpolation not in ("bilinear", "nearest"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        object.__setattr__(self, "radii", radii)

    @property
    def dim(self) -> int:
        return len(self.radii) * self.bins


@dataclass
class TextureDescriptor:
    values: np.ndarray
    image_id: str = ""
    empty_slices: tuple = field(default=())


def lbp_code_map(img: np.ndarray, radius: int, interpolation: str = "bilinear") -> np.ndarray:
    """Per-pixel LBP codes for the valid interior region (margin = radius).

    Neighbor k sits at angle k*45 deg counterclockwise from the +x axis on the
    circle of the given radius; bit k is set iff neighbor >= center.
    Returns a uint8 array of shape (h - 2r, w - 2r).
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    h, w = img.shape
    if h <= 2 * radius or w <= 2 * radius:
        raise ValueError(f"image {w}x{h} too small for LBP radius {radius}")

    data = img.astype(np.float64)
    center = data[radius : h - radius, radius : w - radius]
    codes = np.zeros(center.shape, dtype=np.uint8)
    for k in range(8):
        angle = k * np.pi / 4.0
        dx = radius * np.cos(angle)
        dy = -radius * np.sin(angle)  # counterclockwise with row axis pointing down
        # Snap float dust (cos(pi/2) != 0 exactly) so axis-aligned neighbors
        # use exact integer offsets.
        if abs(dx - round(dx)) < 1e-9:
            dx = float(round(dx))
        if abs(dy - round(dy)) < 1e-9:
            dy = float(round(dy))
        if interpolation == "nearest":
            iy, ix = int(np.rint(dy)), int(np.rint(dx))
            neighbor = data[radius + iy : h - radius + iy, radius + ix : w - radius + ix]
        else:
            y0, x0 = int(np.floor(dy)), int(np.floor(dx))
            fy, fx = dy - y0, dx - x0
            if fy == 0.0 and fx == 0.0:
                neighbor = data[radius + y0 : h - radius + y0, radius + x0 : w - radius + x0]
            else:
                def shifted(oy, ox):
                    return data[radius + oy : h - radius + oy, radius + ox : w - radius + ox]

                neighbor = (
                    (1 - fy) * (1 - fx) * shifted(y0, x0)
                    + (1 - fy) * fx * shifted(y0, x0 + 1)
                    + fy * (1 - fx) * shifted(y0 + 1, x0)
                    + fy * fx * shifted(y0 + 1, x0 + 1)
                )
        codes |= (neighbor >= center - _TIE_EPS).astype(np.uint8) << k
    return codes


def pool_histogram(codes: np.ndarray, mask: np.ndarray | None = None):
    """Pool a code map into an L1-normalized 256-bin histogram.

    ``mask`` (bool, same shape as the code map) restricts pooling support.
    Returns (histogram, empty): a zero vector with empty=True when the
    support is empty.
    """
    if mask is not None:
        if mask.shape != codes.shape:
            raise ValueError(f"mask shape {mask.shape} != code map shape {codes.shape}")
        codes = codes[mask]
    hist = np.bincount(codes.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    if total == 0:
        return np.zeros(256), True
    return hist / total, False


def extract_descriptor(
    img: np.ndarray,
    cfg: LbpConfig = LbpConfig(),
    mask: np.ndarray | None = None,
    image_id: str = "",
) -> TextureDescriptor:
    """Concatenated per-radius pooled histograms, ascending radius order.

    With ``cfg.use_mask``, pooling is restricted to the dilated foreground
    mask; ``mask`` must then be a full-image bool array (True = ink).
    """
    pool_mask = None
    if cfg.use_mask:
        if mask is None:
            raise ValueError("use_mask requires a foreground mask")
        pool_mask = ndimage.binary_dilation(mask, iterations=cfg.mask_dilation)

    slices = []
    empty_flags = []
    h, w = img.shape
    for r in cfg.radii:
        codes = lbp_code_map(img, r, interpolation=cfg.interpolation)
        sub_mask = pool_mask[r : h - r, r : w - r] if pool_mask is not None else None
        hist, empty = pool_histogram(codes, sub_mask)
        slices.append(hist)
        empty_flags.append(empty)
    return TextureDescriptor(np.concatenate(slices), image_id, tuple(empty_flags))


# ---------------------------------------------------------------------------
# Descriptor store: magic, dim, count, row-major float64; sidecar id index
# ---------------------------------------------------------------------------


class DescriptorStoreError(ValueError):
    pass


def _index_path(path) -> Path:
    return Path(str(path) + ".ids")


def save_descriptors(path, image_ids, values: np.ndarray) -> None:
    """Write descriptors in manifest order plus a sidecar text index of ids."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != len(image_ids):
        raise ValueError("values must be (len(image_ids), dim)")
    with open(path, "wb") as fh:
        fh.write(DESC_MAGIC)
        fh.write(struct.pack("<II", values.shape[1], values.shape[0]))
        fh.write(values.astype("<f8").tobytes())
    _index_path(path).write_text("".join(i + "\n" for i in image_ids), encoding="utf-8")


def load_descriptors(path):
    """Read a descriptor store; returns (image_ids, values)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(DESC_MAGIC))
        if magic != DESC_MAGIC:
            raise DescriptorStoreError(f"{path}: bad magic {magic!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise DescriptorStoreError(f"{path}: truncated header")
        dim, count = struct.unpack("<II", header)
        payload = fh.read()
    expected = dim * count * 8
    if len(payload) != expected:
        raise DescriptorStoreError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(count, dim).copy()
    ids = _index_path(path).read_text(encoding="utf-8").splitlines()
    if len(ids) != count:
        raise DescriptorStoreError(f"{path}: id index has {len(ids)} ids, store has {count}")
    return ids, values
