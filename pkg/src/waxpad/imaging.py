"""Image decode/crop/resize and RGB→YCbCr conversion for the feature extractors.

Pixels are kept as float64 in [0, 255] without clamping so downstream sign
computations stay exact; clamping and rounding happen only when exporting.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImagingError(Exception):
    pass


@dataclass(frozen=True)
class CropBox:
    x: int
    y: int
    width: int
    height: int


@dataclass
class RasterImage:
    """Row-major float samples, shape (height, width, channels), channels 1 or 3."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ImagingError(f"expected (h, w, 1|3) samples, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImagingError("image dimensions must be at least 1x1")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self, index: int = 0) -> np.ndarray:
        """One channel as a 2-d float array."""
        return self.data[:, :, index]


@dataclass
class ColorPlaneSet:
    """Y/Cb/Cr planes of equal size, each a single-channel image."""

    y: RasterImage
    cb: RasterImage
    cr: RasterImage

    def __post_init__(self):
        dims = {(p.height, p.width) for p in (self.y, self.cb, self.cr)}
        if len(dims) != 1:
            raise ImagingError("Y/Cb/Cr planes must share dimensions")

    @property
    def planes(self) -> tuple[RasterImage, RasterImage, RasterImage]:
        return (self.y, self.cb, self.cr)


def decode(path: str | Path) -> RasterImage:
    """Decode a PNG or JPEG into a 3-channel image; grayscale is replicated."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImagingError(f"cannot decode image {path}: {exc}") from exc
    return RasterImage(arr)


def encode_png(image: RasterImage, path: str | Path) -> None:
    """Export for debugging: clamp to [0, 255], round, write 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.rint(image.data), 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    pil.save(path, format="PNG")


def crop(image: RasterImage, box: CropBox) -> RasterImage:
    if box.width < 1 or box.height < 1:
        raise ImagingError(f"crop box must be at least 1x1, got {box.width}x{box.height}")
    if box.x < 0 or box.y < 0 or box.x + box.width > image.width or box.y + box.height > image.height:
        raise ImagingError(
            f"crop box ({box.x},{box.y},{box.width},{box.height}) exceeds "
            f"image bounds {image.width}x{image.height}"
        )
    return RasterImage(image.data[box.y : box.y + box.height, box.x : box.x + box.width].copy())


def _source_coords(n_out: int, n_in: int) -> np.ndarray:
    # Corner-aligned sampling: output corners map onto input corners, so
    # same-size resize is the identity. A singleton output samples the center.
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)


def resize_bilinear(image: RasterImage, width: int, height: int) -> RasterImage:
    if width < 1 or height < 1:
        raise ImagingError("target dimensions must be at least 1x1")
    src = image.data
    xs = _source_coords(width, image.width)
    ys = _source_coords(height, image.height)
    x0 = np.clip(np.floor(xs).astype(int), 0, image.width - 1)
    y0 = np.clip(np.floor(ys).astype(int), 0, image.height - 1)
    x1 = np.minimum(x0 + 1, image.width - 1)
    y1 = np.minimum(y0 + 1, image.height - 1)
    fx = (xs - x0)[np.newaxis, :, np.newaxis]
    fy = (ys - y0)[:, np.newaxis, np.newaxis]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return RasterImage(top * (1 - fy) + bottom * fy)


# BT.601 full-range RGB -> YCbCr (the JPEG convention).
_YCBCR_MATRIX = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCBCR_OFFSET = np.array([0.0, 128.0, 128.0])


def rgb_to_ycbcr(image: RasterImage) -> ColorPlaneSet:
    """BT.601 full-range transform; planes stay floating point and unclamped."""
    if image.channels != 3:
        raise ImagingError("rgb_to_ycbcr requires a 3-channel image")
    ycc = image.data @ _YCBCR_MATRIX.T + _YCBCR_OFFSET
    return ColorPlaneSet(
        y=RasterImage(ycc[:, :, 0]),
        cb=RasterImage(ycc[:, :, 1]),
        cr=RasterImage(ycc[:, :, 2]),
    )


def ycbcr_to_rgb(planes: ColorPlaneSet) -> RasterImage:
    """Exact inverse of rgb_to_ycbcr (numerical inverse of the forward matrix)."""
    ycc = np.stack([p.plane() for p in planes.planes], axis=-1) - _YCBCR_OFFSET
    inv = np.linalg.inv(_YCBCR_MATRIX)
    return RasterImage(ycc @ inv.T)
