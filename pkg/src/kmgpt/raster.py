"""RGB raster images and PNG/JPEG round-tripping.

Images are numpy ``uint8`` arrays of shape (height, width, 3) in RGB
channel order, wrapped in a thin dataclass that enforces the shape
invariants once at construction.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class RasterImage:
    """An 8-bit RGB image; ``pixels`` is (height, width, 3) row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) RGB array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", np.ascontiguousarray(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_pil(self) -> Image.Image:
        return Image.fromarray(self.pixels, mode="RGB")

    @classmethod
    def from_pil(cls, img: Image.Image) -> "RasterImage":
        return cls(np.asarray(img.convert("RGB"), dtype=np.uint8))

    @classmethod
    def blank(cls, width: int, height: int, color=(255, 255, 255)) -> "RasterImage":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:, :] = np.asarray(color, dtype=np.uint8)
        return cls(px)


def load_image(path: str | Path) -> RasterImage:
    """Load a PNG or JPEG file."""
    with Image.open(path) as img:
        return RasterImage.from_pil(img)


def decode_image(data: bytes) -> RasterImage:
    """Decode PNG/JPEG bytes (e.g. an HTTP upload body)."""
    with Image.open(io.BytesIO(data)) as img:
        return RasterImage.from_pil(img)


def save_png(image: RasterImage, path: str | Path) -> None:
    """Write a PNG; output bytes are deterministic for identical pixels."""
    image.to_pil().save(path, format="PNG")


def encode_png(image: RasterImage) -> bytes:
    buf = io.BytesIO()
    image.to_pil().save(buf, format="PNG")
    return buf.getvalue()


def luminance(image: RasterImage) -> np.ndarray:
    """HSL lightness channel in [0, 1]: (max + min) / 2 over RGB."""
    px = image.pixels.astype(np.float64) / 255.0
    return (px.max(axis=2) + px.min(axis=2)) / 2.0


def rgb_to_hsl(pixels: np.ndarray) -> np.ndarray:
    """Vectorized RGB (uint8, (..., 3)) -> HSL with h in [0, 1), s and l in [0, 1]."""
    rgb = np.asarray(pixels, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    cmax = rgb.max(axis=-1)
    cmin = rgb.min(axis=-1)
    delta = cmax - cmin

    light = (cmax + cmin) / 2.0
    sat = np.zeros_like(light)
    chromatic = delta > 0
    denom = 1.0 - np.abs(2.0 * light - 1.0)
    np.divide(delta, denom, out=sat, where=chromatic & (denom > 0))

    hue = np.zeros_like(light)
    with np.errstate(invalid="ignore", divide="ignore"):
        r_max = chromatic & (cmax == r)
        g_max = chromatic & (cmax == g) & ~r_max
        b_max = chromatic & ~r_max & ~g_max
        hue = np.where(r_max, ((g - b) / np.where(delta == 0, 1, delta)) % 6.0, hue)
        hue = np.where(g_max, (b - r) / np.where(delta == 0, 1, delta) + 2.0, hue)
        hue = np.where(b_max, (r - g) / np.where(delta == 0, 1, delta) + 4.0, hue)
    hue = hue / 6.0
    return np.stack([hue, np.clip(sat, 0, 1), np.clip(light, 0, 1)], axis=-1)
