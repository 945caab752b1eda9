"""Image normalization: user edits, enhancement, and OCR binarization.

The enhancement pipeline is upscale (pluggable, default Lanczos-3 at 2x)
-> resize to a fixed long edge -> Laplacian sharpen -> non-local-means
denoise. All steps are deterministic, so identical input bytes yield
identical output bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Literal, Protocol, Sequence

import cv2
import numpy as np
from PIL import Image

from .errors import DegenerateImage, EditOutOfBounds
from .raster import RasterImage, luminance

RESIZE_LONG_EDGE = 1600
SHARPEN_KERNEL = np.array([[0, -1, 0], [-1, 5, -1], [0, -1, 0]], dtype=np.float64)
DENOISE_STRENGTH = 10
DENOISE_PATCH = 7
DENOISE_SEARCH = 21
ADAPTIVE_WINDOW = 31
ADAPTIVE_OFFSET = 10
GLOBAL_THRESHOLD = 128


# --- edits ------------------------------------------------------------------


@dataclass(frozen=True)
class CropMask:
    """Axis-aligned crop rectangle in source-image pixel coordinates."""

    x0: int
    y0: int
    x1: int
    y1: int


@dataclass(frozen=True)
class EraseMask:
    """Stroke polyline with a circular brush, in source-image coordinates."""

    points: tuple[tuple[float, float], ...]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("stroke radius must be positive")
        if len(self.points) == 0:
            raise ValueError("stroke needs at least one point")


RegionMask = CropMask | EraseMask


def parse_edits(payload: str | bytes | dict) -> list[RegionMask]:
    """Parse the edits JSON: {"edits": [{"kind": "crop"|"erase", ...}, ...]}."""
    doc = json.loads(payload) if not isinstance(payload, dict) else payload
    masks: list[RegionMask] = []
    for i, item in enumerate(doc.get("edits", [])):
        kind = item.get("kind")
        if kind == "crop":
            masks.append(
                CropMask(int(item["x0"]), int(item["y0"]), int(item["x1"]), int(item["y1"]))
            )
        elif kind == "erase":
            masks.append(
                EraseMask(
                    points=tuple((float(p[0]), float(p[1])) for p in item["points"]),
                    radius=float(item["radius"]),
                )
            )
        else:
            raise ValueError(f"edit #{i}: unknown kind {kind!r}")
    return masks


def edits_to_json(masks: Sequence[RegionMask]) -> str:
    items = []
    for m in masks:
        if isinstance(m, CropMask):
            items.append({"kind": "crop", "x0": m.x0, "y0": m.y0, "x1": m.x1, "y1": m.y1})
        else:
            items.append(
                {"kind": "erase", "points": [[p[0], p[1]] for p in m.points], "radius": m.radius}
            )
    return json.dumps({"edits": items}, indent=2)


def _border_background(pixels: np.ndarray) -> np.ndarray:
    """Per-channel median of the 1-px border ring."""
    top = pixels[0, :, :]
    bottom = pixels[-1, :, :]
    left = pixels[1:-1, 0, :] if pixels.shape[0] > 2 else pixels[:0, 0, :]
    right = pixels[1:-1, -1, :] if pixels.shape[0] > 2 else pixels[:0, -1, :]
    ring = np.concatenate([top, bottom, left, right], axis=0)
    return np.median(ring, axis=0).astype(np.uint8)


def _stroke_footprint(shape: tuple[int, int], mask: EraseMask, offset: tuple[int, int]) -> np.ndarray:
    """Boolean footprint of the dilated stroke in the current (cropped) frame."""
    h, w = shape
    ox, oy = offset
    canvas = np.zeros((h, w), dtype=np.uint8)
    pts = [(p[0] - ox, p[1] - oy) for p in mask.points]
    thickness = max(1, int(round(2 * mask.radius)))
    if len(pts) == 1:
        cv2.circle(canvas, (int(round(pts[0][0])), int(round(pts[0][1]))), int(round(mask.radius)), 1, -1)
    else:
        arr = np.array([[int(round(x)), int(round(y))] for x, y in pts], dtype=np.int32)
        cv2.polylines(canvas, [arr], isClosed=False, color=1, thickness=thickness)
    return canvas.astype(bool)


def apply_edits(image: RasterImage, masks: Sequence[RegionMask]) -> RasterImage:
    """Apply crops and erase strokes in order.

    All mask geometry is in the coordinate frame of ``image`` as passed in;
    crops translate the frame for subsequent masks. Erased pixels take the
    estimated background color (median of the current border ring).
    """
    pixels = image.pixels.copy()
    ox, oy = 0, 0  # current crop window origin in source coordinates
    for i, mask in enumerate(masks):
        h, w = pixels.shape[:2]
        if isinstance(mask, CropMask):
            x0, y0, x1, y1 = mask.x0 - ox, mask.y0 - oy, mask.x1 - ox, mask.y1 - oy
            if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
                raise EditOutOfBounds(i, f"crop ({mask.x0},{mask.y0})-({mask.x1},{mask.y1}) outside current window")
            pixels = pixels[y0:y1, x0:x1].copy()
            ox += x0
            oy += y0
        else:
            for px, py in mask.points:
                if not (ox <= px < ox + w and oy <= py < oy + h):
                    raise EditOutOfBounds(i, f"stroke point ({px},{py}) outside current window")
            footprint = _stroke_footprint((h, w), mask, (ox, oy))
            pixels[footprint] = _border_background(pixels)
    return RasterImage(pixels)


# --- enhancement ------------------------------------------------------------


class Upscaler(Protocol):
    """2x super-resolution backend; must be deterministic."""

    def upscale(self, image: RasterImage) -> RasterImage: ...


class LanczosUpscaler:
    """Default deterministic Lanczos-3 2x upscaler."""

    factor = 2

    def upscale(self, image: RasterImage) -> RasterImage:
        out = image.to_pil().resize(
            (image.width * self.factor, image.height * self.factor), Image.LANCZOS
        )
        return RasterImage.from_pil(out)


def _resize_long_edge(image: RasterImage, target: int) -> RasterImage:
    long_edge = max(image.width, image.height)
    if long_edge == target:
        return image
    scale = target / long_edge
    new_w = max(1, int(round(image.width * scale)))
    new_h = max(1, int(round(image.height * scale)))
    return RasterImage.from_pil(image.to_pil().resize((new_w, new_h), Image.LANCZOS))


def _sharpen(image: RasterImage) -> RasterImage:
    out = cv2.filter2D(image.pixels, -1, SHARPEN_KERNEL, borderType=cv2.BORDER_REPLICATE)
    return RasterImage(out)


def _denoise(image: RasterImage) -> RasterImage:
    out = cv2.fastNlMeansDenoisingColored(
        image.pixels,
        None,
        DENOISE_STRENGTH,
        DENOISE_STRENGTH,
        DENOISE_PATCH,
        DENOISE_SEARCH,
    )
    return RasterImage(out)


def enhance(
    image: RasterImage,
    upscaler: Upscaler | None = None,
    resize_target: int = RESIZE_LONG_EDGE,
) -> RasterImage:
    """Upscale 2x, resize to the target long edge, sharpen, denoise."""
    if min(image.width, image.height) <= 4:
        raise DegenerateImage(f"{image.width}x{image.height} is too small to enhance")
    upscaler = upscaler or LanczosUpscaler()
    out = upscaler.upscale(image)
    out = _resize_long_edge(out, resize_target)
    out = _sharpen(out)
    out = _denoise(out)
    return out


# --- binarization -----------------------------------------------------------


@dataclass(frozen=True)
class BinarizedImage:
    """One bit per pixel; True = foreground (ink)."""

    bits: np.ndarray
    mode: Literal["adaptive-gaussian", "global-fixed"]

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


def binarize(image: RasterImage, region_kind: Literal["risk-table", "axis-labels"]) -> BinarizedImage:
    """Binarize a cropped text region for OCR.

    Risk tables get an adaptive Gaussian-weighted local threshold (window
    31, offset 10); axis labels get a fixed global threshold at 128 on the
    lightness channel.
    """
    if region_kind == "risk-table":
        gray = cv2.cvtColor(image.pixels, cv2.COLOR_RGB2GRAY)
        fg = cv2.adaptiveThreshold(
            gray,
            255,
            cv2.ADAPTIVE_THRESH_GAUSSIAN_C,
            cv2.THRESH_BINARY_INV,
            ADAPTIVE_WINDOW,
            ADAPTIVE_OFFSET,
        )
        return BinarizedImage(bits=fg > 0, mode="adaptive-gaussian")
    if region_kind == "axis-labels":
        light = luminance(image) * 255.0
        return BinarizedImage(bits=light < GLOBAL_THRESHOLD, mode="global-fixed")
    raise ValueError(f"unknown region kind {region_kind!r}")
