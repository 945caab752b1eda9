"""OCR of binarized text regions behind a pluggable engine interface.

Two engines ship: an external LSTM engine driven as a subprocess (block
segmentation for risk tables, sparse-text mode for axis labels), and a
self-contained template-glyph matcher tuned to the synthetic renderer's
font so the full pipeline runs offline and deterministically.
"""

from __future__ import annotations

import logging
import math
import shutil
import subprocess
import tempfile
from pathlib import Path
from typing import Literal, Protocol, Sequence

import cv2
import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy import ndimage

from .errors import OcrUnavailable
from .geometry import AxisGeometry, TickToken
from .metadata import OcrToken
from .prep import binarize
from .raster import RasterImage

log = logging.getLogger(__name__)

RegionKind = Literal["risk-table", "axis-labels"]
Rect = tuple[int, int, int, int]  # (x0, y0, x1, y1), exclusive right/bottom

GLYPH_W, GLYPH_H = 16, 22
TEMPLATE_CHARS = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"
# Letters that stand in for digits when a token is otherwise numeric.
NUMERIC_CONFUSABLES = str.maketrans({"O": "0", "Q": "0", "D": "0", "I": "1", "L": "1", "S": "5", "B": "8", "Z": "2", "G": "6"})


class OcrEngine(Protocol):
    def recognize(self, bits: np.ndarray, kind: RegionKind) -> list[tuple[str, float, Rect]]:
        """Tokens as (text, confidence, box) with boxes local to ``bits``."""
        ...


def _normalize_component(mask: np.ndarray) -> np.ndarray:
    """Resample a component mask onto the glyph grid as a float image."""
    return cv2.resize(mask.astype(np.float32), (GLYPH_W, GLYPH_H), interpolation=cv2.INTER_AREA)


def _build_templates() -> dict[str, tuple[np.ndarray, float]]:
    """Glyph templates passed through the same 2x enhancement as fixtures."""
    from .prep import enhance

    font = ImageFont.load_default()
    templates = {}
    for ch in TEMPLATE_CHARS:
        img = Image.new("RGB", (40, 40), (255, 255, 255))
        draw = ImageDraw.Draw(img)
        draw.text((12, 12), ch, fill=(0, 0, 0), font=font)
        out = enhance(RasterImage.from_pil(img), resize_target=80)
        arr = out.pixels.astype(np.float32).mean(axis=2) < 128
        ys, xs = np.nonzero(arr)
        mask = arr[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]
        aspect = mask.shape[1] / mask.shape[0]
        templates[ch] = (_normalize_component(mask), aspect)
    return templates


_TEMPLATE_CACHE: dict[str, tuple[np.ndarray, float]] | None = None


class TemplateGlyphEngine:
    """Connected-component matcher against glyphs of the bundled font.

    Templates are rendered with the renderer's font and run through the
    same enhancement the pipeline applies to fixtures, so components of
    enhanced plots match closely. Deterministic; intended for rendered
    fixtures and offline tests.
    """

    def __init__(self):
        global _TEMPLATE_CACHE
        if _TEMPLATE_CACHE is None:
            _TEMPLATE_CACHE = _build_templates()
        self._templates = _TEMPLATE_CACHE

    def _classify(self, mask: np.ndarray, line_height: float) -> tuple[str, float]:
        h, w = mask.shape
        if h < 0.45 * line_height and w < 0.45 * line_height:
            return ".", 1.0
        if h < 0.45 * line_height and w >= h:
            return "-", 1.0
        norm = _normalize_component(mask)
        aspect = w / h
        best_ch, best_score = "?", -1.0
        for ch, (tpl, tpl_aspect) in self._templates.items():
            agreement = 1.0 - float(np.mean(np.abs(norm - tpl)))
            penalty = 0.5 * min(1.0, abs(math.log(aspect / tpl_aspect)))
            score = agreement - penalty
            if score > best_score:
                best_ch, best_score = ch, score
        return best_ch, best_score

    @staticmethod
    def _postprocess(text: str) -> str:
        """Strip tick stubs and map letter confusables in numeric tokens."""
        while len(text) > 1 and text.endswith("-"):
            text = text[:-1]  # axis tick stub glued onto a label
        while text.count(".") > 1 and text.endswith("."):
            text = text[:-1]  # clipped tick stub read as a second period
        digits = sum(c.isdigit() or c == "." for c in text)
        if digits >= max(1, len(text) - digits):
            return text.translate(NUMERIC_CONFUSABLES)
        return text

    @staticmethod
    def _merge_stacked(comps: list) -> list:
        """Merge vertically split, adjacent pieces of one glyph (heavy u-overlap)."""
        merged: list = []
        for comp in sorted(comps, key=lambda c: (c[0], c[1])):
            x0, y0, x1, y1, mask = comp
            target = None
            for other in merged:
                ox0, oy0, ox1, oy1, _ = other
                overlap = min(x1, ox1) - max(x0, ox0)
                v_gap = max(y0, oy0) - min(y1, oy1)
                if overlap > 0 and overlap >= 0.5 * min(x1 - x0, ox1 - ox0) and v_gap <= 3:
                    target = other
                    break
            if target is None:
                merged.append(comp)
                continue
            ox0, oy0, ox1, oy1, omask = target
            nx0, ny0 = min(x0, ox0), min(y0, oy0)
            nx1, ny1 = max(x1, ox1), max(y1, oy1)
            canvas = np.zeros((ny1 - ny0, nx1 - nx0), dtype=bool)
            canvas[oy0 - ny0 : oy1 - ny0, ox0 - nx0 : ox1 - nx0] |= omask
            canvas[y0 - ny0 : y1 - ny0, x0 - nx0 : x1 - nx0] |= mask
            merged[merged.index(target)] = (nx0, ny0, nx1, ny1, canvas)
        return merged

    def recognize(self, bits: np.ndarray, kind: RegionKind) -> list[tuple[str, float, Rect]]:
        labeled, n = ndimage.label(bits, structure=np.ones((3, 3), dtype=int))
        if n == 0:
            return []
        slices = ndimage.find_objects(labeled)
        comps = []
        for idx, sl in enumerate(slices, start=1):
            mask = labeled[sl] == idx
            # single-pixel components are kept: a native-size period is 1 px
            y0, y1 = sl[0].start, sl[0].stop
            x0, x1 = sl[1].start, sl[1].stop
            comps.append((x0, y0, x1, y1, mask))
        if not comps:
            return []

        # Group components into text lines by vertical overlap.
        comps.sort(key=lambda c: (c[1], c[0]))
        lines: list[list] = []
        for comp in comps:
            placed = False
            cy = (comp[1] + comp[3]) / 2
            for line in lines:
                ly0 = min(c[1] for c in line)
                ly1 = max(c[3] for c in line)
                if ly0 <= cy <= ly1:
                    line.append(comp)
                    placed = True
                    break
            if not placed:
                lines.append([comp])

        tokens: list[tuple[str, float, Rect]] = []
        for line in lines:
            line = self._merge_stacked(line)
            line.sort(key=lambda c: c[0])
            heights = np.array([c[3] - c[1] for c in line], dtype=float)
            tall = heights[heights >= 0.6 * heights.max()]
            line_height = float(np.median(tall))
            gap_limit = max(3.0, 0.8 * line_height)
            groups: list[list] = [[line[0]]]
            for comp in line[1:]:
                if comp[0] - groups[-1][-1][2] > gap_limit:
                    groups.append([comp])
                else:
                    groups[-1].append(comp)
            for group in groups:
                chars, scores = [], []
                for x0, y0, x1, y1, mask in group:
                    ch, score = self._classify(mask, line_height)
                    chars.append(ch)
                    scores.append(score)
                box = (
                    min(c[0] for c in group),
                    min(c[1] for c in group),
                    max(c[2] for c in group),
                    max(c[3] for c in group),
                )
                tokens.append((self._postprocess("".join(chars)), float(np.mean(scores)), box))
        return tokens


class TesseractEngine:
    """External OCR binary: LSTM engine mode, per-kind page segmentation."""

    def __init__(self, binary: str = "tesseract"):
        self.binary = binary

    def recognize(self, bits: np.ndarray, kind: RegionKind) -> list[tuple[str, float, Rect]]:
        if shutil.which(self.binary) is None:
            raise OcrUnavailable(f"{self.binary!r} not found on PATH")
        psm = "6" if kind == "risk-table" else "11"
        img = Image.fromarray(np.where(bits, 0, 255).astype(np.uint8), mode="L")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "region.png"
            img.save(path)
            proc = subprocess.run(
                [self.binary, str(path), "stdout", "--oem", "3", "--psm", psm, "tsv"],
                capture_output=True,
                text=True,
                check=True,
            )
        tokens = []
        for line in proc.stdout.splitlines()[1:]:
            fields = line.split("\t")
            if len(fields) < 12 or fields[0] != "5" or not fields[11].strip():
                continue
            left, top, w, h = (int(fields[i]) for i in (6, 7, 8, 9))
            conf = max(0.0, float(fields[10])) / 100.0
            tokens.append((fields[11].strip(), conf, (left, top, left + w, top + h)))
        return tokens


def run_ocr(
    image: RasterImage,
    region: Rect,
    kind: RegionKind,
    engine: OcrEngine | None = None,
) -> list[OcrToken]:
    """OCR one region of the image; boxes come back in full-image coordinates."""
    x0, y0, x1, y1 = region
    if not (0 <= x0 < x1 <= image.width and 0 <= y0 < y1 <= image.height):
        raise ValueError(f"region {region} outside image bounds")
    engine = engine or TemplateGlyphEngine()
    crop = RasterImage(image.pixels[y0:y1, x0:x1])
    bits = binarize(crop, kind).bits
    raw = engine.recognize(bits, kind)
    if not raw:
        if bits.any():
            log.warning("OcrEmpty: engine produced no tokens for a non-empty %s region", kind)
        return []
    return [
        OcrToken(
            text=text,
            confidence=conf,
            box=(bx0 + x0, by0 + y0, bx1 + x0, by1 + y0),
            region_kind=kind,
        )
        for text, conf, (bx0, by0, bx1, by1) in raw
    ]


def tick_tokens_from_ocr(
    tokens: Sequence[OcrToken],
    geom: AxisGeometry,
    axis: Literal["x", "y"],
) -> list[TickToken]:
    """Assign numeric tokens to an axis: below the baseline for x, left of it for y.

    Only axis-label tokens participate; risk-table tokens sit below the
    baseline too but describe counts, not ticks. Tokens in the corner zone
    (left of the y-axis and below the x-axis) count as x labels only when
    they sit clearly under the baseline, so the y origin label stays with y.
    """
    out = []
    below_cut = geom.v_y1 + geom.margin_bottom + 2
    for tok in tokens:
        if tok.region_kind != "axis-labels":
            continue
        x0, y0, x1, y1 = tok.box
        cu, cv = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        is_x = cv > below_cut
        is_y = not is_x and cu < geom.u_x0
        if (axis == "x" and not is_x) or (axis == "y" and not is_y):
            continue
        try:
            value = float(tok.text)
        except ValueError:
            value = None
        out.append(
            TickToken(text=tok.text, numeric_value=value, center=(cu, cv), box=tok.box)
        )
    return out
