"""Plot metadata extraction: provider interface, validation gate, schema.

A ``MetadataProvider`` answers two questions about an uploaded plot: is it
complete enough to process (validation), and what are its parameters
(extraction). Three implementations ship: a live multi-modal completion
endpoint, a scripted stub for fault-injection tests, and a sidecar-file
reader that makes the whole pipeline runnable offline and deterministic.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import jsonschema

from .errors import MetadataConflict, MetadataSchemaError, ProviderError
from .geometry import AxisRange
from .raster import RasterImage, encode_png

log = logging.getLogger(__name__)

RETRY_DELAYS = (1.0, 4.0, 16.0)
VALIDATION_COMPONENTS = ("axis-labels", "ticks", "curves", "legend", "risk-table")

METADATA_SCHEMA = {
    "type": "object",
    "required": [
        "x_start", "x_end", "x_increment",
        "y_start", "y_end", "y_increment",
        "num_curves", "groups", "risk_table", "time_unit",
    ],
    "properties": {
        "x_start": {"type": "number"},
        "x_end": {"type": "number"},
        "x_increment": {"type": "number", "exclusiveMinimum": 0},
        "y_start": {"type": "number"},
        "y_end": {"type": "number"},
        "y_increment": {"type": "number", "exclusiveMinimum": 0},
        "num_curves": {"type": "integer", "minimum": 1},
        "groups": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["label"],
                "properties": {
                    "label": {"type": "string"},
                    "color_hint": {"type": ["string", "null"]},
                },
            },
        },
        "risk_table": {
            "type": "object",
            "required": ["anchor_times", "counts"],
            "properties": {
                "anchor_times": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "counts": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                },
            },
        },
        "time_unit": {"type": "string"},
    },
    "additionalProperties": True,
}


@dataclass(frozen=True)
class RiskTable:
    """Number-at-risk counts per group at shared ascending anchor times."""

    anchor_times: tuple[float, ...]
    counts: tuple[tuple[int, ...], ...]  # one row per group, aligned to anchors

    def __post_init__(self):
        for row in self.counts:
            if len(row) != len(self.anchor_times):
                raise ValueError("each count row must align with anchor_times")

    def row(self, index: int):
        from .reconstruct import RiskRow

        return RiskRow(anchor_times=self.anchor_times, counts=self.counts[index])


@dataclass(frozen=True)
class GroupInfo:
    label: str
    color_hint: str | None = None


@dataclass(frozen=True)
class PlotMetadata:
    """Structured extraction result for one KM plot."""

    x_start: float
    x_end: float
    x_increment: float
    y_start: float
    y_end: float
    y_increment: float
    num_curves: int
    groups: tuple[GroupInfo, ...]
    risk_table: RiskTable
    time_unit: str = "months"

    def __post_init__(self):
        check_metadata_invariants(self)

    def x_range(self) -> AxisRange:
        return AxisRange(self.x_start, self.x_end, self.x_increment)

    def y_range(self) -> AxisRange:
        return AxisRange(self.y_start, self.y_end, self.y_increment)

    def to_dict(self) -> dict:
        return {
            "x_start": self.x_start,
            "x_end": self.x_end,
            "x_increment": self.x_increment,
            "y_start": self.y_start,
            "y_end": self.y_end,
            "y_increment": self.y_increment,
            "num_curves": self.num_curves,
            "groups": [
                {"label": g.label, "color_hint": g.color_hint} for g in self.groups
            ],
            "risk_table": {
                "anchor_times": list(self.risk_table.anchor_times),
                "counts": [list(row) for row in self.risk_table.counts],
            },
            "time_unit": self.time_unit,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PlotMetadata":
        rt = doc["risk_table"]
        return cls(
            x_start=float(doc["x_start"]),
            x_end=float(doc["x_end"]),
            x_increment=float(doc["x_increment"]),
            y_start=float(doc["y_start"]),
            y_end=float(doc["y_end"]),
            y_increment=float(doc["y_increment"]),
            num_curves=int(doc["num_curves"]),
            groups=tuple(
                GroupInfo(label=g["label"], color_hint=g.get("color_hint"))
                for g in doc["groups"]
            ),
            risk_table=RiskTable(
                anchor_times=tuple(float(a) for a in rt["anchor_times"]),
                counts=tuple(tuple(int(c) for c in row) for row in rt["counts"]),
            ),
            time_unit=str(doc["time_unit"]),
        )


def check_metadata_invariants(meta: PlotMetadata) -> None:
    """Machine-check every invariant; provider output is never trusted."""
    if not meta.x_end > meta.x_start:
        raise MetadataConflict("x_end must exceed x_start")
    if not meta.y_end > meta.y_start:
        raise MetadataConflict("y_end must exceed y_start")
    if meta.x_increment <= 0 or meta.y_increment <= 0:
        raise MetadataConflict("increments must be positive")
    if meta.num_curves != len(meta.groups):
        raise MetadataConflict("num_curves must equal the number of groups")
    if meta.num_curves != len(meta.risk_table.counts):
        raise MetadataConflict("num_curves must equal the number of risk-table rows")
    anchors = meta.risk_table.anchor_times
    if any(b <= a for a, b in zip(anchors, anchors[1:])):
        raise MetadataConflict("risk-table anchor times must be ascending")
    for row in meta.risk_table.counts:
        if row[0] < 1:
            raise MetadataConflict("first at-risk count must be >= 1")
        if any(b > a for a, b in zip(row, row[1:])):
            raise MetadataConflict("risk counts increase over time")


@dataclass(frozen=True)
class ValidationIssue:
    component: str  # one of VALIDATION_COMPONENTS
    message: str
    suggestion: str


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    issues: tuple[ValidationIssue, ...] = ()

    def __post_init__(self):
        if self.ok != (len(self.issues) == 0):
            raise ValueError("ok must be true exactly when issues is empty")

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "issues": [
                {"component": i.component, "message": i.message, "suggestion": i.suggestion}
                for i in self.issues
            ],
        }


@dataclass(frozen=True)
class OcrToken:
    text: str
    confidence: float
    box: tuple[int, int, int, int]
    region_kind: str  # "risk-table" | "axis-labels"


# --- providers ---------------------------------------------------------------


class MetadataProvider(Protocol):
    def validate(self, image_b64: str) -> dict: ...

    def extract(self, image_b64: str, tokens: list[dict], repair_error: str | None) -> dict: ...


class SidecarProvider:
    """Reads authored ground truth from a JSON sidecar file; fully offline."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._doc = json.loads(self.path.read_text())

    def validate(self, image_b64: str) -> dict:
        return self._doc.get("validation", {"ok": True, "issues": []})

    def extract(self, image_b64: str, tokens: list[dict], repair_error: str | None) -> dict:
        return self._doc["metadata"]


class ScriptedProvider:
    """Plays back staged responses; raising entries simulate outages."""

    def __init__(self, validations: Sequence[dict | Exception] = (), extractions: Sequence[dict | Exception] = ()):
        self._validations = list(validations)
        self._extractions = list(extractions)
        self.extract_calls: list[str | None] = []

    def _pop(self, queue: list):
        if not queue:
            raise ProviderError("scripted provider exhausted")
        item = queue.pop(0)
        if isinstance(item, Exception):
            raise item
        return item

    def validate(self, image_b64: str) -> dict:
        return self._pop(self._validations)

    def extract(self, image_b64: str, tokens: list[dict], repair_error: str | None) -> dict:
        self.extract_calls.append(repair_error)
        return self._pop(self._extractions)


class LiveProvider:
    """Chat-completion-style multi-modal endpoint speaking strict JSON.

    The base URL, model, and API key come from configuration or the
    ``KMGPT_API_KEY`` environment variable; the key is sent per request
    and never persisted. A process-wide semaphore caps in-flight calls.
    """

    _inflight = threading.Semaphore(2)

    def __init__(self, base_url: str, model: str, api_key: str | None = None, timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key or os.environ.get("KMGPT_API_KEY", "")
        self.timeout = timeout
        prompt_dir = Path(__file__).parent / "prompts"
        self.prompts = {p.stem: p.read_text() for p in sorted(prompt_dir.glob("*.txt"))}

    @classmethod
    def set_rate_limit(cls, max_inflight: int) -> None:
        cls._inflight = threading.Semaphore(max_inflight)

    def _chat(self, system: str, user_payload: dict) -> dict:
        import httpx

        body = {
            "model": self.model,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": json.dumps(user_payload)},
            ],
        }
        with self._inflight:
            resp = httpx.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        resp.raise_for_status()
        content = resp.json()["choices"][0]["message"]["content"]
        return json.loads(content)

    def validate(self, image_b64: str) -> dict:
        return self._chat(self.prompts["validate"], {"image_b64": image_b64})

    def extract(self, image_b64: str, tokens: list[dict], repair_error: str | None) -> dict:
        payload = {"image_b64": image_b64, "ocr_tokens": tokens}
        if repair_error:
            payload["schema_error"] = repair_error
        return self._chat(self.prompts["extract"], payload)


def _call_with_retries(fn, *args, sleeper=time.sleep):
    last: Exception | None = None
    for attempt, delay in enumerate((0.0,) + RETRY_DELAYS):
        if delay:
            sleeper(delay)
        try:
            return fn(*args)
        except (MetadataSchemaError, MetadataConflict):
            raise
        except Exception as exc:  # noqa: BLE001 - transport failures vary by provider
            last = exc
            log.warning("provider call failed (attempt %d): %s", attempt + 1, exc)
    raise ProviderError(f"provider unreachable after {1 + len(RETRY_DELAYS)} attempts: {last}")


# --- operations ---------------------------------------------------------------


def validate_input(image: RasterImage, provider: MetadataProvider, sleeper=time.sleep) -> ValidationReport:
    """InputGuard gate: checks the plot has all components worth processing."""
    image_b64 = base64.b64encode(encode_png(image)).decode("ascii")
    doc = _call_with_retries(provider.validate, image_b64, sleeper=sleeper)
    issues = tuple(
        ValidationIssue(
            component=i.get("component", "curves"),
            message=i.get("message", ""),
            suggestion=i.get("suggestion", ""),
        )
        for i in doc.get("issues", [])
    )
    return ValidationReport(ok=len(issues) == 0, issues=issues)


def extract_metadata(
    image: RasterImage,
    tokens: Sequence[OcrToken],
    provider: MetadataProvider,
    ocr_x_range: AxisRange | None = None,
    sleeper=time.sleep,
) -> PlotMetadata:
    """Fuse the image and OCR tokens into schema-validated PlotMetadata.

    One repair round-trip is allowed on a schema violation; axis values
    that disagree with the OCR tick grid by more than one increment are
    surfaced as MetadataConflict.
    """
    image_b64 = base64.b64encode(encode_png(image)).decode("ascii")
    token_dicts = [
        {"text": t.text, "confidence": t.confidence, "box": list(t.box), "region": t.region_kind}
        for t in tokens
    ]

    doc = _call_with_retries(provider.extract, image_b64, token_dicts, None, sleeper=sleeper)
    try:
        jsonschema.validate(doc, METADATA_SCHEMA)
    except jsonschema.ValidationError as first_error:
        log.info("metadata failed schema validation, requesting repair: %s", first_error.message)
        doc = _call_with_retries(
            provider.extract, image_b64, token_dicts, str(first_error.message), sleeper=sleeper
        )
        try:
            jsonschema.validate(doc, METADATA_SCHEMA)
        except jsonschema.ValidationError as second_error:
            raise MetadataSchemaError(
                f"provider response failed schema validation after repair: {second_error.message}"
            ) from second_error

    meta = PlotMetadata.from_dict(doc)  # runs the invariant checks

    if ocr_x_range is not None:
        _cross_check_axis(meta.x_start, ocr_x_range.min, ocr_x_range.increment, "x_start")
        _cross_check_axis(meta.x_end, ocr_x_range.max, ocr_x_range.increment, "x_end")
    return meta


def _cross_check_axis(provider_value: float, ocr_value: float, increment: float, name: str) -> None:
    if abs(provider_value - ocr_value) > increment * (1 + 1e-9):
        raise MetadataConflict(
            f"{name}={provider_value} disagrees with OCR tick grid value {ocr_value} "
            f"by more than one increment ({increment})"
        )


def write_sidecar(path: str | Path, metadata: PlotMetadata, validation: ValidationReport | None = None) -> None:
    """Author a sidecar file consumable by SidecarProvider."""
    doc = {
        "validation": (validation or ValidationReport(ok=True)).to_dict(),
        "metadata": metadata.to_dict(),
    }
    Path(path).write_text(json.dumps(doc, indent=2))
