"""Kaplan-Meier plot digitization, IPD reconstruction, and survival meta-analysis."""

__version__ = "0.1.0"

from .geometry import AxisGeometry, AxisRange, TickToken, calibrate, detect_ranges, inverse_calibrate, locate_axes
from .metadata import PlotMetadata, RiskTable, SidecarProvider, ValidationReport
from .raster import RasterImage, load_image, save_png
from .reconstruct import DigitizedCurve, RiskRow, overlay_check, reconstruct_ipd
from .survival import IPDRecord, SurvivalCurve, km_estimate, median_survival

__all__ = [
    "AxisGeometry",
    "AxisRange",
    "DigitizedCurve",
    "IPDRecord",
    "PlotMetadata",
    "RasterImage",
    "RiskRow",
    "RiskTable",
    "SidecarProvider",
    "SurvivalCurve",
    "TickToken",
    "ValidationReport",
    "calibrate",
    "detect_ranges",
    "inverse_calibrate",
    "km_estimate",
    "load_image",
    "locate_axes",
    "median_survival",
    "overlay_check",
    "reconstruct_ipd",
    "save_png",
]
