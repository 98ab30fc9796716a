"""Selective inference for outliers detected by LAD or Huber regression."""

from .detection import OutlierSet, detect, event_region_over_path
from .errors import RobustSIError
from .inference import SelectiveReport, TestDirection, analyze
from .model import LAD, Dataset, DataLine, Huber, PiecewisePath, Threshold, TopK
from .numerics import IntervalSet

__all__ = [
    "LAD", "Dataset", "DataLine", "Huber", "IntervalSet", "OutlierSet", "PiecewisePath",
    "RobustSIError", "SelectiveReport", "TestDirection", "Threshold", "TopK", "analyze",
    "detect", "event_region_over_path",
]
