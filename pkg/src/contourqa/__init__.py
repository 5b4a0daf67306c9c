"""Contour quality assessment: ordinal prediction with calibrated MC-dropout uncertainty."""

__version__ = "0.1.0"

from .geometry import GeomMetrics, MaskSlice, SurrogateThresholds  # noqa: F401
from .uq import McProbs, PredictedQuality, RaterPanel  # noqa: F401
from .calibration import CalRecord, CalibrationCurve, ThresholdResult  # noqa: F401
from .decision import ClinicianAssessment, Verdict, adjudicate  # noqa: F401
