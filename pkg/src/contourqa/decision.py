"""Accept / abstain / warn policy applied to one prediction and an optional human assessment."""

from __future__ import annotations

from dataclasses import dataclass

from .uq import CLASSES, PredictedQuality

HIGH_UNCERTAINTY_MESSAGE = (
    "This case exhibits high uncertainty for the AI model; please review carefully."
)
WARNING_MESSAGE = (
    "The model confidently predicts this contour needs revision but it was assessed as "
    "acceptable; please re-evaluate before proceeding."
)
AGREEMENT_MESSAGE = "Confident prediction; no warning."


@dataclass(frozen=True)
class ClinicianAssessment:
    slice_id: str
    rater_id: str
    assessed_class: int
    timestamp: str = ""

    def __post_init__(self):
        if self.assessed_class not in CLASSES:
            raise ValueError(f"assessed_class must be in {CLASSES}")


@dataclass(frozen=True)
class Verdict:
    """Policy output: confident predictions may warn, abstentions never do."""

    status: str  # "confident" | "abstain"
    predicted_class: int | None
    warning: bool
    message: str
    variance: float
    tau: float

    def __post_init__(self):
        if self.status not in ("confident", "abstain"):
            raise ValueError(f"unknown status {self.status!r}")
        if self.warning and self.status != "confident":
            raise ValueError("warnings require a confident prediction")
        if self.status == "abstain" and self.predicted_class is not None:
            raise ValueError("abstentions surface no predicted class")

    def to_json(self) -> dict:
        out = {
            "status": self.status,
            "warning": self.warning,
            "message": self.message,
            "variance": self.variance,
            "tau": self.tau,
        }
        if self.predicted_class is not None:
            out["predicted_class"] = self.predicted_class
        return out


def adjudicate(
    pred: PredictedQuality, tau: float, assessment: ClinicianAssessment | None = None
) -> Verdict:
    """Fire the warning policy for one slice.

    Uncertainty above tau abstains (boundary variance == tau counts as
    confident). A warning fires only when a confident model prediction of
    class 0 or 1 contradicts a clinician assessment of class 2; every other
    confident combination, including the clinician already choosing 0 or 1,
    passes silently.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if pred.variance > tau:
        return Verdict(
            status="abstain",
            predicted_class=None,
            warning=False,
            message=HIGH_UNCERTAINTY_MESSAGE,
            variance=pred.variance,
            tau=tau,
        )
    warn = (
        assessment is not None
        and assessment.assessed_class == 2
        and pred.predicted_class in (0, 1)
    )
    return Verdict(
        status="confident",
        predicted_class=pred.predicted_class,
        warning=warn,
        message=WARNING_MESSAGE if warn else AGREEMENT_MESSAGE,
        variance=pred.variance,
        tau=tau,
    )
