"""Accuracy-vs-uncertainty curves, threshold selection, and selective evaluation.

Calibration sorts records ascending by uncertainty and computes cumulative
accuracies; the threshold for a target accuracy is the uncertainty of the
longest qualifying prefix (ties on the uncertainty value move atomically, so
the reported coverage is exactly the fraction with uncertainty <= tau).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, UnachievableTargetError, UndefinedMetricError
from .uq import CLASSES, RaterPanel, manual_entropy

DEFAULT_CURVE_BINS = 20


@dataclass(frozen=True)
class CalRecord:
    """One scored slice: its uncertainty and whether the prediction was right."""

    slice_id: str
    uncertainty: float
    predicted_class: int
    reference_class: int
    class_probs: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.uncertainty < 0:
            raise ValueError("uncertainty must be non-negative")

    @property
    def correct(self) -> bool:
        return self.predicted_class == self.reference_class


@dataclass(frozen=True)
class CurveBin:
    mean_uncertainty: float
    accuracy: float
    count: int


@dataclass(frozen=True)
class CalibrationCurve:
    """Records sorted ascending by (uncertainty, slice_id) with cumulative accuracies."""

    records: tuple[CalRecord, ...]
    cumulative_accuracy: np.ndarray
    bins: tuple[CurveBin, ...]

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def overall_accuracy(self) -> float:
        return float(self.cumulative_accuracy[-1])


@dataclass(frozen=True)
class ThresholdResult:
    target_accuracy: float
    tau: float
    coverage: float
    achieved_accuracy: float

    def to_json(self) -> dict:
        return {
            "target_accuracy": self.target_accuracy,
            "tau": self.tau,
            "coverage": self.coverage,
            "achieved_accuracy": self.achieved_accuracy,
        }


def build_curve(records, n_bins: int = DEFAULT_CURVE_BINS) -> CalibrationCurve:
    """Sort, accumulate, and bin (equal-count bins, fewer when records are scarce)."""
    records = list(records)
    if not records:
        raise EmptyInputError("cannot build a calibration curve from zero records")
    ordered = tuple(sorted(records, key=lambda r: (r.uncertainty, r.slice_id)))
    correct = np.array([r.correct for r in ordered], dtype=float)
    cum = np.cumsum(correct) / np.arange(1, len(ordered) + 1)
    k = max(1, min(n_bins, len(ordered)))
    bins = []
    for idx in np.array_split(np.arange(len(ordered)), k):
        u = float(np.mean([ordered[i].uncertainty for i in idx]))
        acc = float(correct[idx].mean())
        bins.append(CurveBin(mean_uncertainty=u, accuracy=acc, count=len(idx)))
    return CalibrationCurve(records=ordered, cumulative_accuracy=cum, bins=tuple(bins))


def find_threshold(curve: CalibrationCurve, target_accuracy: float) -> ThresholdResult:
    """Longest prefix meeting the target, cut only at distinct-uncertainty boundaries."""
    if not (0.0 < target_accuracy <= 1.0):
        raise ValueError("target accuracy must lie in (0, 1]")
    u = np.array([r.uncertainty for r in curve.records])
    # group boundaries: last index of each run of equal uncertainties
    ends = [i for i in range(curve.n) if i == curve.n - 1 or u[i + 1] != u[i]]
    best_acc, best_cov = -1.0, 0.0
    for i in reversed(ends):
        acc = float(curve.cumulative_accuracy[i])
        if acc > best_acc:
            best_acc, best_cov = acc, (i + 1) / curve.n
        if acc >= target_accuracy:
            return ThresholdResult(
                target_accuracy=target_accuracy,
                tau=float(u[i]),
                coverage=(i + 1) / curve.n,
                achieved_accuracy=acc,
            )
    raise UnachievableTargetError(target_accuracy, best_acc, best_cov)


def _precision_recall_f1(accepted, cls: int) -> dict:
    tp = sum(1 for r in accepted if r.predicted_class == cls and r.reference_class == cls)
    fp = sum(1 for r in accepted if r.predicted_class == cls and r.reference_class != cls)
    fn = sum(1 for r in accepted if r.predicted_class != cls and r.reference_class == cls)
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision and recall:
        f1 = 2 * precision * recall / (precision + recall)
    elif precision is not None and recall is not None:
        f1 = 0.0
    else:
        f1 = None
    return {"precision": precision, "recall": recall, "f1": f1, "support": tp + fn}


@dataclass
class EvalReport:
    target_accuracy: float | None
    tau: float
    coverage: float
    selective_accuracy: float | None
    overall_accuracy: float
    per_class: dict
    confusion: list
    bad_cases: list
    curve_bins: list

    def to_json(self) -> dict:
        return {
            "target_accuracy": self.target_accuracy,
            "tau": self.tau,
            "coverage": self.coverage,
            "selective_accuracy": self.selective_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "per_class": self.per_class,
            "confusion": self.confusion,
            "bad_cases": self.bad_cases,
            "curve_bins": self.curve_bins,
        }


def selective_evaluate(
    records,
    tau: float,
    target_accuracy: float | None = None,
    n_bins: int = DEFAULT_CURVE_BINS,
) -> EvalReport:
    """Accept records with uncertainty <= tau and report the selective metrics.

    Per-class precision/recall/F1 and AUC are one-vs-rest over the accepted
    records; the bad-case list holds accepted-but-wrong records. Selective
    accuracy is None at zero coverage.
    """
    records = list(records)
    if not records:
        raise EmptyInputError("cannot evaluate zero records")
    accepted = [r for r in records if r.uncertainty <= tau]
    coverage = len(accepted) / len(records)
    overall = sum(r.correct for r in records) / len(records)
    selective = sum(r.correct for r in accepted) / len(accepted) if accepted else None
    per_class = {}
    for cls in CLASSES:
        stats = _precision_recall_f1(accepted, cls)
        try:
            stats["auc"] = auc_per_class(accepted, cls)
        except (UndefinedMetricError, EmptyInputError):
            stats["auc"] = None
        per_class[str(cls)] = stats
    confusion = [[0] * len(CLASSES) for _ in CLASSES]
    for r in accepted:
        confusion[r.reference_class][r.predicted_class] += 1
    bad = [
        {
            "slice_id": r.slice_id,
            "predicted_class": r.predicted_class,
            "reference_class": r.reference_class,
            "uncertainty": r.uncertainty,
        }
        for r in sorted(accepted, key=lambda r: (r.uncertainty, r.slice_id))
        if not r.correct
    ]
    curve = build_curve(records, n_bins=n_bins)
    bins = [
        {"mean_uncertainty": b.mean_uncertainty, "accuracy": b.accuracy, "count": b.count}
        for b in curve.bins
    ]
    return EvalReport(
        target_accuracy=target_accuracy,
        tau=tau,
        coverage=coverage,
        selective_accuracy=selective,
        overall_accuracy=overall,
        per_class=per_class,
        confusion=confusion,
        bad_cases=bad,
        curve_bins=bins,
    )


def average_ranks(values) -> np.ndarray:
    """1-based ranks with ties assigned the average rank of their run."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=float)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation with average-rank ties; 0.0 when either side is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    rx = average_ranks(x)
    ry = average_ranks(y)
    sx = rx.std()
    sy = ry.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))


def auc_per_class(records, cls: int) -> float:
    """One-vs-rest ROC AUC for class ``cls`` using its probability as the score.

    Rank-statistic form with ties counted 1/2. Requires records carrying
    class_probs and at least one positive and one negative.
    """
    scored = [r for r in records if r.class_probs is not None]
    if not scored:
        raise EmptyInputError("no records carry class probabilities")
    scores = np.array([r.class_probs[cls] for r in scored])
    positives = np.array([r.reference_class == cls for r in scored])
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"class {cls} needs a positive and a negative example")
    ranks = average_ranks(scores)
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def uncertainty_agreement(panels: list[RaterPanel], variances) -> float:
    """Spearman correlation between rater-entropy groups and their mean predicted variance.

    Slices are grouped by their panel entropy; the correlation is computed on
    (group entropy, group mean variance) pairs. Fewer than two distinct
    entropy groups is undefined.
    """
    variances = np.asarray(variances, dtype=float)
    if len(panels) != variances.size:
        raise ValueError("panels and variances must align")
    groups: dict[float, list[float]] = {}
    for panel, var in zip(panels, variances):
        h = round(manual_entropy(panel), 12)
        groups.setdefault(h, []).append(float(var))
    if len(groups) < 2:
        raise UndefinedMetricError("need at least two distinct entropy groups")
    entropies = sorted(groups)
    means = [float(np.mean(groups[h])) for h in entropies]
    return spearman(entropies, means)
