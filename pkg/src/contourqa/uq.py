"""Moments of the ordinal predictive distribution, class prediction, and rater statistics.

A prediction is summarised from T stochastic forward passes, each producing a
pair (f1, f2): f1 estimates P(y >= 1 | x) and f2 the conditional P(y >= 2 | y >= 1, x).
The outcome distribution of one pass over classes {0, 1, 2} is

    P(0) = 1 - f1,   P(1) = f1 * (1 - f2),   P(2) = f1 * f2.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

CLASSES = (0, 1, 2)


@dataclass(frozen=True)
class McProbs:
    """T per-pass probability pairs, shape (T, 2), each component in [0, 1]."""

    pairs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pairs, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
            raise ValueError(f"pairs must have shape (T, 2) with T >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("pass probabilities must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError("pass probabilities must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pairs", arr)

    @property
    def T(self) -> int:
        return self.pairs.shape[0]


@dataclass(frozen=True)
class PredictedQuality:
    """Summary of one slice's MC prediction."""

    mean: float
    variance: float
    p1_hat: float
    p2_hat: float
    class_probs: tuple[float, float, float]
    predicted_class: int

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be non-negative")
        s = sum(self.class_probs)
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"class probabilities must sum to 1, got {s}")
        p1, p2 = self.class_probs[1], self.class_probs[2]
        if abs(self.mean - (p1 + 2.0 * p2)) > 1e-9:
            raise ValueError("mean inconsistent with class probabilities")


@dataclass(frozen=True)
class RaterPanel:
    """Independent per-rater quality classes for one slice."""

    labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.labels) < 1:
            raise ValueError("panel needs at least one rater")
        if any(l not in CLASSES for l in self.labels):
            raise ValueError(f"labels must be in {CLASSES}, got {self.labels}")
        object.__setattr__(self, "labels", tuple(int(l) for l in self.labels))

    @property
    def n_raters(self) -> int:
        return len(self.labels)

    def counts(self) -> dict[int, int]:
        c = Counter(self.labels)
        return {j: c.get(j, 0) for j in CLASSES}

    def probabilities(self) -> dict[int, float]:
        n = self.n_raters
        return {j: c / n for j, c in self.counts().items()}


def per_pass_moments(f1: float, f2: float) -> tuple[float, float]:
    """Mean and variance of the single-pass outcome distribution.

    mean = f1 + f1*f2
    var  = f1 + 3*f1*f2 - f1^2 * (1 + f2)^2
    """
    if not (0.0 <= f1 <= 1.0 and 0.0 <= f2 <= 1.0):
        raise DomainError(f"(f1, f2) must lie in [0, 1]^2, got ({f1}, {f2})")
    mean = f1 + f1 * f2
    var = f1 + 3.0 * f1 * f2 - f1 * f1 * (1.0 + f2) * (1.0 + f2)
    return mean, var


def mc_moments(mc: McProbs) -> tuple[float, float]:
    """MC estimators of the predictive mean and total variance over T passes.

    variance = mean(per-pass variance) + mean(per-pass mean^2) - mean(per-pass mean)^2,
    the law-of-total-variance decomposition of the T-averaged outcome distribution.
    """
    f1 = mc.pairs[:, 0]
    f2 = mc.pairs[:, 1]
    means = f1 + f1 * f2
    variances = f1 + 3.0 * f1 * f2 - f1 * f1 * (1.0 + f2) * (1.0 + f2)
    mean = float(means.mean())
    var = float(variances.mean() + (means * means).mean() - means.mean() ** 2)
    return mean, max(var, 0.0)  # clamp float roundoff


def class_probabilities(mc: McProbs) -> tuple[float, float, float]:
    """(P0, P1, P2) from the chain-rule marginals of the averaged passes."""
    f1 = mc.pairs[:, 0]
    f2 = mc.pairs[:, 1]
    p_ge1 = float(f1.mean())
    p_ge2 = float((f1 * f2).mean())
    return (1.0 - p_ge1, p_ge1 - p_ge2, p_ge2)


def predict_class(mc: McProbs, rule: str = "conditional") -> tuple[int, float, float]:
    """Predicted class plus (p1_hat, p2_hat).

    conditional: y = 1{p1_hat > 0.5} + 1{p2_hat > 0.5} with p2_hat the plain
    mean of the conditional outputs (the published estimator; the indicator
    pair can be rank-inconsistent).
    cumulative: thresholds the cumulative marginal mean(f1*f2) instead, which
    is rank-monotone by construction.
    Exact 0.5 does not fire either indicator.
    """
    f1 = mc.pairs[:, 0]
    f2 = mc.pairs[:, 1]
    p1_hat = float(f1.mean())
    p2_hat = float(f2.mean())
    if rule == "conditional":
        y = int(p1_hat > 0.5) + int(p2_hat > 0.5)
    elif rule == "cumulative":
        y = int(p1_hat > 0.5) + int(float((f1 * f2).mean()) > 0.5)
    else:
        raise ValueError(f"unknown prediction rule {rule!r}")
    return y, p1_hat, p2_hat


def summarize(mc: McProbs, rule: str = "conditional") -> PredictedQuality:
    """Assemble the full per-slice prediction record from the MC passes."""
    mean, var = mc_moments(mc)
    probs = class_probabilities(mc)
    y, p1_hat, p2_hat = predict_class(mc, rule)
    return PredictedQuality(
        mean=mean,
        variance=var,
        p1_hat=p1_hat,
        p2_hat=p2_hat,
        class_probs=probs,
        predicted_class=y,
    )


def manual_entropy(panel: RaterPanel) -> float:
    """Shannon entropy (nats) of the panel's label frequencies, with 0*ln(0) = 0."""
    h = 0.0
    for p in panel.probabilities().values():
        if p > 0.0:
            h -= p * math.log(p)
    return h


def majority_vote(panel: RaterPanel) -> int:
    """Strict-plurality class; any tie for the top count resolves to class 1."""
    counts = panel.counts()
    top = max(counts.values())
    winners = [j for j, c in counts.items() if c == top]
    return winners[0] if len(winners) == 1 else 1
