"""Fixed feature vector for the metrics MLP backbone.

Six components, all bounded with constant (data-independent) scaling so
train/test never share statistics:

  0  dsc
  1  sdsc
  2  hd95 capped at 30 mm, divided by 10
  3  test/reference area ratio, capped at 3
  4  test/reference boundary-length ratio, capped at 3
  5  centroid offset capped at 30 mm, divided by 10

An empty test mask zeroes the ratios and saturates the offset.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import GeomMetrics, MaskSlice, boundary_points, compute_metrics

N_FEATURES = 6

_HD95_CAP_MM = 30.0
_RATIO_CAP = 3.0
_OFFSET_CAP_MM = 30.0


def _boundary_length_mm(mask: MaskSlice) -> float:
    # boundary pixel count times mean pitch; crude but consistent across masks
    n = boundary_points(mask).shape[0]
    return n * 0.5 * (mask.spacing_mm[0] + mask.spacing_mm[1])


def extract_features(
    ref: MaskSlice, test: MaskSlice, metrics: GeomMetrics | None = None
) -> np.ndarray:
    """Feature vector (N_FEATURES,) for one reference/test pair."""
    if metrics is None:
        metrics = compute_metrics(ref, test)
    hd = min(metrics.hd95_mm, _HD95_CAP_MM)
    if test.empty or ref.empty:
        area_ratio = 0.0
        perim_ratio = 0.0
        offset = _OFFSET_CAP_MM
    else:
        area_ratio = min(test.area_mm2 / ref.area_mm2, _RATIO_CAP)
        ref_len = _boundary_length_mm(ref)
        perim_ratio = min(_boundary_length_mm(test) / ref_len, _RATIO_CAP) if ref_len else 0.0
        (r0, c0), (r1, c1) = ref.centroid_mm(), test.centroid_mm()
        offset = min(math.sqrt((r0 - r1) ** 2 + (c0 - c1) ** 2), _OFFSET_CAP_MM)
    return np.array(
        [metrics.dsc, metrics.sdsc, hd / 10.0, area_ratio, perim_ratio, offset / 10.0],
        dtype=np.float64,
    )
