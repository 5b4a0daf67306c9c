"""Raster contour masks, similarity metrics (DSC / surface DSC / HD95), and surrogate labels.

All distances are Euclidean in millimetres between pixel centres: pixel (i, j)
sits at (i * row_pitch, j * col_pitch). Boundary pixels are inside pixels with
at least one 4-neighbour that is outside or beyond the grid edge.

Empty-mask conventions (flagged via ``GeomMetrics.degenerate``):
both masks empty -> perfect agreement (dsc = sdsc = 1, hd95 = 0);
exactly one empty -> worst case (dsc = sdsc = 0, hd95 = +inf).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError

DEFAULT_SDSC_TOLERANCE_MM = 2.0


@dataclass(frozen=True)
class MaskSlice:
    """A 2D binary contour raster with physical pixel spacing."""

    pixels: np.ndarray
    spacing_mm: tuple[float, float] = (1.0, 1.0)
    subject_id: str = ""
    slice_index: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=bool)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"mask must be a non-degenerate 2D grid, got shape {px.shape}")
        sr, sc = float(self.spacing_mm[0]), float(self.spacing_mm[1])
        if not (sr > 0 and sc > 0):
            raise ValueError(f"spacing components must be positive, got {self.spacing_mm}")
        if self.slice_index < 0:
            raise ValueError("slice_index must be non-negative")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "spacing_mm", (sr, sc))

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def area_px(self) -> int:
        return int(self.pixels.sum())

    @property
    def area_mm2(self) -> float:
        return self.area_px * self.spacing_mm[0] * self.spacing_mm[1]

    @property
    def empty(self) -> bool:
        return not self.pixels.any()

    def centroid_mm(self) -> tuple[float, float] | None:
        """Centroid of inside pixel centres in mm, or None for an empty mask."""
        if self.empty:
            return None
        rows, cols = np.nonzero(self.pixels)
        return (float(rows.mean()) * self.spacing_mm[0], float(cols.mean()) * self.spacing_mm[1])


@dataclass(frozen=True)
class GeomMetrics:
    """The DSC / surface-DSC / HD95 triple for one (reference, test) mask pair."""

    dsc: float
    sdsc: float
    hd95_mm: float
    degenerate: bool = False

    def as_row(self) -> dict:
        return {
            "dsc": self.dsc,
            "sdsc": self.sdsc,
            "hd95_mm": self.hd95_mm,
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True)
class SurrogateThresholds:
    """Per-metric class boundaries and the aggregation rule for surrogate labels.

    ``max_rule`` takes the most lenient (highest) of the three per-metric
    classes; ``min_rule`` the strictest. Defaults are the rectum bounds:
    0.9/0.7 for DSC and SDSC, 2.5/6.0 mm for HD95.
    """

    dsc_hi: float = 0.9
    dsc_lo: float = 0.7
    sdsc_hi: float = 0.9
    sdsc_lo: float = 0.7
    hd95_good_mm: float = 2.5
    hd95_major_mm: float = 6.0
    aggregation: str = "max_rule"

    def __post_init__(self):
        if not (self.dsc_lo < self.dsc_hi <= 1.0):
            raise ValueError("require dsc_lo < dsc_hi <= 1")
        if not (self.sdsc_lo < self.sdsc_hi <= 1.0):
            raise ValueError("require sdsc_lo < sdsc_hi <= 1")
        if not (0.0 < self.hd95_good_mm < self.hd95_major_mm):
            raise ValueError("require 0 < hd95_good_mm < hd95_major_mm")
        if self.aggregation not in ("max_rule", "min_rule"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


def _check_compatible(ref: MaskSlice, test: MaskSlice):
    if ref.shape != test.shape:
        raise DimensionMismatchError(f"mask shapes differ: {ref.shape} vs {test.shape}")
    if ref.spacing_mm != test.spacing_mm:
        raise DimensionMismatchError(f"mask spacings differ: {ref.spacing_mm} vs {test.spacing_mm}")


def boundary_points(mask: MaskSlice) -> np.ndarray:
    """Physical coordinates (mm) of boundary pixel centres, shape (n, 2).

    A pixel is boundary if it is inside and any 4-neighbour is outside or
    beyond the grid edge. Empty mask -> empty (0, 2) array.
    """
    px = mask.pixels
    if not px.any():
        return np.empty((0, 2), dtype=float)
    interior = np.ones_like(px)
    interior[1:, :] &= px[:-1, :]
    interior[:-1, :] &= px[1:, :]
    interior[:, 1:] &= px[:, :-1]
    interior[:, :-1] &= px[:, 1:]
    # edge rows/cols always count as boundary when inside
    interior[0, :] = False
    interior[-1, :] = False
    interior[:, 0] = False
    interior[:, -1] = False
    rows, cols = np.nonzero(px & ~interior)
    pts = np.empty((rows.size, 2), dtype=float)
    pts[:, 0] = rows * mask.spacing_mm[0]
    pts[:, 1] = cols * mask.spacing_mm[1]
    return pts


def _min_dists(src: np.ndarray, dst: np.ndarray, chunk: int = 512) -> np.ndarray:
    """For each point in src, the minimum Euclidean distance to dst (both (n, 2), mm)."""
    out = np.empty(src.shape[0], dtype=float)
    for start in range(0, src.shape[0], chunk):
        block = src[start : start + chunk]
        dr = block[:, 0:1] - dst[None, :, 0].reshape(1, -1)
        dc = block[:, 1:2] - dst[None, :, 1].reshape(1, -1)
        d = np.sqrt(dr * dr + dc * dc)
        out[start : start + chunk] = d.min(axis=1)
    return out


def dice(ref: MaskSlice, test: MaskSlice) -> float:
    """Dice overlap 2|A∩B| / (|A|+|B|); both masks empty -> 1.0."""
    _check_compatible(ref, test)
    a = ref.area_px
    b = test.area_px
    if a == 0 and b == 0:
        return 1.0
    inter = int(np.logical_and(ref.pixels, test.pixels).sum())
    return 2.0 * inter / (a + b)


def surface_dice(ref: MaskSlice, test: MaskSlice, tolerance_mm: float = DEFAULT_SDSC_TOLERANCE_MM) -> float:
    """Fraction of pooled boundary points within tolerance of the other boundary.

    Both masks empty -> 1.0; exactly one empty -> 0.0.
    """
    _check_compatible(ref, test)
    if tolerance_mm < 0:
        raise ValueError("tolerance_mm must be >= 0")
    if ref.empty and test.empty:
        return 1.0
    if ref.empty or test.empty:
        return 0.0
    sa = boundary_points(ref)
    sb = boundary_points(test)
    hits = int((_min_dists(sa, sb) <= tolerance_mm).sum()) + int((_min_dists(sb, sa) <= tolerance_mm).sum())
    return hits / (sa.shape[0] + sb.shape[0])


def hd95(ref: MaskSlice, test: MaskSlice) -> float:
    """95th percentile (nearest-rank) of pooled directed boundary distances, in mm.

    Both masks empty -> 0.0; exactly one empty -> +inf.
    """
    _check_compatible(ref, test)
    if ref.empty and test.empty:
        return 0.0
    if ref.empty or test.empty:
        return math.inf
    sa = boundary_points(ref)
    sb = boundary_points(test)
    pooled = np.concatenate([_min_dists(sa, sb), _min_dists(sb, sa)])
    pooled.sort()
    k = math.ceil(0.95 * pooled.size)  # nearest-rank, 1-based
    return float(pooled[k - 1])


def compute_metrics(
    ref: MaskSlice, test: MaskSlice, sdsc_tolerance_mm: float = DEFAULT_SDSC_TOLERANCE_MM
) -> GeomMetrics:
    """All three metrics for one pair; shares edge-case handling and flags degeneracy."""
    _check_compatible(ref, test)
    degenerate = ref.empty or test.empty
    return GeomMetrics(
        dsc=dice(ref, test),
        sdsc=surface_dice(ref, test, sdsc_tolerance_mm),
        hd95_mm=hd95(ref, test),
        degenerate=degenerate,
    )


def trace_boundaries(mask: MaskSlice) -> list[list[tuple[float, float]]]:
    """Closed boundary polylines in pixel coordinates, one per contour loop.

    Walks the "crack" edges between inside and outside pixels (region kept on
    the walking direction's right), so concave shapes, holes, and multiple
    components all yield exact closed loops. Vertices are pixel-corner
    coordinates, offset so pixel (r, c) spans r-0.5 .. r+0.5.
    """
    px = mask.pixels
    rows, cols = px.shape

    def inside(r, c):
        return 0 <= r < rows and 0 <= c < cols and px[r, c]

    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for r, c in zip(*np.nonzero(px)):
        r, c = int(r), int(c)
        if not inside(r - 1, c):  # top side, walk east
            edges.setdefault((r, c), []).append((r, c + 1))
        if not inside(r + 1, c):  # bottom side, walk west
            edges.setdefault((r + 1, c + 1), []).append((r + 1, c))
        if not inside(r, c - 1):  # left side, walk north
            edges.setdefault((r + 1, c), []).append((r, c))
        if not inside(r, c + 1):  # right side, walk south
            edges.setdefault((r, c + 1), []).append((r + 1, c + 1))

    loops = []
    while edges:
        start = min(edges)
        cur = start
        loop = [cur]
        prev_dir = None
        while True:
            outs = edges[cur]
            if len(outs) == 1 or prev_dir is None:
                nxt = outs[0]
            else:
                # checkerboard corner: prefer the right turn to keep loops tight
                want = (prev_dir[1], -prev_dir[0])
                nxt = next(
                    (o for o in outs if (o[0] - cur[0], o[1] - cur[1]) == want), outs[0]
                )
            outs.remove(nxt)
            if not outs:
                del edges[cur]
            prev_dir = (nxt[0] - cur[0], nxt[1] - cur[1])
            loop.append(nxt)
            cur = nxt
            if cur == start:
                break
        loops.append([(r - 0.5, c - 0.5) for r, c in loop])
    return loops


def per_metric_classes(metrics: GeomMetrics, thr: SurrogateThresholds) -> tuple[int, int, int]:
    """(r_dsc, r_sdsc, r_hd95), each in {0, 1, 2}. Lower bounds are inclusive."""

    def band(value, hi, lo):
        if value >= hi:
            return 2
        if value >= lo:
            return 1
        return 0

    r_dsc = band(metrics.dsc, thr.dsc_hi, thr.dsc_lo)
    r_sdsc = band(metrics.sdsc, thr.sdsc_hi, thr.sdsc_lo)
    if metrics.hd95_mm <= thr.hd95_good_mm:
        r_hd = 2
    elif metrics.hd95_mm <= thr.hd95_major_mm:
        r_hd = 1
    else:
        r_hd = 0
    return r_dsc, r_sdsc, r_hd


def surrogate_label(metrics: GeomMetrics, thr: SurrogateThresholds = SurrogateThresholds()) -> int:
    """Final quality class from the three per-metric classes.

    max_rule is the literal published rule (most lenient metric wins);
    min_rule is the conservative alternative.
    """
    classes = per_metric_classes(metrics, thr)
    return max(classes) if thr.aggregation == "max_rule" else min(classes)
