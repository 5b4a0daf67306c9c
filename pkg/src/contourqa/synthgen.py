"""Synthetic reference shapes, pseudo-CT images, and degraded contour variants.

The generator stands in for a clinical cohort at desk scale: a random
catalogue shape becomes the reference mask, a fixed-contrast pseudo image is
rendered from it (background 0.3, interior +0.4, Gaussian noise sigma 0.05 on
a [0, 1] scale), and the auto mask is a geometrically perturbed copy whose
agreement metrics define the surrogate label.

Every sample derives its own random stream from (master seed, sample index),
so generation is order-independent and reproducible byte-for-byte.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateInputError
from .geometry import (
    GeomMetrics,
    MaskSlice,
    SurrogateThresholds,
    compute_metrics,
    surrogate_label,
)
from .nn import derive_rng
from .uq import RaterPanel

SHAPE_CATALOG = ("ellipse", "bean", "blob")


@dataclass(frozen=True)
class PerturbationParams:
    """Sampling ranges for one degradation draw.

    rotation_deg and translation_mm are symmetric half-widths (draws are
    uniform on [-x, x]); scale is a multiplicative range around 1; elastic
    control-point offsets are uniform on [-elastic_mag_mm, elastic_mag_mm] on
    an elastic_grid x elastic_grid lattice.
    """

    rotation_deg: float = 20.0
    scale: tuple[float, float] = (0.7, 1.35)
    translation_mm: float = 9.0
    elastic_grid: int = 4
    elastic_mag_mm: float = 14.0
    seed: int = 0

    def __post_init__(self):
        if self.rotation_deg < 0 or self.translation_mm < 0 or self.elastic_mag_mm < 0:
            raise ValueError("ranges must be non-negative")
        if not (0 < self.scale[0] <= self.scale[1]):
            raise ValueError("scale range must be well-ordered and positive")
        if self.elastic_grid < 2:
            raise ValueError("elastic_grid must be >= 2")

    def scaled(self, severity: float) -> "PerturbationParams":
        """Ranges shrunk toward the identity by ``severity`` in [0, 1]."""
        lo, hi = self.scale
        return replace(
            self,
            rotation_deg=self.rotation_deg * severity,
            scale=(1.0 + (lo - 1.0) * severity, 1.0 + (hi - 1.0) * severity),
            translation_mm=self.translation_mm * severity,
            elastic_mag_mm=self.elastic_mag_mm * severity,
        )


@dataclass(frozen=True)
class SynthSample:
    image: np.ndarray
    ref_mask: MaskSlice
    auto_mask: MaskSlice
    metrics: GeomMetrics
    label: int
    seed_used: int


def _raster_polar_shape(shape, spacing, center, radius_fn, rng=None) -> np.ndarray:
    rows, cols = shape
    rr = (np.arange(rows) * spacing[0])[:, None]
    cc = (np.arange(cols) * spacing[1])[None, :]
    dr = rr - center[0]
    dc = cc - center[1]
    radius = np.sqrt(dr * dr + dc * dc)
    theta = np.arctan2(dc, dr)
    return radius <= radius_fn(theta)


def make_shape(
    kind: str,
    rng: np.random.Generator,
    shape: tuple[int, int] = (64, 64),
    spacing: tuple[float, float] = (1.0, 1.0),
) -> np.ndarray:
    """Random filled catalogue shape on the given grid."""
    rows, cols = shape
    height = rows * spacing[0]
    width = cols * spacing[1]
    center = (
        height * rng.uniform(0.4, 0.6),
        width * rng.uniform(0.4, 0.6),
    )
    base = min(height, width) * rng.uniform(0.18, 0.3)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    if kind == "ellipse":
        ecc = rng.uniform(0.6, 1.0)

        def radius_fn(theta):
            ct = np.cos(theta - phase)
            st = np.sin(theta - phase)
            return base / np.sqrt(ct * ct + (st / ecc) ** 2)

    elif kind == "bean":
        dent = rng.uniform(0.25, 0.45)

        def radius_fn(theta):
            return base * (1.0 - dent * np.cos(theta - phase) ** 2 * np.sign(np.cos(theta - phase)).clip(0, 1))

    elif kind == "blob":
        amps = rng.uniform(0.04, 0.12, size=3)
        phases = rng.uniform(0.0, 2.0 * math.pi, size=3)

        def radius_fn(theta):
            r = np.ones_like(theta)
            for k, (a, ph) in enumerate(zip(amps, phases), start=2):
                r = r + a * np.cos(k * theta + ph)
            return base * r

    else:
        raise ValueError(f"unknown shape kind {kind!r}; catalogue is {SHAPE_CATALOG}")
    return _raster_polar_shape(shape, spacing, center, radius_fn)


def render_image(
    ref_pixels: np.ndarray,
    rng: np.random.Generator,
    background: float = 0.3,
    interior_offset: float = 0.4,
    noise_sigma: float = 0.05,
) -> np.ndarray:
    """Pseudo-CT: flat background, brighter interior, additive Gaussian noise, clipped to [0, 1]."""
    img = np.full(ref_pixels.shape, background, dtype=np.float64)
    img[ref_pixels] += interior_offset
    img += rng.normal(0.0, noise_sigma, size=ref_pixels.shape)
    return np.clip(img, 0.0, 1.0)


def apply_transform(
    mask: MaskSlice,
    rotation_deg: float = 0.0,
    scale: float = 1.0,
    translation_mm: tuple[float, float] = (0.0, 0.0),
    elastic_disp_mm: np.ndarray | None = None,
) -> MaskSlice:
    """Deterministic rotate/scale/translate about the centroid, then elastic warp.

    Reverse mapping with nearest-neighbour sampling keeps the output strictly
    binary. ``elastic_disp_mm`` is a (g, g, 2) control lattice of displacements
    spanning the grid, bilinearly interpolated to every output pixel.
    """
    if mask.empty:
        raise DegenerateInputError("cannot perturb an empty mask")
    rows, cols = mask.shape
    sr, sc = mask.spacing_mm
    cy, cx = mask.centroid_mm()
    out_r = (np.arange(rows) * sr)[:, None] * np.ones((1, cols))
    out_c = (np.arange(cols) * sc)[None, :] * np.ones((rows, 1))
    pr, pc = out_r, out_c
    if elastic_disp_mm is not None:
        disp = np.asarray(elastic_disp_mm, dtype=float)
        g = disp.shape[0]
        if disp.shape != (g, g, 2) or g < 2:
            raise ValueError("elastic displacement lattice must have shape (g, g, 2), g >= 2")
        # bilinear interpolation of the control lattice over the grid extent
        gr = out_r / ((rows - 1) * sr if rows > 1 else 1.0) * (g - 1)
        gc = out_c / ((cols - 1) * sc if cols > 1 else 1.0) * (g - 1)
        i0 = np.clip(gr.astype(int), 0, g - 2)
        j0 = np.clip(gc.astype(int), 0, g - 2)
        fr = gr - i0
        fc = gc - j0
        d = (
            disp[i0, j0] * ((1 - fr) * (1 - fc))[..., None]
            + disp[i0 + 1, j0] * (fr * (1 - fc))[..., None]
            + disp[i0, j0 + 1] * ((1 - fr) * fc)[..., None]
            + disp[i0 + 1, j0 + 1] * (fr * fc)[..., None]
        )
        pr = pr + d[..., 0]
        pc = pc + d[..., 1]
    # invert the affine part: forward is rotate+scale about centroid, then translate
    theta = math.radians(rotation_deg)
    ct, st = math.cos(theta), math.sin(theta)
    qr = pr - cy - translation_mm[0]
    qc = pc - cx - translation_mm[1]
    src_r = (ct * qr + st * qc) / scale + cy
    src_c = (-st * qr + ct * qc) / scale + cx
    ir = np.rint(src_r / sr).astype(int)
    ic = np.rint(src_c / sc).astype(int)
    inside = (ir >= 0) & (ir < rows) & (ic >= 0) & (ic < cols)
    out = np.zeros((rows, cols), dtype=bool)
    out[inside] = mask.pixels[ir[inside], ic[inside]]
    return MaskSlice(out, mask.spacing_mm, mask.subject_id, mask.slice_index)


def perturb_mask(mask: MaskSlice, params: PerturbationParams, seed: int) -> MaskSlice:
    """Sample one degradation from ``params`` and apply it; fixed (params, seed) is bit-stable."""
    if mask.empty:
        raise DegenerateInputError("cannot perturb an empty mask")
    rng = derive_rng(seed)
    rotation = rng.uniform(-params.rotation_deg, params.rotation_deg)
    scale = rng.uniform(params.scale[0], params.scale[1])
    translation = (
        rng.uniform(-params.translation_mm, params.translation_mm),
        rng.uniform(-params.translation_mm, params.translation_mm),
    )
    disp = rng.uniform(
        -params.elastic_mag_mm, params.elastic_mag_mm, size=(params.elastic_grid, params.elastic_grid, 2)
    )
    return apply_transform(mask, rotation, scale, translation, disp)


def generate_dataset(
    n: int,
    params: PerturbationParams = PerturbationParams(),
    thresholds: SurrogateThresholds = SurrogateThresholds(),
    seed: int = 0,
    shape_kinds: tuple[str, ...] = SHAPE_CATALOG,
    grid: tuple[int, int] = (64, 64),
    spacing: tuple[float, float] = (1.0, 1.0),
    slices_per_subject: int = 8,
    sdsc_tolerance_mm: float = 2.0,
    severity_spread: bool = True,
) -> list[SynthSample]:
    """n labelled samples; sample i uses streams derived from (seed, i).

    With ``severity_spread`` each sample scales the perturbation ranges by a
    uniform severity in [0, 1], yielding a continuum from near-identity to the
    full configured degradation (and therefore all three classes, including
    threshold-adjacent cases). Warns when any class falls below 10% of a set
    of at least 100 samples.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    for kind in shape_kinds:
        if kind not in SHAPE_CATALOG:
            raise ValueError(f"unknown shape kind {kind!r}")
    samples = []
    for i in range(n):
        rng = derive_rng(seed, i)
        subject = f"s{i // slices_per_subject:04d}"
        idx = i % slices_per_subject
        kind = shape_kinds[int(rng.integers(len(shape_kinds)))]
        ref_px = make_shape(kind, rng, grid, spacing)
        if not ref_px.any():  # tiny shapes can rasterise empty off-grid; retry pattern
            ref_px = make_shape("ellipse", rng, grid, spacing)
        image = render_image(ref_px, rng)
        ref = MaskSlice(ref_px, spacing, subject, idx)
        p = params.scaled(float(rng.uniform(0.0, 1.0))) if severity_spread else params
        pert_seed = int(rng.integers(2**63))
        auto = perturb_mask(ref, p, pert_seed)
        metrics = compute_metrics(ref, auto, sdsc_tolerance_mm)
        samples.append(
            SynthSample(
                image=image,
                ref_mask=ref,
                auto_mask=auto,
                metrics=metrics,
                label=surrogate_label(metrics, thresholds),
                seed_used=pert_seed,
            )
        )
    hist = label_histogram(samples)
    if n >= 100 and min(hist.values()) < 0.10 * n:
        warnings.warn(f"class histogram below 10% floor: {hist}; consider wider ranges")
    return samples


def label_histogram(samples) -> dict[int, int]:
    hist = {0: 0, 1: 0, 2: 0}
    for s in samples:
        hist[s.label] += 1
    return hist


def simulate_rater_panels(
    metrics_list,
    seed: int,
    n_raters: int = 3,
    threshold_jitter: float = 0.03,
    hd_jitter_mm: float = 0.8,
    flip_prob: float = 0.02,
) -> list[RaterPanel]:
    """Synthetic rater panels: each rater applies jittered class thresholds.

    Raters disagree mainly on threshold-adjacent contours, which mimics
    inter-observer variation; a small uniform label flip adds unstructured
    noise. Accepts GeomMetrics or anything carrying a ``.metrics`` attribute.
    Deterministic given ``seed``.
    """
    metrics_list = [m.metrics if hasattr(m, "metrics") else m for m in metrics_list]
    rater_rngs = [derive_rng(seed, r) for r in range(n_raters)]
    rater_thresholds = []
    for rng in rater_rngs:
        rater_thresholds.append(
            SurrogateThresholds(
                dsc_hi=0.9 + rng.uniform(-threshold_jitter, threshold_jitter),
                dsc_lo=0.7 + rng.uniform(-threshold_jitter, threshold_jitter),
                sdsc_hi=0.9 + rng.uniform(-threshold_jitter, threshold_jitter),
                sdsc_lo=0.7 + rng.uniform(-threshold_jitter, threshold_jitter),
                hd95_good_mm=2.5 + rng.uniform(-hd_jitter_mm, hd_jitter_mm),
                hd95_major_mm=6.0 + rng.uniform(-hd_jitter_mm, hd_jitter_mm),
            )
        )
    panels = []
    for i, metrics in enumerate(metrics_list):
        labels = []
        for r in range(n_raters):
            label = surrogate_label(metrics, rater_thresholds[r])
            rng = derive_rng(seed, r, i)
            if rng.random() < flip_prob:
                label = int(np.clip(label + (1 if rng.random() < 0.5 else -1), 0, 2))
            labels.append(label)
        panels.append(RaterPanel(tuple(labels)))
    return panels
