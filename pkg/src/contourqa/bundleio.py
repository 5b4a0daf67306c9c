"""Mask-bundle directory layout, PNG codecs, and the CSV formats shared by the pipeline.

One directory per subject:

    <subject>/
      meta.json            {"subject_id", "spacing_mm": [row, col], "slice_count"}
      ref/slice_<n>.png    8-bit grayscale, nonzero = inside (optional)
      auto/slice_<n>.png
      images/slice_<n>.png pseudo-CT intensities (optional)
      labels.csv           slice_id,label,dsc,sdsc,hd95_mm (optional)
      raters.csv           slice_id,rater_id,label (optional)

A dataset root is either a single subject directory or a directory of them.
Floats are written with repr() so artifacts are byte-stable across runs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionMismatchError
from .geometry import MaskSlice

LABEL_COLUMNS = ["slice_id", "label", "dsc", "sdsc", "hd95_mm"]
METRIC_COLUMNS = ["slice_id", "dsc", "sdsc", "hd95_mm", "degenerate"]
PREDICTION_COLUMNS = [
    "slice_id", "mean", "variance", "p1_hat", "p2_hat", "P0", "P1", "P2", "predicted_class",
]
PROB_COLUMNS = ["slice_id", "pass", "f1", "f2"]
RECORD_COLUMNS = ["slice_id", "uncertainty", "predicted_class", "reference_class"]


def slice_id(subject_id: str, index: int) -> str:
    return f"{subject_id}/{index:04d}"


def save_mask_png(path, pixels: np.ndarray):
    Image.fromarray(np.where(pixels, 255, 0).astype(np.uint8), mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 0


def save_image_png(path, image: np.ndarray):
    as8 = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(as8, mode="L").save(path)


def load_image_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")).astype(np.float64) / 255.0


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_csv(path, columns: list[str], rows: list[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class SliceRecord:
    index: int
    auto: MaskSlice
    ref: MaskSlice | None = None
    image: np.ndarray | None = None
    label: int | None = None
    raters: dict[str, int] | None = None

    @property
    def slice_id(self) -> str:
        return slice_id(self.auto.subject_id, self.index)


@dataclass
class CaseBundle:
    subject_id: str
    spacing_mm: tuple[float, float]
    slices: list[SliceRecord]

    @property
    def slice_count(self) -> int:
        return len(self.slices)


def write_dataset(samples, out_dir) -> list[str]:
    """Write synthetic samples as subject bundles; returns the subject ids."""
    out = Path(out_dir)
    by_subject: dict[str, list] = {}
    for s in samples:
        by_subject.setdefault(s.ref_mask.subject_id, []).append(s)
    for subject, group in sorted(by_subject.items()):
        group.sort(key=lambda s: s.ref_mask.slice_index)
        sdir = out / subject
        for sub in ("ref", "auto", "images"):
            (sdir / sub).mkdir(parents=True, exist_ok=True)
        rows = []
        for s in group:
            n = s.ref_mask.slice_index
            save_mask_png(sdir / "ref" / f"slice_{n}.png", s.ref_mask.pixels)
            save_mask_png(sdir / "auto" / f"slice_{n}.png", s.auto_mask.pixels)
            save_image_png(sdir / "images" / f"slice_{n}.png", s.image)
            rows.append(
                {
                    "slice_id": slice_id(subject, n),
                    "label": s.label,
                    "dsc": s.metrics.dsc,
                    "sdsc": s.metrics.sdsc,
                    "hd95_mm": s.metrics.hd95_mm,
                }
            )
        spacing = group[0].ref_mask.spacing_mm
        meta = {"subject_id": subject, "spacing_mm": list(spacing), "slice_count": len(group)}
        (sdir / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
        write_csv(sdir / "labels.csv", LABEL_COLUMNS, rows)
    return sorted(by_subject)


def write_raters(bundle_dir, panel_rows: list[dict]):
    write_csv(Path(bundle_dir) / "raters.csv", ["slice_id", "rater_id", "label"], panel_rows)


def load_case_bundle(path) -> CaseBundle:
    """Load and validate one subject directory."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{path}: missing meta.json")
    meta = json.loads(meta_path.read_text())
    subject = str(meta["subject_id"])
    spacing = (float(meta["spacing_mm"][0]), float(meta["spacing_mm"][1]))
    count = int(meta["slice_count"])
    labels: dict[str, int] = {}
    labels_path = path / "labels.csv"
    if labels_path.exists():
        for row in read_csv(labels_path):
            labels[row["slice_id"]] = int(row["label"])
    raters: dict[str, dict[str, int]] = {}
    raters_path = path / "raters.csv"
    if raters_path.exists():
        for row in read_csv(raters_path):
            raters.setdefault(row["slice_id"], {})[row["rater_id"]] = int(row["label"])
    slices = []
    for n in range(count):
        auto_path = path / "auto" / f"slice_{n}.png"
        if not auto_path.exists():
            raise FileNotFoundError(
                f"{subject}: slice indices must be contiguous from 0; missing {auto_path.name}"
            )
        auto_px = load_mask_png(auto_path)
        ref_path = path / "ref" / f"slice_{n}.png"
        ref = None
        if ref_path.exists():
            ref_px = load_mask_png(ref_path)
            if ref_px.shape != auto_px.shape:
                raise DimensionMismatchError(
                    f"{subject} slice {n}: ref {ref_px.shape} vs auto {auto_px.shape}"
                )
            ref = MaskSlice(ref_px, spacing, subject, n)
        image = None
        img_path = path / "images" / f"slice_{n}.png"
        if img_path.exists():
            image = load_image_png(img_path)
            if image.shape != auto_px.shape:
                raise DimensionMismatchError(
                    f"{subject} slice {n}: image {image.shape} vs auto mask {auto_px.shape}"
                )
        sid = slice_id(subject, n)
        slices.append(
            SliceRecord(
                index=n,
                auto=MaskSlice(auto_px, spacing, subject, n),
                ref=ref,
                image=image,
                label=labels.get(sid),
                raters=raters.get(sid),
            )
        )
    extra = sorted(p.name for p in (path / "auto").glob("slice_*.png"))
    if len(extra) != count:
        raise ValueError(
            f"{subject}: meta slice_count={count} but auto/ holds {len(extra)} slices"
        )
    return CaseBundle(subject_id=subject, spacing_mm=spacing, slices=slices)


def load_dataset(root) -> list[CaseBundle]:
    """All subject bundles under a root (or the root itself if it is a bundle)."""
    root = Path(root)
    if (root / "meta.json").exists():
        return [load_case_bundle(root)]
    bundles = []
    for child in sorted(root.iterdir()):
        if child.is_dir() and (child / "meta.json").exists():
            bundles.append(load_case_bundle(child))
    if not bundles:
        raise FileNotFoundError(f"{root}: no subject bundles found (no meta.json anywhere)")
    return bundles


def dataset_labels(bundles: list[CaseBundle]) -> dict[str, int]:
    out = {}
    for b in bundles:
        for s in b.slices:
            if s.label is not None:
                out[s.slice_id] = s.label
    return out
