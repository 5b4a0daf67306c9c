"""Placeholder for DICOM ingestion: documents the mapping, performs none of it.

Real DICOM parsing is out of scope for this package. An ingestion tool that
produces subject bundles from a DICOM series would map:

  CT series                         -> images/slice_<n>.png, one per axial
                                       instance, ordered by ImagePositionPatient z
                                       and window-normalised to [0, 1]
  PixelSpacing (row, col)           -> meta.json spacing_mm
  RTSTRUCT contours (per slice)     -> auto/slice_<n>.png (rasterised fill of the
                                       evaluated structure's contour polygons)
  curated/approved RTSTRUCT         -> ref/slice_<n>.png when a reference exists
  PatientID or an anonymised token  -> meta.json subject_id, bundle directory name

Slices without a contour for the structure under review are written as empty
masks, so indices stay contiguous from 0.
"""

from __future__ import annotations


def convert_dicom_series(series_dir, out_dir, structure_name: str):
    """Would write a subject bundle for one CT series + RTSTRUCT pair.

    Not implemented: this package consumes the bundle layout only. Use a
    dedicated DICOM toolchain to produce bundles per the mapping above.
    """
    raise NotImplementedError(
        "DICOM ingestion is out of scope; write subject bundles per the documented mapping"
    )
