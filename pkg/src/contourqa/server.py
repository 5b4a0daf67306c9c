"""HTTP review service: case browsing, slice verdicts, assessments, and recalibration.

All responses are JSON except the slice image endpoint, which returns PNG
bytes. Slice writes are guarded by a per-slice sequence number: clients echo
the sequence they last saw and receive 409 when it is stale.
"""

from __future__ import annotations

import io
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .boc_net import load_checkpoint, mc_forward_batch, new_model
from .bundleio import CaseBundle, load_dataset, read_csv
from .calibration import CalibrationCurve, ThresholdResult, build_curve, find_threshold
from .decision import ClinicianAssessment, adjudicate
from .errors import UnachievableTargetError
from .events import EventLog
from .features import extract_features
from .geometry import trace_boundaries
from .uq import CLASSES, McProbs, PredictedQuality, summarize


@dataclass
class ServiceState:
    bundles: dict[str, CaseBundle]
    predictions: dict[str, PredictedQuality]
    curve: CalibrationCurve
    threshold: ThresholdResult
    log: EventLog
    assessments: dict[str, dict] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def replay(self):
        """Rebuild mutable state from the event log."""
        for ev in self.log.events:
            if ev.kind == "assessment":
                p = ev.payload
                self.assessments[p["slice_id"]] = {
                    "rater_id": p["rater_id"],
                    "assessed_class": p["assessed_class"],
                    "seq": ev.seq,
                }
            elif ev.kind == "threshold_change":
                p = ev.payload
                self.threshold = ThresholdResult(
                    target_accuracy=p["target_accuracy"],
                    tau=p["tau"],
                    coverage=p["coverage"],
                    achieved_accuracy=p["achieved_accuracy"],
                )


def predict_bundles(
    bundles: dict[str, CaseBundle],
    checkpoint_path,
    t_passes: int = 20,
    seed: int = 0,
    rule: str = "conditional",
    chunk: int = 128,
) -> dict[str, PredictedQuality]:
    """MC predictions for every slice, keyed by slice_id; deterministic for a seed."""
    netcfg, params = load_checkpoint(checkpoint_path)
    net = new_model(netcfg, params)
    records = []
    for cid in sorted(bundles):
        for s in bundles[cid].slices:
            records.append(s)
    inputs = []
    for s in records:
        if netcfg.backbone == "small_cnn":
            if s.image is None:
                img = s.auto.pixels.astype(np.float64)
            else:
                img = s.image
            inputs.append(np.stack([img, s.auto.pixels.astype(np.float64)]))
        else:
            if s.ref is None:
                raise ValueError(
                    f"{s.slice_id}: the feature backbone needs reference masks in the bundle"
                )
            inputs.append(extract_features(s.ref, s.auto))
    x = np.stack(inputs)
    out: dict[str, PredictedQuality] = {}
    for start in range(0, x.shape[0], chunk):
        probs = mc_forward_batch(net, x[start : start + chunk], t=t_passes, seed=(seed, start))
        for i in range(probs.shape[0]):
            out[records[start + i].slice_id] = summarize(McProbs(probs[i]), rule)
    return out


def load_calibration_records(path):
    from .calibration import CalRecord

    rows = read_csv(path)
    return [
        CalRecord(
            slice_id=r["slice_id"],
            uncertainty=float(r["uncertainty"]),
            predicted_class=int(r["predicted_class"]),
            reference_class=int(r["reference_class"]),
        )
        for r in rows
    ]


def build_state(
    bundle_root,
    checkpoint_path,
    calibration_records_path,
    event_log_path,
    target_accuracy: float = 0.9,
    t_passes: int = 20,
    seed: int = 0,
    rule: str = "conditional",
) -> ServiceState:
    bundles = {b.subject_id: b for b in load_dataset(bundle_root)}
    predictions = predict_bundles(bundles, checkpoint_path, t_passes, seed, rule)
    curve = build_curve(load_calibration_records(calibration_records_path))
    threshold = find_threshold(curve, target_accuracy)
    state = ServiceState(
        bundles=bundles,
        predictions=predictions,
        curve=curve,
        threshold=threshold,
        log=EventLog(event_log_path),
    )
    state.replay()
    return state


def _error(status: int, message: str, **extra):
    return JSONResponse(status_code=status, content={"error": message, **extra})


def _slice_payload(state: ServiceState, cid: str, n: int) -> dict:
    bundle = state.bundles[cid]
    rec = bundle.slices[n]
    pred = state.predictions[rec.slice_id]
    assessment = state.assessments.get(rec.slice_id)
    verdict = adjudicate(pred, state.threshold.tau)  # verdict as shipped to a blind reviewer
    return {
        "subject_id": cid,
        "slice_index": n,
        "slice_count": bundle.slice_count,
        "seq": assessment["seq"] if assessment else 0,
        "image_url": f"/api/cases/{cid}/slices/{n}/image",
        "contour": [[list(pt) for pt in loop] for loop in trace_boundaries(rec.auto)],
        "shape": list(rec.auto.shape),
        "verdict": verdict.to_json(),
        "assessment": assessment,
    }


def create_app(state: ServiceState, frontend_dir=None) -> FastAPI:
    app = FastAPI(title="contourqa review service")

    @app.get("/api/cases")
    def list_cases():
        cases = []
        for cid in sorted(state.bundles):
            bundle = state.bundles[cid]
            assessed = sum(
                1 for s in bundle.slices if s.slice_id in state.assessments
            )
            cases.append(
                {"subject_id": cid, "slice_count": bundle.slice_count, "assessed_count": assessed}
            )
        return {"cases": cases}

    def _lookup(cid: str, n: int):
        bundle = state.bundles.get(cid)
        if bundle is None:
            return None, _error(404, f"unknown case {cid!r}")
        if not (0 <= n < bundle.slice_count):
            return None, _error(404, f"case {cid!r} has no slice {n}")
        return bundle, None

    @app.get("/api/cases/{cid}/slices/{n}")
    def get_slice(cid: str, n: int):
        _, err = _lookup(cid, n)
        if err:
            return err
        return _slice_payload(state, cid, n)

    @app.get("/api/cases/{cid}/slices/{n}/image")
    def get_slice_image(cid: str, n: int):
        bundle, err = _lookup(cid, n)
        if err:
            return err
        rec = bundle.slices[n]
        if rec.image is not None:
            arr = np.clip(np.rint(rec.image * 255.0), 0, 255).astype(np.uint8)
        else:
            arr = np.where(rec.auto.pixels, 200, 30).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(arr, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/api/cases/{cid}/slices/{n}/assessment")
    async def post_assessment(cid: str, n: int, request: Request):
        bundle, err = _lookup(cid, n)
        if err:
            return err
        body = await request.json()
        rater_id = body.get("rater_id")
        assessed = body.get("assessed_class")
        if not isinstance(rater_id, str) or not rater_id:
            return _error(422, "rater_id must be a nonempty string")
        if not isinstance(assessed, int) or assessed not in CLASSES:
            return _error(422, f"assessed_class must be one of {list(CLASSES)}")
        rec = bundle.slices[n]
        with state.lock:
            current = state.assessments.get(rec.slice_id)
            current_seq = current["seq"] if current else 0
            expected = body.get("expected_seq")
            if expected is not None and expected != current_seq:
                return _error(
                    409, f"stale sequence number: expected {current_seq}, got {expected}",
                    seq=current_seq,
                )
            event = state.log.append(
                "assessment",
                {"slice_id": rec.slice_id, "rater_id": rater_id, "assessed_class": assessed},
            )
            state.assessments[rec.slice_id] = {
                "rater_id": rater_id,
                "assessed_class": assessed,
                "seq": event.seq,
            }
            pred = state.predictions[rec.slice_id]
            verdict = adjudicate(
                pred,
                state.threshold.tau,
                ClinicianAssessment(rec.slice_id, rater_id, assessed, event.timestamp),
            )
            state.log.append(
                "verdict", {"slice_id": rec.slice_id, "verdict": verdict.to_json()}
            )
        return {"verdict": verdict.to_json(), "seq": event.seq}

    @app.get("/api/calibration")
    def get_calibration():
        return {
            **state.threshold.to_json(),
            "curve_bins": [
                {"mean_uncertainty": b.mean_uncertainty, "accuracy": b.accuracy, "count": b.count}
                for b in state.curve.bins
            ],
        }

    @app.post("/api/threshold")
    async def post_threshold(request: Request):
        body = await request.json()
        target = body.get("target_accuracy")
        if not isinstance(target, (int, float)) or not (0.0 < target <= 1.0):
            return _error(422, "target_accuracy must lie in (0, 1]")
        with state.lock:
            try:
                result = find_threshold(state.curve, float(target))
            except UnachievableTargetError as exc:
                return _error(
                    422,
                    str(exc),
                    best_accuracy=exc.best_accuracy,
                    best_coverage=exc.best_coverage,
                )
            state.threshold = result
            state.log.append("threshold_change", result.to_json())
        return result.to_json()

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")
    return app
