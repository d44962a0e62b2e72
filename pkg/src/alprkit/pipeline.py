"""End-to-end cascade over annotated tracks.

Order per frame: vehicle detection on the full frame, plate detection
inside the best vehicle patch, character segmentation inside the widened
plate patch, per-slot classification, then per-track majority voting.
Every frame also contributes true/false positive counts per stage, so a
run yields both readings and a full evaluation report.

Frames are independent: backends derive their randomness from (seed,
stage, frame, patch), so results do not depend on execution order or
worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path
from typing import Callable, Sequence

from .charseg import (
    PLATE_LENGTH,
    CharCandidate,
    UnderSegmentationError,
    VehicleType,
    order_characters,
    resolve_overlaps,
)
from .config import PipelineConfig, format_config
from .dataset import FrameAnnotation, Track
from .detect import (
    Detection,
    DetectorBackend,
    ExternalDetector,
    ImageRef,
    NoPlateFoundError,
    OracleCharClassifier,
    SimulatedDetector,
    detect,
    lp_stage,
    vehicle_stage,
)
from .evaluation import (
    STAGE_ORDER,
    FrameReading,
    MatchResult,
    RecognitionReport,
    StageMetrics,
    StageTimer,
    TimingReport,
    match_detections,
    recognition_rates,
    render_report_jsonl,
    render_report_text,
    timing_report,
)
from .geometry import enlarge_to_aspect, expand_margin, shift
from .netspec import builtin_archs, parse_descriptor
from .recognize import CharClassifierBackend, LPString, read_plate
from .temporal import EmptyTrackError, Reading, TrackPredictions, majority_vote

# Class indices used by the simulated vehicle detector when the chosen
# architecture distinguishes vehicle types.
CAR_CLASS_ID = 0
MOTORCYCLE_CLASS_ID = 1


def frame_key(track_id: str, frame_index: int) -> str:
    """Stable per-frame identifier; also the backend RNG derivation key."""
    return f"{track_id}/{frame_index:02d}"


def _arch_classes(name: str) -> int:
    builtin = builtin_archs().get(name)
    if builtin is not None:
        return builtin.classes
    path = Path(name)
    if path.is_file():
        return parse_descriptor(path.read_text()).classes
    return 1


@dataclass(frozen=True)
class Backends:
    """One detector per stage plus the character classifier."""

    vehicle: DetectorBackend
    lp: DetectorBackend
    chars: DetectorBackend
    classifier: CharClassifierBackend


class _ExternalClassifier:
    """Counterpart of ExternalDetector for the recognition stage."""

    def classify(self, ref: ImageRef) -> tuple[str, float]:
        from .detect import BackendUnavailableError

        raise BackendUnavailableError(
            "char_recognition: external inference backend not bundled; use backend=simulated"
        )


def build_backends(tracks: Sequence[Track], config: PipelineConfig) -> Backends:
    """Annotation-driven simulated backends, or failing external stubs."""
    if config.backend == "external":
        return Backends(
            vehicle=ExternalDetector("vehicle_detection"),
            lp=ExternalDetector("lp_detection"),
            chars=ExternalDetector("char_segmentation"),
            classifier=_ExternalClassifier(),
        )
    # All run randomness hangs off the master seed; the noise model's own
    # seed field only matters when constructing detectors directly.
    noise = dc_replace(config.noise, seed=config.seed)
    two_class = _arch_classes(config.vehicle.arch) >= 2
    vehicles: dict[str, list[tuple[int, object]]] = {}
    plates: dict[str, list[tuple[int, object]]] = {}
    chars: dict[str, list[tuple[int, object]]] = {}
    labels: dict[str, list[tuple[str, object]]] = {}
    for track in tracks:
        for i, f in enumerate(track.frames):
            fk = frame_key(track.vehicle_id, i)
            class_id = (
                MOTORCYCLE_CLASS_ID
                if two_class and f.vehicle.vtype is VehicleType.MOTORCYCLE
                else CAR_CLASS_ID
            )
            vehicles[fk] = [(class_id, f.vehicle.box)]
            plates[fk] = [(0, f.plate.box)]
            chars[fk] = [(0, c) for c in f.chars]
            labels[fk] = list(zip(f.plate.text.compact, f.chars))
    return Backends(
        vehicle=SimulatedDetector("vehicle_detection", vehicles, noise, config.frame),
        lp=SimulatedDetector("lp_detection", plates, noise, config.frame),
        chars=SimulatedDetector("char_segmentation", chars, noise, config.frame),
        classifier=OracleCharClassifier(labels, seed=config.seed),
    )


class _TimedClassifier:
    """Wraps a classifier so each slot call lands in the stage timer."""

    def __init__(self, inner: CharClassifierBackend, timer: StageTimer):
        self._inner = inner
        self._timer = timer

    def classify(self, ref: ImageRef) -> tuple[str, float]:
        with self._timer.timed("char_recognition"):
            return self._inner.classify(ref)


@dataclass
class FrameResult:
    """Reading plus per-stage (tp, fp, fn) and timings for one frame."""

    track_id: str
    frame_index: int
    reading: FrameReading
    counts: dict[str, tuple[int, int, int]]
    timer: StageTimer


def _triple(m: MatchResult) -> tuple[int, int, int]:
    return (m.tp, m.fp, m.fn)


def process_frame(
    track_id: str,
    index: int,
    ann: FrameAnnotation,
    backends: Backends,
    config: PipelineConfig,
    clock: Callable[[], float] | None = None,
) -> FrameResult:
    timer = StageTimer() if clock is None else StageTimer(clock)
    fk = frame_key(track_id, index)
    counts: dict[str, tuple[int, int, int]] = {}

    def negative(vehicle_found: bool) -> FrameResult:
        # Stages that never ran still owe their ground truth as misses,
        # keeping tp + fn equal to the ground-truth count everywhere.
        for name, gt in (
            ("lp_detection", 1),
            ("char_segmentation", PLATE_LENGTH),
            ("char_recognition", PLATE_LENGTH),
        ):
            counts.setdefault(name, (0, 0, gt))
        reading = FrameReading(track_id, index, vehicle_found=vehicle_found)
        return FrameResult(track_id, index, reading, counts, timer)

    with timer.timed("vehicle_detection"):
        vehicles = vehicle_stage(backends.vehicle, fk, config.frame, config.vehicle)
    counts["vehicle_detection"] = _triple(
        match_detections([d for d, _ in vehicles], [ann.vehicle.box])
    )
    if not vehicles:
        return negative(False)

    best, patch = vehicles[0]
    vtype = (
        VehicleType.MOTORCYCLE
        if best.class_id == MOTORCYCLE_CLASS_ID
        else VehicleType.CAR
    )

    try:
        with timer.timed("lp_detection"):
            lp = lp_stage(backends.lp, fk, patch, config.frame, config.lp)
    except NoPlateFoundError:
        return negative(True)
    counts["lp_detection"] = _triple(match_detections([lp], [ann.plate.box]))

    lp_patch = enlarge_to_aspect(
        expand_margin(lp.box, config.lp.margin, config.frame),
        config.lp_aspect_target,
        config.frame,
    )
    with timer.timed("char_segmentation"):
        char_dets = detect(backends.chars, ImageRef(fk, lp_patch), config.charseg)
    gt_local = [shift(c, -lp_patch.x, -lp_patch.y) for c in ann.chars]
    candidates = [CharCandidate(d.box, d.confidence) for d in char_dets]
    try:
        resolved = resolve_overlaps(candidates, vtype)
    except UnderSegmentationError:
        counts["char_segmentation"] = _triple(match_detections(char_dets, gt_local))
        return negative(True)
    seg_dets = [Detection(0, c.confidence, c.box) for c in resolved]
    counts["char_segmentation"] = _triple(match_detections(seg_dets, gt_local))

    ordered = order_characters(resolved, vtype)
    plate, confidences = read_plate(
        fk,
        ordered,
        lp_patch,
        config.letters,
        config.digits,
        _TimedClassifier(backends.classifier, timer),
    )
    correct = sum(1 for a, b in zip(plate.slots, ann.plate.text.slots) if a == b)
    # A wrongly read slot is both a spurious label and a missed one.
    counts["char_recognition"] = (correct, PLATE_LENGTH - correct, PLATE_LENGTH - correct)
    reading = FrameReading(track_id, index, True, plate, confidences)
    return FrameResult(track_id, index, reading, counts, timer)


def fuse_readings(frame_readings: Sequence[FrameReading]) -> dict[str, LPString | None]:
    """Per-track majority vote over the positive frame readings."""
    votes: dict[str, TrackPredictions] = {}
    order: list[str] = []
    for fr in frame_readings:
        if fr.track_id not in votes:
            votes[fr.track_id] = TrackPredictions(fr.track_id)
            order.append(fr.track_id)
        if fr.reading is not None:
            votes[fr.track_id].add(
                Reading(fr.frame_index, fr.reading.compact, fr.confidences)
            )
    fused: dict[str, LPString | None] = {}
    for track_id in order:
        try:
            fused[track_id] = LPString.from_text(majority_vote(votes[track_id]))
        except EmptyTrackError:
            fused[track_id] = None
    return fused


@dataclass
class RunResult:
    """Everything a finished run produced, before serialization."""

    results: list[FrameResult]
    fused: dict[str, LPString | None]
    stages: dict[str, StageMetrics]
    timer: StageTimer
    recognition: RecognitionReport
    truth: dict[str, LPString]
    track_frames: dict[str, int]

    @property
    def frame_readings(self) -> list[FrameReading]:
        return [r.reading for r in self.results]


def run_pipeline(
    tracks: Sequence[Track],
    config: PipelineConfig,
    clock: Callable[[], float] | None = None,
) -> RunResult:
    backends = build_backends(tracks, config)
    tasks = [(t.vehicle_id, i, f) for t in tracks for i, f in enumerate(t.frames)]
    if config.workers <= 1:
        results = [process_frame(tid, i, f, backends, config, clock) for tid, i, f in tasks]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(
                pool.map(lambda a: process_frame(*a, backends, config, clock), tasks)
            )
    results.sort(key=lambda r: (r.track_id, r.frame_index))

    stages = {name: StageMetrics(stage=name) for name in STAGE_ORDER}
    timer = StageTimer() if clock is None else StageTimer(clock)
    for r in results:
        for name, (tp, fp, fn) in r.counts.items():
            stages[name].add_counts(tp, fp, fn)
        timer.merge(r.timer)

    frame_readings = [r.reading for r in results]
    fused = fuse_readings(frame_readings)
    truth = {t.vehicle_id: t.plate_text for t in tracks}
    track_frames = {t.vehicle_id: len(t.frames) for t in tracks}
    recognition = recognition_rates(frame_readings, fused, truth, track_frames)
    return RunResult(results, fused, stages, timer, recognition, truth, track_frames)


# --- run artifacts ----------------------------------------------------------

READINGS_NAME = "readings.jsonl"
FUSED_NAME = "fused.jsonl"
STAGE_LOG_NAME = "stage_log.jsonl"
REPORT_TEXT_NAME = "report.txt"
REPORT_JSONL_NAME = "report.jsonl"
CONFIG_ECHO_NAME = "config.txt"
TIMING_NAME = "timing.txt"

# Every artifact except timing.txt is a pure function of (config, data,
# seed); timing.txt carries wall-clock means and is the one file allowed
# to differ between otherwise identical runs.
DETERMINISTIC_ARTIFACTS = (
    READINGS_NAME,
    FUSED_NAME,
    STAGE_LOG_NAME,
    REPORT_TEXT_NAME,
    REPORT_JSONL_NAME,
    CONFIG_ECHO_NAME,
)


def render_timing_text(report: TimingReport) -> str:
    lines = ["stage                  mean_ms  multiplicity  frame_ms"]
    for row in report.rows:
        lines.append(
            f"{row.stage:<20} {row.mean_ms:9.4f}  {row.multiplicity:12d}  {row.frame_cost_ms:8.4f}"
        )
    lines.append(
        f"end-to-end {report.end_to_end_ms:.4f} ms per frame ({round(report.fps)} FPS)"
    )
    return "\n".join(lines) + "\n"


def write_run_outputs(result: RunResult, config: PipelineConfig, out_dir: str | Path) -> None:
    """Serialize a run: logs, fused readings, reports, config echo, timing."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    reading_lines = []
    stage_lines = []
    for r in result.results:
        fr = r.reading
        reading_lines.append(
            json.dumps(
                {
                    "confidences": list(fr.confidences) if fr.confidences else None,
                    "frame": fr.frame_index,
                    "plate": fr.reading.text if fr.reading else None,
                    "track": fr.track_id,
                    "vehicle_found": fr.vehicle_found,
                },
                sort_keys=True,
            )
        )
        for name in STAGE_ORDER:
            if name not in r.counts:
                continue
            tp, fp, fn = r.counts[name]
            stage_lines.append(
                json.dumps(
                    {
                        "fn": fn,
                        "fp": fp,
                        "frame": r.frame_index,
                        "stage": name,
                        "tp": tp,
                        "track": r.track_id,
                    },
                    sort_keys=True,
                )
            )
    (out / READINGS_NAME).write_text("\n".join(reading_lines) + "\n")
    (out / STAGE_LOG_NAME).write_text("\n".join(stage_lines) + "\n")

    fused_lines = [
        json.dumps(
            {
                "frames": result.track_frames[track_id],
                "plate": fused.text if fused else None,
                "track": track_id,
                "truth": result.truth[track_id].text,
            },
            sort_keys=True,
        )
        for track_id, fused in sorted(result.fused.items())
    ]
    (out / FUSED_NAME).write_text("\n".join(fused_lines) + "\n")

    ordered_stages = [result.stages[name] for name in STAGE_ORDER]
    (out / REPORT_TEXT_NAME).write_text(
        render_report_text(ordered_stages, result.recognition)
    )
    (out / REPORT_JSONL_NAME).write_text(
        render_report_jsonl(ordered_stages, result.recognition)
    )
    (out / CONFIG_ECHO_NAME).write_text(format_config(config))
    (out / TIMING_NAME).write_text(render_timing_text(timing_report(result.timer)))


def replay_logs(out_dir: str | Path) -> tuple[list[StageMetrics], RecognitionReport]:
    """Rebuild the evaluation report from a run directory's logs alone."""
    out = Path(out_dir)
    stages = {name: StageMetrics(stage=name) for name in STAGE_ORDER}
    for line in (out / STAGE_LOG_NAME).read_text().splitlines():
        rec = json.loads(line)
        stages[rec["stage"]].add_counts(rec["tp"], rec["fp"], rec["fn"])

    frame_readings = []
    for line in (out / READINGS_NAME).read_text().splitlines():
        rec = json.loads(line)
        frame_readings.append(
            FrameReading(
                track_id=rec["track"],
                frame_index=rec["frame"],
                vehicle_found=rec["vehicle_found"],
                reading=LPString.from_text(rec["plate"]) if rec["plate"] else None,
                confidences=tuple(rec["confidences"]) if rec["confidences"] else None,
            )
        )

    fused: dict[str, LPString | None] = {}
    truth: dict[str, LPString] = {}
    track_frames: dict[str, int] = {}
    for line in (out / FUSED_NAME).read_text().splitlines():
        rec = json.loads(line)
        fused[rec["track"]] = LPString.from_text(rec["plate"]) if rec["plate"] else None
        truth[rec["track"]] = LPString.from_text(rec["truth"])
        track_frames[rec["track"]] = rec["frames"]

    recognition = recognition_rates(frame_readings, fused, truth, track_frames)
    return [stages[name] for name in STAGE_ORDER], recognition
