"""Evaluation protocol: matching, stage metrics, rates, timing, maps.

Detection correctness is IoU >= 0.5 against ground truth with greedy
one-to-one matching in descending confidence order.  Recognition is
scored at three aggregation levels: per frame, per vehicle after
temporal fusion, and frame-weighted per vehicle (tracks with more
frames count proportionally more).  Timing uses an injectable clock so
the harness is testable with fake time; the end-to-end cost counts the
character-recognition stage seven times, once per plate slot.
"""

from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .detect import Detection
from .geometry import BBox, FrameDims, iou
from .recognize import LETTERS, LPString

IOU_MATCH_MIN = 0.5


# --- detection matching -----------------------------------------------------


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: tuple[tuple[int, int], ...]  # (prediction index, ground-truth index)


def match_detections(
    preds: Sequence[Detection], gts: Sequence[BBox], iou_min: float = IOU_MATCH_MIN
) -> MatchResult:
    """Greedy one-to-one matching by descending prediction confidence.

    Each prediction claims the unmatched ground truth with the highest
    IoU, provided it reaches ``iou_min``; ties go to the lowest index.
    Always: tp + fn = len(gts) and tp + fp = len(preds).
    """
    if not (0.0 < iou_min <= 1.0):
        raise ValueError(f"iou_min must be in (0, 1], got {iou_min}")
    order = sorted(
        range(len(preds)),
        key=lambda i: (-preds[i].confidence, preds[i].box.x, preds[i].box.y, preds[i].class_id),
    )
    taken = [False] * len(gts)
    pairs = []
    for pi in order:
        best_gt, best_v = None, 0.0
        for gi, gt in enumerate(gts):
            if taken[gi]:
                continue
            v = iou(preds[pi].box, gt)
            if v >= iou_min and (best_gt is None or v > best_v):
                best_gt, best_v = gi, v
        if best_gt is not None:
            taken[best_gt] = True
            pairs.append((pi, best_gt))
    tp = len(pairs)
    return MatchResult(tp=tp, fp=len(preds) - tp, fn=len(gts) - tp, pairs=tuple(sorted(pairs)))


# --- stage metrics ----------------------------------------------------------


@dataclass
class StageMetrics:
    """Accumulating detection/recognition counts for one pipeline stage."""

    stage: str
    tp: int = 0
    fp: int = 0
    fn: int = 0
    inputs: int = 0
    total_time_ms: float = 0.0
    timed_inputs: int = 0

    @property
    def gt_count(self) -> int:
        return self.tp + self.fn

    @property
    def recall(self) -> float:
        return self.tp / self.gt_count if self.gt_count else 0.0

    @property
    def precision(self) -> float:
        total = self.tp + self.fp
        return self.tp / total if total else 0.0

    @property
    def mean_time_ms(self) -> float:
        return self.total_time_ms / self.timed_inputs if self.timed_inputs else 0.0

    @property
    def fps(self) -> float:
        mean = self.mean_time_ms
        return 1000.0 / mean if mean > 0 else 0.0

    def add_match(self, m: MatchResult) -> None:
        self.tp += m.tp
        self.fp += m.fp
        self.fn += m.fn
        self.inputs += 1

    def add_counts(self, tp: int, fp: int, fn: int) -> None:
        self.tp += tp
        self.fp += fp
        self.fn += fn
        self.inputs += 1

    def merge(self, other: "StageMetrics") -> None:
        if other.stage != self.stage:
            raise ValueError(f"cannot merge {other.stage!r} into {self.stage!r}")
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.inputs += other.inputs
        self.total_time_ms += other.total_time_ms
        self.timed_inputs += other.timed_inputs


# --- recognition rates ------------------------------------------------------


@dataclass(frozen=True)
class FrameReading:
    """Outcome of one frame: was a vehicle found, and what was read."""

    track_id: str
    frame_index: int
    vehicle_found: bool
    reading: LPString | None = None
    confidences: tuple[float, ...] | None = None


@dataclass(frozen=True)
class RecognitionReport:
    """Recognition rates at frame, vehicle, and frame-weighted levels."""

    frames_considered: int
    frames_all_correct: int
    frames_geq6: int
    frames_letters_correct: int
    frames_digits_correct: int
    chars_correct: int
    vehicles_total: int
    vehicles_all_correct: int
    vehicles_geq6: int
    frame_weight_correct: int
    frame_weight_total: int

    @property
    def frame_all_correct_rate(self) -> float:
        return _ratio(self.frames_all_correct, self.frames_considered)

    @property
    def frame_geq6_rate(self) -> float:
        return _ratio(self.frames_geq6, self.frames_considered)

    @property
    def letters_rate(self) -> float:
        return _ratio(self.frames_letters_correct, self.frames_considered)

    @property
    def digits_rate(self) -> float:
        return _ratio(self.frames_digits_correct, self.frames_considered)

    @property
    def char_accuracy(self) -> float:
        """Per-character accuracy over all considered frames (not per-plate)."""
        return _ratio(self.chars_correct, 7 * self.frames_considered)

    @property
    def vehicle_rate(self) -> float:
        return _ratio(self.vehicles_all_correct, self.vehicles_total)

    @property
    def vehicle_geq6_rate(self) -> float:
        return _ratio(self.vehicles_geq6, self.vehicles_total)

    @property
    def frame_weighted_rate(self) -> float:
        return _ratio(self.frame_weight_correct, self.frame_weight_total)

    def to_dict(self) -> dict:
        return {
            "frames_considered": self.frames_considered,
            "frames_all_correct": self.frames_all_correct,
            "frames_geq6": self.frames_geq6,
            "frame_all_correct_rate": self.frame_all_correct_rate,
            "frame_geq6_rate": self.frame_geq6_rate,
            "letters_rate": self.letters_rate,
            "digits_rate": self.digits_rate,
            "char_accuracy": self.char_accuracy,
            "vehicles_total": self.vehicles_total,
            "vehicles_all_correct": self.vehicles_all_correct,
            "vehicles_geq6": self.vehicles_geq6,
            "vehicle_rate": self.vehicle_rate,
            "vehicle_geq6_rate": self.vehicle_geq6_rate,
            "frame_weighted_rate": self.frame_weighted_rate,
        }


def _ratio(num: int, denom: int) -> float:
    return num / denom if denom else 0.0


def _correct_slots(reading: LPString | None, truth: LPString) -> int:
    if reading is None:
        return 0
    return sum(1 for a, b in zip(reading.slots, truth.slots) if a == b)


def recognition_rates(
    frame_readings: Sequence[FrameReading],
    fused: Mapping[str, LPString | None],
    truth: Mapping[str, LPString],
    track_frames: Mapping[str, int],
) -> RecognitionReport:
    """Score per-frame and fused readings against ground-truth plates.

    Frame-level rates are over frames where a vehicle was found; a found
    vehicle with no reading scores zero correct characters.  Vehicle
    rates cover every track in ``truth`` (missing or None fused readings
    count as wrong).  The frame-weighted rate weights each track by its
    ``track_frames`` count.
    """
    considered = all_ok = geq6 = letters_ok = digits_ok = chars_ok = 0
    for fr in frame_readings:
        if not fr.vehicle_found:
            continue
        gt = truth[fr.track_id]
        considered += 1
        n = _correct_slots(fr.reading, gt)
        chars_ok += n
        if n == 7:
            all_ok += 1
        if n >= 6:
            geq6 += 1
        if fr.reading is not None:
            if fr.reading.letters == gt.letters:
                letters_ok += 1
            if fr.reading.digits == gt.digits:
                digits_ok += 1

    v_all = v_geq6 = w_correct = w_total = 0
    for track_id, gt in truth.items():
        fused_reading = fused.get(track_id)
        n = _correct_slots(fused_reading, gt)
        weight = track_frames.get(track_id, 0)
        w_total += weight
        if n == 7:
            v_all += 1
            w_correct += weight
        if n >= 6:
            v_geq6 += 1

    return RecognitionReport(
        frames_considered=considered,
        frames_all_correct=all_ok,
        frames_geq6=geq6,
        frames_letters_correct=letters_ok,
        frames_digits_correct=digits_ok,
        chars_correct=chars_ok,
        vehicles_total=len(truth),
        vehicles_all_correct=v_all,
        vehicles_geq6=v_geq6,
        frame_weight_correct=w_correct,
        frame_weight_total=w_total,
    )


# --- timing -----------------------------------------------------------------

# Per-frame cost multiplicity: character recognition runs once per slot.
STAGE_MULTIPLICITY = {
    "vehicle_detection": 1,
    "lp_detection": 1,
    "char_segmentation": 1,
    "char_recognition": 7,
}

STAGE_ORDER = ["vehicle_detection", "lp_detection", "char_segmentation", "char_recognition"]


class StageTimer:
    """Accumulates per-stage wall time; the clock is injectable."""

    def __init__(self, clock: Callable[[], float] = time.perf_counter):
        self._clock = clock
        self.totals_ms: dict[str, float] = {}
        self.counts: dict[str, int] = {}

    @contextmanager
    def timed(self, stage: str):
        start = self._clock()
        try:
            yield
        finally:
            elapsed_ms = (self._clock() - start) * 1000.0
            self.totals_ms[stage] = self.totals_ms.get(stage, 0.0) + elapsed_ms
            self.counts[stage] = self.counts.get(stage, 0) + 1

    def record(self, stage: str, elapsed_ms: float) -> None:
        self.totals_ms[stage] = self.totals_ms.get(stage, 0.0) + elapsed_ms
        self.counts[stage] = self.counts.get(stage, 0) + 1

    def merge(self, other: "StageTimer") -> None:
        for stage, total in other.totals_ms.items():
            self.totals_ms[stage] = self.totals_ms.get(stage, 0.0) + total
            self.counts[stage] = self.counts.get(stage, 0) + other.counts[stage]

    def mean_ms(self, stage: str) -> float:
        n = self.counts.get(stage, 0)
        return self.totals_ms[stage] / n if n else 0.0


@dataclass(frozen=True)
class TimingRow:
    stage: str
    mean_ms: float
    multiplicity: int

    @property
    def frame_cost_ms(self) -> float:
        return self.mean_ms * self.multiplicity

    @property
    def fps(self) -> float:
        return 1000.0 / self.mean_ms if self.mean_ms > 0 else 0.0


@dataclass(frozen=True)
class TimingReport:
    rows: tuple[TimingRow, ...]

    @property
    def end_to_end_ms(self) -> float:
        return sum(r.frame_cost_ms for r in self.rows)

    @property
    def fps(self) -> float:
        total = self.end_to_end_ms
        return 1000.0 / total if total > 0 else 0.0


def timing_report(
    timer: StageTimer, multiplicity: Mapping[str, int] | None = None
) -> TimingReport:
    """Per-stage mean cost plus the multiplicity-weighted frame total."""
    mult = dict(STAGE_MULTIPLICITY if multiplicity is None else multiplicity)
    rows = []
    known = [s for s in STAGE_ORDER if s in timer.counts]
    extra = sorted(s for s in timer.counts if s not in STAGE_ORDER)
    for stage in known + extra:
        rows.append(TimingRow(stage, timer.mean_ms(stage), mult.get(stage, 1)))
    return TimingReport(rows=tuple(rows))


# --- spatial and frequency summaries ---------------------------------------


def heatmap(boxes: Sequence[BBox], frame: FrameDims, bins: int) -> np.ndarray:
    """Log-normalized cell-coverage counts on a bins x bins grid.

    A box increments every cell its rectangle overlaps.  Intensity is
    log(1 + count) / log(1 + max count); an empty input gives all zeros.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    counts = np.zeros((bins, bins), dtype=np.int64)
    cw = frame.width / bins
    ch = frame.height / bins
    for b in boxes:
        c0 = max(0, min(bins - 1, math.floor(b.x / cw)))
        c1 = max(0, min(bins - 1, math.ceil(b.x2 / cw) - 1))
        r0 = max(0, min(bins - 1, math.floor(b.y / ch)))
        r1 = max(0, min(bins - 1, math.ceil(b.y2 / ch) - 1))
        counts[r0 : r1 + 1, c0 : c1 + 1] += 1
    top = counts.max()
    if top == 0:
        return np.zeros((bins, bins), dtype=float)
    return np.log1p(counts) / np.log1p(top)


def heatmap_text(grid: np.ndarray) -> str:
    """Plain-text grid, one row per line, 3-decimal intensities."""
    lines = [" ".join(f"{v:.3f}" for v in row) for row in grid]
    return "\n".join(lines) + "\n"


def heatmap_png(grid: np.ndarray, path: str) -> None:
    """Grayscale image file; intensity 1.0 maps to white."""
    from PIL import Image

    pixels = np.clip(np.rint(grid * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path, format="PNG")


def letter_histogram(plates: Iterable[LPString]) -> dict[str, int]:
    """Counts over A-Z from the three letter slots of each plate."""
    counts = {c: 0 for c in LETTERS}
    for p in plates:
        for c in p.letters:
            counts[c] += 1
    return counts


# --- report rendering -------------------------------------------------------


def render_report_text(
    stages: Sequence[StageMetrics],
    recognition: RecognitionReport,
    timing: TimingReport | None = None,
) -> str:
    """Human-readable summary table."""
    lines = []
    lines.append("stage                 recall  precision       tp       fp       fn")
    for s in stages:
        lines.append(
            f"{s.stage:<20} {s.recall:7.4f}  {s.precision:9.4f} {s.tp:8d} {s.fp:8d} {s.fn:8d}"
        )
    lines.append("")
    r = recognition
    lines.append("recognition rates")
    lines.append(f"  frames considered        {r.frames_considered}")
    lines.append(f"  frames all correct       {r.frames_all_correct}  ({r.frame_all_correct_rate:.4f})")
    lines.append(f"  frames >= 6 correct      {r.frames_geq6}  ({r.frame_geq6_rate:.4f})")
    lines.append(f"  letters all correct      {r.letters_rate:.4f}")
    lines.append(f"  digits all correct       {r.digits_rate:.4f}")
    lines.append(f"  per-character accuracy   {r.char_accuracy:.4f}")
    lines.append(f"  vehicles correct (fused) {r.vehicles_all_correct}/{r.vehicles_total}  ({r.vehicle_rate:.4f})")
    lines.append(f"  vehicles >= 6 (fused)    {r.vehicles_geq6}/{r.vehicles_total}  ({r.vehicle_geq6_rate:.4f})")
    lines.append(f"  frame-weighted (fused)   {r.frame_weighted_rate:.4f}")
    if timing is not None and timing.rows:
        lines.append("")
        lines.append("timing                  mean ms  x  per-frame ms")
        for row in timing.rows:
            lines.append(
                f"  {row.stage:<20} {row.mean_ms:8.4f}  {row.multiplicity}  {row.frame_cost_ms:10.4f}"
            )
        lines.append(f"  end-to-end           {timing.end_to_end_ms:.4f} ms  ({round(timing.fps)} FPS)")
    return "\n".join(lines) + "\n"


def render_report_jsonl(
    stages: Sequence[StageMetrics], recognition: RecognitionReport
) -> str:
    """Line-delimited records: one per stage plus one recognition record."""
    lines = []
    for s in stages:
        lines.append(
            json.dumps(
                {
                    "record": "stage",
                    "stage": s.stage,
                    "tp": s.tp,
                    "fp": s.fp,
                    "fn": s.fn,
                    "inputs": s.inputs,
                    "recall": s.recall,
                    "precision": s.precision,
                },
                sort_keys=True,
            )
        )
    payload = {"record": "recognition"}
    payload.update(recognition.to_dict())
    lines.append(json.dumps(payload, sort_keys=True))
    return "\n".join(lines) + "\n"
