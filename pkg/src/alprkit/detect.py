"""Detector backends and the cascaded detection stages.

A backend receives an opaque image reference (frame id plus optional
patch rectangle) and returns candidate detections in patch-local
coordinates; it never receives pixel buffers.  The simulated backend
implements the contract from annotations alone: it answers queries by
perturbing the ground-truth boxes with a seeded noise model, which makes
the whole cascade runnable and byte-reproducible without any trained
weights.

Stage policies layered on top of a backend:

* vehicle stage: keep everything above the configured confidence
  threshold, expand each box by the stage margin for the next stage.
* plate stage: threshold forced to zero, keep only the single
  highest-confidence candidate, map it back to frame coordinates.

Calibration helpers derive the deployed threshold (half the largest
grid threshold with perfect validation recall) and stage margin
(smallest grid margin containing every inner ground truth, optionally
doubled for deployment).
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Protocol, Sequence

from .geometry import BBox, FrameDims, clip_to_frame, contains, expand_margin, intersect, iou, shift


class BackendUnavailableError(RuntimeError):
    """The backend cannot serve queries at all (distinct from no hits)."""


class NoPlateFoundError(RuntimeError):
    """The plate detector returned nothing for a vehicle patch."""


class CalibrationError(ValueError):
    """No grid value satisfies the calibration target."""


@dataclass(frozen=True)
class ImageRef:
    """Reference to a frame, or to a rectangular region of it."""

    frame_id: str
    patch: BBox | None = None

    def region(self, frame: FrameDims) -> BBox:
        return self.patch if self.patch is not None else frame.box


@dataclass(frozen=True)
class Detection:
    """One candidate box in the coordinate frame of the queried patch."""

    class_id: int
    confidence: float
    box: BBox

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence out of [0, 1]: {self.confidence}")


class SelectPolicy(str, Enum):
    ALL_ABOVE_THRESHOLD = "all-above-threshold"
    SINGLE_BEST = "single-best"


@dataclass(frozen=True)
class StageConfig:
    """Detection-stage policy knobs."""

    arch: str
    confidence_threshold: float = 0.25
    margin: float = 0.0
    select_policy: SelectPolicy = SelectPolicy.ALL_ABOVE_THRESHOLD

    def __post_init__(self):
        if not (0.0 <= self.confidence_threshold <= 1.0):
            raise ValueError(f"threshold out of [0, 1]: {self.confidence_threshold}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")


@dataclass(frozen=True)
class ConfidenceLaw:
    """Simulated confidence sampler parameters.

    True detections draw from [true_floor, 1]; with the floor at 1.0
    they are exactly 1.0.  False positives draw from [fp_low, fp_high].
    """

    true_floor: float = 1.0
    fp_low: float = 0.05
    fp_high: float = 0.45


@dataclass(frozen=True)
class NoiseModel:
    """Seeded perturbation model for the simulated backend."""

    seed: int = 0
    miss_rate: float = 0.0
    false_positive_rate: float = 0.0
    jitter: float = 0.0
    confidence_law: ConfidenceLaw = field(default_factory=ConfidenceLaw)

    def __post_init__(self):
        if not (0.0 <= self.miss_rate <= 1.0):
            raise ValueError(f"miss_rate out of [0, 1]: {self.miss_rate}")
        if self.false_positive_rate < 0:
            raise ValueError(f"false_positive_rate must be >= 0: {self.false_positive_rate}")
        if self.jitter < 0:
            raise ValueError(f"jitter must be >= 0: {self.jitter}")


class DetectorBackend(Protocol):
    def detect(self, ref: ImageRef) -> list[Detection]: ...


def _det_sort_key(d: Detection) -> tuple:
    return (-d.confidence, d.box.x, d.box.y, d.class_id)


def detect(backend: DetectorBackend, ref: ImageRef, stage: StageConfig) -> list[Detection]:
    """Run a backend and apply the stage's threshold and selection policy.

    Output is ordered by descending confidence, ties broken on
    (x, y, class_id) so results are stable.
    """
    raw = backend.detect(ref)
    kept = [d for d in raw if d.confidence >= stage.confidence_threshold]
    kept.sort(key=_det_sort_key)
    if stage.select_policy is SelectPolicy.SINGLE_BEST:
        return kept[:1]
    return kept


def vehicle_stage(
    backend: DetectorBackend, frame_id: str, frame: FrameDims, config: StageConfig
) -> list[tuple[Detection, BBox]]:
    """Full-frame vehicle detection plus the margin-expanded patch per hit.

    An empty list means the frame is negative: no vehicle, no reading.
    """
    dets = detect(backend, ImageRef(frame_id), config)
    return [(d, expand_margin(d.box, config.margin, frame)) for d in dets]


def lp_stage(
    backend: DetectorBackend, frame_id: str, patch: BBox, frame: FrameDims, config: StageConfig
) -> Detection:
    """Single best plate candidate inside a vehicle patch, frame coords.

    The confidence threshold is forced to zero: even very weak plate
    candidates are better than none, and exactly one is kept.
    """
    stage = StageConfig(
        arch=config.arch,
        confidence_threshold=0.0,
        margin=config.margin,
        select_policy=SelectPolicy.SINGLE_BEST,
    )
    dets = detect(backend, ImageRef(frame_id, patch), stage)
    if not dets:
        raise NoPlateFoundError(f"no plate candidate in {frame_id}")
    best = dets[0]
    mapped = clip_to_frame(shift(best.box, patch.x, patch.y), frame)
    return Detection(best.class_id, best.confidence, mapped)


# --- simulated backend ------------------------------------------------------

# A ground-truth object partially cut off by the patch edge still counts
# as visible while at least this fraction of it remains in view.
VISIBILITY_MIN_FRACTION = 0.25


class SimulatedDetector:
    """Annotation-driven backend: perturbs ground truth, reads no pixels.

    ``objects`` maps frame id -> (class_id, box) ground truths in frame
    coordinates.  Every query derives a private RNG from (seed, stage
    name, frame id, patch), so results are identical across repeated
    calls and independent of call order or worker count.
    """

    def __init__(
        self,
        stage_name: str,
        objects: Mapping[str, Sequence[tuple[int, BBox]]],
        noise: NoiseModel,
        frame: FrameDims,
    ):
        self.stage_name = stage_name
        self.objects = objects
        self.noise = noise
        self.frame = frame

    def _rng(self, ref: ImageRef) -> random.Random:
        p = ref.patch
        patch_key = "full" if p is None else f"{p.x!r},{p.y!r},{p.w!r},{p.h!r}"
        material = f"{self.noise.seed}|{self.stage_name}|{ref.frame_id}|{patch_key}"
        digest = hashlib.blake2b(material.encode(), digest_size=8).digest()
        return random.Random(int.from_bytes(digest, "big"))

    def _jittered(self, box: BBox, region: BBox, rng: random.Random) -> BBox:
        j = self.noise.jitter
        if j <= 0:
            return box
        x1 = box.x + rng.uniform(-j, j)
        y1 = box.y + rng.uniform(-j, j)
        x2 = box.x2 + rng.uniform(-j, j)
        y2 = box.y2 + rng.uniform(-j, j)
        if x2 - x1 < 1.0:
            x2 = x1 + 1.0
        if y2 - y1 < 1.0:
            y2 = y1 + 1.0
        jittered = BBox(x1, y1, x2 - x1, y2 - y1)
        inter = intersect(jittered, region)
        return inter if inter is not None else box

    def _poisson(self, lam: float, rng: random.Random) -> int:
        if lam <= 0:
            return 0
        # Knuth's product-of-uniforms sampler; lam is small here.
        limit = math.exp(-lam)
        k, p = 0, 1.0
        while True:
            p *= rng.random()
            if p <= limit:
                return k
            k += 1

    def _false_positive(self, region: BBox, rng: random.Random) -> BBox:
        w = max(1.0, region.w * rng.uniform(0.05, 0.4))
        h = max(1.0, region.h * rng.uniform(0.1, 0.6))
        w = min(w, region.w)
        h = min(h, region.h)
        x = region.x + rng.uniform(0, region.w - w)
        y = region.y + rng.uniform(0, region.h - h)
        return BBox(x, y, w, h)

    def detect(self, ref: ImageRef) -> list[Detection]:
        gts = self.objects.get(ref.frame_id)
        if gts is None:
            raise BackendUnavailableError(f"{self.stage_name}: unknown frame {ref.frame_id!r}")
        rng = self._rng(ref)
        region = ref.region(self.frame)
        law = self.noise.confidence_law
        out: list[Detection] = []
        for class_id, gt in gts:
            visible = intersect(gt, region)
            if visible is None or visible.area < VISIBILITY_MIN_FRACTION * gt.area:
                continue
            if self.noise.miss_rate > 0 and rng.random() < self.noise.miss_rate:
                continue
            box = self._jittered(visible, region, rng)
            conf = 1.0 if law.true_floor >= 1.0 else rng.uniform(law.true_floor, 1.0)
            out.append(Detection(class_id, conf, shift(box, -region.x, -region.y)))
        class_ids = sorted({cid for cid, _ in gts}) or [0]
        for _ in range(self._poisson(self.noise.false_positive_rate, rng)):
            box = self._false_positive(region, rng)
            conf = rng.uniform(law.fp_low, law.fp_high)
            cid = rng.choice(class_ids)
            out.append(Detection(cid, conf, shift(box, -region.x, -region.y)))
        out.sort(key=_det_sort_key)
        return out


class ExternalDetector:
    """Placeholder for a real inference runtime; always unavailable here."""

    def __init__(self, stage_name: str, model_path: str = ""):
        self.stage_name = stage_name
        self.model_path = model_path

    def detect(self, ref: ImageRef) -> list[Detection]:
        raise BackendUnavailableError(
            f"{self.stage_name}: external inference backend not bundled "
            f"(model {self.model_path!r}); use backend=simulated"
        )


# --- oracle character classifier -------------------------------------------


class OracleCharClassifier:
    """Label lookup against annotated characters, with fault injection.

    ``chars`` maps frame id -> (label, box) pairs in frame coordinates.
    A query patch is answered with the label of the max-IoU annotated
    character.  ``confusion`` optionally redirects specific labels to
    wrong ones (fault injection for recognition tests); confused answers
    get a mid-range confidence from the per-call RNG.
    """

    def __init__(
        self,
        chars: Mapping[str, Sequence[tuple[str, BBox]]],
        seed: int = 0,
        confusion: Mapping[str, str] | None = None,
    ):
        self.chars = chars
        self.seed = seed
        self.confusion = dict(confusion or {})

    def _rng(self, ref: ImageRef) -> random.Random:
        p = ref.patch
        patch_key = "full" if p is None else f"{p.x!r},{p.y!r},{p.w!r},{p.h!r}"
        material = f"{self.seed}|char-oracle|{ref.frame_id}|{patch_key}"
        digest = hashlib.blake2b(material.encode(), digest_size=8).digest()
        return random.Random(int.from_bytes(digest, "big"))

    def classify(self, ref: ImageRef) -> tuple[str, float]:
        gts = self.chars.get(ref.frame_id)
        if gts is None:
            raise BackendUnavailableError(f"char-oracle: unknown frame {ref.frame_id!r}")
        if ref.patch is None:
            raise ValueError("character classification needs a patch, not a full frame")
        best_label, best_iou = None, 0.0
        for label, box in gts:
            v = iou(box, ref.patch)
            if v > best_iou:
                best_label, best_iou = label, v
        if best_label is None:
            # Patch over no annotated character: deterministic junk label.
            best_label = "0"
        wrong = self.confusion.get(best_label)
        if wrong is not None:
            return wrong, self._rng(ref).uniform(0.25, 0.75)
        return best_label, 1.0


# --- calibration ------------------------------------------------------------

THRESHOLD_GRID_STEP = 0.005
MARGIN_GRID_STEP = 0.01


class MarginPolicy(str, Enum):
    DOUBLE = "double"
    KEEP = "keep"


def calibrate_threshold(
    records: Sequence[tuple[Sequence[Detection], Sequence[BBox]]],
    iou_min: float = 0.5,
    grid_step: float = THRESHOLD_GRID_STEP,
) -> float:
    """Half of the largest grid threshold with 100% validation recall.

    ``records`` pairs each validation frame's detections (frame
    coordinates) with its ground-truth boxes.  The largest grid multiple
    t such that every ground truth is still matched at confidence >= t
    equals the grid floor of the weakest true detection; the deployed
    value halves it to buy headroom on unseen data.

    Raises CalibrationError when some ground truth has no matching
    detection at all, or when the weakest match sits below one grid step
    (no positive threshold reaches 100% recall).
    """
    min_conf = None
    for frame_idx, (dets, gts) in enumerate(records):
        ordered = sorted(dets, key=_det_sort_key)
        used = [False] * len(ordered)
        for gt in gts:
            matched = None
            for i, d in enumerate(ordered):
                if not used[i] and iou(d.box, gt) >= iou_min:
                    matched = i
                    break
            if matched is None:
                raise CalibrationError(
                    f"validation frame {frame_idx}: ground truth {gt} has no detection at IoU >= {iou_min}"
                )
            used[matched] = True
            conf = ordered[matched].confidence
            min_conf = conf if min_conf is None else min(min_conf, conf)
    if min_conf is None:
        raise CalibrationError("no validation records supplied")
    steps = math.floor(min_conf / grid_step + 1e-9)
    if steps < 1:
        raise CalibrationError(
            f"weakest true detection at confidence {min_conf}; no positive grid threshold keeps 100% recall"
        )
    return (steps * grid_step) / 2.0


def calibrate_margin(
    pairs: Sequence[tuple[BBox, BBox]],
    frame: FrameDims,
    grid_step: float = MARGIN_GRID_STEP,
    max_margin: float = 1.0,
) -> float:
    """Smallest grid margin whose expansion contains every inner box.

    ``pairs`` holds (outer prediction, inner ground truth).  Margins are
    swept ascending on multiples of grid_step from 0.
    """
    if not pairs:
        raise CalibrationError("no calibration pairs supplied")
    steps = int(round(max_margin / grid_step))
    for k in range(steps + 1):
        margin = k * grid_step
        if all(contains(expand_margin(outer, margin, frame), inner) for outer, inner in pairs):
            return margin
    raise CalibrationError(f"no margin up to {max_margin} contains all inner boxes")


def deployed_margin(calibrated: float, policy: MarginPolicy) -> float:
    """Deployment value for a calibrated margin: doubled or kept as-is."""
    if policy is MarginPolicy.DOUBLE:
        return 2.0 * calibrated
    return calibrated
