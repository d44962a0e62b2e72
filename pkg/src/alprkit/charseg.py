"""Character segmentation post-processing.

A plate patch detector proposes character boxes; real plates here carry
exactly seven characters, so the candidate set must be reduced to seven.
Pairs that overlap strongly are fragments of one character and are
merged; when nothing overlaps enough, the weakest candidate is a
spurious detection and is dropped.  The overlap threshold differs by
vehicle type: motorcycle plates stack characters in two rows with tight
vertical spacing, so only near-duplicates (IoU >= 0.75) may merge, while
single-row car plates merge at IoU >= 0.25.

Ordering then turns the seven boxes into reading order: left to right
for cars, top row (3) then bottom row (4) for motorcycles.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .geometry import BBox, iou


class VehicleType(str, Enum):
    CAR = "car"
    MOTORCYCLE = "motorcycle"


PLATE_LENGTH = 7

MERGE_IOU = {
    VehicleType.CAR: 0.25,
    VehicleType.MOTORCYCLE: 0.75,
}


class UnderSegmentationError(ValueError):
    """Fewer candidates than plate positions: nothing sound to output."""

    def __init__(self, got: int):
        super().__init__(f"need >= {PLATE_LENGTH} character candidates, got {got}")
        self.got = got


@dataclass(frozen=True)
class CharCandidate:
    """One proposed character region with the detector's confidence."""

    box: BBox
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence out of [0, 1]: {self.confidence}")


def _canonical_key(c: CharCandidate) -> tuple:
    return (c.box.x, c.box.y, c.box.w, c.box.h, c.confidence)


def _merge_pair(a: CharCandidate, b: CharCandidate) -> CharCandidate:
    """Union rectangle; the merged confidence is the stronger of the two."""
    x1 = min(a.box.x, b.box.x)
    y1 = min(a.box.y, b.box.y)
    x2 = max(a.box.x2, b.box.x2)
    y2 = max(a.box.y2, b.box.y2)
    return CharCandidate(BBox(x1, y1, x2 - x1, y2 - y1), max(a.confidence, b.confidence))


def resolve_overlaps(
    candidates: list[CharCandidate],
    vehicle_type: VehicleType,
    threshold: float | None = None,
) -> list[CharCandidate]:
    """Reduce a candidate set to exactly PLATE_LENGTH boxes.

    While more than seven remain: merge the highest-IoU pair if it meets
    the merge threshold, otherwise drop the lowest-confidence candidate.
    Exactly seven candidates pass through untouched.  The result is
    independent of input order (candidates are canonicalized first) and
    is returned sorted by the canonical (x, y, w, h, confidence) key.

    Raises UnderSegmentationError below seven candidates.
    """
    if threshold is None:
        threshold = MERGE_IOU[vehicle_type]
    if len(candidates) < PLATE_LENGTH:
        raise UnderSegmentationError(len(candidates))

    pool = sorted(candidates, key=_canonical_key)
    while len(pool) > PLATE_LENGTH:
        best_iou = 0.0
        best_pair = None
        for i in range(len(pool)):
            for j in range(i + 1, len(pool)):
                v = iou(pool[i].box, pool[j].box)
                if v > best_iou:
                    best_iou = v
                    best_pair = (i, j)
        if best_pair is not None and best_iou >= threshold:
            i, j = best_pair
            merged = _merge_pair(pool[i], pool[j])
            del pool[j]
            del pool[i]
            # Re-insert in canonical position to keep tie-breaks stable.
            pool.append(merged)
            pool.sort(key=_canonical_key)
        else:
            weakest = min(range(len(pool)), key=lambda k: (pool[k].confidence, _canonical_key(pool[k])))
            del pool[weakest]
    return pool


def order_characters(
    chars: list[CharCandidate], vehicle_type: VehicleType
) -> list[CharCandidate]:
    """Arrange exactly seven characters into reading order.

    Cars: ascending center x.  Motorcycles: split by center y into the
    top three and bottom four, each row ascending center x.
    """
    if len(chars) != PLATE_LENGTH:
        raise ValueError(f"expected exactly {PLATE_LENGTH} characters, got {len(chars)}")
    if vehicle_type is VehicleType.CAR:
        return sorted(chars, key=lambda c: (c.box.center[0], c.box.center[1]))
    by_y = sorted(chars, key=lambda c: (c.box.center[1], c.box.center[0]))
    top = sorted(by_y[:3], key=lambda c: c.box.center[0])
    bottom = sorted(by_y[3:], key=lambda c: c.box.center[0])
    return top + bottom
