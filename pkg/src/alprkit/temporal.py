"""Temporal fusion of per-frame plate readings.

A tracked vehicle yields one seven-character reading per frame in which
its plate was found.  Per character position, the readings vote: the
label seen most often wins.  Ties break first by the summed detector
confidence for that label at that position, then lexicographically so
the result is deterministic.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

PLATE_LENGTH = 7


class EmptyTrackError(ValueError):
    """A track with no usable readings cannot produce a fused plate."""


@dataclass(frozen=True)
class Reading:
    """One frame's plate string plus per-position confidences."""

    frame_index: int
    plate: str
    confidences: tuple[float, ...]

    def __post_init__(self):
        if len(self.plate) != PLATE_LENGTH:
            raise ValueError(f"plate must have {PLATE_LENGTH} characters, got {self.plate!r}")
        if len(self.confidences) != PLATE_LENGTH:
            raise ValueError(f"need {PLATE_LENGTH} confidences, got {len(self.confidences)}")


@dataclass
class TrackPredictions:
    """All readings collected for one vehicle track."""

    vehicle_id: str
    readings: list[Reading] = field(default_factory=list)

    def add(self, reading: Reading) -> None:
        self.readings.append(reading)


def vote_position(pairs: list[tuple[str, float]]) -> str:
    """Winner for one character slot from (label, confidence) pairs.

    Most frequent label wins; ties break by larger summed confidence,
    then by lexicographically smallest label.
    """
    if not pairs:
        raise ValueError("no votes for position")
    counts: dict[str, int] = defaultdict(int)
    conf_sums: dict[str, float] = defaultdict(float)
    for label, conf in pairs:
        counts[label] += 1
        conf_sums[label] += conf
    return min(counts, key=lambda c: (-counts[c], -conf_sums[c], c))


def majority_vote(track: TrackPredictions) -> str:
    """Fuse all readings of a track into one plate string.

    Raises EmptyTrackError when the track has no readings and ValueError
    when two readings claim the same frame index.
    """
    if not track.readings:
        raise EmptyTrackError(f"track {track.vehicle_id!r} has no readings")
    seen: set[int] = set()
    for r in track.readings:
        if r.frame_index in seen:
            raise ValueError(f"duplicate frame index {r.frame_index} in track {track.vehicle_id!r}")
        seen.add(r.frame_index)
    slots = []
    for pos in range(PLATE_LENGTH):
        pairs = [(r.plate[pos], r.confidences[pos]) for r in track.readings]
        slots.append(vote_position(pairs))
    return "".join(slots)
