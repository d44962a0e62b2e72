"""Per-position voting across a track's frame readings."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from alprkit.temporal import (
    EmptyTrackError,
    Reading,
    TrackPredictions,
    majority_vote,
    vote_position,
)


def rd(idx, plate, conf=0.9):
    return Reading(idx, plate, tuple([conf] * 7))


class TestReading:
    def test_rejects_bad_lengths(self):
        with pytest.raises(ValueError):
            Reading(0, "ABC123", tuple([0.9] * 7))
        with pytest.raises(ValueError):
            Reading(0, "ABC1234", tuple([0.9] * 6))


class TestVotePosition:
    def test_plain_majority(self):
        assert vote_position([("A", 0.1), ("A", 0.1), ("B", 0.99)]) == "A"

    def test_count_tie_confidence_wins(self):
        assert vote_position([("A", 0.3), ("B", 0.8)]) == "B"

    def test_full_tie_lexicographic(self):
        assert vote_position([("B", 0.5), ("A", 0.5)]) == "A"
        assert vote_position([("Z", 0.5), ("0", 0.5)]) == "0"

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            vote_position([])


class TestMajorityVote:
    def test_unanimous(self):
        track = TrackPredictions("v1", [rd(i, "ABC1234") for i in range(5)])
        assert majority_vote(track) == "ABC1234"

    def test_outvotes_noise(self):
        track = TrackPredictions(
            "v1",
            [rd(0, "ABC1234"), rd(1, "ABC1234"), rd(2, "ABG1234"), rd(3, "XBC1234")],
        )
        assert majority_vote(track) == "ABC1234"

    def test_positions_vote_independently(self):
        track = TrackPredictions(
            "v1",
            [rd(0, "AXC1234"), rd(1, "ABY1234"), rd(2, "ABC1Z34")],
        )
        # Each position has a 2-1 majority for the true character.
        assert majority_vote(track) == "ABC1234"

    def test_confidence_breaks_count_tie(self):
        track = TrackPredictions(
            "v1",
            [
                Reading(0, "ABC1234", (0.9, 0.2, 0.9, 0.9, 0.9, 0.9, 0.9)),
                Reading(1, "AXC1234", (0.9, 0.8, 0.9, 0.9, 0.9, 0.9, 0.9)),
            ],
        )
        assert majority_vote(track)[1] == "X"

    def test_single_reading_passes_through(self):
        track = TrackPredictions("v1", [rd(3, "XYZ9876")])
        assert majority_vote(track) == "XYZ9876"

    def test_empty_track_raises(self):
        with pytest.raises(EmptyTrackError):
            majority_vote(TrackPredictions("v1", []))

    def test_duplicate_frame_rejected(self):
        track = TrackPredictions("v1", [rd(0, "ABC1234"), rd(0, "ABC1234")])
        with pytest.raises(ValueError, match="duplicate frame"):
            majority_vote(track)

    @given(
        st.lists(
            st.text(alphabet="ABC019", min_size=7, max_size=7),
            min_size=1,
            max_size=15,
        )
    )
    def test_result_chars_come_from_votes(self, plates):
        track = TrackPredictions("v", [rd(i, p) for i, p in enumerate(plates)])
        fused = majority_vote(track)
        for pos in range(7):
            assert fused[pos] in {p[pos] for p in plates}

    @given(st.text(alphabet="ABCXYZ0123456789", min_size=7, max_size=7), st.integers(1, 9))
    def test_unanimous_any_plate(self, plate, n):
        track = TrackPredictions("v", [rd(i, plate) for i in range(n)])
        assert majority_vote(track) == plate
