"""Overlap resolution and reading-order tests."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from alprkit.charseg import (
    MERGE_IOU,
    PLATE_LENGTH,
    CharCandidate,
    UnderSegmentationError,
    VehicleType,
    order_characters,
    resolve_overlaps,
)
from alprkit.geometry import BBox, iou


def cand(x, y, w=10.0, h=20.0, conf=0.9):
    return CharCandidate(BBox(x, y, w, h), conf)


def seven_spaced(y=0.0, conf=0.9):
    return [cand(15.0 * i, y, conf=conf) for i in range(7)]


class TestMergeThresholds:
    def test_by_type(self):
        assert MERGE_IOU[VehicleType.CAR] == 0.25
        assert MERGE_IOU[VehicleType.MOTORCYCLE] == 0.75


class TestResolveOverlaps:
    def test_exactly_seven_untouched(self):
        chars = seven_spaced()
        got = resolve_overlaps(chars, VehicleType.CAR)
        assert sorted(got, key=lambda c: c.box.x) == chars

    def test_under_segmentation_raises(self):
        with pytest.raises(UnderSegmentationError) as exc:
            resolve_overlaps(seven_spaced()[:6], VehicleType.CAR)
        assert exc.value.got == 6

    def test_merges_overlapping_fragment(self):
        chars = seven_spaced()
        # A fragment nearly identical to char 0: IoU well above 0.25.
        chars.append(cand(1.0, 0.0, conf=0.5))
        got = resolve_overlaps(chars, VehicleType.CAR)
        assert len(got) == 7
        merged = min(got, key=lambda c: c.box.x)
        # Union of (0..10) and (1..11) in x.
        assert merged.box.x == 0.0 and merged.box.x2 == 11.0
        assert merged.confidence == 0.9

    def test_drops_weakest_when_nothing_overlaps(self):
        chars = seven_spaced(conf=0.9)
        chars.append(cand(200.0, 0.0, conf=0.1))
        got = resolve_overlaps(chars, VehicleType.CAR)
        assert len(got) == 7
        assert all(c.box.x < 200 for c in got)

    def test_moto_threshold_stricter(self):
        chars = seven_spaced()
        # Half-overlap with char 0: IoU = 1/3, above car threshold but
        # below the motorcycle one.
        extra = cand(5.0, 0.0, conf=0.2)
        car = resolve_overlaps(chars + [extra], VehicleType.CAR)
        moto = resolve_overlaps(chars + [extra], VehicleType.MOTORCYCLE)
        assert any(c.box.x2 == 15.0 and c.box.x == 0.0 for c in car)  # merged union
        assert not any(c.box.x2 == 15.0 and c.box.x == 0.0 for c in moto)  # dropped
        assert len(car) == len(moto) == 7

    def test_explicit_threshold_override(self):
        chars = seven_spaced()
        extra = cand(5.0, 0.0, conf=0.2)
        got = resolve_overlaps(chars + [extra], VehicleType.CAR, threshold=0.5)
        # IoU 1/3 < 0.5: dropped, not merged.
        assert not any(c.box.x2 == 15.0 and c.box.x == 0.0 for c in got)

    def test_order_invariance(self):
        rng = random.Random(7)
        chars = seven_spaced()
        chars += [cand(2.0, 1.0, conf=0.6), cand(31.0, 0.5, conf=0.4), cand(300.0, 0.0, conf=0.05)]
        baseline = resolve_overlaps(list(chars), VehicleType.CAR)
        for _ in range(20):
            rng.shuffle(chars)
            assert resolve_overlaps(list(chars), VehicleType.CAR) == baseline

    def test_merge_confidence_is_max(self):
        chars = seven_spaced(conf=0.5)
        chars.append(CharCandidate(BBox(0.5, 0.0, 10, 20), 0.95))
        got = resolve_overlaps(chars, VehicleType.CAR)
        assert max(c.confidence for c in got) == 0.95

    @given(st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_random_clusters_end_at_seven(self, seed):
        rng = random.Random(seed)
        chars = [cand(15.0 * i, 0.0, conf=rng.uniform(0.5, 1.0)) for i in range(7)]
        for _ in range(rng.randint(1, 5)):
            base = rng.randrange(7)
            if rng.random() < 0.5:
                chars.append(cand(15.0 * base + rng.uniform(0, 2), rng.uniform(0, 2), conf=rng.uniform(0.1, 0.9)))
            else:
                chars.append(cand(150.0 + rng.uniform(0, 100), 40.0, conf=rng.uniform(0.0, 0.4)))
        got = resolve_overlaps(chars, VehicleType.CAR)
        assert len(got) == PLATE_LENGTH


class TestOrderCharacters:
    def test_car_left_to_right(self):
        chars = seven_spaced()
        shuffled = list(reversed(chars))
        got = order_characters(shuffled, VehicleType.CAR)
        assert [c.box.x for c in got] == sorted(c.box.x for c in chars)

    def test_motorcycle_rows(self):
        top = [cand(30.0 * i, 0.0) for i in range(3)]
        bottom = [cand(22.0 * i, 30.0) for i in range(4)]
        mixed = [bottom[2], top[1], bottom[0], top[0], bottom[3], top[2], bottom[1]]
        got = order_characters(mixed, VehicleType.MOTORCYCLE)
        assert got[:3] == top
        assert got[3:] == bottom

    def test_rejects_wrong_count(self):
        with pytest.raises(ValueError):
            order_characters(seven_spaced()[:5], VehicleType.CAR)

    @given(st.permutations(list(range(7))))
    def test_car_order_is_permutation_invariant(self, perm):
        chars = seven_spaced()
        shuffled = [chars[i] for i in perm]
        assert order_characters(shuffled, VehicleType.CAR) == chars
