"""Annotation format, dataset tree, stratified split, synthetic tracks."""

from __future__ import annotations

import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from alprkit.charseg import VehicleType
from alprkit.dataset import (
    LETTER_COMBOS,
    AnnotationParseError,
    DatasetError,
    FrameAnnotation,
    PlateColor,
    PlateInfo,
    SplitError,
    Track,
    VehicleInfo,
    _plate_from_index,
    apportion,
    generate_synthetic,
    load_dataset,
    load_split,
    parse_annotation,
    split_dataset,
    validate_track_geometry,
    write_annotation,
    write_dataset,
    write_split,
)
from alprkit.geometry import BBox, FrameDims
from alprkit.recognize import LPString

FRAME = FrameDims(1920, 1080)


def sample_annotation(plate="ABC-1234", vtype=VehicleType.CAR, dx=0.0):
    chars = tuple(BBox(530 + dx + 14 * i, 468, 12, 24) for i in range(7))
    return FrameAnnotation(
        camera="cam01",
        vehicle=VehicleInfo(vtype, "VW", "Gol", 2012, BBox(400 + dx, 300, 360, 240)),
        plate=PlateInfo(LPString.from_text(plate), BBox(520 + dx, 460, 120, 40)),
        chars=chars,
    )


def sample_track(track_id="track_000", plate="ABC-1234", n=3, color=PlateColor.GRAY):
    frames = tuple(sample_annotation(plate, dx=4.0 * i) for i in range(n))
    return Track(vehicle_id=track_id, frames=frames, plate_color=color)


class TestAnnotationRoundTrip:
    def test_write_then_parse_identity(self):
        ann = sample_annotation()
        assert parse_annotation(write_annotation(ann)) == ann

    def test_canonical_text_stable(self):
        ann = sample_annotation()
        text = write_annotation(ann)
        assert write_annotation(parse_annotation(text)) == text

    def test_known_syntax(self):
        text = write_annotation(sample_annotation())
        lines = text.splitlines()
        assert lines[0] == "format: 1"
        assert lines[1] == "camera: cam01"
        assert lines[2] == "type: car"
        assert lines[6] == "position_vehicle: 400 300 360 240"
        assert lines[7] == "plate: ABC-1234"
        assert lines[9].startswith("char 1: ")
        assert len([l for l in lines if l.startswith("char ")]) == 7

    def test_fractional_coords_survive(self):
        ann = sample_annotation(dx=0.5)
        assert parse_annotation(write_annotation(ann)) == ann

    def test_missing_char_slot_named(self):
        text = write_annotation(sample_annotation())
        text = "\n".join(l for l in text.splitlines() if not l.startswith("char 5:")) + "\n"
        with pytest.raises(AnnotationParseError, match=r"missing char slot\(s\) \[5\]"):
            parse_annotation(text)

    def test_invalid_plate_layout(self):
        text = write_annotation(sample_annotation()).replace("ABC-1234", "AB1-2345")
        with pytest.raises(AnnotationParseError, match="AB1-2345"):
            parse_annotation(text)

    def test_unknown_key_line_number(self):
        text = "format: 1\nbogus: 3\n"
        with pytest.raises(AnnotationParseError, match="line 2"):
            parse_annotation(text)

    def test_malformed_box(self):
        text = write_annotation(sample_annotation()).replace(
            "position_plate: 520 460 120 40", "position_plate: 520 460 120"
        )
        with pytest.raises(AnnotationParseError, match="x y w h"):
            parse_annotation(text)

    def test_future_format_version_rejected(self):
        text = write_annotation(sample_annotation()).replace("format: 1", "format: 9")
        with pytest.raises(AnnotationParseError, match="version"):
            parse_annotation(text)

    def test_missing_format_line_defaults(self):
        text = "\n".join(write_annotation(sample_annotation()).splitlines()[1:]) + "\n"
        assert parse_annotation(text) == sample_annotation()


class TestTrackInvariants:
    def test_mixed_plate_text_rejected(self):
        frames = (sample_annotation("ABC-1234"), sample_annotation("ABC-1235"))
        with pytest.raises(ValueError, match="mixes plate"):
            Track("t", frames, PlateColor.GRAY)

    def test_mixed_vehicle_type_rejected(self):
        frames = (sample_annotation(), sample_annotation(vtype=VehicleType.MOTORCYCLE))
        with pytest.raises(ValueError, match="mixes vehicle"):
            Track("t", frames, PlateColor.GRAY)

    def test_empty_track_rejected(self):
        with pytest.raises(ValueError):
            Track("t", (), PlateColor.GRAY)

    def test_wrong_char_count_rejected(self):
        with pytest.raises(ValueError, match="7"):
            FrameAnnotation(
                camera="c",
                vehicle=VehicleInfo(VehicleType.CAR, "m", "m", 2010, BBox(0, 0, 10, 10)),
                plate=PlateInfo(LPString.from_text("ABC-1234"), BBox(1, 1, 5, 2)),
                chars=tuple(BBox(1 + i, 1, 0.5, 1) for i in range(6)),
            )


class TestDatasetTree:
    def test_write_load_round_trip(self, tmp_path):
        tracks = [
            sample_track("track_000", "ABC-1234"),
            sample_track("track_001", "BEZ-9999", color=PlateColor.RED),
        ]
        write_dataset(tmp_path / "ds", tracks)
        loaded = load_dataset(tmp_path / "ds")
        assert loaded == tracks

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError, match="manifest"):
            load_dataset(tmp_path)

    def test_corrupt_frame_file_reported_with_path(self, tmp_path):
        write_dataset(tmp_path / "ds", [sample_track()])
        bad = tmp_path / "ds" / "track_000" / "frame_01.txt"
        bad.write_text("format: 1\ncamera: c\n")
        with pytest.raises(DatasetError, match="frame_01"):
            load_dataset(tmp_path / "ds")

    def test_missing_track_dir(self, tmp_path):
        write_dataset(tmp_path / "ds", [sample_track()])
        (tmp_path / "ds" / "tracks.txt").write_text("track_000 gray\nghost gray\n")
        with pytest.raises(DatasetError, match="ghost"):
            load_dataset(tmp_path / "ds")


class TestApportion:
    def test_exact_fractions(self):
        assert apportion(150, (0.4, 0.4, 0.2)) == [60, 60, 30]
        assert apportion(10, (0.4, 0.4, 0.2)) == [4, 4, 2]

    def test_rounding_by_largest_remainder(self):
        assert apportion(10, (0.3, 0.3, 0.4)) == [3, 3, 4]
        assert sum(apportion(7, (0.4, 0.4, 0.2))) == 7

    def test_zero_total(self):
        assert apportion(0, (0.4, 0.4, 0.2)) == [0, 0, 0]

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            apportion(10, (0.5, 0.6, 0.2))
        with pytest.raises(ValueError):
            apportion(10, (-0.1, 0.9, 0.2))

    @given(st.integers(0, 500), st.integers(1, 99))
    def test_sums_to_total(self, total, p):
        f = (p / 100, (100 - p) / 200, (100 - p) / 200)
        assert sum(apportion(total, f)) == total


class TestSplitDataset:
    def _tracks(self, n, seed=0):
        rng = random.Random(seed)
        tracks = []
        for i in range(n):
            vtype = VehicleType.CAR if rng.random() < 0.8 else VehicleType.MOTORCYCLE
            color = PlateColor.RED if (vtype is VehicleType.CAR and rng.random() < 0.25) else PlateColor.GRAY
            plate = _plate_from_index(rng.randrange(LETTER_COMBOS), rng.randint(1, 9999))
            tracks.append(
                sample_track(f"track_{i:03d}", plate.text, n=2, color=color)
            )
        return tracks

    def test_150_gives_60_60_30(self):
        tracks = generate_synthetic(seed=5, n_tracks=150)
        result = split_dataset(tracks, seed=1)
        assert (len(result.train), len(result.test), len(result.validation)) == (60, 60, 30)

    def test_disjoint_and_total(self):
        tracks = generate_synthetic(seed=5, n_tracks=40)
        result = split_dataset(tracks, seed=1)
        all_ids = set(result.train) | set(result.test) | set(result.validation)
        assert len(all_ids) == 40
        assert len(result.train) + len(result.test) + len(result.validation) == 40

    def test_identical_stratum_ten_tracks(self):
        tracks = [sample_track(f"track_{i:03d}") for i in range(10)]
        result = split_dataset(tracks, seed=3)
        assert (len(result.train), len(result.test), len(result.validation)) == (4, 4, 2)

    def test_deterministic(self):
        tracks = generate_synthetic(seed=5, n_tracks=60)
        assert split_dataset(tracks, seed=9) == split_dataset(tracks, seed=9)

    def test_seed_changes_assignment(self):
        tracks = generate_synthetic(seed=5, n_tracks=60)
        a = split_dataset(tracks, seed=1)
        b = split_dataset(tracks, seed=2)
        assert a != b

    def test_too_few_tracks_for_fraction(self):
        tracks = [sample_track("track_000"), sample_track("track_001", "BEZ-0002")]
        with pytest.raises(SplitError, match="rounds to zero"):
            split_dataset(tracks, fractions=(0.4, 0.4, 0.2))

    def test_duplicate_ids_rejected(self):
        tracks = [sample_track("t"), sample_track("t", "BEZ-0002")]
        with pytest.raises(SplitError, match="duplicate"):
            split_dataset(tracks)

    def test_stratum_deviation_at_most_one(self):
        tracks = generate_synthetic(seed=11, n_tracks=150)
        result = split_dataset(tracks, seed=2)
        by_id = {t.vehicle_id: t for t in tracks}

        def strata_counts(ids):
            return Counter(
                (by_id[i].camera, by_id[i].vehicle_type, by_id[i].plate_color) for i in ids
            )

        # Reconstruct coarse stratum sizes (ignoring the quartile axis a
        # stratum can only get finer, so coarse deviation bounds hold only
        # per full stratum; recompute with the module's own keys instead.
        from alprkit.dataset import _height_quartile_cuts, _stratum_key

        cuts = _height_quartile_cuts(tracks)
        sizes = Counter(_stratum_key(t, cuts) for t in tracks)
        fractions = (0.4, 0.4, 0.2)
        for split_idx, ids in enumerate([result.train, result.test, result.validation]):
            got = Counter(_stratum_key(by_id[i], cuts) for i in ids)
            for key, n_s in sizes.items():
                assert abs(got.get(key, 0) - fractions[split_idx] * n_s) <= 1.0 + 1e-9

    @given(st.integers(0, 300))
    @settings(max_examples=60, deadline=None)
    def test_random_sizes_always_feasible(self, seed):
        rng = random.Random(seed)
        n = rng.randint(5, 80)
        tracks = generate_synthetic(seed=seed, n_tracks=n)
        result = split_dataset(tracks, seed=seed)
        total = len(result.train) + len(result.test) + len(result.validation)
        assert total == n
        want = apportion(n, (0.4, 0.4, 0.2))
        assert [len(result.train), len(result.test), len(result.validation)] == want

    def test_split_files_round_trip(self, tmp_path):
        tracks = generate_synthetic(seed=5, n_tracks=20)
        result = split_dataset(tracks, seed=1)
        write_split(tmp_path, result)
        assert load_split(tmp_path) == result
        assert (tmp_path / "train.txt").exists()
        assert (tmp_path / "validation.txt").exists()


class TestPlateRange:
    def test_low_and_high_ends(self):
        assert _plate_from_index(0, 1).text == "AAA-0001"
        assert _plate_from_index(LETTER_COMBOS - 1, 9999).text == "BEZ-9999"

    def test_combo_count(self):
        assert LETTER_COMBOS == 806

    def test_b_range_capped_at_e(self):
        assert _plate_from_index(676, 1).text == "BAA-0001"
        seconds = {_plate_from_index(i, 1).letters[1] for i in range(676, LETTER_COMBOS)}
        assert seconds == set("ABCDE")

    @given(st.integers(0, LETTER_COMBOS - 1), st.integers(1, 9999))
    def test_always_in_range(self, li, dv):
        p = _plate_from_index(li, dv)
        assert p.letters[0] in "AB"
        assert "AAA" <= p.letters <= "BEZ"
        assert p.digits != "0000"

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            _plate_from_index(LETTER_COMBOS, 1)
        with pytest.raises(ValueError):
            _plate_from_index(0, 0)


class TestGenerateSynthetic:
    def test_counts_and_mix(self):
        tracks = generate_synthetic(seed=1, n_tracks=150)
        assert len(tracks) == 150
        cars_gray = sum(
            1 for t in tracks if t.vehicle_type is VehicleType.CAR and t.plate_color is PlateColor.GRAY
        )
        cars_red = sum(1 for t in tracks if t.plate_color is PlateColor.RED)
        motos = sum(1 for t in tracks if t.vehicle_type is VehicleType.MOTORCYCLE)
        assert (cars_gray, cars_red, motos) == (90, 30, 30)

    def test_thirty_frames_each(self):
        tracks = generate_synthetic(seed=1, n_tracks=4)
        assert all(len(t.frames) == 30 for t in tracks)

    def test_deterministic_byte_identical(self, tmp_path):
        a = generate_synthetic(seed=7, n_tracks=6)
        b = generate_synthetic(seed=7, n_tracks=6)
        assert a == b
        write_dataset(tmp_path / "a", a)
        write_dataset(tmp_path / "b", b)
        for pa in sorted((tmp_path / "a").rglob("*.txt")):
            pb = tmp_path / "b" / pa.relative_to(tmp_path / "a")
            assert pa.read_bytes() == pb.read_bytes()

    def test_geometry_invariants(self):
        tracks = generate_synthetic(seed=3, n_tracks=30)
        for t in tracks:
            assert validate_track_geometry(t, FRAME) == []

    def test_protrusion_knob(self):
        tracks = generate_synthetic(seed=3, n_tracks=10, mix=(0.0, 0.0, 1.0), protrusion=0.2)
        assert all(t.vehicle_type is VehicleType.MOTORCYCLE for t in tracks)
        for t in tracks:
            assert validate_track_geometry(t, FRAME, protrusion=0.2) == []
        # At least one plate actually pokes out of its vehicle box.
        from alprkit.geometry import contains

        assert any(
            not contains(f.vehicle.box, f.plate.box) for t in tracks for f in t.frames
        )

    def test_moto_rows_three_above_four(self):
        tracks = generate_synthetic(seed=2, n_tracks=5, mix=(0.0, 0.0, 1.0))
        for t in tracks:
            f = t.frames[0]
            top = sorted(f.chars, key=lambda c: c.y)[:3]
            bottom = sorted(f.chars, key=lambda c: c.y)[3:]
            assert max(c.y2 for c in top) <= min(c.y for c in bottom)
            assert len({c.y for c in top}) == 1 and len({c.y for c in bottom}) == 1

    def test_car_single_row(self):
        tracks = generate_synthetic(seed=2, n_tracks=5, mix=(1.0, 0.0, 0.0))
        for t in tracks:
            f = t.frames[0]
            assert len({c.y for c in f.chars}) == 1
            xs = [c.x for c in f.chars]
            assert xs == sorted(xs)

    def test_car_aspect_three_to_one(self):
        tracks = generate_synthetic(seed=2, n_tracks=8, mix=(1.0, 0.0, 0.0))
        for t in tracks:
            box = t.frames[0].plate.box
            assert box.w == 3 * box.h

    def test_moto_aspect_near_117(self):
        tracks = generate_synthetic(seed=2, n_tracks=8, mix=(0.0, 0.0, 1.0))
        for t in tracks:
            box = t.frames[0].plate.box
            assert abs(box.aspect - 1.17) < 0.03

    def test_rigid_motion(self):
        tracks = generate_synthetic(seed=4, n_tracks=6)
        for t in tracks:
            f0, f1 = t.frames[0], t.frames[1]
            dx = f1.vehicle.box.x - f0.vehicle.box.x
            dy = f1.vehicle.box.y - f0.vehicle.box.y
            assert f1.plate.box.x - f0.plate.box.x == dx
            assert f1.plate.box.y - f0.plate.box.y == dy
            for c0, c1 in zip(f0.chars, f1.chars):
                assert (c1.x - c0.x, c1.y - c0.y) == (dx, dy)
            assert dx == int(dx) and dy == int(dy)

    def test_round_trip_through_files(self, tmp_path):
        tracks = generate_synthetic(seed=9, n_tracks=5)
        write_dataset(tmp_path / "ds", tracks)
        assert load_dataset(tmp_path / "ds") == tracks

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_any_seed_valid(self, seed):
        tracks = generate_synthetic(seed=seed, n_tracks=6, frames_per_track=8)
        for t in tracks:
            assert validate_track_geometry(t, FRAME) == []
            assert t.plate_text.letters[0] in "AB"
