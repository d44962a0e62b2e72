"""Annotation model, on-disk format, splits, and synthetic tracks.

A dataset is a directory of track subdirectories, each holding one
annotation file per frame.  Annotation files are keyed text lines (one
value per line) so they stay hand-editable and diff-friendly.  The
split protocol assigns whole tracks, never frames, to train/test/
validation, stratifying on camera, vehicle type, plate color, and
plate-height quartile (a proxy for camera distance) so every split is
representative.

The synthetic generator emits fully annotated tracks with rigid
per-frame motion.  It produces no pixels: the simulated detector
backends work from annotations alone, which is what makes the whole
pipeline testable at desk scale.
"""

from __future__ import annotations

import bisect
import random
import statistics
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .charseg import VehicleType
from .geometry import BBox, FrameDims, contains
from .recognize import LPString

FORMAT_VERSION = 1


class DatasetError(RuntimeError):
    """Structural problem with a dataset tree (missing files, bad ids)."""


class AnnotationParseError(ValueError):
    """Malformed annotation file; carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class SplitError(ValueError):
    """The requested split cannot be satisfied."""


class PlateColor(str, Enum):
    GRAY = "gray"
    RED = "red"


@dataclass(frozen=True)
class VehicleInfo:
    vtype: VehicleType
    make: str
    model: str
    year: int
    box: BBox


@dataclass(frozen=True)
class PlateInfo:
    text: LPString
    box: BBox


@dataclass(frozen=True)
class FrameAnnotation:
    """Everything annotated in one frame: one vehicle, one plate."""

    camera: str
    vehicle: VehicleInfo
    plate: PlateInfo
    chars: tuple[BBox, ...]

    def __post_init__(self):
        if len(self.chars) != 7:
            raise ValueError(f"need exactly 7 character boxes, got {len(self.chars)}")


@dataclass(frozen=True)
class Track:
    """One vehicle's frame sequence; plate text constant throughout."""

    vehicle_id: str
    frames: tuple[FrameAnnotation, ...]
    plate_color: PlateColor

    def __post_init__(self):
        if not self.frames:
            raise ValueError(f"track {self.vehicle_id!r} has no frames")
        first = self.frames[0]
        for f in self.frames[1:]:
            if f.plate.text != first.plate.text:
                raise ValueError(f"track {self.vehicle_id!r} mixes plate texts")
            if f.vehicle.vtype != first.vehicle.vtype:
                raise ValueError(f"track {self.vehicle_id!r} mixes vehicle types")

    @property
    def plate_text(self) -> LPString:
        return self.frames[0].plate.text

    @property
    def vehicle_type(self) -> VehicleType:
        return self.frames[0].vehicle.vtype

    @property
    def camera(self) -> str:
        return self.frames[0].camera

    @property
    def mean_plate_height(self) -> float:
        return sum(f.plate.box.h for f in self.frames) / len(self.frames)


# --- annotation file format -------------------------------------------------


def _fmt_num(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def _fmt_box(b: BBox) -> str:
    return f"{_fmt_num(b.x)} {_fmt_num(b.y)} {_fmt_num(b.w)} {_fmt_num(b.h)}"


def write_annotation(ann: FrameAnnotation) -> str:
    lines = [
        f"format: {FORMAT_VERSION}",
        f"camera: {ann.camera}",
        f"type: {ann.vehicle.vtype.value}",
        f"make: {ann.vehicle.make}",
        f"model: {ann.vehicle.model}",
        f"year: {ann.vehicle.year}",
        f"position_vehicle: {_fmt_box(ann.vehicle.box)}",
        f"plate: {ann.plate.text.text}",
        f"position_plate: {_fmt_box(ann.plate.box)}",
    ]
    for i, c in enumerate(ann.chars, start=1):
        lines.append(f"char {i}: {_fmt_box(c)}")
    return "\n".join(lines) + "\n"


def _parse_box(value: str, lineno: int) -> BBox:
    parts = value.split()
    if len(parts) != 4:
        raise AnnotationParseError(lineno, f"expected `x y w h`, got {value!r}")
    try:
        x, y, w, h = (float(p) for p in parts)
        return BBox(x, y, w, h)
    except ValueError as exc:
        raise AnnotationParseError(lineno, f"bad box {value!r}: {exc}") from exc


def parse_annotation(text: str) -> FrameAnnotation:
    """Parse one frame's annotation; errors carry the line number."""
    fields: dict[str, str] = {}
    chars: dict[int, BBox] = {}
    last = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        last = lineno
        if ":" not in line:
            raise AnnotationParseError(lineno, f"missing `:` in {raw!r}")
        key, value = (part.strip() for part in line.split(":", 1))
        if key.startswith("char "):
            try:
                idx = int(key.split()[1])
            except (IndexError, ValueError):
                raise AnnotationParseError(lineno, f"bad char key {key!r}") from None
            if not (1 <= idx <= 7):
                raise AnnotationParseError(lineno, f"char index out of 1..7: {idx}")
            if idx in chars:
                raise AnnotationParseError(lineno, f"duplicate char {idx}")
            chars[idx] = _parse_box(value, lineno)
        elif key in {"format", "camera", "type", "make", "model", "year", "position_vehicle", "plate", "position_plate"}:
            if key in fields:
                raise AnnotationParseError(lineno, f"duplicate key {key!r}")
            fields[key] = value
        else:
            raise AnnotationParseError(lineno, f"unknown key {key!r}")
    version = fields.get("format", str(FORMAT_VERSION))
    if version != str(FORMAT_VERSION):
        raise AnnotationParseError(1, f"unsupported format version {version!r}")
    for key in ("camera", "type", "make", "model", "year", "position_vehicle", "plate", "position_plate"):
        if key not in fields:
            raise AnnotationParseError(last, f"missing key {key!r}")
    missing = [i for i in range(1, 8) if i not in chars]
    if missing:
        raise AnnotationParseError(last, f"missing char slot(s) {missing}")
    try:
        vtype = VehicleType(fields["type"])
    except ValueError:
        raise AnnotationParseError(last, f"unknown vehicle type {fields['type']!r}") from None
    try:
        year = int(fields["year"])
    except ValueError:
        raise AnnotationParseError(last, f"bad year {fields['year']!r}") from None
    try:
        plate = LPString.from_text(fields["plate"])
    except ValueError as exc:
        raise AnnotationParseError(last, f"bad plate {fields['plate']!r}: {exc}") from None
    return FrameAnnotation(
        camera=fields["camera"],
        vehicle=VehicleInfo(
            vtype=vtype,
            make=fields["make"],
            model=fields["model"],
            year=year,
            box=_parse_box(fields["position_vehicle"], last),
        ),
        plate=PlateInfo(text=plate, box=_parse_box(fields["position_plate"], last)),
        chars=tuple(chars[i] for i in range(1, 8)),
    )


# --- dataset tree -----------------------------------------------------------

MANIFEST_NAME = "tracks.txt"


def write_dataset(root: str | Path, tracks: Sequence[Track]) -> None:
    """Materialize tracks as one directory per track, one file per frame."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest_lines = []
    for track in tracks:
        tdir = root / track.vehicle_id
        tdir.mkdir(exist_ok=True)
        for i, frame in enumerate(track.frames):
            (tdir / f"frame_{i:02d}.txt").write_text(write_annotation(frame))
        manifest_lines.append(f"{track.vehicle_id} {track.plate_color.value}")
    (root / MANIFEST_NAME).write_text("\n".join(manifest_lines) + "\n")


def load_dataset(root: str | Path) -> list[Track]:
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise DatasetError(f"no {MANIFEST_NAME} manifest under {root}")
    tracks = []
    for lineno, raw in enumerate(manifest.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DatasetError(f"{manifest}:{lineno}: expected `<track-dir> <color>`, got {raw!r}")
        track_id, color_name = parts
        try:
            color = PlateColor(color_name)
        except ValueError:
            raise DatasetError(f"{manifest}:{lineno}: unknown plate color {color_name!r}") from None
        tdir = root / track_id
        if not tdir.is_dir():
            raise DatasetError(f"{manifest}:{lineno}: track directory {tdir} missing")
        frames = []
        for path in sorted(tdir.glob("frame_*.txt")):
            try:
                frames.append(parse_annotation(path.read_text()))
            except AnnotationParseError as exc:
                raise DatasetError(f"{path}: {exc}") from exc
        if not frames:
            raise DatasetError(f"{tdir}: no frame files")
        tracks.append(Track(vehicle_id=track_id, frames=tuple(frames), plate_color=color))
    return tracks


# --- splitting --------------------------------------------------------------

DEFAULT_FRACTIONS = (0.4, 0.4, 0.2)
SPLIT_NAMES = ("train", "test", "validation")


def apportion(total: int, fractions: Sequence[float]) -> list[int]:
    """Integer allocation by largest remainder; sums exactly to total."""
    if total < 0:
        raise ValueError("total must be >= 0")
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be >= 0")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    base = [int(f * total) for f in fractions]
    remainders = [f * total - b for f, b in zip(fractions, base)]
    short = total - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: (-remainders[i], i))
    for i in order[:short]:
        base[i] += 1
    return base


@dataclass(frozen=True)
class SplitResult:
    train: tuple[str, ...]
    test: tuple[str, ...]
    validation: tuple[str, ...]

    def as_dict(self) -> dict[str, tuple[str, ...]]:
        return {"train": self.train, "test": self.test, "validation": self.validation}


def _height_quartile_cuts(tracks: Sequence[Track]) -> list[float]:
    heights = [t.mean_plate_height for t in tracks]
    if len(heights) < 4 or len(set(heights)) < 2:
        return []
    return statistics.quantiles(heights, n=4, method="inclusive")


def _stratum_key(track: Track, cuts: list[float]) -> tuple:
    quartile = bisect.bisect_left(cuts, track.mean_plate_height) if cuts else 0
    return (track.camera, track.vehicle_type.value, track.plate_color.value, quartile)


def split_dataset(
    tracks: Sequence[Track],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> SplitResult:
    """Stratified track-level split with exact global counts.

    Global split sizes follow largest-remainder apportionment of the
    fractions.  Within each stratum (camera, vehicle type, plate color,
    plate-height quartile) the per-split count deviates from exact
    proportionality by at most one track.  Deterministic given seed.
    """
    if len(fractions) != 3:
        raise SplitError(f"need 3 fractions, got {len(fractions)}")
    ids = [t.vehicle_id for t in tracks]
    if len(set(ids)) != len(ids):
        raise SplitError("duplicate track ids")
    n = len(tracks)
    if n == 0:
        raise SplitError("no tracks to split")
    try:
        targets = apportion(n, fractions)
    except ValueError as exc:
        raise SplitError(str(exc)) from exc
    for i, (f, g) in enumerate(zip(fractions, targets)):
        if f > 0 and g == 0:
            raise SplitError(
                f"{n} tracks are too few: the {SPLIT_NAMES[i]} fraction {f} rounds to zero tracks"
            )

    cuts = _height_quartile_cuts(tracks)
    strata: dict[tuple, list[Track]] = {}
    for t in tracks:
        strata.setdefault(_stratum_key(t, cuts), []).append(t)

    rng = random.Random(seed)
    ordered_keys = sorted(strata)
    base: dict[tuple, list[int]] = {}
    leftover: dict[tuple, int] = {}
    for key in ordered_keys:
        members = sorted(strata[key], key=lambda t: t.vehicle_id)
        rng.shuffle(members)
        strata[key] = members
        counts = [int(f * len(members)) for f in fractions]
        base[key] = counts
        leftover[key] = len(members) - sum(counts)

    deficits = [g - sum(base[k][i] for k in ordered_keys) for i, g in enumerate(targets)]
    extras: dict[tuple, list[int]] = {k: [0, 0, 0] for k in ordered_keys}
    # Hand each stratum's leftover tracks to the splits hungriest for
    # them, never the same split twice within one stratum, so the
    # per-stratum deviation stays at <= 1.
    for key in sorted(ordered_keys, key=lambda k: (-leftover[k], k)):
        members = strata[key]
        used: set[int] = set()
        for _ in range(leftover[key]):
            candidates = [i for i in range(3) if deficits[i] > 0 and i not in used]
            if not candidates:
                raise SplitError("stratified assignment infeasible for these strata")
            frac_rem = [fractions[i] * len(members) - base[key][i] for i in range(3)]
            pick = max(candidates, key=lambda i: (deficits[i], frac_rem[i], -i))
            extras[key][pick] += 1
            used.add(pick)
            deficits[pick] -= 1

    assigned: list[list[str]] = [[], [], []]
    for key in ordered_keys:
        members = strata[key]
        pos = 0
        for i in range(3):
            take = base[key][i] + extras[key][i]
            assigned[i].extend(t.vehicle_id for t in members[pos : pos + take])
            pos += take
    return SplitResult(
        train=tuple(sorted(assigned[0])),
        test=tuple(sorted(assigned[1])),
        validation=tuple(sorted(assigned[2])),
    )


def write_split(root: str | Path, result: SplitResult) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for name, ids in result.as_dict().items():
        (root / f"{name}.txt").write_text("\n".join(ids) + ("\n" if ids else ""))


def load_split(root: str | Path) -> SplitResult:
    root = Path(root)
    parts = {}
    for name in SPLIT_NAMES:
        path = root / f"{name}.txt"
        if not path.is_file():
            raise DatasetError(f"missing split file {path}")
        parts[name] = tuple(l.strip() for l in path.read_text().splitlines() if l.strip())
    return SplitResult(train=parts["train"], test=parts["test"], validation=parts["validation"])


# --- synthetic generation ---------------------------------------------------

# Registration range: AAA-0001 through BEZ-9999.  676 letter prefixes
# start with A (any two letters follow); with B the second letter only
# runs A through E, adding 130 more combinations.
LETTER_COMBOS = 26 * 26 + 5 * 26

_MAKES = ["VW", "GM", "Fiat", "Ford", "Honda", "Toyota", "Renault"]
_MODELS = ["Gol", "Celta", "Uno", "Ka", "Civic", "Corolla", "Sandero", "Palio"]
_CAMERAS = ["cam01", "cam02", "cam03", "cam04"]

DEFAULT_MIX = (0.6, 0.2, 0.2)  # car-gray, car-red, moto-gray


def _plate_from_index(letter_idx: int, digit_value: int) -> LPString:
    if not (0 <= letter_idx < LETTER_COMBOS):
        raise ValueError(f"letter index out of range: {letter_idx}")
    if not (1 <= digit_value <= 9999):
        raise ValueError(f"digit value out of range: {digit_value}")
    if letter_idx < 676:
        first = "A"
        rest = letter_idx
    else:
        first = "B"
        rest = letter_idx - 676
    second = chr(ord("A") + rest // 26)
    third = chr(ord("A") + rest % 26)
    return LPString.from_text(f"{first}{second}{third}{digit_value:04d}")


def _car_layout(rng: random.Random) -> tuple[BBox, BBox, list[BBox]]:
    """Vehicle, plate, chars with integer coords, vehicle-relative."""
    scale = rng.uniform(0.5, 1.6)
    ph = max(20, round(40 * scale))
    pw = 3 * ph
    vw = round(pw * rng.uniform(1.8, 2.6))
    vh = round(ph * rng.uniform(4.0, 6.0))
    px = (vw - pw) // 2 + rng.randint(-8, 8)
    px = max(1, min(px, vw - pw - 1))
    py_lo = int(vh * 0.55)
    py = rng.randint(py_lo, max(py_lo, vh - ph - 2))
    ipad = max(1, pw // 30)
    gap = max(1, pw // 50)
    cw = (pw - 2 * ipad - 6 * gap) // 7
    chh = round(ph * 0.6)
    cy = py + (ph - chh) // 2
    chars = [BBox(px + ipad + i * (cw + gap), cy, cw, chh) for i in range(7)]
    return BBox(0, 0, vw, vh), BBox(px, py, pw, ph), chars


def _moto_layout(rng: random.Random) -> tuple[BBox, BBox, list[BBox]]:
    scale = rng.uniform(0.5, 1.3)
    ph = max(35, round(70 * scale))
    pw = round(1.17 * ph)
    vw = round(pw * rng.uniform(1.1, 1.5))
    vh = round(ph * rng.uniform(2.2, 3.2))
    px = (vw - pw) // 2 + rng.randint(-3, 3)
    px = max(1, min(px, vw - pw - 1))
    py = rng.randint(int(vh * 0.15), max(int(vh * 0.15), vh - ph - 2))
    ipad = max(1, pw // 30)
    gap = max(1, pw // 50)
    chh = round(ph * 0.32)
    top_y = py + max(1, round(ph * 0.08))
    bot_y = py + round(ph * 0.55)
    cw_top = (pw - 2 * ipad - 2 * gap) // 3
    cw_bot = (pw - 2 * ipad - 3 * gap) // 4
    chars = [BBox(px + ipad + i * (cw_top + gap), top_y, cw_top, chh) for i in range(3)]
    chars += [BBox(px + ipad + i * (cw_bot + gap), bot_y, cw_bot, chh) for i in range(4)]
    return BBox(0, 0, vw, vh), BBox(px, py, pw, ph), chars


def generate_synthetic(
    seed: int,
    n_tracks: int = 150,
    mix: Sequence[float] = DEFAULT_MIX,
    frames_per_track: int = 30,
    frame: FrameDims = FrameDims(1920, 1080),
    protrusion: float = 0.0,
) -> list[Track]:
    """Seeded synthetic tracks with rigid integer per-frame motion.

    ``mix`` gives the car-gray / car-red / motorcycle-gray proportions.
    ``protrusion`` lets motorcycle plates stick out of the vehicle box
    by up to that fraction of the plate size (0 keeps them contained).
    """
    counts = apportion(n_tracks, mix)
    rng = random.Random(seed)
    categories = (
        [(VehicleType.CAR, PlateColor.GRAY)] * counts[0]
        + [(VehicleType.CAR, PlateColor.RED)] * counts[1]
        + [(VehicleType.MOTORCYCLE, PlateColor.GRAY)] * counts[2]
    )
    tracks = []
    for idx, (vtype, color) in enumerate(categories):
        vehicle_id = f"track_{idx:03d}"
        camera = rng.choice(_CAMERAS)
        make = rng.choice(_MAKES)
        model = rng.choice(_MODELS)
        year = rng.randint(2005, 2017)
        plate = _plate_from_index(rng.randrange(LETTER_COMBOS), rng.randint(1, 9999))
        if vtype is VehicleType.CAR:
            vehicle_rel, plate_rel, chars_rel = _car_layout(rng)
        else:
            vehicle_rel, plate_rel, chars_rel = _moto_layout(rng)
        if protrusion > 0 and vtype is VehicleType.MOTORCYCLE:
            # Seat the plate on the vehicle top edge and poke it out by the
            # floored pixel allowance so geometry validation still passes.
            lift = plate_rel.y + int(protrusion * plate_rel.h)
            plate_rel = BBox(plate_rel.x, plate_rel.y - lift, plate_rel.w, plate_rel.h)
            chars_rel = [BBox(c.x, c.y - lift, c.w, c.h) for c in chars_rel]

        ux = min(0.0, plate_rel.x)
        uy = min(0.0, plate_rel.y)
        uw = max(vehicle_rel.x2, plate_rel.x2) - ux
        uh = max(vehicle_rel.y2, plate_rel.y2) - uy

        vx = rng.randint(-8, 8)
        vy = rng.randint(-8, 8)
        span = frames_per_track - 1
        lo_x = max(0, -vx * span) - int(ux)
        hi_x = int(frame.width - uw) - max(0, vx * span) - int(ux)
        lo_y = max(0, -vy * span) - int(uy)
        hi_y = int(frame.height - uh) - max(0, vy * span) - int(uy)
        if hi_x < lo_x or hi_y < lo_y:
            vx = vy = 0
            lo_x, hi_x = -int(ux), int(frame.width - uw) - int(ux)
            lo_y, hi_y = -int(uy), int(frame.height - uh) - int(uy)
        bx = rng.randint(lo_x, hi_x)
        by = rng.randint(lo_y, hi_y)

        frames = []
        for f in range(frames_per_track):
            dx = bx + vx * f
            dy = by + vy * f
            frames.append(
                FrameAnnotation(
                    camera=camera,
                    vehicle=VehicleInfo(
                        vtype=vtype,
                        make=make,
                        model=model,
                        year=year,
                        box=BBox(vehicle_rel.x + dx, vehicle_rel.y + dy, vehicle_rel.w, vehicle_rel.h),
                    ),
                    plate=PlateInfo(
                        text=plate,
                        box=BBox(plate_rel.x + dx, plate_rel.y + dy, plate_rel.w, plate_rel.h),
                    ),
                    chars=tuple(BBox(c.x + dx, c.y + dy, c.w, c.h) for c in chars_rel),
                )
            )
        tracks.append(Track(vehicle_id=vehicle_id, frames=tuple(frames), plate_color=color))
    return tracks


def validate_track_geometry(track: Track, frame: FrameDims, protrusion: float = 0.0) -> list[str]:
    """Invariant check for generated or loaded tracks; returns violations."""
    problems = []
    for i, f in enumerate(track.frames):
        where = f"{track.vehicle_id}[{i}]"
        if not contains(frame.box, f.vehicle.box):
            problems.append(f"{where}: vehicle box outside frame")
        if not contains(frame.box, f.plate.box):
            problems.append(f"{where}: plate box outside frame")
        allowed = f.vehicle.box
        if protrusion > 0:
            e_w = protrusion * f.plate.box.w
            e_h = protrusion * f.plate.box.h
            allowed = BBox(allowed.x - e_w, allowed.y - e_h, allowed.w + 2 * e_w, allowed.h + 2 * e_h)
        if not contains(allowed, f.plate.box):
            problems.append(f"{where}: plate protrudes beyond allowance")
        for j, c in enumerate(f.chars):
            if not contains(f.plate.box, c):
                problems.append(f"{where}: char {j + 1} outside plate")
    return problems
