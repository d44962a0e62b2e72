"""Training-set augmentation for character patches.

Characters whose glyphs survive mirroring give free extra samples: a
vertical flip (mirror across the horizontal axis), a horizontal flip
(mirror across the vertical axis), or both.  Most labels map back to
themselves; flipping both axes turns 6 into 9 and vice versa.  Flipped
"0" and "1" double as seed samples for the visually identical letters
"O" and "I", which helps letter classes that are rare on real plates.

Negative images (inverted pixel values) simulate the light-on-dark
plates used by some vehicle categories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Labels whose glyph is unchanged by mirroring across the horizontal axis.
VERTICAL_FLIP_INVARIANT = frozenset("0138BCDEHIKOX")

# Unchanged by mirroring across the vertical axis.
HORIZONTAL_FLIP_INVARIANT = frozenset("018AHIMOTUVWXY")

# Unchanged (or mapped to another valid glyph) by flipping both axes.
BOTH_FLIP_INVARIANT = frozenset("0168 9HINOSXZ".replace(" ", ""))

# Cross-label mapping under the double flip: a rotated 6 reads as 9.
BOTH_FLIP_MAP = {"6": "9", "9": "6"}

# Flipping these digits yields seed samples for look-alike letters.
DIGIT_TO_LETTER_SEEDS = {"0": "O", "1": "I"}

FLIP_DIRECTIONS = ("V", "H", "VH")


def flip_label(label: str, direction: str) -> str | None:
    """Label of a flipped glyph, or None when the flip produces garbage."""
    if direction == "V":
        return label if label in VERTICAL_FLIP_INVARIANT else None
    if direction == "H":
        return label if label in HORIZONTAL_FLIP_INVARIANT else None
    if direction == "VH":
        if label in BOTH_FLIP_MAP:
            return BOTH_FLIP_MAP[label]
        return label if label in BOTH_FLIP_INVARIANT else None
    raise ValueError(f"unknown flip direction {direction!r}")


def flip_variants(label: str) -> set[tuple[str, str]]:
    """All (direction, resulting label) pairs valid for this label."""
    out = set()
    for d in FLIP_DIRECTIONS:
        res = flip_label(label, d)
        if res is not None:
            out.add((d, res))
    return out


def digit_seed_letters() -> set[tuple[str, str]]:
    """(digit, letter) pairs where the digit's glyph seeds a letter class."""
    return set(DIGIT_TO_LETTER_SEEDS.items())


def flip_pixels(pixels: np.ndarray, direction: str) -> np.ndarray:
    """Mirror an image array: V flips rows, H flips columns, VH both."""
    if direction == "V":
        return pixels[::-1, ...].copy()
    if direction == "H":
        return pixels[:, ::-1, ...].copy()
    if direction == "VH":
        return pixels[::-1, ::-1, ...].copy()
    raise ValueError(f"unknown flip direction {direction!r}")


def negative_pixels(pixels: np.ndarray) -> np.ndarray:
    """Invert values against the dtype's (or observed) maximum."""
    if np.issubdtype(pixels.dtype, np.integer):
        top = np.iinfo(pixels.dtype).max
    else:
        top = 1.0
    return (top - pixels).astype(pixels.dtype)


@dataclass(frozen=True)
class Sample:
    """One labeled character patch in a training manifest."""

    source_id: str
    label: str
    transform: str = "orig"

    def manifest_line(self) -> str:
        return f"{self.source_id} {self.transform} {self.label}"


@dataclass(frozen=True)
class AugmentOptions:
    """Which derived samples to emit.

    cross_product also emits negative versions of every flip, not just
    of the original patch.
    """

    negatives: bool = True
    flips: bool = True
    cross_product: bool = True


def expand_sample(sample: Sample, options: AugmentOptions) -> list[Sample]:
    """Original plus derived samples, deterministic order."""
    out = [sample]
    flips: list[tuple[str, str]] = []
    if options.flips:
        flips = [(d, flip_label(sample.label, d)) for d in FLIP_DIRECTIONS]
        flips = [(d, lab) for d, lab in flips if lab is not None]
        for d, lab in flips:
            out.append(Sample(sample.source_id, lab, f"flip{d}"))
    if options.negatives:
        out.append(Sample(sample.source_id, sample.label, "neg"))
        if options.cross_product:
            for d, lab in flips:
                out.append(Sample(sample.source_id, lab, f"neg+flip{d}"))
    return out


def expand_training_set(samples: list[Sample], options: AugmentOptions) -> list[Sample]:
    out = []
    for s in samples:
        out.extend(expand_sample(s, options))
    return out


def seed_letter_samples(samples: list[Sample]) -> list[Sample]:
    """Flipped 0/1 patches relabeled as O/I training samples.

    Only flip directions that keep the digit's glyph intact are used, so
    every emitted sample is a real mirrored image of its source.
    """
    out = []
    for s in samples:
        letter = DIGIT_TO_LETTER_SEEDS.get(s.label)
        if letter is None:
            continue
        for d in FLIP_DIRECTIONS:
            if flip_label(s.label, d) == s.label:
                out.append(Sample(s.source_id, letter, f"flip{d}"))
    return out


def parse_manifest(text: str) -> list[Sample]:
    """Read `source transform label` lines; # comments and blanks skipped."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected `source transform label`, got {raw!r}")
        out.append(Sample(source_id=parts[0], transform=parts[1], label=parts[2]))
    return out


def format_manifest(samples: list[Sample]) -> str:
    return "\n".join(s.manifest_line() for s in samples) + ("\n" if samples else "")
