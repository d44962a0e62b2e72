"""Per-slot character classification and plate-string assembly.

The seven ordered character boxes of a plate are classified by two
separate networks: a 26-class letters net for slots 1-3 and a 10-class
digits net for slots 4-7.  Splitting by layout makes cross-domain
confusion (O vs 0, I vs 1) structurally impossible: each classifier
simply has no output for the other domain's glyphs.  Classification is
forced: the argmax label is always emitted, never an abstention.

Each character crop is padded by a configurable number of pixels before
classification so tight segmentation boxes do not clip glyph edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Protocol, Sequence

from .charseg import CharCandidate
from .detect import ImageRef
from .geometry import BBox, FrameDims, pad_pixels, shift
from .netspec import TensorShape, builtin_archs

LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
DIGITS = "0123456789"


class CharDomain(str, Enum):
    LETTERS = "letters"
    DIGITS = "digits"

    @property
    def alphabet(self) -> str:
        return LETTERS if self is CharDomain.LETTERS else DIGITS


PLATE_LENGTH = 7
LETTER_SLOTS = 3
DIGIT_SLOTS = 4


class InvalidPlateError(ValueError):
    """Text does not match the three-letters-four-digits layout."""


@dataclass(frozen=True)
class LPString:
    """A seven-slot plate: three letters then four digits."""

    slots: tuple[str, ...]

    def __post_init__(self):
        if len(self.slots) != PLATE_LENGTH:
            raise InvalidPlateError(f"need {PLATE_LENGTH} slots, got {len(self.slots)}")
        for i, ch in enumerate(self.slots):
            domain = LETTERS if i < LETTER_SLOTS else DIGITS
            if len(ch) != 1 or ch not in domain:
                raise InvalidPlateError(f"slot {i + 1} invalid for layout LLL-DDDD: {ch!r}")

    @staticmethod
    def from_text(text: str) -> "LPString":
        compact = text.replace("-", "")
        if len(compact) != PLATE_LENGTH:
            raise InvalidPlateError(f"plate text {text!r} does not have {PLATE_LENGTH} characters")
        return LPString(tuple(compact))

    @property
    def text(self) -> str:
        return "".join(self.slots[:LETTER_SLOTS]) + "-" + "".join(self.slots[LETTER_SLOTS:])

    @property
    def compact(self) -> str:
        return "".join(self.slots)

    @property
    def letters(self) -> str:
        return "".join(self.slots[:LETTER_SLOTS])

    @property
    def digits(self) -> str:
        return "".join(self.slots[LETTER_SLOTS:])


@dataclass(frozen=True)
class CharClassifierConfig:
    """One classifier head: domain, architecture, crop padding."""

    domain: CharDomain
    arch: str
    padding: float = 1.0
    input_size: TensorShape | None = None

    def __post_init__(self):
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        builtin = builtin_archs().get(self.arch)
        if builtin is not None and builtin.classes != len(self.domain.alphabet):
            raise ValueError(
                f"arch {self.arch!r} has {builtin.classes} classes, "
                f"domain {self.domain.value} needs {len(self.domain.alphabet)}"
            )


class CharClassifierBackend(Protocol):
    def classify(self, ref: ImageRef) -> tuple[str, float]: ...


# Forced-argmax fallbacks when a backend's raw label lies outside the
# classifier's domain (a digit glyph shown to the letters net, or vice
# versa): map to the most similar in-domain glyph, deterministically.
_DIGIT_AS_LETTER = {
    "0": "O", "1": "I", "2": "Z", "3": "B", "4": "A",
    "5": "S", "6": "G", "7": "T", "8": "B", "9": "Q",
}
_LETTER_AS_DIGIT = {
    "O": "0", "Q": "0", "D": "0", "I": "1", "Z": "2",
    "A": "4", "S": "5", "G": "6", "T": "7", "B": "8",
}


def coerce_to_domain(label: str, domain: CharDomain) -> str:
    """In-domain label for any raw glyph; identity when already valid."""
    if label in domain.alphabet:
        return label
    if domain is CharDomain.LETTERS:
        mapped = _DIGIT_AS_LETTER.get(label)
        if mapped is None:
            raise ValueError(f"unmappable label {label!r}")
        return mapped
    mapped = _LETTER_AS_DIGIT.get(label)
    if mapped is not None:
        return mapped
    idx = LETTERS.find(label)
    if idx < 0:
        raise ValueError(f"unmappable label {label!r}")
    return DIGITS[idx % 10]


def classify_slot(
    backend: CharClassifierBackend, ref: ImageRef, config: CharClassifierConfig
) -> tuple[str, float]:
    """Classify one padded character crop; always emits an in-domain label."""
    label, confidence = backend.classify(ref)
    return coerce_to_domain(label, config.domain), confidence


def read_plate(
    frame_id: str,
    slots: Sequence[CharCandidate],
    lp_patch: BBox,
    letter_config: CharClassifierConfig,
    digit_config: CharClassifierConfig,
    backend: CharClassifierBackend,
) -> tuple[LPString, tuple[float, ...]]:
    """Assemble a plate string from seven ordered character boxes.

    ``slots`` are in plate-patch coordinates, already in reading order.
    Each box is padded inside the patch, mapped to frame coordinates and
    classified with the slot's domain classifier.
    """
    if len(slots) != PLATE_LENGTH:
        raise ValueError(f"need {PLATE_LENGTH} ordered slots, got {len(slots)}")
    patch_dims = FrameDims(lp_patch.w, lp_patch.h)
    labels: list[str] = []
    confidences: list[float] = []
    for i, cand in enumerate(slots):
        config = letter_config if i < LETTER_SLOTS else digit_config
        padded = pad_pixels(cand.box, config.padding, patch_dims)
        ref = ImageRef(frame_id, shift(padded, lp_patch.x, lp_patch.y))
        label, conf = classify_slot(backend, ref, config)
        labels.append(label)
        confidences.append(conf)
    return LPString(tuple(labels)), tuple(confidences)


def padding_sweep(
    evaluate: Callable[[float], float], paddings: Iterable[float] = range(7)
) -> dict[float, float]:
    """Accuracy per crop padding; mirrors the usual 0..6 px sweep."""
    return {p: evaluate(p) for p in paddings}
