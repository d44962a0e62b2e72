"""Run configuration: a flat keyed text file mapped onto dataclasses.

The on-disk format is deliberately boring: one ``key = value`` per line,
``#`` comments, no sections.  Every key mirrors a field of
:class:`PipelineConfig`, so the CLI flags, the config file, and the
in-memory object stay in one-to-one correspondence and a config round-
trips byte-for-byte through :func:`format_config` / :func:`parse_config`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .augment import AugmentOptions
from .detect import (
    ConfidenceLaw,
    MarginPolicy,
    NoiseModel,
    SelectPolicy,
    StageConfig,
)
from .geometry import FrameDims
from .netspec import builtin_archs
from .recognize import CharClassifierConfig, CharDomain

BACKENDS = ("simulated", "external")
SPLIT_CHOICES = ("all", "train", "test", "validation")


class ConfigError(ValueError):
    """Bad key, value, or combination in a pipeline configuration."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


def _letters_default() -> CharClassifierConfig:
    return CharClassifierConfig(CharDomain.LETTERS, "cr-net-letters", padding=1.0)


def _digits_default() -> CharClassifierConfig:
    return CharClassifierConfig(CharDomain.DIGITS, "cr-net-digits", padding=1.0)


def _vehicle_default() -> StageConfig:
    return StageConfig("fast-yolo-2class", confidence_threshold=0.125, margin=0.10)


def _lp_default() -> StageConfig:
    return StageConfig(
        "fast-yolo-1class",
        confidence_threshold=0.0,
        margin=0.10,
        select_policy=SelectPolicy.SINGLE_BEST,
    )


def _charseg_default() -> StageConfig:
    return StageConfig("cr-net-seg", confidence_threshold=0.1, margin=0.0)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs: data location, backends, stage knobs."""

    dataset_root: str = "data/synth"
    split: str = "all"
    backend: str = "simulated"
    seed: int = 0
    workers: int = 1
    out_dir: str = "runs/latest"
    frame: FrameDims = FrameDims(1920, 1080)
    noise: NoiseModel = field(default_factory=NoiseModel)
    vehicle: StageConfig = field(default_factory=_vehicle_default)
    lp: StageConfig = field(default_factory=_lp_default)
    charseg: StageConfig = field(default_factory=_charseg_default)
    lp_aspect_target: float = 2.75
    letters: CharClassifierConfig = field(default_factory=_letters_default)
    digits: CharClassifierConfig = field(default_factory=_digits_default)
    margin_policy: MarginPolicy = MarginPolicy.KEEP
    augment: AugmentOptions = field(default_factory=AugmentOptions)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.split not in SPLIT_CHOICES:
            raise ConfigError(f"split must be one of {SPLIT_CHOICES}, got {self.split!r}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.lp_aspect_target <= 0:
            raise ConfigError(f"lp.aspect_target must be > 0, got {self.lp_aspect_target}")

    def arch_names(self) -> tuple[str, ...]:
        return (self.vehicle.arch, self.lp.arch, self.charseg.arch, self.letters.arch, self.digits.arch)


def validate_arch_names(config: PipelineConfig) -> None:
    """Every referenced arch must be a builtin or an existing descriptor file."""
    builtins = builtin_archs()
    missing = [
        name
        for name in config.arch_names()
        if name not in builtins and not Path(name).is_file()
    ]
    if missing:
        raise ConfigError(
            "unknown architecture(s): "
            + ", ".join(sorted(set(missing)))
            + f" (builtins: {', '.join(sorted(builtins))})"
        )


def _num(x: float) -> str:
    """Integers print bare; other floats keep full repr precision."""
    if isinstance(x, float) and x.is_integer():
        return str(int(x))
    return repr(x) if isinstance(x, float) else str(x)


def _flag(b: bool) -> str:
    return "true" if b else "false"


def config_to_items(config: PipelineConfig) -> list[tuple[str, str]]:
    """Ordered flat key/value view of a config."""
    law = config.noise.confidence_law
    return [
        ("dataset.root", config.dataset_root),
        ("dataset.split", config.split),
        ("backend", config.backend),
        ("seed", str(config.seed)),
        ("workers", str(config.workers)),
        ("out", config.out_dir),
        ("frame.width", _num(config.frame.width)),
        ("frame.height", _num(config.frame.height)),
        ("noise.miss_rate", _num(config.noise.miss_rate)),
        ("noise.false_positive_rate", _num(config.noise.false_positive_rate)),
        ("noise.jitter", _num(config.noise.jitter)),
        ("noise.true_confidence_floor", _num(law.true_floor)),
        ("noise.fp_confidence_low", _num(law.fp_low)),
        ("noise.fp_confidence_high", _num(law.fp_high)),
        ("vehicle.arch", config.vehicle.arch),
        ("vehicle.threshold", _num(config.vehicle.confidence_threshold)),
        ("vehicle.margin", _num(config.vehicle.margin)),
        ("lp.arch", config.lp.arch),
        ("lp.margin", _num(config.lp.margin)),
        ("lp.aspect_target", _num(config.lp_aspect_target)),
        ("charseg.arch", config.charseg.arch),
        ("charseg.threshold", _num(config.charseg.confidence_threshold)),
        ("recognizer.letters.arch", config.letters.arch),
        ("recognizer.letters.padding", _num(config.letters.padding)),
        ("recognizer.digits.arch", config.digits.arch),
        ("recognizer.digits.padding", _num(config.digits.padding)),
        ("margin_policy", config.margin_policy.value),
        ("augment.negatives", _flag(config.augment.negatives)),
        ("augment.flips", _flag(config.augment.flips)),
        ("augment.cross_product", _flag(config.augment.cross_product)),
    ]


_KEY_ORDER = [k for k, _ in config_to_items(PipelineConfig())]

# Human-oriented notes printed above groups of keys in the config file.
_COMMENTS: dict[str, list[str]] = {
    "dataset.root": [
        "Input data: an annotated track tree plus an optional splits/ dir.",
    ],
    "noise.miss_rate": [
        "Simulated-backend perturbations, all driven by the master seed.",
        "All zeros reproduces the annotations exactly; miss, false",
        "positives, and jitter inject faults.",
    ],
    "vehicle.arch": [
        "Per-stage detector settings.  Thresholds are deployed values:",
        "half of the weakest matched validation confidence (grid-floored).",
        "The plate stage always keeps its single best candidate, so it",
        "carries no threshold of its own.",
    ],
    "lp.arch": [
        "Margins grow a detected box per side by the given fraction of",
        "its size before the next stage crops it.  Narrow plates are",
        "widened about their center to the aspect target before",
        "character segmentation.",
    ],
    "recognizer.letters.arch": [
        "Character classifiers, one per slot domain; padding is the crop",
        "growth in pixels before classification.",
    ],
    "margin_policy": [
        "How a calibrated margin becomes the deployed one: double it for",
        "headroom, or keep it as measured.",
    ],
    "augment.negatives": [
        "Training-set expansion switches used by the augment command.",
    ],
}


def format_config(config: PipelineConfig) -> str:
    lines = ["# alprkit pipeline configuration", "# key = value; '#' starts a comment line"]
    for key, value in config_to_items(config):
        notes = _COMMENTS.get(key)
        if notes:
            lines.append("")
            lines.extend(f"# {n}" for n in notes)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _parse_int(key: str, raw: str, line: int | None) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}", line) from None


def _parse_float(key: str, raw: str, line: int | None) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}", line) from None


def _parse_bool(key: str, raw: str, line: int | None) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ConfigError(f"{key}: expected true or false, got {raw!r}", line)


def config_from_items(
    items: dict[str, str], lines: dict[str, int] | None = None
) -> PipelineConfig:
    """Build a config from flat strings; unknown keys must be pre-screened."""
    lines = lines or {}

    def ln(key: str) -> int | None:
        return lines.get(key)

    def f(key: str) -> float:
        return _parse_float(key, items[key], ln(key))

    def i(key: str) -> int:
        return _parse_int(key, items[key], ln(key))

    def b(key: str) -> bool:
        return _parse_bool(key, items[key], ln(key))

    policy_raw = items["margin_policy"]
    try:
        policy = MarginPolicy(policy_raw)
    except ValueError:
        raise ConfigError(
            f"margin_policy: expected double or keep, got {policy_raw!r}",
            ln("margin_policy"),
        ) from None

    try:
        return PipelineConfig(
            dataset_root=items["dataset.root"],
            split=items["dataset.split"],
            backend=items["backend"],
            seed=i("seed"),
            workers=i("workers"),
            out_dir=items["out"],
            frame=FrameDims(f("frame.width"), f("frame.height")),
            noise=NoiseModel(
                miss_rate=f("noise.miss_rate"),
                false_positive_rate=f("noise.false_positive_rate"),
                jitter=f("noise.jitter"),
                confidence_law=ConfidenceLaw(
                    true_floor=f("noise.true_confidence_floor"),
                    fp_low=f("noise.fp_confidence_low"),
                    fp_high=f("noise.fp_confidence_high"),
                ),
            ),
            vehicle=StageConfig(
                items["vehicle.arch"],
                confidence_threshold=f("vehicle.threshold"),
                margin=f("vehicle.margin"),
            ),
            lp=StageConfig(
                items["lp.arch"],
                confidence_threshold=0.0,
                margin=f("lp.margin"),
                select_policy=SelectPolicy.SINGLE_BEST,
            ),
            charseg=StageConfig(
                items["charseg.arch"],
                confidence_threshold=f("charseg.threshold"),
                margin=0.0,
            ),
            lp_aspect_target=f("lp.aspect_target"),
            letters=CharClassifierConfig(
                CharDomain.LETTERS,
                items["recognizer.letters.arch"],
                padding=f("recognizer.letters.padding"),
            ),
            digits=CharClassifierConfig(
                CharDomain.DIGITS,
                items["recognizer.digits.arch"],
                padding=f("recognizer.digits.padding"),
            ),
            margin_policy=policy,
            augment=AugmentOptions(
                negatives=b("augment.negatives"),
                flips=b("augment.flips"),
                cross_product=b("augment.cross_product"),
            ),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str) -> PipelineConfig:
    """Parse a config document; missing keys fall back to defaults."""
    items = dict(config_to_items(PipelineConfig()))
    line_of: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in items:
            raise ConfigError(f"unknown key {key!r}", lineno)
        items[key] = value
        line_of[key] = lineno
    return config_from_items(items, line_of)


def load_config(path: str | Path) -> PipelineConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def save_config(path: str | Path, config: PipelineConfig) -> None:
    Path(path).write_text(format_config(config))


def apply_overrides(config: PipelineConfig, overrides: dict[str, str]) -> PipelineConfig:
    """New config with flat ``key=value`` overrides applied on top."""
    items = dict(config_to_items(config))
    for key, value in overrides.items():
        if key not in items:
            raise ConfigError(f"unknown key {key!r}")
        items[key] = value
    return config_from_items(items)


def _single_class_preset() -> PipelineConfig:
    """Protocol for single-class vehicle footage: cars only, gray plates.

    Vehicles fill the frame, so no vehicle margin is needed, but the
    calibrated plate margin gets doubled; character crops take 2 px of
    padding on the letter side.
    """
    base = PipelineConfig()
    return replace(
        base,
        vehicle=StageConfig("fast-yolo-1class", confidence_threshold=0.125, margin=0.0),
        letters=replace(base.letters, padding=2.0),
        margin_policy=MarginPolicy.DOUBLE,
        augment=replace(base.augment, negatives=False),
    )


PRESETS: dict[str, Callable[[], PipelineConfig]] = {
    "default": PipelineConfig,
    "single-class": _single_class_preset,
}


def preset(name: str) -> PipelineConfig:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r} (have: {', '.join(sorted(PRESETS))})") from None
    return factory()
