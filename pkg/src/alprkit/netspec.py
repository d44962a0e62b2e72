"""Network architecture descriptors and static shape validation.

A detection network is described layer by layer (convolutions, max
pooling, one trailing detection layer).  This module infers the tensor
shape after every layer and checks the structural rules a single-shot
detection head must satisfy, most importantly that the final convolution
carries exactly ``(classes + 5) * anchors`` filters: per anchor box the
head regresses 4 coordinates plus an objectness score alongside the
class scores.

Shape rules:

* ``conv`` layers use stride 1 with same-padding, so width and height
  pass through unchanged and only the channel count moves.
* ``max`` layers map each spatial dim d -> floor(d / s) for stride >= 2
  and leave d unchanged for stride 1 (same-padded pooling).
* ``detection`` is a reshape-only layer: the shape passes through.

Descriptors also exist in a one-line-per-layer text form so
architectures can be inspected and diffed from the command line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class LayerKind(str, Enum):
    CONV = "conv"
    MAX = "max"
    DETECTION = "detection"


class ShapeError(ValueError):
    """A layer chain cannot be evaluated (dims collapse, bad stride...)."""

    def __init__(self, layer_index: int, message: str):
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


@dataclass(frozen=True)
class TensorShape:
    width: int
    height: int
    channels: int

    def __post_init__(self):
        if self.width < 0 or self.height < 0 or self.channels < 0:
            raise ValueError(f"negative tensor dim in {self}")

    def __str__(self) -> str:
        return f"{self.width}x{self.height}x{self.channels}"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    filters: int = 0
    kernel: int = 0
    stride: int = 1

    @staticmethod
    def conv(filters: int, kernel: int, stride: int = 1) -> "LayerSpec":
        return LayerSpec(LayerKind.CONV, filters=filters, kernel=kernel, stride=stride)

    @staticmethod
    def maxpool(kernel: int, stride: int) -> "LayerSpec":
        return LayerSpec(LayerKind.MAX, kernel=kernel, stride=stride)

    @staticmethod
    def detection() -> "LayerSpec":
        return LayerSpec(LayerKind.DETECTION)

    def __str__(self) -> str:
        if self.kind is LayerKind.CONV:
            return f"conv {self.filters} {self.kernel}x{self.kernel}/{self.stride}"
        if self.kind is LayerKind.MAX:
            return f"max {self.kernel}x{self.kernel}/{self.stride}"
        return "detection"


@dataclass(frozen=True)
class ArchSpec:
    """A named layer chain plus the task it is meant to solve."""

    name: str
    input: TensorShape
    layers: tuple[LayerSpec, ...]
    classes: int
    anchors: int


@dataclass
class ArchReport:
    """Outcome of validating one architecture."""

    name: str
    ok: bool
    violations: list[str] = field(default_factory=list)
    shapes: list[tuple[int, TensorShape, TensorShape]] = field(default_factory=list)


def required_filters(classes: int, anchors: int) -> int:
    """Detection-head filter count: (classes + 5) * anchors.

    Each anchor predicts 4 box coordinates and 1 objectness score in
    addition to one score per class.
    """
    if classes < 1:
        raise ValueError(f"classes must be >= 1, got {classes}")
    if anchors < 1:
        raise ValueError(f"anchors must be >= 1, got {anchors}")
    return (classes + 5) * anchors


def apply_layer(shape: TensorShape, layer: LayerSpec, index: int) -> TensorShape:
    """Shape after one layer; raises ShapeError when the layer cannot run."""
    if layer.kind is LayerKind.CONV:
        if layer.stride != 1:
            raise ShapeError(index, f"conv stride must be 1, got {layer.stride}")
        if layer.filters < 1:
            raise ShapeError(index, f"conv needs >= 1 filter, got {layer.filters}")
        return TensorShape(shape.width, shape.height, layer.filters)
    if layer.kind is LayerKind.MAX:
        if layer.stride < 1:
            raise ShapeError(index, f"pool stride must be >= 1, got {layer.stride}")
        if layer.stride == 1:
            return shape
        w = shape.width // layer.stride
        h = shape.height // layer.stride
        if w < 1 or h < 1:
            raise ShapeError(index, f"pooling collapses {shape} to {w}x{h}")
        return TensorShape(w, h, shape.channels)
    return shape


def infer_shapes(arch: ArchSpec) -> list[tuple[int, TensorShape, TensorShape]]:
    """Per-layer (index, shape in, shape out) through the whole chain."""
    shapes = []
    cur = arch.input
    for i, layer in enumerate(arch.layers):
        nxt = apply_layer(cur, layer, i)
        shapes.append((i, cur, nxt))
        cur = nxt
    return shapes


def output_shape(arch: ArchSpec) -> TensorShape:
    shapes = infer_shapes(arch)
    return shapes[-1][2] if shapes else arch.input


def validate(arch: ArchSpec) -> ArchReport:
    """Structural check: head width, layer order, stride rules, shape flow."""
    report = ArchReport(name=arch.name, ok=True)
    try:
        report.shapes = infer_shapes(arch)
    except ShapeError as exc:
        report.violations.append(str(exc))
        report.ok = False
        return report

    if not arch.layers:
        report.violations.append("empty layer chain")
    else:
        det_positions = [i for i, l in enumerate(arch.layers) if l.kind is LayerKind.DETECTION]
        if det_positions != [len(arch.layers) - 1]:
            report.violations.append(
                f"expected exactly one detection layer at the end, found at {det_positions}"
            )
        convs = [(i, l) for i, l in enumerate(arch.layers) if l.kind is LayerKind.CONV]
        if convs:
            head_index, head = convs[-1]
            want = required_filters(arch.classes, arch.anchors)
            if head.filters != want:
                report.violations.append(
                    f"head conv (layer {head_index}) has {head.filters} filters, "
                    f"needs (classes + 5) * anchors = {want}"
                )
        else:
            report.violations.append("no conv layers")

    report.ok = not report.violations
    return report


# --- text descriptor format -------------------------------------------------


def format_descriptor(arch: ArchSpec) -> str:
    """Multi-line text form; round-trips through parse_descriptor."""
    lines = [
        f"name {arch.name}",
        f"input {arch.input}",
        f"classes {arch.classes}",
        f"anchors {arch.anchors}",
    ]
    lines.extend(str(l) for l in arch.layers)
    return "\n".join(lines) + "\n"


def _parse_kxk_s(token_kxk: str, token_s_joined: str, lineno: int) -> tuple[int, int]:
    try:
        size_part, stride_part = token_s_joined.split("/")
        k1, k2 = size_part.split("x")
        if k1 != k2:
            raise ValueError("non-square kernel")
        return int(k1), int(stride_part)
    except ValueError as exc:
        raise ValueError(f"line {lineno}: bad kernel/stride spec {token_s_joined!r} ({exc})") from exc


def parse_descriptor(text: str) -> ArchSpec:
    """Inverse of format_descriptor; raises ValueError with line numbers."""
    name = None
    input_shape = None
    classes = None
    anchors = None
    layers: list[LayerSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head = parts[0]
        try:
            if head == "name" and len(parts) == 2:
                name = parts[1]
            elif head == "input" and len(parts) == 2:
                w, h, c = (int(v) for v in parts[1].split("x"))
                input_shape = TensorShape(w, h, c)
            elif head == "classes" and len(parts) == 2:
                classes = int(parts[1])
            elif head == "anchors" and len(parts) == 2:
                anchors = int(parts[1])
            elif head == "conv" and len(parts) == 3:
                kernel, stride = _parse_kxk_s(parts[2], parts[2], lineno)
                layers.append(LayerSpec.conv(int(parts[1]), kernel, stride))
            elif head == "max" and len(parts) == 2:
                kernel, stride = _parse_kxk_s(parts[1], parts[1], lineno)
                layers.append(LayerSpec.maxpool(kernel, stride))
            elif head == "detection" and len(parts) == 1:
                layers.append(LayerSpec.detection())
            else:
                raise ValueError(f"line {lineno}: unrecognized directive {line!r}")
        except ValueError as exc:
            if str(exc).startswith("line "):
                raise
            raise ValueError(f"line {lineno}: {exc}") from exc
    missing = [k for k, v in [("name", name), ("input", input_shape), ("classes", classes), ("anchors", anchors)] if v is None]
    if missing:
        raise ValueError(f"descriptor missing header field(s): {', '.join(missing)}")
    return ArchSpec(name=name, input=input_shape, layers=tuple(layers), classes=classes, anchors=anchors)


# --- built-in architectures -------------------------------------------------


def _frontal_backbone(head_filters: int) -> tuple[LayerSpec, ...]:
    """Compact full-frame detector: 9 convs, 6 pools, one head."""
    conv = LayerSpec.conv
    maxp = LayerSpec.maxpool
    return (
        conv(16, 3),
        maxp(2, 2),
        conv(32, 3),
        maxp(2, 2),
        conv(64, 3),
        maxp(2, 2),
        conv(128, 3),
        maxp(2, 2),
        conv(256, 3),
        maxp(2, 2),
        conv(512, 3),
        maxp(2, 1),
        conv(1024, 3),
        conv(1024, 3),
        conv(head_filters, 1),
        LayerSpec.detection(),
    )


def _patch_net_layers(head_filters: int) -> tuple[LayerSpec, ...]:
    """Patch-level detector with 1x1 bottlenecks between 3x3 convs."""
    conv = LayerSpec.conv
    maxp = LayerSpec.maxpool
    return (
        conv(32, 3),
        maxp(2, 2),
        conv(64, 3),
        maxp(2, 2),
        conv(128, 3),
        conv(64, 1),
        conv(128, 3),
        maxp(2, 2),
        conv(256, 3),
        conv(128, 1),
        conv(256, 3),
        conv(512, 3),
        conv(256, 1),
        conv(512, 3),
        conv(head_filters, 1),
        LayerSpec.detection(),
    )


def builtin_archs() -> dict[str, ArchSpec]:
    """The five detector architectures the pipeline stages are shaped for."""
    archs = {}

    def add(name, width, height, channels, layers, classes, anchors=5):
        archs[name] = ArchSpec(
            name=name,
            input=TensorShape(width, height, channels),
            layers=layers,
            classes=classes,
            anchors=anchors,
        )

    # Full-frame vehicle detectors: one-class (cars only) and two-class
    # (cars + motorcycles) variants differ only in the head width.
    add("fast-yolo-1class", 416, 416, 3, _frontal_backbone(30), classes=1)
    add("fast-yolo-2class", 416, 416, 3, _frontal_backbone(35), classes=2)
    # Character segmentation over the plate patch (one "character" class).
    add("cr-net-seg", 240, 80, 3, _patch_net_layers(30), classes=1)
    # Letter recognition: 26 classes over a wider patch.
    add("cr-net-letters", 270, 80, 3, _patch_net_layers(155), classes=26)
    # Digit recognition drops the first four layers (input is tiny) and
    # classifies 10 digits.
    add("cr-net-digits", 42, 26, 3, _patch_net_layers(75)[4:], classes=10)
    return archs
