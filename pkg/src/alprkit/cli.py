"""Command-line interface.

Subcommands cover the full workflow: synthesize data, split it, run the
cascade, calibrate thresholds and margins, validate architectures,
expand augmentation manifests, render heat maps, and re-render reports
from logs.  Exit codes: 0 success, 2 configuration or usage problems,
3 dataset problems, 4 unavailable backend, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .augment import (
    AugmentOptions,
    expand_training_set,
    format_manifest,
    parse_manifest,
    seed_letter_samples,
)
from .config import (
    PRESETS,
    SPLIT_CHOICES,
    ConfigError,
    PipelineConfig,
    _num as _fmt_value,
    apply_overrides,
    load_config,
    preset,
    save_config,
    validate_arch_names,
)
from .dataset import (
    AnnotationParseError,
    DatasetError,
    SplitError,
    Track,
    generate_synthetic,
    load_dataset,
    load_split,
    split_dataset,
    write_dataset,
    write_split,
)
from .detect import (
    BackendUnavailableError,
    CalibrationError,
    ImageRef,
    calibrate_margin,
    calibrate_threshold,
    deployed_margin,
)
from .evaluation import STAGE_ORDER, heatmap, heatmap_png, heatmap_text, render_report_text
from .geometry import enlarge_to_aspect, expand_margin, shift
from .netspec import ArchSpec, builtin_archs, parse_descriptor, validate
from .pipeline import build_backends, frame_key, replay_logs, run_pipeline, write_run_outputs

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATASET = 3
EXIT_BACKEND = 4

SPLITS_DIR_NAME = "splits"


# --- shared helpers ---------------------------------------------------------


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file or preset, then --set pairs, then the global flags."""
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise ConfigError("--config and --preset are mutually exclusive")
    if getattr(args, "config", None):
        config = load_config(args.config)
    else:
        config = preset(getattr(args, "preset", None) or "default")
    overrides: dict[str, str] = {}
    for item in getattr(args, "set", []) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if getattr(args, "dataset", None):
        overrides["dataset.root"] = args.dataset
    if getattr(args, "split", None):
        overrides["dataset.split"] = args.split
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    if args.out is not None:
        overrides["out"] = args.out
    config = apply_overrides(config, overrides)
    validate_arch_names(config)
    return config


def _load_tracks(config: PipelineConfig) -> list[Track]:
    root = Path(config.dataset_root)
    if not root.is_dir():
        raise ConfigError(f"dataset root not found: {root}")
    tracks = load_dataset(root)
    if config.split == "all":
        return tracks
    splits_dir = root / SPLITS_DIR_NAME
    if not splits_dir.is_dir():
        raise DatasetError(
            f"no {SPLITS_DIR_NAME}/ directory under {root}; run the split command first"
        )
    wanted = set(getattr(load_split(splits_dir), config.split))
    selected = [t for t in tracks if t.vehicle_id in wanted]
    missing = wanted - {t.vehicle_id for t in selected}
    if missing:
        raise DatasetError(f"split lists unknown tracks: {sorted(missing)[:5]}")
    return selected


def _out_path(args: argparse.Namespace, default_name: str) -> Path:
    """File target for commands that emit one file; --out may be a dir."""
    if args.out is None:
        return Path(default_name)
    out = Path(args.out)
    if out.is_dir():
        return out / default_name
    return out


# --- run --------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    tracks = _load_tracks(config)
    result = run_pipeline(tracks, config)
    write_run_outputs(result, config, config.out_dir)
    ordered = [result.stages[name] for name in STAGE_ORDER]
    sys.stdout.write(render_report_text(ordered, result.recognition))
    sys.stdout.write(f"artifacts written to {config.out_dir}\n")
    return EXIT_OK


# --- calibrate --------------------------------------------------------------


def cmd_calibrate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if config.split == "all":
        config = apply_overrides(config, {"dataset.split": "validation"})
    tracks = _load_tracks(config)
    backends = build_backends(tracks, config)

    vehicle_records = []
    charseg_records = []
    vehicle_pairs = []
    lp_pairs = []
    for track in tracks:
        for i, f in enumerate(track.frames):
            fk = frame_key(track.vehicle_id, i)
            dets = backends.vehicle.detect(ImageRef(fk))
            vehicle_records.append((dets, [f.vehicle.box]))
            if dets:
                best = max(dets, key=lambda d: d.confidence)
                vehicle_pairs.append((best.box, f.plate.box))

            patch = expand_margin(f.vehicle.box, config.vehicle.margin, config.frame)
            lp_dets = backends.lp.detect(ImageRef(fk, patch))
            if lp_dets:
                best_lp = max(lp_dets, key=lambda d: d.confidence)
                mapped = shift(best_lp.box, patch.x, patch.y)
                lp_pairs.extend((mapped, c) for c in f.chars)

            lp_patch = enlarge_to_aspect(
                expand_margin(f.plate.box, config.lp.margin, config.frame),
                config.lp_aspect_target,
                config.frame,
            )
            char_dets = backends.chars.detect(ImageRef(fk, lp_patch))
            gt_local = [shift(c, -lp_patch.x, -lp_patch.y) for c in f.chars]
            charseg_records.append((char_dets, gt_local))

    vehicle_threshold = calibrate_threshold(vehicle_records)
    charseg_threshold = calibrate_threshold(charseg_records)
    vehicle_margin = deployed_margin(
        calibrate_margin(vehicle_pairs, config.frame), config.margin_policy
    )
    lp_margin = deployed_margin(
        calibrate_margin(lp_pairs, config.frame), config.margin_policy
    )

    calibrated = apply_overrides(
        config,
        {
            "vehicle.threshold": _fmt_value(vehicle_threshold),
            "charseg.threshold": _fmt_value(charseg_threshold),
            "vehicle.margin": _fmt_value(vehicle_margin),
            "lp.margin": _fmt_value(lp_margin),
        },
    )
    out = _out_path(args, "calibrated.txt")
    save_config(out, calibrated)
    print(f"vehicle.threshold = {_fmt_value(vehicle_threshold)}")
    print(f"charseg.threshold = {_fmt_value(charseg_threshold)}")
    print(f"vehicle.margin = {_fmt_value(vehicle_margin)} ({config.margin_policy.value})")
    print(f"lp.margin = {_fmt_value(lp_margin)} ({config.margin_policy.value})")
    print(f"calibrated config written to {out}")
    return EXIT_OK


# --- netspec ----------------------------------------------------------------


def _load_arch(name: str) -> ArchSpec:
    builtin = builtin_archs().get(name)
    if builtin is not None:
        return builtin
    path = Path(name)
    if path.is_file():
        return parse_descriptor(path.read_text())
    raise ConfigError(
        f"unknown architecture {name!r}: not a builtin "
        f"({', '.join(sorted(builtin_archs()))}) and not a descriptor file"
    )


def cmd_netspec(args: argparse.Namespace) -> int:
    code = EXIT_OK
    for name in args.archs:
        arch = _load_arch(name)
        report = validate(arch)
        print(f"{arch.name}: input {arch.input} classes={arch.classes} anchors={arch.anchors}")
        for idx, shape_in, shape_out in report.shapes:
            print(f"  {idx:2d}  {str(arch.layers[idx]):<16} {shape_in} -> {shape_out}")
        if report.ok:
            print("  ok")
        else:
            for violation in report.violations:
                print(f"  violation: {violation}")
            code = EXIT_FAILURE
    return code


# --- augment ----------------------------------------------------------------


def cmd_augment(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    path = Path(args.manifest)
    if not path.is_file():
        raise DatasetError(f"manifest not found: {path}")
    samples = parse_manifest(path.read_text())
    options = AugmentOptions(
        negatives=config.augment.negatives and not args.no_negatives,
        flips=config.augment.flips and not args.no_flips,
        cross_product=config.augment.cross_product,
    )
    expanded = expand_training_set(samples, options)
    if args.seed_letters:
        expanded = list(expanded) + list(seed_letter_samples(samples))
    out = _out_path(args, "augmented.txt")
    out.write_text(format_manifest(expanded))
    print(f"{len(samples)} samples in, {len(expanded)} out -> {out}")
    return EXIT_OK


# --- synth / split ----------------------------------------------------------


def _parse_fractions(raw: str, expected: int) -> tuple[float, ...]:
    try:
        parts = tuple(float(p) for p in raw.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {raw!r}") from None
    if len(parts) != expected:
        raise ConfigError(f"expected {expected} comma-separated numbers, got {raw!r}")
    return parts


def cmd_synth(args: argparse.Namespace) -> int:
    mix = _parse_fractions(args.mix, 3)
    tracks = generate_synthetic(
        seed=args.seed if args.seed is not None else 0,
        n_tracks=args.tracks,
        mix=mix,
        frames_per_track=args.frames,
        protrusion=args.protrusion,
    )
    out = Path(args.out or "data/synth")
    write_dataset(out, tracks)
    print(f"{len(tracks)} tracks x {args.frames} frames -> {out}")
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    root = Path(args.root)
    if not root.is_dir():
        raise ConfigError(f"dataset root not found: {root}")
    tracks = load_dataset(root)
    fractions = _parse_fractions(args.fractions, 3)
    result = split_dataset(
        tracks, fractions=fractions, seed=args.seed if args.seed is not None else 0
    )
    out = Path(args.out) if args.out else root / SPLITS_DIR_NAME
    write_split(out, result)
    print(
        f"train {len(result.train)}, test {len(result.test)}, "
        f"validation {len(result.validation)} -> {out}"
    )
    return EXIT_OK


# --- heatmap / report -------------------------------------------------------


def cmd_heatmap(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    tracks = _load_tracks(config)
    boxes = [
        f.vehicle.box if args.target == "vehicles" else f.plate.box
        for t in tracks
        for f in t.frames
    ]
    grid = heatmap(boxes, config.frame, args.bins)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text_path = out_dir / f"heatmap_{args.target}.txt"
    png_path = out_dir / f"heatmap_{args.target}.png"
    text_path.write_text(heatmap_text(grid))
    heatmap_png(grid, str(png_path))
    print(f"{len(boxes)} boxes -> {text_path} and {png_path}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    for required in ("stage_log.jsonl", "readings.jsonl", "fused.jsonl"):
        if not (run_dir / required).is_file():
            raise DatasetError(f"missing {required} under {run_dir}")
    stages, recognition = replay_logs(run_dir)
    sys.stdout.write(render_report_text(stages, recognition))
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alprkit",
        description="Cascaded license-plate reading over annotated tracks.",
    )
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--workers", type=int, default=None, help="worker pool size")
    parser.add_argument("--out", default=None, help="output directory or file")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="config file (see the run artifacts for a template)")
        p.add_argument("--preset", choices=sorted(PRESETS), help="named base config")
        p.add_argument("--dataset", help="dataset root override")
        p.add_argument("--split", choices=SPLIT_CHOICES, help="track subset to use")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override any config key (repeatable)",
        )

    p = sub.add_parser("run", help="run the full cascade and write reports")
    with_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="derive thresholds and margins from a split")
    with_config_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("netspec", help="validate architectures and print shape chains")
    p.add_argument("archs", nargs="+", help="builtin arch names or descriptor files")
    p.set_defaults(func=cmd_netspec)

    p = sub.add_parser("augment", help="expand a labeled-sample manifest")
    with_config_flags(p)
    p.add_argument("manifest", help="input manifest file")
    p.add_argument("--no-negatives", action="store_true", help="skip inverted copies")
    p.add_argument("--no-flips", action="store_true", help="skip flip-derived copies")
    p.add_argument(
        "--seed-letters",
        action="store_true",
        help="append letter samples derived from flip-invariant digits",
    )
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("synth", help="generate a synthetic annotated dataset")
    p.add_argument("--tracks", type=int, default=150)
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--mix", default="0.6,0.2,0.2", help="car-gray,car-red,motorcycle fractions")
    p.add_argument("--protrusion", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="stratified train/test/validation assignment")
    p.add_argument("root", help="dataset root")
    p.add_argument("--fractions", default="0.4,0.4,0.2")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("heatmap", help="spatial distribution of annotated boxes")
    with_config_flags(p)
    p.add_argument("--target", choices=("vehicles", "plates"), default="plates")
    p.add_argument("--bins", type=int, default=24, help="grid cells per axis")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("report", help="re-render the report from run logs")
    p.add_argument("run_dir", help="directory written by the run command")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, AnnotationParseError, SplitError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except BackendUnavailableError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
