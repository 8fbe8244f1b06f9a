"""Command-line entry point: ``prep run|metrics|validate|convert``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from .colmap import ColmapParseError, read_model
from .config import ConfigError, load_config
from .export import PoseMissingError, emit_llff, emit_transforms_json, parse_flavors, validate_dataset, Flavor
from .metrics import compare
from .pipeline import PipelineFailure, run_pipeline
from .poses import DegenerateBoundsError
from .stub_estimator import IMAGE_SUFFIXES

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE, EXIT_INVALID = 0, 2, 3, 4

logger = logging.getLogger("nerfprep")


def _setup_logging() -> None:
    level = os.environ.get("PREP_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _camera_list(text: str) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def _add_run(sub) -> None:
    p = sub.add_parser("run", help="run the full preparation pipeline")
    p.add_argument("--config", required=True, type=Path, help="TOML file of flat PipelineConfig keys")
    p.add_argument("--input-root", type=Path)
    p.add_argument("--output-root", type=Path)
    p.add_argument("--k", type=int)
    p.add_argument("--h-b", type=float)
    p.add_argument("--h-b-step", type=float)
    p.add_argument("--h-s", type=int)
    p.add_argument("--min-pose-coverage", type=float)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--flavor", choices=("blender", "llff", "both"))
    p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--pose-cmd")
    p.add_argument("--decode-cmd")
    p.add_argument("--rotation-map", type=_camera_list, metavar="CAM[,CAM...]",
                   help="camera ids whose frames are turned by 180 degrees")
    p.add_argument("--exclusion-list", type=Path)
    p.add_argument("--filename-pattern")
    p.add_argument("--workers", type=int)


def cmd_run(args) -> int:
    keys = ("input_root", "output_root", "k", "h_b", "h_b_step", "h_s", "min_pose_coverage", "max_retries",
            "flavor", "strict", "pose_cmd", "decode_cmd", "rotation_map", "exclusion_list",
            "filename_pattern", "workers")
    try:
        config = load_config(args.config, {k: getattr(args, k) for k in keys})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run_pipeline(config)
    except PipelineFailure as exc:
        print(f"pipeline failed: {exc}", file=sys.stderr)
        manifest, code = exc.manifest, EXIT_FAILURE
    else:
        code = EXIT_OK
    _print({
        "status": manifest.status,
        "counts": manifest.counts,
        "attempts": len(manifest.attempts),
        "manifest": str(config.output_root / "manifest.json"),
        "determinism_hash": manifest.determinism_hash,
    })
    return code


def cmd_metrics(args) -> int:
    try:
        reports = compare(args.a, args.b)
    except (OSError, ValueError) as exc:
        print(f"metrics: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    for r in reports:
        _print(r.to_record())
    return EXIT_OK


def cmd_validate(args) -> int:
    report = validate_dataset(args.dataset, args.flavor)
    _print(report.to_record())
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_convert(args) -> int:
    out = args.out
    try:
        model, _ = read_model(args.model_dir)
        names = sorted(p.name for p in args.frames_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        posed = set(model.image_by_name()) & set(names)
        images = out / "images"
        images.mkdir(parents=True, exist_ok=True)
        for name in sorted(posed):
            shutil.copyfile(args.frames_dir / name, images / name)
        records = []
        for flavor in parse_flavors(args.flavor):
            if flavor is Flavor.BLENDER:
                ds = emit_transforms_json(model, out, frame_names=names, strict=args.strict,
                                          normalize=args.normalize)
            else:
                ds = emit_llff(model, out, frame_names=names, strict=args.strict)
            records.append(ds.to_record())
    except (ColmapParseError, PoseMissingError, DegenerateBoundsError, OSError, ValueError) as exc:
        print(f"convert: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    report = validate_dataset(out, args.flavor)
    _print({"datasets": records, "validation": report.to_record()})
    return EXIT_OK if report.ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prep", description="Prepare multi-camera frames as NeRF datasets.")
    sub = ap.add_subparsers(dest="command", required=True)
    _add_run(sub)

    p = sub.add_parser("metrics", help="PSNR and SSIM between two images or two directories")
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)

    p = sub.add_parser("validate", help="re-check an emitted dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("--flavor", choices=("blender", "llff", "both"), help="default: whatever is present")

    p = sub.add_parser("convert", help="turn a sparse model plus frames into a dataset")
    p.add_argument("model_dir", type=Path)
    p.add_argument("frames_dir", type=Path)
    p.add_argument("--out", type=Path, default=Path("dataset"))
    p.add_argument("--flavor", choices=("blender", "llff", "both"), default="both")
    p.add_argument("--strict", action="store_true", help="fail if any frame lacks a pose")
    p.add_argument("--no-normalize", dest="normalize", action="store_false",
                   help="keep estimator scene units in transforms.json")
    return ap


COMMANDS = {"run": cmd_run, "metrics": cmd_metrics, "validate": cmd_validate, "convert": cmd_convert}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
