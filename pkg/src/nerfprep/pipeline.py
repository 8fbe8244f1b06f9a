"""Stage sequencing, threshold-escalation retry and the run manifest.

Layout under ``output_root``::

    manifest.json          run summary (config, counts, attempts, datasets)
    frames.jsonl           one record per discovered frame per attempt
    work/attempt_<n>/      frames/ handed to the pose command, model/, pose_cmd.log
    dataset/               images/ plus transforms.json and/or poses_bounds.npy

``work/`` and ``dataset/`` are recreated on every run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shlex
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from .blur import Decision, filter_blurred, score_frames
from .colmap import ColmapParseError, read_model
from .config import PipelineConfig
from .dedup import find_duplicates, hash_frames, reduce_duplicates
from .export import Flavor, PoseMissingError, emit_llff, emit_transforms_json, parse_flavors, validate_dataset
from .frames import Frame, FrameId, FrameSet, apply_rotation_map, enumerate_sources, load_exclusions, subsample
from .poses import DegenerateBoundsError

logger = logging.getLogger(__name__)

STAGE_ORDER = ("ingest", "subsample", "rotate", "blur", "dedup", "pose", "convert")
MANIFEST_FILE = "manifest.json"
FRAMES_FILE = "frames.jsonl"

STATUS_SUCCESS = "success"
STATUS_FAILED = "failed"
STATUS_NOTHING = "nothing to do"


class PipelineFailure(RuntimeError):
    def __init__(self, message: str, manifest: "PipelineManifest"):
        super().__init__(message)
        self.manifest = manifest


@dataclass
class PipelineManifest:
    config: dict
    status: str = STATUS_FAILED
    counts: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)
    rotated: list[str] = field(default_factory=list)
    attempts: list[dict] = field(default_factory=list)
    datasets: list[dict] = field(default_factory=list)
    error: str | None = None
    frame_records: list[dict] = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def document(self) -> dict:
        """The manifest.json body without the hash or timing."""
        return {
            "status": self.status,
            "config": self.config,
            "stage_order": list(STAGE_ORDER),
            "counts": self.counts,
            "sources": self.sources,
            "rotated": self.rotated,
            "attempts": self.attempts,
            "datasets": self.datasets,
            "error": self.error,
        }

    def frames_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.frame_records)

    @property
    def determinism_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.document(), sort_keys=True).encode())
        h.update(self.frames_jsonl().encode())
        return h.hexdigest()

    def write(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        doc = self.document()
        doc["determinism_hash"] = self.determinism_hash
        doc["timing"] = self.timing
        path = directory / MANIFEST_FILE
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (directory / FRAMES_FILE).write_text(self.frames_jsonl(), encoding="utf-8")
        return path


class _Timer:
    def __init__(self, sink: dict):
        self.sink = sink

    def __call__(self, name: str):
        timer = self

        class _Span:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.sink[name] = timer.sink.get(name, 0.0) + time.perf_counter() - self.t0

        return _Span()


def frame_file_name(frame: Frame, rotated: bool) -> str:
    """File name a frame gets in the estimator's input directory."""
    ext = ".png" if rotated else frame.source_path.suffix.lower()
    return str(frame.id).replace("/", "__") + ext


def render_command(template: str, **values) -> list[str]:
    """Split a command template shell-style, then fill ``{name}`` placeholders per token."""
    argv = []
    for token in shlex.split(template):
        for key, value in values.items():
            token = token.replace("{" + key + "}", str(value))
        argv.append(token)
    return argv


def _write_frames(frames: FrameSet, names: dict[FrameId, str], rotated: set[FrameId], out: Path) -> None:
    out.mkdir(parents=True)
    for frame in frames:
        dest = out / names[frame.id]
        if frame.id in rotated:
            Image.fromarray(frame.rgb).save(dest, format="PNG")
        else:
            shutil.copyfile(frame.source_path, dest)


def _run_pose_cmd(config: PipelineConfig, frames_dir: Path, model_dir: Path, log_path: Path) -> int:
    argv = render_command(config.pose_cmd, frames_dir=frames_dir, model_dir=model_dir)
    logger.info("running pose estimator: %s", shlex.join(argv))
    with open(log_path, "wb") as log:
        try:
            return subprocess.run(argv, stdout=log, stderr=subprocess.STDOUT, check=False).returncode
        except OSError as exc:
            log.write(f"could not start pose command: {exc}\n".encode())
            return 127


def _skip_record(skip, root: Path) -> dict:
    return {
        "path": skip.path.relative_to(root).as_posix(),
        "reason": skip.reason,
        "frame": str(skip.frame_id) if skip.frame_id else None,
        "detail": skip.detail,
    }


def run_pipeline(config: PipelineConfig) -> PipelineManifest:
    """Run every stage; raises :class:`PipelineFailure` when no attempt succeeds.

    The manifest is written to ``output_root`` in every outcome.
    """
    manifest = PipelineManifest(config=config.snapshot())
    timing: dict = {"started_at": time.time(), "stages": {}, "attempts": []}
    manifest.timing = timing
    span = _Timer(timing["stages"])
    out_root = config.output_root
    out_root.mkdir(parents=True, exist_ok=True)
    for sub in ("work", "dataset"):
        shutil.rmtree(out_root / sub, ignore_errors=True)

    def fail(message: str):
        manifest.status = STATUS_FAILED
        manifest.error = message
        manifest.write(out_root)
        raise PipelineFailure(message, manifest)

    # decoding and the threshold-independent stages run once
    if config.decode_cmd:
        argv = render_command(config.decode_cmd, input_root=config.input_root)
        try:
            code = subprocess.run(argv, check=False).returncode
        except OSError as exc:
            fail(f"decode command could not start: {exc}")
        if code != 0:
            fail(f"decode command exited with status {code}")

    with span("ingest"):
        try:
            scan = enumerate_sources(
                config.input_root,
                config.filename_pattern,
                load_exclusions(config.exclusion_list),
                workers=config.workers,
            )
        except OSError as exc:
            fail(f"ingest: {exc}")
    raw = scan.frames
    manifest.sources = {
        "discovered": len(raw) + len(scan.skipped),
        "skipped": [_skip_record(s, config.input_root) for s in scan.skipped],
    }
    with span("subsample"):
        sampled = subsample(raw, config.k)
    with span("rotate"):
        rotated_set = apply_rotation_map(sampled, config.rotation_map)
    rotated = {f.id for f, g in zip(sampled, rotated_set) if f is not g}
    manifest.rotated = [str(fid) for fid in sorted(rotated)]

    manifest.counts = {"raw": len(raw), "sampled": len(sampled), "deblurred": 0, "deduped": 0, "posed": 0}
    if len(sampled) == 0:
        manifest.status = STATUS_NOTHING
        manifest.frame_records = _frame_records(0, scan, raw, sampled, config.input_root)
        logger.info("no frames to process")
        manifest.write(out_root)
        return manifest

    with span("blur"):
        scores = score_frames(rotated_set, workers=config.workers)
    with span("dedup"):
        hashes = hash_frames(rotated_set, workers=config.workers)
    names = {f.id: frame_file_name(f, f.id in rotated) for f in rotated_set}
    if len(set(names.values())) != len(names):
        fail("frame ids map to colliding file names")

    flavors = parse_flavors(config.flavor)
    for n in range(config.max_retries + 1):
        h_b = config.h_b + n * config.h_b_step
        if h_b > 1.0:
            logger.warning("h_b would exceed 1 on attempt %d; stopping", n)
            break
        attempt_timing: dict = {}
        timing["attempts"].append(attempt_timing)
        aspan = _Timer(attempt_timing)
        record: dict = {"attempt": n, "h_b": h_b, "h_s": config.h_s}
        manifest.attempts.append(record)

        with aspan("blur"):
            deblurred, reports = filter_blurred(rotated_set, h_b, scores)
        with aspan("dedup"):
            clusters = find_duplicates(deblurred, config.h_s, hashes)
            deduped = reduce_duplicates(deblurred, clusters)
        record["counts"] = {
            "sampled": len(rotated_set),
            "blur_removed": len(rotated_set) - len(deblurred),
            "deblurred": len(deblurred),
            "dedup_removed": len(deblurred) - len(deduped),
            "deduped": len(deduped),
        }
        record["clusters"] = [c.to_record() for c in clusters]
        manifest.counts.update(deblurred=len(deblurred), deduped=len(deduped), posed=0)
        posed_names: set[str] = set()
        kept_names = {names[f.id] for f in deduped}

        def finish_records(status: str):
            record["status"] = status
            manifest.frame_records.extend(_frame_records(
                n, scan, raw, sampled, config.input_root,
                reports=reports, clusters=clusters, hashes=hashes, names=names, rotated=rotated,
                deduped=deduped, posed=posed_names if status in ("posed", "low_coverage") else None,
            ))

        if len(deduped) == 0:
            finish_records("no_frames")
            fail(f"attempt {n}: no frames left after filtering (h_b={h_b})")

        work = out_root / "work" / f"attempt_{n}"
        frames_dir, model_dir = work / "frames", work / "model"
        with aspan("write_frames"):
            _write_frames(deduped, names, rotated, frames_dir)
        model_dir.mkdir(parents=True)
        with aspan("pose"):
            code = _run_pose_cmd(config, frames_dir, model_dir, work / "pose_cmd.log")
        record["pose"] = {"exit_code": code, "log": (work / "pose_cmd.log").relative_to(out_root).as_posix()}
        if code != 0:
            logger.warning("attempt %d: pose command exited with status %d", n, code)
            finish_records("pose_cmd_failed")
            continue
        try:
            model, components = read_model(model_dir)
        except (ColmapParseError, OSError) as exc:
            record["pose"]["error"] = str(exc)
            finish_records("model_error")
            continue
        posed_names = set(model.image_by_name()) & kept_names
        coverage = len(posed_names) / len(deduped)
        record["pose"].update(components=components, posed=len(posed_names), coverage=coverage)
        manifest.counts["posed"] = len(posed_names)
        if coverage < config.min_pose_coverage:
            logger.warning("attempt %d: pose coverage %.3f below %.3f", n, coverage, config.min_pose_coverage)
            finish_records("low_coverage")
            continue
        finish_records("posed")

        with span("convert"):
            try:
                manifest.datasets = _emit(config, model, kept_names, posed_names, frames_dir, flavors)
            except (PoseMissingError, DegenerateBoundsError, ValueError) as exc:
                fail(f"convert: {exc}")
        manifest.status = STATUS_SUCCESS
        manifest.write(out_root)
        return manifest

    fail(f"no attempt reached pose coverage {config.min_pose_coverage} "
         f"after {len(manifest.attempts)} attempt(s)")


def _emit(config, model, kept_names, posed_names, frames_dir: Path, flavors) -> list[dict]:
    dataset = config.output_root / "dataset"
    images = dataset / "images"
    images.mkdir(parents=True)
    if config.strict and kept_names - posed_names:
        raise PoseMissingError(sorted(kept_names - posed_names))
    for name in sorted(posed_names):
        shutil.copyfile(frames_dir / name, images / name)
    out = []
    for flavor in flavors:
        if flavor is Flavor.BLENDER:
            ds = emit_transforms_json(model, dataset, frame_names=kept_names, strict=config.strict)
        else:
            ds = emit_llff(model, dataset, frame_names=kept_names, strict=config.strict)
        rec = ds.to_record()
        rec["path"] = ds.path.relative_to(config.output_root).as_posix()
        out.append(rec)
    report = validate_dataset(dataset, config.flavor)
    if not report.ok:
        raise ValueError("emitted dataset failed validation: " + "; ".join(report.violations[:5]))
    return out


def _frame_records(attempt, scan, raw, sampled, input_root, *, reports=(), clusters=(), hashes=None,
                   names=None, rotated=frozenset(), deduped=None, posed=None) -> list[dict]:
    """One record per discovered file, sorted by frame id then path."""
    recs = []
    for skip in scan.skipped:
        recs.append({"frame": str(skip.frame_id), "stage": "ingest", "disposition": "removed",
                     "reason": skip.reason, "path": skip.path.relative_to(input_root).as_posix()})
    sampled_ids = set(sampled.ids)
    blur = {r.frame: r for r in reports}
    dup = {m: (c.representative, d) for c in clusters for m, d in c.members.items()}
    kept = set(deduped.ids) if deduped is not None else set()
    for frame in raw:
        fid = frame.id
        rec = {"frame": str(fid), "path": frame.source_path.relative_to(input_root).as_posix()}
        if fid not in sampled_ids:
            rec.update(stage="subsample", disposition="removed", reason="not_sampled")
            recs.append(rec)
            continue
        rec["rotated"] = fid in rotated
        if fid in blur:
            rec.update(blur[fid].to_record())
        if hashes is not None:
            rec["phash"] = hashes[fid].hex
        if names is not None:
            rec["file"] = names[fid]
        if fid in blur and blur[fid].decision is Decision.REMOVE:
            rec.update(stage="blur", disposition="removed", reason="blurred")
        elif fid in dup:
            rep, d = dup[fid]
            rec.update(stage="dedup", disposition="removed", reason="near_duplicate",
                       representative=str(rep), distance=d)
        elif fid in kept and posed is not None and names[fid] not in posed:
            rec.update(stage="pose", disposition="removed", reason="pose_missing")
        elif fid in kept and posed is not None:
            rec.update(stage="convert", disposition="kept", reason=None)
        else:
            rec.update(stage="dedup" if deduped is not None else "rotate", disposition="kept", reason=None)
        recs.append(rec)
    for rec in recs:
        rec["attempt"] = attempt
    recs.sort(key=lambda r: (r["frame"], r["path"]))
    return recs
