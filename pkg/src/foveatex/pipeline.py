"""Batch rendering over a directory tree with deterministic, resumable manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from foveatex import iqa, stimuli
from foveatex.errors import InvalidArgument
from foveatex.geometry import Tessellation, TessellationConfig, build_tessellation
from foveatex.io import checksum, list_images, read_image, write_image
from foveatex.transforms import (
    DEFAULT_ALPHA,
    PUBLISHED_UNIFORM_SIGMA,
    SigmaSchedule,
    TextureParams,
    foveate_blur,
    foveate_texture,
    reference,
    uniform_blur,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
WORKERS_ENV = "FOVEATEX_WORKERS"
TRANSFORMS = ("reference", "foveate-texture", "foveate-blur", "uniform-blur")
BATTERIES = ("freq", "occlude", "cue-conflict")


def default_workers() -> int:
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def derive_seed(seed: int, rel_path: str) -> int:
    """Per-image seed from the global seed and the image's relative path."""
    digest = hashlib.blake2b(f"{seed}:{rel_path}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") & (2**63 - 1)


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclass(frozen=True)
class ManifestRecord:
    source: str
    operation: str
    params: dict
    seed: int | None
    output: str | None
    checksum: str | None
    error: str | None = None

    def sort_key(self):
        return (self.source, self.operation, json.dumps(self.params, sort_keys=True),
                self.output or "")


@dataclass
class StimulusManifest:
    config: dict
    records: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def sort(self) -> None:
        self.records.sort(key=ManifestRecord.sort_key)

    @property
    def errors(self) -> list:
        return [r for r in self.records if r.error]

    def to_json(self) -> str:
        data = {
            "schema_version": self.schema_version,
            "config": _jsonable(self.config),
            "records": [_jsonable(asdict(r)) for r in self.records],
        }
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "StimulusManifest":
        data = json.loads(text)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise InvalidArgument(f"unsupported manifest schema {data.get('schema_version')}")
        records = [ManifestRecord(**r) for r in data["records"]]
        return cls(data["config"], records, data["schema_version"])

    def write(self, path) -> None:
        """Atomic write: a crash leaves either the old manifest or the new one."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(self.to_json())
        os.replace(tmp, path)

    @classmethod
    def read(cls, path) -> "StimulusManifest":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class Job:
    source: str
    operation: str
    params: dict
    seed: int | None
    output: str
    render: Callable


def _run_jobs(jobs, output_root: Path, workers: int, previous: dict) -> list[ManifestRecord]:
    def run(job: Job) -> ManifestRecord:
        out_path = output_root / job.output
        key = (job.source, job.operation, json.dumps(_jsonable(job.params), sort_keys=True),
               job.output)
        prev = previous.get(key)
        if prev is not None and prev.seed == job.seed and out_path.exists():
            if checksum(out_path) == prev.checksum:
                return prev
        try:
            write_image(out_path, job.render())
        except Exception as exc:  # per-file failure, the batch continues
            log.warning("%s %s failed: %s", job.operation, job.source, exc)
            return ManifestRecord(job.source, job.operation, _jsonable(job.params), job.seed,
                                  None, None, f"{type(exc).__name__}: {exc}")
        return ManifestRecord(job.source, job.operation, _jsonable(job.params), job.seed,
                              job.output, checksum(out_path))

    if workers <= 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, jobs))


def sources_of(root) -> list[tuple[str, Path]]:
    """(relative path, path) for every image under ``root``; a file is its own source."""
    root = Path(root)
    if root.is_file():
        return [(root.name, root)]
    return [(p.relative_to(root).as_posix(), p) for p in list_images(root)]


def execute(jobs, output_root, config: dict, workers: int = 1) -> StimulusManifest:
    """Run ``jobs`` (resuming from any existing manifest) and write the sorted manifest."""
    output_root = Path(output_root)
    output_root.mkdir(parents=True, exist_ok=True)
    previous = _previous_records(output_root)
    manifest = StimulusManifest(_jsonable(config), _run_jobs(jobs, output_root, workers, previous))
    manifest.sort()
    manifest.write(output_root / MANIFEST_NAME)
    return manifest


def _previous_records(output_root: Path) -> dict:
    path = output_root / MANIFEST_NAME
    if not path.exists():
        return {}
    try:
        manifest = StimulusManifest.read(path)
    except (ValueError, KeyError, TypeError):
        return {}
    return {
        (r.source, r.operation, json.dumps(r.params, sort_keys=True), r.output): r
        for r in manifest.records
        if not r.error
    }


def _fmt(value) -> str:
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return f"{value:g}"


def _join(*parts) -> str:
    return "/".join(p.strip("/") for p in parts if p and p != ".")


def _png_name(rel: str) -> str:
    return str(Path(rel).with_suffix(".png").as_posix())


@dataclass(frozen=True)
class TransformSpec:
    kind: str = "reference"
    alpha: float | list = DEFAULT_ALPHA
    patch: int = 4
    sigma: float | list | None = None

    def __post_init__(self):
        if self.kind not in TRANSFORMS:
            raise InvalidArgument(f"unknown transform {self.kind!r}; choose from {TRANSFORMS}")

    def params(self) -> dict:
        if self.kind == "foveate-texture":
            return {"alpha": self.alpha, "patch": self.patch}
        if self.kind == "uniform-blur":
            return {"sigma": PUBLISHED_UNIFORM_SIGMA if self.sigma is None else self.sigma}
        if self.kind == "foveate-blur":
            if self.sigma is None:
                raise InvalidArgument("foveate-blur needs a per-ring sigma schedule")
            return {"sigma": list(self.sigma)}
        return {}

    def render(self, img, tess: Tessellation | None, seed: int) -> np.ndarray:
        if self.kind == "reference":
            return reference(img)
        if self.kind == "uniform-blur":
            return uniform_blur(img, float(self.params()["sigma"]))
        if self.kind == "foveate-blur":
            return foveate_blur(img, tess, SigmaSchedule.per_ring(self.sigma))
        return foveate_texture(img, tess, TextureParams(self.alpha, seed, self.patch))

    @property
    def needs_tessellation(self) -> bool:
        return self.kind in ("foveate-texture", "foveate-blur")

    @property
    def seeded(self) -> bool:
        return self.kind == "foveate-texture"


@dataclass(frozen=True)
class PipelineConfig:
    input_root: str
    output_root: str
    split: str | None = None
    transform: TransformSpec = TransformSpec()
    tessellation: TessellationConfig = TessellationConfig()
    seed: int = 0
    workers: int = 1
    batteries: tuple = ()
    residual_means: tuple | None = None
    occlusion_kinds: tuple = stimuli.OCCLUSION_KINDS
    occlusion_fractions: tuple = stimuli.DEFAULT_FRACTIONS
    cue_kinds: tuple = ("window", "square")
    cue_ratios: tuple = stimuli.DEFAULT_FRACTIONS
    freq_modes: tuple = ("color", "gray")

    def __post_init__(self):
        if self.workers < 1:
            raise InvalidArgument("workers must be >= 1")
        for b in self.batteries:
            if b not in BATTERIES:
                raise InvalidArgument(f"unknown battery {b!r}; choose from {BATTERIES}")

    @property
    def source_root(self) -> Path:
        root = Path(self.input_root)
        return root / self.split if self.split else root

    def snapshot(self) -> dict:
        """Config recorded in the manifest; run-local settings (output root, workers) excluded."""
        d = asdict(self)
        d.pop("workers")
        d.pop("output_root")
        d["tessellation"] = self.tessellation.to_dict()
        return _jsonable(d)


_SECTION_KEYS = {"transform", "tessellation", "freq", "occlude", "cue_conflict"}


def load_config(path, **overrides) -> PipelineConfig:
    """Read a TOML pipeline config; keyword overrides that are not None win."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return config_from_dict(raw, **overrides)


def config_from_dict(raw: dict, **overrides) -> PipelineConfig:
    raw = dict(raw)
    transform = dict(raw.pop("transform", {}))
    tess = dict(raw.pop("tessellation", {}))
    freq = raw.pop("freq", {})
    occ = raw.pop("occlude", {})
    cue = raw.pop("cue_conflict", {})
    if isinstance(transform.get("sigma"), str):
        transform["sigma"] = SigmaSchedule.load(transform["sigma"]).sigma
    tover = {k: overrides.pop(k) for k in ("kind", "alpha", "sigma") if k in overrides}
    transform.update({k: v for k, v in tover.items() if v is not None})
    kwargs = {k: v for k, v in raw.items() if k not in _SECTION_KEYS}
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    if "workers" not in kwargs:
        kwargs["workers"] = default_workers()
    if "batteries" in kwargs:
        kwargs["batteries"] = tuple(kwargs["batteries"])
    if "residual_means" in freq:
        kwargs["residual_means"] = tuple(freq["residual_means"])
    if "modes" in freq:
        kwargs["freq_modes"] = tuple(freq["modes"])
    if "kinds" in occ:
        kwargs["occlusion_kinds"] = tuple(occ["kinds"])
    if "fractions" in occ:
        kwargs["occlusion_fractions"] = tuple(occ["fractions"])
    if "kinds" in cue:
        kwargs["cue_kinds"] = tuple(cue["kinds"])
    if "ratios" in cue:
        kwargs["cue_ratios"] = tuple(cue["ratios"])
    return PipelineConfig(
        transform=TransformSpec(**transform),
        tessellation=TessellationConfig.from_dict(tess),
        **kwargs,
    )


def frequency_jobs(sources: list[tuple[str, Path]], means_by_mode: dict, modes=("color", "gray"),
                   prefix: str = "freq") -> list[Job]:
    """Eight low-pass and eight high-pass renders per source and colour mode."""
    jobs = []
    for rel, path in sources:
        for mode in modes:
            for kind, sigmas in (("lowpass", stimuli.LOWPASS_SIGMAS),
                                 ("highpass", stimuli.HIGHPASS_SIGMAS)):
                for s in sigmas:
                    spec = stimuli.FrequencySpec(kind, float(s), mode, means_by_mode.get(mode))
                    fn = stimuli.lowpass if kind == "lowpass" else stimuli.highpass
                    params = {"kind": kind, "sigma": float(s), "mode": mode}
                    out = _join(prefix, kind, mode, f"sigma_{_fmt(float(s))}", _png_name(rel))
                    jobs.append(Job(rel, "freq", params, None, out,
                                    lambda p=path, f=fn, sp=spec: f(read_image(p), sp)))
    return jobs


def frequency_battery(source_dir, output_root, residual_means_by_mode: dict | None = None,
                      modes=("color", "gray"), workers: int = 1) -> StimulusManifest:
    """Render the full frequency battery for every image under ``source_dir``."""
    sources = sources_of(source_dir)
    if residual_means_by_mode is None:
        residual_means_by_mode = _corpus_means(sources, modes)
    jobs = frequency_jobs(sources, residual_means_by_mode, modes)
    config = {"source_dir": str(source_dir), "modes": list(modes),
              "residual_means": {m: list(v) for m, v in residual_means_by_mode.items()}}
    return execute(jobs, output_root, config, workers)


def _corpus_means(sources, modes) -> dict:
    images = []
    for _, p in sources:
        try:
            images.append(read_image(p))
        except Exception:
            continue
    if not images:
        return {}
    return {m: stimuli.residual_means(images, m) for m in modes}


def occlusion_jobs(sources, kinds, fractions, fill=0.5, prefix="occlude") -> list[Job]:
    jobs = []
    for rel, path in sources:
        for kind in kinds:
            for f in fractions:
                spec = stimuli.OcclusionSpec(kind, float(f), fill)
                params = {"kind": kind, "fraction": float(f)}
                out = _join(prefix, kind, f"fraction_{_fmt(float(f))}", _png_name(rel))
                jobs.append(Job(rel, "occlude", params, None, out,
                                lambda p=path, sp=spec: stimuli.occlude(read_image(p), sp)))
    return jobs


def _class_of(rel: str) -> str:
    parts = Path(rel).parts
    return parts[0] if len(parts) > 1 else ""


def cue_conflict_jobs(sources, kinds, ratios, seed: int, prefix="cue-conflict",
                      feather: float = 0.0) -> list[Job]:
    """Inner image from each source, outer image from its paired class (same index mod size)."""
    by_class: dict[str, list] = {}
    for rel, path in sources:
        by_class.setdefault(_class_of(rel), []).append((rel, path))
    if len(by_class) < 2:
        return []
    classes = [_class_of(rel) for rel, _ in sources]
    jobs = []
    for kind in kinds:
        pairs = stimuli.pair_classes(classes, kind, seed)
        idx = {c: 0 for c in by_class}
        for (rel, path), (inner_c, outer_c) in zip(sources, pairs):
            pool = by_class[outer_c]
            outer_rel, outer_path = pool[idx[inner_c] % len(pool)]
            idx[inner_c] += 1
            for r in ratios:
                spec = stimuli.CueConflictSpec(kind, float(r), feather, inner_c, outer_c)
                params = {"kind": kind, "ratio": float(r), "inner_class": inner_c,
                          "outer_class": outer_c, "outer_source": outer_rel}
                if feather:
                    params["feather"] = feather
                out = _join(prefix, kind, f"ratio_{_fmt(float(r))}", _png_name(rel))
                jobs.append(Job(
                    rel, "cue-conflict", params, None, out,
                    lambda a=path, b=outer_path, sp=spec: stimuli.cue_conflict(
                        read_image(a), read_image(b), sp),
                ))
    return jobs


def run_pipeline(cfg: PipelineConfig) -> StimulusManifest:
    """Transform every input image, run the configured batteries, write the manifest."""
    src_root = cfg.source_root
    if not src_root.exists():
        raise InvalidArgument(f"input root {src_root} does not exist")
    out_root = Path(cfg.output_root)
    out_root.mkdir(parents=True, exist_ok=True)
    if not os.access(out_root, os.W_OK):
        raise PermissionError(f"output root {out_root} is not writable")
    previous = _previous_records(out_root)

    sources = sources_of(src_root)
    tess = build_tessellation(cfg.tessellation) if cfg.transform.needs_tessellation else None
    spec = cfg.transform
    params = spec.params()

    def transform_job(rel, path):
        seed = derive_seed(cfg.seed, rel) if spec.seeded else None
        return Job(rel, spec.kind, params, seed, f"{spec.kind}/{_png_name(rel)}",
                   lambda: spec.render(read_image(path), tess, seed))

    records = _run_jobs([transform_job(r, p) for r, p in sources], out_root, cfg.workers,
                        previous)
    staged = [(r.source, out_root / r.output) for r in records if not r.error]

    jobs = []
    if "freq" in cfg.batteries and staged:
        if cfg.residual_means is not None:
            means = {m: cfg.residual_means for m in cfg.freq_modes}
        else:
            means = _corpus_means(staged, cfg.freq_modes)
        jobs += frequency_jobs(staged, means, cfg.freq_modes, prefix=f"freq/{spec.kind}")
    if "occlude" in cfg.batteries:
        jobs += occlusion_jobs(staged, cfg.occlusion_kinds, cfg.occlusion_fractions,
                               prefix=f"occlude/{spec.kind}")
    if "cue-conflict" in cfg.batteries:
        jobs += cue_conflict_jobs(staged, cfg.cue_kinds, cfg.cue_ratios, cfg.seed,
                                  prefix=f"cue-conflict/{spec.kind}")
    records += _run_jobs(jobs, out_root, cfg.workers, previous)

    manifest = StimulusManifest(cfg.snapshot(), records)
    manifest.sort()
    manifest.write(out_root / MANIFEST_NAME)
    return manifest


def verify_manifest(manifest: StimulusManifest, output_root) -> list[str]:
    """Problems found: missing outputs, checksum mismatches, unlisted files."""
    root = Path(output_root)
    problems = []
    listed = set()
    for r in manifest.records:
        if r.error:
            continue
        listed.add(r.output)
        path = root / r.output
        if not path.exists():
            problems.append(f"missing {r.output}")
        elif checksum(path) != r.checksum:
            problems.append(f"checksum mismatch {r.output}")
    for p in root.rglob("*"):
        rel = p.relative_to(root).as_posix()
        if p.is_file() and rel != MANIFEST_NAME and rel not in listed:
            problems.append(f"unlisted {rel}")
    return problems


def _matched_files(ref_dir: Path, cand_dir: Path):
    ref = {p.relative_to(ref_dir).with_suffix("").as_posix(): p for p in list_images(ref_dir)}
    cand = {p.relative_to(cand_dir).with_suffix("").as_posix(): p for p in list_images(cand_dir)}
    missing = sorted(set(ref) ^ set(cand))
    if missing:
        warnings.warn(f"{cand_dir}: {len(missing)} unmatched files skipped: {missing[:5]}",
                      RuntimeWarning, stacklevel=3)
    return [(k, ref[k], cand[k]) for k in sorted(set(ref) & set(cand))]


def iqa_scores(ref_dir, cand_dir, metrics=iqa.TABLE_METRICS, workers: int = 1):
    """Per-file scores: list of (file, {metric: score})."""
    pairs = _matched_files(Path(ref_dir), Path(cand_dir))

    def one(item):
        name, a, b = item
        return name, iqa.compute(read_image(a), read_image(b), metrics)

    if workers <= 1:
        return [one(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, pairs))


def write_iqa_csv(path_or_fh, scores, metrics) -> None:
    """Rows ``file,metric,score`` followed by ``mean`` and ``std`` summary rows per metric."""
    own = isinstance(path_or_fh, (str, os.PathLike))
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.writer(fh)
        w.writerow(["file", "metric", "score"])
        for name, vals in scores:
            for m in metrics:
                w.writerow([name, m, repr(vals[m])])
        for m in metrics:
            if scores:
                rep = iqa.aggregate([v[m] for _, v in scores], m)
                w.writerow(["mean", m, repr(rep.mean)])
                w.writerow(["std", m, repr(rep.std)])
    finally:
        if own:
            fh.close()


def report_table1(ref_dir, candidate_dirs, workers: int = 1) -> list[dict]:
    """One mean/std row per candidate directory, metric columns in table order."""
    rows = []
    for cand in candidate_dirs:
        scores = iqa_scores(ref_dir, cand, iqa.TABLE_METRICS, workers)
        row = {"transform": Path(cand).name, "n": len(scores)}
        for m in iqa.TABLE_METRICS:
            if scores:
                rep = iqa.aggregate([v[m] for _, v in scores], m)
                row[f"{m}_mean"], row[f"{m}_std"] = rep.mean, rep.std
            else:
                row[f"{m}_mean"] = row[f"{m}_std"] = float("nan")
        rows.append(row)
    return rows


def table_columns() -> list[str]:
    cols = ["transform", "n"]
    for m in iqa.TABLE_METRICS:
        cols += [f"{m}_mean", f"{m}_std"]
    return cols


def write_table_csv(path_or_fh, rows) -> None:
    own = isinstance(path_or_fh, (str, os.PathLike))
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.DictWriter(fh, fieldnames=table_columns())
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if own:
            fh.close()


def read_table_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for row in csv.DictReader(fh):
            out.append({k: (v if k == "transform" else (int(v) if k == "n" else float(v)))
                        for k, v in row.items()})
        return out
