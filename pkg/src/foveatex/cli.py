"""Command line interface.

Exit codes: 0 success, 1 some files failed, 2 fatal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from foveatex import iqa, pipeline, rdopt, stimuli
from foveatex.errors import InvalidArgument, PredictionParseError, UnreachableRate
from foveatex.geometry import TessellationConfig, build_tessellation
from foveatex.io import read_image, write_image
from foveatex.transforms import DEFAULT_ALPHA, SigmaSchedule, TextureParams

log = logging.getLogger("foveatex")

EXIT_OK, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _alpha(text: str):
    vals = _floats(text)
    return vals[0] if len(vals) == 1 else vals


def _add_tessellation_args(p):
    g = p.add_argument_group("tessellation")
    g.add_argument("--tessellation", help="tessellation JSON (from `tessellate`) or config JSON")
    g.add_argument("--image-size", type=int)
    g.add_argument("--fovea-radius", type=float)
    g.add_argument("--scaling", type=float)
    g.add_argument("--sectors", type=int)
    g.add_argument("--max-eccentricity", type=float)
    g.add_argument("--fixation", type=_floats, help="x,y in pixels")


def _tess_config(args) -> TessellationConfig:
    base = {}
    if args.tessellation:
        data = json.loads(Path(args.tessellation).read_text())
        base = data.get("config", data)
    flags = {
        "image_size": args.image_size,
        "fovea_radius": args.fovea_radius,
        "scaling": args.scaling,
        "angular_sectors": args.sectors,
        "max_eccentricity": args.max_eccentricity,
        "fixation": tuple(args.fixation) if args.fixation else None,
    }
    base.update({k: v for k, v in flags.items() if v is not None})
    return TessellationConfig.from_dict(base)


def _add_io_args(p, output_help="output directory"):
    p.add_argument("input", help="input image or directory")
    p.add_argument("-o", "--output", required=True, help=output_help)
    p.add_argument("--workers", type=int, default=None)


def _workers(args) -> int:
    return args.workers if args.workers else pipeline.default_workers()


def _finish(manifest) -> int:
    n_err = len(manifest.errors)
    log.info("%d records, %d errors", len(manifest.records), n_err)
    for rec in manifest.errors:
        print(f"error: {rec.source}: {rec.error}", file=sys.stderr)
    return EXIT_PARTIAL if n_err else EXIT_OK


def cmd_tessellate(args) -> int:
    tess = build_tessellation(_tess_config(args))
    text = json.dumps(tess.to_dict(), indent=2)
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text)
    if args.png_dir:
        out = Path(args.png_dir)
        for ring in range(tess.n_rings):
            write_image(out / f"ring_{ring:02d}.png", tess.ring_mask(ring))
        write_image(out / "sum.png", tess.ring_masks().sum(axis=0))
    return EXIT_OK


def _transform_cmd(kind):
    def run(args) -> int:
        sigma = None
        if kind == "uniform-blur":
            sigma = args.sigma
            if args.schedule:
                sched = SigmaSchedule.load(args.schedule)
                if sched.mode != "uniform":
                    raise InvalidArgument("uniform-blur needs a uniform schedule")
                sigma = sched.sigma
        elif kind == "foveate-blur":
            if not args.schedule:
                raise InvalidArgument("foveate-blur needs --schedule")
            sched = SigmaSchedule.load(args.schedule)
            if sched.mode != "per_ring":
                raise InvalidArgument("foveate-blur needs a per-ring schedule")
            sigma = list(sched.sigma)
        spec = pipeline.TransformSpec(
            kind=kind,
            alpha=getattr(args, "alpha", DEFAULT_ALPHA),
            patch=getattr(args, "patch", 4),
            sigma=sigma,
        )
        cfg = pipeline.PipelineConfig(
            input_root=args.input,
            output_root=args.output,
            transform=spec,
            tessellation=_tess_config(args) if spec.needs_tessellation else TessellationConfig(),
            seed=getattr(args, "seed", 0),
            workers=_workers(args),
        )
        return _finish(pipeline.run_pipeline(cfg))

    return run


def _corpus(path, limit, seed):
    sources = pipeline.sources_of(path)
    if limit and len(sources) > limit:
        rng = np.random.default_rng(seed)
        keep = sorted(rng.choice(len(sources), size=limit, replace=False))
        sources = [sources[i] for i in keep]
    if not sources:
        raise InvalidArgument(f"no images under {path}")
    return [rel for rel, _ in sources], [read_image(p) for _, p in sources]


def cmd_rdmatch(args) -> int:
    names, corpus = _corpus(args.corpus, args.subsample, args.seed)
    tess = build_tessellation(_tess_config(args))
    params = TextureParams(args.alpha, args.seed, args.patch)
    seeds = [pipeline.derive_seed(args.seed, n) for n in names]
    workers = _workers(args)
    if args.mode == "uniform":
        target = rdopt.compute_target_rate(corpus, tess, params, seeds, workers)
        result = rdopt.match_uniform(target, corpus, args.sigma_max, args.tolerance,
                                     workers=workers)
    else:
        targets = rdopt.compute_ring_targets(corpus, tess, params, seeds, workers)
        result = rdopt.match_per_ring(targets, corpus, tess, args.sigma_max, args.tolerance,
                                      workers=workers)
    text = json.dumps(result.to_dict(), indent=2)
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text)
    if args.trace:
        result.save_trace_csv(args.trace)
    return EXIT_OK if result.success else EXIT_PARTIAL


def cmd_iqa(args) -> int:
    metrics = args.metrics.split(",") if args.metrics else list(iqa.TABLE_METRICS)
    scores = pipeline.iqa_scores(args.reference, args.candidate, metrics, _workers(args))
    if args.output:
        pipeline.write_iqa_csv(args.output, scores, metrics)
    else:
        pipeline.write_iqa_csv(sys.stdout, scores, metrics)
    return EXIT_OK


def cmd_freq(args) -> int:
    modes = tuple(args.modes.split(","))
    if args.residual_means:
        means = {m: tuple(args.residual_means) for m in modes}
    elif args.validation:
        _, val = _corpus(args.validation, 0, 0)
        means = {m: stimuli.residual_means(val, m) for m in modes}
    else:
        means = None
    manifest = pipeline.frequency_battery(args.input, args.output, means, modes, _workers(args))
    return _finish(manifest)


def cmd_occlude(args) -> int:
    kinds = args.kinds.split(",")
    sources = pipeline.sources_of(args.input)
    jobs = pipeline.occlusion_jobs(sources, kinds, args.fractions, args.fill, prefix="")
    config = {"input": args.input, "kinds": kinds, "fractions": args.fractions,
              "fill": args.fill}
    return _finish(pipeline.execute(jobs, args.output, config, _workers(args)))


def cmd_cue_conflict(args) -> int:
    kinds = args.kinds.split(",")
    sources = pipeline.sources_of(args.input)
    jobs = pipeline.cue_conflict_jobs(sources, kinds, args.ratios, args.seed, prefix="",
                                      feather=args.feather)
    if not jobs:
        raise InvalidArgument("cue-conflict needs class subdirectories with at least two classes")
    config = {"input": args.input, "kinds": kinds, "ratios": args.ratios, "seed": args.seed,
              "feather": args.feather}
    return _finish(pipeline.execute(jobs, args.output, config, _workers(args)))


def cmd_crossover(args) -> int:
    with open(args.predictions, newline="") as fh:
        records = stimuli.parse_predictions(fh)
    curve = stimuli.crossover(records)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["ratio", "foveal_acc", "peripheral_acc", "n"])
        for row in curve.rows():
            w.writerow(row)
    finally:
        if args.output:
            out.close()
    msg = "absent" if curve.crossover is None else f"{curve.crossover:.6g}"
    print(f"crossover: {msg}", file=sys.stderr)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = pipeline.load_config(
        args.config,
        input_root=args.input,
        output_root=args.output,
        seed=args.seed,
        workers=args.workers,
        split=args.split,
        kind=args.transform,
    )
    return _finish(pipeline.run_pipeline(cfg))


def cmd_report(args) -> int:
    rows = pipeline.report_table1(args.reference, args.candidates, _workers(args))
    if args.output:
        pipeline.write_table_csv(args.output, rows)
    else:
        pipeline.write_table_csv(sys.stdout, rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="foveatex", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tessellate", help="describe the pooling-region layout as JSON")
    _add_tessellation_args(p)
    p.add_argument("-o", "--output", help="JSON path (default stdout)")
    p.add_argument("--png-dir", help="write per-ring weight maps here")
    p.set_defaults(func=cmd_tessellate)

    for kind in pipeline.TRANSFORMS:
        p = sub.add_parser(kind, help=f"apply the {kind} transform")
        _add_io_args(p)
        if kind in ("foveate-texture", "foveate-blur"):
            _add_tessellation_args(p)
        if kind == "foveate-texture":
            p.add_argument("--alpha", type=_alpha, default=DEFAULT_ALPHA,
                           help="one value, one per ring, or one per region")
            p.add_argument("--patch", type=int, default=4)
            p.add_argument("--seed", type=int, default=0)
        if kind == "uniform-blur":
            p.add_argument("--sigma", type=float, default=None)
        if kind in ("uniform-blur", "foveate-blur"):
            p.add_argument("--schedule", help="schedule JSON, e.g. rdmatch output")
        p.set_defaults(func=_transform_cmd(kind))

    p = sub.add_parser("rdmatch", help="match blur strength to the texture transform's SSIM")
    p.add_argument("corpus")
    _add_tessellation_args(p)
    p.add_argument("--mode", choices=("uniform", "per-ring"), default="uniform")
    p.add_argument("--alpha", type=_alpha, default=DEFAULT_ALPHA)
    p.add_argument("--patch", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=rdopt.RATE_TOL)
    p.add_argument("--sigma-max", type=float, default=rdopt.SIGMA_MAX)
    p.add_argument("--subsample", type=int, default=250, help="0 keeps the whole corpus")
    p.add_argument("-o", "--output", help="result JSON (default stdout)")
    p.add_argument("--trace", help="CSV of evaluated (sigma, rate) points")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_rdmatch)

    p = sub.add_parser("iqa", help="score candidate images against references")
    p.add_argument("reference")
    p.add_argument("candidate")
    p.add_argument("--metrics", help=f"comma list from {','.join(iqa.METRICS)}")
    p.add_argument("-o", "--output")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_iqa)

    p = sub.add_parser("freq", help="low/high-pass stimulus battery")
    _add_io_args(p)
    p.add_argument("--modes", default="color,gray")
    p.add_argument("--residual-means", type=_floats)
    p.add_argument("--validation", help="directory to take residual means from")
    p.set_defaults(func=cmd_freq)

    p = sub.add_parser("occlude", help="occlusion battery")
    _add_io_args(p)
    p.add_argument("--kinds", default=",".join(stimuli.OCCLUSION_KINDS))
    p.add_argument("--fractions", type=_floats, default=list(stimuli.DEFAULT_FRACTIONS))
    p.add_argument("--fill", type=float, default=0.5)
    p.set_defaults(func=cmd_occlude)

    p = sub.add_parser("cue-conflict", help="fovea/periphery cue-conflict composites")
    _add_io_args(p)
    p.add_argument("--kinds", default="window,square")
    p.add_argument("--ratios", type=_floats, default=list(stimuli.DEFAULT_FRACTIONS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--feather", type=float, default=0.0)
    p.set_defaults(func=cmd_cue_conflict)

    p = sub.add_parser("crossover", help="accuracy curves and crossover from predictions CSV")
    p.add_argument("predictions")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_crossover)

    p = sub.add_parser("pipeline", help="run a configured end-to-end render")
    p.add_argument("config", help="TOML config file")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--split")
    p.add_argument("--transform", choices=pipeline.TRANSFORMS)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("report", help="mean/std table of all metrics per transform")
    p.add_argument("reference")
    p.add_argument("candidates", nargs="+")
    p.add_argument("-o", "--output")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidArgument, UnreachableRate, PredictionParseError, OSError) as exc:
        print(f"foveatex: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
