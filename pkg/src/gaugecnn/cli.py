"""Command line interface: ``gaugecnn <command> [options]``.

Exit codes: 0 ok, 1 generic failure, 2 invalid parameter, 3 bad file
format, 4 truncated file, 5 aliasing glyph, 6 training diverged,
7 unreachable target, 8 missing file, 9 other I/O error.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .dataset import (
    export_pgm_dir,
    load_dataset,
    load_idx,
    make_angle_grid,
    replicate,
    save_dataset,
)
from .exceptions import GaugeError, InvalidParameterError
from .harness import (
    PipelineConfig,
    bench_inference,
    build_canon,
    clean_vs_noisy,
    find_min_copies,
    run_pipeline,
    sweep_copies,
    sweep_epochs,
    sweep_scale,
    json_default,
)
from .imaging import (
    NoiseSpec,
    check_rotational_aliasing,
    load_pgm,
    make_default_glyph,
    mirror_horizontal,
    resize,
    rotate_about_center,
    save_pgm,
)
from .network import load_model
from .readout import read_bank_angle

EXIT_MISSING_FILE = 8
EXIT_IO = 9


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=json_default)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    print(text)


def _add_pipeline_args(p):
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", help="JSON file with a pipeline config; flags override it")
    g.add_argument("--glyph", dest="glyph_path", help="glyph PGM (default: procedural glyph)")
    g.add_argument("--glyph-size", type=int, nargs=2, metavar=("W", "H"))
    g.add_argument("--max-angle", type=float)
    g.add_argument("--step", type=float)
    g.add_argument("--copies", dest="num_train_copies", type=int)
    g.add_argument("--test-copies", dest="num_test_copies", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--noise", dest="train_noise", type=NoiseSpec.parse, help="train noise, e.g. gaussian:0.1")
    g.add_argument("--test-noise", type=NoiseSpec.parse)
    g.add_argument("--scale", dest="scale_factor", type=float, help="pixel-count reduction factor")
    g.add_argument("--seed", dest="data_seed", type=int, help="training-set seed")
    g.add_argument("--test-seed", type=int)
    g.add_argument("--init-seed", type=int)
    g.add_argument("--conv1", type=int)
    g.add_argument("--conv2", type=int)
    g.add_argument("--dense", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)


def pipeline_config_from_args(args):
    if getattr(args, "config", None):
        with open(args.config) as fh:
            config = PipelineConfig.from_dict(json.load(fh))
    else:
        config = PipelineConfig()
    changes = {}
    for name in ("glyph_path", "max_angle", "step", "num_train_copies", "num_test_copies", "train_noise",
                 "test_noise", "scale_factor", "data_seed", "test_seed", "init_seed"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if getattr(args, "glyph_size", None):
        changes["glyph_width"], changes["glyph_height"] = args.glyph_size
    model_changes = {}
    for arg, name in (("epochs", "epochs"), ("conv1", "conv1_filters"), ("conv2", "conv2_filters"),
                      ("dense", "dense_units"), ("batch_size", "batch_size"), ("lr", "learning_rate")):
        value = getattr(args, arg, None)
        if value is not None:
            model_changes[name] = value
    if model_changes:
        changes["model"] = replace(config.model, **model_changes)
    if getattr(args, "out", None):
        changes["output_dir"] = args.out
    return replace(config, **changes)


def cmd_glyph(args):
    if args.input:
        glyph = load_pgm(args.input)
    else:
        glyph = make_default_glyph(args.width, args.height)
    if args.out:
        save_pgm(glyph, args.out)
    grid = make_angle_grid(args.max_angle, args.step)
    report = check_rotational_aliasing(glyph, grid, args.min_distance)
    _emit({
        "width": glyph.shape[1],
        "height": glyph.shape[0],
        "mirror_symmetric": bool(np.abs(mirror_horizontal(glyph) - glyph).max() <= 1e-6),
        "aliasing": report.to_dict(),
        "written": args.out,
    })
    return 0 if report.passed else 5


def cmd_dataset(args):
    if args.inspect:
        ds = load_dataset(args.inspect)
    elif args.idx:
        ds = load_idx(*args.idx)
    else:
        config = pipeline_config_from_args(args)
        _, canon = build_canon(config)
        if args.canon_only:
            ds = canon
        else:
            ds = replicate(canon, config.num_train_copies, config.train_noise, config.data_seed)
    if args.save:
        save_dataset(ds, args.save)
    if args.export_dir:
        export_pgm_dir(ds, args.export_dir)
    _emit({
        "samples": len(ds),
        "image_shape": list(ds.image_shape),
        "grid": ds.grid.to_dict(),
        "interpolatable": ds.interpolatable,
        "class_counts": np.bincount(ds.labels, minlength=ds.grid.count).tolist(),
        "provenance": ds.provenance,
        "saved": args.save,
    })
    return 0


def cmd_train(args):
    config = pipeline_config_from_args(args)
    report = run_pipeline(config)
    _emit(report)
    return 0


def cmd_infer(args):
    model = load_model(args.model)
    grid = make_angle_grid(args.max_angle, args.step)
    if grid.count != model.config.num_classes:
        raise InvalidParameterError(f"grid has {grid.count} classes but the model outputs {model.config.num_classes}")
    if args.image:
        image = load_pgm(args.image)
    else:
        if args.angle is None:
            raise InvalidParameterError("give --image or --angle")
        w, h = args.glyph_size or (64, 64)
        image = rotate_about_center(make_default_glyph(w, h), args.angle)
    shape = (model.config.input_height, model.config.input_width)
    if image.shape != shape:
        image = resize(image, shape[1], shape[0])
    actual = args.actual if args.actual is not None else args.angle
    readout = read_bank_angle(model, image, grid, actual)
    record = readout.to_record()
    if not args.vector:
        record.pop("prediction_vector", None)
    _emit(record)
    return 0


def cmd_sweep(args):
    config = pipeline_config_from_args(args)
    if args.parameter == "copies":
        report = sweep_copies(config, [int(v) for v in args.values], bench_images=args.bench_images)
    elif args.parameter == "epochs":
        report = sweep_epochs(config, [int(v) for v in args.values], bench_images=args.bench_images)
    else:
        report = sweep_scale(config, [float(v) for v in args.values], bench_images=args.bench_images or 100)
    if args.csv:
        report.write_csv(args.csv)
    _emit(report.to_dict(), args.json)
    return 0


def cmd_clean_vs_noisy(args):
    config = pipeline_config_from_args(args)
    noise = args.study_noise or NoiseSpec("gaussian", 0.1)
    report = clean_vs_noisy(config, noise)
    _emit(report.to_dict(), args.json)
    return 0


def cmd_bench(args):
    model = load_model(args.model)
    runs = []
    grid = make_angle_grid(args.max_angle, args.step)
    fps = bench_inference(model, args.images, args.batch, grid=grid, seed=args.bench_seed,
                          repeats=args.repeats, runs=runs)
    _emit({"fps": fps, "images": args.images, "batch": args.batch, "run_seconds": runs,
           "discarded_first_run": True})
    return 0


def cmd_min_copies(args):
    config = pipeline_config_from_args(args)
    probes = []
    copies = find_min_copies(config, args.target, args.hi, probes=probes)
    _emit({"min_copies": copies, "target_accuracy": args.target, "hi": args.hi, "probes": probes,
           "config": config.to_dict()})
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="gaugecnn", description="Read gauge angles with a small CNN.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("glyph", help="generate, inspect or alias-check a glyph")
    p.add_argument("--input", help="existing glyph PGM to inspect")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--out", help="write the glyph as PGM")
    p.add_argument("--max-angle", type=float, default=90.0)
    p.add_argument("--step", type=float, default=3.0)
    p.add_argument("--min-distance", type=float, default=0.01)
    p.set_defaults(func=cmd_glyph)

    p = sub.add_parser("dataset", help="build, convert, export or inspect datasets")
    _add_pipeline_args(p)
    p.add_argument("--canon-only", action="store_true", help="write the canon, not the replicated set")
    p.add_argument("--idx", nargs=2, metavar=("IMAGES", "LABELS"), help="ingest an IDX (MNIST) pair")
    p.add_argument("--inspect", metavar="GDS", help="summarise an existing dataset file")
    p.add_argument("--save", metavar="GDS", help="write the dataset (GDS1)")
    p.add_argument("--export-dir", help="write samples as PGM files plus labels.csv")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="run the pipeline through model save")
    _add_pipeline_args(p)
    p.add_argument("--out", help="output directory for model, datasets and report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="read one image and print the readout record")
    p.add_argument("--model", required=True)
    p.add_argument("--image", help="PGM image (resized to the model input if needed)")
    p.add_argument("--angle", type=float, help="render the default glyph at this angle instead")
    p.add_argument("--glyph-size", type=int, nargs=2, metavar=("W", "H"))
    p.add_argument("--actual", type=float, help="true angle, for the error field")
    p.add_argument("--max-angle", type=float, default=90.0)
    p.add_argument("--step", type=float, default=3.0)
    p.add_argument("--vector", action="store_true", help="include the prediction vector")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("sweep", help="sweep copies, epochs or scale")
    p.add_argument("parameter", choices=("copies", "epochs", "scale"))
    p.add_argument("values", nargs="+")
    _add_pipeline_args(p)
    p.add_argument("--csv", help="write one row per point")
    p.add_argument("--json", help="write the full report")
    p.add_argument("--bench-images", type=int, default=0, help="measure fps on this many images per point")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("clean-vs-noisy", help="2x2 clean/noisy train/test accuracy matrix")
    _add_pipeline_args(p)
    p.add_argument("--study-noise", type=NoiseSpec.parse, help="noise for the study (default gaussian:0.1)")
    p.add_argument("--json")
    p.set_defaults(func=cmd_clean_vs_noisy)

    p = sub.add_parser("bench", help="inference throughput of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--images", type=int, default=100)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--bench-seed", type=int, default=0)
    p.add_argument("--max-angle", type=float, default=90.0)
    p.add_argument("--step", type=float, default=3.0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("min-copies", help="binary search for the smallest sufficient copy count")
    _add_pipeline_args(p)
    p.add_argument("--target", type=float, default=1.0)
    p.add_argument("--hi", type=int, default=200)
    p.set_defaults(func=cmd_min_copies)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except GaugeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
