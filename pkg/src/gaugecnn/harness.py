"""End-to-end pipeline, hyperparameter sweeps, clean-vs-noisy study and
inference benchmarks."""

import contextlib
import csv
import hashlib
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import Dataset, dataset_to_bytes, generate_canon, make_angle_grid, replicate, save_dataset
from .exceptions import GaugeError, InvalidParameterError, StageError, UnreachableTargetError
from .imaging import NoiseSpec, as_image, load_pgm, make_default_glyph, resize, rotate_about_center
from .network import ModelConfig, evaluate, forward, init_model, model_to_bytes, train
from .readout import read_bank_angle
from .rng import SplitMix64

log = logging.getLogger(__name__)

TIMING_FIELDS = ("canon_gen_s", "gen_train_test_s", "run_train_test_s",
                 "model_save_s", "test_infer_s", "single_image_infer_s")


@dataclass
class PipelineConfig:
    glyph_width: int = 64
    glyph_height: int = 64
    glyph_path: str = None
    max_angle: float = 90.0
    step: float = 3.0
    num_train_copies: int = 20
    num_test_copies: int = 1
    train_noise: NoiseSpec = None
    test_noise: NoiseSpec = None
    scale_factor: float = 1.0
    model: ModelConfig = field(default_factory=ModelConfig)
    data_seed: int = 1
    test_seed: int = 2
    init_seed: int = 0
    output_dir: str = None
    bench_images: int = 0
    bench_batch: int = 32

    def to_dict(self):
        d = asdict(self)
        d["train_noise"] = None if self.train_noise is None else self.train_noise.to_dict()
        d["test_noise"] = None if self.test_noise is None else self.test_noise.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("train_noise", "test_noise"):
            if d.get(key) is not None:
                d[key] = NoiseSpec(**d[key])
        if isinstance(d.get("model"), dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidParameterError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**d)

    def key(self):
        """Canonical JSON of everything that affects the trained model and
        its scores (not the output directory or benchmark settings)."""
        d = self.to_dict()
        for name in ("output_dir", "bench_images", "bench_batch"):
            d.pop(name)
        return json.dumps(d, sort_keys=True)

    @property
    def seeds(self):
        return {"data_seed": self.data_seed, "test_seed": self.test_seed, "init_seed": self.init_seed}


DESK_CONFIG = PipelineConfig()


def scaled_size(width, height, factor):
    """Dimensions whose pixel count is ``factor`` times smaller."""
    if not factor >= 1:
        raise InvalidParameterError(f"pixel reduction factor must be >= 1, got {factor}")
    s = math.sqrt(factor)
    return max(1, int(round(width / s))), max(1, int(round(height / s)))


def load_glyph(config):
    if config.glyph_path:
        return load_pgm(config.glyph_path), os.path.basename(config.glyph_path)
    return (make_default_glyph(config.glyph_width, config.glyph_height),
            f"default_{config.glyph_width}x{config.glyph_height}")


def _resize_stack(images, size):
    return np.stack([resize(img, *size) for img in images])


@contextlib.contextmanager
def _timed(timings, name):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timings[name] = time.perf_counter() - t0


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (GaugeError, ValueError, OSError, FloatingPointError) as exc:
        raise StageError(name, exc) from exc


def build_canon(config):
    """Glyph and canon at the model's input resolution."""
    glyph, glyph_id = load_glyph(config)
    grid = make_angle_grid(config.max_angle, config.step)
    canon = generate_canon(glyph, grid, glyph_id=glyph_id)
    if config.scale_factor != 1:
        size = scaled_size(glyph.shape[1], glyph.shape[0], config.scale_factor)
        canon = Dataset(grid, _resize_stack(canon.images, size), canon.labels, canon.angles,
                        dict(canon.provenance, scale_factor=config.scale_factor))
    return glyph, canon


def model_config_for(config, image_shape, num_classes):
    return replace(config.model, input_height=int(image_shape[0]), input_width=int(image_shape[1]),
                   num_classes=int(num_classes))


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def run_pipeline(config, cache=None):
    """glyph -> canon -> train/test sets -> train -> save -> evaluate -> infer.

    Returns a JSON-serialisable report. ``cache`` (a dict) memoises runs of
    configs with equal :meth:`PipelineConfig.key`; every stage is
    deterministic so a cached report equals a fresh one apart from
    wall-clock timings. Throughput is re-measured on a hit.
    """
    if cache is not None and config.output_dir is None:
        hit = cache.get(config.key())
        if hit is not None:
            return _from_cache(config, hit)
    timings = {}
    t_start = time.perf_counter()
    with _timed(timings, "canon_gen_s"):
        glyph, canon = _stage("canon_gen", build_canon, config)
    grid = canon.grid
    with _timed(timings, "gen_train_test_s"):
        train_set = _stage("gen_train_test", replicate, canon, config.num_train_copies,
                           config.train_noise, config.data_seed)
        test_set = _stage("gen_train_test", replicate, canon, config.num_test_copies,
                          config.test_noise, config.test_seed)
    mcfg = _stage("init_model", model_config_for, config, canon.image_shape, grid.count)
    model = _stage("init_model", init_model, mcfg, config.init_seed)
    with _timed(timings, "run_train_test_s"):
        model, history = _stage("run_train_test", train, model, train_set, log=log.info)
    with _timed(timings, "model_save_s"):
        blob = model_to_bytes(model)
        if config.output_dir:
            os.makedirs(config.output_dir, exist_ok=True)
            model_path = os.path.join(config.output_dir, "model.gnm")
            with open(model_path, "wb") as fh:
                fh.write(blob)
        else:
            model_path = None
            with tempfile.TemporaryDirectory(prefix="gaugecnn-") as tmp:
                with open(os.path.join(tmp, "model.gnm"), "wb") as fh:
                    fh.write(blob)
    with _timed(timings, "test_infer_s"):
        metrics = _stage("test_infer", evaluate, model, test_set)
    rng = SplitMix64(config.test_seed ^ 0xA5A5)
    probe_angle = float(grid.min_angle + (grid.max_angle - grid.min_angle) * rng.uniform(1)[0])
    probe = rotate_about_center(glyph, probe_angle)
    if config.scale_factor != 1:
        probe = resize(probe, canon.image_shape[1], canon.image_shape[0])
    with _timed(timings, "single_image_infer_s"):
        readout = _stage("single_image_infer", read_bank_angle, model, probe, grid, probe_angle)
    total = time.perf_counter() - t_start

    report = {
        "config": config.to_dict(),
        "seeds": config.seeds,
        "grid": grid.to_dict(),
        "image_shape": list(canon.image_shape),
        "accuracy": metrics["accuracy"],
        "loss": metrics["loss"],
        "train_samples": len(train_set),
        "test_samples": len(test_set),
        "history": history.to_dict(),
        "timings": timings,
        "total_s": total,
        "model_path": model_path,
        "model_sha256": _sha256(blob),
        "train_set_sha256": _sha256(dataset_to_bytes(train_set)),
        "test_set_sha256": _sha256(dataset_to_bytes(test_set)),
        "single_image_readout": readout.to_record(),
    }
    if config.output_dir:
        save_dataset(train_set, os.path.join(config.output_dir, "train.gds"))
        save_dataset(test_set, os.path.join(config.output_dir, "test.gds"))
        write_json(report, os.path.join(config.output_dir, "report.json"))
    if config.bench_images:
        report["inference_fps"] = _bench(config, model, glyph, canon)
    if cache is not None:
        remember(cache, config, report, model)
    return report


def _bench(config, model, glyph, canon):
    return bench_inference(model, config.bench_images, config.bench_batch, glyph=glyph, grid=canon.grid,
                           seed=config.test_seed, image_shape=canon.image_shape)


def remember(cache, config, report, model):
    """Store a finished run so later identical configs reuse it."""
    cache[config.key()] = {"report": report, "model": model}


def _from_cache(config, entry):
    report = dict(entry["report"], config=config.to_dict())
    report.pop("inference_fps", None)
    if config.bench_images:
        glyph, canon = build_canon(config)
        report["inference_fps"] = _bench(config, entry["model"], glyph, canon)
    return report


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=json_default)
        fh.write("\n")


def json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, set):
        return sorted(obj)
    raise TypeError(f"not JSON serialisable: {type(obj)}")


# -- sweeps --------------------------------------------------------------------

@dataclass
class SweepReport:
    parameter: str
    base_config: dict
    points: list = field(default_factory=list)

    def values(self):
        return [p["value"] for p in self.points]

    def point(self, value):
        for p in self.points:
            if p["value"] == value:
                return p
        raise KeyError(value)

    def to_dict(self):
        return asdict(self)

    def write_csv(self, path):
        cols = ["value", "accuracy", "loss", "train_test_s", "inference_fps", "error"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            writer.writeheader()
            for p in self.points:
                writer.writerow(p)


def _sweep_point(value, config, cache, bench_images):
    cfg = replace(config, bench_images=bench_images or config.bench_images)
    try:
        rep = run_pipeline(cfg, cache=cache)
    except GaugeError as exc:
        log.warning("sweep point %r failed: %s", value, exc)
        return {"value": value, "accuracy": None, "loss": None, "train_test_s": None,
                "inference_fps": None, "error": str(exc)}
    return {
        "value": value,
        "accuracy": rep["accuracy"],
        "loss": rep["loss"],
        "train_test_s": rep["timings"]["run_train_test_s"],
        "inference_fps": rep.get("inference_fps"),
        "timings": rep["timings"],
        "error": None,
    }


def _sweep(parameter, config, values, make_config, cache, bench_images):
    if not values:
        raise InvalidParameterError("sweep needs at least one value")
    report = SweepReport(parameter, config.to_dict())
    for value in sorted(values):
        try:
            cfg = make_config(value)
        except GaugeError as exc:
            report.points.append({"value": value, "accuracy": None, "loss": None, "train_test_s": None,
                                  "inference_fps": None, "error": str(exc)})
            continue
        report.points.append(_sweep_point(value, cfg, cache, bench_images))
    return report


def sweep_copies(config, copies_list, cache=None, bench_images=0):
    """Accuracy, loss, time and fps per training copy count."""
    for c in copies_list:
        if int(c) < 1:
            raise InvalidParameterError("copy counts must be >= 1")
    return _sweep("num_train_copies", config, [int(c) for c in copies_list],
                  lambda c: replace(config, num_train_copies=c), cache, bench_images)


def sweep_epochs(config, epoch_counts, cache=None, bench_images=0):
    for e in epoch_counts:
        if int(e) < 1:
            raise InvalidParameterError("epoch counts must be >= 1")
    return _sweep("epochs", config, [int(e) for e in epoch_counts],
                  lambda e: replace(config, model=replace(config.model, epochs=e)), cache, bench_images)


def sweep_scale(config, pixel_reduction_factors, cache=None, bench_images=100):
    """Per factor f, shrink every image so its pixel count drops by f."""
    for f in pixel_reduction_factors:
        if not float(f) >= 1:
            raise InvalidParameterError("pixel reduction factors must be >= 1")

    def make(f):
        cfg = replace(config, scale_factor=f)
        w, h = scaled_size(config.glyph_width, config.glyph_height, f)
        k = config.model.kernel_size
        if w < k or h < k:
            raise InvalidParameterError(f"factor {f} gives {w}x{h} images, smaller than kernel {k}")
        return cfg

    return _sweep("scale_factor", config, [float(f) for f in pixel_reduction_factors], make, cache, bench_images)


def find_min_copies(config, target_accuracy, hi, cache=None, probes=None):
    """Smallest copy count in [1, hi] meeting ``target_accuracy``.

    Binary search on the accuracy-vs-copies curve, which is assumed
    monotone. Each probe is logged and, if ``probes`` is a list, appended to
    it as a dict so monotonicity violations stay visible.
    """
    hi = int(hi)
    if hi < 1:
        raise InvalidParameterError("hi must be >= 1")
    if target_accuracy > 1.0:
        raise UnreachableTargetError(f"target accuracy {target_accuracy} exceeds 1.0")
    probes = [] if probes is None else probes

    def meets(c):
        acc = run_pipeline(replace(config, num_train_copies=c), cache=cache)["accuracy"]
        ok = acc >= target_accuracy
        probes.append({"copies": c, "accuracy": acc, "meets_target": ok})
        log.info("min-copies probe: copies=%d accuracy=%.4f %s", c, acc, "pass" if ok else "fail")
        return ok

    if meets(1):
        return 1
    if hi == 1 or not meets(hi):
        raise UnreachableTargetError(f"target accuracy {target_accuracy} not reached at {hi} copies")
    lo_fail, hi_pass = 1, hi
    while hi_pass - lo_fail > 1:
        mid = (lo_fail + hi_pass) // 2
        if meets(mid):
            hi_pass = mid
        else:
            lo_fail = mid
    return hi_pass


# -- clean training ------------------------------------------------------------

@dataclass
class CleanNoisyReport:
    noise: dict
    seeds: dict
    matrix: dict

    def to_dict(self):
        return asdict(self)


def clean_vs_noisy(config, noise, noise_seed=None):
    """Train on clean and on noised data; test each on clean and noised test
    sets. Cells are keyed ``train_<clean|noisy>/test_<clean|noisy>``."""
    if not isinstance(noise, NoiseSpec):
        raise InvalidParameterError("noise must be a NoiseSpec")
    noise_seed = config.test_seed + 7919 if noise_seed is None else noise_seed
    glyph, canon = _stage("canon_gen", build_canon, config)
    clean_test = replicate(canon, config.num_test_copies, None, config.test_seed)
    noisy_test = replicate(canon, config.num_test_copies, noise, noise_seed)
    matrix = {}
    for train_kind, train_noise in (("clean", None), ("noisy", noise)):
        train_set = replicate(canon, config.num_train_copies, train_noise, config.data_seed)
        mcfg = model_config_for(config, canon.image_shape, canon.grid.count)
        model, _ = _stage("run_train_test", train, init_model(mcfg, config.init_seed), train_set)
        for test_kind, test_set in (("clean", clean_test), ("noisy", noisy_test)):
            matrix[f"train_{train_kind}/test_{test_kind}"] = evaluate(model, test_set)["accuracy"]
    seeds = dict(config.seeds, noise_seed=noise_seed)
    return CleanNoisyReport(noise.to_dict(), seeds, matrix)


# -- benchmarks ----------------------------------------------------------------

def bench_inference(model, images=100, batch=32, glyph=None, grid=None, seed=0,
                    image_shape=None, repeats=5, runs=None):
    """Images per second of prediction over random-angle renderings, handed
    to the model ``batch`` images per call.

    Rendering is excluded from timing. The first of ``repeats`` timed passes
    is a warm-up and discarded; the rest are averaged. Per-pass seconds are
    appended to ``runs`` when a list is given.
    """
    if images < 100:
        raise InvalidParameterError("benchmark needs at least 100 images")
    if batch < 1:
        raise InvalidParameterError("batch must be >= 1")
    if repeats < 2:
        raise InvalidParameterError("need at least 2 repeats (the first is discarded)")
    cfg = model.config
    glyph = make_default_glyph(64, 64) if glyph is None else as_image(glyph)
    grid = make_angle_grid(90, 3) if grid is None else grid
    shape = (cfg.input_height, cfg.input_width) if image_shape is None else tuple(image_shape)
    angles = grid.min_angle + (grid.max_angle - grid.min_angle) * SplitMix64(seed).uniform(images)
    stack = []
    for a in angles:
        img = rotate_about_center(glyph, float(a))
        if img.shape != shape:
            img = resize(img, shape[1], shape[0])
        stack.append(img)
    stack = np.stack(stack).astype(np.float32)
    elapsed = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for start in range(0, images, batch):
            forward(model, stack[start:start + batch])
        elapsed.append(time.perf_counter() - t0)
    if runs is not None:
        runs.extend(elapsed)
    mean = float(np.mean(elapsed[1:]))
    return images / mean
