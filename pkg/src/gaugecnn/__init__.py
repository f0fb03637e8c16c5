"""Read analog gauge angles from images with a small CNN trained on
rotations of a single glyph."""

__version__ = "0.1.0"

from .dataset import (
    AngleGrid,
    Dataset,
    angle_of_label,
    generate_canon,
    label_of_angle,
    load_dataset,
    load_idx,
    make_angle_grid,
    replicate,
    save_dataset,
)
from .estimator import CNNClassifier, GaugeReader, ImageResizer
from .harness import PipelineConfig, run_pipeline
from .imaging import (
    Affine2D,
    NoiseSpec,
    add_noise,
    check_rotational_aliasing,
    load_pgm,
    make_default_glyph,
    mirror_horizontal,
    resize,
    rotate_about_center,
    save_pgm,
    warp,
)
from .network import ModelConfig, evaluate, forward, init_model, load_model, predict, save_model, train
from .readout import argmax_readout, interp_readout, missing_codes_scan, read_bank_angle
