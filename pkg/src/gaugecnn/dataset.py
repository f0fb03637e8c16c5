"""Angle grids, canon synthesis from one glyph, replication and file formats."""

import csv
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import AliasingError, FormatError, InvalidParameterError, TruncatedError
from .imaging import (
    NoiseSpec,
    add_noise,
    as_image,
    check_rotational_aliasing,
    mirror_horizontal,
    rotate_about_center,
    save_pgm,
)
from .rng import SplitMix64, derive_seed

GRID_TOL = 1e-9


@dataclass(frozen=True)
class AngleGrid:
    """Evenly spaced class angles ``start + k*step`` for k in [0, count).

    Bank grids are symmetric (``start == -max_angle``) and built with
    :func:`make_angle_grid`; the IDX adapter uses a placeholder 0..9 grid.
    """

    start: float
    step: float
    count: int

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidParameterError(f"grid step must be > 0, got {self.step}")
        if self.count < 1:
            raise InvalidParameterError("grid must have at least one angle")

    @property
    def angles(self):
        return self.start + self.step * np.arange(self.count, dtype=np.float64)

    @property
    def num_bank_angles(self):
        return self.count

    @property
    def max_angle(self):
        return self.start + self.step * (self.count - 1)

    @property
    def min_angle(self):
        return self.start

    def to_dict(self):
        return {"start": self.start, "step": self.step, "count": self.count}

    def __len__(self):
        return self.count


def make_angle_grid(max_deg, step_deg):
    """Symmetric grid -max, -max+step, ..., +max."""
    max_deg, step_deg = float(max_deg), float(step_deg)
    if not max_deg > 0 or not step_deg > 0:
        raise InvalidParameterError("max angle and step must both be > 0")
    intervals = 2.0 * max_deg / step_deg
    if abs(intervals - round(intervals)) > GRID_TOL * max(1.0, intervals):
        raise InvalidParameterError(f"step {step_deg} does not divide the range [-{max_deg}, {max_deg}] evenly")
    return AngleGrid(-max_deg, step_deg, int(round(intervals)) + 1)


def label_of_angle(grid, angle):
    pos = (float(angle) - grid.start) / grid.step
    label = int(round(pos))
    if abs(pos - label) * grid.step > GRID_TOL or not 0 <= label < grid.count:
        raise InvalidParameterError(f"angle {angle} is not on the grid")
    return label


def angle_of_label(grid, label):
    label = int(label)
    if not 0 <= label < grid.count:
        raise InvalidParameterError(f"label {label} out of range [0, {grid.count})")
    return grid.start + label * grid.step


@dataclass
class Dataset:
    """Labeled image collection; ``images`` has shape (n, height, width)."""

    grid: AngleGrid
    images: np.ndarray
    labels: np.ndarray
    angles: np.ndarray
    provenance: dict = field(default_factory=dict)
    interpolatable: bool = True

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.images.ndim != 3:
            raise InvalidParameterError(f"images must be (n, h, w), got {self.images.shape}")
        n = len(self.images)
        if len(self.labels) != n or len(self.angles) != n:
            raise InvalidParameterError("images, labels and angles differ in length")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.grid.count):
            raise InvalidParameterError("label outside the grid")

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, idx):
        return Dataset(self.grid, self.images[idx], self.labels[idx], self.angles[idx],
                       dict(self.provenance), self.interpolatable)


def generate_canon(glyph, grid, check_aliasing=True, use_mirror=False, glyph_id="glyph"):
    """One rendering per grid angle, in grid order.

    ``use_mirror`` renders only the non-negative half and mirrors it, which
    is valid only for left/right symmetric glyphs; symmetry is verified first.
    """
    glyph = as_image(glyph)
    if check_aliasing:
        report = check_rotational_aliasing(glyph, grid)
        if not report.passed:
            a, b, d = report.collisions[0]
            raise AliasingError(f"glyph aliases under rotation: {a} and {b} deg renderings differ by "
                                f"{d:.4g} RMS ({len(report.collisions)} colliding pairs)")
    angles = grid.angles
    images = np.empty((grid.count,) + glyph.shape, dtype=np.float64)
    if use_mirror:
        if np.abs(mirror_horizontal(glyph) - glyph).max() > 1e-6:
            raise InvalidParameterError("mirror canon requires a left/right symmetric glyph")
        if abs(grid.start + grid.max_angle) > GRID_TOL:
            raise InvalidParameterError("mirror canon requires a symmetric grid")
        for i in range(grid.count - 1, -1, -1):
            mirrored = grid.count - 1 - i
            if mirrored > i:
                images[i] = mirror_horizontal(images[mirrored])
            else:
                images[i] = rotate_about_center(glyph, float(angles[i]))
    else:
        for i, angle in enumerate(angles):
            images[i] = rotate_about_center(glyph, float(angle))
    return Dataset(grid, images, np.arange(grid.count), angles,
                   provenance={"glyph": glyph_id, "copies": 1, "noise": None, "seed": None})


def render_dataset(glyph, grid, angles):
    """Evaluation set at arbitrary (possibly off-grid) angles; each label is
    the nearest grid class."""
    glyph = as_image(glyph)
    angles = np.asarray(angles, dtype=np.float64)
    labels = np.clip(np.round((angles - grid.start) / grid.step), 0, grid.count - 1).astype(np.int64)
    images = np.stack([rotate_about_center(glyph, float(a)) for a in angles]) if len(angles) else \
        np.empty((0,) + glyph.shape)
    return Dataset(grid, images, labels, angles, provenance={"glyph": "rendered", "angles": "explicit"})


def replicate(canon, num_copies, noise=None, seed=0):
    """``num_copies`` copies of every canon sample, optionally noised, shuffled.

    Sample ordinal ``c * len(canon) + i`` (copy c of canon sample i) is noised
    with ``derive_seed(seed, ordinal)``; the shuffle is a Fisher-Yates
    permutation from the stream ``SplitMix64(seed ^ 0x5DEECE66D)``.
    """
    num_copies = int(num_copies)
    if num_copies < 1:
        raise InvalidParameterError("num_copies must be >= 1")
    if noise is not None and not isinstance(noise, NoiseSpec):
        raise InvalidParameterError("noise must be a NoiseSpec or None")
    n_canon = len(canon)
    images = np.tile(canon.images, (num_copies, 1, 1))
    labels = np.tile(canon.labels, num_copies)
    angles = np.tile(canon.angles, num_copies)
    if noise is not None:
        for ordinal in range(len(images)):
            images[ordinal] = add_noise(images[ordinal], noise, derive_seed(seed, ordinal))
    perm = SplitMix64(int(seed) ^ 0x5DEECE66D).permutation(n_canon * num_copies)
    provenance = dict(canon.provenance)
    provenance.update(copies=num_copies, noise=None if noise is None else noise.to_dict(), seed=int(seed))
    return Dataset(canon.grid, images[perm], labels[perm], angles[perm], provenance, canon.interpolatable)


# GDS1 layout (little-endian):
#   "GDS1" | f64 grid start | f64 grid step | u32 class count | u8 flags
#   | u32 sample count | u32 height | u32 width
#   then per sample: u16 label | f32 angle | height*width u8 pixels
_GDS_MAGIC = b"GDS1"
_GDS_HEADER = struct.Struct("<4sddIBIII")
_FLAG_INTERP = 1


def _gds_record(h, w):
    return np.dtype([("label", "<u2"), ("angle", "<f4"), ("pixels", "u1", (h * w,))])


def dataset_to_bytes(ds):
    n = len(ds)
    h, w = ds.image_shape
    if ds.grid.count > 0xFFFF:
        raise InvalidParameterError("GDS1 stores labels as u16")
    flags = _FLAG_INTERP if ds.interpolatable else 0
    pixels = np.floor(np.clip(ds.images, 0.0, 1.0).astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    body = np.empty(n, dtype=_gds_record(h, w))
    body["label"] = ds.labels
    body["angle"] = ds.angles
    body["pixels"] = pixels.reshape(n, h * w)
    header = _GDS_HEADER.pack(_GDS_MAGIC, ds.grid.start, ds.grid.step, ds.grid.count, flags, n, h, w)
    return header + body.tobytes()


def save_dataset(ds, path):
    data = dataset_to_bytes(ds)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_dataset(path):
    with open(path, "rb") as fh:
        data = fh.read()
    ds = dataset_from_bytes(data)
    ds.provenance["source"] = os.fspath(path)
    return ds


def dataset_from_bytes(data):
    if data[:4] != _GDS_MAGIC:
        raise FormatError(f"not a GDS1 dataset: magic {data[:4]!r}", offset=0)
    if len(data) < _GDS_HEADER.size:
        raise TruncatedError("truncated GDS1 header", offset=len(data))
    _, start, step, count, flags, n, h, w = _GDS_HEADER.unpack_from(data)
    if h < 1 or w < 1:
        raise FormatError(f"invalid image dimensions {h}x{w}", offset=_GDS_HEADER.size - 8)
    rec_size = 6 + h * w
    avail = len(data) - _GDS_HEADER.size
    if avail < n * rec_size:
        ordinal = avail // rec_size
        raise TruncatedError(f"truncated GDS1 file: sample {ordinal} of {n} incomplete",
                             offset=_GDS_HEADER.size + ordinal * rec_size)
    if avail > n * rec_size:
        raise FormatError("trailing bytes after last sample (dimension mismatch?)",
                          offset=_GDS_HEADER.size + n * rec_size)
    body = np.frombuffer(data, dtype=_gds_record(h, w), count=n, offset=_GDS_HEADER.size)
    grid = AngleGrid(start, step, count)
    images = body["pixels"].reshape(n, h, w).astype(np.float32) / np.float32(255.0)
    return Dataset(grid, images, body["label"].astype(np.int64), body["angle"].astype(np.float64),
                   provenance={}, interpolatable=bool(flags & _FLAG_INTERP))


def export_pgm_dir(ds, directory):
    """Write every sample as a PGM plus ``labels.csv`` (filename,label,angle)."""
    os.makedirs(directory, exist_ok=True)
    width = max(5, len(str(len(ds))))
    with open(os.path.join(directory, "labels.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label", "angle"])
        for i in range(len(ds)):
            name = f"sample_{i:0{width}d}.pgm"
            save_pgm(np.clip(ds.images[i], 0.0, 1.0), os.path.join(directory, name))
            writer.writerow([name, int(ds.labels[i]), repr(float(ds.angles[i]))])


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_maybe_gzip(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        import gzip

        data = gzip.decompress(data)
    return data


def load_idx(images_path, labels_path):
    """MNIST-style IDX pair as a 10-class, non-interpolatable dataset.

    Labels 0..9 get placeholder angles 0..9; the angle decode is meaningless
    for such data, which ``interpolatable=False`` records.
    """
    img_data = _read_maybe_gzip(images_path)
    lab_data = _read_maybe_gzip(labels_path)
    if len(img_data) < 16:
        raise TruncatedError("IDX image header truncated", offset=len(img_data))
    magic, n, rows, cols = struct.unpack_from(">IIII", img_data)
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}", offset=0)
    if len(lab_data) < 8:
        raise TruncatedError("IDX label header truncated", offset=len(lab_data))
    lmagic, ln = struct.unpack_from(">II", lab_data)
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad IDX label magic 0x{lmagic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}", offset=0)
    if ln != n:
        raise FormatError(f"IDX count mismatch: {n} images vs {ln} labels", offset=4)
    if len(img_data) < 16 + n * rows * cols:
        raise TruncatedError("IDX image data truncated", offset=len(img_data))
    if len(lab_data) < 8 + n:
        raise TruncatedError("IDX label data truncated", offset=len(lab_data))
    labels = np.frombuffer(lab_data, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if len(bad):
        raise FormatError(f"invalid IDX label {labels[bad[0]]} at index {bad[0]}", offset=8 + int(bad[0]))
    pixels = np.frombuffer(img_data, dtype=np.uint8, count=n * rows * cols, offset=16)
    images = pixels.reshape(n, rows, cols).astype(np.float32) / np.float32(255.0)
    return Dataset(AngleGrid(0.0, 1.0, 10), images, labels, labels.astype(np.float64),
                   provenance={"source": "idx", "images": os.fspath(images_path)}, interpolatable=False)
