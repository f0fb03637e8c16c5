import csv
import gzip
import struct
from collections import Counter

import numpy as np
import pytest

from gaugecnn.dataset import (
    AngleGrid,
    Dataset,
    angle_of_label,
    dataset_from_bytes,
    dataset_to_bytes,
    export_pgm_dir,
    generate_canon,
    label_of_angle,
    load_dataset,
    load_idx,
    make_angle_grid,
    render_dataset,
    replicate,
    save_dataset,
)
from gaugecnn.exceptions import AliasingError, FormatError, InvalidParameterError, TruncatedError
from gaugecnn.imaging import NoiseSpec, load_pgm, make_default_glyph


@pytest.fixture(scope="module")
def glyph32():
    return make_default_glyph(32, 32)


@pytest.fixture(scope="module")
def canon32(glyph32):
    return generate_canon(glyph32, make_angle_grid(30, 6))


# -- grids ----------------------------------------------------------------------

def test_grid_examples():
    g = make_angle_grid(90, 3)
    assert g.count == 61 and g.angles[0] == -90 and g.angles[-1] == 90
    assert make_angle_grid(90, 1).count == 181
    assert make_angle_grid(3, 3).angles.tolist() == [-3.0, 0.0, 3.0]


@pytest.mark.parametrize("max_deg,step", [(90, 7), (0, 3), (90, 0), (-5, 1)])
def test_grid_errors(max_deg, step):
    with pytest.raises(InvalidParameterError):
        make_angle_grid(max_deg, step)


def test_labels(grid90):
    assert label_of_angle(grid90, -12) == 26
    assert label_of_angle(grid90, -90) == 0
    assert label_of_angle(grid90, 0) == 30
    assert angle_of_label(grid90, 26) == -12
    assert angle_of_label(grid90, 0) == -90
    with pytest.raises(InvalidParameterError):
        label_of_angle(grid90, -13)
    with pytest.raises(InvalidParameterError):
        label_of_angle(grid90, 93)
    with pytest.raises(InvalidParameterError):
        angle_of_label(grid90, 61)


def test_label_angle_round_trip(grid90):
    for label in range(grid90.count):
        assert label_of_angle(grid90, angle_of_label(grid90, label)) == label


# -- canon ----------------------------------------------------------------------

def test_canon_full_grid(glyph64, grid90):
    canon = generate_canon(glyph64, grid90)
    assert len(canon) == 61
    assert canon.labels.tolist() == list(range(61))
    for label, angle in zip(canon.labels, canon.angles):
        assert angle_of_label(grid90, label) == angle


def test_canon_middle_is_glyph(glyph64):
    canon = generate_canon(glyph64, make_angle_grid(3, 3))
    assert len(canon) == 3
    assert np.array_equal(canon.images[1], glyph64.astype(np.float32))


def test_canon_rejects_aliasing_glyph(grid90):
    yy, xx = np.mgrid[0:32, 0:32]
    disk = np.clip((8 - np.hypot(xx - 15.5, yy - 15.5)) / 3 + 0.5, 0, 1)
    with pytest.raises(AliasingError):
        generate_canon(disk, make_angle_grid(30, 6))


def test_mirror_canon_matches_direct(glyph32):
    grid = make_angle_grid(30, 6)
    direct = generate_canon(glyph32, grid)
    mirrored = generate_canon(glyph32, grid, use_mirror=True)
    assert np.abs(direct.images - mirrored.images).max() <= 1e-5


def test_mirror_canon_requires_symmetry():
    lopsided = make_default_glyph(32, 32)
    lopsided[10:14, 2:6] = 1.0
    with pytest.raises(InvalidParameterError, match="symmetric"):
        generate_canon(lopsided, make_angle_grid(30, 6), check_aliasing=False, use_mirror=True)


def test_render_dataset_nearest_labels(glyph32):
    grid = make_angle_grid(30, 6)
    ds = render_dataset(glyph32, grid, [-13.0, 2.9, 3.1, 30.0])
    assert ds.labels.tolist() == [3, 5, 6, 10]
    assert ds.angles.tolist() == [-13.0, 2.9, 3.1, 30.0]


# -- replicate ------------------------------------------------------------------

def test_replicate_counts(canon32):
    ds = replicate(canon32, 20)
    assert len(ds) == 20 * len(canon32)
    assert Counter(ds.labels.tolist()) == {k: 20 for k in range(len(canon32))}


def test_replicate_desk_count(glyph64, grid90):
    assert len(replicate(generate_canon(glyph64, grid90), 20)) == 1220


def test_replicate_single_copy_is_permutation(canon32):
    ds = replicate(canon32, 1, seed=5)
    order = np.argsort(ds.labels)
    assert sorted(ds.labels.tolist()) == canon32.labels.tolist()
    assert np.array_equal(ds.images[order], canon32.images)
    assert not np.array_equal(ds.labels, canon32.labels)


def test_replicate_determinism(canon32):
    noise = NoiseSpec("gaussian", 0.1)
    a = replicate(canon32, 4, noise, seed=9)
    b = replicate(canon32, 4, noise, seed=9)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.images, b.images)
    c = replicate(canon32, 4, noise, seed=10)
    assert not np.array_equal(a.images, c.images)


def test_replicate_records_provenance(canon32):
    ds = replicate(canon32, 3, NoiseSpec("speckle", 0.2), seed=4)
    assert ds.provenance["copies"] == 3
    assert ds.provenance["noise"] == {"kind": "speckle", "level": 0.2}
    assert ds.provenance["seed"] == 4


def test_replicate_errors(canon32):
    with pytest.raises(InvalidParameterError):
        replicate(canon32, 0)


# -- GDS1 -----------------------------------------------------------------------

def test_gds_round_trip(tmp_path, canon32):
    ds = replicate(canon32, 2, NoiseSpec("gaussian", 0.05), seed=3)
    path = tmp_path / "ds.gds"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.angles, ds.angles)
    assert back.image_shape == ds.image_shape
    assert back.grid == ds.grid
    assert back.interpolatable
    assert np.abs(back.images - ds.images).max() <= 1 / 255
    assert dataset_to_bytes(back) == path.read_bytes()


def test_gds_header_layout(canon32):
    data = dataset_to_bytes(canon32)
    assert data[:4] == b"GDS1"
    start, step, count, flags, n, h, w = struct.unpack_from("<ddIBIII", data, 4)
    assert (start, step, count, flags, n, h, w) == (-30.0, 6.0, 11, 1, 11, 32, 32)
    assert len(data) == 4 + 33 + 11 * (6 + 32 * 32)


def test_gds_errors(canon32):
    data = dataset_to_bytes(canon32)
    with pytest.raises(FormatError, match="magic"):
        dataset_from_bytes(b"XXXX" + data[4:])
    rec = 6 + 32 * 32
    with pytest.raises(TruncatedError, match="sample 3 ") as exc:
        dataset_from_bytes(data[:37 + 3 * rec + 10])
    assert exc.value.offset == 37 + 3 * rec
    with pytest.raises(FormatError, match="trailing"):
        dataset_from_bytes(data + b"\x00")
    with pytest.raises(TruncatedError):
        dataset_from_bytes(data[:20])


def test_export_pgm_dir(tmp_path, canon32):
    export_pgm_dir(canon32, tmp_path / "out")
    with open(tmp_path / "out" / "labels.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(canon32)
    assert rows[0].keys() == {"filename", "label", "angle"}
    img = load_pgm(tmp_path / "out" / rows[4]["filename"])
    assert int(rows[4]["label"]) == 4 and float(rows[4]["angle"]) == -6.0
    assert np.abs(img - canon32.images[4]).max() <= 0.5 / 255 + 1e-6


def test_dataset_validation(grid90):
    with pytest.raises(InvalidParameterError):
        Dataset(grid90, np.zeros((2, 4, 4)), [0], [0.0, 0.0])
    with pytest.raises(InvalidParameterError):
        Dataset(grid90, np.zeros((1, 4, 4)), [61], [0.0])
    with pytest.raises(InvalidParameterError):
        AngleGrid(0.0, 0.0, 3)


# -- IDX ------------------------------------------------------------------------

def write_idx(tmp_path, n=3, rows=28, cols=28, labels=None, img_magic=2051, lab_magic=2049,
              n_labels=None, compress=False):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=n * rows * cols, dtype=np.uint8)
    labels = list(range(n)) if labels is None else labels
    img = struct.pack(">IIII", img_magic, n, rows, cols) + pixels.tobytes()
    lab = struct.pack(">II", lab_magic, n if n_labels is None else n_labels) + bytes(labels)
    if compress:
        img, lab = gzip.compress(img), gzip.compress(lab)
    ip, lp = tmp_path / "images.idx", tmp_path / "labels.idx"
    ip.write_bytes(img)
    lp.write_bytes(lab)
    return ip, lp, pixels


@pytest.mark.parametrize("compress", [False, True])
def test_load_idx(tmp_path, compress):
    ip, lp, pixels = write_idx(tmp_path, labels=[7, 0, 9], compress=compress)
    ds = load_idx(ip, lp)
    assert len(ds) == 3 and ds.image_shape == (28, 28)
    assert ds.labels.tolist() == [7, 0, 9]
    assert not ds.interpolatable
    assert ds.grid.count == 10
    assert ds.images[0, 0, 0] == np.float32(pixels[0] / 255)


def test_idx_errors(tmp_path):
    ip, lp, _ = write_idx(tmp_path, img_magic=0x801)
    with pytest.raises(FormatError, match="magic"):
        load_idx(ip, lp)
    ip, lp, _ = write_idx(tmp_path, labels=[1, 10, 2])
    with pytest.raises(FormatError, match="invalid IDX label 10"):
        load_idx(ip, lp)
    ip, lp, _ = write_idx(tmp_path, n_labels=2)
    with pytest.raises(FormatError, match="count mismatch"):
        load_idx(ip, lp)
    ip, lp, _ = write_idx(tmp_path)
    ip.write_bytes(ip.read_bytes()[:100])
    with pytest.raises(TruncatedError):
        load_idx(ip, lp)
