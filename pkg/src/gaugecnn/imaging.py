"""Grayscale rasters: affine warping, resizing, noise, glyphs and PGM I/O.

Images are 2-D float64 arrays of shape ``(height, width)`` with intensities
in [0, 1]. Pixel ``(x, y)`` is ``img[y, x]``; x grows to the right and y
grows downward, as displayed.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, InvalidParameterError, TruncatedError
from .rng import SplitMix64


def as_image(img):
    """Validate ``img`` as a grayscale raster and return it as float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidParameterError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidParameterError("image intensities must lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class Affine2D:
    """The map (x, y) -> (a*x + b*y + tx, c*x + d*y + ty)."""

    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    @property
    def determinant(self):
        return self.a * self.d - self.b * self.c

    def is_invertible(self):
        return abs(self.determinant) > 1e-12

    def inverse(self):
        det = self.determinant
        if abs(det) <= 1e-12:
            raise InvalidParameterError(f"singular affine transform (det={det:g})")
        a, b = self.d / det, -self.b / det
        c, d = -self.c / det, self.a / det
        return Affine2D(a, b, c, d, -(a * self.tx + b * self.ty), -(c * self.tx + d * self.ty))

    def apply(self, x, y):
        return self.a * x + self.b * y + self.tx, self.c * x + self.d * y + self.ty

    @classmethod
    def translation(cls, tx, ty):
        return cls(tx=tx, ty=ty)

    @classmethod
    def rotation(cls, angle_deg, cx=0.0, cy=0.0):
        """Rotation about (cx, cy); positive angles turn clockwise on screen."""
        cos, sin = _cos_sin_deg(angle_deg)
        return cls(cos, -sin, sin, cos, cx - cos * cx + sin * cy, cy - sin * cx - cos * cy)


def _cos_sin_deg(angle_deg):
    # exact values on quarter turns so 90-degree rotations land on grid points
    quarter = angle_deg / 90.0
    if quarter == int(quarter):
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(quarter) % 4]
    rad = np.deg2rad(angle_deg)
    return float(np.cos(rad)), float(np.sin(rad))


def _bilinear_zero(src, sx, sy):
    """Sample ``src`` at real coordinates; neighbours outside read as 0."""
    h, w = src.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros(sx.shape, dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.zeros(sx.shape, dtype=np.float64)
            vals[ok] = src[yi[ok], xi[ok]]
            out += wx * wy * vals
    return out


def warp(img, t, out_width=None, out_height=None):
    """Apply ``t`` to ``img`` by inverse mapping with bilinear sampling."""
    src = as_image(img)
    if not isinstance(t, Affine2D):
        raise InvalidParameterError("t must be an Affine2D")
    inv = t.inverse()
    out_width = src.shape[1] if out_width is None else int(out_width)
    out_height = src.shape[0] if out_height is None else int(out_height)
    if out_width < 1 or out_height < 1:
        raise InvalidParameterError("output dimensions must be >= 1")
    ys, xs = np.mgrid[0:out_height, 0:out_width].astype(np.float64)
    sx, sy = inv.apply(xs, ys)
    return np.clip(_bilinear_zero(src, sx, sy), 0.0, 1.0)


def image_center(img):
    h, w = np.shape(img)
    return (w - 1) / 2.0, (h - 1) / 2.0


def rotate_about_center(img, angle_deg):
    """Rotate about the pixel-grid center; positive = clockwise (right bank)."""
    img = as_image(img)
    if angle_deg == 0:
        return img.copy()
    cx, cy = image_center(img)
    return warp(img, Affine2D.rotation(angle_deg, cx, cy))


def rotate_many(img, angles):
    """Stack of renderings of ``img`` at each angle, shape (n, h, w)."""
    img = as_image(img)
    out = np.empty((len(angles),) + img.shape, dtype=np.float64)
    for i, angle in enumerate(angles):
        out[i] = rotate_about_center(img, float(angle))
    return out


def mirror_horizontal(img):
    return as_image(img)[:, ::-1].copy()


def resize(img, new_width, new_height):
    """Bilinear resampling with pixel centers aligned and edges clamped."""
    src = as_image(img)
    new_width, new_height = int(new_width), int(new_height)
    if new_width < 1 or new_height < 1:
        raise InvalidParameterError("new dimensions must be >= 1")
    h, w = src.shape
    if (new_height, new_width) == (h, w):
        return src.copy()
    sx = np.clip((np.arange(new_width) + 0.5) * (w / new_width) - 0.5, 0, w - 1)
    sy = np.clip((np.arange(new_height) + 0.5) * (h / new_height) - 0.5, 0, h - 1)
    x0 = np.minimum(np.floor(sx).astype(np.int64), w - 1)
    y0 = np.minimum(np.floor(sy).astype(np.int64), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[None, :]
    fy = (sy - y0)[:, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return np.clip(top * (1 - fy) + bottom * fy, 0.0, 1.0)


NOISE_KINDS = ("gaussian", "salt_pepper", "speckle")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    level: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidParameterError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not np.isfinite(self.level) or self.level < 0:
            raise InvalidParameterError(f"noise level must be >= 0, got {self.level}")
        if self.kind == "salt_pepper" and self.level > 1:
            raise InvalidParameterError("salt_pepper level is a probability in [0, 1]")

    @classmethod
    def parse(cls, text):
        """Parse ``"kind:level"``, e.g. ``"gaussian:0.1"``."""
        kind, _, level = text.partition(":")
        try:
            return cls(kind.strip(), float(level) if level else 0.0)
        except ValueError as exc:
            raise InvalidParameterError(f"bad noise spec {text!r}: {exc}") from None

    def to_dict(self):
        return {"kind": self.kind, "level": self.level}


def add_noise(img, spec, seed):
    """Noised copy of ``img``; a pure function of (img, spec, seed)."""
    img = as_image(img)
    if not isinstance(spec, NoiseSpec):
        raise InvalidParameterError("spec must be a NoiseSpec")
    n = img.size
    rng = SplitMix64(seed)
    if spec.kind == "gaussian":
        out = img + spec.level * rng.normal(n).reshape(img.shape)
    elif spec.kind == "speckle":
        out = img * (1.0 + spec.level * rng.normal(n).reshape(img.shape))
    else:
        hit = rng.uniform(n).reshape(img.shape) < spec.level
        salt = rng.uniform(n).reshape(img.shape) >= 0.5
        out = np.where(hit, salt.astype(np.float64), img)
    return np.clip(out, 0.0, 1.0)


def _box_coverage(xs, ys, cx, cy, half_w, half_h):
    # 1-pixel antialiased coverage from the box's signed distance
    qx = np.abs(xs - cx) - half_w
    qy = np.abs(ys - cy) - half_h
    outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
    dist = outside + np.minimum(np.maximum(qx, qy), 0)
    return np.clip(0.5 - dist, 0.0, 1.0)


def make_default_glyph(width=64, height=64):
    """Procedural bank-indicator glyph.

    A horizontal bar (the wings) through the center plus a shorter stub
    rising from the center. Symmetric left/right, asymmetric top/bottom, so
    every roll angle in (-180, 180] renders distinctly.
    """
    width, height = int(width), int(height)
    if width < 16 or height < 16:
        raise InvalidParameterError(f"glyph must be at least 16x16, got {width}x{height}")
    size = min(width, height)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    half_thick = max(1.0, 0.05 * size)
    span = 0.40 * size
    stub = 0.30 * size
    wings = _box_coverage(xs, ys, cx, cy, span, half_thick)
    fin = _box_coverage(xs, ys, cx, cy - stub / 2.0, half_thick, stub / 2.0)
    return np.maximum(wings, fin)


@dataclass
class AliasReport:
    angles: list
    min_distance: float
    collisions: list = field(default_factory=list)
    closest_distance: float = float("inf")

    @property
    def passed(self):
        return not self.collisions

    def to_dict(self):
        return {
            "passed": self.passed,
            "min_distance": self.min_distance,
            "closest_distance": self.closest_distance,
            "collisions": [list(c) for c in self.collisions],
        }


def rms_distance_matrix(stack):
    flat = stack.reshape(len(stack), -1)
    sq = np.einsum("ij,ij->i", flat, flat)
    d2 = (sq[:, None] + sq[None, :] - 2.0 * flat @ flat.T) / flat.shape[1]
    return np.sqrt(np.maximum(d2, 0.0))


def check_rotational_aliasing(glyph, grid, min_distance=0.01):
    """Report every pair of grid angles whose renderings are closer than
    ``min_distance`` in RMS pixel distance."""
    angles = [float(a) for a in grid.angles]
    dist = rms_distance_matrix(rotate_many(glyph, angles))
    report = AliasReport(angles=angles, min_distance=float(min_distance))
    iu, ju = np.triu_indices(len(angles), k=1)
    if len(iu):
        pair_d = dist[iu, ju]
        report.closest_distance = float(pair_d.min())
        for i, j, d in zip(iu, ju, pair_d):
            if d < min_distance:
                report.collisions.append((angles[i], angles[j], float(d)))
    return report


def load_pgm(path):
    """Read a binary 8-bit PGM (P5, maxval 255) into a float image."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise FormatError(f"unsupported format: magic {data[:2]!r}, expected b'P5'", offset=0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed PGM header", offset=pos)
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("malformed PGM header: missing separator before pixel data", offset=pos)
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"invalid PGM dimensions {width}x{height}", offset=pos)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, expected 255", offset=pos)
    need = width * height
    if len(data) - pos < need:
        raise TruncatedError(f"truncated PGM pixel data: need {need} bytes, have {len(data) - pos}",
                             offset=len(data))
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    return pixels.reshape(height, width).astype(np.float64) / 255.0


def to_bytes(img):
    return np.floor(as_image(img) * 255.0 + 0.5).astype(np.uint8)


def save_pgm(img, path):
    pixels = to_bytes(img)
    h, w = pixels.shape
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    os.replace(tmp, path)
