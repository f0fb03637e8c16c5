"""Turn prediction vectors into angles: argmax, interpolated, and the
missing-codes sweep."""

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import angle_of_label
from .exceptions import InvalidParameterError
from .imaging import resize, rotate_about_center
from .network import forward, predict


def _check_vector(pred, grid):
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim != 1 or len(p) != grid.count:
        raise InvalidParameterError(f"prediction vector length {np.shape(p)} does not match grid of {grid.count}")
    return p


def argmax_readout(pred, grid):
    """(class index, angle) of the most probable class; ties go to the lowest index."""
    p = _check_vector(pred, grid)
    idx = int(np.argmax(p))
    return idx, angle_of_label(grid, idx)


def interp_readout(pred, grid):
    """Expected angle under ``pred``: sum(angle_i * p_i) / sum(p_i)."""
    p = _check_vector(pred, grid)
    total = p.sum()
    if not total > 0:
        raise InvalidParameterError("prediction vector sums to zero")
    return float(np.dot(grid.angles, p) / total)


@dataclass
class Readout:
    class_index: int
    categorical_angle: float
    interpolated_angle: float
    elapsed: float
    actual_angle: float = None
    prediction: list = field(default=None, repr=False)

    def to_record(self):
        """Flat record with the field names of the printed inference block."""
        rec = {
            "actual_angle": self.actual_angle,
            "argmax_symbol": self.class_index,
            "argmax_angle": self.categorical_angle,
            "interp_angle": self.interpolated_angle,
            "error_deg": None if self.actual_angle is None else abs(self.interpolated_angle - self.actual_angle),
            "elapsed_s": self.elapsed,
        }
        if self.prediction is not None:
            rec["prediction_vector"] = list(self.prediction)
        return rec

    def to_json(self, **kwargs):
        return json.dumps(self.to_record(), **kwargs)


def read_bank_angle(model, image, grid, actual_angle=None):
    t0 = time.perf_counter()
    pred = predict(model, image)
    idx, cat = argmax_readout(pred, grid)
    interp = interp_readout(pred, grid)
    elapsed = time.perf_counter() - t0
    return Readout(idx, cat, interp, elapsed, actual_angle, [float(v) for v in pred])


@dataclass
class ScanReport:
    fine_step: float
    angles: list
    classes: list
    num_classes: int
    classes_hit: set = field(default_factory=set)
    violations: list = field(default_factory=list)

    @property
    def missing(self):
        return sorted(set(range(self.num_classes)) - self.classes_hit)

    @property
    def passed(self):
        return len(self.classes_hit) == self.num_classes and not self.violations

    def to_dict(self):
        d = asdict(self)
        d["classes_hit"] = sorted(self.classes_hit)
        d["missing"] = self.missing
        d["passed"] = self.passed
        return d


def missing_codes_scan(model, glyph, grid, fine_step=0.5, image_size=None):
    """Sweep the glyph from min to max angle in ``fine_step`` increments and
    check the argmax class covers every class in non-decreasing order.

    ``image_size`` (width, height) resizes each rendering to the model input.
    """
    if not 0 < fine_step < grid.step:
        raise InvalidParameterError(f"fine_step must be in (0, {grid.step}), got {fine_step}")
    n = int(np.floor((grid.max_angle - grid.min_angle) / fine_step + 1e-9)) + 1
    angles = grid.min_angle + fine_step * np.arange(n)
    renders = [rotate_about_center(glyph, float(a)) for a in angles]
    if image_size is not None:
        renders = [resize(r, *image_size) for r in renders]
    classes = forward(model, np.stack(renders)).argmax(axis=1)
    report = ScanReport(float(fine_step), [float(a) for a in angles], [int(c) for c in classes], grid.count)
    report.classes_hit = {int(c) for c in classes}
    for i in range(1, n):
        if classes[i] < classes[i - 1]:
            report.violations.append((float(angles[i]), int(classes[i])))
    return report
