"""A small numpy CNN: conv-relu-pool x2, dense-relu, dense-softmax.

Activations use NHWC layout. Convolution kernels are stored as
``(k, k, in_channels, out_channels)`` so that an im2col matrix of shape
``(N*H'*W', k*k*in_channels)`` multiplies the reshaped kernel directly.
"""

import json
import os
import struct
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .exceptions import FormatError, InvalidParameterError, TrainingDivergedError, TruncatedError
from .rng import SplitMix64, derive_seed

PARAM_NAMES = (
    "conv1.weight", "conv1.bias",
    "conv2.weight", "conv2.bias",
    "dense1.weight", "dense1.bias",
    "dense2.weight", "dense2.bias",
)


@dataclass(frozen=True)
class ModelConfig:
    input_height: int = 64
    input_width: int = 64
    num_classes: int = 61
    conv1_filters: int = 32
    conv2_filters: int = 128
    kernel_size: int = 3
    pool_size: int = 2
    dense_units: int = 128
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    batch_size: int = 32
    epochs: int = 5

    def __post_init__(self):
        counts = ("input_height", "input_width", "conv1_filters", "conv2_filters",
                  "kernel_size", "pool_size", "dense_units", "batch_size")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise InvalidParameterError(f"{name} must be >= 1")
        if self.num_classes < 2:
            raise InvalidParameterError("num_classes must be >= 2")
        if self.epochs < 0:
            raise InvalidParameterError("epochs must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidParameterError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise InvalidParameterError("learning_rate must be > 0")
        self.feature_shape()

    def feature_shape(self):
        """Spatial shape after each stage; raises if any dim collapses."""
        k, p = self.kernel_size, self.pool_size
        h, w = self.input_height, self.input_width
        shapes = []
        for stage in ("conv1", "pool1", "conv2", "pool2"):
            if stage.startswith("conv"):
                h, w = h - k + 1, w - k + 1
            else:
                h, w = h // p, w // p
            if h < 1 or w < 1:
                raise InvalidParameterError(
                    f"input {self.input_height}x{self.input_width} too small for kernel {k} / pool {p} "
                    f"(collapses at {stage})")
            shapes.append((h, w))
        return shapes

    @property
    def flat_features(self):
        h, w = self.feature_shape()[-1]
        return h * w * self.conv2_filters

    def param_shapes(self):
        k = self.kernel_size
        return {
            "conv1.weight": (k, k, 1, self.conv1_filters),
            "conv1.bias": (self.conv1_filters,),
            "conv2.weight": (k, k, self.conv1_filters, self.conv2_filters),
            "conv2.bias": (self.conv2_filters,),
            "dense1.weight": (self.flat_features, self.dense_units),
            "dense1.bias": (self.dense_units,),
            "dense2.weight": (self.dense_units, self.num_classes),
            "dense2.bias": (self.num_classes,),
        }

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class Model:
    config: ModelConfig
    params: dict
    trained: bool = False

    def copy(self):
        return Model(self.config, {k: v.copy() for k, v in self.params.items()}, self.trained)

    def astype(self, dtype):
        return Model(self.config, {k: v.astype(dtype) for k, v in self.params.items()}, self.trained)


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def to_dict(self):
        return asdict(self)


def init_model(config, seed=0, dtype=np.float32):
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases.

    Parameter ``i`` of :data:`PARAM_NAMES` draws from
    ``SplitMix64(derive_seed(seed, i))``.
    """
    params = {}
    for i, (name, shape) in enumerate(config.param_shapes().items()):
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[:-1]))
        bound = np.sqrt(6.0 / fan_in)
        u = SplitMix64(derive_seed(seed, i)).uniform(int(np.prod(shape)))
        params[name] = ((2.0 * u - 1.0) * bound).reshape(shape).astype(dtype)
    return Model(config, params)


# -- layers -------------------------------------------------------------------

def _im2col(x, k):
    n, h, w, c = x.shape
    ho, wo = h - k + 1, w - k + 1
    cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = x[:, i:i + ho, j:j + wo, :]
    return cols.reshape(n * ho * wo, k * k * c), ho, wo


def _conv_forward(x, w, b):
    k = w.shape[0]
    cols, ho, wo = _im2col(x, k)
    out = cols @ w.reshape(-1, w.shape[-1]) + b
    return out.reshape(len(x), ho, wo, -1), cols


def _conv_backward(dout, x_shape, cols, w, need_dx=True):
    n, ho, wo, cout = dout.shape
    k, c = w.shape[0], w.shape[2]
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(n, ho, wo, k, k, c)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    return dx, dw, db


def _pool_forward(x, p):
    """Max pooling with stride p; ``masks[i*p + j]`` marks where window
    offset (i, j) holds the first maximum, so ties route gradient once."""
    n, h, w, c = x.shape
    ho, wo = h // p, w // p
    views = [x[:, i:ho * p:p, j:wo * p:p, :] for i in range(p) for j in range(p)]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)
    masks = []
    taken = np.zeros(out.shape, dtype=bool)
    for v in views:
        m = (v == out) & ~taken
        taken |= m
        masks.append(m)
    return out, masks


def _pool_backward(dout, masks, x_shape, p):
    ho, wo = dout.shape[1], dout.shape[2]
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for idx, m in enumerate(masks):
        i, j = divmod(idx, p)
        dx[:, i:ho * p:p, j:wo * p:p, :] = dout * m
    return dx


def softmax(logits):
    """Row softmax in float64 with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(model, batch):
    x = np.asarray(batch)
    if x.ndim == 3:
        x = x[..., None]
    cfg = model.config
    if x.ndim != 4 or x.shape[1:] != (cfg.input_height, cfg.input_width, 1):
        raise InvalidParameterError(
            f"batch shape {np.shape(batch)} does not match model input "
            f"({cfg.input_height}, {cfg.input_width})")
    dtype = model.params["dense2.weight"].dtype
    return x.astype(dtype, copy=False)


def _forward(model, x):
    p = model.params
    pool = model.config.pool_size
    z1, cols1 = _conv_forward(x, p["conv1.weight"], p["conv1.bias"])
    a1 = np.maximum(z1, 0)
    m1, masks1 = _pool_forward(a1, pool)
    z2, cols2 = _conv_forward(m1, p["conv2.weight"], p["conv2.bias"])
    a2 = np.maximum(z2, 0)
    m2, masks2 = _pool_forward(a2, pool)
    flat = m2.reshape(len(x), -1)
    z3 = flat @ p["dense1.weight"] + p["dense1.bias"]
    a3 = np.maximum(z3, 0)
    logits = a3 @ p["dense2.weight"] + p["dense2.bias"]
    cache = (x, cols1, z1, a1.shape, masks1, m1.shape, cols2, z2, a2.shape, masks2, m2.shape, flat, z3, a3)
    return logits, cache


def _backward(model, cache, dlogits):
    p = model.params
    pool = model.config.pool_size
    x, cols1, z1, a1_shape, masks1, m1_shape, cols2, z2, a2_shape, masks2, m2_shape, flat, z3, a3 = cache
    g = {}
    g["dense2.weight"] = a3.T @ dlogits
    g["dense2.bias"] = dlogits.sum(axis=0)
    dz3 = (dlogits @ p["dense2.weight"].T) * (z3 > 0)
    g["dense1.weight"] = flat.T @ dz3
    g["dense1.bias"] = dz3.sum(axis=0)
    dm2 = (dz3 @ p["dense1.weight"].T).reshape(m2_shape)
    dz2 = _pool_backward(dm2, masks2, a2_shape, pool) * (z2 > 0)
    dm1, g["conv2.weight"], g["conv2.bias"] = _conv_backward(dz2, m1_shape, cols2, p["conv2.weight"])
    dz1 = _pool_backward(dm1, masks1, a1_shape, pool) * (z1 > 0)
    _, g["conv1.weight"], g["conv1.bias"] = _conv_backward(dz1, x.shape, cols1, p["conv1.weight"], need_dx=False)
    return g


def loss_and_grads(model, x, labels):
    """Mean softmax cross-entropy over the batch and its parameter gradients."""
    logits, cache = _forward(model, x)
    probs = softmax(logits)
    n = len(labels)
    loss = -np.mean(np.log(np.maximum(probs[np.arange(n), labels], 1e-300)))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits = (dlogits / n).astype(logits.dtype)
    return float(loss), _backward(model, cache, dlogits), probs


def forward(model, batch):
    """Class probabilities for a batch of images, shape (n, num_classes).

    Each image goes through its own sequence of BLAS calls. BLAS picks
    kernels (and so summation order) by matrix size, so stacking images
    would make an image's output depend on how callers group them.
    """
    x = _as_batch(model, batch)
    out = np.empty((len(x), model.config.num_classes), dtype=np.float64)
    for i in range(len(x)):
        logits, _ = _forward(model, x[i:i + 1])
        out[i] = softmax(logits)[0]
    return out


def predict(model, image):
    """Prediction vector for a single image."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise InvalidParameterError(f"expected a single 2-D image, got shape {img.shape}")
    return forward(model, img[None])[0]


def _dataset_arrays(data):
    if isinstance(data, tuple):
        return np.asarray(data[0]), np.asarray(data[1], dtype=np.int64)
    return data.images, data.labels


class _Adam:
    def __init__(self, params, cfg):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        cfg = self.cfg
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        lr_t = cfg.learning_rate * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= (lr_t * m / (np.sqrt(v) + cfg.epsilon)).astype(params[k].dtype)


class _SGD:
    def __init__(self, params, cfg):
        self.lr = cfg.learning_rate

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= (self.lr * g).astype(params[k].dtype)


def train(model, train_set, config=None, log=None):
    """Minibatch training in dataset order; returns (new model, history).

    ``config`` overrides the optimizer/batch/epoch settings of the model's
    own config. Raises TrainingDivergedError on a non-finite loss or
    parameter, naming the global step.
    """
    cfg = model.config if config is None else config
    images, labels = _dataset_arrays(train_set)
    x = _as_batch(model, images)
    if len(labels) != len(x):
        raise InvalidParameterError("images and labels differ in length")
    if len(labels) and (labels.min() < 0 or labels.max() >= model.config.num_classes):
        raise InvalidParameterError("training label outside [0, num_classes)")
    trained = model.copy()
    history = TrainHistory()
    if cfg.epochs == 0 or len(x) == 0:
        return trained, history
    opt = _Adam(trained.params, cfg) if cfg.optimizer == "adam" else _SGD(trained.params, cfg)
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        total_loss = 0.0
        correct = 0
        for start in range(0, len(x), cfg.batch_size):
            xb = x[start:start + cfg.batch_size]
            yb = labels[start:start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                # overflow surfaces as a non-finite loss, reported below
                loss, grads, probs = loss_and_grads(trained, xb, yb)
            step += 1
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at step {step} (epoch {epoch})", step=step)
            opt.step(trained.params, grads)
            for name, value in trained.params.items():
                if not np.all(np.isfinite(value)):
                    raise TrainingDivergedError(f"non-finite {name} after step {step}", step=step)
            total_loss += loss * len(yb)
            correct += int(np.sum(probs.argmax(axis=1) == yb))
        history.loss.append(total_loss / len(x))
        history.accuracy.append(correct / len(x))
        history.seconds.append(time.perf_counter() - t0)
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs}: loss {history.loss[-1]:.4f} acc {history.accuracy[-1]:.4f}")
    trained.trained = True
    return trained, history


def evaluate(model, test_set):
    """Accuracy (argmax == label) and mean cross-entropy."""
    images, labels = _dataset_arrays(test_set)
    if len(labels) == 0:
        raise InvalidParameterError("empty test set")
    if labels.max() >= model.config.num_classes:
        raise InvalidParameterError("test label outside [0, num_classes)")
    probs = forward(model, images)
    picked = probs[np.arange(len(labels)), labels]
    return {
        "accuracy": float(np.mean(probs.argmax(axis=1) == labels)),
        "loss": float(-np.mean(np.log(np.maximum(picked, 1e-300)))),
    }


TINY_CONFIG = ModelConfig(input_height=8, input_width=8, num_classes=3, conv1_filters=2,
                          conv2_filters=2, kernel_size=2, pool_size=2, dense_units=8, batch_size=4)


def gradient_check(config=TINY_CONFIG, seed=0, batch=4, h=1e-4, _grad_hook=None):
    """Max relative error between backprop and central finite differences,
    over every parameter, in float64.

    ``_grad_hook`` lets tests corrupt the analytic gradients to confirm the
    check is sensitive.
    """
    model = init_model(config, seed, dtype=np.float64)
    rng = SplitMix64(derive_seed(seed, 1000))
    # small random biases so no unit sits exactly on a ReLU kink
    for name in PARAM_NAMES:
        if name.endswith(".bias"):
            model.params[name] = 0.1 * (2 * rng.uniform(model.params[name].size) - 1)
    x = rng.uniform(batch * config.input_height * config.input_width).reshape(
        batch, config.input_height, config.input_width, 1)
    labels = rng.integers_upto(np.full(batch, config.num_classes - 1))
    _, grads, _ = loss_and_grads(model, x, labels)
    if _grad_hook is not None:
        grads = _grad_hook(grads)
    worst = 0.0
    for name in PARAM_NAMES:
        param = model.params[name]
        flat = param.reshape(-1)
        analytic = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _, _ = loss_and_grads(model, x, labels)
            flat[i] = orig - h
            down, _, _ = loss_and_grads(model, x, labels)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            denom = max(abs(analytic[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


# GNM1 layout (little-endian):
#   "GNM1" | u32 version | u32 n | n bytes of UTF-8 JSON config record
#   | u32 tensor count | per tensor: u16 name length, name,
#     u8 ndim, u32 dims..., f32 values (row-major)
_GNM_MAGIC = b"GNM1"
GNM_VERSION = 1


def model_to_bytes(model):
    record = json.dumps({"config": model.config.to_dict(), "trained": model.trained},
                        sort_keys=True).encode("utf-8")
    parts = [_GNM_MAGIC, struct.pack("<II", GNM_VERSION, len(record)), record,
             struct.pack("<I", len(PARAM_NAMES))]
    for name in PARAM_NAMES:
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        bname = name.encode("ascii")
        parts.append(struct.pack("<H", len(bname)) + bname)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_model(model, path):
    data = model_to_bytes(model)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def model_from_bytes(data):
    if data[:4] != _GNM_MAGIC:
        raise FormatError(f"not a GNM1 model: magic {data[:4]!r}", offset=0)
    pos = 4

    def take(nbytes, what):
        nonlocal pos
        if pos + nbytes > len(data):
            raise TruncatedError(f"truncated model file while reading {what}", offset=len(data))
        chunk = data[pos:pos + nbytes]
        pos += nbytes
        return chunk

    version, rec_len = struct.unpack("<II", take(8, "header"))
    if version != GNM_VERSION:
        raise FormatError(f"unsupported GNM1 version {version}", offset=4)
    try:
        record = json.loads(take(rec_len, "config record").decode("utf-8"))
        config = ModelConfig.from_dict(record["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad config record: {exc}", offset=12) from None
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    expected = config.param_shapes()
    params = {}
    for i in range(count):
        label = PARAM_NAMES[i] if i < len(PARAM_NAMES) else f"tensor #{i}"
        (nlen,) = struct.unpack("<H", take(2, f"tensor {label}"))
        name = take(nlen, f"tensor {label}").decode("ascii", errors="replace")
        (ndim,) = struct.unpack("<B", take(1, f"tensor {name}"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"tensor {name}"))
        if name not in expected or tuple(shape) != expected[name]:
            raise FormatError(f"tensor {name} has shape {shape}, config expects {expected.get(name)}", offset=pos)
        size = int(np.prod(shape))
        params[name] = np.frombuffer(take(4 * size, f"tensor {name}"), dtype="<f4").reshape(shape).astype(np.float32)
    missing = [n for n in PARAM_NAMES if n not in params]
    if missing:
        raise TruncatedError(f"model file missing tensor {missing[0]}", offset=len(data))
    return Model(config, params, bool(record.get("trained", False)))


def with_updates(config, **changes):
    return replace(config, **changes)
