"""
Small differentiable waveform classifier.

Complex slices of ``N`` I/Q samples enter as a (2, N) real tensor (I row,
Q row).  Layers are plain classes with ``forward``/``backward``; the
gradient of any weighted sum of the softmax outputs with respect to the
input samples is exact reverse mode.

Checkpoint layout (little-endian)::

    bytes 0-7   magic  b"WAVADVNN"
    u32         format version (currently 1)
    u32         header length H
    H bytes     UTF-8 JSON header: layers, classes, input_len, param table,
                blob_bytes, blob_crc32, meta
    blob        float32 parameters, concatenated in header param-table order
"""

from __future__ import annotations

import copy
import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatVersionError, SchemaError

log = logging.getLogger(__name__)

__all__ = [
    "Conv1D",
    "ReLU",
    "MaxPool",
    "Dense",
    "Dropout",
    "Softmax",
    "Classifier",
    "build_classifier",
    "modulation_surrogate",
    "fingerprint_surrogate",
    "forward",
    "input_gradient",
    "input_gradients",
    "TrainConfig",
    "train",
    "save_model",
    "load_model",
]


def to_real(z: np.ndarray) -> np.ndarray:
    """(B, N) complex -> (B, 2, N) real."""
    return np.stack([z.real, z.imag], axis=1)


def _snap32(a):
    return a.astype(np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Layer:
    kind = ""
    param_names: tuple = ()

    def params(self):
        return [getattr(self, n) for n in self.param_names]

    def grads(self):
        return [getattr(self, "d" + n) for n in self.param_names]

    def spec(self) -> dict:
        return {"kind": self.kind}

    def output_shape(self, shape):
        return shape


class Conv1D(Layer):
    kind = "conv1d"
    param_names = ("weight", "bias")

    def __init__(self, in_channels, filters, width, stride=1, rng=None):
        self.in_channels, self.filters, self.width, self.stride = in_channels, filters, width, stride
        fan_in = in_channels * width
        rng = rng if rng is not None else np.random.default_rng(0)
        lim = np.sqrt(6.0 / fan_in)
        self.weight = _snap32(rng.uniform(-lim, lim, (filters, in_channels, width)))
        self.bias = np.zeros(filters)

    def spec(self):
        return {"kind": self.kind, "filters": self.filters, "width": self.width, "stride": self.stride}

    def output_shape(self, shape):
        c, length = shape
        if c != self.in_channels:
            raise SchemaError(f"conv1d expects {self.in_channels} channels, got {c}")
        lo = (length - self.width) // self.stride + 1
        if lo < 1:
            raise SchemaError(f"conv1d width {self.width} longer than input {length}")
        return (self.filters, lo)

    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        self._cols = kernels.im2col(x, self.width, self.stride)
        wmat = self.weight.reshape(self.filters, -1)
        out = self._cols @ wmat.T + self.bias
        return np.ascontiguousarray(out.transpose(0, 2, 1))

    def backward(self, g, need_input=True):
        gt = g.transpose(0, 2, 1)
        self.dweight = np.tensordot(gt, self._cols, axes=([0, 1], [0, 1])).reshape(self.weight.shape)
        self.dbias = g.sum(axis=(0, 2))
        if not need_input:
            return None
        gcols = gt @ self.weight.reshape(self.filters, -1)
        _, c, length = self._shape
        return kernels.col2im(gcols, c, length, self.width, self.stride)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False, rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, g, need_input=True):
        return g * self._mask


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, size):
        self.size = size

    def spec(self):
        return {"kind": self.kind, "size": self.size}

    def output_shape(self, shape):
        c, length = shape
        if length // self.size < 1:
            raise SchemaError(f"maxpool size {self.size} larger than input {length}")
        return (c, length // self.size)

    def forward(self, x, training=False, rng=None):
        self._length = x.shape[2]
        out, self._arg = kernels.maxpool_forward(x, self.size)
        return out

    def backward(self, g, need_input=True):
        return kernels.maxpool_backward(g, self._arg, self.size, self._length)


class Dense(Layer):
    kind = "dense"
    param_names = ("weight", "bias")

    def __init__(self, in_features, units, rng=None, scale=6.0):
        self.in_features, self.units = in_features, units
        rng = rng if rng is not None else np.random.default_rng(0)
        lim = np.sqrt(scale / in_features)
        self.weight = _snap32(rng.uniform(-lim, lim, (units, in_features)))
        self.bias = np.zeros(units)

    def spec(self):
        return {"kind": self.kind, "units": self.units}

    def output_shape(self, shape):
        n = int(np.prod(shape))
        if n != self.in_features:
            raise SchemaError(f"dense expects {self.in_features} inputs, got {n}")
        return (self.units,)

    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        self._x = x.reshape(x.shape[0], -1)
        return self._x @ self.weight.T + self.bias

    def backward(self, g, need_input=True):
        self.dweight = g.T @ self._x
        self.dbias = g.sum(axis=0)
        if not need_input:
            return None
        return (g @ self.weight).reshape(self._shape)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate):
        if not 0 <= rate < 1:
            raise SchemaError("dropout rate must be in [0, 1)")
        self.rate = rate

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0:
            self._mask = None
            return x
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, g, need_input=True):
        return g if self._mask is None else g * self._mask


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training=False, rng=None):
        e = np.exp(x - x.max(axis=1, keepdims=True))
        self._p = e / e.sum(axis=1, keepdims=True)
        return self._p

    def backward(self, g, need_input=True):
        p = self._p
        return p * (g - np.sum(p * g, axis=1, keepdims=True))


_PARAMETRIC = {"conv1d", "dense"}


class Classifier:
    """Ordered layers ending in softmax, plus class labels and input length."""

    def __init__(self, layers, classes, input_len, meta=None):
        self.layers = list(layers)
        self.classes = list(classes)
        self.input_len = int(input_len)
        self.meta = dict(meta or {})
        if not self.layers or self.layers[-1].kind != "softmax":
            raise SchemaError("final layer must be softmax")
        shape = (2, self.input_len)
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if shape != (len(self.classes),):
            raise SchemaError(f"network output {shape} does not match {len(self.classes)} classes")

    @property
    def n_classes(self):
        return len(self.classes)

    def class_index(self, c) -> int:
        if isinstance(c, (int, np.integer)):
            if not 0 <= int(c) < self.n_classes:
                raise ValueError(f"unknown class index {c}")
            return int(c)
        try:
            return self.classes.index(c)
        except ValueError:
            raise ValueError(f"unknown class {c!r}") from None

    def _as_batch(self, z):
        z = np.asarray(z, dtype=np.complex128)
        single = z.ndim == 1
        z2 = np.atleast_2d(z)
        if z2.shape[1] != self.input_len:
            raise ValueError(f"slice length {z2.shape[1]} != model input length {self.input_len}")
        return z2, single

    def _run(self, x, training=False, rng=None, upto=None):
        layers = self.layers if upto is None else self.layers[:upto]
        for layer in layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def probabilities(self, z, batch_size=256) -> np.ndarray:
        z2, single = self._as_batch(z)
        out = [self._run(to_real(z2[i : i + batch_size])) for i in range(0, z2.shape[0], batch_size)]
        p = np.concatenate(out, axis=0) if out else np.zeros((0, self.n_classes))
        return p[0] if single else p

    def predict(self, z, batch_size=256) -> np.ndarray:
        """Argmax labels; ties resolve to the lowest class index."""
        return np.argmax(self.probabilities(z, batch_size), axis=-1)

    def weighted_input_gradient(self, z, weights):
        """Probabilities and d(sum_c w_c f_c)/dz per slice, packed as dRe + 1j*dIm.

        ``weights`` is (C,) shared by all slices or (B, C) per slice.
        """
        z2, single = self._as_batch(z)
        p = self._run(to_real(z2))
        w = np.broadcast_to(np.asarray(weights, dtype=np.float64), p.shape)
        g = w
        for layer in reversed(self.layers):
            g = layer.backward(g)
        grad = g[:, 0, :] + 1j * g[:, 1, :]
        return (p[0], grad[0]) if single else (p, grad)

    def param_list(self):
        return [p for layer in self.layers for p in layer.params()]

    def weight_norm(self) -> float:
        return float(
            np.sqrt(sum(np.sum(layer.weight**2) for layer in self.layers if layer.kind in _PARAMETRIC))
        )

    def copy(self) -> "Classifier":
        clone = copy.deepcopy(self)
        for layer in clone.layers:
            for attr in [a for a in vars(layer) if a.startswith("_")]:
                delattr(layer, attr)
        return clone


def build_classifier(layer_specs, classes, input_len, seed=0, zero_output=False) -> Classifier:
    """Instantiate layers from spec dicts, inferring fan-in from the shape chain."""
    rng = np.random.default_rng(seed)
    shape = (2, int(input_len))
    layers = []
    dense_idx = [i for i, s in enumerate(layer_specs) if s["kind"] == "dense"]
    for i, spec in enumerate(layer_specs):
        kind = spec["kind"]
        if kind == "conv1d":
            layer = Conv1D(shape[0], spec["filters"], spec["width"], spec.get("stride", 1), rng=rng)
        elif kind == "relu":
            layer = ReLU()
        elif kind == "maxpool":
            layer = MaxPool(spec["size"])
        elif kind == "dense":
            last = dense_idx and i == dense_idx[-1]
            layer = Dense(int(np.prod(shape)), spec["units"], rng=rng, scale=3.0 if last else 6.0)
            if last and zero_output:
                layer.weight[:] = 0.0
        elif kind == "dropout":
            layer = Dropout(spec["rate"])
        elif kind == "softmax":
            layer = Softmax()
        else:
            raise SchemaError(f"unknown layer kind {kind!r}")
        shape = layer.output_shape(shape)
        layers.append(layer)
    return Classifier(layers, classes, input_len)


def modulation_surrogate(classes, input_len=1024, depth=3, filters=16, width=7, pool=4, dense=64, seed=0):
    """Reduced modulation-recognition CNN: ``depth`` conv/relu/maxpool blocks, one hidden dense.

    ``depth=7, pool=2, dense=128`` gives the full-depth variant.
    """
    specs = []
    for d in range(depth):
        specs += [
            {"kind": "conv1d", "filters": filters * (1 + d // 2), "width": width if d == 0 else 5},
            {"kind": "relu"},
            {"kind": "maxpool", "size": pool},
        ]
    specs += [{"kind": "dense", "units": dense}, {"kind": "relu"}]
    specs += [{"kind": "dense", "units": len(classes)}, {"kind": "softmax"}]
    return build_classifier(specs, classes, input_len, seed=seed)


def fingerprint_surrogate(
    classes, input_len=288, filters=50, width=7, dense=(256, 80), dropout=0.5, pool=2, seed=0
):
    """Device-fingerprinting CNN: two conv/relu/dropout blocks then dense 256 and 80."""
    specs = []
    for _ in range(2):
        specs += [{"kind": "conv1d", "filters": filters, "width": width}, {"kind": "relu"}]
        if pool > 1:
            specs.append({"kind": "maxpool", "size": pool})
        specs.append({"kind": "dropout", "rate": dropout})
    for units in dense:
        specs += [{"kind": "dense", "units": units}, {"kind": "relu"}]
    specs += [{"kind": "dense", "units": len(classes)}, {"kind": "softmax"}]
    return build_classifier(specs, classes, input_len, seed=seed)


# ---------------------------------------------------------------------------
# functional API
# ---------------------------------------------------------------------------


def forward(model: Classifier, z) -> np.ndarray:
    return model.probabilities(z)


def input_gradient(model: Classifier, z, c) -> np.ndarray:
    """Gradient of ``f_c(z)`` w.r.t. the I and Q components, as dRe + 1j*dIm."""
    idx = model.class_index(c)
    w = np.zeros(model.n_classes)
    w[idx] = 1.0
    return model.weighted_input_gradient(z, w)[1]


def input_gradients(model: Classifier, z, weights):
    return model.weighted_input_gradient(z, weights)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    l2_lambda: float = 1e-4
    lr: float = 1e-4
    epochs: int = 10
    batch: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)  # index 0 = before any update
    accuracy: list = field(default_factory=list)


def _unpack_dataset(dataset):
    if isinstance(dataset, tuple):
        iq, labels = dataset
    else:
        iq, labels = dataset.iq, dataset.labels
    return np.asarray(iq, dtype=np.complex128), np.asarray(labels, dtype=np.int64)


def _xent(model, x, y, training, rng):
    logits = model._run(x, training=training, rng=rng, upto=-1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(y.size), y].mean()
    return loss, logp


def _dataset_loss(model, iq, labels, batch=256):
    total, correct = 0.0, 0
    for i in range(0, labels.size, batch):
        loss, logp = _xent(model, to_real(iq[i : i + batch]), labels[i : i + batch], False, None)
        total += loss * min(batch, labels.size - i)
        correct += int(np.sum(np.argmax(logp, axis=1) == labels[i : i + batch]))
    return total / labels.size, correct / labels.size


def train(model: Classifier, dataset, hyper: TrainConfig | None = None):
    """Adam on categorical cross-entropy + l2 on weights.  Returns (new model, history).

    The input model is not modified.  Parameters are rounded to float32 at
    the end so a checkpoint round trip is exact.
    """
    hyper = hyper or TrainConfig()
    iq, labels = _unpack_dataset(dataset)
    if labels.size == 0:
        raise ValueError("empty dataset")
    if labels.min() < 0 or labels.max() >= model.n_classes:
        raise ValueError("label outside the model's class set")
    if iq.shape[1] != model.input_len:
        raise ValueError(f"slice length {iq.shape[1]} != model input length {model.input_len}")

    net = model.copy()
    rng = np.random.default_rng(hyper.seed)
    params = net.param_list()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    hist = TrainHistory()
    loss0, acc0 = _dataset_loss(net, iq, labels)
    hist.loss.append(float(loss0))
    hist.accuracy.append(float(acc0))
    step = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(labels.size)
        ep_loss, ep_correct = 0.0, 0
        for start in range(0, labels.size, hyper.batch):
            idx = order[start : start + hyper.batch]
            x, y = to_real(iq[idx]), labels[idx]
            loss, logp = _xent(net, x, y, True, rng)
            if not np.isfinite(loss):
                raise FloatingPointError(f"training loss became {loss} at epoch {epoch}")
            ep_loss += loss * y.size
            ep_correct += int(np.sum(np.argmax(logp, axis=1) == y))
            g = np.exp(logp)
            g[np.arange(y.size), y] -= 1.0
            g /= y.size
            layers = net.layers[:-1]
            for j in range(len(layers) - 1, -1, -1):
                g = layers[j].backward(g, need_input=j > 0)
            step += 1
            b1, b2 = hyper.beta1, hyper.beta2
            lr_t = hyper.lr * np.sqrt(1 - b2**step) / (1 - b1**step)
            k = 0
            for layer in net.layers:
                for name in layer.param_names:
                    p = getattr(layer, name)
                    gp = getattr(layer, "d" + name)
                    if name == "weight" and hyper.l2_lambda:
                        gp = gp + 2.0 * hyper.l2_lambda * p
                    m[k] = b1 * m[k] + (1 - b1) * gp
                    v[k] = b2 * v[k] + (1 - b2) * gp * gp
                    p -= lr_t * m[k] / (np.sqrt(v[k]) + hyper.adam_eps)
                    k += 1
        hist.loss.append(float(ep_loss / labels.size))
        hist.accuracy.append(ep_correct / labels.size)
        log.info("epoch %d loss %.4f acc %.3f", epoch + 1, hist.loss[-1], hist.accuracy[-1])
    for layer in net.layers:
        for name in layer.param_names:
            setattr(layer, name, _snap32(getattr(layer, name)))
    net = net.copy()
    net.meta["train"] = asdict(hyper)
    return net, hist


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"WAVADVNN"
MODEL_FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


def save_model(model: Classifier, path) -> Path:
    path = Path(path)
    table, chunks = [], []
    for i, layer in enumerate(model.layers):
        for name in layer.param_names:
            arr = getattr(layer, name)
            table.append({"layer": i, "name": name, "shape": list(arr.shape)})
            chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = b"".join(chunks)
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "classes": model.classes,
        "input_len": model.input_len,
        "layers": [layer.spec() for layer in model.layers],
        "params": table,
        "blob_bytes": len(blob),
        "blob_crc32": zlib.crc32(blob),
        "meta": model.meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MODEL_MAGIC, MODEL_FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(blob)
    return path


def read_model_header(path) -> dict:
    raw = Path(path).read_bytes()
    return _parse_header(raw, path)[0]


def _parse_header(raw, path):
    if len(raw) < _PREFIX.size:
        raise SchemaError(f"{path}: truncated model file")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise SchemaError(f"{path}: not a model checkpoint")
    if version != MODEL_FORMAT_VERSION:
        raise FormatVersionError(f"{path}: format version {version}, expected {MODEL_FORMAT_VERSION}")
    end = _PREFIX.size + hlen
    if len(raw) < end:
        raise SchemaError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREFIX.size : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: corrupt header ({exc})") from None
    return header, end


def load_model(path) -> Classifier:
    path = Path(path)
    raw = path.read_bytes()
    header, end = _parse_header(raw, path)
    blob = raw[end:]
    if len(blob) != header["blob_bytes"]:
        raise SchemaError(f"{path}: weight blob has {len(blob)} bytes, expected {header['blob_bytes']}")
    if zlib.crc32(blob) != header["blob_crc32"]:
        raise SchemaError(f"{path}: weight blob checksum mismatch")
    model = build_classifier(header["layers"], header["classes"], header["input_len"])
    flat = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    pos = 0
    for entry in header["params"]:
        layer = model.layers[entry["layer"]]
        cur = getattr(layer, entry["name"])
        n = int(np.prod(entry["shape"]))
        if list(cur.shape) != entry["shape"]:
            raise SchemaError(f"{path}: parameter shape mismatch in layer {entry['layer']}")
        setattr(layer, entry["name"], flat[pos : pos + n].reshape(entry["shape"]).copy())
        pos += n
    model.meta = header.get("meta", {})
    return model
