"""
Blackbox waveform synthesis with trainable complex FIR layers.

A FIRNet keeps one bank of FIR layers per target class.  Training sees
the classifier only through a :class:`FeedbackOracle`, which applies the
over-the-air leg (adversary radio impairment, flat gain/phase jitter,
channel, noise), optional RMS normalization, and returns either the
softmax vector or a 1-bit ACK per slice.

Gradients are estimated with simultaneous perturbation (SPSA): every
step draws one Rademacher vector per bank and makes two oracle calls on
the same batch with common random numbers.  A graybox switch instead
backpropagates through the simulated oracle for fast, deterministic runs.
After every Adam update the deviation ``phi - phi_init`` is clipped into
the box ``|Re|, |Im| <= eps``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, kernels
from .data import Dataset, DeviceFingerprint, derive_seed
from .errors import NumericalError, SchemaError

log = logging.getLogger(__name__)

SOFTMAX, ONEBIT = "softmax", "onebit"
ARTIFACT_VERSION = 1
COLLAPSE_FRACTION = 0.9


def _pairs(a):
    return [[float(v.real), float(v.imag)] for v in np.asarray(a)]


def _from_pairs(p):
    arr = np.asarray(p, dtype=np.float64).reshape(-1, 2)
    return arr[:, 0] + 1j * arr[:, 1]


class FirLayer:
    """M trainable complex taps, identity-initialized, deviation-boxed."""

    def __init__(self, m: int, epsilon: float):
        if m < 1:
            raise ValueError("FIR layer needs at least one tap")
        if epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        self.init = np.zeros(m, dtype=np.complex128)
        self.init[0] = 1.0
        self.taps = self.init.copy()
        self.epsilon = float(epsilon)

    @property
    def m(self) -> int:
        return self.taps.size

    def project(self):
        d = self.taps - self.init
        e = self.epsilon
        self.taps = self.init + np.clip(d.real, -e, e) + 1j * np.clip(d.imag, -e, e)

    def box_ok(self, tol=0.0) -> bool:
        d = self.taps - self.init
        return bool(np.all(np.abs(d.real) <= self.epsilon + tol) and np.all(np.abs(d.imag) <= self.epsilon + tol))

    def forward(self, x):
        x2 = np.atleast_2d(x)
        return kernels.fir_filter(x2, np.broadcast_to(self.taps, (x2.shape[0], self.m)))


class FirNetModel:
    """Per-target banks of ``n_layers`` FIR layers with ``n_taps`` taps each."""

    def __init__(self, classes, n_taps: int = 10, epsilon: float = 1.0, n_layers: int = 1, targets=None):
        self.classes = list(classes)
        self.n_taps = int(n_taps)
        self.n_layers = int(n_layers)
        self.epsilon = float(epsilon)
        if self.n_layers < 1:
            raise ValueError("need at least one FIR layer")
        targets = range(len(self.classes)) if targets is None else [self.class_index(t) for t in targets]
        self.banks = {int(t): [FirLayer(self.n_taps, epsilon) for _ in range(self.n_layers)] for t in targets}
        if not self.banks:
            raise ValueError("FIRNet needs at least one target class")

    @property
    def targets(self):
        return sorted(self.banks)

    def class_index(self, c) -> int:
        if isinstance(c, (int, np.integer)):
            if not 0 <= int(c) < len(self.classes):
                raise ValueError(f"unknown target class {c}")
            return int(c)
        try:
            return self.classes.index(c)
        except ValueError:
            raise ValueError(f"unknown target class {c!r}") from None

    def bank(self, y):
        y = self.class_index(y)
        if y not in self.banks:
            raise ValueError(f"no FIR bank for target {self.classes[y]!r}")
        return self.banks[y]

    def get_params(self) -> np.ndarray:
        """Flat real vector [Re, Im] of every tap, banks in target order."""
        taps = np.concatenate([layer.taps for t in self.targets for layer in self.banks[t]])
        return np.concatenate([taps.real, taps.imag])

    def set_params(self, theta):
        n = theta.size // 2
        taps = theta[:n] + 1j * theta[n:]
        pos = 0
        for t in self.targets:
            for layer in self.banks[t]:
                layer.taps = taps[pos : pos + layer.m].copy()
                pos += layer.m

    def project(self):
        for t in self.targets:
            for layer in self.banks[t]:
                layer.project()

    def box_ok(self, tol=1e-12) -> bool:
        return all(layer.box_ok(tol) for t in self.targets for layer in self.banks[t])

    def param_slices(self):
        """Index ranges of each bank inside :meth:`get_params` (real and imaginary halves)."""
        per = self.n_taps * self.n_layers
        total = per * len(self.banks)
        out = {}
        for k, t in enumerate(self.targets):
            re = np.arange(k * per, (k + 1) * per)
            out[t] = np.concatenate([re, re + total])
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": ARTIFACT_VERSION,
            "classes": self.classes,
            "n_taps": self.n_taps,
            "n_layers": self.n_layers,
            "epsilon": self.epsilon,
            "init": _pairs(self.banks[self.targets[0]][0].init),
            "banks": {self.classes[t]: [_pairs(layer.taps) for layer in self.banks[t]] for t in self.targets},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FirNetModel":
        if d.get("format_version") != ARTIFACT_VERSION:
            raise SchemaError(f"unsupported FIRNet artifact version {d.get('format_version')}")
        try:
            net = cls(d["classes"], d["n_taps"], d["epsilon"], d["n_layers"], targets=list(d["banks"]))
            for name, layers in d["banks"].items():
                for layer, taps in zip(net.bank(name), layers):
                    layer.taps = _from_pairs(taps)
        except KeyError as exc:
            raise SchemaError(f"FIRNet artifact missing field {exc}") from None
        return net


def firnet_forward(net: FirNetModel, z, y) -> np.ndarray:
    """Apply the FIR layers of target ``y``'s bank in sequence."""
    x = np.asarray(z, dtype=np.complex128)
    out = dsp.as_waveform(x.ravel()).reshape(x.shape)
    out = np.atleast_2d(out)
    for layer in net.bank(y):
        out = layer.forward(out)
    return out[0] if x.ndim == 1 else out


def _forward_batch(net: FirNetModel, z, ys):
    out = np.empty_like(z)
    for t in np.unique(ys):
        rows = ys == t
        out[rows] = firnet_forward(net, z[rows], int(t))
    return out


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


@dataclass
class FeedbackOracle:
    """Blackbox access to a classifier through a simulated air interface.

    ``H``: adversary radio ``impairment`` (or none), flat gain/phase jitter,
    ``channel`` (taps, path loss, noise).  ``P``: optional RMS normalization.
    ``D``: the classifier.  Only outputs leave the oracle.
    """

    _model: object = field(repr=False)
    mode: str = SOFTMAX
    channel: dsp.ChannelModel = field(default_factory=dsp.ChannelModel.transparent)
    impairment: DeviceFingerprint | None = None
    jitter_gain_db: float = 0.0
    jitter_phase: float = 0.0
    normalize: bool = False
    queries: int = 0

    def __post_init__(self):
        if self.mode not in (SOFTMAX, ONEBIT):
            raise ValueError(f"oracle mode must be {SOFTMAX!r} or {ONEBIT!r}")

    @classmethod
    def simulated(cls, model, dataset: Dataset, mode=SOFTMAX, seed=0, transparent=False, **kw) -> "FeedbackOracle":
        """Oracle matching a fingerprint dataset's channel, with a random adversary radio."""
        if transparent:
            return cls(model, mode, **kw)
        base = dataset.info.get("base_waveform", {})
        snr = base.get("snr_db", 20.0)
        rng = np.random.default_rng(derive_seed(seed, 99))
        imp = DeviceFingerprint.random(-1, rng, base.get("impairment_scale", 1.0))
        return cls(
            model,
            mode,
            dsp.ChannelModel(noise_variance=10 ** (-snr / 10)),
            imp,
            base.get("jitter_gain_db", 0.0),
            base.get("jitter_phase", 0.0),
            **kw,
        )

    @property
    def classes(self):
        return list(self._model.classes)

    @property
    def n_classes(self) -> int:
        return self._model.n_classes

    @property
    def input_len(self) -> int:
        return self._model.input_len

    def _air(self, x, seed):
        """Forward air interface and the pieces its adjoint needs."""
        b, n = x.shape
        y = x
        if self.impairment is not None:
            y = self.impairment.apply(y)
        gains = np.ones(b, dtype=np.complex128)
        taps = np.empty((b, self.channel.taps.size), dtype=np.complex128)
        noise = np.empty((b, n), dtype=np.complex128)
        for i in range(b):
            rng = np.random.default_rng(derive_seed(seed, i))
            g = 10 ** (rng.uniform(-self.jitter_gain_db, self.jitter_gain_db) / 20) if self.jitter_gain_db else 1.0
            ph = rng.uniform(-self.jitter_phase, self.jitter_phase) if self.jitter_phase else 0.0
            gains[i] = g * np.exp(1j * ph)
            taps[i], noise[i] = self.channel.draw(derive_seed(seed, i, 1), n)
        pre = kernels.fir_filter(y * gains[:, None], taps) + noise
        if not self.normalize:
            return pre, (gains, taps, pre)
        rms = np.sqrt(np.mean(np.abs(pre) ** 2, axis=1, keepdims=True))
        return pre / np.maximum(rms, 1e-30), (gains, taps, pre)

    def _air_adjoint(self, g, cache):
        gains, taps, pre = cache
        n = pre.shape[1]
        if self.normalize:
            r = np.sqrt(np.sum(np.abs(pre) ** 2, axis=1, keepdims=True))
            inner = np.sum((np.conj(pre) * g).real, axis=1, keepdims=True)
            g = math.sqrt(n) * (g / r - pre * inner / r**3)
        g = kernels.fir_adjoint_input(g, taps) * np.conj(gains)[:, None]
        if self.impairment is not None:
            imp = self.impairment
            g = g * np.exp(-1j * imp.cfo * np.arange(n))
            mu, nu = imp.iq_coefficients
            g = np.conj(mu) * g + nu * np.conj(g)
            t = np.broadcast_to(imp.impairment_fir, (g.shape[0], imp.impairment_fir.size))
            g = kernels.fir_adjoint_input(g, t)
        return g

    def _check(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=np.complex128))
        if z.shape[1] != self.input_len:
            raise ValueError(f"oracle expects slices of {self.input_len} samples")
        return z

    def query(self, z, y, seed) -> np.ndarray:
        """Softmax rows (softmax mode) or 0/1 ACKs for ``argmax == y`` (onebit mode)."""
        z = self._check(z)
        self.queries += z.shape[0]
        p = self._model.probabilities(self._air(z, seed)[0])
        if self.mode == SOFTMAX:
            return p
        return (np.argmax(p, axis=1) == np.asarray(y)).astype(np.float64)

    def acks(self, z, y, seed) -> np.ndarray:
        """ACK per slice regardless of mode (used for fooling-rate evaluation)."""
        z = self._check(z)
        self.queries += z.shape[0]
        p = self._model.probabilities(self._air(z, seed)[0])
        return (np.argmax(p, axis=1) == np.asarray(y)).astype(np.float64)

    def per_slice_loss(self, z, y, seed) -> np.ndarray:
        out = self.query(z, y, seed)
        if self.mode == ONEBIT:
            return 1.0 - out
        y = np.asarray(y)
        return -np.log(np.maximum(out[np.arange(y.size), y], 1e-12))

    def loss_gradient(self, z, y, seed):
        """Graybox path: per-slice NLL and its gradient w.r.t. the oracle input."""
        z = self._check(z)
        y = np.asarray(y)
        self.queries += z.shape[0]
        zr, cache = self._air(z, seed)
        p = self._model.probabilities(zr)
        py = np.maximum(p[np.arange(y.size), y], 1e-12)
        w = np.zeros_like(p)
        w[np.arange(y.size), y] = -1.0 / py
        _, gz = self._model.weighted_input_gradient(zr, w)
        return -np.log(py), self._air_adjoint(gz, cache)


def firnet_loss(oracle: FeedbackOracle, batch, seed=0) -> float:
    """Mean target NLL (softmax mode) or miss fraction (M - A)/M (onebit mode).

    ``batch`` is ``(z, y)`` with z (B, N) already passed through the generator.
    """
    z, y = batch
    y = np.atleast_1d(np.asarray(y))
    if y.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(oracle.per_slice_loss(z, y, seed)))


def onebit_loss(acks) -> float:
    acks = np.asarray(acks)
    m = acks.size
    if m == 0:
        raise ValueError("no feedback")
    return float((m - acks.sum()) / m)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class FirNetTrainConfig:
    batch: int = 100
    epochs: int = 10
    steps_per_epoch: int = 20
    lr: float = 0.02
    seed: int = 0
    estimator: str = "spsa"
    spsa_c: float = 0.05
    eval_slices: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class FirNetResult:
    net: FirNetModel
    fooling_curve: list
    final_fooling: float
    per_target_fooling: dict
    collapsed: bool
    collapse_class: str | None
    prediction_histogram: dict
    queries: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = self.net.to_dict()
        d["training"] = {
            "fooling_curve": [float(v) for v in self.fooling_curve],
            "final_fooling": float(self.final_fooling),
            "per_target_fooling": self.per_target_fooling,
            "collapsed": self.collapsed,
            "collapse_class": self.collapse_class,
            "prediction_histogram": self.prediction_histogram,
            "queries": self.queries,
            "config": self.config,
        }
        return d


class PayloadSource:
    """Clean baseband payloads re-modulated from a dataset's stored bits."""

    def __init__(self, dataset: Dataset):
        if len(dataset) == 0:
            raise ValueError("empty payload source")
        self.n_i = dataset.n_i
        self.payloads = np.array([dsp.modulate(dataset.tx_bits(i), dataset.scheme_of(i)) for i in range(len(dataset))])
        if self.payloads.shape[1] != self.n_i:
            raise SchemaError("payload length differs from slice length")

    def sample(self, count, rng) -> np.ndarray:
        return self.payloads[rng.integers(0, len(self.payloads), count)]


def _assign_targets(count, targets):
    return np.asarray(targets)[np.arange(count) % len(targets)]


def fooling_rate(net, oracle: FeedbackOracle, payloads, targets, seed) -> tuple:
    """Fraction of generated slices classified as their target, per target and overall."""
    ys = _assign_targets(len(payloads), targets)
    z = _forward_batch(net, payloads, ys)
    q0 = oracle.queries
    p = oracle._model.probabilities(oracle._air(z, seed)[0])
    oracle.queries = q0 + len(payloads)
    pred = np.argmax(p, axis=1)
    hits = pred == ys
    per = {oracle.classes[t]: float(hits[ys == t].mean()) for t in targets}
    return float(hits.mean()), per, pred


def detect_collapse(predictions, classes, fraction=COLLAPSE_FRACTION):
    counts = np.bincount(np.asarray(predictions), minlength=len(classes))
    top = int(np.argmax(counts))
    hist = {classes[i]: int(c) for i, c in enumerate(counts)}
    collapsed = counts[top] >= fraction * counts.sum()
    return bool(collapsed), (classes[top] if collapsed else None), hist


def train_firnet(net: FirNetModel, oracle: FeedbackOracle, payloads: PayloadSource, targets=None,
                 hyper: FirNetTrainConfig | None = None) -> FirNetResult:  # fmt: skip
    """Minimize the oracle loss over the generator taps.  ``net`` is updated in place."""
    hyper = hyper or FirNetTrainConfig()
    targets = net.targets if targets is None else [net.class_index(t) for t in targets]
    if not targets:
        raise ValueError("no target classes")
    for t in targets:
        net.bank(t)
    if hyper.estimator not in ("spsa", "graybox"):
        raise ValueError("estimator must be 'spsa' or 'graybox'")
    if hyper.estimator == "graybox" and oracle.mode != SOFTMAX:
        raise ValueError("graybox gradients need softmax feedback")
    if payloads.n_i != oracle.input_len:
        raise SchemaError("payload length does not match the classifier input")

    rng = np.random.default_rng(hyper.seed)
    eval_rng = np.random.default_rng(derive_seed(hyper.seed, 1))
    eval_payloads = payloads.sample(hyper.eval_slices, eval_rng)
    eval_seed = derive_seed(hyper.seed, 2)
    slices_of = net.param_slices()
    theta = net.get_params()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    c = min(hyper.spsa_c, net.epsilon / 2) if net.epsilon > 0 else 0.0
    curve = [fooling_rate(net, oracle, eval_payloads, targets, eval_seed)[0]]
    step = 0
    for epoch in range(hyper.epochs):
        for _ in range(hyper.steps_per_epoch):
            if net.epsilon == 0:
                break
            x = payloads.sample(hyper.batch, rng)
            ys = _assign_targets(hyper.batch, targets)
            seed = derive_seed(hyper.seed, 3, step)
            grad = np.zeros_like(theta)
            if hyper.estimator == "graybox":
                grad = _graybox_grad(net, oracle, x, ys, seed, targets, slices_of)
            else:
                delta = rng.choice([-1.0, 1.0], size=theta.size)
                net.set_params(theta + c * delta)
                lp = oracle.per_slice_loss(_forward_batch(net, x, ys), ys, seed)
                net.set_params(theta - c * delta)
                lm = oracle.per_slice_loss(_forward_batch(net, x, ys), ys, seed)
                for t in targets:
                    rows = ys == t
                    idx = slices_of[t]
                    diff = (lp[rows].mean() - lm[rows].mean()) / (2 * c)
                    grad[idx] = diff * delta[idx]
            if not np.all(np.isfinite(grad)):
                raise NumericalError(f"non-finite FIRNet gradient at step {step}")
            step += 1
            m = hyper.beta1 * m + (1 - hyper.beta1) * grad
            v = hyper.beta2 * v + (1 - hyper.beta2) * grad * grad
            lr_t = hyper.lr * math.sqrt(1 - hyper.beta2**step) / (1 - hyper.beta1**step)
            theta = theta - lr_t * m / (np.sqrt(v) + hyper.adam_eps)
            net.set_params(theta)
            net.project()
            theta = net.get_params()
        net.set_params(theta)
        curve.append(fooling_rate(net, oracle, eval_payloads, targets, eval_seed)[0])
        log.info("firnet epoch %d fooling %.3f", epoch + 1, curve[-1])
    final, per, pred = fooling_rate(net, oracle, eval_payloads, targets, eval_seed)
    collapsed, cls, hist = detect_collapse(pred, oracle.classes)
    if collapsed:
        log.warning("FIRNet outputs collapsed onto class %s", cls)
    return FirNetResult(net, curve, final, per, collapsed, cls, hist, oracle.queries, asdict(hyper))


def _graybox_grad(net, oracle, x, ys, seed, targets, slices_of):
    """Exact gradient of the per-target mean NLL through a simulated oracle."""
    # forward through each bank, remembering layer inputs
    grad_taps = {}
    z = np.empty_like(x)
    inputs = {}
    for t in targets:
        rows = ys == t
        h = x[rows]
        ins = []
        for layer in net.bank(t):
            ins.append(h)
            h = layer.forward(h)
        inputs[t] = ins
        z[rows] = h
    _, gz = oracle.loss_gradient(z, ys, seed)
    theta_grad = np.zeros(net.get_params().size)
    for t in targets:
        rows = ys == t
        g = gz[rows] / rows.sum()
        layers = net.bank(t)
        tap_grads = []
        for layer, h in zip(reversed(layers), reversed(inputs[t])):
            taps = np.broadcast_to(layer.taps, (h.shape[0], layer.m))
            tap_grads.append(kernels.fir_adjoint_taps(h, g, layer.m).sum(axis=0))
            g = kernels.fir_adjoint_input(g, taps)
        tg = np.concatenate(list(reversed(tap_grads)))
        grad_taps[t] = tg
        idx = slices_of[t]
        theta_grad[idx] = np.concatenate([tg.real, tg.imag])
    return theta_grad


def save_firnet(result_or_net, path) -> Path:
    d = result_or_net.to_dict()
    path = Path(path)
    path.write_text(json.dumps(d, sort_keys=True, indent=1))
    return path


def load_firnet(path) -> FirNetModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    return FirNetModel.from_dict(d)


def replay_waveforms(dataset: Dataset, target) -> np.ndarray:
    """Recorded legitimate slices of ``target`` (what a replay adversary re-transmits)."""
    return dataset.of_class(target).iq
