"""
Labeled waveform datasets.

Two synthetic generators (modulation recognition, device fingerprinting),
stratified splitting, RadioML 2018.01A ingestion and a directory container::

    <dir>/manifest.json        classes, n_i, kind, seed, counts, fingerprints,
                               per-slice metadata (tx_bits base64-packed)
    <dir>/slices/000000.iqf    one IQF1 file per slice
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, kernels
from .errors import SchemaError

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1

RADIOML_CLASSES = (
    "OOK", "4ASK", "8ASK", "BPSK", "QPSK", "8PSK", "16PSK", "32PSK",
    "16APSK", "32APSK", "64APSK", "128APSK", "16QAM", "32QAM", "64QAM",
    "128QAM", "256QAM", "AM-SSB-WC", "AM-SSB-SC", "AM-DSB-WC", "AM-DSB-SC",
    "FM", "GMSK", "OQPSK",
)  # fmt: skip


def slice_rng(seed, index) -> np.random.Generator:
    """Independent stream for slice ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def derive_seed(*keys) -> int:
    """Stable 32-bit seed from a tuple of nonnegative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass
class Slice:
    iq: np.ndarray
    label: int
    meta: dict = field(default_factory=dict)


@dataclass
class DeviceFingerprint:
    """Synthetic radio impairments: 3-tap FIR, IQ imbalance, residual CFO.

    Applied as FIR, then ``mu*x + nu*conj(x)``, then a CFO rotation whose
    phase restarts at zero on every slice.
    """

    device_id: int
    impairment_fir: np.ndarray = field(default_factory=lambda: np.array([1, 0, 0], dtype=complex))
    gain_mismatch: float = 0.0
    phase_skew: float = 0.0
    cfo: float = 0.0

    def __post_init__(self):
        self.impairment_fir = np.asarray(self.impairment_fir, dtype=np.complex128)
        ident = np.zeros_like(self.impairment_fir)
        ident[0] = 1
        if np.max(np.abs(self.impairment_fir - ident)) > 0.2 + 1e-12:
            raise ValueError("impairment FIR deviates from identity by more than 0.2")
        if abs(self.gain_mismatch) > 0.1 or abs(self.phase_skew) > 0.1:
            raise ValueError("IQ imbalance outside +-0.1")
        if abs(self.cfo) > 1e-3:
            raise ValueError("cfo outside +-1e-3 rad/sample")

    @classmethod
    def identity(cls, device_id: int) -> "DeviceFingerprint":
        return cls(device_id)

    @classmethod
    def random(cls, device_id: int, rng: np.random.Generator, scale: float = 1.0) -> "DeviceFingerprint":
        scale = float(np.clip(scale, 0.0, 1.0))
        r = rng.uniform(0, 0.2 * scale, 3)
        dev = r * np.exp(2j * np.pi * rng.random(3))
        dev[0] *= 0.5
        return cls(
            device_id,
            np.array([1, 0, 0], dtype=complex) + dev,
            gain_mismatch=rng.uniform(-0.1, 0.1) * scale,
            phase_skew=rng.uniform(-0.1, 0.1) * scale,
            cfo=rng.uniform(-1e-3, 1e-3) * scale,
        )

    @property
    def iq_coefficients(self):
        a = (1 + self.gain_mismatch) * np.exp(-1j * self.phase_skew)
        b = (1 + self.gain_mismatch) * np.exp(1j * self.phase_skew)
        return (1 + a) / 2, (1 - b) / 2

    def apply(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.complex128))
        taps = np.broadcast_to(self.impairment_fir, (x.shape[0], self.impairment_fir.size))
        y = kernels.fir_filter(x, taps)
        mu, nu = self.iq_coefficients
        y = mu * y + nu * np.conj(y)
        y = y * np.exp(1j * self.cfo * np.arange(x.shape[1]))
        return y

    def to_dict(self) -> dict:
        return {
            "device_id": int(self.device_id),
            "impairment_fir": [[float(t.real), float(t.imag)] for t in self.impairment_fir],
            "gain_mismatch": float(self.gain_mismatch),
            "phase_skew": float(self.phase_skew),
            "cfo": float(self.cfo),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceFingerprint":
        return cls(
            d["device_id"],
            np.array([complex(a, b) for a, b in d["impairment_fir"]]),
            d["gain_mismatch"],
            d["phase_skew"],
            d["cfo"],
        )


class Dataset:
    """Slices stored as one (S, N_I) complex array plus labels and per-slice metadata.

    ``metas[i]`` holds ``snr_db``, ``seed``, ``scheme`` (modulation spec
    dict) and ``tx_bits`` (uint8 array) when known.
    """

    def __init__(self, iq, labels, classes, kind, metas=None, seed=None, fingerprints=None, info=None):
        self.iq = np.asarray(iq, dtype=np.complex128)
        if self.iq.ndim != 2:
            raise SchemaError("dataset iq must be (slices, n_i)")
        self.labels = np.asarray(labels, dtype=np.int64)
        self.classes = list(classes)
        self.kind = kind
        self.metas = list(metas) if metas is not None else [{} for _ in range(len(self.labels))]
        self.seed = seed
        self.fingerprints = list(fingerprints) if fingerprints else []
        self.info = dict(info or {})
        if self.labels.shape != (self.iq.shape[0],) or len(self.metas) != self.iq.shape[0]:
            raise SchemaError("iq, labels and metas disagree on slice count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.classes)):
            raise SchemaError("label outside class list")

    def __len__(self):
        return self.iq.shape[0]

    @property
    def n_i(self) -> int:
        return self.iq.shape[1]

    @property
    def counts(self) -> dict:
        c = np.bincount(self.labels, minlength=len(self.classes))
        return {name: int(k) for name, k in zip(self.classes, c)}

    @property
    def slices(self):
        return [Slice(self.iq[i], int(self.labels[i]), self.metas[i]) for i in range(len(self))]

    def class_index(self, c) -> int:
        if isinstance(c, (int, np.integer)):
            if not 0 <= int(c) < len(self.classes):
                raise ValueError(f"unknown class index {c}")
            return int(c)
        try:
            return self.classes.index(c)
        except ValueError:
            raise ValueError(f"unknown class {c!r}") from None

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.iq[idx],
            self.labels[idx],
            self.classes,
            self.kind,
            [self.metas[i] for i in idx],
            self.seed,
            self.fingerprints,
            self.info,
        )

    def of_class(self, c) -> "Dataset":
        return self.subset(np.flatnonzero(self.labels == self.class_index(c)))

    def scheme_of(self, i) -> dsp.ModulationScheme:
        spec = self.metas[i].get("scheme")
        if spec is None:
            raise SchemaError(f"slice {i} has no modulation metadata")
        return dsp.ModulationScheme(**spec)

    def tx_bits(self, i) -> np.ndarray:
        bits = self.metas[i].get("tx_bits")
        if bits is None:
            raise SchemaError(f"slice {i} has no tx_bits")
        return bits


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def _awgn(rng, n, snr_db):
    var = 10.0 ** (-snr_db / 10.0)
    return np.sqrt(var / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def gen_modulation_dataset(
    schemes=("BPSK", "QPSK", "PSK8", "QAM16"),
    snr_grid=(20.0,),
    slices_per_cell: int = 100,
    n_i: int = 1024,
    seed: int = 0,
    sps: int = 8,
    pulse: str = "rect",
) -> Dataset:
    """Balanced modulation set: random bits -> modulate (unit power) -> AWGN at per-sample SNR."""
    if not schemes:
        raise ValueError("schemes must be nonempty")
    if slices_per_cell < 1:
        raise ValueError("slices_per_cell must be >= 1")
    if n_i % sps:
        raise ValueError(f"n_i={n_i} not a multiple of samples_per_symbol={sps}")
    objs = [dsp.get_scheme(s, sps=sps, pulse=pulse) for s in schemes]
    n_sym = n_i // sps
    iq, labels, metas = [], [], []
    idx = 0
    for label, scheme in enumerate(objs):
        for snr in snr_grid:
            for _ in range(slices_per_cell):
                rng = slice_rng(seed, idx)
                bits = rng.integers(0, 2, n_sym * scheme.bits_per_symbol, dtype=np.uint8)
                x = dsp.modulate(bits, scheme) + _awgn(rng, n_i, snr)
                iq.append(x)
                labels.append(label)
                metas.append({"snr_db": float(snr), "seed": idx, "scheme": scheme.to_dict(), "tx_bits": bits})
                idx += 1
    info = {"snr_grid": [float(s) for s in snr_grid], "slices_per_cell": slices_per_cell, "sps": sps}
    return Dataset(np.array(iq), labels, [s.name for s in objs], "modulation", metas, seed, info=info)


@dataclass
class BaseWaveform:
    """Payload shared by every device in a fingerprint dataset."""

    scheme: str = "QPSK"
    sps: int = 1
    snr_db: float = 20.0
    jitter_gain_db: float = 0.5
    jitter_phase: float = 0.1
    impairment_scale: float = 1.0
    identical_devices: bool = False


def gen_fingerprint_dataset(
    num_devices: int = 5,
    base_waveform: BaseWaveform | dict | None = None,
    slices_per_device: int = 500,
    n_i: int = 288,
    seed: int = 0,
) -> Dataset:
    """Identical payload statistics per device; only the device fingerprint differs.

    Each slice: fresh random bits -> modulate -> device impairments -> flat
    gain/phase jitter -> AWGN.
    """
    if num_devices < 2:
        raise ValueError("num_devices must be >= 2")
    if slices_per_device < 1:
        raise ValueError("slices_per_device must be >= 1")
    base = base_waveform if isinstance(base_waveform, BaseWaveform) else BaseWaveform(**(base_waveform or {}))
    scheme = dsp.get_scheme(base.scheme, sps=base.sps)
    if n_i % scheme.samples_per_symbol:
        raise ValueError("n_i not a multiple of samples_per_symbol")
    dev_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2**31 - 1]))
    fps = [
        DeviceFingerprint.identity(d)
        if base.identical_devices
        else DeviceFingerprint.random(d, dev_rng, base.impairment_scale)
        for d in range(num_devices)
    ]
    n_sym = n_i // scheme.samples_per_symbol
    iq, labels, metas = [], [], []
    idx = 0
    for d, fp in enumerate(fps):
        for _ in range(slices_per_device):
            rng = slice_rng(seed, idx)
            bits = rng.integers(0, 2, n_sym * scheme.bits_per_symbol, dtype=np.uint8)
            x = fp.apply(dsp.modulate(bits, scheme))[0]
            g = 10 ** (rng.uniform(-base.jitter_gain_db, base.jitter_gain_db) / 20)
            ph = rng.uniform(-base.jitter_phase, base.jitter_phase)
            x = g * np.exp(1j * ph) * x + _awgn(rng, n_i, base.snr_db)
            iq.append(x)
            labels.append(d)
            metas.append({"snr_db": base.snr_db, "seed": idx, "scheme": scheme.to_dict(), "tx_bits": bits})
            idx += 1
    info = {"base_waveform": vars(base).copy(), "slices_per_device": slices_per_device}
    classes = [f"dev{d}" for d in range(num_devices)]
    return Dataset(np.array(iq), labels, classes, "fingerprint", metas, seed, fps, info)


def split(dataset: Dataset, fractions=(0.5, 0.5), seed: int = 0):
    """Disjoint stratified partition.  Part ``k`` of class ``c`` takes positions
    ``floor(F_{k-1} n_c) .. floor(F_k n_c)`` of a seeded permutation, F cumulative."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.ndim != 1 or fr.size < 1 or np.any(fr < 0) or fr.sum() > 1 + 1e-12:
        raise ValueError("fractions must be nonnegative and sum to <= 1")
    cum = np.concatenate([[0.0], np.cumsum(fr)])
    rng = np.random.default_rng(seed)
    parts = [[] for _ in fr]
    for c in range(len(dataset.classes)):
        members = np.flatnonzero(dataset.labels == c)
        perm = members[rng.permutation(members.size)]
        bounds = np.floor(cum * members.size + 1e-9).astype(int)
        for k in range(fr.size):
            parts[k].extend(perm[bounds[k] : bounds[k + 1]].tolist())
    out = []
    for k, p in enumerate(parts):
        if not p:
            raise ValueError(f"split part {k} (fraction {fr[k]}) is empty")
        out.append(dataset.subset(sorted(p)))
    return tuple(out)


# ---------------------------------------------------------------------------
# RadioML ingestion
# ---------------------------------------------------------------------------


def import_radioml(path, limit: int | None = None) -> Dataset:
    """Read a RadioML 2018.01A HDF5 file (X [N,1024,2], Y one-hot [N,24], Z SNR)."""
    import h5py

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        fh = h5py.File(path, "r")
    except OSError as exc:
        raise SchemaError(f"{path}: not a readable HDF5 file ({exc})") from None
    with fh:
        for key in ("X", "Y", "Z"):
            if key not in fh:
                raise SchemaError(f"{path}: missing dataset {key!r}")
        xs, ys, zs = fh["X"], fh["Y"], fh["Z"]
        n = xs.shape[0]
        if n == 0:
            raise SchemaError(f"{path}: no records")
        if xs.ndim != 3 or xs.shape[2] != 2:
            raise SchemaError(f"{path}: X must be [N, n_i, 2], got {xs.shape}")
        if ys.shape != (n, len(RADIOML_CLASSES)):
            raise SchemaError(f"{path}: Y must be [N, {len(RADIOML_CLASSES)}], got {ys.shape}")
        if zs.shape[0] != n:
            raise SchemaError(f"{path}: Z has {zs.shape[0]} rows, X has {n}")
        stop = n if limit is None else min(n, int(limit))
        x = np.asarray(xs[:stop], dtype=np.float64)
        y = np.asarray(ys[:stop])
        z = np.asarray(zs[:stop], dtype=np.float64).reshape(stop, -1)[:, 0]
    if not np.all(np.isfinite(x)):
        raise SchemaError(f"{path}: non-finite samples")
    hot = y.sum(axis=1)
    if not np.allclose(hot, 1):
        raise SchemaError(f"{path}: Y rows are not one-hot")
    labels = np.argmax(y, axis=1)
    metas = [{"snr_db": float(s), "seed": i} for i, s in enumerate(z)]
    return Dataset(x[..., 0] + 1j * x[..., 1], labels, RADIOML_CLASSES, "modulation", metas, None,
                   info={"source": path.name})


# ---------------------------------------------------------------------------
# directory container
# ---------------------------------------------------------------------------


def _pack_bits(bits):
    return {"n": int(bits.size), "b64": base64.b64encode(np.packbits(bits).tobytes()).decode("ascii")}


def _unpack_bits(d):
    raw = np.frombuffer(base64.b64decode(d["b64"]), dtype=np.uint8)
    return np.unpackbits(raw)[: d["n"]].astype(np.uint8)


def _meta_to_json(meta):
    out = {k: v for k, v in meta.items() if k != "tx_bits"}
    if meta.get("tx_bits") is not None:
        out["tx_bits"] = _pack_bits(np.asarray(meta["tx_bits"], dtype=np.uint8))
    return out


def _meta_from_json(meta):
    out = dict(meta)
    if "tx_bits" in out:
        out["tx_bits"] = _unpack_bits(out["tx_bits"])
    return out


def save_dataset(dataset: Dataset, directory) -> Path:
    directory = Path(directory)
    (directory / "slices").mkdir(parents=True, exist_ok=True)
    for i in range(len(dataset)):
        dsp.write_iqf(directory / "slices" / f"{i:06d}.iqf", dataset.iq[i])
    manifest = {
        "format_version": MANIFEST_VERSION,
        "kind": dataset.kind,
        "classes": dataset.classes,
        "n_i": dataset.n_i,
        "seed": dataset.seed,
        "counts": dataset.counts,
        "info": dataset.info,
        "fingerprints": [fp.to_dict() for fp in dataset.fingerprints],
        "slices": [
            {"file": f"slices/{i:06d}.iqf", "label": int(dataset.labels[i]), "meta": _meta_to_json(dataset.metas[i])}
            for i in range(len(dataset))
        ],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return directory


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(mpath)
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{mpath}: invalid JSON ({exc})") from None
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise SchemaError(f"{mpath}: unsupported manifest version {manifest.get('format_version')}")
    try:
        entries = manifest["slices"]
        n_i = int(manifest["n_i"])
        iq = np.empty((len(entries), n_i), dtype=np.complex128)
        for i, e in enumerate(entries):
            x, _ = dsp.read_iqf(directory / e["file"])
            if x.size != n_i:
                raise SchemaError(f"{e['file']}: {x.size} samples, manifest says {n_i}")
            iq[i] = x
        return Dataset(
            iq,
            [e["label"] for e in entries],
            manifest["classes"],
            manifest["kind"],
            [_meta_from_json(e["meta"]) for e in entries],
            manifest.get("seed"),
            [DeviceFingerprint.from_dict(d) for d in manifest.get("fingerprints", [])],
            manifest.get("info", {}),
        )
    except KeyError as exc:
        raise SchemaError(f"{mpath}: missing field {exc}") from None
