"""
Complex baseband primitives.

Waveforms are plain 1-D ``complex128`` numpy arrays; :func:`as_waveform`
validates and normalizes anything array-like into one.  Channels, FIR
filters and modulation schemes are small dataclasses.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from . import kernels
from .errors import SchemaError

__all__ = [
    "as_waveform",
    "FirFilter",
    "ChannelModel",
    "channel_regime",
    "rayleigh_taps",
    "convolve_fir",
    "apply_channel",
    "superimpose",
    "energy",
    "ModulationScheme",
    "get_scheme",
    "SCHEME_NAMES",
    "modulate",
    "demodulate",
    "symbol_estimates",
    "symbol_estimates_adjoint",
    "bits_to_symbols",
    "measure_ber",
    "theoretical_ber",
    "evm_threshold",
    "write_iqf",
    "read_iqf",
]


def as_waveform(x, *, allow_empty=False) -> np.ndarray:
    """Return ``x`` as a finite 1-D complex128 array."""
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError(f"waveform must be 1-D, got shape {arr.shape}")
    if arr.size == 0 and not allow_empty:
        raise ValueError("empty waveform")
    arr = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError("waveform contains NaN or Inf samples")
    return arr


# ---------------------------------------------------------------------------
# filters and channels
# ---------------------------------------------------------------------------


@dataclass
class FirFilter:
    """Complex FIR taps ``phi_0 .. phi_{M-1}``."""

    taps: np.ndarray

    def __post_init__(self):
        self.taps = as_waveform(self.taps)

    @classmethod
    def identity(cls, m: int = 1) -> "FirFilter":
        taps = np.zeros(m, dtype=np.complex128)
        taps[0] = 1.0
        return cls(taps)

    def __len__(self):
        return self.taps.size


def _taps_of(f) -> np.ndarray:
    return f.taps if isinstance(f, FirFilter) else as_waveform(f)


def convolve_fir(x, f) -> np.ndarray:
    """Causal, same-length convolution ``y[n] = sum_m phi_m x[n - m]``."""
    x = as_waveform(x)
    taps = _taps_of(f)
    return kernels.fir_filter(x[None, :], taps[None, :])[0]


def rayleigh_taps(k: int, decay_db: float, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. complex Gaussian taps with an exponential power-delay profile.

    Tap powers fall by ``decay_db`` per tap and sum to one.
    """
    powers = 10.0 ** (-decay_db * np.arange(k) / 10.0)
    powers /= powers.sum()
    g = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    return g * np.sqrt(powers / 2.0)


@dataclass
class ChannelModel:
    """Tapped-delay channel ``z = 10^(-PL/20) * (h * x) + w``.

    ``noise_variance`` is per complex sample.  When ``time_varying`` is set
    the taps are redrawn (Rayleigh, same length, exponential profile) from
    the seed on every application; otherwise ``taps`` are used as given.
    """

    taps: np.ndarray = field(default_factory=lambda: np.ones(1, dtype=np.complex128))
    noise_variance: float = 0.0
    path_loss_db: float = 0.0
    time_varying: bool = False
    decay_db: float = 3.0

    def __post_init__(self):
        self.taps = as_waveform(self.taps)
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")
        if self.path_loss_db < 0:
            raise ValueError("path_loss_db must be >= 0")

    @property
    def gain(self) -> float:
        return 10.0 ** (-self.path_loss_db / 20.0)

    @property
    def is_transparent(self) -> bool:
        return (
            not self.time_varying
            and self.noise_variance == 0
            and self.path_loss_db == 0
            and self.taps.size == 1
            and self.taps[0] == 1
        )

    @classmethod
    def transparent(cls) -> "ChannelModel":
        return cls()

    @classmethod
    def rayleigh(cls, k=4, noise_variance=0.0, path_loss_db=0.0, decay_db=3.0) -> "ChannelModel":
        return cls(
            taps=np.ones(k, dtype=np.complex128),
            noise_variance=noise_variance,
            path_loss_db=path_loss_db,
            time_varying=True,
            decay_db=decay_db,
        )

    def draw(self, seed, n: int):
        """Sample one realization: (effective taps incl. path loss, noise of length n)."""
        rng = np.random.default_rng(seed)
        if self.time_varying:
            taps = rayleigh_taps(self.taps.size, self.decay_db, rng)
        else:
            taps = self.taps.copy()
        noise = np.zeros(n, dtype=np.complex128)
        if self.noise_variance > 0:
            noise = math.sqrt(self.noise_variance / 2.0) * (
                rng.standard_normal(n) + 1j * rng.standard_normal(n)
            )
        return taps * self.gain, noise

    def to_dict(self) -> dict:
        return {
            "taps": [[float(t.real), float(t.imag)] for t in self.taps],
            "noise_variance": float(self.noise_variance),
            "path_loss_db": float(self.path_loss_db),
            "time_varying": bool(self.time_varying),
            "decay_db": float(self.decay_db),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelModel":
        taps = np.array([complex(re, im) for re, im in d["taps"]])
        return cls(taps, d["noise_variance"], d["path_loss_db"], d["time_varying"], d.get("decay_db", 3.0))


FADING_REGIMES = ("none", "high", "low")


def channel_regime(name: str, *, noise_variance: float = 0.01, k: int = 4) -> ChannelModel:
    """Adversary channel for a named regime.

    ``none`` is a transparent noiseless link; ``high`` / ``low`` are
    time-varying Rayleigh channels with 0 dB / 20 dB path loss.
    """
    if name == "none":
        return ChannelModel.transparent()
    if name == "high":
        return ChannelModel.rayleigh(k=k, noise_variance=noise_variance, path_loss_db=0.0)
    if name == "low":
        return ChannelModel.rayleigh(k=k, noise_variance=noise_variance, path_loss_db=20.0)
    raise ValueError(f"unknown fading regime {name!r}; expected one of {FADING_REGIMES}")


def apply_channel(x, ch: ChannelModel, rng_seed) -> np.ndarray:
    x = as_waveform(x)
    taps, noise = ch.draw(rng_seed, x.size)
    return kernels.fir_filter(x[None, :], taps[None, :])[0] + noise


def superimpose(a, b, offset: int = 0, tile: bool = False) -> np.ndarray:
    """Add ``b`` onto ``a`` starting at ``offset``.

    With ``tile`` the sequence ``b`` repeats cyclically (phase ``offset``)
    over all of ``a``; otherwise it is added once and truncated.
    """
    a = as_waveform(a)
    b = as_waveform(b)
    offset = int(offset)
    if offset < 0 or offset >= a.size:
        raise ValueError(f"offset {offset} outside [0, {a.size})")
    if tile:
        return a + kernels.tile(b, np.array([offset]), a.size)[0]
    out = a.copy()
    n = min(b.size, a.size - offset)
    out[offset : offset + n] += b[:n]
    return out


def energy(x) -> float:
    x = as_waveform(x, allow_empty=True)
    return float(np.vdot(x, x).real)


# ---------------------------------------------------------------------------
# modulation
# ---------------------------------------------------------------------------


def _gray(n):
    return n ^ (n >> 1)


def _pam_gray_levels(bits):
    m = 1 << bits
    levels = np.empty(m)
    for i in range(m):
        levels[_gray(i)] = 2 * i - (m - 1)
    return levels


def _qam_constellation(bits_per_axis):
    levels = _pam_gray_levels(bits_per_axis)
    m = levels.size
    pts = np.array([levels[i] + 1j * levels[q] for i in range(m) for q in range(m)])
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


def _psk_constellation(m):
    pts = np.empty(m, dtype=np.complex128)
    for i in range(m):
        pts[_gray(i)] = np.exp(2j * np.pi * i / m)
    return pts


_CONSTELLATIONS = {
    "BPSK": (1, lambda: np.array([1.0 + 0j, -1.0 + 0j])),
    "QPSK": (2, lambda: np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)),
    "PSK8": (3, lambda: _psk_constellation(8)),
    "QAM16": (4, lambda: _qam_constellation(2)),
    "QAM64": (6, lambda: _qam_constellation(3)),
    "OOK": (1, lambda: np.array([0.0 + 0j, np.sqrt(2) + 0j])),
    "GFSK": (1, None),
}

SCHEME_NAMES = tuple(_CONSTELLATIONS)


@dataclass(frozen=True)
class ModulationScheme:
    name: str
    samples_per_symbol: int = 8
    pulse: str = "rect"
    rolloff: float = 0.35
    span: int = 8

    def __post_init__(self):
        if self.name not in _CONSTELLATIONS:
            raise ValueError(f"unknown scheme {self.name!r}")
        if self.samples_per_symbol < 1:
            raise ValueError("samples_per_symbol must be >= 1")
        if self.pulse not in ("rect", "rrc"):
            raise ValueError(f"unknown pulse shape {self.pulse!r}")
        if self.pulse == "rrc" and not (0 < self.rolloff <= 1):
            raise ValueError("rolloff must be in (0, 1]")

    @property
    def bits_per_symbol(self) -> int:
        return _CONSTELLATIONS[self.name][0]

    @property
    def is_linear(self) -> bool:
        return self.name != "GFSK"

    @property
    def constellation(self) -> np.ndarray:
        if not self.is_linear:
            raise ValueError("GFSK has no constellation")
        return _constellation(self.name)

    def to_dict(self):
        return {
            "name": self.name,
            "samples_per_symbol": self.samples_per_symbol,
            "pulse": self.pulse,
            "rolloff": self.rolloff,
            "span": self.span,
        }


@lru_cache(maxsize=None)
def _constellation(name):
    pts = _CONSTELLATIONS[name][1]()
    pts.setflags(write=False)
    return pts


def get_scheme(name: str, sps: int = 8, pulse: str = "rect", rolloff: float = 0.35) -> ModulationScheme:
    name = name.upper().replace("-", "").replace("_", "")
    aliases = {"8PSK": "PSK8", "16QAM": "QAM16", "64QAM": "QAM64", "GFSKAPPROX": "GFSK"}
    return ModulationScheme(aliases.get(name, name), sps, pulse, rolloff)


def rrc_pulse(sps: int, rolloff: float, span: int) -> np.ndarray:
    t = np.arange(-span * sps // 2, span * sps // 2 + 1) / sps
    p = np.empty_like(t)
    a = rolloff
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            p[i] = 1.0 - a + 4 * a / np.pi
        elif abs(abs(ti) - 1.0 / (4 * a)) < 1e-9:
            p[i] = (a / np.sqrt(2)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * a)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * a))
            )
        else:
            p[i] = (np.sin(np.pi * ti * (1 - a)) + 4 * a * ti * np.cos(np.pi * ti * (1 + a))) / (
                np.pi * ti * (1 - (4 * a * ti) ** 2)
            )
    return p / np.sqrt(np.sum(p**2))


@lru_cache(maxsize=None)
def _pulse(scheme: ModulationScheme):
    """Unit-energy pulse and the index of its decision instant."""
    sps = scheme.samples_per_symbol
    if scheme.pulse == "rect":
        p = np.full(sps, 1.0 / np.sqrt(sps))
        return p, 0
    p = rrc_pulse(sps, scheme.rolloff, scheme.span)
    return p, p.size // 2


def symbol_estimates(z, scheme: ModulationScheme) -> np.ndarray:
    """Matched-filter outputs at the symbol instants (unit gain on the constellation).

    Pulse shaping is circular over the waveform so edge symbols see the
    full pulse.  ``z`` may be 1-D or (B, N); each row yields ``N // sps``
    symbols.
    """
    z = np.asarray(z, dtype=np.complex128)
    squeeze = z.ndim == 1
    z2 = np.atleast_2d(z)
    n = z2.shape[1]
    sps = scheme.samples_per_symbol
    p, c = _pulse(scheme)
    base = np.arange(n // sps) * sps - c
    out = np.zeros((z2.shape[0], n // sps), dtype=np.complex128)
    for j in range(p.size):
        out += p[j] * z2[:, (base + j) % n]
    out /= np.sqrt(sps)
    return out[0] if squeeze else out


def symbol_estimates_adjoint(g, scheme: ModulationScheme, n: int) -> np.ndarray:
    """Adjoint of :func:`symbol_estimates` (maps symbol-domain gradients to samples)."""
    g = np.asarray(g, dtype=np.complex128)
    squeeze = g.ndim == 1
    g2 = np.atleast_2d(g)
    sps = scheme.samples_per_symbol
    p, c = _pulse(scheme)
    if g2.shape[1] * sps > n:
        raise ValueError(f"{g2.shape[1]} symbols do not fit in {n} samples")
    base = np.arange(g2.shape[1]) * sps - c
    out = np.zeros((g2.shape[0], n), dtype=np.complex128)
    for j in range(p.size):
        out[:, (base + j) % n] += p[j] * g2
    out /= np.sqrt(sps)
    return out[0] if squeeze else out


def _check_bits(bits, scheme):
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if np.any(bits > 1):
        raise ValueError("bits must be 0/1")
    if bits.size % scheme.bits_per_symbol:
        raise ValueError(
            f"bit count {bits.size} not divisible by {scheme.bits_per_symbol} bits per symbol"
        )
    return bits


def _bits_to_index(bits, k):
    groups = bits.reshape(-1, k).astype(np.int64)
    weights = 1 << np.arange(k - 1, -1, -1)
    return groups @ weights


def _index_to_bits(idx, k):
    shifts = np.arange(k - 1, -1, -1)
    return ((idx[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def bits_to_symbols(bits, scheme: ModulationScheme) -> np.ndarray:
    bits = _check_bits(bits, scheme)
    return scheme.constellation[_bits_to_index(bits, scheme.bits_per_symbol)]


_GFSK_H = 0.5
_GFSK_BT = 0.5


@lru_cache(maxsize=None)
def _gfsk_pulse(sps):
    # rectangular frequency pulse smoothed by a Gaussian, area pi*h
    sigma = np.sqrt(np.log(2)) / (2 * np.pi * _GFSK_BT) * sps
    half = 3 * sps // 2
    t = np.arange(-half, half + sps)
    rect = np.zeros(t.size)
    rect[(t >= 0) & (t < sps)] = 1.0
    gauss = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    g = np.convolve(rect, gauss / gauss.sum(), mode="same")
    return g / g.sum() * np.pi * _GFSK_H, half


def _gfsk_modulate(bits, sps):
    a = 2.0 * bits - 1.0
    g, half = _gfsk_pulse(sps)
    n = a.size * sps
    imp = np.zeros(n)
    imp[0:n:sps] = a
    freq = np.convolve(imp, g)[half : half + n]
    return np.exp(1j * np.cumsum(freq))


def _gfsk_demodulate(z, sps):
    prev = np.concatenate([[1.0 + 0j], z[:-1]])
    d = np.angle(z * np.conj(prev))
    nsym = z.size // sps
    acc = d[: nsym * sps].reshape(nsym, sps).sum(axis=1)
    return (acc > 0).astype(np.uint8)


def modulate(bits, scheme: ModulationScheme) -> np.ndarray:
    """Bits (MSB first per symbol, Gray-mapped) to a unit-average-power waveform."""
    bits = _check_bits(bits, scheme)
    sps = scheme.samples_per_symbol
    if not scheme.is_linear:
        return _gfsk_modulate(bits, sps)
    syms = scheme.constellation[_bits_to_index(bits, scheme.bits_per_symbol)]
    return sps * symbol_estimates_adjoint(syms, scheme, syms.size * sps)


def demodulate(z, scheme: ModulationScheme) -> np.ndarray:
    """Minimum-distance decisions on the matched-filter outputs."""
    z = as_waveform(z)
    if not scheme.is_linear:
        return _gfsk_demodulate(z, scheme.samples_per_symbol)
    est = symbol_estimates(z, scheme)
    pts = scheme.constellation
    idx = np.argmin(np.abs(est[:, None] - pts[None, :]), axis=1)
    return _index_to_bits(idx, scheme.bits_per_symbol)


def measure_ber(tx_bits, z, scheme: ModulationScheme) -> float:
    tx = np.asarray(tx_bits, dtype=np.uint8).ravel()
    rx = demodulate(z, scheme)
    if rx.size != tx.size:
        raise ValueError(f"length mismatch: {tx.size} tx bits vs {rx.size} demodulated")
    return float(np.count_nonzero(rx != tx)) / tx.size


def _q(x):
    return stats.norm.sf(x)


def theoretical_ber(scheme: ModulationScheme, es_n0) -> np.ndarray:
    """Gray-coded AWGN bit error rate versus linear Es/N0 (exact for BPSK/QPSK/OOK)."""
    g = np.asarray(es_n0, dtype=float)
    name = scheme.name
    if name == "BPSK":
        return _q(np.sqrt(2 * g))
    if name in ("QPSK", "OOK"):
        return _q(np.sqrt(g))
    if name == "PSK8":
        return (2.0 / 3.0) * _q(np.sqrt(2 * g) * np.sin(np.pi / 8))
    if name == "QAM16":
        return 0.75 * _q(np.sqrt(g / 5.0))
    if name == "QAM64":
        return (7.0 / 12.0) * _q(np.sqrt(g / 21.0))
    raise ValueError(f"no closed-form BER for {name}")


@lru_cache(maxsize=None)
def evm_threshold(scheme: ModulationScheme, ber_max: float) -> float:
    """Mean squared symbol error at which AWGN would produce ``ber_max``.

    The solver's differentiable stand-in for the BER constraint compares the
    matched-filter EVM against this value.
    """
    if ber_max >= 0.5:
        return float("inf")
    if ber_max <= 0:
        return 0.0

    def f(log_v):
        ber = float(theoretical_ber(scheme, 1.0 / math.exp(log_v)))
        return math.log(max(ber, 1e-300)) - math.log(ber_max)

    return float(math.exp(optimize.brentq(f, math.log(1e-4), math.log(1e3), xtol=1e-12)))


# ---------------------------------------------------------------------------
# IQF1 waveform files
# ---------------------------------------------------------------------------

IQF_MAGIC = b"IQF1\x00\x00\x00\x00"
_IQF_HEADER = struct.Struct("<8sI")


def write_iqf(path, x, meta: dict | None = None) -> Path:
    """Write ``x`` as IQF1 (magic, u32 count, float32 I/Q pairs, little-endian).

    ``meta`` (scheme, sample_rate_tag, seed, label) goes to a ``<path>.json`` sidecar.
    """
    path = Path(path)
    x = as_waveform(x, allow_empty=True)
    inter = np.empty(2 * x.size, dtype="<f4")
    inter[0::2] = x.real
    inter[1::2] = x.imag
    with open(path, "wb") as fh:
        fh.write(_IQF_HEADER.pack(IQF_MAGIC, x.size))
        fh.write(inter.tobytes())
    if meta is not None:
        sidecar = path.with_name(path.name + ".json")
        sidecar.write_text(json.dumps(meta, sort_keys=True, indent=1))
    return path


def read_iqf(path):
    """Return ``(samples, meta)``; ``meta`` is None without a sidecar."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _IQF_HEADER.size:
        raise SchemaError(f"{path}: truncated IQF1 header")
    magic, count = _IQF_HEADER.unpack_from(raw)
    if magic != IQF_MAGIC:
        raise SchemaError(f"{path}: bad magic {magic!r}")
    body = raw[_IQF_HEADER.size :]
    if len(body) != 8 * count:
        raise SchemaError(f"{path}: expected {count} samples, found {len(body) // 8}")
    inter = np.frombuffer(body, dtype="<f4").astype(np.float64)
    x = inter[0::2] + 1j * inter[1::2]
    sidecar = path.with_name(path.name + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else None
    return x, meta
