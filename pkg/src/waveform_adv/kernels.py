"""
Hot inner loops shared by the dsp, nn and attack code.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version.  The public names dispatch on :data:`waveform_adv._jit.JIT_ENABLED`
(``WAVEFORM_ADV_JIT=0`` selects numpy).  Both versions are kept importable
as ``NUMBA_KERNELS`` / ``NUMPY_KERNELS`` so tests and the benchmark can
compare them directly.

Complex gradients follow the packed convention ``dL/dRe + 1j * dL/dIm``.
For a holomorphic linear map ``y = A x`` this makes the vector-Jacobian
product ``A^H g``, which is what the ``*_adjoint_*`` kernels compute.
"""

import numpy as np

from ._jit import JIT_ENABLED, njit

__all__ = [
    "fir_filter",
    "fir_adjoint_input",
    "fir_adjoint_taps",
    "tile",
    "tile_accumulate",
    "im2col",
    "col2im",
    "maxpool_forward",
    "maxpool_backward",
    "NUMBA_KERNELS",
    "NUMPY_KERNELS",
]


# ---------------------------------------------------------------------------
# complex causal FIR, one tap vector per row
# ---------------------------------------------------------------------------


@njit(cache=True)
def _fir_filter_nb(x, taps):
    nb, n = x.shape
    k = taps.shape[1]
    y = np.zeros((nb, n), dtype=np.complex128)
    for b in range(nb):
        for i in range(n):
            acc = 0j
            top = min(k, i + 1)
            for m in range(top):
                acc += taps[b, m] * x[b, i - m]
            y[b, i] = acc
    return y


def _fir_filter_np(x, taps):
    nb, n = x.shape
    y = np.zeros((nb, n), dtype=np.complex128)
    for m in range(min(taps.shape[1], n)):
        y[:, m:] += taps[:, m : m + 1] * x[:, : n - m]
    return y


@njit(cache=True)
def _fir_adjoint_input_nb(g, taps):
    nb, n = g.shape
    k = taps.shape[1]
    out = np.zeros((nb, n), dtype=np.complex128)
    for b in range(nb):
        for i in range(n):
            acc = 0j
            top = min(k, n - i)
            for m in range(top):
                acc += np.conj(taps[b, m]) * g[b, i + m]
            out[b, i] = acc
    return out


def _fir_adjoint_input_np(g, taps):
    nb, n = g.shape
    out = np.zeros((nb, n), dtype=np.complex128)
    for m in range(min(taps.shape[1], n)):
        out[:, : n - m] += np.conj(taps[:, m : m + 1]) * g[:, m:]
    return out


@njit(cache=True)
def _fir_adjoint_taps_nb(x, g, k):
    nb, n = x.shape
    out = np.zeros((nb, k), dtype=np.complex128)
    for b in range(nb):
        for m in range(min(k, n)):
            acc = 0j
            for i in range(m, n):
                acc += np.conj(x[b, i - m]) * g[b, i]
            out[b, m] = acc
    return out


def _fir_adjoint_taps_np(x, g, k):
    nb, n = x.shape
    out = np.zeros((nb, k), dtype=np.complex128)
    for m in range(min(k, n)):
        out[:, m] = np.sum(np.conj(x[:, : n - m]) * g[:, m:], axis=1)
    return out


# ---------------------------------------------------------------------------
# cyclic tiling of a short sequence over a longer window
# ---------------------------------------------------------------------------


@njit(cache=True)
def _tile_nb(seq, offsets, n):
    nj = seq.shape[0]
    nb = offsets.shape[0]
    out = np.empty((nb, n), dtype=np.complex128)
    for b in range(nb):
        for i in range(n):
            out[b, i] = seq[(i - offsets[b]) % nj]
    return out


def _tile_np(seq, offsets, n):
    idx = (np.arange(n)[None, :] - offsets[:, None]) % seq.shape[0]
    return seq[idx]


@njit(cache=True)
def _tile_accumulate_nb(g, offsets, nj):
    nb, n = g.shape
    out = np.zeros((nb, nj), dtype=np.complex128)
    for b in range(nb):
        for i in range(n):
            out[b, (i - offsets[b]) % nj] += g[b, i]
    return out


def _tile_accumulate_np(g, offsets, nj):
    nb, n = g.shape
    idx = (np.arange(n)[None, :] - offsets[:, None]) % nj
    flat = (idx + nj * np.arange(nb)[:, None]).ravel()
    re = np.bincount(flat, weights=g.real.ravel(), minlength=nb * nj)
    im = np.bincount(flat, weights=g.imag.ravel(), minlength=nb * nj)
    return (re + 1j * im).reshape(nb, nj)


# ---------------------------------------------------------------------------
# conv1d lowering: (B, C, L) <-> (B, Lo, C*W)
# ---------------------------------------------------------------------------


def _im2col_np(x, width, stride):
    view = np.lib.stride_tricks.sliding_window_view(x, width, axis=2)[:, :, ::stride]
    nb, nc, lo, _ = view.shape
    return np.ascontiguousarray(view.transpose(0, 2, 1, 3)).reshape(nb, lo, nc * width)


@njit(cache=True)
def _col2im_nb(cols, nc, length, width, stride):
    nb, lo, _ = cols.shape
    x = np.zeros((nb, nc, length), dtype=cols.dtype)
    for b in range(nb):
        for i in range(lo):
            start = i * stride
            for c in range(nc):
                base = c * width
                for w in range(width):
                    x[b, c, start + w] += cols[b, i, base + w]
    return x


def _col2im_np(cols, nc, length, width, stride):
    nb, lo, _ = cols.shape
    blocks = cols.reshape(nb, lo, nc, width)
    x = np.zeros((nb, nc, length), dtype=cols.dtype)
    span = stride * (lo - 1) + 1
    for w in range(width):
        x[:, :, w : w + span : stride] += blocks[:, :, :, w].transpose(0, 2, 1)
    return x


# ---------------------------------------------------------------------------
# non-overlapping max pooling along the last axis
# ---------------------------------------------------------------------------


@njit(cache=True)
def _maxpool_forward_nb(x, size):
    nb, nc, length = x.shape
    lo = length // size
    out = np.empty((nb, nc, lo), dtype=x.dtype)
    arg = np.empty((nb, nc, lo), dtype=np.int64)
    for b in range(nb):
        for c in range(nc):
            for i in range(lo):
                base = i * size
                best = x[b, c, base]
                k = 0
                for j in range(1, size):
                    v = x[b, c, base + j]
                    if v > best:
                        best = v
                        k = j
                out[b, c, i] = best
                arg[b, c, i] = k
    return out, arg


def _maxpool_forward_np(x, size):
    nb, nc, length = x.shape
    lo = length // size
    blocks = x[:, :, : lo * size].reshape(nb, nc, lo, size)
    arg = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg.astype(np.int64)


@njit(cache=True)
def _maxpool_backward_nb(gout, arg, size, length):
    nb, nc, lo = gout.shape
    gx = np.zeros((nb, nc, length), dtype=gout.dtype)
    for b in range(nb):
        for c in range(nc):
            for i in range(lo):
                gx[b, c, i * size + arg[b, c, i]] += gout[b, c, i]
    return gx


def _maxpool_backward_np(gout, arg, size, length):
    nb, nc, lo = gout.shape
    blocks = np.zeros((nb, nc, lo, size), dtype=gout.dtype)
    np.put_along_axis(blocks, arg[..., None], gout[..., None], axis=-1)
    gx = np.zeros((nb, nc, length), dtype=gout.dtype)
    gx[:, :, : lo * size] = blocks.reshape(nb, nc, lo * size)
    return gx


NUMBA_KERNELS = {
    "fir_filter": _fir_filter_nb,
    "fir_adjoint_input": _fir_adjoint_input_nb,
    "fir_adjoint_taps": _fir_adjoint_taps_nb,
    "tile": _tile_nb,
    "tile_accumulate": _tile_accumulate_nb,
    # a strided numpy copy outruns the loop nest; both tables share it
    "im2col": _im2col_np,
    "col2im": _col2im_nb,
    "maxpool_forward": _maxpool_forward_nb,
    "maxpool_backward": _maxpool_backward_nb,
}

NUMPY_KERNELS = {
    "fir_filter": _fir_filter_np,
    "fir_adjoint_input": _fir_adjoint_input_np,
    "fir_adjoint_taps": _fir_adjoint_taps_np,
    "tile": _tile_np,
    "tile_accumulate": _tile_accumulate_np,
    "im2col": _im2col_np,
    "col2im": _col2im_np,
    "maxpool_forward": _maxpool_forward_np,
    "maxpool_backward": _maxpool_backward_np,
}

_ACTIVE = NUMBA_KERNELS if JIT_ENABLED else NUMPY_KERNELS


def _c2(a):
    return np.ascontiguousarray(a, dtype=np.complex128)


def fir_filter(x, taps):
    """Causal same-length FIR: ``y[b, n] = sum_m taps[b, m] * x[b, n - m]``.

    ``x`` is (B, N) complex, ``taps`` is (B, K) complex (one filter per row).
    """
    return _ACTIVE["fir_filter"](_c2(x), _c2(taps))


def fir_adjoint_input(g, taps):
    """Vector-Jacobian product of :func:`fir_filter` with respect to ``x``."""
    return _ACTIVE["fir_adjoint_input"](_c2(g), _c2(taps))


def fir_adjoint_taps(x, g, k):
    """Vector-Jacobian product of :func:`fir_filter` with respect to the taps."""
    return _ACTIVE["fir_adjoint_taps"](_c2(x), _c2(g), int(k))


def tile(seq, offsets, n):
    """Repeat ``seq`` cyclically over ``n`` samples, row ``b`` starting at ``offsets[b]``."""
    return _ACTIVE["tile"](_c2(seq), np.ascontiguousarray(offsets, dtype=np.int64), int(n))


def tile_accumulate(g, offsets, nj):
    """Adjoint of :func:`tile`: fold each row of ``g`` back onto ``nj`` positions."""
    return _ACTIVE["tile_accumulate"](_c2(g), np.ascontiguousarray(offsets, dtype=np.int64), int(nj))


def im2col(x, width, stride):
    return _ACTIVE["im2col"](np.ascontiguousarray(x, dtype=np.float64), int(width), int(stride))


def col2im(cols, nc, length, width, stride):
    return _ACTIVE["col2im"](
        np.ascontiguousarray(cols, dtype=np.float64), int(nc), int(length), int(width), int(stride)
    )


def maxpool_forward(x, size):
    return _ACTIVE["maxpool_forward"](np.ascontiguousarray(x, dtype=np.float64), int(size))


def maxpool_backward(gout, arg, size, length):
    return _ACTIVE["maxpool_backward"](
        np.ascontiguousarray(gout, dtype=np.float64),
        np.ascontiguousarray(arg, dtype=np.int64),
        int(size),
        int(length),
    )
