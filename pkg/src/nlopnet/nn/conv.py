"""Convolution along arbitrary axes, executed through the md-function engine.

Cross-correlation convention (no kernel flip):

    y[.., co, p] = sum_{ci, q} w[co, ci, q] * x_pad[.., ci, p + q]

Weights have shape ``(out_channels, in_channels, *kernel)``.  The transposed
variant is the exact adjoint of the forward map for the same weights.
"""

from __future__ import annotations

import numpy as np

from .. import mdarray
from ..autodiff.nlop import AtomicNlop

PADDINGS = ("same", "valid")
METHODS = ("auto", "md", "fft")
# kernels with more taps than this use the FFT path under method="auto"
FFT_MIN_TAPS = 25


def _el_strides(a):
    return [s // a.itemsize for s in a.strides]


def _domain(y_shape, ch, cin, kernel):
    return list(y_shape) + [cin] + list(kernel)


def correlate(x, w, axes, ch):
    """Valid cross-correlation of ``x`` with ``w`` (one ``md_fmac2`` call)."""
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=np.result_type(x.dtype, w.dtype))
    x = x.astype(w.dtype, copy=False)
    cout, cin = w.shape[:2]
    kernel = w.shape[2:]
    y_shape = list(x.shape)
    y_shape[ch] = cout
    for a, k in zip(axes, kernel):
        y_shape[a] = x.shape[a] - k + 1
    y = np.zeros(y_shape, dtype=w.dtype)
    n = x.ndim
    sx, sw, sy = _el_strides(x), _el_strides(w), _el_strides(y)
    dims = _domain(y_shape, ch, cin, kernel)
    s_y = sy + [0] * (1 + len(kernel))
    s_x = [0 if d == ch else sx[d] for d in range(n)] + [sx[ch]] + [sx[a] for a in axes]
    s_w = [sw[0] if d == ch else 0 for d in range(n)] + [sw[1]] + sw[2:]
    mdarray.md_fmac2(dims, mdarray.MdArray.from_numpy(y), s_y, mdarray.MdArray.from_numpy(x), s_x,
                     mdarray.MdArray.from_numpy(w), s_w)
    return y


def weight_grad(cot, x_pad, kernel, axes, ch):
    """``dw[co, ci, q] = sum_p cot[.., co, p] * conj(x_pad[.., ci, p + q])``."""
    cot = np.ascontiguousarray(cot)
    x_pad = np.ascontiguousarray(x_pad, dtype=np.result_type(cot.dtype, x_pad.dtype))
    cot = cot.astype(x_pad.dtype, copy=False)
    cout, cin = cot.shape[ch], x_pad.shape[ch]
    dw = np.zeros((cout, cin) + tuple(kernel), dtype=x_pad.dtype)
    n = cot.ndim
    sg, sx, sw = _el_strides(cot), _el_strides(x_pad), _el_strides(dw)
    dims = _domain(cot.shape, ch, cin, kernel)
    s_w = [sw[0] if d == ch else 0 for d in range(n)] + [sw[1]] + sw[2:]
    s_g = sg + [0] * (1 + len(kernel))
    s_x = [0 if d == ch else sx[d] for d in range(n)] + [sx[ch]] + [sx[a] for a in axes]
    mdarray.md_zfmacc2(dims, mdarray.MdArray.from_numpy(dw), s_w, mdarray.MdArray.from_numpy(cot), s_g,
                       mdarray.MdArray.from_numpy(x_pad), s_x)
    return dw


def _to_front(a, axes, ch):
    """Reorder to ``(*axes, ch, rest)`` and flatten ``rest``; returns the undo info."""
    rest = [d for d in range(a.ndim) if d not in axes and d != ch]
    perm = list(axes) + [ch] + rest
    t = np.transpose(a, perm)
    return t.reshape(t.shape[:len(axes) + 1] + (-1,)), perm, [a.shape[d] for d in rest]


def _from_front(t, perm, rest_shape):
    t = t.reshape(t.shape[:-1] + tuple(rest_shape))
    return np.transpose(t, np.argsort(perm))


def fft_correlate(x, w, axes, ch):
    """Same result as :func:`correlate`, computed with FFTs over the padded grid."""
    dt = np.result_type(x.dtype, w.dtype)
    n = [x.shape[a] for a in axes]
    k = w.shape[2:]
    nax = len(axes)
    xf, perm, rest = _to_front(x.astype(dt, copy=False), axes, ch)
    fax = tuple(range(nax))
    X = np.fft.fftn(xf, s=n, axes=fax)
    wf = w[(slice(None), slice(None)) + (slice(None, None, -1),) * nax]
    W = np.fft.fftn(np.moveaxis(wf, (0, 1), (nax, nax + 1)), s=n, axes=fax)
    y = np.fft.ifftn(W @ X, axes=fax)
    y = y[tuple(slice(kk - 1, None) for kk in k)]
    return _from_front(y, perm, rest).astype(dt, copy=False)


def fft_weight_grad(cot, x_pad, kernel, axes, ch):
    """Same result as :func:`weight_grad`, computed with FFTs."""
    dt = np.result_type(cot.dtype, x_pad.dtype)
    n = [x_pad.shape[a] for a in axes]
    nax = len(axes)
    fax = tuple(range(nax))
    gf, _, _ = _to_front(cot.astype(dt, copy=False), axes, ch)
    xf, _, _ = _to_front(x_pad.astype(dt, copy=False), axes, ch)
    G = np.fft.fftn(gf, s=n, axes=fax)
    X = np.fft.fftn(xf, s=n, axes=fax)
    # sum over the flattened rest axis: (.., co, r) x (.., ci, r)^H
    D = G @ np.conj(np.swapaxes(X, -1, -2))
    dw = np.fft.fftn(D, axes=fax) / np.prod(n)
    dw = dw[tuple(slice(0, kk) for kk in kernel)]
    return np.moveaxis(dw, (nax, nax + 1), (0, 1)).astype(dt, copy=False)


def _flip_transpose(w, axes_count):
    """Kernel of the adjoint: swap channel roles, flip taps, conjugate."""
    wt = np.swapaxes(w, 0, 1)
    wt = wt[(slice(None), slice(None)) + (slice(None, None, -1),) * axes_count]
    return np.conj(wt)


class ConvGeometry:
    """Shapes, padding and the execution path of one convolution.

    ``method="md"`` runs through the md-function engine; ``"fft"`` uses FFTs
    on the padded grid; ``"auto"`` picks FFTs for kernels with more than
    ``FFT_MIN_TAPS`` taps.
    """

    def __init__(self, in_shape, out_channels, kernel, axes=(0, 1), channel_axis=2, padding="same",
                 method="auto"):
        if padding not in PADDINGS:
            raise ValueError(f"padding must be one of {PADDINGS}")
        if method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        self.in_shape = tuple(int(d) for d in in_shape)
        self.axes = tuple(int(a) for a in axes)
        self.ch = int(channel_axis)
        self.kernel = tuple(int(k) for k in kernel)
        if len(self.kernel) != len(self.axes):
            raise ValueError("kernel and conv axes differ in length")
        if self.ch in self.axes:
            raise ValueError("channel axis cannot be a convolution axis")
        self.padding = padding
        self.cin = self.in_shape[self.ch]
        self.cout = int(out_channels)
        self.pad = []
        for a, k in zip(self.axes, self.kernel):
            lo = (k - 1) // 2 if padding == "same" else 0
            hi = (k - 1 - lo) if padding == "same" else 0
            if self.in_shape[a] + lo + hi < k:
                raise ValueError(f"kernel {k} larger than padded input {self.in_shape[a] + lo + hi} on axis {a}")
            self.pad.append((lo, hi))
        out = list(self.in_shape)
        out[self.ch] = self.cout
        for (lo, hi), a, k in zip(self.pad, self.axes, self.kernel):
            out[a] = self.in_shape[a] + lo + hi - k + 1
        self.out_shape = tuple(out)
        self.weight_shape = (self.cout, self.cin) + self.kernel
        if method == "auto":
            method = "fft" if int(np.prod(self.kernel)) > FFT_MIN_TAPS else "md"
        self.method = method
        self._corr = fft_correlate if method == "fft" else correlate
        self._wgrad = fft_weight_grad if method == "fft" else weight_grad

    def _pad_width(self, pads):
        pw = [(0, 0)] * len(self.in_shape)
        for (lo, hi), a in zip(pads, self.axes):
            pw[a] = (lo, hi)
        return pw

    def pad_input(self, x):
        if all(p == (0, 0) for p in self.pad):
            return x
        return np.pad(x, self._pad_width(self.pad))

    def correlate(self, x_pad, w):
        return self._corr(x_pad, w, self.axes, self.ch)

    def forward(self, x, w):
        return self.correlate(self.pad_input(x), w)

    def adjoint_input(self, y, w):
        full = [(k - 1, k - 1) for k in self.kernel]
        xp = self.correlate(np.pad(y, self._pad_width(full)), _flip_transpose(w, len(self.axes)))
        sl = [slice(None)] * xp.ndim
        for (lo, hi), a in zip(self.pad, self.axes):
            sl[a] = slice(lo, xp.shape[a] - hi)
        return xp[tuple(sl)]

    def adjoint_weight(self, cot, x_pad):
        return self._wgrad(cot, x_pad, self.kernel, self.axes, self.ch)


class Conv(AtomicNlop):
    """``y = K_w x`` with inputs ``(x, w)``; bilinear and holomorphic."""

    holomorphic = True

    def __init__(self, geom: ConvGeometry):
        super().__init__([geom.in_shape, geom.weight_shape], [geom.out_shape], name="conv")
        self.geom = geom

    def _forward(self, st, x, w):
        st.xp = self.geom.pad_input(x)
        st.w = w
        return self.geom.correlate(st.xp, w)

    def _deriv(self, st, o, i, dx):
        if i == 0:
            return self.geom.forward(dx, st.w)
        return self.geom.correlate(st.xp, dx)

    def _adjoint(self, st, o, i, dy):
        if i == 0:
            return self.geom.adjoint_input(dy, st.w)
        return self.geom.adjoint_weight(dy, st.xp)


class ConvTransposed(AtomicNlop):
    """``y = K_w^H x``: the adjoint of :class:`Conv` for the same weights.

    Conjugate-linear in ``w``, so not holomorphic.
    """

    def __init__(self, geom: ConvGeometry):
        super().__init__([geom.out_shape, geom.weight_shape], [geom.in_shape], name="conv_transposed")
        self.geom = geom

    def _forward(self, st, x, w):
        st.x, st.w = x, w
        return self.geom.adjoint_input(x, w)

    def _deriv(self, st, o, i, dx):
        if i == 0:
            return self.geom.adjoint_input(dx, st.w)
        return self.geom.adjoint_input(st.x, dx)

    def _adjoint(self, st, o, i, dy):
        if i == 0:
            return self.geom.forward(dy, st.w)
        return self.geom.adjoint_weight(st.x, self.geom.pad_input(dy))
