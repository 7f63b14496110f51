"""Complex-valued layer operators."""

from __future__ import annotations

import numpy as np

from .. import mdarray
from ..autodiff.linop import sum_to_shape
from ..autodiff.nlop import AtomicNlop

TRAIN = "train"
INFER = "infer"


def _el(a):
    return [s // a.itemsize for s in a.strides]


def _md(a):
    return mdarray.MdArray.from_numpy(a)


class Dense(AtomicNlop):
    """``y = W x + b`` on ``(features, batch)`` arrays; inputs ``(x, W, b)``."""

    holomorphic = True

    def __init__(self, in_features, out_features, batch):
        if in_features < 1 or out_features < 1:
            raise ValueError("feature counts must be positive")
        super().__init__([(in_features, batch), (out_features, in_features), (out_features, 1)],
                         [(out_features, batch)], name="dense")

    @staticmethod
    def _matvec(w, x, conj_w=False):
        # y[o, b] += W[o, i] x[i, b] over the domain (o, i, b)
        w = np.ascontiguousarray(w)
        x = np.ascontiguousarray(x, dtype=np.result_type(w.dtype, x.dtype))
        w = w.astype(x.dtype, copy=False)
        if conj_w:
            # adjoint: dx[i, b] += g[o, b] conj(W[o, i]); x plays g here
            y = np.zeros((w.shape[1], x.shape[1]), dtype=x.dtype)
            sw, sx, sy = _el(w), _el(x), _el(y)
            dims = [w.shape[1], w.shape[0], x.shape[1]]
            mdarray.md_zfmacc2(dims, _md(y), [sy[0], 0, sy[1]], _md(x), [0, sx[0], sx[1]], _md(w), [sw[1], sw[0], 0])
            return y
        y = np.zeros((w.shape[0], x.shape[1]), dtype=x.dtype)
        sw, sx, sy = _el(w), _el(x), _el(y)
        dims = [w.shape[0], w.shape[1], x.shape[1]]
        mdarray.md_fmac2(dims, _md(y), [sy[0], 0, sy[1]], _md(w), [sw[0], sw[1], 0], _md(x), [0, sx[0], sx[1]])
        return y

    @staticmethod
    def _outer(g, x):
        # dW[o, i] += g[o, b] conj(x[i, b])
        g = np.ascontiguousarray(g)
        x = np.ascontiguousarray(x, dtype=np.result_type(g.dtype, x.dtype))
        g = g.astype(x.dtype, copy=False)
        dw = np.zeros((g.shape[0], x.shape[0]), dtype=x.dtype)
        sg, sx, sw = _el(g), _el(x), _el(dw)
        dims = [g.shape[0], x.shape[0], g.shape[1]]
        mdarray.md_zfmacc2(dims, _md(dw), [sw[0], sw[1], 0], _md(g), [sg[0], 0, sg[1]], _md(x), [0, sx[0], sx[1]])
        return dw

    def _forward(self, st, x, w, b):
        st.x, st.w = x, w
        return self._matvec(w, x) + b

    def _deriv(self, st, o, i, dx):
        if i == 0:
            return self._matvec(st.w, dx)
        if i == 1:
            return self._matvec(dx, st.x)
        return np.broadcast_to(dx, self.out_shapes[0]).copy()

    def _adjoint(self, st, o, i, dy):
        if i == 0:
            return self._matvec(st.w, dy, conj_w=True)
        if i == 1:
            return self._outer(dy, st.x)
        return dy.sum(axis=1, keepdims=True)


# -- activations --------------------------------------------------------------


class CReLU(AtomicNlop):
    """``relu(Re z) + i relu(Im z)``."""

    def __init__(self, shape):
        super().__init__([shape], [shape], name="crelu")

    def _forward(self, st, z):
        st.mr = z.real > 0
        st.mi = z.imag > 0
        return np.where(st.mr, z.real, 0) + 1j * np.where(st.mi, z.imag, 0)

    def _mask(self, st, d):
        return (np.where(st.mr, d.real, 0) + 1j * np.where(st.mi, d.imag, 0)).astype(d.dtype)

    def _deriv(self, st, o, i, dx):
        return self._mask(st, dx)

    def _adjoint(self, st, o, i, dy):
        return self._mask(st, dy)


class Cardioid(AtomicNlop):
    """``(1 + cos(arg z)) z / 2``; maps 0 to 0."""

    def __init__(self, shape):
        super().__init__([shape], [shape], name="cardioid")

    def _forward(self, st, z):
        r = np.abs(z)
        nz = r > 0
        rs = np.where(nz, r, 1)
        st.z, st.r, st.nz = z, rs, nz
        c = np.where(nz, z.real / rs, 1.0)
        return (0.5 * (1 + c) * z).astype(z.dtype)

    def _deriv(self, st, o, i, dz):
        z, r, nz = st.z, st.r, st.nz
        a = z.real
        dr = (np.conj(z) * dz).real / r
        t = dz.real * z / r + a * dz / r - a * z * dr / r**2
        return (0.5 * dz + 0.5 * np.where(nz, t, dz)).astype(dz.dtype)

    def _adjoint(self, st, o, i, g):
        z, r, nz = st.z, st.r, st.nz
        a = z.real
        rg = (np.conj(g) * z).real
        t = rg / r + a * g / r - a * rg * z / r**3
        return (0.5 * g + 0.5 * np.where(nz, t, g)).astype(g.dtype)


class Sigmoid(AtomicNlop):
    """Logistic function of the real part; real output."""

    def __init__(self, shape):
        super().__init__([shape], [shape], name="sigmoid")

    def _forward(self, st, z):
        s = 1.0 / (1.0 + np.exp(-z.real))
        st.ds = s * (1 - s)
        return s.astype(z.dtype)

    def _deriv(self, st, o, i, dz):
        return (st.ds * dz.real).astype(dz.dtype)

    def _adjoint(self, st, o, i, g):
        return (st.ds * g.real).astype(g.dtype)


class Softmax(AtomicNlop):
    """Softmax of the real part along ``axis``; real output."""

    def __init__(self, shape, axis):
        super().__init__([shape], [shape], name="softmax")
        self.axis = int(axis)

    def _forward(self, st, z):
        x = z.real
        e = np.exp(x - x.max(axis=self.axis, keepdims=True))
        st.s = e / e.sum(axis=self.axis, keepdims=True)
        return st.s.astype(z.dtype)

    def _jvp(self, st, d):
        d = d.real
        return (st.s * (d - (st.s * d).sum(axis=self.axis, keepdims=True)))

    def _deriv(self, st, o, i, dz):
        return self._jvp(st, dz).astype(dz.dtype)

    def _adjoint(self, st, o, i, g):
        return self._jvp(st, g).astype(g.dtype)


# -- normalization ------------------------------------------------------------


def _stat_shape(shape, axis):
    s = [1] * len(shape)
    s[axis] = shape[axis]
    return tuple(s)


class BatchNorm(AtomicNlop):
    """Normalize per feature along ``axis`` over all other axes.

    Inputs ``(x, moving_mean, moving_var)``.  In train mode the batch
    statistics are used and the outputs are ``(y, new_mean, new_var)`` with
    ``new = momentum * moving + (1 - momentum) * batch``.  In infer mode the
    moving statistics are used and ``y`` is the only output.  The variance of
    complex data is the mean of ``|x - mean|^2``.
    """

    def __init__(self, shape, axis, mode=TRAIN, momentum=0.9, eps=1e-5):
        if mode not in (TRAIN, INFER):
            raise ValueError(f"mode must be {TRAIN!r} or {INFER!r}")
        ss = _stat_shape(shape, axis)
        outs = [shape, ss, ss] if mode == TRAIN else [shape]
        super().__init__([shape, ss, ss], outs, name=f"batchnorm[{mode}]")
        self.axis = int(axis)
        self.mode = mode
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.red = tuple(a for a in range(len(shape)) if a != self.axis)
        self.n = int(np.prod([shape[a] for a in self.red]))

    def depends(self, o, i):
        if self.mode == INFER:
            return True
        return {0: i == 0, 1: i in (0, 1), 2: i in (0, 2)}[o]

    def _mean(self, x):
        return x.mean(axis=self.red, keepdims=True)

    def _forward(self, st, x, mean, var):
        if self.mode == INFER:
            st.u = x - mean
            st.s = 1.0 / np.sqrt(var.real + self.eps)
            return (st.u * st.s).astype(x.dtype)
        mu = self._mean(x)
        u = x - mu
        v = self._mean((u * np.conj(u)).real)
        s = 1.0 / np.sqrt(v + self.eps)
        st.u, st.s = u, s
        m = self.momentum
        y = (u * s).astype(x.dtype)
        return y, (m * mean + (1 - m) * mu).astype(x.dtype), (m * var + (1 - m) * v).astype(x.dtype)

    def _dv(self, st, dx):
        du = dx - self._mean(dx)
        return du, self._mean(2 * (np.conj(st.u) * du).real)

    def _deriv(self, st, o, i, dx):
        m = self.momentum
        if self.mode == INFER:
            if i == 0:
                return dx * st.s
            if i == 1:
                return np.broadcast_to(-dx * st.s, self.out_shapes[0]).astype(dx.dtype)
            return (st.u * (-0.5 * st.s**3) * dx.real).astype(dx.dtype)
        if o == 0:
            du, dv = self._dv(st, dx)
            return (st.s * du + st.u * (-0.5 * st.s**3 * dv)).astype(dx.dtype)
        if i == 0:
            if o == 1:
                return (1 - m) * self._mean(dx)
            return ((1 - m) * self._dv(st, dx)[1]).astype(dx.dtype)
        return m * dx

    def _center(self, g):
        return g - self._mean(g)

    def _adjoint(self, st, o, i, g):
        m = self.momentum
        shape = self.in_shapes[i]
        if self.mode == INFER:
            if i == 0:
                return g * st.s
            if i == 1:
                return sum_to_shape(-g * st.s, shape)
            return sum_to_shape(-0.5 * st.s**3 * (np.conj(st.u) * g).real, shape).astype(g.dtype)
        if o == 0:
            gs = (np.conj(st.u) * g).real.sum(axis=self.red, keepdims=True)
            gv = -0.5 * st.s**3 * gs
            gu = st.s * g + (2.0 / self.n) * gv * st.u
            return self._center(gu).astype(g.dtype)
        if i == 0:
            if o == 1:
                return np.broadcast_to((1 - m) * g / self.n, shape).astype(g.dtype)
            gu = (1 - m) * (2.0 / self.n) * g.real * st.u
            return self._center(gu).astype(g.dtype)
        return m * g


class Affine(AtomicNlop):
    """``y = gamma * x + beta`` with per-feature ``gamma``, ``beta``."""

    holomorphic = True

    def __init__(self, shape, axis):
        ss = _stat_shape(shape, axis)
        super().__init__([shape, ss, ss], [shape], name="affine")

    def _forward(self, st, x, gamma, beta):
        st.x, st.gamma = x, gamma
        return gamma * x + beta

    def _deriv(self, st, o, i, dx):
        if i == 0:
            return st.gamma * dx
        if i == 1:
            return dx * st.x
        return np.broadcast_to(dx, self.out_shapes[0]).copy()

    def _adjoint(self, st, o, i, g):
        if i == 0:
            return np.conj(st.gamma) * g
        if i == 1:
            return sum_to_shape(np.conj(st.x) * g, self.in_shapes[1])
        return sum_to_shape(g, self.in_shapes[2])


# -- pooling and dropout ------------------------------------------------------


class MaxPool(AtomicNlop):
    """Keep the entry of largest magnitude in each window.

    Windows must tile the pooled axes exactly.  Ties go to the lowest index
    in row-major window order.
    """

    def __init__(self, shape, window, axes):
        shape = tuple(int(d) for d in shape)
        self.window = dict(zip((int(a) for a in axes), (int(w) for w in window)))
        for a, w in self.window.items():
            if w < 1 or shape[a] % w:
                raise ValueError(f"window {w} does not divide dimension {shape[a]} on axis {a}")
        out = tuple(d // self.window.get(a, 1) for a, d in enumerate(shape))
        super().__init__([shape], [out], name="maxpool")
        split = []
        for a, d in enumerate(shape):
            w = self.window.get(a, 1)
            split += [d // w, w]
        self._split = split
        n = len(shape)
        self._perm = [2 * a for a in range(n)] + [2 * a + 1 for a in range(n)]
        self._inv = list(np.argsort(self._perm))

    def _win(self, x):
        v = x.reshape(self._split).transpose(self._perm)
        return v.reshape(self.out_shapes[0] + (-1,))

    def _unwin(self, v):
        n = len(self.in_shapes[0])
        wins = [self._split[2 * a + 1] for a in range(n)]
        return v.reshape(self.out_shapes[0] + tuple(wins)).transpose(self._inv).reshape(self.in_shapes[0])

    def _forward(self, st, x):
        v = self._win(x)
        st.idx = np.argmax(np.abs(v), axis=-1)[..., None]
        return np.take_along_axis(v, st.idx, axis=-1)[..., 0]

    def _deriv(self, st, o, i, dx):
        return np.take_along_axis(self._win(dx), st.idx, axis=-1)[..., 0]

    def _adjoint(self, st, o, i, dy):
        v = np.zeros(self.out_shapes[0] + (int(np.prod(list(self.window.values()) or [1])),), dtype=dy.dtype)
        np.put_along_axis(v, st.idx, dy[..., None], axis=-1)
        return self._unwin(v)


class Dropout(AtomicNlop):
    """Zero entries with probability ``rate`` and rescale survivors.

    The mask comes from a generator keyed by ``(seed, layer_id, step)``; the
    training loop sets :attr:`step`.  Infer mode is the identity.
    """

    holomorphic = True

    def __init__(self, shape, rate, seed=0, layer_id=0, mode=TRAIN):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        super().__init__([shape], [shape], name="dropout")
        self.rate = float(rate)
        self.seed = int(seed)
        self.layer_id = int(layer_id)
        self.mode = mode
        self.step = 0

    def mask(self):
        if self.mode == INFER or self.rate == 0:
            return None
        rng = np.random.default_rng([self.seed, self.layer_id, self.step])
        return (rng.random(self.in_shapes[0]) >= self.rate) / (1 - self.rate)

    def _forward(self, st, x):
        st.mask = self.mask()
        return x.copy() if st.mask is None else (x * st.mask).astype(x.dtype)

    def _deriv(self, st, o, i, dx):
        return dx.copy() if st.mask is None else (dx * st.mask).astype(dx.dtype)

    _adjoint = _deriv
