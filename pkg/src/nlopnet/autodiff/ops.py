"""Atomic operators: linear wrappers, products, sums and pointwise maps."""

from __future__ import annotations

import numpy as np

from .linop import Linop, sum_to_shape
from .nlop import AtomicNlop


def _bshape(*shapes):
    return tuple(int(d) for d in np.broadcast_shapes(*shapes))


def _real(x):
    return x.real.astype(x.dtype)


class LinopNlop(AtomicNlop):
    """A linop viewed as a (single input, single output) operator."""

    def __init__(self, lop: Linop):
        super().__init__([lop.in_shape], [lop.out_shape], name=lop.name)
        self.lop = lop
        self.holomorphic = lop.complex_linear

    def _forward(self, st, x):
        return self.lop._forward(x)

    def _deriv(self, st, o, i, dx):
        return self.lop._forward(dx)

    def _adjoint(self, st, o, i, dy):
        return self.lop._adjoint(dy)


def from_linop(lop: Linop) -> LinopNlop:
    return LinopNlop(lop)


class Fmac(AtomicNlop):
    """``y = sum(a * b)`` over the axes where ``out_shape`` is 1.

    Shapes share one rank and broadcast.  With ``conj_b`` the second factor
    is conjugated, which makes the map conjugate-linear in ``b``.
    """

    def __init__(self, shape_a, shape_b, out_shape=None, conj_b: bool = False, name="fmac"):
        full = _bshape(shape_a, shape_b)
        out_shape = full if out_shape is None else tuple(int(d) for d in out_shape)
        if len(out_shape) != len(full) or any(o not in (1, f) for o, f in zip(out_shape, full)):
            raise ValueError(f"{name}: output shape {out_shape} is not a reduction of {full}")
        super().__init__([shape_a, shape_b], [out_shape], name=name)
        self.conj_b = conj_b
        self.holomorphic = not conj_b

    def _b(self, b):
        return np.conj(b) if self.conj_b else b

    def _forward(self, st, a, b):
        st.a, st.b = a, b
        return sum_to_shape(a * self._b(b), self.out_shapes[0])

    def _deriv(self, st, o, i, dx):
        if i == 0:
            return sum_to_shape(dx * self._b(st.b), self.out_shapes[0])
        return sum_to_shape(st.a * self._b(dx), self.out_shapes[0])

    def _adjoint(self, st, o, i, dy):
        if i == 0:
            return sum_to_shape(dy * np.conj(self._b(st.b)), self.in_shapes[0])
        g = np.conj(st.a) * dy
        return sum_to_shape(np.conj(g) if self.conj_b else g, self.in_shapes[1])


def mul(shape_a, shape_b):
    return Fmac(shape_a, shape_b, name="mul")


class LinComb(AtomicNlop):
    """``y = sum_k c_k x_k`` for inputs of one shape."""

    holomorphic = True

    def __init__(self, shape, coeffs, name="lincomb"):
        self.coeffs = [complex(c) for c in coeffs]
        super().__init__([shape] * len(self.coeffs), [shape], name=name)

    def _forward(self, st, *xs):
        acc = None
        for c, x in zip(self.coeffs, xs):
            t = x if c == 1 else x * x.dtype.type(c)
            acc = t.copy() if acc is None else acc + t
        return acc

    def _deriv(self, st, o, i, dx):
        c = self.coeffs[i]
        return dx.copy() if c == 1 else dx * dx.dtype.type(c)

    def _adjoint(self, st, o, i, dy):
        c = np.conj(self.coeffs[i])
        return dy.copy() if c == 1 else dy * dy.dtype.type(c)


def add(shape, n: int = 2):
    return LinComb(shape, [1.0] * n, name="add")


class Conj(AtomicNlop):
    def __init__(self, shape):
        super().__init__([shape], [shape], name="conj")

    def _forward(self, st, x):
        return np.conj(x)

    def _deriv(self, st, o, i, dx):
        return np.conj(dx)

    def _adjoint(self, st, o, i, dy):
        return np.conj(dy)


class RealPart(AtomicNlop):
    """``Re x`` as a complex array with zero imaginary part."""

    def __init__(self, shape):
        super().__init__([shape], [shape], name="real")

    def _forward(self, st, x):
        return _real(x)

    def _deriv(self, st, o, i, dx):
        return _real(dx)

    def _adjoint(self, st, o, i, dy):
        return _real(dy)


class Square(AtomicNlop):
    """``x**2``, holomorphic."""

    holomorphic = True

    def __init__(self, shape):
        super().__init__([shape], [shape], name="square")

    def _forward(self, st, x):
        st.x = x
        return x * x

    def _deriv(self, st, o, i, dx):
        return 2 * st.x * dx

    def _adjoint(self, st, o, i, dy):
        return 2 * np.conj(st.x) * dy


class Abs2(AtomicNlop):
    """``x * conj(x)``: real-valued, not holomorphic."""

    def __init__(self, shape):
        super().__init__([shape], [shape], name="abs2")

    def _forward(self, st, x):
        st.x = x
        return (x * np.conj(x)).real.astype(x.dtype)

    def _deriv(self, st, o, i, dx):
        return (2 * (np.conj(st.x) * dx).real).astype(dx.dtype)

    def _adjoint(self, st, o, i, dy):
        return 2 * st.x * dy.real


class SumAll(AtomicNlop):
    """Sum of all entries as a shape ``(1,)`` array."""

    holomorphic = True

    def __init__(self, shape):
        super().__init__([shape], [(1,)], name="sum")

    def _forward(self, st, x):
        return np.array([x.sum()], dtype=x.dtype)

    def _deriv(self, st, o, i, dx):
        return np.array([dx.sum()], dtype=dx.dtype)

    def _adjoint(self, st, o, i, dy):
        return np.full(self.in_shapes[0], dy[0], dtype=dy.dtype)


class ExpReal(AtomicNlop):
    """``exp(Re x)``: real output from the real part of the input."""

    def __init__(self, shape):
        super().__init__([shape], [shape], name="exp")

    def _forward(self, st, x):
        st.y = np.exp(x.real).astype(x.dtype)
        return st.y

    def _deriv(self, st, o, i, dx):
        return st.y * dx.real

    def _adjoint(self, st, o, i, dy):
        return st.y * dy.real


class RealScale(AtomicNlop):
    """``y = Re(s) * v`` for a scalar-like weight ``s`` broadcast over ``v``."""

    def __init__(self, shape, scalar_shape=(1,)):
        super().__init__([shape, scalar_shape], [shape], name="realscale")

    def _forward(self, st, v, s):
        st.v, st.s = v, s.real.astype(v.dtype)
        return v * st.s

    def _deriv(self, st, o, i, dx):
        if i == 0:
            return dx * st.s
        return st.v * dx.real

    def _adjoint(self, st, o, i, dy):
        if i == 0:
            return dy * st.s
        g = (np.conj(st.v) * dy).real
        return sum_to_shape(g, self.in_shapes[1]).astype(dy.dtype)


class Identity(AtomicNlop):
    holomorphic = True

    def __init__(self, shape):
        super().__init__([shape], [shape], name="id")

    def _forward(self, st, x):
        return x.copy()

    def _deriv(self, st, o, i, dx):
        return dx.copy()

    def _adjoint(self, st, o, i, dy):
        return dy.copy()
