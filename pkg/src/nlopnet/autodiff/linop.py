"""Linear operators with adjoints."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .. import mdarray


def _shape(s):
    return tuple(int(d) for d in s)


class Linop:
    """A linear map ``x -> A x`` between array shapes, with its adjoint.

    ``complex_linear`` is False for maps that are only linear over the reals
    (derivatives of non-holomorphic operators).  For those the adjoint is the
    transpose of the real Jacobian: ``Re<A x, y> = Re<x, A^H y>``.
    """

    def __init__(self, in_shape, out_shape, forward: Callable, adjoint: Callable,
                 normal: Callable | None = None, complex_linear: bool = True, name: str = "linop"):
        self.in_shape = _shape(in_shape)
        self.out_shape = _shape(out_shape)
        self._forward = forward
        self._adjoint = adjoint
        self._normal = normal
        self.complex_linear = complex_linear
        self.name = name

    def _check(self, x, shape, what):
        x = np.asarray(x)
        if x.shape != shape:
            raise ValueError(f"{self.name}: {what} has shape {x.shape}, expected {shape}")
        return x

    def forward(self, x):
        return self._forward(self._check(x, self.in_shape, "input"))

    __call__ = forward

    def adjoint(self, y):
        return self._adjoint(self._check(y, self.out_shape, "adjoint input"))

    def normal(self, x):
        x = self._check(x, self.in_shape, "input")
        if self._normal is not None:
            return self._normal(x)
        return self._adjoint(self._forward(x))

    @property
    def H(self) -> "Linop":
        return Linop(self.out_shape, self.in_shape, self._adjoint, self._forward,
                     complex_linear=self.complex_linear, name=f"{self.name}^H")

    def __matmul__(self, other: "Linop") -> "Linop":
        # A @ B applies B first
        return linop_chain(other, self)

    def __repr__(self):
        return f"Linop({self.name}: {self.in_shape} -> {self.out_shape})"


def linop_chain(a: Linop, b: Linop) -> Linop:
    """``b o a``: apply ``a`` then ``b``.  The adjoint runs in reverse order."""
    if a.out_shape != b.in_shape:
        raise ValueError(f"cannot chain {a} into {b}")
    return Linop(a.in_shape, b.out_shape,
                 lambda x: b._forward(a._forward(x)),
                 lambda y: a._adjoint(b._adjoint(y)),
                 complex_linear=a.complex_linear and b.complex_linear,
                 name=f"{b.name}*{a.name}")


def linop_plus(a: Linop, b: Linop) -> Linop:
    if a.in_shape != b.in_shape or a.out_shape != b.out_shape:
        raise ValueError(f"cannot add {a} and {b}")
    return Linop(a.in_shape, a.out_shape,
                 lambda x: a._forward(x) + b._forward(x),
                 lambda y: a._adjoint(y) + b._adjoint(y),
                 complex_linear=a.complex_linear and b.complex_linear,
                 name=f"({a.name}+{b.name})")


def identity(shape) -> Linop:
    return Linop(shape, shape, lambda x: x.copy(), lambda y: y.copy(), lambda x: x.copy(), name="id")


def zero(in_shape, out_shape) -> Linop:
    def fwd(x):
        return np.zeros(_shape(out_shape), dtype=x.dtype)

    def adj(y):
        return np.zeros(_shape(in_shape), dtype=y.dtype)

    return Linop(in_shape, out_shape, fwd, adj, name="zero")


def scale(shape, s) -> Linop:
    s = complex(s)
    return Linop(shape, shape, lambda x: x * x.dtype.type(s), lambda y: y * y.dtype.type(np.conj(s)), name="scale")


def sum_to_shape(x, shape):
    """Sum the broadcast axes of ``x`` down to ``shape`` (numpy broadcasting rules)."""
    shape = _shape(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    if lead > 0:
        x = x.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, (n, m) in enumerate(zip(x.shape, shape)) if m == 1 and n != 1)
    return x.sum(axis=axes, keepdims=True)


def cdiag(shape, diag) -> Linop:
    """Pointwise multiplication by ``diag`` (broadcastable to ``shape``)."""
    d = np.asarray(diag)
    if np.broadcast_shapes(d.shape, _shape(shape)) != _shape(shape):
        raise ValueError(f"diag of shape {d.shape} does not broadcast to {shape}")
    dc = np.conj(d)
    return Linop(shape, shape,
                 lambda x: x * d.astype(x.dtype, copy=False),
                 lambda y: y * dc.astype(y.dtype, copy=False),
                 lambda x: x * (dc * d).astype(x.dtype, copy=False), name="cdiag")


def matrix(m) -> Linop:
    """Dense matrix acting on vectors of length ``m.shape[1]``."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError("matrix operator needs a 2-D array")
    mh = m.conj().T
    return Linop((m.shape[1],), (m.shape[0],),
                 lambda x: (m.astype(x.dtype, copy=False) @ x),
                 lambda y: (mh.astype(y.dtype, copy=False) @ y), name="matrix")


def fft(shape, axes=(0, 1), centered: bool = True, inverse: bool = False) -> Linop:
    """Unitary DFT along ``axes``.  Its adjoint is the inverse transform."""
    flags = 0
    for a in axes:
        flags |= 1 << int(a)
    fwd_dir, adj_dir = (mdarray.INVERSE, mdarray.FORWARD) if inverse else (mdarray.FORWARD, mdarray.INVERSE)
    return Linop(shape, shape,
                 lambda x: mdarray.dft(x, flags, fwd_dir, centered),
                 lambda y: mdarray.dft(y, flags, adj_dir, centered),
                 lambda x: x.copy(), name="ifft" if inverse else "fft")


def extract(shape, axis: int, start: int, length: int) -> Linop:
    """Slice ``[start, start + length)`` along ``axis``; the adjoint zero-fills."""
    shape = _shape(shape)
    out = list(shape)
    out[axis] = length
    sl = [slice(None)] * len(shape)
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def fwd(x):
        return x[sl].copy()

    def adj(y):
        z = np.zeros(shape, dtype=y.dtype)
        z[sl] = y
        return z

    return Linop(shape, out, fwd, adj, name="extract")


def reshape(in_shape, out_shape) -> Linop:
    if int(np.prod(in_shape)) != int(np.prod(out_shape)):
        raise ValueError("reshape changes the number of elements")
    return Linop(in_shape, out_shape, lambda x: x.reshape(_shape(out_shape)).copy(),
                 lambda y: y.reshape(_shape(in_shape)).copy(), name="reshape")
