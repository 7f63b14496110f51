"""Numerical checks for operators: dot tests, finite differences, Jacobians.

These are independent of the derivative code they check: finite differences
only call forward evaluations, and the Jacobian helpers compare two routes
(forward derivative columns vs adjoint derivative rows).
"""

from __future__ import annotations

import numpy as np

from .autodiff.linop import Linop
from .autodiff.nlop import Nlop


def crandn(rng: np.random.Generator, shape, dtype=np.complex128) -> np.ndarray:
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return x.astype(dtype)


def vdot(a, b) -> complex:
    return complex(np.vdot(np.asarray(a).ravel(), np.asarray(b).ravel()))


def dot_test(op: Linop, rng, probes: int = 100, dtype=np.complex64) -> float:
    """Largest ``|<Ax,y> - <x,A^H y>| / (|Ax| |y|)`` over random probes."""
    worst = 0.0
    for _ in range(probes):
        x = crandn(rng, op.in_shape, dtype)
        y = crandn(rng, op.out_shape, dtype)
        ax = op.forward(x)
        ahy = op.adjoint(y)
        lhs = vdot(ax, y) if op.complex_linear else vdot(ax, y).real
        rhs = vdot(x, ahy) if op.complex_linear else vdot(x, ahy).real
        scale = np.linalg.norm(ax) * np.linalg.norm(y)
        if scale == 0:
            scale = np.linalg.norm(x) * np.linalg.norm(ahy)
        err = abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs)
        worst = max(worst, float(err))
    return worst


def real_transpose_test(f: Nlop, o: int, i: int, rng, probes: int = 10, dtype=np.complex128) -> float:
    """``Re<DF dx, dy>`` vs ``Re<dx, DF^H dy>`` at the current linearization point."""
    worst = 0.0
    for _ in range(probes):
        dx = crandn(rng, f.in_shapes[i], dtype)
        dy = crandn(rng, f.out_shapes[o], dtype)
        a = vdot(f.deriv(o, i, dx), dy).real
        b = vdot(dx, f.adjoint(o, i, dy)).real
        s = max(abs(a), abs(b), 1e-300)
        worst = max(worst, abs(a - b) / s)
    return worst


def fd_directional(f: Nlop, xs, o: int, i: int, dx, h: float = 1e-6):
    """Central difference ``(F(x + h dx) - F(x - h dx)) / 2h`` of output ``o``."""
    xs = [np.asarray(x) for x in xs]
    xp = list(xs)
    xm = list(xs)
    xp[i] = xs[i] + h * dx
    xm[i] = xs[i] - h * dx
    return (f.eval(*xp)[o] - f.eval(*xm)[o]) / (2 * h)


def rel_err(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    s = max(np.linalg.norm(a), np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / s) if s > 0 else 0.0


def fd_check(f: Nlop, xs, o: int, i: int, rng, directions: int = 3, h: float = 1e-6) -> float:
    """Worst relative error between ``DF dx`` and central differences.

    Directions are random complex vectors, so real and imaginary
    perturbations are both exercised.  ``f`` is re-applied at ``xs`` first.
    """
    xs = [np.asarray(x, dtype=np.complex128) for x in xs]
    worst = 0.0
    for _ in range(directions):
        f.apply(*xs)
        dx = crandn(rng, f.in_shapes[i])
        an = f.deriv(o, i, dx)
        fd = fd_directional(f, xs, o, i, dx, h)
        worst = max(worst, rel_err(an, fd))
    return worst


def fd_gradient_check(f: Nlop, xs, i: int, rng, directions: int = 3, h: float = 1e-6, real: bool = False) -> float:
    """For a real scalar ``f``: ``Re<DF^H(1), dx>`` against central differences.

    ``real`` restricts the perturbation to real directions (real weights).
    """
    xs = [np.asarray(x, dtype=np.complex128) for x in xs]
    worst = 0.0
    for _ in range(directions):
        out = f.apply(*xs)[0]
        g = f.adjoint(0, i, np.ones_like(out))
        dx = crandn(rng, f.in_shapes[i])
        if real:
            dx = dx.real.astype(np.complex128)
        an = vdot(g, dx).real
        fd = float(np.real(fd_directional(f, xs, 0, i, dx, h)).sum())
        s = max(abs(an), abs(fd), 1e-300)
        worst = max(worst, abs(an - fd) / s)
    return worst


def _unit(shape, k):
    """k-th unit vector of the real identification C^N ~ R^2N."""
    n = int(np.prod(shape))
    e = np.zeros(n, dtype=np.complex128)
    e[k % n] = 1.0 if k < n else 1j
    return e.reshape(shape)


def _realify(z):
    z = np.asarray(z).ravel()
    return np.concatenate([z.real, z.imag])


def jacobian_columns(f: Nlop, o: int, i: int) -> np.ndarray:
    """Real ``2M x 2N`` Jacobian assembled from ``DF(e_k)`` columns."""
    n = int(np.prod(f.in_shapes[i]))
    return np.stack([_realify(f.deriv(o, i, _unit(f.in_shapes[i], k))) for k in range(2 * n)], axis=1)


def jacobian_rows(f: Nlop, o: int, i: int) -> np.ndarray:
    """Real ``2M x 2N`` Jacobian assembled from ``DF^H(e_k)`` rows."""
    m = int(np.prod(f.out_shapes[o]))
    return np.stack([_realify(f.adjoint(o, i, _unit(f.out_shapes[o], k))) for k in range(2 * m)], axis=0)


def jacobian_fd(f: Nlop, xs, o: int, i: int, h: float = 1e-6) -> np.ndarray:
    """Real Jacobian by central differences on real and imaginary parts."""
    n = int(np.prod(f.in_shapes[i]))
    cols = []
    for k in range(2 * n):
        cols.append(_realify(fd_directional(f, xs, o, i, _unit(f.in_shapes[i], k), h)))
    return np.stack(cols, axis=1)
