"""SENSE forward model ``A = P F C`` with soft-SENSE map sets.

Array layout (axes): ``(X, Y, COIL, MAPS, BATCH)``.

    image    (X, Y, 1, M, B)
    coils    (X, Y, C, M, B)
    kspace   (X, Y, C, 1, B)
    pattern  (X, Y, 1, 1, B)   entries in {0, 1}

The Fourier transform is unitary and centered over axes 0 and 1.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import linop as lo
from ..autodiff.nlop import chain, duplicate, permute_inputs
from ..autodiff.ops import Fmac, from_linop, mul

X, Y, COIL, MAPS, BATCH = range(5)
RANK = 5


def image_shape(coil_shape):
    s = list(coil_shape)
    s[COIL] = 1
    return tuple(s)


def kspace_shape(coil_shape):
    s = list(coil_shape)
    s[MAPS] = 1
    return tuple(s)


def pattern_shape(coil_shape):
    s = list(coil_shape)
    s[COIL] = s[MAPS] = 1
    return tuple(s)


def check_binary(pattern):
    p = np.asarray(pattern)
    if not np.all((p == 0) | (p == 1)):
        raise ValueError("sampling pattern must be binary")


def estimate_pattern(kspace):
    """A location counts as sampled iff any coil holds a nonzero value there."""
    k = np.asarray(kspace)
    return np.any(k != 0, axis=COIL, keepdims=True).astype(k.dtype)


def build_sense(coils, pattern) -> lo.Linop:
    """``A = P F C`` for fixed coils and pattern."""
    coils = np.asarray(coils)
    pattern = np.asarray(pattern)
    check_binary(pattern)
    ishape, kshape = image_shape(coils.shape), kspace_shape(coils.shape)
    if np.broadcast_shapes(pattern.shape, kshape) != kshape:
        raise ValueError(f"pattern shape {pattern.shape} does not fit k-space shape {kshape}")
    cc = np.conj(coils)
    f = lo.fft(kshape)

    def fwd(x):
        k = (x * coils.astype(x.dtype, copy=False)).sum(axis=MAPS, keepdims=True)
        return f._forward(k) * pattern.astype(x.dtype, copy=False)

    def adj(y):
        z = f._adjoint(y * pattern.astype(y.dtype, copy=False))
        return (z * cc.astype(y.dtype, copy=False)).sum(axis=COIL, keepdims=True)

    return lo.Linop(ishape, kshape, fwd, adj, name="sense")


def adjoint_recon(A: lo.Linop, y):
    """``x0 = A^H y``."""
    return A.adjoint(y)


# -- operator versions with coils and pattern as inputs -------------------------


def sense_forward(coil_shape):
    """``(x, coils, pattern) -> P F C x``."""
    cs = tuple(coil_shape)
    ks, ps = kspace_shape(cs), pattern_shape(cs)
    coil_mul = Fmac(image_shape(cs), cs, out_shape=ks, name="coils")
    ft = chain(coil_mul, from_linop(lo.fft(ks)))
    return chain(ft, mul(ks, ps))


def sense_adjoint(coil_shape):
    """``(y, coils, pattern) -> C^H F^H P y``."""
    cs = tuple(coil_shape)
    ks, ps = kspace_shape(cs), pattern_shape(cs)
    masked = chain(mul(ks, ps), from_linop(lo.fft(ks).H))
    # inputs: y, pattern, coils
    g = chain(masked, Fmac(ks, cs, out_shape=image_shape(cs), conj_b=True, name="coils^H"))
    return permute_inputs(g, [0, 2, 1])


def sense_normal(coil_shape):
    """``(x, coils, pattern) -> A^H A x`` with coils and pattern shared."""
    fwd = sense_forward(coil_shape)
    adj = sense_adjoint(coil_shape)
    # inputs: x, coils, pattern, coils', pattern'
    g = chain(fwd, adj)
    g = duplicate(g, 1, 3)
    return duplicate(g, 2, 3)

