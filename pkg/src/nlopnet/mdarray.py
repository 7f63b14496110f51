"""Strided multidimensional arrays and the md-function kernel engine.

An :class:`MdArray` is a flat element buffer plus dimensions, strides and an
offset.  Strides are counted in elements.  The element at multi-index ``p``
lives at ``offset + p . strides``.

The md-functions (:func:`md_fmac2` and companions) loop over an iteration
domain and apply a scalar kernel to elements addressed by one stride vector
per operand.  Dimension 0 is the innermost loop; this fixes the accumulation
order of the generic path.  Stride patterns that provably encode a dot
product, a matrix product or a convolution are dispatched to a contraction
kernel instead.
"""

from __future__ import annotations

import contextlib
import enum
import itertools
import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

MAX_RANK = 16
BATCH_DIM = 15

_flags = {"deterministic": True, "debug": False, "specialize": True}


class InvalidShapeError(ValueError):
    pass


class BoundsError(IndexError):
    pass


class AliasingError(RuntimeError):
    pass


class InvalidFlagsError(ValueError):
    pass


def set_deterministic(flag: bool) -> None:
    _flags["deterministic"] = bool(flag)


def is_deterministic() -> bool:
    return _flags["deterministic"]


@contextlib.contextmanager
def options(**kw):
    """Temporarily override engine flags (``deterministic``, ``debug``, ``specialize``)."""
    old = dict(_flags)
    for k, v in kw.items():
        if k not in _flags:
            raise KeyError(k)
        _flags[k] = bool(v)
    try:
        yield
    finally:
        _flags.update(old)


def default_strides(dims: Sequence[int]) -> list[int]:
    """Column-major element strides: ``s_0 = 1``, ``s_i = prod(d_j, j < i)``."""
    dims = [int(d) for d in dims]
    if not dims:
        raise InvalidShapeError("empty dims vector")
    if any(d < 1 for d in dims):
        raise InvalidShapeError(f"dims must be positive: {dims}")
    strides = []
    acc = 1
    for d in dims:
        strides.append(acc)
        acc *= d
    return strides


def _offset_range(dims, strides, offset):
    lo = hi = offset
    for d, s in zip(dims, strides):
        span = (int(d) - 1) * int(s)
        if span >= 0:
            hi += span
        else:
            lo += span
    return lo, hi


class MdArray:
    """Complex md-array: flat buffer, dims, element strides and offset."""

    def __init__(self, buf: np.ndarray, dims, strides=None, offset: int = 0, owns_buffer: bool = True):
        if buf.ndim != 1:
            raise InvalidShapeError("buffer must be one-dimensional")
        dims = tuple(int(d) for d in dims)
        if not 1 <= len(dims) <= MAX_RANK:
            raise InvalidShapeError(f"rank must be in 1..{MAX_RANK}, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise InvalidShapeError(f"dims must be positive: {dims}")
        strides = tuple(default_strides(dims)) if strides is None else tuple(int(s) for s in strides)
        if len(strides) != len(dims):
            raise InvalidShapeError("dims and strides differ in length")
        lo, hi = _offset_range(dims, strides, offset)
        if lo < 0 or hi >= buf.size:
            raise BoundsError(f"reachable offsets [{lo}, {hi}] outside buffer of length {buf.size}")
        self.buf = buf
        self.dims = dims
        self.strides = strides
        self.offset = int(offset)
        self.owns_buffer = owns_buffer

    @classmethod
    def alloc(cls, dims, dtype=np.complex64) -> "MdArray":
        n = math.prod(int(d) for d in dims)
        return cls(np.zeros(n, dtype=dtype), dims)

    @classmethod
    def from_numpy(cls, arr: np.ndarray) -> "MdArray":
        """Wrap ``arr`` without copying when it is contiguous; copy otherwise."""
        arr = np.asarray(arr)
        if not np.iscomplexobj(arr):
            arr = arr.astype(np.complex64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        owns = False
        if arr.flags.c_contiguous:
            buf = arr.reshape(-1)
        elif arr.flags.f_contiguous:
            buf = arr.reshape(-1, order="F")
        else:
            arr = np.ascontiguousarray(arr)
            buf = arr.reshape(-1)
            owns = True
        isz = arr.itemsize
        return cls(buf, arr.shape, [s // isz for s in arr.strides], 0, owns_buffer=owns)

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def dtype(self):
        return self.buf.dtype

    def offset_of(self, p) -> int:
        return self.offset + sum(int(i) * s for i, s in zip(p, self.strides))

    def _check_index(self, p):
        if len(p) != self.rank or any(not 0 <= int(i) < d for i, d in zip(p, self.dims)):
            raise BoundsError(f"index {tuple(p)} outside dims {self.dims}")

    def __getitem__(self, p):
        p = (p,) if np.isscalar(p) else tuple(p)
        self._check_index(p)
        return self.buf[self.offset_of(p)]

    def __setitem__(self, p, value):
        p = (p,) if np.isscalar(p) else tuple(p)
        self._check_index(p)
        self.buf[self.offset_of(p)] = value

    def view(self, dims, strides, offset: int = 0) -> "MdArray":
        return make_view(self, dims, strides, offset)

    def to_numpy(self) -> np.ndarray:
        """A numpy view sharing this array's buffer."""
        isz = self.buf.itemsize
        # negative strides reach back from the offset; still inside buf
        return as_strided(self.buf[self.offset:], shape=self.dims, strides=[s * isz for s in self.strides])

    def copy(self) -> "MdArray":
        out = MdArray.alloc(self.dims, self.dtype)
        md_copy2(self.dims, out, out.strides, self, self.strides)
        return out

    def __repr__(self):
        return f"MdArray(dims={self.dims}, strides={self.strides}, offset={self.offset}, dtype={self.dtype})"


def make_view(a: MdArray, new_dims, new_strides, offset: int = 0) -> MdArray:
    """View ``a``'s buffer with other dims/strides; no elements are copied.

    ``offset`` is relative to ``a``'s own offset.
    """
    return MdArray(a.buf, new_dims, new_strides, a.offset + int(offset), owns_buffer=False)


def _offsets(dims, strides, offset) -> np.ndarray:
    """Offsets of the iteration domain, dimension 0 varying fastest."""
    off = np.full((1,) * len(dims), offset, dtype=np.int64)
    for i, (d, s) in enumerate(zip(dims, strides)):
        shape = [1] * len(dims)
        shape[i] = int(d)
        off = off + (np.arange(int(d), dtype=np.int64) * int(s)).reshape(shape)
    return np.broadcast_to(off, tuple(int(d) for d in dims)).ravel(order="F")


def _check_operand(name, dims, arr: MdArray, strides):
    if len(strides) != len(dims):
        raise InvalidShapeError(f"{name}: stride vector has length {len(strides)}, expected {len(dims)}")
    lo, hi = _offset_range(dims, strides, arr.offset)
    if lo < 0 or hi >= arr.buf.size:
        raise BoundsError(f"{name}: reachable offsets [{lo}, {hi}] outside buffer of length {arr.buf.size}")


def _check_alias(dims, a, sa, *reads):
    if not _flags["debug"]:
        return
    written = None
    for r, sr in reads:
        if r.buf is a.buf or np.shares_memory(r.buf, a.buf):
            if written is None:
                written = set(_offsets(dims, sa, a.offset).tolist())
            read = set(_offsets(dims, sr, r.offset).tolist())
            if not (written.isdisjoint(read) or list(sr) == list(sa) and r.offset == a.offset):
                raise AliasingError("written cells overlap input cells")


class KernelClass(enum.Enum):
    GENERIC = "generic"
    DOT = "dot"
    MATMUL = "matmul"
    CONVOLUTION = "convolution"


def _injective(dims, strides) -> bool:
    """Sufficient test that distinct indices map to distinct offsets."""
    pairs = sorted((abs(s), d) for d, s in zip(dims, strides) if d > 1)
    span = 0
    for s, d in pairs:
        if s == 0 or s <= span:
            return False
        span += (d - 1) * s
    return True


def detect_kernel_class(dims, sa, sb, sc) -> KernelClass:
    """Classify a ``a += b * c`` stride triple.

    A specialized class is returned only when the pattern provably is that
    operation and the written cells of ``a`` are distinct; anything else is
    :attr:`KernelClass.GENERIC`.
    """
    keep = [i for i, d in enumerate(dims) if int(d) > 1]
    dims = [int(dims[i]) for i in keep]
    sa = [int(sa[i]) for i in keep]
    sb = [int(sb[i]) for i in keep]
    sc = [int(sc[i]) for i in keep]
    if not dims or any(s < 0 for s in sa + sb + sc):
        return KernelClass.GENERIC

    a_dims = [i for i in range(len(dims)) if sa[i] != 0]
    if not _injective([dims[i] for i in a_dims], [sa[i] for i in a_dims]):
        return KernelClass.GENERIC

    def nz(st):
        idx = [i for i in range(len(dims)) if st[i] != 0]
        return [dims[i] for i in idx], [st[i] for i in idx]

    b_inj = _injective(*nz(sb))
    c_inj = _injective(*nz(sc))

    if not a_dims:
        if all(s != 0 for s in sb) and all(s != 0 for s in sc) and b_inj and c_inj:
            return KernelClass.DOT
        return KernelClass.GENERIC

    red = [i for i in range(len(dims)) if sa[i] == 0]
    for st in (sb, sc):
        for i in a_dims:
            for j in red:
                if st[i] != 0 and st[i] == st[j]:
                    other = sc if st is sb else sb
                    if other[j] != 0:
                        return KernelClass.CONVOLUTION

    if b_inj and c_inj:
        roles = set()
        for i in range(len(dims)):
            roles.add((sa[i] != 0, sb[i] != 0, sc[i] != 0))
        m, n, k, batch = (True, True, False), (True, False, True), (False, True, True), (True, True, True)
        if {m, n, k} <= roles and roles <= {m, n, k, batch}:
            return KernelClass.MATMUL
    return KernelClass.GENERIC


def _letters(n):
    return "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"[:n]


def _contract(dims, a, sa, b, sb, c, sc, conj_c):
    """Execute ``a += b * c`` (or ``b * conj(c)``) as one tensor contraction."""
    dims = [int(d) for d in dims]
    lt = _letters(len(dims))

    def operand(arr, st):
        idx = [i for i, d in enumerate(dims) if st[i] != 0 and d > 1]
        isz = arr.buf.itemsize
        v = as_strided(arr.buf[arr.offset:], shape=[dims[i] for i in idx],
                       strides=[st[i] * isz for i in idx], writeable=False)
        return v, idx

    bv, bi = operand(b, sb)
    cv, ci = operand(c, sc)
    if conj_c:
        cv = np.conj(cv)
    ai = [i for i, d in enumerate(dims) if sa[i] != 0 and d > 1]
    present = set(bi) | set(ci)
    oi = [i for i in ai if i in present]
    sub = "".join(lt[i] for i in bi) + "," + "".join(lt[i] for i in ci) + "->" + "".join(lt[i] for i in oi)
    res = np.einsum(sub, bv, cv, optimize=True)
    # reduction dims that neither input depends on repeat the same term
    rep = math.prod(dims[i] for i in range(len(dims)) if sa[i] == 0 and i not in present)
    if rep != 1:
        res = res * a.buf.dtype.type(rep)
    isz = a.buf.itemsize
    av = as_strided(a.buf[a.offset:], shape=[dims[i] for i in ai], strides=[sa[i] * isz for i in ai])
    res = np.reshape(res, [dims[i] if i in present else 1 for i in ai])
    av += res.astype(a.buf.dtype, copy=False)


class _Shifted:
    """Buffer plus offset: all :func:`_contract` reads from an operand."""

    __slots__ = ("buf", "offset")

    def __init__(self, buf, offset):
        self.buf = buf
        self.offset = offset


def _overlap_dims(dims, sa, sb, sc):
    """Dims to iterate over so that the remaining views do not overlap.

    For every pair of an output dim and a reduction dim sharing an input
    stride (a sliding window), the shorter of the two is chosen.
    """
    a_dims = [i for i, d in enumerate(dims) if d > 1 and sa[i] != 0]
    red = [i for i, d in enumerate(dims) if d > 1 and sa[i] == 0]
    loop = set()
    for st in (sb, sc):
        for i in a_dims:
            for j in red:
                if st[i] != 0 and st[i] == st[j]:
                    loop.add(i if dims[i] < dims[j] else j)
    return sorted(loop)


def _convolve(dims, a, sa, b, sb, c, sc, conj_c):
    """Sliding-window contraction: one contraction per window position."""
    loop = _overlap_dims(dims, sa, sb, sc)
    rest = [1 if i in loop else d for i, d in enumerate(dims)]
    for idx in itertools.product(*(range(dims[i]) for i in loop)):
        shift = dict(zip(loop, idx))
        av, bv, cv = (_Shifted(arr.buf, arr.offset + sum(k * st[i] for i, k in shift.items()))
                      for arr, st in ((a, sa), (b, sb), (c, sc)))
        _contract(rest, av, sa, bv, sb, cv, sc, conj_c)


def _generic(dims, a, sa, values):
    offa = _offsets(dims, sa, a.offset)
    np.add.at(a.buf, offa, values.astype(a.buf.dtype, copy=False))


def _gather(dims, arr, st):
    return arr.buf[_offsets(dims, st, arr.offset)]


def _fmac(dims, a, sa, b, sb, c, sc, conj_c, kernel):
    dims = [int(d) for d in dims]
    for nm, arr, st in (("a", a, sa), ("b", b, sb), ("c", c, sc)):
        _check_operand(nm, dims, arr, st)
    _check_alias(dims, a, sa, (b, sb), (c, sc))
    cls = detect_kernel_class(dims, sa, sb, sc) if kernel is None else kernel
    if cls is KernelClass.CONVOLUTION and _flags["specialize"]:
        _convolve(dims, a, sa, b, sb, c, sc, conj_c)
        return cls
    if cls is not KernelClass.GENERIC and _flags["specialize"]:
        _contract(dims, a, sa, b, sb, c, sc, conj_c)
        return cls
    cv = _gather(dims, c, sc)
    _generic(dims, a, sa, _gather(dims, b, sb) * (np.conj(cv) if conj_c else cv))
    return KernelClass.GENERIC


def md_fmac2(dims, a: MdArray, sa, b: MdArray, sb, c: MdArray, sc, kernel: KernelClass | None = None) -> KernelClass:
    """``a[p.sa] += b[p.sb] * c[p.sc]`` for every ``p`` in ``dims``.

    Returns the kernel class that executed.  Passing
    ``kernel=KernelClass.GENERIC`` forces the generic loop.
    """
    return _fmac(dims, a, sa, b, sb, c, sc, False, kernel)


def md_zfmacc2(dims, a: MdArray, sa, b: MdArray, sb, c: MdArray, sc, kernel: KernelClass | None = None) -> KernelClass:
    """``a[p.sa] += b[p.sb] * conj(c[p.sc])``."""
    return _fmac(dims, a, sa, b, sb, c, sc, True, kernel)


def _assign(dims, a, sa, values):
    a.buf[_offsets(dims, sa, a.offset)] = values.astype(a.buf.dtype, copy=False)


def md_add2(dims, a: MdArray, sa, b: MdArray, sb, c: MdArray, sc) -> None:
    """``a[p.sa] = b[p.sb] + c[p.sc]``."""
    for nm, arr, st in (("a", a, sa), ("b", b, sb), ("c", c, sc)):
        _check_operand(nm, dims, arr, st)
    _assign(dims, a, sa, _gather(dims, b, sb) + _gather(dims, c, sc))


def md_mul2(dims, a: MdArray, sa, b: MdArray, sb, c: MdArray, sc) -> None:
    """``a[p.sa] = b[p.sb] * c[p.sc]``."""
    for nm, arr, st in (("a", a, sa), ("b", b, sb), ("c", c, sc)):
        _check_operand(nm, dims, arr, st)
    _assign(dims, a, sa, _gather(dims, b, sb) * _gather(dims, c, sc))


def md_copy2(dims, a: MdArray, sa, b: MdArray, sb) -> None:
    """``a[p.sa] = b[p.sb]``."""
    _check_operand("a", dims, a, sa)
    _check_operand("b", dims, b, sb)
    _assign(dims, a, sa, _gather(dims, b, sb))


def md_smul2(dims, a: MdArray, sa, b: MdArray, sb, scalar) -> None:
    """``a[p.sa] = scalar * b[p.sb]``."""
    _check_operand("a", dims, a, sa)
    _check_operand("b", dims, b, sb)
    _assign(dims, a, sa, a.buf.dtype.type(scalar) * _gather(dims, b, sb))


def numpy_strides(arr: np.ndarray) -> list[int]:
    return [s // arr.itemsize for s in arr.strides]


# -- Fourier transform ------------------------------------------------------

FORWARD = "forward"
INVERSE = "inverse"


def _axes_from_flags(flags: int, ndim: int) -> tuple[int, ...]:
    if flags < 0 or flags >> ndim:
        raise InvalidFlagsError(f"flags {flags:#b} select dimensions beyond rank {ndim}")
    return tuple(i for i in range(ndim) if flags & (1 << i))


def dft(a, flags: int, direction: str = FORWARD, centered: bool = False):
    """Unitary DFT along the dimensions selected by the bitmask ``flags``.

    ``centered`` places the zero frequency (and the image origin) at index
    ``n // 2``.  Accepts an :class:`MdArray` or a numpy array and returns the
    same kind.
    """
    as_md = isinstance(a, MdArray)
    x = a.to_numpy() if as_md else np.asarray(a)
    axes = _axes_from_flags(int(flags), x.ndim)
    if direction not in (FORWARD, INVERSE):
        raise ValueError(f"direction must be {FORWARD!r} or {INVERSE!r}")
    if not axes:
        y = np.array(x, copy=True)
    else:
        fn = np.fft.fftn if direction == FORWARD else np.fft.ifftn
        if centered:
            y = np.fft.fftshift(fn(np.fft.ifftshift(x, axes=axes), axes=axes, norm="ortho"), axes=axes)
        else:
            y = fn(x, axes=axes, norm="ortho")
    y = y.astype(x.dtype if np.iscomplexobj(x) else np.complex64, copy=False)
    return MdArray.from_numpy(np.asfortranarray(y)) if as_md else y
