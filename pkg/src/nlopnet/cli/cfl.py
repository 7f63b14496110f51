"""Array files: a text header ``<name>.hdr`` plus a raw payload ``<name>.cfl``.

The header is ``# Dimensions`` followed by one line of 16 integers.  The
payload holds little-endian single-precision (real, imag) pairs in
column-major order.
"""

from __future__ import annotations

import os

import numpy as np

from ..mdarray import BATCH_DIM, MAX_RANK, MdArray

DTYPE = np.dtype("<c8")


class CorruptFileError(ValueError):
    """Header unparsable or payload size inconsistent with the header."""


class ShapeError(ValueError):
    """An array has dimensions the command cannot use."""


def _base(path) -> str:
    path = os.fspath(path)
    for ext in (".cfl", ".hdr"):
        if path.endswith(ext):
            return path[: -len(ext)]
    return path


def read_header(path) -> list[int]:
    hdr = _base(path) + ".hdr"
    with open(hdr) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    try:
        k = lines.index("# Dimensions")
        dims = [int(t) for t in lines[k + 1].split()]
    except (ValueError, IndexError):
        raise CorruptFileError(f"{hdr}: no parsable '# Dimensions' line") from None
    if not 1 <= len(dims) <= MAX_RANK or any(d < 1 for d in dims):
        raise CorruptFileError(f"{hdr}: invalid dimensions {dims}")
    return dims + [1] * (MAX_RANK - len(dims))


def read_array(path) -> np.ndarray:
    """Read as a 16-dimensional complex64 numpy array (Fortran order)."""
    dims = read_header(path)
    cfl = _base(path) + ".cfl"
    n = int(np.prod(dims))
    size = os.path.getsize(cfl)
    if size != n * DTYPE.itemsize:
        raise CorruptFileError(f"{cfl}: payload has {size} bytes, header implies {n * DTYPE.itemsize}")
    data = np.fromfile(cfl, dtype=DTYPE, count=n)
    return data.reshape(dims, order="F").astype(np.complex64, copy=False)


def write_array(path, a) -> None:
    """Write an array of rank at most 16; trailing dims are padded with 1."""
    a = np.asarray(a)
    if a.ndim > MAX_RANK:
        raise ShapeError(f"{path}: rank {a.ndim} exceeds {MAX_RANK}")
    dims = list(a.shape) + [1] * (MAX_RANK - a.ndim)
    base = _base(path)
    with open(base + ".hdr", "w") as f:
        f.write("# Dimensions\n" + " ".join(str(d) for d in dims) + "\n")
    np.asarray(a, dtype=DTYPE).ravel(order="F").tofile(base + ".cfl")


def cfl_read(path) -> MdArray:
    return MdArray.from_numpy(read_array(path))


def cfl_write(path, a: MdArray) -> None:
    write_array(path, a.to_numpy() if isinstance(a, MdArray) else a)


# -- mapping between the 16-dim file layout and the 5-dim reconstruction layout

FILE_DIMS = (0, 1, 3, 4, BATCH_DIM)  # X, Y, COIL, MAPS, BATCH


def to_internal(a16: np.ndarray, name: str) -> np.ndarray:
    """``(X, Y, COIL, MAPS, BATCH)`` view of a file array; other dims must be 1."""
    for d in range(MAX_RANK):
        if d not in FILE_DIMS and a16.shape[d] != 1:
            raise ShapeError(f"{name}: dimension {d} has size {a16.shape[d]}, expected 1")
    return np.ascontiguousarray(a16.reshape([a16.shape[d] for d in FILE_DIMS], order="F"))


def from_internal(a5: np.ndarray) -> np.ndarray:
    dims = [1] * MAX_RANK
    for k, d in enumerate(FILE_DIMS):
        dims[d] = a5.shape[k]
    return np.reshape(a5, dims, order="F")


def read_internal(path) -> np.ndarray:
    return to_internal(read_array(path), os.fspath(path))


def write_internal(path, a5) -> None:
    write_array(path, from_internal(np.asarray(a5)))
