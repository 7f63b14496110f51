"""Layer fragments as named models with data input ``x`` and output ``y``.

Weight and statistics names are prefixed with the fragment name, e.g.
``"conv1.w"`` or ``"bn1.mean"``.
"""

from __future__ import annotations

import numpy as np

from ..autodiff.linop import sum_to_shape
from ..autodiff.nlop import AtomicNlop
from . import layers
from .conv import Conv, ConvGeometry, ConvTransposed
from .model import STAT, WEIGHT, Model, chain, constant, glorot


def dense(name, in_features, out_features, batch) -> Model:
    op = layers.Dense(in_features, out_features, batch)
    w, b = f"{name}.w", f"{name}.b"
    return Model(op, ["x", w, b], ["y"], kinds={w: WEIGHT, b: WEIGHT},
                 init={w: glorot(in_features, out_features), b: constant(0.0)})


def conv(name, in_shape, filters, kernel, axes=(0, 1), channel_axis=2, padding="same",
         variant="forward", bias=False) -> Model:
    """Convolution (``variant="forward"``) or its adjoint (``"transposed"``).

    For the transposed variant ``in_shape`` is the shape of the forward
    input, so both variants built from the same arguments share a weight
    shape and are adjoint to each other.
    """
    geom = ConvGeometry(in_shape, filters, kernel, axes, channel_axis, padding)
    if variant == "forward":
        op, out_shape = Conv(geom), geom.out_shape
    elif variant == "transposed":
        op, out_shape = ConvTransposed(geom), geom.in_shape
    else:
        raise ValueError("variant must be 'forward' or 'transposed'")
    w = f"{name}.w"
    k = int(np.prod(geom.kernel))
    m = Model(op, ["x", w], ["y"], kinds={w: WEIGHT}, init={w: glorot(geom.cin * k, geom.cout * k)})
    if bias:
        bshape = [1] * len(out_shape)
        bshape[channel_axis] = out_shape[channel_axis]
        m = chain(m, _bias(name, out_shape, tuple(bshape)), "y", "x")
    return m


def _bias(name, shape, bshape) -> Model:
    op = _BiasAdd(shape, bshape)
    b = f"{name}.b"
    return Model(op, ["x", b], ["y"], kinds={b: WEIGHT}, init={b: constant(0.0)})


class _BiasAdd(AtomicNlop):
    holomorphic = True

    def __init__(self, shape, bshape):
        super().__init__([shape, bshape], [shape], name="bias")

    def _forward(self, st, x, b):
        return x + b

    def _deriv(self, st, o, i, dx):
        return dx.copy() if i == 0 else np.broadcast_to(dx, self.out_shapes[0]).copy()

    def _adjoint(self, st, o, i, dy):
        return dy.copy() if i == 0 else sum_to_shape(dy, self.in_shapes[1])


def activation(kind, shape, axis=None) -> Model:
    if kind == "crelu":
        op = layers.CReLU(shape)
    elif kind == "cardioid":
        op = layers.Cardioid(shape)
    elif kind == "sigmoid":
        op = layers.Sigmoid(shape)
    elif kind == "softmax":
        if axis is None:
            raise ValueError("softmax needs a class axis")
        op = layers.Softmax(shape, axis)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return Model(op, ["x"], ["y"])


def batchnorm(name, shape, axis, mode=layers.TRAIN, momentum=0.9, eps=1e-5, affine=True) -> Model:
    """Batch normalization with moving statistics ``name.mean``/``name.var``.

    In train mode the updated statistics leave through outputs
    ``name.mean_out``/``name.var_out``, registered as statistics updates.
    """
    op = layers.BatchNorm(shape, axis, mode, momentum, eps)
    mean, var = f"{name}.mean", f"{name}.var"
    outs = ["y", f"{name}.mean_out", f"{name}.var_out"] if mode == layers.TRAIN else ["y"]
    upd = {f"{name}.mean_out": mean, f"{name}.var_out": var} if mode == layers.TRAIN else {}
    m = Model(op, ["x", mean, var], outs, kinds={mean: STAT, var: STAT},
              init={mean: constant(0.0), var: constant(1.0)}, stat_updates=upd)
    if affine:
        g, b = f"{name}.gamma", f"{name}.beta"
        aff = Model(layers.Affine(shape, axis), ["x", g, b], ["y"], kinds={g: WEIGHT, b: WEIGHT},
                    init={g: constant(1.0), b: constant(0.0)})
        m = chain(m, aff, "y", "x")
    return m


def maxpool(shape, window, axes) -> Model:
    return Model(layers.MaxPool(shape, window, axes), ["x"], ["y"])


def dropout(shape, rate, seed=0, layer_id=0, mode=layers.TRAIN) -> Model:
    return Model(layers.Dropout(shape, rate, seed, layer_id, mode), ["x"], ["y"])
